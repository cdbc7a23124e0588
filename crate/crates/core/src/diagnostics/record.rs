use crate::dynamics::SimState;
use crate::error::{Error, Result};

use super::lyapunov_differences;

/// Which diagnostics [`super::Monitor`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub lyapunov: bool,
    pub dissipation: bool,
    pub min_a: bool,
    pub gamma: bool,
    pub elliptic: bool,
    pub l2_identity: bool,
    pub cordoba: bool,
    pub entropy: bool,
}

impl Selection {
    pub const NAMES: [&'static str; 8] = [
        "lyapunov",
        "dissipation",
        "min_a",
        "gamma",
        "elliptic",
        "l2_identity",
        "cordoba",
        "entropy",
    ];

    pub fn all() -> Self {
        Self {
            lyapunov: true,
            dissipation: true,
            min_a: true,
            gamma: true,
            elliptic: true,
            l2_identity: true,
            cordoba: true,
            entropy: true,
        }
    }

    pub fn none() -> Self {
        Self {
            lyapunov: false,
            dissipation: false,
            min_a: false,
            gamma: false,
            elliptic: false,
            l2_identity: false,
            cordoba: false,
            entropy: false,
        }
    }

    /// Parses a list of names; every unknown name is reported.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut sel = Self::none();
        let mut unknown = Vec::new();
        for name in names {
            match name.as_ref() {
                "lyapunov" => sel.lyapunov = true,
                "dissipation" => sel.dissipation = true,
                "min_a" => sel.min_a = true,
                "gamma" => sel.gamma = true,
                "elliptic" => sel.elliptic = true,
                "l2_identity" => sel.l2_identity = true,
                "cordoba" => sel.cordoba = true,
                "entropy" => sel.entropy = true,
                other => unknown.push(format!("unknown diagnostic \"{other}\"")),
            }
        }
        if unknown.is_empty() {
            Ok(sel)
        } else {
            Err(Error::InvalidConfig(unknown.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalEntry {
    pub name: String,
    /// `I_Φ`.
    pub value: Option<f64>,
    /// Central estimate of `d/dt I_Φ`.
    pub first_diff: Option<f64>,
    /// Central estimate of `d²/dt² I_Φ`.
    pub second_diff: Option<f64>,
    /// `∫ Φ'(h) G(h)h`.
    pub dissipation: Option<f64>,
}

impl FunctionalEntry {
    pub fn new(name: &str, value: Option<f64>, dissipation: Option<f64>) -> Self {
        Self {
            name: name.to_string(),
            value,
            first_diff: None,
            second_diff: None,
            dissipation,
        }
    }
}

/// Scalar diagnostics at one time. Absent values are `None` and print as
/// `NA`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub h_mean: f64,
    pub h_l2: f64,
    pub h_linf: f64,
    pub functionals: Vec<FunctionalEntry>,
    pub min_a: Option<f64>,
    pub max_gamma: Option<f64>,
    pub elliptic_residual_l2: Option<f64>,
    /// `‖R‖ / ‖Δh‖`.
    pub elliptic_residual_rel: Option<f64>,
    pub l2_identity_lhs: Option<f64>,
    pub l2_identity_rhs: Option<f64>,
    pub cordoba_min_gap: Option<f64>,
    pub entropy_min_residual: Option<f64>,
}

/// Fixed-width scientific notation; identical inputs give identical bytes.
pub fn format_value(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.17e}"),
        None => "NA".to_string(),
    }
}

impl DiagnosticsRecord {
    pub fn new(state: &SimState) -> Self {
        Self {
            t: state.t,
            h_mean: state.h.mean(),
            h_l2: state.h.norm_l2(),
            h_linf: state.h.norm_linf(),
            functionals: Vec::new(),
            min_a: None,
            max_gamma: None,
            elliptic_residual_l2: None,
            elliptic_residual_rel: None,
            l2_identity_lhs: None,
            l2_identity_rhs: None,
            cordoba_min_gap: None,
            entropy_min_residual: None,
        }
    }

    /// Named columns in CSV order.
    pub fn columns(&self) -> Vec<(String, Option<f64>)> {
        let mut cols: Vec<(String, Option<f64>)> = vec![
            ("t".into(), Some(self.t)),
            ("h_mean".into(), Some(self.h_mean)),
            ("h_l2".into(), Some(self.h_l2)),
            ("h_linf".into(), Some(self.h_linf)),
        ];
        for f in &self.functionals {
            cols.push((format!("I_{}", f.name), f.value));
            cols.push((format!("dI_{}", f.name), f.first_diff));
            cols.push((format!("d2I_{}", f.name), f.second_diff));
            cols.push((format!("D_{}", f.name), f.dissipation));
        }
        cols.extend([
            ("min_a".into(), self.min_a),
            ("max_gamma".into(), self.max_gamma),
            ("elliptic_residual_l2".into(), self.elliptic_residual_l2),
            ("elliptic_residual_rel".into(), self.elliptic_residual_rel),
            ("l2_identity_lhs".into(), self.l2_identity_lhs),
            ("l2_identity_rhs".into(), self.l2_identity_rhs),
            ("cordoba_min_gap".into(), self.cordoba_min_gap),
            ("entropy_min_residual".into(), self.entropy_min_residual),
        ]);
        cols
    }

    pub fn csv_header(&self) -> String {
        self.columns()
            .into_iter()
            .map(|(name, _)| name)
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn csv_row(&self) -> String {
        self.columns()
            .into_iter()
            .map(|(_, v)| format_value(v))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Fills in `first_diff` and `second_diff` of every functional from the
/// series of `I_Φ` values. A shorter final interval (a clipped last step) is
/// left out; non-uniform series are left untouched.
pub fn attach_differences(records: &mut [DiagnosticsRecord]) {
    if records.len() < 3 {
        return;
    }
    let mut end = records.len();
    let stride = records[1].t - records[0].t;
    if ((records[end - 1].t - records[end - 2].t) - stride).abs() > 1e-9 * stride {
        end -= 1;
    }
    let count = records[0].functionals.len();
    for j in 0..count {
        let series: Option<Vec<(f64, f64)>> = records[..end]
            .iter()
            .map(|r| r.functionals.get(j).and_then(|f| f.value).map(|v| (r.t, v)))
            .collect();
        let Some(series) = series else { continue };
        let Ok(diffs) = lyapunov_differences(&series) else {
            continue;
        };
        for (i, (d1, d2)) in diffs.first.iter().zip(&diffs.second).enumerate() {
            let entry = &mut records[i + 1].functionals[j];
            entry.first_diff = Some(*d1);
            entry.second_diff = Some(*d2);
        }
    }
}
