//! Experiment configuration.
//!
//! Configs are TOML. Resolution order, later wins: built-in defaults, the
//! preset's defaults, the file, command-line flags. Every key the file may
//! set appears in [`ExperimentConfig::template`]; anything else is an error.

use std::f64::consts::PI;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{ConvexFunctional, Selection};
use crate::dtn::{DtnConfig, MAX_TAYLOR_ORDER};
use crate::dynamics::{Scheme, StepperConfig};
use crate::grid::{Field, TorusGrid};

use super::CliError;

/// Largest total initial amplitude accepted without `override_amplitude`.
pub const AMPLITUDE_LIMIT: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Lyapunov,
    Elliptic,
    Entropy,
    Convergence,
    Identities,
}

impl Preset {
    pub const NAMES: [&'static str; 5] = [
        "lyapunov",
        "elliptic",
        "entropy",
        "convergence",
        "identities",
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Lyapunov => "lyapunov",
            Preset::Elliptic => "elliptic",
            Preset::Entropy => "entropy",
            Preset::Convergence => "convergence",
            Preset::Identities => "identities",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lyapunov" => Ok(Preset::Lyapunov),
            "elliptic" => Ok(Preset::Elliptic),
            "entropy" => Ok(Preset::Entropy),
            "convergence" => Ok(Preset::Convergence),
            "identities" => Ok(Preset::Identities),
            other => Err(format!(
                "unknown preset \"{other}\" (expected one of {})",
                Self::NAMES.join(", ")
            )),
        }
    }
}

/// `amplitude cos(k·x + phase)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mode {
    pub k: Vec<i64>,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

/// Seeded random spectrum: weight `r_k |k|^-decay` with `r_k` uniform in
/// `[0, 1)` and a uniform phase on every mode with `1 <= max|k_i| <=
/// max_mode`, rescaled so the weights sum to `amplitude`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomSpectrum {
    pub amplitude: f64,
    pub decay: f64,
    pub max_mode: i64,
}

impl Default for RandomSpectrum {
    fn default() -> Self {
        Self {
            amplitude: 0.05,
            decay: 2.0,
            max_mode: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialSpec {
    pub modes: Vec<Mode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomSpectrum>,
}

impl Default for InitialSpec {
    fn default() -> Self {
        Self {
            modes: vec![Mode {
                k: vec![1],
                amplitude: 0.1,
                phase: 0.0,
            }],
            random: None,
        }
    }
}

impl InitialSpec {
    /// Bound on `max |h0|`.
    pub fn total_amplitude(&self) -> f64 {
        self.modes.iter().map(|m| m.amplitude.abs()).sum::<f64>()
            + self.random.as_ref().map_or(0.0, |r| r.amplitude.abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSpec {
    /// Steps between records; 0 records only the endpoints.
    pub stride: usize,
    pub select: Vec<String>,
    pub functionals: Vec<String>,
    pub entropy_m: Vec<f64>,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        Self {
            stride: 10,
            select: Selection::NAMES.iter().map(|s| s.to_string()).collect(),
            functionals: ConvexFunctional::suite()
                .into_iter()
                .map(|f| f.name)
                .collect(),
            entropy_m: vec![1.0, 10.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resolution {
    pub points: usize,
    pub taylor_order: usize,
}

/// Parameters of the refinement presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudySpec {
    /// Spatial resolutions of the `elliptic` preset, coarse to fine.
    pub resolutions: Vec<Resolution>,
    /// Number of step halvings of the `convergence` preset.
    pub refinements: usize,
}

impl Default for StudySpec {
    fn default() -> Self {
        Self {
            resolutions: vec![
                Resolution {
                    points: 128,
                    taylor_order: 4,
                },
                Resolution {
                    points: 256,
                    taylor_order: 6,
                },
                Resolution {
                    points: 512,
                    taylor_order: 8,
                },
            ],
            refinements: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    pub dimension: usize,
    pub points: usize,
    pub seed: u64,
    pub override_amplitude: bool,
    pub output_dir: PathBuf,
    pub initial: InitialSpec,
    pub dtn: DtnConfig,
    pub stepper: StepperConfig,
    pub diagnostics: DiagnosticsSpec,
    pub study: StudySpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: None,
            dimension: 1,
            points: 256,
            seed: 0,
            override_amplitude: false,
            output_dir: PathBuf::from("out"),
            initial: InitialSpec::default(),
            dtn: DtnConfig::default(),
            stepper: StepperConfig::default(),
            diagnostics: DiagnosticsSpec::default(),
            study: StudySpec::default(),
        }
    }
}

/// Command-line values that override the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub preset: Option<String>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub override_amplitude: bool,
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl ExperimentConfig {
    /// Defaults for `preset`, before the file is applied.
    pub fn preset_defaults(preset: Option<Preset>) -> Self {
        let mut cfg = Self {
            preset,
            ..Self::default()
        };
        let d = &mut cfg.diagnostics;
        match preset {
            None => {}
            Some(Preset::Lyapunov) => {
                d.select = names(&["lyapunov", "dissipation"]);
                d.functionals = names(&["x2", "exp"]);
            }
            Some(Preset::Elliptic) => {
                d.select = names(&["elliptic"]);
                d.stride = 100;
            }
            Some(Preset::Entropy) => {
                d.select = names(&["min_a", "gamma", "entropy"]);
            }
            Some(Preset::Convergence) => {
                d.select = names(&["lyapunov"]);
                d.functionals = names(&["x2"]);
                d.stride = 0;
                cfg.stepper.dt = 0.01;
                cfg.stepper.t_end = 0.5;
            }
            Some(Preset::Identities) => {
                d.select = names(&["l2_identity", "cordoba"]);
                d.stride = 50;
            }
        }
        cfg
    }

    /// A config with every optional table present; its keys are exactly
    /// the accepted keys.
    pub fn template() -> Self {
        let mut cfg = Self::preset_defaults(Some(Preset::Lyapunov));
        cfg.initial.random = Some(RandomSpectrum::default());
        cfg
    }

    /// Checks every constraint and reports all failures together.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut problems = Vec::new();
        if let Err(e) = TorusGrid::new(self.dimension, self.points) {
            problems.push(format!("dimension/points: {e}"));
        }
        if !(1..=2).contains(&self.dimension) {
            problems.push(format!("dimension must be 1 or 2, got {}", self.dimension));
        }
        if let Err(e) = self.dtn.validate() {
            problems.push(format!("dtn: {e}"));
        }
        if let Err(e) = self.stepper.validate() {
            problems.push(format!("stepper: {e}"));
        }
        let total = self.initial.total_amplitude();
        if !total.is_finite() {
            problems.push("initial amplitudes must be finite".to_string());
        } else if total > AMPLITUDE_LIMIT && !self.override_amplitude {
            problems.push(format!(
                "total initial amplitude {total} exceeds {AMPLITUDE_LIMIT}; set override_amplitude to allow it"
            ));
        }
        let nyquist = (self.points / 2) as i64;
        for (i, m) in self.initial.modes.iter().enumerate() {
            if m.k.len() != self.dimension {
                problems.push(format!(
                    "initial.modes[{i}]: mode vector has {} components, expected {}",
                    m.k.len(),
                    self.dimension
                ));
            }
            if m.k.iter().any(|k| k.abs() >= nyquist) {
                problems.push(format!(
                    "initial.modes[{i}]: wavenumber at or above Nyquist ({nyquist})"
                ));
            }
            if !m.phase.is_finite() {
                problems.push(format!("initial.modes[{i}]: phase must be finite"));
            }
        }
        if let Some(r) = &self.initial.random {
            if r.max_mode < 1 || r.max_mode >= nyquist {
                problems.push(format!(
                    "initial.random.max_mode must lie in [1, {nyquist}), got {}",
                    r.max_mode
                ));
            }
            if !r.decay.is_finite() || r.decay < 0.0 {
                problems.push(format!(
                    "initial.random.decay must be finite and non-negative, got {}",
                    r.decay
                ));
            }
            if r.amplitude < 0.0 {
                problems.push(format!(
                    "initial.random.amplitude must be non-negative, got {}",
                    r.amplitude
                ));
            }
        }
        if let Err(e) = Selection::from_names(&self.diagnostics.select) {
            problems.push(format!("diagnostics.select: {e}"));
        }
        for name in &self.diagnostics.functionals {
            if ConvexFunctional::by_name(name).is_none() {
                problems.push(format!(
                    "diagnostics.functionals: unknown functional \"{name}\""
                ));
            }
        }
        if self.diagnostics.entropy_m.is_empty()
            || self.diagnostics.entropy_m.iter().any(|m| !(*m > 0.0))
        {
            problems.push(
                "diagnostics.entropy_m must be a non-empty list of positive numbers".to_string(),
            );
        }
        if self.preset == Some(Preset::Elliptic) && self.study.resolutions.len() < 2 {
            problems.push("study.resolutions needs at least two entries".to_string());
        }
        for (i, r) in self.study.resolutions.iter().enumerate() {
            if let Err(e) = TorusGrid::new(self.dimension, r.points) {
                problems.push(format!("study.resolutions[{i}]: {e}"));
            }
            if r.taylor_order < 1 || r.taylor_order > MAX_TAYLOR_ORDER {
                problems.push(format!(
                    "study.resolutions[{i}]: taylor_order must lie in [1, {MAX_TAYLOR_ORDER}]"
                ));
            }
        }
        if !(2..=8).contains(&self.study.refinements) {
            problems.push(format!(
                "study.refinements must lie in [2, 8], got {}",
                self.study.refinements
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(problems))
        }
    }

    pub fn selection(&self) -> Selection {
        Selection::from_names(&self.diagnostics.select).unwrap_or_else(|_| Selection::none())
    }

    pub fn functionals(&self) -> Vec<ConvexFunctional> {
        self.diagnostics
            .functionals
            .iter()
            .filter_map(|n| ConvexFunctional::by_name(n))
            .collect()
    }

    /// SHA-256 of the canonical TOML form, excluding the output directory.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let text = toml::to_string(&canonical).unwrap_or_default();
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Order of accuracy of the configured scheme.
    pub fn scheme_order(&self) -> f64 {
        match self.stepper.scheme {
            Scheme::SemiImplicit => 1.0,
            Scheme::Rk4 => 4.0,
        }
    }

    /// The initial surface on `grid`.
    pub fn initial_field(&self, grid: &Arc<TorusGrid>) -> Field {
        let mut modes: Vec<([f64; 2], f64, f64)> = self
            .initial
            .modes
            .iter()
            .map(|m| {
                let mut k = [0.0; 2];
                for (slot, v) in k.iter_mut().zip(&m.k) {
                    *slot = *v as f64;
                }
                (k, m.amplitude, m.phase)
            })
            .collect();
        if let Some(r) = &self.initial.random {
            modes.extend(random_modes(r, self.dimension, self.seed));
        }
        Field::from_fn(grid, |x| {
            modes
                .iter()
                .map(|(k, a, p)| a * (k[0] * x[0] + k[1] * x[1] + p).cos())
                .sum()
        })
    }
}

/// Modes of a random spectrum, in a fixed order so the seed alone fixes
/// the result.
pub fn random_modes(
    spec: &RandomSpectrum,
    dimension: usize,
    seed: u64,
) -> Vec<([f64; 2], f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = spec.max_mode;
    let mut modes = Vec::new();
    let ky_range = if dimension == 2 { -m..=m } else { 0..=0 };
    for kx in 0..=m {
        for ky in ky_range.clone() {
            // Half plane: cos(k·x + p) already covers -k.
            if kx == 0 && ky <= 0 {
                continue;
            }
            let norm = ((kx * kx + ky * ky) as f64).sqrt();
            let weight = rng.gen::<f64>() * norm.powf(-spec.decay);
            let phase = rng.gen::<f64>() * 2.0 * PI;
            modes.push(([kx as f64, ky as f64], weight, phase));
        }
    }
    let total: f64 = modes.iter().map(|m| m.1).sum();
    if total > 0.0 {
        for mode in &mut modes {
            mode.1 *= spec.amplitude / total;
        }
    }
    modes
}

fn toml_table<T: Serialize>(value: &T) -> toml::Table {
    match toml::Value::try_from(value) {
        Ok(toml::Value::Table(t)) => t,
        _ => toml::Table::new(),
    }
}

/// Overlays `over` onto `base`, recursing into tables; arrays are replaced.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

/// Removes the keys of `given` that do not occur in `template`, reporting
/// each as a dotted path.
fn prune_unknown(
    given: &mut toml::Table,
    template: &toml::Table,
    prefix: &str,
    out: &mut Vec<String>,
) {
    let mut unknown = Vec::new();
    for (key, value) in given.iter_mut() {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match (template.get(key), value) {
            (None, _) => unknown.push((key.clone(), path)),
            (Some(toml::Value::Table(t)), toml::Value::Table(g)) => prune_unknown(g, t, &path, out),
            (Some(toml::Value::Array(t)), toml::Value::Array(g)) => {
                if let Some(toml::Value::Table(item_template)) = t.first() {
                    for (i, item) in g.iter_mut().enumerate() {
                        if let toml::Value::Table(item) = item {
                            prune_unknown(item, item_template, &format!("{path}[{i}]"), out);
                        }
                    }
                }
            }
            _ => {}
        }
    }
    for (key, path) in unknown {
        given.remove(&key);
        out.push(format!("unknown key \"{path}\""));
    }
}

/// Parses and validates a config without command-line overrides.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    parse_config_with(text, &Overrides::default())
}

/// Parses `text`, applies `overrides` and validates the result. All
/// detected problems are returned together.
pub fn parse_config_with(text: &str, overrides: &Overrides) -> Result<ExperimentConfig, CliError> {
    let mut file: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Config(vec![e.to_string()]))?;
    let mut problems = Vec::new();
    prune_unknown(
        &mut file,
        &toml_table(&ExperimentConfig::template()),
        "",
        &mut problems,
    );

    let preset_name = match (&overrides.preset, file.get("preset")) {
        (Some(name), _) => Some(name.clone()),
        (None, Some(toml::Value::String(name))) => Some(name.clone()),
        (None, Some(other)) => {
            problems.push(format!("preset must be a string, got {}", other.type_str()));
            None
        }
        (None, None) => None,
    };
    let preset = match preset_name.map(|n| n.parse::<Preset>()) {
        Some(Ok(p)) => Some(p),
        Some(Err(e)) => {
            problems.push(e);
            None
        }
        None => None,
    };
    file.remove("preset");

    let mut merged = toml_table(&ExperimentConfig::preset_defaults(preset));
    merge(&mut merged, file);
    let mut flags = toml::Table::new();
    if let Some(p) = preset {
        flags.insert("preset".into(), p.name().into());
    }
    if let Some(dir) = &overrides.output_dir {
        flags.insert(
            "output_dir".into(),
            dir.to_string_lossy().into_owned().into(),
        );
    }
    if let Some(seed) = overrides.seed {
        match i64::try_from(seed) {
            Ok(s) => {
                flags.insert("seed".into(), s.into());
            }
            Err(_) => problems.push(format!(
                "seed {seed} does not fit in a signed 64-bit integer"
            )),
        }
    }
    if overrides.override_amplitude {
        flags.insert("override_amplitude".into(), true.into());
    }
    merge(&mut merged, flags);

    let cfg: ExperimentConfig = match toml::Value::Table(merged).try_into() {
        Ok(cfg) => cfg,
        Err(e) => {
            let e: toml::de::Error = e;
            problems.push(e.message().trim().to_string());
            return Err(CliError::Config(problems));
        }
    };
    if let Err(CliError::Config(more)) = cfg.validate() {
        problems.extend(more);
    }
    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(CliError::Config(problems))
    }
}
