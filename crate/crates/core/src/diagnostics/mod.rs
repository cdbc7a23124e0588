//! Residuals and sign checks for the identities and inequalities satisfied
//! by solutions of `∂t h + G(h)h = 0`.
//!
//! Time derivatives are evaluated exactly in space from the equation and the
//! shape derivative; finite differences in time appear only in tests.
//! Products here are plain collocation products so that pointwise identities
//! such as `a = 1 - B` hold to rounding.

mod functional;
mod record;

pub use functional::{ConvexFunctional, MOLLIFICATION_WIDTH};
pub use record::{attach_differences, format_value, DiagnosticsRecord, FunctionalEntry, Selection};

use crate::dtn::{DtnConfig, DtnOperator};
use crate::dynamics::{SimState, TimeDerivatives};
use crate::error::{Error, Result};
use crate::grid::{div, dot, Field};

/// Largest admissible central first difference of `I_Φ`.
pub const FIRST_DIFFERENCE_TOL: f64 = 1e-8;
/// Most negative admissible central second difference of `I_Φ`.
pub const SECOND_DIFFERENCE_TOL: f64 = 1e-6;
/// Pointwise tolerance of the sign checks (`γ`, Córdoba gap, entropy).
pub const SIGN_TOL: f64 = 1e-5;
/// Allowed dip of `min a` below its initial value.
pub const MIN_A_TOL: f64 = 1e-6;
/// Relative tolerance of the `L²` convexity identity.
pub const L2_IDENTITY_TOL: f64 = 1e-4;

/// `B`, `V` and `a = 1 - B` for `ψ = h`.
#[derive(Debug, Clone)]
pub struct TaylorFields {
    pub b: Field,
    pub v: Vec<Field>,
    pub a: Field,
}

/// Everything the diagnostics need about one state, computed once.
pub struct Snapshot {
    pub state: SimState,
    op: DtnOperator,
    td: TimeDerivatives,
    fields: TaylorFields,
}

impl Snapshot {
    pub fn new(state: &SimState, cfg: &DtnConfig) -> Result<Self> {
        let op = DtnOperator::new(&state.h, cfg)?;
        let td = TimeDerivatives::new(&op)?;
        let grad_h = op.surface_gradient();
        // B = (G(h)h + |∇h|²) / (1 + |∇h|²), V = (1 - B)∇h.
        let b = (&td.g_h + &dot(grad_h, grad_h)).zip_map(op.metric(), |x, m| x / m);
        let a = b.map(|b| 1.0 - b);
        let v = grad_h.iter().map(|g| &a * g).collect();
        Ok(Self {
            state: state.clone(),
            op,
            td,
            fields: TaylorFields { b, v, a },
        })
    }

    pub fn operator(&self) -> &DtnOperator {
        &self.op
    }

    pub fn time_derivatives(&self) -> &TimeDerivatives {
        &self.td
    }

    pub fn fields(&self) -> &TaylorFields {
        &self.fields
    }

    fn h(&self) -> &Field {
        &self.state.h
    }

    /// `γ = (G(B² + |V|²) - 2B G B - 2V·G V) / (1 + |∇h|²)`.
    pub fn gamma(&self) -> Result<Field> {
        let TaylorFields { b, v, .. } = &self.fields;
        let energy = &(b * b) + &dot(v, v);
        let g_v = v
            .iter()
            .map(|c| self.op.apply(c))
            .collect::<Result<Vec<_>>>()?;
        let num =
            self.op.apply(&energy)? - (b * &self.op.apply(b)?).scale(2.0) - dot(v, &g_v).scale(2.0);
        Ok(num.zip_map(self.op.metric(), |x, m| x / m))
    }

    /// `(-d/dt ∫ h G(h)h, ∫ a ((G(h)h)² + |∇h|²))`.
    pub fn l2_identity(&self) -> (f64, f64) {
        let td = &self.td;
        let lhs =
            -(td.dt_h.inner(&td.g_h) + self.h().inner(&td.shape) + self.h().inner(&td.g_dt_h));
        let rhs = (&self.fields.a * &self.grad_tx_sq()).integrate();
        (lhs, rhs)
    }

    /// `|∇_{t,x} h|² = (G(h)h)² + |∇h|²`.
    pub fn grad_tx_sq(&self) -> Field {
        let g = self.op.surface_gradient();
        &(&self.td.g_h * &self.td.g_h) + &dot(g, g)
    }

    /// `∂t² h + Δh + B(h)*(|∇_{t,x} h|²)`.
    pub fn elliptic_residual(&self) -> Result<Field> {
        let forcing = self.op.adjoint_b(&self.grad_tx_sq())?;
        Ok(&(&self.td.dtt_h + &self.h().laplacian()) + &forcing)
    }

    /// The nonlinear forcing in its two forms: `B(h)*(|∇_{t,x} h|²)` and
    /// `G(h)(B² + |V|²) - ∇·((B² + |V|²)∇h)`.
    pub fn forcing_forms(&self) -> Result<(Field, Field)> {
        let adjoint = self.op.adjoint_b(&self.grad_tx_sq())?;
        let TaylorFields { b, v, .. } = &self.fields;
        let energy = &(b * b) + &dot(v, v);
        let flux: Vec<Field> = self
            .op
            .surface_gradient()
            .iter()
            .map(|g| &energy * g)
            .collect();
        let direct = self.op.apply(&energy)? - div(&flux);
        Ok((adjoint, direct))
    }

    fn check_taylor(&self) -> Result<()> {
        let min_a = self.fields.a.min();
        if !(min_a > 0.0) {
            return Err(Error::NonPositiveTaylor { min_a });
        }
        Ok(())
    }

    /// `L(h)f = -V·∇f - ½(∇·V)f + √a G(h)(√a f)`.
    pub fn operator_l(&self, f: &Field) -> Result<Field> {
        self.check_taylor()?;
        f.check_finite("operator input")?;
        let TaylorFields { v, a, .. } = &self.fields;
        let sqrt_a = a.map(f64::sqrt);
        let transport = dot(v, &f.grad());
        let stretch = &div(v) * f;
        let nonlocal = &sqrt_a * &self.op.apply(&(&sqrt_a * f))?;
        Ok(&(&nonlocal - &transport) - &stretch.scale(0.5))
    }

    /// `∂t a = V·∇a - a G(h)a - γ`.
    pub fn dt_a(&self, gamma: &Field) -> Result<Field> {
        let TaylorFields { v, a, .. } = &self.fields;
        Ok(&(dot(v, &a.grad()) - a * &self.op.apply(a)?) - gamma)
    }

    pub fn entropy(&self, m: f64, gamma: &Field) -> Result<EntropyResidual> {
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "entropy parameter m must be positive, got {m}"
            )));
        }
        self.check_taylor()?;
        let a = &self.fields.a;
        let min_arg = a.min() * m;
        if !(min_arg > 0.0) {
            return Err(Error::NonPositiveLog(min_arg));
        }
        let log_ma = a.map(|a| (m * a).ln());
        let sqrt_a = a.map(f64::sqrt);
        let u = log_ma.zip_map(&sqrt_a, |l, s| l / s);
        let dt_a = self.dt_a(gamma)?;
        // du/da = 1/(a√a) - log(ma)/(2a√a).
        let du_da = log_ma.zip_map(a, |l, a| (1.0 - 0.5 * l) / (a * a.sqrt()));
        let dt_u = &du_da * &dt_a;
        let damping = gamma.zip_map(a, |g, a| g / (2.0 * a));
        let residual = &(&dt_u + &self.operator_l(&u)?) - &(&damping * &u);
        let c = -&damping;
        let forcing = gamma.zip_map(a, |g, a| -g / (a * a.sqrt()));
        Ok(EntropyResidual {
            u,
            residual,
            c,
            forcing,
            dt_a,
        })
    }

    /// The entropy residual after the algebra that removes `m`:
    /// `(a G(h) log a - G(h)a)/√a - γ/(a√a)`.
    pub fn entropy_reduced(&self, gamma: &Field) -> Result<Field> {
        self.check_taylor()?;
        let a = &self.fields.a;
        let g_log = self.op.apply(&a.map(f64::ln))?;
        let g_a = self.op.apply(a)?;
        let core = (&(a * &g_log) - &g_a).zip_map(a, |x, a| x / a.sqrt());
        Ok(&core + &gamma.zip_map(a, |g, a| -g / (a * a.sqrt())))
    }

    /// `Φ'(f) G(h)f - G(h)Φ(f)`.
    pub fn cordoba_gap(&self, f: &Field, functional: &ConvexFunctional) -> Result<Field> {
        cordoba_with(&self.op, f, functional)
    }

    pub fn lyapunov_value(&self, functional: &ConvexFunctional) -> Result<f64> {
        lyapunov_value(&self.state, functional)
    }

    /// `∫ Φ'(h) G(h)h`.
    pub fn dissipation(&self, functional: &ConvexFunctional) -> f64 {
        (&self.h().map(|x| functional.dphi(x)) * &self.td.g_h).integrate()
    }
}

/// Output of [`entropy_residual`].
#[derive(Debug, Clone)]
pub struct EntropyResidual {
    /// `u = log(ma)/√a`.
    pub u: Field,
    /// `∂t u + L(h)u - (γ/2a)u`, expected non-negative.
    pub residual: Field,
    /// `c = -γ/(2a) ≥ 0`.
    pub c: Field,
    /// `-γ/(a√a) ≥ 0`, a lower bound for the residual.
    pub forcing: Field,
    pub dt_a: Field,
}

fn cordoba_with(op: &DtnOperator, f: &Field, functional: &ConvexFunctional) -> Result<Field> {
    let phi_f = f.map(|x| functional.phi(x));
    if !phi_f.is_finite() {
        return Err(Error::Overflow(functional.name.clone()));
    }
    let slope = f.map(|x| functional.dphi(x));
    Ok(&slope * &op.apply(f)? - op.apply(&phi_f)?)
}

pub fn taylor_fields(state: &SimState, cfg: &DtnConfig) -> Result<TaylorFields> {
    Ok(Snapshot::new(state, cfg)?.fields)
}

pub fn gamma(state: &SimState, cfg: &DtnConfig) -> Result<Field> {
    Snapshot::new(state, cfg)?.gamma()
}

/// `I_Φ = ∫ Φ(h)`.
pub fn lyapunov_value(state: &SimState, functional: &ConvexFunctional) -> Result<f64> {
    let value = state.h.map(|x| functional.phi(x)).integrate();
    if !value.is_finite() {
        return Err(Error::Overflow(functional.name.clone()));
    }
    Ok(value)
}

/// Central difference estimates of `d/dt I_Φ` and `d²/dt² I_Φ` at the
/// interior samples of a uniformly spaced series.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovDifferences {
    pub stride: f64,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    /// Indices into `first` above [`FIRST_DIFFERENCE_TOL`].
    pub first_violations: Vec<usize>,
    /// Indices into `second` below `-SECOND_DIFFERENCE_TOL`.
    pub second_violations: Vec<usize>,
}

pub fn lyapunov_differences(series: &[(f64, f64)]) -> Result<LyapunovDifferences> {
    if series.len() < 3 {
        return Err(Error::SeriesTooShort {
            needed: 3,
            got: series.len(),
        });
    }
    let stride = series[1].0 - series[0].0;
    if !(stride > 0.0)
        || series
            .windows(2)
            .any(|w| ((w[1].0 - w[0].0) - stride).abs() > 1e-9 * stride)
    {
        return Err(Error::NonUniformStride);
    }
    let mut first = Vec::with_capacity(series.len() - 2);
    let mut second = Vec::with_capacity(series.len() - 2);
    for w in series.windows(3) {
        let (a, b, c) = (w[0].1, w[1].1, w[2].1);
        first.push((c - a) / (2.0 * stride));
        second.push((c - 2.0 * b + a) / (stride * stride));
    }
    let first_violations = (0..first.len())
        .filter(|&i| first[i] > FIRST_DIFFERENCE_TOL)
        .collect();
    let second_violations = (0..second.len())
        .filter(|&i| second[i] < -SECOND_DIFFERENCE_TOL)
        .collect();
    Ok(LyapunovDifferences {
        stride,
        first,
        second,
        first_violations,
        second_violations,
    })
}

pub fn dissipation_value(
    state: &SimState,
    functional: &ConvexFunctional,
    cfg: &DtnConfig,
) -> Result<f64> {
    let op = DtnOperator::new(&state.h, cfg)?;
    let g_h = op.apply(&state.h)?;
    Ok((&state.h.map(|x| functional.dphi(x)) * &g_h).integrate())
}

pub fn l2_convexity_identity(state: &SimState, cfg: &DtnConfig) -> Result<(f64, f64)> {
    Ok(Snapshot::new(state, cfg)?.l2_identity())
}

pub fn elliptic_residual(state: &SimState, cfg: &DtnConfig) -> Result<Field> {
    Snapshot::new(state, cfg)?.elliptic_residual()
}

/// `‖R‖ / ‖Δh‖`, zero for a flat state with zero residual.
pub fn relative_residual(residual: &Field, h: &Field) -> f64 {
    let scale = h.laplacian().norm_l2();
    let r = residual.norm_l2();
    if scale == 0.0 {
        if r == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        r / scale
    }
}

pub fn cordoba_gap(
    h: &Field,
    f: &Field,
    functional: &ConvexFunctional,
    cfg: &DtnConfig,
) -> Result<Field> {
    let op = DtnOperator::new(h, cfg)?;
    cordoba_with(&op, f, functional)
}

pub fn operator_l(state: &SimState, f: &Field, cfg: &DtnConfig) -> Result<Field> {
    Snapshot::new(state, cfg)?.operator_l(f)
}

pub fn entropy_residual(state: &SimState, m: f64, cfg: &DtnConfig) -> Result<EntropyResidual> {
    let snap = Snapshot::new(state, cfg)?;
    let gamma = snap.gamma()?;
    snap.entropy(m, &gamma)
}

/// Indices of records whose `min a` falls more than [`MIN_A_TOL`] below
/// the initial value. Records without `min a` are skipped.
pub fn min_a_series(records: &[DiagnosticsRecord]) -> Vec<usize> {
    let Some(initial) = records.first().and_then(|r| r.min_a) else {
        return Vec::new();
    };
    records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.min_a.is_some_and(|m| m < initial - MIN_A_TOL))
        .map(|(i, _)| i)
        .collect()
}

/// Evaluates a selection of diagnostics on simulation states.
#[derive(Debug, Clone)]
pub struct Monitor {
    pub functionals: Vec<ConvexFunctional>,
    pub selection: Selection,
    /// Values of `m` for the entropy residual.
    pub entropy_m: Vec<f64>,
    pub dtn: DtnConfig,
}

impl Monitor {
    pub fn new(dtn: DtnConfig) -> Self {
        Self {
            functionals: ConvexFunctional::suite(),
            selection: Selection::all(),
            entropy_m: vec![1.0, 10.0],
            dtn,
        }
    }

    pub fn evaluate(&self, state: &SimState) -> Result<DiagnosticsRecord> {
        let sel = &self.selection;
        let snap = Snapshot::new(state, &self.dtn)?;
        let mut rec = DiagnosticsRecord::new(state);
        for f in &self.functionals {
            let value = if sel.lyapunov {
                Some(snap.lyapunov_value(f)?)
            } else {
                None
            };
            let dissipation = if sel.dissipation {
                Some(snap.dissipation(f))
            } else {
                None
            };
            rec.functionals
                .push(FunctionalEntry::new(&f.name, value, dissipation));
        }
        if sel.min_a || sel.entropy {
            rec.min_a = Some(snap.fields().a.min());
        }
        let gamma = if sel.gamma || sel.entropy {
            Some(snap.gamma()?)
        } else {
            None
        };
        if sel.gamma {
            rec.max_gamma = gamma.as_ref().map(Field::max);
        }
        if sel.elliptic {
            let r = snap.elliptic_residual()?;
            rec.elliptic_residual_l2 = Some(r.norm_l2());
            rec.elliptic_residual_rel = Some(relative_residual(&r, &state.h));
        }
        if sel.l2_identity {
            let (lhs, rhs) = snap.l2_identity();
            rec.l2_identity_lhs = Some(lhs);
            rec.l2_identity_rhs = Some(rhs);
        }
        if sel.cordoba {
            let mut gap = f64::INFINITY;
            for f in self.functionals.iter().filter(|f| f.phi_convex) {
                gap = gap.min(snap.cordoba_gap(&state.h, f)?.min());
            }
            rec.cordoba_min_gap = Some(gap);
        }
        if let (true, Some(gamma)) = (sel.entropy, &gamma) {
            let mut worst = f64::INFINITY;
            for &m in &self.entropy_m {
                worst = worst.min(snap.entropy(m, gamma)?.residual.min());
            }
            rec.entropy_min_residual = Some(worst);
        }
        Ok(rec)
    }
}

/// Counts of tolerance violations over a run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Violations {
    pub lyapunov_first: usize,
    pub lyapunov_second: usize,
    pub min_a_nonpositive: usize,
    pub min_a_dip: usize,
    pub gamma: usize,
    pub cordoba: usize,
    pub entropy: usize,
    pub l2_identity: usize,
}

impl Violations {
    pub fn total(&self) -> usize {
        self.lyapunov_first
            + self.lyapunov_second
            + self.min_a_nonpositive
            + self.min_a_dip
            + self.gamma
            + self.cordoba
            + self.entropy
            + self.l2_identity
    }

    /// Tallies every acceptance-level check over `records`. Second
    /// differences count only for functionals with convex `Φ'`; the
    /// remaining ones are exploratory.
    pub fn tally(records: &[DiagnosticsRecord], functionals: &[ConvexFunctional]) -> Self {
        let mut v = Violations::default();
        for r in records {
            for (entry, f) in r.functionals.iter().zip(functionals) {
                if f.phi_convex && entry.first_diff.is_some_and(|d| d > FIRST_DIFFERENCE_TOL) {
                    v.lyapunov_first += 1;
                }
                if f.phi_convex
                    && f.dphi_convex
                    && entry
                        .second_diff
                        .is_some_and(|d| d < -SECOND_DIFFERENCE_TOL)
                {
                    v.lyapunov_second += 1;
                }
            }
            if r.min_a.is_some_and(|a| !(a > 0.0)) {
                v.min_a_nonpositive += 1;
            }
            if r.max_gamma.is_some_and(|g| g > SIGN_TOL) {
                v.gamma += 1;
            }
            if r.cordoba_min_gap.is_some_and(|g| g < -SIGN_TOL) {
                v.cordoba += 1;
            }
            if r.entropy_min_residual.is_some_and(|e| e < -SIGN_TOL) {
                v.entropy += 1;
            }
            if let (Some(lhs), Some(rhs)) = (r.l2_identity_lhs, r.l2_identity_rhs) {
                if (lhs - rhs).abs() > L2_IDENTITY_TOL * rhs.abs().max(1.0) {
                    v.l2_identity += 1;
                }
            }
        }
        v.min_a_dip = min_a_series(records).len();
        v
    }
}
