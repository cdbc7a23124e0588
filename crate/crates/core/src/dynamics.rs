//! Time integration of `∂t h + G(h)h = 0`.

use serde::{Deserialize, Serialize};

use crate::dtn::{DtnConfig, DtnOperator};
use crate::error::{Error, Result};
use crate::grid::Field;

/// States with `max |h|` above this are treated as blown up.
pub const BLOW_UP_THRESHOLD: f64 = 50.0;
/// Smallest step the adaptive controller may take.
pub const MIN_ADAPTIVE_DT: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct SimState {
    pub t: f64,
    pub h: Field,
}

impl SimState {
    pub fn new(t: f64, h: Field) -> Result<Self> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "time must be finite and non-negative, got {t}"
            )));
        }
        h.check_finite("surface elevation")?;
        Ok(Self { t, h })
    }

    pub fn initial(h: Field) -> Result<Self> {
        Self::new(0.0, h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    SemiImplicit,
    Rk4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepperConfig {
    pub scheme: Scheme,
    pub dt: f64,
    pub t_end: f64,
    pub cfl_safety: f64,
    pub adaptive: bool,
    /// Local error target (L∞) for the adaptive controller.
    pub tolerance: f64,
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::SemiImplicit,
            dt: 1e-3,
            t_end: 1.0,
            cfl_safety: 0.5,
            adaptive: false,
            tolerance: 1e-8,
        }
    }
}

impl StepperConfig {
    pub fn new(scheme: Scheme, dt: f64, t_end: f64) -> Self {
        Self {
            scheme,
            dt,
            t_end,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            problems.push(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_end >= self.dt) || !self.t_end.is_finite() {
            problems.push(format!(
                "t_end must be finite and >= dt, got {}",
                self.t_end
            ));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            problems.push(format!(
                "cfl_safety must lie in (0, 1], got {}",
                self.cfl_safety
            ));
        }
        if !(self.tolerance > 0.0) {
            problems.push(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }
}

/// `-G(h)h`.
pub fn rhs(state: &SimState, cfg: &DtnConfig) -> Result<Field> {
    let op = DtnOperator::new(&state.h, cfg)?;
    Ok(-op.apply(&state.h)?)
}

fn check_blow_up(h: &Field, t: f64) -> Result<()> {
    if !h.is_finite() || h.norm_linf() > BLOW_UP_THRESHOLD {
        return Err(Error::BlowUp { t });
    }
    Ok(())
}

/// Largest stable explicit step, `cfl · Δx / max(1, max |V|)`.
fn cfl_limit(op: &DtnOperator, h: &Field, g_h: &Field, cfl: f64) -> f64 {
    let b = op.trace_b_from(h, g_h);
    let v = op.trace_v_from(h, &b);
    let speed = v.iter().fold(1.0_f64, |m, c| m.max(c.norm_linf()));
    cfl * h.grid().spacing() / speed
}

fn semi_implicit(h: &Field, g_h: &Field, dt: f64) -> Field {
    let explicit = h - &(g_h - &h.abs_d()).scale(dt);
    explicit.multiply(|k| 1.0 / (1.0 + dt * k.norm()))
}

fn rk4(h: &Field, k1: Field, dt: f64, cfg: &DtnConfig) -> Result<Field> {
    let f = |u: &Field| -> Result<Field> { Ok(-DtnOperator::new(u, cfg)?.apply(u)?) };
    let k2 = f(&(h + &k1.scale(dt / 2.0)))?;
    let k3 = f(&(h + &k2.scale(dt / 2.0)))?;
    let k4 = f(&(h + &k3.scale(dt)))?;
    let incr = &(&k1 + &k4) + &(&k2 + &k3).scale(2.0);
    Ok(h + &incr.scale(dt / 6.0))
}

/// Advances by exactly `dt`. The rk4 scheme splits the step into equal
/// substeps that respect the CFL bound.
fn advance(
    state: &SimState,
    scheme: Scheme,
    dt: f64,
    cfl: f64,
    cfg: &DtnConfig,
) -> Result<SimState> {
    let mut h = state.h.clone();
    match scheme {
        Scheme::SemiImplicit => {
            let g_h = DtnOperator::new(&h, cfg)?.apply(&h)?;
            h = semi_implicit(&h, &g_h, dt);
        }
        Scheme::Rk4 => {
            let op = DtnOperator::new(&h, cfg)?;
            let g_h = op.apply(&h)?;
            let limit = cfl_limit(&op, &h, &g_h, cfl);
            let substeps = (dt / limit).ceil().max(1.0) as usize;
            let sub = dt / substeps as f64;
            h = rk4(&h, -g_h, sub, cfg)?;
            for _ in 1..substeps {
                let g_h = DtnOperator::new(&h, cfg)?.apply(&h)?;
                h = rk4(&h, -g_h, sub, cfg)?;
            }
        }
    }
    let t = state.t + dt;
    check_blow_up(&h, t)?;
    Ok(SimState { t, h })
}

/// One step of size `sc.dt`.
pub fn step(state: &SimState, sc: &StepperConfig, cfg: &DtnConfig) -> Result<SimState> {
    sc.validate()?;
    state.h.check_finite("surface elevation")?;
    advance(state, sc.scheme, sc.dt, sc.cfl_safety, cfg)
}

/// `∂t h`, `∂t² h` and the intermediate traces, exact in space.
#[derive(Debug, Clone)]
pub struct TimeDerivatives {
    /// `G(h)h`.
    pub g_h: Field,
    /// `B(h)h`.
    pub b: Field,
    /// `V(h)h`.
    pub v: Vec<Field>,
    pub dt_h: Field,
    /// `dG(h)h·∂t h`.
    pub shape: Field,
    /// `G(h)∂t h`.
    pub g_dt_h: Field,
    pub dtt_h: Field,
}

impl TimeDerivatives {
    /// `∂t² h = -dG(h)h·∂t h - G(h)∂t h` with `∂t h = -G(h)h`.
    pub fn new(op: &DtnOperator) -> Result<Self> {
        let h = op.surface();
        let g_h = op.apply(h)?;
        let b = op.trace_b_from(h, &g_h);
        let v = op.trace_v_from(h, &b);
        let dt_h = -&g_h;
        let shape = op.shape_derivative_with(&b, &v, &dt_h)?;
        let g_dt_h = op.apply(&dt_h)?;
        let dtt_h = -(&shape + &g_dt_h);
        Ok(Self {
            g_h,
            b,
            v,
            dt_h,
            shape,
            g_dt_h,
            dtt_h,
        })
    }
}

pub fn second_time_derivative(state: &SimState, cfg: &DtnConfig) -> Result<Field> {
    let op = DtnOperator::new(&state.h, cfg)?;
    Ok(TimeDerivatives::new(&op)?.dtt_h)
}

/// Result of [`run`]: hook outputs in time order plus the last valid state.
#[derive(Debug, Clone)]
pub struct RunOutput<R> {
    pub records: Vec<R>,
    pub final_state: SimState,
    /// Set when the run stopped before `t_end`.
    pub truncated: bool,
    pub error: Option<Error>,
}

/// Advances `h0` to `sc.t_end`, calling `hook` at `t = 0`, after every
/// `stride` accepted steps and at the final time. `stride = 0` records only
/// the endpoints.
///
/// Failures in stepping or in the hook stop the run; the records gathered so
/// far are returned with `truncated` set.
pub fn run<R>(
    h0: &Field,
    sc: &StepperConfig,
    cfg: &DtnConfig,
    stride: usize,
    mut hook: impl FnMut(&SimState) -> Result<R>,
) -> Result<RunOutput<R>> {
    sc.validate()?;
    cfg.validate()?;
    let mut state = SimState::initial(h0.clone())?;
    let mut records = Vec::new();
    let stop = |state: SimState, records: Vec<R>, e: Error| RunOutput {
        records,
        final_state: state,
        truncated: true,
        error: Some(e),
    };
    match hook(&state) {
        Ok(r) => records.push(r),
        Err(e) => return Ok(stop(state, records, e)),
    }
    let mut dt = sc.dt;
    let mut steps = 0usize;
    // Steps land on multiples of dt; the last one is clipped to t_end.
    let finish = |t: f64| t >= sc.t_end - 1e-9 * sc.dt;
    while !finish(state.t) {
        let remaining = sc.t_end - state.t;
        let clipped = if remaining < dt * (1.0 + 1e-9) {
            remaining
        } else {
            dt
        };
        let next = if sc.adaptive {
            adaptive_step(&state, sc, cfg, clipped).map(|(s, suggested)| {
                dt = suggested;
                s
            })
        } else {
            advance(&state, sc.scheme, clipped, sc.cfl_safety, cfg)
        };
        match next {
            Ok(mut s) => {
                if finish(s.t) {
                    s.t = sc.t_end;
                }
                state = s;
            }
            Err(e) => return Ok(stop(state, records, e)),
        }
        steps += 1;
        let last = finish(state.t);
        if last || (stride > 0 && steps % stride == 0) {
            match hook(&state) {
                Ok(r) => records.push(r),
                Err(e) => return Ok(stop(state, records, e)),
            }
        }
    }
    Ok(RunOutput {
        records,
        final_state: state,
        truncated: false,
        error: None,
    })
}

/// One accepted step by step doubling, halving `dt` until the two estimates
/// agree to `sc.tolerance`. Returns the new state and the suggested next step.
fn adaptive_step(
    state: &SimState,
    sc: &StepperConfig,
    cfg: &DtnConfig,
    dt: f64,
) -> Result<(SimState, f64)> {
    let mut dt = dt;
    loop {
        if dt < MIN_ADAPTIVE_DT {
            return Err(Error::StepUnderflow { t: state.t, dt });
        }
        let full = advance(state, sc.scheme, dt, sc.cfl_safety, cfg);
        let half = advance(state, sc.scheme, dt / 2.0, sc.cfl_safety, cfg)
            .and_then(|s| advance(&s, sc.scheme, dt / 2.0, sc.cfl_safety, cfg));
        match (full, half) {
            (Ok(full), Ok(half)) => {
                let err = (&full.h - &half.h).norm_linf();
                if err <= sc.tolerance {
                    let next = if err < sc.tolerance / 4.0 {
                        2.0 * dt
                    } else {
                        dt
                    };
                    return Ok((half, next));
                }
            }
            (Err(Error::BlowUp { .. }), _) | (_, Err(Error::BlowUp { .. })) => {}
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
        dt /= 2.0;
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::grid::TorusGrid;

    fn grid(n: usize) -> Arc<TorusGrid> {
        TorusGrid::new(1, n).unwrap()
    }

    fn cosine(g: &Arc<TorusGrid>, k: f64, eps: f64) -> Field {
        Field::from_fn(g, |x| eps * (k * x[0]).cos())
    }

    #[test]
    fn rhs_examples() {
        let g = grid(64);
        let cfg = DtnConfig::taylor(6);
        let zero = SimState::initial(Field::zeros(&g)).unwrap();
        assert_eq!(rhs(&zero, &cfg).unwrap().norm_linf(), 0.0);
        let c = SimState::initial(Field::constant(&g, 0.4)).unwrap();
        assert!(rhs(&c, &cfg).unwrap().norm_linf() < 1e-14);
        let eps = 0.01;
        let s = SimState::initial(cosine(&g, 1.0, eps)).unwrap();
        let lin = cosine(&g, 1.0, -eps);
        assert!((&rhs(&s, &cfg).unwrap() - &lin).norm_linf() <= 10.0 * eps * eps);
    }

    #[test]
    fn config_validation() {
        assert!(StepperConfig::default().validate().is_ok());
        let bad = StepperConfig {
            dt: 2.0,
            t_end: 1.0,
            ..StepperConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = StepperConfig {
            cfl_safety: 1.5,
            ..StepperConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = StepperConfig {
            dt: -1e-3,
            ..StepperConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn flat_state_is_an_equilibrium() {
        let g = grid(32);
        let cfg = DtnConfig::taylor(6);
        for scheme in [Scheme::SemiImplicit, Scheme::Rk4] {
            let sc = StepperConfig::new(scheme, 1e-2, 0.1);
            let out = run(&Field::zeros(&g), &sc, &cfg, 1, |s| Ok(s.h.norm_linf())).unwrap();
            assert!(!out.truncated);
            assert_eq!(out.records.len(), 11);
            assert!(out.records.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn linear_modes_decay_exponentially() {
        let g = grid(64);
        let cfg = DtnConfig::taylor(6);
        let eps = 1e-3;
        for (scheme, ks, tol) in [
            (Scheme::SemiImplicit, 1..=4, 0.01),
            (Scheme::Rk4, 1..=8, 1e-4),
        ] {
            for k in ks {
                let k = k as f64;
                let sc = StepperConfig::new(scheme, 1e-3, 0.5);
                let out = run(&cosine(&g, k, eps), &sc, &cfg, 0, |_| Ok(())).unwrap();
                let amp = out.final_state.h.inner(&cosine(&g, k, 1.0)) / std::f64::consts::PI;
                let exact = eps * (-k * 0.5).exp();
                assert!(
                    (amp / exact - 1.0).abs() < tol,
                    "{scheme:?} k={k}: {amp} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn schemes_agree_on_nonlinear_data() {
        let g = grid(64);
        let cfg = DtnConfig::taylor(6);
        let h0 = cosine(&g, 1.0, 0.1);
        let reference = run(
            &h0,
            &StepperConfig::new(Scheme::Rk4, 1e-3, 0.5),
            &cfg,
            0,
            |_| Ok(()),
        )
        .unwrap();
        // Semi-implicit is first order: the error halves with dt.
        let errs: Vec<f64> = [2e-3, 1e-3, 5e-4]
            .iter()
            .map(|&dt| {
                let out = run(
                    &h0,
                    &StepperConfig::new(Scheme::SemiImplicit, dt, 0.5),
                    &cfg,
                    0,
                    |_| Ok(()),
                )
                .unwrap();
                (&out.final_state.h - &reference.final_state.h).norm_l2()
            })
            .collect();
        assert!(errs[2] < 1e-4, "{errs:?}");
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.8..2.2).contains(&ratio), "{errs:?}");
        }
    }

    #[test]
    fn mean_is_conserved() {
        let g = grid(64);
        let cfg = DtnConfig::taylor(6);
        let h0 = Field::from_fn(&g, |x| {
            0.3 + 0.1 * x[0].cos() - 0.05 * (2.0 * x[0] + 0.3).sin()
        });
        for scheme in [Scheme::SemiImplicit, Scheme::Rk4] {
            let sc = StepperConfig::new(scheme, 1e-2, 0.2);
            let mut state = SimState::initial(h0.clone()).unwrap();
            for _ in 0..20 {
                let next = step(&state, &sc, &cfg).unwrap();
                assert!((next.h.mean() - state.h.mean()).abs() <= 1e-10);
                assert!(next.h.norm_l2() <= state.h.norm_l2() + 1e-8);
                state = next;
            }
        }
    }

    #[test]
    fn second_derivative_examples() {
        let g = grid(64);
        let cfg = DtnConfig::taylor(6);
        let zero = SimState::initial(Field::zeros(&g)).unwrap();
        assert_eq!(
            second_time_derivative(&zero, &cfg).unwrap().norm_linf(),
            0.0
        );
        let eps = 1e-3;
        for k in [1.0, 2.0, 3.0] {
            let s = SimState::initial(cosine(&g, k, eps)).unwrap();
            let lin = cosine(&g, k, k * k * eps);
            assert!(
                (&second_time_derivative(&s, &cfg).unwrap() - &lin).norm_linf() <= 10.0 * eps * eps
            );
        }
    }

    #[test]
    fn second_derivative_matches_time_differences() {
        let g = grid(64);
        let cfg = DtnConfig::taylor(8);
        let h0 = Field::from_fn(&g, |x| 0.1 * x[0].cos() + 0.03 * (2.0 * x[0]).sin());
        let mut errs = Vec::new();
        for dt in [2e-3, 1e-3] {
            let sc = StepperConfig::new(Scheme::Rk4, dt, 0.1 + dt);
            let out = run(&h0, &sc, &cfg, 1, |s| Ok(s.clone())).unwrap();
            let n = out.records.len();
            let (a, b, c) = (
                &out.records[n - 3],
                &out.records[n - 2],
                &out.records[n - 1],
            );
            let fd = (&(&a.h + &c.h) - &b.h.scale(2.0)).scale(1.0 / (dt * dt));
            let exact = second_time_derivative(b, &cfg).unwrap();
            errs.push((&fd - &exact).norm_linf() / exact.norm_linf());
        }
        assert!(errs[1] < 1e-5, "{errs:?}");
        assert!(errs[0] / errs[1] > 3.0, "{errs:?}");
    }

    #[test]
    fn run_records_endpoints_with_zero_stride() {
        let g = grid(32);
        let cfg = DtnConfig::taylor(4);
        let sc = StepperConfig::new(Scheme::SemiImplicit, 1e-2, 0.25);
        let out = run(&cosine(&g, 1.0, 0.1), &sc, &cfg, 0, |s| Ok(s.t)).unwrap();
        assert_eq!(out.records, vec![0.0, 0.25]);
        let out = run(&cosine(&g, 1.0, 0.1), &sc, &cfg, 10, |s| Ok(s.t)).unwrap();
        assert_eq!(out.records.len(), 4);
        assert!((out.records[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn l2_norm_decays_over_run() {
        let g = grid(64);
        let cfg = DtnConfig::taylor(6);
        let h0 = cosine(&g, 1.0, 0.1);
        let sc = StepperConfig::new(Scheme::SemiImplicit, 1e-3, 1.0);
        let out = run(&h0, &sc, &cfg, 0, |s| Ok(s.h.norm_l2())).unwrap();
        assert!(out.records[1] < out.records[0]);
    }

    #[test]
    fn blow_up_truncates_the_run() {
        let g = grid(32);
        let cfg = DtnConfig::taylor(4);
        let sc = StepperConfig::new(Scheme::SemiImplicit, 1e-2, 0.1);
        let mut calls = 0;
        let out = run(&cosine(&g, 1.0, 0.1), &sc, &cfg, 1, |s| {
            calls += 1;
            if calls == 4 {
                Err(Error::BlowUp { t: s.t })
            } else {
                Ok(s.t)
            }
        })
        .unwrap();
        assert!(out.truncated);
        assert_eq!(out.records.len(), 3);
        assert!(matches!(out.error, Some(Error::BlowUp { .. })));
        let big = Field::constant(&g, 60.0);
        let state = SimState::initial(big).unwrap();
        assert!(matches!(step(&state, &sc, &cfg), Err(Error::BlowUp { .. })));
    }

    #[test]
    fn adaptive_run_reaches_the_end() {
        let g = grid(64);
        let cfg = DtnConfig::taylor(6);
        let h0 = cosine(&g, 1.0, 0.1);
        let sc = StepperConfig {
            adaptive: true,
            tolerance: 1e-9,
            ..StepperConfig::new(Scheme::Rk4, 0.1, 0.5)
        };
        let out = run(&h0, &sc, &cfg, 0, |s| Ok(s.clone())).unwrap();
        assert!(!out.truncated);
        assert_eq!(out.final_state.t, 0.5);
        let fixed = run(
            &h0,
            &StepperConfig::new(Scheme::Rk4, 1e-3, 0.5),
            &cfg,
            0,
            |_| Ok(()),
        )
        .unwrap();
        assert!((&out.final_state.h - &fixed.final_state.h).norm_linf() < 1e-7);
        let state = SimState::initial(h0).unwrap();
        let err = adaptive_step(&state, &sc, &cfg, MIN_ADAPTIVE_DT / 2.0).unwrap_err();
        assert!(matches!(err, Error::StepUnderflow { .. }));
    }
}
