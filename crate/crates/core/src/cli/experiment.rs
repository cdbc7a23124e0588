//! Experiment orchestration for the presets.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use crate::diagnostics::{
    attach_differences, format_value, DiagnosticsRecord, Monitor, Violations,
};
use crate::dtn::{DtnConfig, DtnOperator};
use crate::dynamics::{run, SimState};
use crate::error::Result;
use crate::grid::{divergence, Field, TorusGrid};

use super::config::{random_modes, ExperimentConfig, Preset, RandomSpectrum};
use super::output::{emit_outputs, write_file, OutputPaths, SnapshotMeta};
use super::CliError;

/// Tolerances of the operator identity checks.
pub const CONSTANT_KERNEL_TOL: f64 = 1e-8;
/// Relative to `‖ψ‖`.
pub const MEAN_TOL: f64 = 1e-8;
pub const POSITIVITY_TOL: f64 = 1e-8;
pub const ADJOINT_TOL: f64 = 1e-8;
pub const DIVERGENCE_TOL: f64 = 1e-4;
/// Differences between successive refinements below this are rounding.
pub const CONVERGENCE_FLOOR: f64 = 1e-11;
/// Slack allowed on the observed order of the time scheme.
pub const ORDER_SLACK: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Ok = 0,
    Violations = 1,
    SolverFailure = 2,
    ConfigError = 3,
}

impl ExitStatus {
    pub fn code(self) -> u8 {
        self as u8
    }

    fn label(self) -> &'static str {
        match self {
            ExitStatus::Ok => "ok",
            ExitStatus::Violations => "violations",
            ExitStatus::SolverFailure => "solver failure",
            ExitStatus::ConfigError => "config error",
        }
    }
}

/// Operator identities at one state, for fixed test data `ψ`, `χ`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityRow {
    pub t: f64,
    /// `‖G(h)1‖_∞`.
    pub constant_kernel: f64,
    /// `|∫ G(h)ψ|`.
    pub mean: f64,
    /// `⟨ψ, G(h)ψ⟩`.
    pub positivity: f64,
    /// `|⟨Bψ, χ⟩ - ⟨ψ, B*χ⟩| / (‖ψ‖ ‖χ‖)`.
    pub adjoint: f64,
    /// `‖G(h)Bψ + div Vψ‖ / ‖div Vψ‖`.
    pub divergence: f64,
}

impl IdentityRow {
    pub const HEADER: &'static str = "t,constant_kernel,mean,positivity,adjoint,divergence";

    pub fn evaluate(state: &SimState, psi: &Field, chi: &Field, cfg: &DtnConfig) -> Result<Self> {
        let op = DtnOperator::new(&state.h, cfg)?;
        let one = Field::constant(state.h.grid(), 1.0);
        let g_psi = op.apply(psi)?;
        let b = op.trace_b_from(psi, &g_psi);
        let v = op.trace_v_from(psi, &b);
        let div_v = divergence(&v)?;
        let g_b = op.apply(&b)?;
        let adjoint =
            (b.inner(chi) - psi.inner(&op.adjoint_b(chi)?)).abs() / (psi.norm_l2() * chi.norm_l2());
        Ok(Self {
            t: state.t,
            constant_kernel: op.apply(&one)?.norm_linf(),
            mean: g_psi.integrate().abs() / psi.norm_l2(),
            positivity: psi.inner(&g_psi),
            adjoint,
            divergence: (&g_b + &div_v).norm_l2() / div_v.norm_l2(),
        })
    }

    pub fn violations(&self) -> usize {
        [
            self.constant_kernel > CONSTANT_KERNEL_TOL,
            self.mean > MEAN_TOL,
            self.positivity < -POSITIVITY_TOL,
            self.adjoint > ADJOINT_TOL,
            !(self.divergence <= DIVERGENCE_TOL),
        ]
        .iter()
        .filter(|v| **v)
        .count()
    }

    pub fn csv_row(&self) -> String {
        [
            self.t,
            self.constant_kernel,
            self.mean,
            self.positivity,
            self.adjoint,
            self.divergence,
        ]
        .map(|v| format_value(Some(v)))
        .join(",")
    }
}

/// Test data for the identity checks, drawn from the config seed.
pub fn identity_test_data(cfg: &ExperimentConfig, grid: &Arc<TorusGrid>) -> (Field, Field) {
    let spec = RandomSpectrum {
        amplitude: 1.0,
        decay: 1.0,
        max_mode: (grid.n() as i64 / 4).min(8),
    };
    let field = |seed: u64| {
        let modes = random_modes(&spec, cfg.dimension, seed);
        Field::from_fn(grid, |x| {
            modes
                .iter()
                .map(|(k, a, p)| a * (k[0] * x[0] + k[1] * x[1] + p).cos())
                .sum()
        })
    };
    (
        field(cfg.seed.wrapping_add(1)),
        field(cfg.seed.wrapping_add(2)),
    )
}

/// Records and end state of one simulation.
#[derive(Debug, Clone)]
pub struct RunSummary<E> {
    pub records: Vec<DiagnosticsRecord>,
    pub extra: Vec<E>,
    pub final_state: SimState,
    /// Solver failure that stopped the run early.
    pub failure: Option<String>,
}

/// Runs `h0` under `cfg` with the configured monitor, calling `extra` at
/// every recorded state as well.
pub fn simulate<E>(
    cfg: &ExperimentConfig,
    h0: &Field,
    dtn: &DtnConfig,
    dt: f64,
    stride: usize,
    mut extra: impl FnMut(&SimState) -> Result<E>,
) -> Result<RunSummary<E>> {
    let monitor = Monitor {
        functionals: cfg.functionals(),
        selection: cfg.selection(),
        entropy_m: cfg.diagnostics.entropy_m.clone(),
        dtn: dtn.clone(),
    };
    let stepper = crate::dynamics::StepperConfig {
        dt,
        ..cfg.stepper.clone()
    };
    let out = run(h0, &stepper, dtn, stride, |s| {
        Ok((monitor.evaluate(s)?, extra(s)?))
    })?;
    let (mut records, extra): (Vec<_>, Vec<_>) = out.records.into_iter().unzip();
    attach_differences(&mut records);
    Ok(RunSummary {
        records,
        extra,
        final_state: out.final_state,
        failure: out.error.map(|e| e.to_string()),
    })
}

/// Everything [`run_experiment`] produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub status: ExitStatus,
    pub violations: Violations,
    /// Violations of preset-specific checks (refinement, identities).
    pub study_violations: usize,
    pub summary: String,
    pub files: Vec<PathBuf>,
}

struct Study {
    name: &'static str,
    csv: String,
    lines: Vec<String>,
    violations: usize,
}

/// Runs the experiment described by `cfg` and writes its files under
/// `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> std::result::Result<Outcome, CliError> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    let paths = OutputPaths::in_dir(&dir);
    let (main, study) = match cfg.preset {
        Some(Preset::Elliptic) => elliptic_study(cfg)?,
        Some(Preset::Convergence) => convergence_study(cfg)?,
        Some(Preset::Identities) => identities_run(cfg)?,
        _ => {
            let grid = TorusGrid::new(cfg.dimension, cfg.points)?;
            let h0 = cfg.initial_field(&grid);
            let run = simulate(
                cfg,
                &h0,
                &cfg.dtn,
                cfg.stepper.dt,
                cfg.diagnostics.stride,
                |_| Ok(()),
            )?;
            (strip(run), None)
        }
    };
    let meta = SnapshotMeta {
        config_hash: cfg.hash(),
        truncated: main.failure.is_some(),
    };
    emit_outputs(&main.records, &main.final_state, &meta, &paths)?;
    let mut files = vec![paths.timeseries.clone(), paths.snapshot.clone()];
    if let Some(study) = &study {
        let path = dir.join(format!("{}.csv", study.name));
        write_file(&path, &study.csv)?;
        files.push(path);
    }

    let violations = Violations::tally(&main.records, &cfg.functionals());
    let study_violations = study.as_ref().map_or(0, |s| s.violations);
    let status = if main.failure.is_some() {
        ExitStatus::SolverFailure
    } else if violations.total() + study_violations > 0 {
        ExitStatus::Violations
    } else {
        ExitStatus::Ok
    };
    let summary = summary_text(cfg, &main, &violations, study.as_ref(), status);
    write_file(&paths.summary, &summary)?;
    files.push(paths.summary.clone());
    Ok(Outcome {
        status,
        violations,
        study_violations,
        summary,
        files,
    })
}

fn strip<E>(run: RunSummary<E>) -> RunSummary<()> {
    RunSummary {
        extra: vec![(); run.extra.len()],
        records: run.records,
        final_state: run.final_state,
        failure: run.failure,
    }
}

fn identities_run(
    cfg: &ExperimentConfig,
) -> std::result::Result<(RunSummary<()>, Option<Study>), CliError> {
    let grid = TorusGrid::new(cfg.dimension, cfg.points)?;
    let h0 = cfg.initial_field(&grid);
    let (psi, chi) = identity_test_data(cfg, &grid);
    let run = simulate(
        cfg,
        &h0,
        &cfg.dtn,
        cfg.stepper.dt,
        cfg.diagnostics.stride,
        |s| IdentityRow::evaluate(s, &psi, &chi, &cfg.dtn),
    )?;
    let mut csv = format!("{}\n", IdentityRow::HEADER);
    let mut violations = 0;
    for row in &run.extra {
        csv.push_str(&row.csv_row());
        csv.push('\n');
        violations += row.violations();
    }
    let lines = vec![
        format!("identity_rows = {}", run.extra.len()),
        format!("identity_violations = {violations}"),
    ];
    Ok((
        strip(run),
        Some(Study {
            name: "identities",
            csv,
            lines,
            violations,
        }),
    ))
}

fn max_of(
    records: &[DiagnosticsRecord],
    f: impl Fn(&DiagnosticsRecord) -> Option<f64>,
) -> Option<f64> {
    records
        .iter()
        .filter_map(f)
        .fold(None, |m, v| Some(m.map_or(v, |m: f64| m.max(v))))
}

/// Runs every configured resolution and checks that the worst relative
/// elliptic residual decreases under refinement.
fn elliptic_study(
    cfg: &ExperimentConfig,
) -> std::result::Result<(RunSummary<()>, Option<Study>), CliError> {
    let mut csv = String::from("points,taylor_order,max_residual_l2,max_residual_rel\n");
    let mut lines = Vec::new();
    let mut violations = 0;
    let mut previous: Option<f64> = None;
    let mut last = None;
    for res in &cfg.study.resolutions {
        let grid = TorusGrid::new(cfg.dimension, res.points)?;
        let h0 = cfg.initial_field(&grid);
        let dtn = DtnConfig {
            taylor_order: res.taylor_order,
            ..cfg.dtn.clone()
        };
        let run = simulate(
            cfg,
            &h0,
            &dtn,
            cfg.stepper.dt,
            cfg.diagnostics.stride,
            |_| Ok(()),
        )?;
        let l2 = max_of(&run.records, |r| r.elliptic_residual_l2);
        let rel = max_of(&run.records, |r| r.elliptic_residual_rel);
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            res.points,
            res.taylor_order,
            format_value(l2),
            format_value(rel)
        );
        let decreasing = match (previous, rel) {
            (Some(p), Some(r)) => r < p,
            (None, Some(_)) => true,
            _ => false,
        };
        if !decreasing || run.failure.is_some() {
            violations += 1;
        }
        lines.push(format!(
            "resolution N={} M={}: max_residual_rel = {}{}",
            res.points,
            res.taylor_order,
            format_value(rel),
            if decreasing { "" } else { " (not decreasing)" }
        ));
        previous = rel;
        last = Some(run);
    }
    let last = last.ok_or(CliError::EmptyRecords)?;
    lines.push(format!("refinement_violations = {violations}"));
    Ok((
        strip(last),
        Some(Study {
            name: "refinement",
            csv,
            lines,
            violations,
        }),
    ))
}

/// Halves the step `refinements` times and measures the observed order
/// from differences of successive final states.
fn convergence_study(
    cfg: &ExperimentConfig,
) -> std::result::Result<(RunSummary<()>, Option<Study>), CliError> {
    let grid = TorusGrid::new(cfg.dimension, cfg.points)?;
    let h0 = cfg.initial_field(&grid);
    let mut finals = Vec::new();
    let mut last = None;
    let mut failed = false;
    for level in 0..=cfg.study.refinements {
        let scale = 1usize << level;
        let dt = cfg.stepper.dt / scale as f64;
        let run = simulate(
            cfg,
            &h0,
            &cfg.dtn,
            dt,
            cfg.diagnostics.stride * scale,
            |_| Ok(()),
        )?;
        failed |= run.failure.is_some();
        finals.push((dt, run.final_state.h.clone()));
        last = Some(run);
    }
    let diffs: Vec<f64> = finals
        .windows(2)
        .map(|w| (&w[0].1 - &w[1].1).norm_l2())
        .collect();
    let expected = cfg.scheme_order();
    let mut csv = String::from("dt,difference_l2,observed_order\n");
    let mut violations = usize::from(failed);
    let mut lines = vec![format!("expected_order = {expected}")];
    for (i, d) in diffs.iter().enumerate() {
        let order = if i + 1 < diffs.len() && diffs[i + 1] > 0.0 {
            Some((d / diffs[i + 1]).log2())
        } else {
            None
        };
        let _ = writeln!(
            csv,
            "{},{},{}",
            format_value(Some(finals[i].0)),
            format_value(Some(*d)),
            format_value(order)
        );
        if let Some(p) = order {
            // Orders measured on rounding-level differences carry no information.
            let resolved = diffs[i + 1] > CONVERGENCE_FLOOR;
            if resolved && p < expected - ORDER_SLACK {
                violations += 1;
            }
            lines.push(format!(
                "dt = {}: observed_order = {}",
                format_value(Some(finals[i].0)),
                format_value(Some(p))
            ));
        }
    }
    lines.push(format!("order_violations = {violations}"));
    let last = last.ok_or(CliError::EmptyRecords)?;
    Ok((
        strip(last),
        Some(Study {
            name: "convergence",
            csv,
            lines,
            violations,
        }),
    ))
}

fn summary_text(
    cfg: &ExperimentConfig,
    main: &RunSummary<()>,
    violations: &Violations,
    study: Option<&Study>,
    status: ExitStatus,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# heleshaw summary");
    let _ = writeln!(out, "preset = {}", cfg.preset.map_or("none", |p| p.name()));
    let _ = writeln!(out, "config_sha256 = {}", cfg.hash());
    let _ = writeln!(out, "dimension = {}", cfg.dimension);
    let _ = writeln!(out, "points = {}", main.final_state.h.grid().n());
    let _ = writeln!(out, "records = {}", main.records.len());
    let _ = writeln!(out, "t_final = {}", format_value(Some(main.final_state.t)));
    let _ = writeln!(out, "truncated = {}", main.failure.is_some());
    if let Some(f) = &main.failure {
        let _ = writeln!(out, "failure = {f}");
    }
    let _ = writeln!(out, "\n[quantities]");
    if let Some(first) = main.records.first() {
        let names: Vec<String> = first.columns().into_iter().map(|(n, _)| n).collect();
        for (j, name) in names.iter().enumerate().skip(1) {
            let values: Vec<f64> = main
                .records
                .iter()
                .filter_map(|r| r.columns()[j].1)
                .collect();
            let min = values.iter().copied().reduce(f64::min);
            let max = values.iter().copied().reduce(f64::max);
            let _ = writeln!(
                out,
                "{name} min {} max {}",
                format_value(min),
                format_value(max)
            );
        }
    }
    let _ = writeln!(out, "\n[violations]");
    for (name, count) in [
        ("lyapunov_first", violations.lyapunov_first),
        ("lyapunov_second", violations.lyapunov_second),
        ("min_a_nonpositive", violations.min_a_nonpositive),
        ("min_a_dip", violations.min_a_dip),
        ("gamma", violations.gamma),
        ("cordoba", violations.cordoba),
        ("entropy", violations.entropy),
        ("l2_identity", violations.l2_identity),
    ] {
        let _ = writeln!(out, "{name} = {count}");
    }
    let _ = writeln!(out, "total = {}", violations.total());
    if let Some(study) = study {
        let _ = writeln!(out, "\n[{}]", study.name);
        for line in &study.lines {
            let _ = writeln!(out, "{line}");
        }
    }
    let _ = writeln!(out, "\nstatus = {}", status.label());
    out
}
