//! Dirichlet-to-Neumann operator `G(h)` of the domain `{y < h(x)}` and its
//! companions.
//!
//! For surface data `ψ` with harmonic extension `φ`,
//!
//! ```text
//! G(h)ψ = ∂_y φ - ∇h · ∇_x φ      at y = h(x),
//! B(h)ψ = ∂_y φ = (G(h)ψ + ∇h·∇ψ) / (1 + |∇h|²),
//! V(h)ψ = ∇_x φ = ∇ψ - (B(h)ψ) ∇h.
//! ```
//!
//! Two backends evaluate `G(h)`: a flattened elliptic solve (reference) and
//! the operator expansion in powers of `h` (fast). Everything else is built
//! from `G(h)` by the algebra above, so it inherits the backend accuracy.

mod chebyshev;
mod elliptic;
mod gmres;
mod taylor;

use serde::{Deserialize, Serialize};

pub use chebyshev::{lobatto, VerticalGrid};
pub use elliptic::HarmonicExtension;

use crate::error::{Error, Result};
use crate::grid::{div, dot, Field};
use elliptic::EllipticSolver;
use taylor::TaylorExpansion;

/// Largest expansion order accepted.
pub const MAX_TAYLOR_ORDER: usize = 12;
/// Largest `max |h - mean h|` accepted by the expansion backend.
pub const TAYLOR_AMPLITUDE_LIMIT: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Elliptic,
    Taylor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DtnConfig {
    pub backend: Backend,
    pub taylor_order: usize,
    /// Depth `H` of the truncated slab below the surface.
    pub truncation_depth: f64,
    /// Number of vertical intervals `Nz`.
    pub vertical_points: usize,
    /// Length scale `L` of the vertical node map.
    pub map_scale: f64,
    pub solver_tolerance: f64,
    pub max_iterations: usize,
    /// Relative level below which the expansion backend drops input
    /// coefficients; 0 keeps everything.
    pub filter_level: f64,
}

impl Default for DtnConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Taylor,
            taylor_order: 6,
            truncation_depth: 15.0,
            vertical_points: 64,
            map_scale: 1.0,
            solver_tolerance: 1e-12,
            max_iterations: 600,
            filter_level: 1e-12,
        }
    }
}

impl DtnConfig {
    pub fn taylor(order: usize) -> Self {
        Self {
            backend: Backend::Taylor,
            taylor_order: order,
            ..Self::default()
        }
    }

    pub fn elliptic() -> Self {
        Self {
            backend: Backend::Elliptic,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.taylor_order < 1 || self.taylor_order > MAX_TAYLOR_ORDER {
            problems.push(format!(
                "taylor_order must lie in [1, {MAX_TAYLOR_ORDER}], got {}",
                self.taylor_order
            ));
        }
        if !(self.truncation_depth >= 2.0) {
            problems.push(format!(
                "truncation_depth must be >= 2, got {}",
                self.truncation_depth
            ));
        }
        if self.vertical_points < 16 {
            problems.push(format!(
                "vertical_points must be >= 16, got {}",
                self.vertical_points
            ));
        }
        if !(self.map_scale > 0.0) {
            problems.push(format!(
                "map_scale must be positive, got {}",
                self.map_scale
            ));
        }
        if !(self.solver_tolerance > 0.0) {
            problems.push(format!(
                "solver_tolerance must be positive, got {}",
                self.solver_tolerance
            ));
        }
        if !(0.0..1e-3).contains(&self.filter_level) {
            problems.push(format!(
                "filter_level must lie in [0, 1e-3), got {}",
                self.filter_level
            ));
        }
        if self.max_iterations == 0 {
            problems.push("max_iterations must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }
}

enum Engine {
    Elliptic(EllipticSolver),
    Taylor(TaylorExpansion),
}

/// `G(h)` and companions for one fixed surface `h`.
///
/// Construction does the per-surface work (slopes, powers of `h`,
/// preconditioner factorisations) once; every method then acts on new
/// surface data.
pub struct DtnOperator {
    h: Field,
    grad_h: Vec<Field>,
    metric: Field,
    cfg: DtnConfig,
    engine: Engine,
}

impl DtnOperator {
    pub fn new(h: &Field, cfg: &DtnConfig) -> Result<Self> {
        cfg.validate()?;
        h.check_finite("surface elevation")?;
        let grad_h = h.grad();
        let metric = dot(&grad_h, &grad_h).add_scalar(1.0);
        let engine = match cfg.backend {
            Backend::Elliptic => Engine::Elliptic(EllipticSolver::new(h, &grad_h, cfg)),
            Backend::Taylor => {
                let mean = h.mean();
                let amplitude = h
                    .values()
                    .iter()
                    .fold(0.0_f64, |m, v| m.max((v - mean).abs()));
                if amplitude > TAYLOR_AMPLITUDE_LIMIT {
                    return Err(Error::BackendValidity(format!(
                        "max |h - mean h| = {amplitude:.4} exceeds {TAYLOR_AMPLITUDE_LIMIT} for the expansion backend"
                    )));
                }
                Engine::Taylor(TaylorExpansion::new(h, cfg.taylor_order, cfg.filter_level))
            }
        };
        Ok(Self {
            h: h.clone(),
            grad_h,
            metric,
            cfg: cfg.clone(),
            engine,
        })
    }

    pub fn surface(&self) -> &Field {
        &self.h
    }

    pub fn config(&self) -> &DtnConfig {
        &self.cfg
    }

    pub fn surface_gradient(&self) -> &[Field] {
        &self.grad_h
    }

    /// `1 + |∇h|²`.
    pub fn metric(&self) -> &Field {
        &self.metric
    }

    fn check(&self, f: &Field, what: &'static str) -> Result<()> {
        if !f.grid().same(self.h.grid()) {
            return Err(Error::GridMismatch);
        }
        f.check_finite(what)
    }

    /// `G(h)ψ`.
    pub fn apply(&self, psi: &Field) -> Result<Field> {
        self.check(psi, "Dirichlet data")?;
        let out = match &self.engine {
            Engine::Elliptic(solver) => {
                let ext = solver.solve(psi)?;
                // -(1 + |∇h|²) Φ_s - ∇h·∇ψ at the surface.
                -(&self.metric * ext.surface_slope()) - dot(&self.grad_h, &psi.grad())
            }
            Engine::Taylor(expansion) => expansion.apply(psi),
        };
        out.check_finite("Dirichlet-to-Neumann output")?;
        Ok(out)
    }

    /// The expansion terms `G_0(h)ψ, …, G_M(h)ψ`; `None` for the elliptic backend.
    pub fn expansion_terms(&self, psi: &Field) -> Result<Option<Vec<Field>>> {
        self.check(psi, "Dirichlet data")?;
        Ok(match &self.engine {
            Engine::Taylor(expansion) => Some(expansion.terms(psi)),
            Engine::Elliptic(_) => None,
        })
    }

    /// Harmonic extension of `ψ` by the flattened elliptic solve, whatever the
    /// configured backend.
    pub fn harmonic_extension(&self, psi: &Field) -> Result<HarmonicExtension> {
        self.check(psi, "Dirichlet data")?;
        match &self.engine {
            Engine::Elliptic(solver) => solver.solve(psi),
            Engine::Taylor(_) => EllipticSolver::new(&self.h, &self.grad_h, &self.cfg).solve(psi),
        }
    }

    /// `B(h)ψ` from an already computed `G(h)ψ`.
    pub fn trace_b_from(&self, psi: &Field, g_psi: &Field) -> Field {
        (g_psi + &dot(&self.grad_h, &psi.grad())).zip_map(&self.metric, |a, m| a / m)
    }

    /// `V(h)ψ` from `B(h)ψ`.
    pub fn trace_v_from(&self, psi: &Field, b_psi: &Field) -> Vec<Field> {
        psi.grad()
            .iter()
            .zip(&self.grad_h)
            .map(|(gp, gh)| gp - &(b_psi * gh))
            .collect()
    }

    pub fn trace_b(&self, psi: &Field) -> Result<Field> {
        let g = self.apply(psi)?;
        Ok(self.trace_b_from(psi, &g))
    }

    pub fn trace_v(&self, psi: &Field) -> Result<Vec<Field>> {
        let b = self.trace_b(psi)?;
        Ok(self.trace_v_from(psi, &b))
    }

    /// `(B(h)ψ, V(h)ψ)` from a single evaluation of `G(h)ψ`.
    pub fn traces(&self, psi: &Field) -> Result<(Field, Vec<Field>)> {
        let b = self.trace_b(psi)?;
        let v = self.trace_v_from(psi, &b);
        Ok((b, v))
    }

    /// `B(h)*χ = G(h)(χ / (1 + |∇h|²)) - ∇·(χ ∇h / (1 + |∇h|²))`.
    pub fn adjoint_b(&self, chi: &Field) -> Result<Field> {
        self.check(chi, "adjoint input")?;
        let weighted = chi.zip_map(&self.metric, |c, m| c / m);
        let flux: Vec<Field> = self.grad_h.iter().map(|g| &weighted * g).collect();
        Ok(self.apply(&weighted)? - div(&flux))
    }

    /// Shape derivative `dG(h)ψ·ζ = -G(h)(𝔅ζ) - ∇·(𝔙ζ)` with `𝔅 = B(h)ψ`,
    /// `𝔙 = V(h)ψ`.
    pub fn shape_derivative(&self, psi: &Field, zeta: &Field) -> Result<Field> {
        self.check(zeta, "shape perturbation")?;
        let (b, v) = self.traces(psi)?;
        self.shape_derivative_with(&b, &v, zeta)
    }

    /// Shape derivative from precomputed traces `𝔅`, `𝔙`.
    pub fn shape_derivative_with(&self, b: &Field, v: &[Field], zeta: &Field) -> Result<Field> {
        let flux: Vec<Field> = v.iter().map(|c| c * zeta).collect();
        Ok(-self.apply(&(b * zeta))? - div(&flux))
    }
}

pub fn harmonic_extension(h: &Field, psi: &Field, cfg: &DtnConfig) -> Result<HarmonicExtension> {
    DtnOperator::new(h, cfg)?.harmonic_extension(psi)
}

pub fn dtn_apply(h: &Field, psi: &Field, cfg: &DtnConfig) -> Result<Field> {
    DtnOperator::new(h, cfg)?.apply(psi)
}

pub fn trace_b(h: &Field, psi: &Field, cfg: &DtnConfig) -> Result<Field> {
    DtnOperator::new(h, cfg)?.trace_b(psi)
}

pub fn trace_v(h: &Field, psi: &Field, cfg: &DtnConfig) -> Result<Vec<Field>> {
    DtnOperator::new(h, cfg)?.trace_v(psi)
}

pub fn adjoint_b(h: &Field, chi: &Field, cfg: &DtnConfig) -> Result<Field> {
    DtnOperator::new(h, cfg)?.adjoint_b(chi)
}

pub fn shape_derivative(h: &Field, psi: &Field, zeta: &Field, cfg: &DtnConfig) -> Result<Field> {
    DtnOperator::new(h, cfg)?.shape_derivative(psi, zeta)
}

#[cfg(test)]
mod tests;
