//! Reference backend: harmonic extension by a flattened elliptic solve.
//!
//! Below the graph `y = h(x)` write `y = h(x) - s`, `s ∈ [0, H]`, and
//! `φ(x, y) = Φ(x, s)`. Laplace's equation becomes
//!
//! ```text
//! ΔΦ + 2∇h·∇Φ_s + (Δh) Φ_s + (1 + |∇h|²) Φ_ss = 0,
//! Φ(x, 0) = ψ,   (1 + |∇h|²) Φ_s + ∇h·∇Φ = 0 at s = H.
//! ```
//!
//! The operator is the divergence of `(∇Φ + Φ_s ∇h, (1 + |∇h|²) Φ_s + ∇h·∇Φ)`
//! in `(x, s)`, and the bottom condition zeroes the vertical component, which
//! is the flux through the (wavy) level `s = H`. The mean of the surface
//! flux then vanishes as it does in the half-space, instead of leaking at
//! order `e^{-H}`. For flat `h` this is `Φ_s = 0`.
//!
//! The flat extension `Φ₀ = Σ ψ̂_k e^{-|k|s} e^{ik·x}` is known in closed form,
//! so only the correction `U = Φ - Φ₀` is discretised: Fourier collocation in
//! `x`, mapped Chebyshev collocation in `s`. `U` vanishes at the surface and
//! is driven by the terms of the operator that involve `h`. The system is
//! solved by GMRES preconditioned with the flat operator
//! `c̄ ∂_ss - |k|²`, `c̄ = mean(1 + |∇h|²)`, which is block diagonal in `k`.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use rustfft::num_complex::Complex64;

use super::chebyshev::VerticalGrid;
use super::gmres;
use super::DtnConfig;
use crate::error::{Error, Result};
use crate::grid::{dot, Field, TorusGrid};

const RESTART: usize = 60;

pub(crate) struct EllipticSolver {
    grid: Arc<TorusGrid>,
    vertical: VerticalGrid,
    grad_h: Vec<Field>,
    lap_h: Field,
    grad_h_sq: Field,
    blocks: HashMap<i64, LU<f64, Dyn, Dyn>>,
    tolerance: f64,
    max_iterations: usize,
}

/// Harmonic extension of surface data below the graph of `h`, sampled on the
/// flattened slab.
#[derive(Debug, Clone)]
pub struct HarmonicExtension {
    depths: Vec<f64>,
    potential: Vec<Field>,
    surface_slope: Field,
    grad_h: Vec<Field>,
    iterations: usize,
    residual: f64,
}

impl HarmonicExtension {
    /// Depth levels `s`, surface first.
    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    /// `φ(x, h(x) - s_m)` for every level `m`.
    pub fn potential(&self) -> &[Field] {
        &self.potential
    }

    pub fn surface_trace(&self) -> &Field {
        &self.potential[0]
    }

    /// `∂_s Φ` at the surface.
    pub fn surface_slope(&self) -> &Field {
        &self.surface_slope
    }

    /// `∂_y φ` at the surface.
    pub fn vertical_velocity(&self) -> Field {
        -&self.surface_slope
    }

    /// `∇_x φ` at the surface, `∇ψ + Φ_s ∇h`.
    pub fn horizontal_velocity(&self) -> Vec<Field> {
        let grad_psi = self.potential[0].grad();
        grad_psi
            .iter()
            .zip(&self.grad_h)
            .map(|(gp, gh)| gp + &(&self.surface_slope * gh))
            .collect()
    }

    /// `∂_y φ - ∇h · ∇_x φ` at the surface.
    pub fn normal_derivative(&self) -> Field {
        self.vertical_velocity() - dot(&self.grad_h, &self.horizontal_velocity())
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Relative residual of the discrete flattened Laplace system.
    pub fn residual(&self) -> f64 {
        self.residual
    }
}

impl EllipticSolver {
    pub(crate) fn new(h: &Field, grad_h: &[Field], cfg: &DtnConfig) -> Self {
        let grid = Arc::clone(h.grid());
        let vertical = VerticalGrid::new(cfg.vertical_points, cfg.truncation_depth, cfg.map_scale);
        let grad_h_sq = dot(grad_h, grad_h);
        let lap_h = h.laplacian();
        let c_bar = 1.0 + grad_h_sq.mean();
        let nz = vertical.nz();
        let mut blocks = HashMap::new();
        for k in grid.wavevectors() {
            let key = k.k[0] * k.k[0] + k.k[1] * k.k[1];
            blocks.entry(key).or_insert_with(|| {
                let k2 = key as f64;
                let mut a = DMatrix::<f64>::zeros(nz, nz);
                for i in 0..nz - 1 {
                    for j in 0..nz {
                        a[(i, j)] = c_bar * vertical.d2[(i + 1, j + 1)];
                    }
                    a[(i, i)] -= k2;
                }
                for j in 0..nz {
                    a[(nz - 1, j)] = c_bar * vertical.d1[(nz, j + 1)];
                }
                a.lu()
            });
        }
        Self {
            grid,
            vertical,
            grad_h: grad_h.to_vec(),
            lap_h,
            grad_h_sq,
            blocks,
            tolerance: cfg.solver_tolerance,
            max_iterations: cfg.max_iterations,
        }
    }

    fn points(&self) -> usize {
        self.grid.len()
    }

    /// Combines levels with row `m` of `matrix`; `levels` holds `1..=nz`
    /// (level 0 is zero).
    fn combine(&self, matrix: &DMatrix<f64>, m: usize, levels: &[&[f64]]) -> Vec<f64> {
        let mut out = vec![0.0; self.points()];
        for (l, lev) in levels.iter().enumerate() {
            let c = matrix[(m, l + 1)];
            if c != 0.0 {
                out.iter_mut()
                    .zip(lev.iter())
                    .for_each(|(o, v)| *o += c * v);
            }
        }
        out
    }

    /// Variable-coefficient operator on the correction, interior rows plus
    /// the no-flux row at the bottom.
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let p = self.points();
        let nz = self.vertical.nz();
        let levels: Vec<&[f64]> = x.chunks(p).collect();
        let mut out = Vec::with_capacity(x.len());
        for m in 1..nz {
            let us = Field::from_vec(&self.grid, self.combine(&self.vertical.d1, m, &levels));
            let uss = self.combine(&self.vertical.d2, m, &levels);
            let lap = Field::from_vec(&self.grid, levels[m - 1].to_vec()).laplacian();
            let cross = dot(&self.grad_h, &us.grad());
            for i in 0..p {
                out.push(
                    lap.values()[i]
                        + 2.0 * cross.values()[i]
                        + self.lap_h.values()[i] * us.values()[i]
                        + (1.0 + self.grad_h_sq.values()[i]) * uss[i],
                );
            }
        }
        out.extend(self.bottom_flux(
            &self.combine(&self.vertical.d1, nz, &levels),
            &Field::from_vec(&self.grid, levels[nz - 1].to_vec()),
        ));
        out
    }

    /// Vertical flux `(1 + |∇h|²) u_s + ∇h·∇u` at the bottom.
    fn bottom_flux(&self, u_s: &[f64], u: &Field) -> Vec<f64> {
        let cross = dot(&self.grad_h, &u.grad());
        u_s.iter()
            .zip(self.grad_h_sq.values())
            .zip(cross.values())
            .map(|((d, g2), c)| (1.0 + g2) * d + c)
            .collect()
    }

    fn precondition(&self, r: &[f64]) -> Vec<f64> {
        let p = self.points();
        let nz = self.vertical.nz();
        let coeffs: Vec<Vec<Complex64>> = r.chunks(p).map(|lev| self.grid.forward(lev)).collect();
        let mut solved = vec![vec![Complex64::new(0.0, 0.0); p]; nz];
        for (mode, k) in self.grid.wavevectors().iter().enumerate() {
            let key = k.k[0] * k.k[0] + k.k[1] * k.k[1];
            let lu = &self.blocks[&key];
            let re = DVector::from_iterator(nz, coeffs.iter().map(|c| c[mode].re));
            let im = DVector::from_iterator(nz, coeffs.iter().map(|c| c[mode].im));
            let (Some(xr), Some(xi)) = (lu.solve(&re), lu.solve(&im)) else {
                continue;
            };
            for m in 0..nz {
                solved[m][mode] = Complex64::new(xr[m], xi[m]);
            }
        }
        solved.iter().flat_map(|c| self.grid.inverse(c)).collect()
    }

    pub(crate) fn solve(&self, psi: &Field) -> Result<HarmonicExtension> {
        let p = self.points();
        let nz = self.vertical.nz();
        let psi_hat = psi.spectral();
        let waves = self.grid.wavevectors();
        let half = (self.grid.n() / 2) as i64;

        // Closed-form flat extension and its depth derivatives at each level.
        let mut flat = Vec::with_capacity(nz + 1);
        let mut flat_s = Vec::with_capacity(nz + 1);
        let mut rhs = Vec::with_capacity(nz * p);
        for (m, &s) in self.vertical.depths.iter().enumerate() {
            let decayed: Vec<Complex64> = psi_hat
                .iter()
                .zip(waves)
                .map(|(c, k)| c * (-k.norm() * s).exp())
                .collect();
            let d_s: Vec<Complex64> = decayed
                .iter()
                .zip(waves)
                .map(|(c, k)| -c * k.norm())
                .collect();
            let phi0 = Field::from_vec(&self.grid, self.grid.inverse(&decayed));
            let phi0_s = Field::from_vec(&self.grid, self.grid.inverse(&d_s));
            if m >= 1 && m < nz {
                let d_ss: Vec<Complex64> = decayed
                    .iter()
                    .zip(waves)
                    .map(|(c, k)| c * k.norm_sq())
                    .collect();
                let phi0_ss = self.grid.inverse(&d_ss);
                let grad_s: Vec<Field> = (0..self.grid.dim())
                    .map(|axis| {
                        let c: Vec<Complex64> = d_s
                            .iter()
                            .zip(waves)
                            .map(|(c, k)| {
                                if k.k[axis] == -half {
                                    Complex64::new(0.0, 0.0)
                                } else {
                                    c * Complex64::new(0.0, k.k[axis] as f64)
                                }
                            })
                            .collect();
                        Field::from_vec(&self.grid, self.grid.inverse(&c))
                    })
                    .collect();
                let cross = dot(&self.grad_h, &grad_s);
                for i in 0..p {
                    rhs.push(
                        -(2.0 * cross.values()[i]
                            + self.lap_h.values()[i] * phi0_s.values()[i]
                            + self.grad_h_sq.values()[i] * phi0_ss[i]),
                    );
                }
            }
            flat.push(phi0);
            flat_s.push(phi0_s);
        }
        rhs.extend(
            self.bottom_flux(flat_s[nz].values(), &flat[nz])
                .iter()
                .map(|v| -v),
        );
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("elliptic coefficients"));
        }

        let outcome = gmres::solve(
            |x| self.apply(x),
            |r| self.precondition(r),
            &rhs,
            psi.values().iter().map(|v| v * v).sum::<f64>().sqrt(),
            self.tolerance,
            RESTART,
            self.max_iterations,
        );
        if !outcome.converged {
            return Err(Error::NotConverged {
                iterations: outcome.iterations,
                residual: outcome.relative_residual,
            });
        }
        let levels: Vec<&[f64]> = outcome.solution.chunks(p).collect();
        let correction_slope = self.combine(&self.vertical.d1, 0, &levels);
        let surface_slope = &flat_s[0] + &Field::from_vec(&self.grid, correction_slope);
        let mut potential = Vec::with_capacity(nz + 1);
        potential.push(psi.clone());
        for (m, lev) in levels.iter().enumerate() {
            potential.push(&flat[m + 1] + &Field::from_vec(&self.grid, lev.to_vec()));
        }
        Ok(HarmonicExtension {
            depths: self.vertical.depths.clone(),
            potential,
            surface_slope,
            grad_h: self.grad_h.clone(),
            iterations: outcome.iterations,
            residual: outcome.relative_residual,
        })
    }
}
