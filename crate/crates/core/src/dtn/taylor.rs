//! Expansion backend: `G(h) = Σ_{n ≤ M} G_n(η)`, `η = h - mean(h)`, for the
//! infinite-depth graph domain.
//!
//! Matching powers of `η` in `G(η) e^{|k|η + ik·x} = (|k| - ik·∇η) e^{|k|η + ik·x}`
//! gives `G_0 = |D|` and, using that every `G_j` is symmetric,
//!
//! ```text
//! G_n ψ = |D|^{n+1}(η_n ψ) + |D|^{n-1} ∇·(ψ ∇η_n) - Σ_{j<n} |D|^{n-j}(η_{n-j} G_j ψ),
//! η_n = η^n / n!.
//! ```
//!
//! Every term of `G_n ψ` needs only `G_j ψ` for the same `ψ`, so the cost is
//! quadratic in `M`.
//!
//! A surface mode `k` enters `G_n` with weight about `(|k| |η|)^n / n!`, so
//! at high wavenumbers the truncated series diverges and any content there,
//! rounding noise included, is amplified. Both `η` and `ψ` are therefore
//! truncated to their numerical support (coefficients above
//! `level · max`), and every product in `G_n ψ` is cut to its exact
//! polynomial band `K_ψ + n K_η`, capped by the 2/3 rule. Within those bands
//! the recursion is exact algebra.

use rustfft::num_complex::Complex64;

use crate::grid::Field;

pub(crate) struct TaylorExpansion {
    /// `η^n / n!` for `n = 0..=M`.
    eta_powers: Vec<Field>,
    /// `∇(η^n / n!)`.
    grad_eta_powers: Vec<Vec<Field>>,
    /// Largest `max|k_i|` of the truncated `η`.
    eta_band: f64,
    filter_level: f64,
}

/// `|D|^p` applied to a raw product, keeping only wavevectors with
/// `max|k_i| <= band`.
fn project(f: &Field, p: u32, band: f64) -> Field {
    let coeffs: Vec<Complex64> = f
        .spectral()
        .iter()
        .zip(f.grid().wavevectors())
        .map(|(c, &k)| {
            if k.max_abs() as f64 > band {
                Complex64::new(0.0, 0.0)
            } else {
                c * k.norm().powi(p as i32)
            }
        })
        .collect();
    Field::from_vec(f.grid(), f.grid().inverse(&coeffs))
}

/// Drops the coefficients of `f` below `level · max|f̂|` and returns the
/// truncated field with the largest `max|k_i|` it still contains.
fn truncate(f: &Field, level: f64) -> (Field, f64) {
    let floor = level * f.spectral().iter().fold(0.0_f64, |m, c| m.max(c.norm()));
    let mut band = 0;
    let coeffs: Vec<Complex64> = f
        .spectral()
        .iter()
        .zip(f.grid().wavevectors())
        .map(|(c, k)| {
            if c.norm() < floor || *c == Complex64::new(0.0, 0.0) {
                Complex64::new(0.0, 0.0)
            } else {
                band = band.max(k.max_abs());
                *c
            }
        })
        .collect();
    (
        Field::from_vec(f.grid(), f.grid().inverse(&coeffs)),
        band as f64,
    )
}

impl TaylorExpansion {
    pub(crate) fn new(h: &Field, order: usize, filter_level: f64) -> Self {
        let (eta, eta_band) = truncate(&h.add_scalar(-h.mean()), filter_level);
        let cutoff = h.grid().dealias_cutoff();
        let mut eta_powers = vec![Field::constant(h.grid(), 1.0)];
        for n in 1..=order {
            let next = (&eta_powers[n - 1] * &eta).scale(1.0 / n as f64);
            eta_powers.push(project(&next, 0, (n as f64 * eta_band).min(cutoff)));
        }
        let grad_eta_powers = eta_powers.iter().map(|e| e.grad()).collect();
        Self {
            eta_powers,
            grad_eta_powers,
            eta_band,
            filter_level,
        }
    }

    pub(crate) fn order(&self) -> usize {
        self.eta_powers.len() - 1
    }

    /// The individual terms `G_0 ψ, …, G_M ψ`.
    pub(crate) fn terms(&self, psi: &Field) -> Vec<Field> {
        let (psi, psi_band) = truncate(psi, self.filter_level);
        let psi = &psi;
        let mut terms = vec![psi.abs_d()];
        let cutoff = psi.grid().dealias_cutoff();
        let half = (psi.grid().n() / 2) as i64;
        for n in 1..=self.order() {
            // Every product below is a polynomial of this degree in the
            // retained modes.
            let band = (psi_band + n as f64 * self.eta_band).min(cutoff);
            let en = &self.eta_powers[n];
            let mut t = project(&(en * psi), n as u32 + 1, band);
            let flux: Vec<Field> = self.grad_eta_powers[n].iter().map(|g| g * psi).collect();
            // |D|^{n-1} ∇·(flux) in one spectral pass per axis.
            for (axis, f) in flux.iter().enumerate() {
                let coeffs: Vec<_> = f
                    .spectral()
                    .iter()
                    .zip(f.grid().wavevectors())
                    .map(|(c, k)| {
                        let ka = k.k[axis];
                        if k.max_abs() as f64 > band || ka == -half {
                            Complex64::new(0.0, 0.0)
                        } else {
                            c * Complex64::new(0.0, ka as f64) * k.norm().powi(n as i32 - 1)
                        }
                    })
                    .collect();
                t = &t + &Field::from_vec(f.grid(), f.grid().inverse(&coeffs));
            }
            for (j, gj) in terms.iter().enumerate() {
                t = &t - &project(&(&self.eta_powers[n - j] * gj), (n - j) as u32, band);
            }
            terms.push(t);
        }
        terms
    }

    pub(crate) fn apply(&self, psi: &Field) -> Field {
        let terms = self.terms(psi);
        let mut sum = terms[0].clone();
        for t in &terms[1..] {
            sum = &sum + t;
        }
        sum
    }
}
