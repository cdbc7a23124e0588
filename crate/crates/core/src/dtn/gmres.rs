//! Restarted GMRES with right preconditioning.

pub struct GmresOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// `‖b - A x‖ / max(‖b‖, scale)` at exit.
    pub relative_residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves `A x = b` by GMRES(`restart`) applied to `A M⁻¹ y = b`, `x = M⁻¹ y`.
///
/// Residuals are measured against `max(‖b‖, scale)`, so a right-hand side
/// at rounding level relative to `scale` counts as solved once the residual
/// reaches that level.
pub fn solve(
    apply_a: impl Fn(&[f64]) -> Vec<f64>,
    apply_precond: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    scale: f64,
    tol: f64,
    restart: usize,
    max_iterations: usize,
) -> GmresOutcome {
    let n = b.len();
    let b_norm = norm(b).max(scale);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return GmresOutcome {
            solution: x,
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        };
    }
    let mut iterations = 0;
    let mut rel = 1.0;
    while iterations < max_iterations {
        let ax = apply_a(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        rel = beta / b_norm;
        if rel <= tol {
            return GmresOutcome {
                solution: x,
                iterations,
                relative_residual: rel,
                converged: true,
            };
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut hess: Vec<Vec<f64>> = Vec::new();
        let mut cs: Vec<f64> = Vec::new();
        let mut sn: Vec<f64> = Vec::new();
        let mut g = vec![beta];
        let mut j = 0;
        while j < restart && iterations < max_iterations {
            let z = apply_precond(&basis[j]);
            let mut w = apply_a(&z);
            let mut col = vec![0.0; j + 2];
            // Modified Gram-Schmidt.
            for (i, v) in basis.iter().enumerate() {
                let hij = dot(&w, v);
                col[i] = hij;
                w.iter_mut().zip(v).for_each(|(wk, vk)| *wk -= hij * vk);
            }
            let hnext = norm(&w);
            col[j + 1] = hnext;
            for i in 0..j {
                let t = cs[i] * col[i] + sn[i] * col[i + 1];
                col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
                col[i] = t;
            }
            let denom = (col[j] * col[j] + col[j + 1] * col[j + 1]).sqrt();
            let (c, s) = if denom == 0.0 {
                (1.0, 0.0)
            } else {
                (col[j] / denom, col[j + 1] / denom)
            };
            col[j] = c * col[j] + s * col[j + 1];
            col[j + 1] = 0.0;
            cs.push(c);
            sn.push(s);
            g.push(-s * g[j]);
            g[j] *= c;
            hess.push(col);
            iterations += 1;
            j += 1;
            rel = g[j].abs() / b_norm;
            if rel <= tol || hnext == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / hnext).collect());
        }
        // Back-substitute the j x j upper-triangular system.
        let mut y = vec![0.0; j];
        for i in (0..j).rev() {
            let mut acc = g[i];
            for (k, yk) in y.iter().enumerate().skip(i + 1) {
                acc -= hess[k][i] * yk;
            }
            y[i] = acc / hess[i][i];
        }
        let mut update = vec![0.0; n];
        for (yi, v) in y.iter().zip(&basis) {
            update.iter_mut().zip(v).for_each(|(u, vk)| *u += yi * vk);
        }
        let dx = apply_precond(&update);
        x.iter_mut().zip(&dx).for_each(|(xi, di)| *xi += di);
    }
    let ax = apply_a(&x);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    rel = rel.max(norm(&r) / b_norm);
    GmresOutcome {
        solution: x,
        iterations,
        relative_residual: rel,
        converged: rel <= tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_nonsymmetric_system() {
        // Tridiagonal convection-diffusion matrix.
        let n = 50;
        let apply = |x: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let mut v = 4.0 * x[i];
                    if i > 0 {
                        v -= 1.5 * x[i - 1];
                    }
                    if i + 1 < n {
                        v -= 0.5 * x[i + 1];
                    }
                    v
                })
                .collect()
        };
        let exact: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = apply(&exact);
        let out = solve(
            apply,
            |v| v.iter().map(|x| x / 4.0).collect(),
            &b,
            0.0,
            1e-13,
            10,
            500,
        );
        assert!(out.converged);
        for (a, e) in out.solution.iter().zip(&exact) {
            assert!((a - e).abs() < 1e-11);
        }
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let out = solve(|x| x.to_vec(), |x| x.to_vec(), &[0.0; 4], 0.0, 1e-12, 5, 10);
        assert_eq!(out.solution, vec![0.0; 4]);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn tiny_rhs_is_judged_against_scale() {
        let b = [1e-30, 0.0, 0.0];
        // The preconditioner perturbs at relative rounding level only.
        let out = solve(
            |x| x.iter().map(|v| 2.0 * v).collect(),
            |x| x.iter().map(|v| 0.5 * v).collect(),
            &b,
            1.0,
            1e-12,
            5,
            10,
        );
        assert!(out.converged);
        assert!(out.relative_residual <= 1e-12);
    }
}
