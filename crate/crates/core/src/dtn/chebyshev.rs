//! Vertical discretisation of the flattened slab `s ∈ [0, H]`.
//!
//! Chebyshev–Gauss–Lobatto nodes `t ∈ [-1, 1]` are pulled back through the
//! truncated algebraic map `s(t) = L (1 + t) / (1 - t + ε)`, `ε = 2L/H`,
//! which sends `t = -1` to the surface and `t = 1` to the bottom and clusters
//! nodes near `s = 0` where the high modes decay.

use nalgebra::DMatrix;

/// Collocation nodes and differentiation matrices in the depth variable `s`.
#[derive(Debug, Clone)]
pub struct VerticalGrid {
    /// Depths, `s[0] = 0` (surface) to `s[nz] = H` (bottom).
    pub depths: Vec<f64>,
    pub d1: DMatrix<f64>,
    pub d2: DMatrix<f64>,
}

/// Chebyshev–Gauss–Lobatto nodes in ascending order and the matching
/// first-derivative matrix.
pub fn lobatto(n: usize) -> (Vec<f64>, DMatrix<f64>) {
    let np = n + 1;
    let x: Vec<f64> = (0..np)
        .map(|j| (std::f64::consts::PI * j as f64 / n as f64).cos())
        .collect();
    let c: Vec<f64> = (0..np)
        .map(|j| {
            let w = if j == 0 || j == n { 2.0 } else { 1.0 };
            if j % 2 == 0 {
                w
            } else {
                -w
            }
        })
        .collect();
    let mut d = DMatrix::<f64>::zeros(np, np);
    for i in 0..np {
        for j in 0..np {
            if i != j {
                d[(i, j)] = c[i] / c[j] / (x[i] - x[j]);
            }
        }
    }
    // Negative-sum trick for the diagonal.
    for i in 0..np {
        let s: f64 = (0..np).filter(|&j| j != i).map(|j| d[(i, j)]).sum();
        d[(i, i)] = -s;
    }
    // t = -x is ascending; d/dt = -d/dx.
    let t: Vec<f64> = x.iter().map(|v| -v).collect();
    let dt = -d;
    (t, dt)
}

impl VerticalGrid {
    pub fn new(intervals: usize, depth: f64, map_scale: f64) -> Self {
        let (t, dt) = lobatto(intervals);
        let eps = 2.0 * map_scale / depth;
        let depths: Vec<f64> = t
            .iter()
            .map(|&t| map_scale * (1.0 + t) / (1.0 - t + eps))
            .collect();
        let mut d1 = dt;
        for (i, &ti) in t.iter().enumerate() {
            let jac = map_scale * (2.0 + eps) / (1.0 - ti + eps).powi(2);
            d1.row_mut(i).scale_mut(1.0 / jac);
        }
        let d2 = &d1 * &d1;
        Self { depths, d1, d2 }
    }

    /// Number of intervals; there are `nz + 1` levels.
    pub fn nz(&self) -> usize {
        self.depths.len() - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_map_to_surface_and_bottom() {
        let v = VerticalGrid::new(64, 15.0, 1.0);
        assert_eq!(v.depths[0], 0.0);
        assert!((v.depths[64] - 15.0).abs() < 1e-12);
        assert!(v.depths.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn differentiates_decaying_exponentials() {
        let v = VerticalGrid::new(64, 15.0, 1.0);
        for k in [1.0, 4.0, 16.0] {
            let f: Vec<f64> = v.depths.iter().map(|s| (-k * s).exp()).collect();
            let fv = nalgebra::DVector::from_vec(f);
            let d = &v.d1 * &fv;
            let dd = &v.d2 * &fv;
            for (i, s) in v.depths.iter().enumerate() {
                let e = (-k * s).exp();
                assert!((d[i] + k * e).abs() < 1e-9 * k, "k={k} s={s}");
                assert!((dd[i] - k * k * e).abs() < 1e-7 * k * k, "k={k} s={s}");
            }
        }
    }
}
