use std::sync::Arc;

use super::*;
use crate::grid::TorusGrid;

fn grid(n: usize) -> Arc<TorusGrid> {
    TorusGrid::new(1, n).unwrap()
}

fn cos_mode(g: &Arc<TorusGrid>, k: f64, amp: f64) -> Field {
    Field::from_fn(g, |x| amp * (k * x[0]).cos())
}

fn rel_l2(a: &Field, b: &Field) -> f64 {
    (a - b).norm_l2() / b.norm_l2()
}

#[test]
fn config_validation() {
    assert!(DtnConfig::default().validate().is_ok());
    assert!(DtnConfig::taylor(13).validate().is_err());
    assert!(DtnConfig::taylor(0).validate().is_err());
    let cfg = DtnConfig {
        truncation_depth: 1.0,
        ..DtnConfig::default()
    };
    assert!(cfg.validate().is_err());
    let cfg = DtnConfig {
        vertical_points: 8,
        ..DtnConfig::default()
    };
    assert!(cfg.validate().is_err());
    let cfg = DtnConfig {
        filter_level: -1.0,
        ..DtnConfig::default()
    };
    assert!(cfg.validate().is_err());
}

#[test]
fn flat_extension_is_exponential() {
    let g = grid(64);
    let h = Field::zeros(&g);
    for k in [1.0, 3.0] {
        let psi = cos_mode(&g, k, 1.0);
        let ext = harmonic_extension(&h, &psi, &DtnConfig::elliptic()).unwrap();
        // The Neumann bottom departs from e^{-ks} by O(e^{-kH}) near s = H.
        for (s, phi) in ext.depths().iter().zip(ext.potential()) {
            let exact = psi.scale((-k * s).exp());
            assert!((phi - &exact).norm_linf() < 1e-6);
        }
        let err = (&ext.vertical_velocity() - &psi.scale(k)).norm_linf();
        assert!(err < 1e-10, "k={k} err={err:e}");
    }
}

#[test]
fn extension_is_translation_invariant() {
    let g = grid(32);
    let psi = Field::from_fn(&g, |x| x[0].sin() + 0.2 * (2.0 * x[0]).cos());
    let flat = harmonic_extension(&Field::zeros(&g), &psi, &DtnConfig::elliptic()).unwrap();
    let raised =
        harmonic_extension(&Field::constant(&g, 0.7), &psi, &DtnConfig::elliptic()).unwrap();
    for (a, b) in flat.potential().iter().zip(raised.potential()) {
        assert!((a - b).norm_linf() < 1e-13);
    }
}

#[test]
fn extension_matches_dirichlet_data() {
    let g = grid(64);
    let h = cos_mode(&g, 1.0, 0.1);
    let psi = Field::from_fn(&g, |x| x[0].sin());
    let ext = harmonic_extension(&h, &psi, &DtnConfig::elliptic()).unwrap();
    assert!(rel_l2(ext.surface_trace(), &psi) < 1e-10);
    assert!(ext.residual() <= 1e-12);
}

#[test]
fn flat_dtn_is_abs_d() {
    let g = grid(64);
    let h = Field::zeros(&g);
    for cfg in [DtnConfig::elliptic(), DtnConfig::taylor(6)] {
        let psi = cos_mode(&g, 3.0, 1.0);
        let out = dtn_apply(&h, &psi, &cfg).unwrap();
        assert!((&out - &psi.scale(3.0)).norm_linf() < 1e-12);
    }
}

#[test]
fn dtn_kills_constants() {
    let g = grid(64);
    let h = Field::from_fn(&g, |x| 0.1 * x[0].cos() + 0.05 * (2.0 * x[0]).sin());
    let one = Field::constant(&g, 1.0);
    for cfg in [DtnConfig::elliptic(), DtnConfig::taylor(6)] {
        assert!(dtn_apply(&h, &one, &cfg).unwrap().norm_linf() < 1e-10);
    }
}

#[test]
fn elliptic_flux_has_zero_mean() {
    // Nothing leaks through the truncated bottom, even when h has a mean.
    let g = grid(128);
    let h = Field::from_fn(&g, |x| {
        0.3 + 0.08 * (x[0] + 0.2).cos() - 0.03 * (3.0 * x[0]).sin()
    });
    let psi = Field::from_fn(&g, |x| (x[0] + 0.5).sin() + 0.4 * (2.0 * x[0]).cos());
    for nz in [64, 96] {
        let cfg = DtnConfig {
            vertical_points: nz,
            ..DtnConfig::elliptic()
        };
        let out = dtn_apply(&h, &psi, &cfg).unwrap();
        assert!(
            out.integrate().abs() < 1e-12 * psi.norm_l2(),
            "Nz = {nz}: {:e}",
            out.integrate().abs() / psi.norm_l2()
        );
    }
}

#[test]
fn taylor_matches_elliptic_on_reference_case() {
    let g = grid(64);
    let h = cos_mode(&g, 1.0, 0.1);
    let psi = Field::from_fn(&g, |x| x[0].sin());
    let reference = dtn_apply(&h, &psi, &DtnConfig::elliptic()).unwrap();
    let fast = dtn_apply(&h, &psi, &DtnConfig::taylor(6)).unwrap();
    assert!(rel_l2(&fast, &reference) < 1e-5);
}

#[test]
fn elliptic_reference_is_self_converged() {
    // Refining Nz and H must not move the reference solution.
    let g = grid(64);
    let h = cos_mode(&g, 1.0, 0.1);
    let psi = Field::from_fn(&g, |x| x[0].sin());
    let coarse = dtn_apply(&h, &psi, &DtnConfig::elliptic()).unwrap();
    let fine_cfg = DtnConfig {
        vertical_points: 96,
        truncation_depth: 20.0,
        ..DtnConfig::elliptic()
    };
    let fine = dtn_apply(&h, &psi, &fine_cfg).unwrap();
    assert!(rel_l2(&coarse, &fine) < 1e-8);
}

#[test]
fn taylor_rejects_large_amplitude() {
    let g = grid(32);
    let h = cos_mode(&g, 1.0, 0.5);
    let psi = cos_mode(&g, 1.0, 1.0);
    assert!(matches!(
        dtn_apply(&h, &psi, &DtnConfig::taylor(6)),
        Err(Error::BackendValidity(_))
    ));
    // A constant offset is irrelevant.
    let lifted = cos_mode(&g, 1.0, 0.1).add_scalar(3.0);
    assert!(dtn_apply(&lifted, &psi, &DtnConfig::taylor(6)).is_ok());
}

#[test]
fn nan_input_is_rejected() {
    let g = grid(16);
    let mut v = vec![0.0; 16];
    v[0] = f64::NAN;
    let bad = Field::new(&g, v).unwrap();
    let h = Field::zeros(&g);
    assert!(dtn_apply(&h, &bad, &DtnConfig::taylor(4)).is_err());
    assert!(dtn_apply(&bad, &h, &DtnConfig::taylor(4)).is_err());
}

#[test]
fn traces_on_flat_surface() {
    let g = grid(32);
    let h = Field::zeros(&g);
    let psi = Field::from_fn(&g, |x| x[0].sin() + 0.5 * (2.0 * x[0]).cos());
    let cfg = DtnConfig::taylor(6);
    let b = trace_b(&h, &psi, &cfg).unwrap();
    assert!((&b - &psi.abs_d()).norm_linf() < 1e-13);
    let v = trace_v(&h, &psi, &cfg).unwrap();
    assert!((&v[0] - &psi.grad()[0]).norm_linf() < 1e-13);
    let one = Field::constant(&g, 1.0);
    let h = cos_mode(&g, 1.0, 0.1);
    assert!(trace_b(&h, &one, &cfg).unwrap().norm_linf() < 1e-12);
    assert!(trace_v(&h, &one, &cfg).unwrap()[0].norm_linf() < 1e-12);
}

#[test]
fn traces_agree_with_extension() {
    let g = grid(64);
    let h = cos_mode(&g, 1.0, 0.1);
    let op = DtnOperator::new(&h, &DtnConfig::taylor(6)).unwrap();
    let ext = op.harmonic_extension(&h).unwrap();
    let (b, v) = op.traces(&h).unwrap();
    assert!(rel_l2(&b, &ext.vertical_velocity()) < 1e-4);
    assert!(rel_l2(&v[0], &ext.horizontal_velocity()[0]) < 1e-4);
    assert!(rel_l2(&op.apply(&h).unwrap(), &ext.normal_derivative()) < 1e-4);
}

#[test]
fn adjoint_examples() {
    let g = grid(32);
    let chi = Field::from_fn(&g, |x| (2.0 * x[0]).cos() + 0.3 * x[0].sin());
    let cfg = DtnConfig::taylor(6);
    let flat = adjoint_b(&Field::zeros(&g), &chi, &cfg).unwrap();
    assert!((&flat - &chi.abs_d()).norm_linf() < 1e-13);
    let h = cos_mode(&g, 1.0, 0.1);
    assert!(adjoint_b(&h, &Field::zeros(&g), &cfg).unwrap().norm_linf() == 0.0);
}

#[test]
fn adjointness_of_b() {
    let g = grid(64);
    let h = Field::from_fn(&g, |x| 0.08 * x[0].cos() - 0.03 * (2.0 * x[0] + 0.4).sin());
    let psi = Field::from_fn(&g, |x| x[0].sin() + 0.4 * (3.0 * x[0]).cos());
    let chi = Field::from_fn(&g, |x| (2.0 * x[0]).cos() - 0.2 * (x[0] + 1.0).sin());
    for cfg in [DtnConfig::taylor(6), DtnConfig::elliptic()] {
        let op = DtnOperator::new(&h, &cfg).unwrap();
        let lhs = op.trace_b(&psi).unwrap().inner(&chi);
        let rhs = psi.inner(&op.adjoint_b(&chi).unwrap());
        assert!(
            (lhs - rhs).abs() <= 1e-8 * psi.norm_l2() * chi.norm_l2(),
            "{cfg:?}"
        );
    }
}

#[test]
fn shape_derivative_examples() {
    let g = grid(64);
    let cfg = DtnConfig::taylor(6);
    let psi = cos_mode(&g, 1.0, 1.0);
    let c = Field::constant(&g, 0.3);
    let out = shape_derivative(&Field::zeros(&g), &psi, &c, &cfg).unwrap();
    assert!(out.norm_linf() < 1e-8);
    let h = cos_mode(&g, 1.0, 0.1);
    let out = shape_derivative(&h, &psi, &Field::zeros(&g), &cfg).unwrap();
    assert!(out.norm_linf() == 0.0);
}

#[test]
fn shape_derivative_matches_finite_differences() {
    let g = grid(64);
    let cfg = DtnConfig::taylor(8);
    let h = cos_mode(&g, 1.0, 0.1);
    let psi = Field::from_fn(&g, |x| (2.0 * x[0]).sin());
    let zeta = Field::from_fn(&g, |x| (x[0] + 0.3).cos());
    let exact = shape_derivative(&h, &psi, &zeta, &cfg).unwrap();
    let base = dtn_apply(&h, &psi, &cfg).unwrap();
    let errs: Vec<f64> = [1e-3, 1e-4]
        .iter()
        .map(|&eps| {
            let moved = dtn_apply(&(&h + &zeta.scale(eps)), &psi, &cfg).unwrap();
            ((&moved - &base).scale(1.0 / eps) - &exact).norm_linf()
        })
        .collect();
    assert!(errs[0] < 5e-3 && errs[1] < 5e-4, "{errs:?}");
    let order = (errs[0] / errs[1]).log10();
    assert!(order > 0.9, "order {order}");
}

#[test]
fn two_dimensional_backends_agree() {
    let g = TorusGrid::new(2, 32).unwrap();
    let h = Field::from_fn(&g, |x| 0.06 * x[0].cos() + 0.04 * (x[1] + 0.5).sin());
    let psi = Field::from_fn(&g, |x| (x[0] + x[1]).sin() + 0.3 * (2.0 * x[1]).cos());
    let reference = dtn_apply(&h, &psi, &DtnConfig::elliptic()).unwrap();
    let fast = dtn_apply(&h, &psi, &DtnConfig::taylor(6)).unwrap();
    assert!(
        rel_l2(&fast, &reference) < 1e-5,
        "{}",
        rel_l2(&fast, &reference)
    );
    let flat = dtn_apply(&Field::zeros(&g), &psi, &DtnConfig::elliptic()).unwrap();
    let expected = psi.abs_d();
    assert!((&flat - &expected).norm_linf() < 1e-12);
}

#[test]
fn filter_removes_amplified_rounding_noise() {
    // The exact answer lives in the low modes; anything above k = 40 is noise.
    let g = grid(512);
    let h = cos_mode(&g, 1.0, 0.1);
    let high = |f: &Field| {
        f.spectral()
            .iter()
            .zip(g.wavevectors())
            .filter(|(_, k)| k.max_abs() > 40)
            .map(|(c, _)| c.norm())
            .fold(0.0, f64::max)
    };
    let noisy = DtnConfig {
        filter_level: 0.0,
        ..DtnConfig::taylor(8)
    };
    let g_h = dtn_apply(&h, &h, &noisy).unwrap();
    assert!(high(&dtn_apply(&h, &g_h, &noisy).unwrap()) > 1e-10);
    let clean = DtnConfig::taylor(8);
    let g_h = dtn_apply(&h, &h, &clean).unwrap();
    let out = high(&dtn_apply(&h, &g_h, &clean).unwrap());
    assert!(out < 1e-12, "{out:e}");
    // Rounding in the 512 x 64 system stalls GMRES near 1e-12.
    let elliptic = DtnConfig {
        solver_tolerance: 1e-10,
        ..DtnConfig::elliptic()
    };
    let reference = dtn_apply(&h, &g_h, &elliptic).unwrap();
    let err = rel_l2(&dtn_apply(&h, &g_h, &clean).unwrap(), &reference);
    assert!(err < 1e-7, "{err:e}");
}

#[test]
fn surface_noise_is_not_amplified() {
    let g = grid(512);
    let h = cos_mode(&g, 1.0, 0.1);
    let noise = Field::from_fn(&g, |x| 1e-15 * (150.0 * x[0] + 0.3).cos());
    let noisy_h = &h + &noise;
    for order in [6, 8] {
        let cfg = DtnConfig::taylor(order);
        let clean = dtn_apply(&h, &h, &cfg).unwrap();
        let filtered = dtn_apply(&noisy_h, &noisy_h, &cfg).unwrap();
        assert!(rel_l2(&filtered, &clean) < 1e-13);
        let raw = DtnConfig {
            filter_level: 0.0,
            ..cfg
        };
        // Without truncation the series weight (150 · 0.1)^M / M! shows up.
        assert!(rel_l2(&dtn_apply(&noisy_h, &noisy_h, &raw).unwrap(), &clean) > 1e-11);
    }
}
