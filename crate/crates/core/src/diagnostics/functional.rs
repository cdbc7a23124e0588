use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Width of the mollification used for non-smooth convex functions.
pub const MOLLIFICATION_WIDTH: f64 = 1e-3;

const SAMPLE_RANGE: (f64, f64) = (-5.0, 5.0);
const SAMPLES: usize = 1000;
const THIRD_DIFFERENCE_TOL: f64 = 1e-10;

/// A function `Φ` with its first two derivatives and the convexity class it
/// claims to belong to.
#[derive(Clone)]
pub struct ConvexFunctional {
    pub name: String,
    phi: RealFn,
    dphi: RealFn,
    d2phi: RealFn,
    /// `Φ` is convex.
    pub phi_convex: bool,
    /// `Φ'` is convex as well.
    pub dphi_convex: bool,
    /// `Φ ≥ 0`.
    pub nonneg: bool,
}

impl fmt::Debug for ConvexFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConvexFunctional")
            .field("name", &self.name)
            .field("phi_convex", &self.phi_convex)
            .field("dphi_convex", &self.dphi_convex)
            .field("nonneg", &self.nonneg)
            .finish()
    }
}

fn samples() -> impl Iterator<Item = f64> {
    let (lo, hi) = SAMPLE_RANGE;
    let step = (hi - lo) / (SAMPLES - 1) as f64;
    (0..SAMPLES).map(move |i| lo + step * i as f64)
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl ConvexFunctional {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        phi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dphi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2phi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        phi_convex: bool,
        dphi_convex: bool,
        nonneg: bool,
    ) -> Self {
        Self {
            name: name.into(),
            phi: Arc::new(phi),
            dphi: Arc::new(dphi),
            d2phi: Arc::new(d2phi),
            phi_convex,
            dphi_convex,
            nonneg,
        }
    }

    pub fn phi(&self, x: f64) -> f64 {
        (self.phi)(x)
    }

    pub fn dphi(&self, x: f64) -> f64 {
        (self.dphi)(x)
    }

    pub fn d2phi(&self, x: f64) -> f64 {
        (self.d2phi)(x)
    }

    /// Checks the claimed flags by sampling `[-5, 5]` at 1000 points.
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, x: f64| {
            Err(Error::InvalidConfig(format!(
                "functional {}: {what} at x = {x}",
                self.name
            )))
        };
        let xs: Vec<f64> = samples().collect();
        for &x in &xs {
            if !self.phi(x).is_finite() || !self.dphi(x).is_finite() || !self.d2phi(x).is_finite() {
                return bad("non-finite value", x);
            }
            if self.phi_convex && self.d2phi(x) < 0.0 {
                return bad("negative second derivative", x);
            }
            if self.nonneg && self.phi(x) < 0.0 {
                return bad("negative value", x);
            }
        }
        if self.dphi_convex {
            for w in xs.windows(4) {
                let d3 =
                    self.phi(w[3]) - 3.0 * self.phi(w[2]) + 3.0 * self.phi(w[1]) - self.phi(w[0]);
                if d3 < -THIRD_DIFFERENCE_TOL {
                    return bad("negative third difference", w[0]);
                }
            }
        }
        Ok(())
    }

    pub fn square() -> Self {
        Self::new("x2", |x| x * x, |x| 2.0 * x, |_| 2.0, true, true, true)
    }

    pub fn quartic() -> Self {
        Self::new(
            "x4",
            |x| x.powi(4),
            |x| 4.0 * x.powi(3),
            |x| 12.0 * x * x,
            true,
            false,
            true,
        )
    }

    pub fn exp() -> Self {
        Self::new("exp", f64::exp, f64::exp, f64::exp, true, true, true)
    }

    pub fn cosh() -> Self {
        Self::new("cosh", f64::cosh, f64::sinh, f64::cosh, true, false, true)
    }

    pub fn affine() -> Self {
        Self::new("affine", |x| x, |_| 1.0, |_| 0.0, true, true, false)
    }

    /// `x² 1_{x<0}` mollified as `(δ softplus(-x/δ))²`.
    pub fn negative_square() -> Self {
        let d = MOLLIFICATION_WIDTH;
        let g = move |x: f64| d * softplus(-x / d);
        let dg = move |x: f64| -sigmoid(-x / d);
        let d2g = move |x: f64| {
            let s = sigmoid(-x / d);
            s * (1.0 - s) / d
        };
        Self::new(
            "negsq",
            move |x| g(x).powi(2),
            move |x| 2.0 * g(x) * dg(x),
            move |x| 2.0 * (dg(x).powi(2) + g(x) * d2g(x)),
            true,
            false,
            true,
        )
    }

    /// The registered suite.
    pub fn suite() -> Vec<Self> {
        vec![
            Self::square(),
            Self::quartic(),
            Self::exp(),
            Self::cosh(),
            Self::affine(),
            Self::negative_square(),
        ]
    }

    pub fn by_name(name: &str) -> Option<Self> {
        Self::suite().into_iter().find(|f| f.name == name)
    }
}
