//! Periodic spectral core on the torus `[0, 2π)^dim`, `dim ∈ {1, 2}`.
//!
//! A [`TorusGrid`] owns the FFT plans and the integer wavenumber lattice; a
//! [`Field`] is a real grid function that lazily caches its Fourier
//! coefficients. Coefficients are normalised so that
//! `f(x) = Σ_k f̂_k e^{i k·x}`.
//!
//! In two dimensions values are stored row-major with axis 1 contiguous:
//! flat index `i0 * N + i1`.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub const MIN_POINTS: usize = 8;
pub const MAX_POINTS: usize = 4096;

/// An integer wavevector. In one dimension the second component is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Wavevector {
    pub k: [i64; 2],
}

impl Wavevector {
    pub fn norm_sq(&self) -> f64 {
        (self.k[0] * self.k[0] + self.k[1] * self.k[1]) as f64
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> i64 {
        self.k[0].abs().max(self.k[1].abs())
    }
}

/// Uniform discretisation of the torus with `N` points per axis of period 2π.
pub struct TorusGrid {
    dim: usize,
    n: usize,
    wavevectors: Vec<Wavevector>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusGrid")
            .field("dim", &self.dim)
            .field("n", &self.n)
            .finish()
    }
}

impl PartialEq for TorusGrid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.n == other.n
    }
}

/// Signed wavenumber of FFT bin `j` on an `n`-point axis, in `[-n/2, n/2)`.
pub fn wavenumber(j: usize, n: usize) -> i64 {
    if j < n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

impl TorusGrid {
    /// Builds a grid with `n` points per axis. `n` must be even and lie in
    /// `[8, 4096]`.
    pub fn new(dim: usize, n: usize) -> Result<Arc<Self>> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidGrid(format!(
                "dimension must be 1 or 2, got {dim}"
            )));
        }
        if n % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "point count must be even, got {n}"
            )));
        }
        if !(MIN_POINTS..=MAX_POINTS).contains(&n) {
            return Err(Error::InvalidGrid(format!(
                "point count must lie in [{MIN_POINTS}, {MAX_POINTS}], got {n}"
            )));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let wavevectors = match dim {
            1 => (0..n)
                .map(|j| Wavevector {
                    k: [wavenumber(j, n), 0],
                })
                .collect(),
            _ => (0..n * n)
                .map(|idx| Wavevector {
                    k: [wavenumber(idx / n, n), wavenumber(idx % n, n)],
                })
                .collect(),
        };
        Ok(Arc::new(Self {
            dim,
            n,
            wavevectors,
            forward,
            inverse,
        }))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Points per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Total number of grid points, `N^dim`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    /// Quadrature weight of every node, `(2π/N)^dim`.
    pub fn weight(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Measure of the torus, `(2π)^dim`.
    pub fn volume(&self) -> f64 {
        (2.0 * PI).powi(self.dim as i32)
    }

    /// Node coordinates along one axis, `x_j = 2πj/N`.
    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.spacing() * j as f64).collect()
    }

    /// Coordinates of the node with flat index `idx`.
    pub fn coords(&self, idx: usize) -> [f64; 2] {
        let h = self.spacing();
        match self.dim {
            1 => [h * idx as f64, 0.0],
            _ => [h * (idx / self.n) as f64, h * (idx % self.n) as f64],
        }
    }

    pub fn wavevectors(&self) -> &[Wavevector] {
        &self.wavevectors
    }

    /// Highest wavenumber kept by the 2/3 rule.
    pub fn dealias_cutoff(&self) -> f64 {
        self.n as f64 / 3.0
    }

    pub(crate) fn same(&self, other: &TorusGrid) -> bool {
        self == other
    }

    fn transform(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        plan.process(buf);
        if self.dim == 2 {
            transpose_square(buf, self.n);
            plan.process(buf);
            transpose_square(buf, self.n);
        }
    }

    /// Normalised forward transform of real nodal values.
    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, &self.forward);
        let scale = 1.0 / self.len() as f64;
        buf.iter_mut().for_each(|c| *c *= scale);
        buf
    }

    /// Inverse transform; the imaginary part is discarded.
    pub fn inverse(&self, coeffs: &[Complex64]) -> Vec<f64> {
        let mut buf = coeffs.to_vec();
        self.transform(&mut buf, &self.inverse);
        buf.iter().map(|c| c.re).collect()
    }
}

fn transpose_square(buf: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}

/// A real-valued periodic grid function with a lazily computed spectrum.
#[derive(Clone)]
pub struct Field {
    grid: Arc<TorusGrid>,
    values: Vec<f64>,
    spectral: OnceLock<Vec<Complex64>>,
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Field")
            .field("grid", &self.grid)
            .field("values", &self.values)
            .finish()
    }
}

impl Field {
    pub fn new(grid: &Arc<TorusGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(Self::from_vec(grid, values))
    }

    pub(crate) fn from_vec(grid: &Arc<TorusGrid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self {
            grid: Arc::clone(grid),
            values,
            spectral: OnceLock::new(),
        }
    }

    pub fn zeros(grid: &Arc<TorusGrid>) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Arc<TorusGrid>, c: f64) -> Self {
        Self::from_vec(grid, vec![c; grid.len()])
    }

    /// Samples `f` at every node. In one dimension the second coordinate is 0.
    pub fn from_fn(grid: &Arc<TorusGrid>, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..grid.len()).map(|idx| f(grid.coords(idx))).collect();
        Self::from_vec(grid, values)
    }

    /// Builds a field from Fourier coefficients. Only the Hermitian part
    /// survives since the result is real.
    pub fn from_spectral(grid: &Arc<TorusGrid>, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "expected {} coefficients, got {}",
                grid.len(),
                coeffs.len()
            )));
        }
        Ok(Self::from_vec(grid, grid.inverse(&coeffs)))
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_finite(&self, what: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }

    /// Fourier coefficients, computed on first use.
    pub fn spectral(&self) -> &[Complex64] {
        self.spectral
            .get_or_init(|| self.grid.forward(&self.values))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_vec(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        assert!(
            self.grid.same(&other.grid),
            "fields live on different grids"
        );
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Field::from_vec(&self.grid, values)
    }

    pub fn scale(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    pub fn add_scalar(&self, c: f64) -> Field {
        self.map(|v| v + c)
    }

    /// Multiplies every coefficient by `symbol(k)` without validating input.
    pub(crate) fn multiply(&self, symbol: impl Fn(Wavevector) -> f64) -> Field {
        let coeffs: Vec<Complex64> = self
            .spectral()
            .iter()
            .zip(self.grid.wavevectors())
            .map(|(c, &k)| c * symbol(k))
            .collect();
        Field::from_vec(&self.grid, self.grid.inverse(&coeffs))
    }

    /// Applies the real Fourier multiplier `symbol`. For a real result the
    /// symbol should be even, `symbol(-k) = symbol(k)`.
    pub fn apply_multiplier(&self, symbol: impl Fn(Wavevector) -> f64) -> Result<Field> {
        self.check_finite("multiplier input")?;
        Ok(self.multiply(symbol))
    }

    /// `|D|^p`, with the zero mode sent to zero for `p > 0`.
    pub fn abs_d_pow(&self, p: u32) -> Field {
        if p == 0 {
            return self.clone();
        }
        self.multiply(|k| k.norm().powi(p as i32))
    }

    /// `|D| = G(0)`.
    pub fn abs_d(&self) -> Field {
        self.abs_d_pow(1)
    }

    /// Spectral derivative along `axis`; the Nyquist mode is dropped.
    pub(crate) fn partial(&self, axis: usize) -> Field {
        let half = (self.grid.n / 2) as i64;
        let coeffs: Vec<Complex64> = self
            .spectral()
            .iter()
            .zip(self.grid.wavevectors())
            .map(|(c, k)| {
                let ka = k.k[axis];
                if ka == -half {
                    Complex64::new(0.0, 0.0)
                } else {
                    c * Complex64::new(0.0, ka as f64)
                }
            })
            .collect();
        Field::from_vec(&self.grid, self.grid.inverse(&coeffs))
    }

    pub(crate) fn grad(&self) -> Vec<Field> {
        (0..self.grid.dim).map(|axis| self.partial(axis)).collect()
    }

    /// Exact spectral gradient, one component per axis.
    pub fn gradient(&self) -> Result<Vec<Field>> {
        self.check_finite("gradient input")?;
        Ok(self.grad())
    }

    /// `Δ = -|D|²`.
    pub fn laplacian(&self) -> Field {
        self.multiply(|k| -k.norm_sq())
    }

    /// Uniform-weight quadrature over the torus.
    pub fn integrate(&self) -> f64 {
        self.grid.volume() * self.mean()
    }

    pub fn mean(&self) -> f64 {
        pairwise_sum(&self.values) / self.values.len() as f64
    }

    /// `∫ f g dx` by quadrature.
    pub fn inner(&self, other: &Field) -> f64 {
        assert!(
            self.grid.same(&other.grid),
            "fields live on different grids"
        );
        let products: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .collect();
        self.grid.weight() * pairwise_sum(&products)
    }

    /// `(2π)^dim Σ_k f̂_k conj(ĝ_k)`, the Parseval form of [`Field::inner`].
    pub fn spectral_inner(&self, other: &Field) -> f64 {
        assert!(
            self.grid.same(&other.grid),
            "fields live on different grids"
        );
        let s: f64 = self
            .spectral()
            .iter()
            .zip(other.spectral())
            .map(|(a, b)| (a * b.conj()).re)
            .sum();
        self.grid.volume() * s
    }

    pub fn norm_l2(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn norm_linf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// 2/3 rule: zero every mode with some `|k_i| > N/3`.
    pub fn dealias(&self) -> Field {
        let cutoff = self.grid.dealias_cutoff();
        self.multiply(|k| {
            if k.max_abs() as f64 > cutoff {
                0.0
            } else {
                1.0
            }
        })
    }

    /// Pointwise product followed by 2/3-rule dealiasing.
    pub fn mul_dealiased(&self, other: &Field) -> Field {
        (self * other).dealias()
    }
}

/// Spectral divergence of a vector field with one component per axis.
/// Sum with rounding error growing like `log n` rather than `n`.
fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        v.iter().sum()
    } else {
        let (a, b) = v.split_at(v.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

pub fn divergence(components: &[Field]) -> Result<Field> {
    let first = components.first().ok_or(Error::ComponentCount {
        expected: 1,
        got: 0,
    })?;
    let dim = first.grid.dim;
    if components.len() != dim {
        return Err(Error::ComponentCount {
            expected: dim,
            got: components.len(),
        });
    }
    for c in components {
        if !c.grid.same(&first.grid) {
            return Err(Error::GridMismatch);
        }
        c.check_finite("divergence input")?;
    }
    Ok(div(components))
}

pub(crate) fn div(components: &[Field]) -> Field {
    let mut out = components[0].partial(0);
    for (axis, c) in components.iter().enumerate().skip(1) {
        out = &out + &c.partial(axis);
    }
    out
}

/// Pointwise `u · v`.
pub fn dot(u: &[Field], v: &[Field]) -> Field {
    let mut out = &u[0] * &v[0];
    for (a, b) in u.iter().zip(v).skip(1) {
        out = &out + &(a * b);
    }
    out
}

/// Pointwise `|u|²`.
pub fn norm_sq(u: &[Field]) -> Field {
    dot(u, u)
}

/// Multiplies each component of `u` pointwise by `s`.
pub fn scale_vector(u: &[Field], s: &Field) -> Vec<Field> {
    u.iter().map(|c| c * s).collect()
}

macro_rules! binop {
    ($trait:ident, $method:ident, $op:tt) => {
        impl $trait<&Field> for &Field {
            type Output = Field;
            fn $method(self, rhs: &Field) -> Field {
                self.zip_map(rhs, |a, b| a $op b)
            }
        }
        impl $trait<Field> for Field {
            type Output = Field;
            fn $method(self, rhs: Field) -> Field {
                (&self).$method(&rhs)
            }
        }
        impl $trait<&Field> for Field {
            type Output = Field;
            fn $method(self, rhs: &Field) -> Field {
                (&self).$method(rhs)
            }
        }
        impl $trait<Field> for &Field {
            type Output = Field;
            fn $method(self, rhs: Field) -> Field {
                self.$method(&rhs)
            }
        }
    };
}

binop!(Add, add, +);
binop!(Sub, sub, -);
binop!(Mul, mul, *);

impl Mul<&Field> for f64 {
    type Output = Field;
    fn mul(self, rhs: &Field) -> Field {
        rhs.scale(self)
    }
}

impl Mul<Field> for f64 {
    type Output = Field;
    fn mul(self, rhs: Field) -> Field {
        rhs.scale(self)
    }
}

impl Neg for &Field {
    type Output = Field;
    fn neg(self) -> Field {
        self.scale(-1.0)
    }
}

impl Neg for Field {
    type Output = Field;
    fn neg(self) -> Field {
        self.scale(-1.0)
    }
}
