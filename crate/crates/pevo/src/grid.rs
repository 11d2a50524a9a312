//! Periodic spatial grid, spectral transforms, differentiation and Sobolev norms.
//!
//! The whole line is truncated to the periodic box `[-L, L)` sampled at `N`
//! equispaced nodes `x_j = -L + j·2L/N`. Frequencies are `ξ_k = (π/L)·k` for
//! `k ∈ {-N/2, …, N/2-1}`, stored in FFT order (index `m` carries `k = m` for
//! `m < N/2` and `k = m - N` otherwise, so the Nyquist index `N/2` carries
//! `ξ = -πN/(2L)`).
//!
//! Transform convention (fixed once, used everywhere):
//!
//! * forward: `û_k = Σ_j u_j e^{-iξ_k x_j}`
//! * inverse: `u_j = (1/N) Σ_k û_k e^{iξ_k x_j}`
//! * `‖u‖_s² = (2L/N²) Σ_k ⟨ξ_k⟩_h^{2s} |û_k|²`, so `s = 0` is the quadrature
//!   `L²` norm `(2L/N) Σ_j |u_j|²` (Parseval).

use crate::error::{PevoError, Result};
use num_complex::Complex64;
use rand::Rng;
use rustfft::{Fft, FftPlanner};
use std::fmt;
use std::sync::{Arc, OnceLock};

/// Complex scalar used for every field and symbol sample.
pub type C64 = Complex64;

/// Imaginary unit.
pub const I: C64 = C64::new(0.0, 1.0);

/// Default largest derivative order accepted by [`derivative`].
pub const DEFAULT_MAX_DERIVATIVE: u32 = 16;

/// Regularized bracket `⟨ξ⟩_h = √(h² + ξ²)`.
///
/// Returns a parameter-domain error when `h < 1`.
pub fn bracket(xi: f64, h: f64) -> Result<f64> {
    if !(h >= 1.0) {
        return Err(PevoError::ParameterDomain(format!("bracket requires h ≥ 1, got {h}")));
    }
    Ok(bracket_unchecked(xi, h))
}

/// `√(h² + ξ²)` without the domain check (callers guarantee `h ≥ 1` or use
/// the spatial bracket `⟨x⟩ = ⟨x⟩_1`).
#[inline]
pub fn bracket_unchecked(xi: f64, h: f64) -> f64 {
    xi.hypot(h)
}

struct GridInner {
    n: usize,
    l: f64,
    max_derivative: u32,
    x: Vec<f64>,
    xi: Vec<f64>,
    sign: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    modes: OnceLock<Vec<C64>>,
}

/// Periodic grid with its frequency lattice and cached FFT plans.
///
/// Cloning is cheap (shared, immutable interior); equality compares `(N, L)`.
#[derive(Clone)]
pub struct Grid {
    inner: Arc<GridInner>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid").field("n", &self.inner.n).field("l", &self.inner.l).finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner) || (self.inner.n == other.inner.n && self.inner.l == other.inner.l)
    }
}

impl Grid {
    /// Builds the grid on `[-L, L)` with `N` nodes (`N` even, `N ≥ 4`, `L > 0`).
    pub fn new(n: usize, l: f64) -> Result<Self> {
        Self::with_max_derivative(n, l, DEFAULT_MAX_DERIVATIVE)
    }

    /// As [`Grid::new`], with an explicit cap on derivative orders
    /// (the contracts use `2p` by default).
    pub fn with_max_derivative(n: usize, l: f64, max_derivative: u32) -> Result<Self> {
        if n < 4 || !n.is_multiple_of(2) {
            return Err(PevoError::ParameterDomain(format!("grid size must be even and ≥ 4, got {n}")));
        }
        if !(l > 0.0) || !l.is_finite() {
            return Err(PevoError::ParameterDomain(format!("half-length must be positive and finite, got {l}")));
        }
        let dx = 2.0 * l / n as f64;
        let x = (0..n).map(|j| -l + j as f64 * dx).collect();
        let xi = (0..n).map(|m| std::f64::consts::PI / l * signed_index(m, n) as f64).collect();
        let sign = (0..n).map(|m| if signed_index(m, n).rem_euclid(2) == 0 { 1.0 } else { -1.0 }).collect();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        Ok(Grid { inner: Arc::new(GridInner { n, l, max_derivative, x, xi, sign, fwd, inv, modes: OnceLock::new() }) })
    }

    /// Number of nodes `N`.
    pub fn n(&self) -> usize {
        self.inner.n
    }

    /// Half-length `L` of the box.
    pub fn l(&self) -> f64 {
        self.inner.l
    }

    /// Node spacing `2L/N`.
    pub fn dx(&self) -> f64 {
        2.0 * self.inner.l / self.inner.n as f64
    }

    /// Frequency spacing `π/L`.
    pub fn dxi(&self) -> f64 {
        std::f64::consts::PI / self.inner.l
    }

    /// Largest frequency modulus on the lattice, `πN/(2L)`.
    pub fn xi_max(&self) -> f64 {
        self.dxi() * (self.inner.n / 2) as f64
    }

    /// Largest derivative order accepted by [`derivative`].
    pub fn max_derivative(&self) -> u32 {
        self.inner.max_derivative
    }

    /// Nodes `x_j`.
    pub fn x(&self) -> &[f64] {
        &self.inner.x
    }

    /// Frequencies `ξ` in FFT order.
    pub fn xi(&self) -> &[f64] {
        &self.inner.xi
    }

    /// Index of the Nyquist mode in FFT order.
    pub fn nyquist_index(&self) -> usize {
        self.inner.n / 2
    }

    /// Signed lattice index `k` of FFT-order position `m`.
    pub fn signed_index(&self, m: usize) -> i64 {
        signed_index(m, self.inner.n)
    }

    /// FFT-order positions listed by increasing `ξ` (from `-N/2` to `N/2-1`).
    pub fn sorted_frequency_order(&self) -> Vec<usize> {
        let n = self.inner.n;
        (0..n).map(|i| (i + n / 2) % n).collect()
    }

    /// Forward transform `û_k = Σ_j u_j e^{-iξ_k x_j}` (FFT order).
    pub fn forward(&self, u: &[C64]) -> Vec<C64> {
        debug_assert_eq!(u.len(), self.inner.n);
        let mut buf = u.to_vec();
        self.inner.fwd.process(&mut buf);
        for (b, s) in buf.iter_mut().zip(&self.inner.sign) {
            *b *= *s;
        }
        buf
    }

    /// Inverse transform `u_j = (1/N) Σ_k û_k e^{iξ_k x_j}`.
    pub fn inverse(&self, uhat: &[C64]) -> Vec<C64> {
        debug_assert_eq!(uhat.len(), self.inner.n);
        let scale = 1.0 / self.inner.n as f64;
        let mut buf: Vec<C64> = uhat.iter().zip(&self.inner.sign).map(|(v, s)| v * (s * scale)).collect();
        self.inner.inv.process(&mut buf);
        buf
    }

    /// Applies the Fourier multiplier `m(ξ_k)` (given per FFT-order index).
    pub fn apply_multiplier<F>(&self, u: &[C64], mut m: F) -> Vec<C64>
    where
        F: FnMut(usize, f64) -> C64,
    {
        let mut uhat = self.forward(u);
        for (idx, (v, &xi)) in uhat.iter_mut().zip(&self.inner.xi).enumerate() {
            *v *= m(idx, xi);
        }
        self.inverse(&uhat)
    }

    /// Table `e^{iξ_k x_j}` stored row-major as `[j·N + k]` (built lazily,
    /// shared by all users of the grid).
    pub fn modes(&self) -> &[C64] {
        self.inner.modes.get_or_init(|| {
            let n = self.inner.n;
            let mut table = Vec::with_capacity(n * n);
            for j in 0..n {
                // x_j ξ_k = π k (j - N/2)·(2/N): reduce the integer phase exactly.
                let jj = j as i64 - (n / 2) as i64;
                for m in 0..n {
                    let k = signed_index(m, n);
                    let phase_units = (k * jj).rem_euclid(n as i64) as f64;
                    let theta = 2.0 * std::f64::consts::PI * phase_units / n as f64;
                    table.push(C64::new(theta.cos(), theta.sin()));
                }
            }
            table
        })
    }

    /// Quadrature `L²` inner product `(2L/N) Σ_j u_j conj(v_j)`.
    pub fn inner_product(&self, u: &[C64], v: &[C64]) -> C64 {
        let s: C64 = u.iter().zip(v).map(|(a, b)| a * b.conj()).sum();
        s * self.dx()
    }

    /// Quadrature `L²` norm.
    pub fn l2_norm(&self, u: &[C64]) -> f64 {
        (u.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.dx()).sqrt()
    }

    /// Spectral Sobolev norm of raw samples; see [`sobolev_norm`].
    pub fn sobolev_norm_of(&self, u: &[C64], s: f64, h: f64) -> f64 {
        let uhat = self.forward(u);
        let n = self.inner.n as f64;
        let sum: f64 =
            uhat.iter().zip(&self.inner.xi).map(|(v, &xi)| bracket_unchecked(xi, h).powf(2.0 * s) * v.norm_sqr()).sum();
        (sum * 2.0 * self.inner.l / (n * n)).sqrt()
    }

    /// `D_x^j` of raw samples (multiplier `ξ^j`; odd orders drop the Nyquist mode).
    pub fn derivative_of(&self, u: &[C64], j: u32) -> Vec<C64> {
        if j == 0 {
            return u.to_vec();
        }
        let nyq = self.nyquist_index();
        let odd = j % 2 == 1;
        self.apply_multiplier(
            u,
            |idx, xi| {
                if odd && idx == nyq {
                    C64::new(0.0, 0.0)
                } else {
                    C64::new(xi.powi(j as i32), 0.0)
                }
            },
        )
    }
}

fn signed_index(m: usize, n: usize) -> i64 {
    if m < n / 2 {
        m as i64
    } else {
        m as i64 - n as i64
    }
}

/// Complex samples of a function on a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<C64>,
}

impl Field {
    /// Wraps samples; errors when the length differs from `N` or any entry is
    /// not finite.
    pub fn new(grid: &Grid, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(PevoError::Structural(format!("field has {} samples, grid has {}", values.len(), grid.n())));
        }
        if let Some(j) = values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(PevoError::Input(format!("non-finite field sample at node {j}")));
        }
        Ok(Field { grid: grid.clone(), values })
    }

    /// Wraps samples without the finiteness scan (internal hot paths).
    pub(crate) fn from_raw(grid: &Grid, values: Vec<C64>) -> Self {
        debug_assert_eq!(values.len(), grid.n());
        Field { grid: grid.clone(), values }
    }

    /// The zero field.
    pub fn zeros(grid: &Grid) -> Self {
        Field::from_raw(grid, vec![C64::new(0.0, 0.0); grid.n()])
    }

    /// Samples `f(x_j)`.
    pub fn from_fn<F: Fn(f64) -> C64>(grid: &Grid, f: F) -> Self {
        Field::from_raw(grid, grid.x().iter().map(|&x| f(x)).collect())
    }

    /// Single Fourier mode `e^{iξ_k x}` for signed lattice index `k`.
    pub fn mode(grid: &Grid, k: i64) -> Self {
        let xi = grid.dxi() * k as f64;
        Field::from_fn(grid, |x| C64::new(0.0, xi * x).exp())
    }

    /// Smooth random field: random Fourier coefficients damped by
    /// `exp(-(ξ/width)²)`, normalized to unit `L²` norm.
    pub fn random_smooth<R: Rng + ?Sized>(grid: &Grid, rng: &mut R, width: f64) -> Self {
        let mut uhat: Vec<C64> = grid
            .xi()
            .iter()
            .map(|&xi| {
                let damp = (-(xi / width).powi(2)).exp();
                C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * damp
            })
            .collect();
        uhat[grid.nyquist_index()] = C64::new(0.0, 0.0);
        let mut f = Field::from_raw(grid, grid.inverse(&uhat));
        let nrm = f.l2_norm();
        if nrm > 0.0 {
            f.scale_mut(C64::new(1.0 / nrm, 0.0));
        }
        f
    }

    /// Random field with independent uniform samples in the unit square.
    pub fn random<R: Rng + ?Sized>(grid: &Grid, rng: &mut R) -> Self {
        Field::from_raw(
            grid,
            (0..grid.n()).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect(),
        )
    }

    /// Grid handle.
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Samples `u(x_j)`.
    pub fn values(&self) -> &[C64] {
        &self.values
    }

    /// Mutable samples.
    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.values
    }

    /// Consumes the field, returning its samples.
    pub fn into_values(self) -> Vec<C64> {
        self.values
    }

    /// Forward transform of the samples.
    pub fn spectrum(&self) -> Vec<C64> {
        self.grid.forward(&self.values)
    }

    /// Quadrature `L²` norm.
    pub fn l2_norm(&self) -> f64 {
        self.grid.l2_norm(&self.values)
    }

    /// Largest sample modulus.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `self + a·other`.
    pub fn axpy(&self, a: C64, other: &Field) -> Field {
        Field::from_raw(&self.grid, self.values.iter().zip(&other.values).map(|(u, v)| u + a * v).collect())
    }

    /// `self - other`.
    pub fn sub(&self, other: &Field) -> Field {
        self.axpy(C64::new(-1.0, 0.0), other)
    }

    /// `self + other`.
    pub fn add(&self, other: &Field) -> Field {
        self.axpy(C64::new(1.0, 0.0), other)
    }

    /// `a·self`.
    pub fn scale(&self, a: C64) -> Field {
        Field::from_raw(&self.grid, self.values.iter().map(|u| u * a).collect())
    }

    /// In-place `self *= a`.
    pub fn scale_mut(&mut self, a: C64) {
        for v in &mut self.values {
            *v *= a;
        }
    }

    /// Pointwise product.
    pub fn pointwise_mul(&self, other: &Field) -> Field {
        Field::from_raw(&self.grid, self.values.iter().zip(&other.values).map(|(u, v)| u * v).collect())
    }

    /// Checks that two fields live on the same grid.
    pub fn check_same_grid(&self, other: &Field) -> Result<()> {
        if self.grid != other.grid {
            return Err(PevoError::Structural(format!("grid mismatch: {:?} vs {:?}", self.grid, other.grid)));
        }
        Ok(())
    }
}

/// Sobolev norm `(Σ_k ⟨ξ_k⟩_h^{2s} |û_k|²·2L/N²)^{1/2}`.
pub fn sobolev_norm(u: &Field, s: f64, h: f64) -> Result<f64> {
    bracket(0.0, h)?;
    Ok(u.grid.sobolev_norm_of(&u.values, s, h))
}

/// `D_x^j u` through the exact multiplier `ξ_k^j` (`D = -i∂_x`).
///
/// Odd orders drop the Nyquist coefficient so that real derivatives of real
/// fields stay real. Orders above the grid's cap are a parameter error.
pub fn derivative(u: &Field, j: u32) -> Result<Field> {
    if j > u.grid.max_derivative() {
        return Err(PevoError::ParameterDomain(format!(
            "derivative order {j} exceeds configured maximum {}",
            u.grid.max_derivative()
        )));
    }
    Ok(Field::from_raw(&u.grid, u.grid.derivative_of(&u.values, j)))
}
