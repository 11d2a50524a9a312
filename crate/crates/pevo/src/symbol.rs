//! Sampled pseudo-differential symbols, left (Kohn–Nirenberg) quantization,
//! symbol-class estimates and Gårding-defect checks on quantized matrices.
//!
//! A [`Symbol`] stores `a(x_j, ξ_k)` row-major (`[j·N + k]`, `k` in FFT
//! order). Quantization is
//! `(Au)_j = (1/N) Σ_k a(x_j, ξ_k) û_k e^{iξ_k x_j}`,
//! which is an exact Fourier multiplier when `a` does not depend on `x`.

use crate::error::{PevoError, Result};
use crate::grid::{bracket, bracket_unchecked, Field, Grid, C64};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Sampled symbol `a(x_j, ξ_k)` with its declared order and bracket parameter.
#[derive(Clone, Debug)]
pub struct Symbol {
    grid: Grid,
    h: f64,
    order: f64,
    samples: Vec<C64>,
}

impl Symbol {
    /// Wraps samples (`N²` entries, row-major in `x`, FFT order in `ξ`).
    pub fn new(grid: &Grid, h: f64, order: f64, samples: Vec<C64>) -> Result<Self> {
        bracket(0.0, h)?;
        let n = grid.n();
        if samples.len() != n * n {
            return Err(PevoError::Structural(format!("symbol has {} samples, expected {}", samples.len(), n * n)));
        }
        if let Some(i) = samples.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(PevoError::Input(format!(
                "non-finite symbol sample at (x index {}, ξ index {})",
                i / n,
                i % n
            )));
        }
        Ok(Symbol { grid: grid.clone(), h, order, samples })
    }

    /// Samples `f(x_j, ξ_k)`.
    pub fn from_fn<F>(grid: &Grid, h: f64, order: f64, f: F) -> Result<Self>
    where
        F: Fn(f64, f64) -> C64,
    {
        let mut samples = Vec::with_capacity(grid.n() * grid.n());
        for &x in grid.x() {
            for &xi in grid.xi() {
                samples.push(f(x, xi));
            }
        }
        Symbol::new(grid, h, order, samples)
    }

    /// Grid handle.
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Bracket parameter `h`.
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Declared order `m`.
    pub fn order(&self) -> f64 {
        self.order
    }

    /// Raw samples.
    pub fn samples(&self) -> &[C64] {
        &self.samples
    }

    /// Sample at node `j`, FFT-order frequency index `k`.
    pub fn at(&self, j: usize, k: usize) -> C64 {
        self.samples[j * self.grid.n() + k]
    }

    /// Pointwise map producing a new symbol of the given order.
    pub fn map<F: Fn(C64) -> C64>(&self, order: f64, f: F) -> Symbol {
        Symbol { grid: self.grid.clone(), h: self.h, order, samples: self.samples.iter().map(|&v| f(v)).collect() }
    }

    /// Pointwise sum (orders combine by maximum).
    pub fn add(&self, other: &Symbol) -> Result<Symbol> {
        self.check_grid(other)?;
        Ok(Symbol {
            grid: self.grid.clone(),
            h: self.h,
            order: self.order.max(other.order),
            samples: self.samples.iter().zip(&other.samples).map(|(a, b)| a + b).collect(),
        })
    }

    fn check_grid(&self, other: &Symbol) -> Result<()> {
        if self.grid != other.grid {
            return Err(PevoError::Structural("symbols live on different grids".into()));
        }
        Ok(())
    }

    /// Largest sample modulus.
    pub fn sup_abs(&self) -> f64 {
        self.samples.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Applies the left quantization of `a` to `u`.
pub fn quantize_apply(a: &Symbol, u: &Field) -> Result<Field> {
    if a.grid != *u.grid() {
        return Err(PevoError::Structural("symbol and field live on different grids".into()));
    }
    Ok(Field::from_raw(u.grid(), quantize_raw(a, u.values())))
}

/// Quantization on raw samples (no grid check).
pub(crate) fn quantize_raw(a: &Symbol, u: &[C64]) -> Vec<C64> {
    let g = &a.grid;
    let n = g.n();
    let uhat = g.forward(u);
    let modes = g.modes();
    let inv_n = 1.0 / n as f64;
    let row = |j: usize| -> C64 {
        let base = j * n;
        let mut acc = C64::new(0.0, 0.0);
        for k in 0..n {
            acc += a.samples[base + k] * uhat[k] * modes[base + k];
        }
        acc * inv_n
    };
    if n >= 256 {
        (0..n).into_par_iter().map(row).collect()
    } else {
        (0..n).map(row).collect()
    }
}

/// Dense realization of a quantized symbol.
#[derive(Clone, Debug)]
pub struct OperatorMatrix {
    /// Matrix entries acting on node samples.
    pub entries: DMatrix<C64>,
    /// Declared order of the source symbol.
    pub order: f64,
    /// Bracket parameter of the source symbol.
    pub h: f64,
    /// Half-length `L` of the grid the matrix acts on (fixes the frequency
    /// lattice used by Sobolev weights).
    pub half_length: f64,
    /// Free-form description of the source.
    pub label: String,
}

impl OperatorMatrix {
    /// Wraps a dense matrix.
    pub fn from_matrix(entries: DMatrix<C64>, grid: &Grid, order: f64, h: f64, label: &str) -> Self {
        OperatorMatrix { entries, order, h, half_length: grid.l(), label: label.to_string() }
    }

    /// Matrix–vector product on a field.
    pub fn apply(&self, u: &Field) -> Field {
        let v = &self.entries * DVector::from_column_slice(u.values());
        Field::from_raw(u.grid(), v.as_slice().to_vec())
    }

    /// Dimension.
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Writes the matrix as CSV, one row per line, `re,im` pairs row-major.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for r in 0..self.entries.nrows() {
            let line: Vec<String> = (0..self.entries.ncols())
                .map(|c| {
                    let v = self.entries[(r, c)];
                    format!("{:.17e},{:.17e}", v.re, v.im)
                })
                .collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Dense matrix of the DFT `F[k, j] = e^{-iξ_k x_j}` (FFT-order rows).
pub fn dft_matrix(grid: &Grid) -> DMatrix<C64> {
    let n = grid.n();
    let modes = grid.modes();
    DMatrix::from_fn(n, n, |k, j| modes[j * n + k].conj())
}

/// Columns are `quantize_apply(a, e_c)` for the canonical basis.
pub fn to_matrix(a: &Symbol) -> OperatorMatrix {
    let g = &a.grid;
    let n = g.n();
    let modes = g.modes();
    let inv_n = 1.0 / n as f64;
    // M[j, c] = (1/N) Σ_k a[j,k] e^{iξ_k x_j} e^{-iξ_k x_c}
    let b = DMatrix::from_fn(n, n, |j, k| a.samples[j * n + k] * modes[j * n + k] * inv_n);
    let f = dft_matrix(g);
    OperatorMatrix::from_matrix(b * f, g, a.order, a.h, "quantized symbol")
}

/// How x-derivatives are taken in [`verify_symbol_order_with`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum XDerivative {
    /// Periodic centered 4th-order differences with the grid spacing.
    FiniteDifference,
    /// Spectral differentiation (for smooth periodic-in-x symbols).
    Spectral,
}

/// Table of fitted symbol-class constants `C_{α,β}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SymbolOrderTable {
    /// Declared order `m` used for the weights.
    pub order: f64,
    /// Bracket parameter.
    pub h: f64,
    /// `constants[α][β] = sup |∂_ξ^α D_x^β a| / ⟨ξ⟩_h^{m-α}`.
    pub constants: Vec<Vec<f64>>,
}

impl SymbolOrderTable {
    /// `C_{α,β}`.
    pub fn get(&self, alpha: usize, beta: usize) -> f64 {
        self.constants[alpha][beta]
    }

    /// Largest constant in the table.
    pub fn max(&self) -> f64 {
        self.constants.iter().flatten().cloned().fold(0.0, f64::max)
    }
}

/// Fitted constants with centered 4th-order differences in both variables.
pub fn verify_symbol_order(a: &Symbol, alpha_max: usize, beta_max: usize) -> Result<SymbolOrderTable> {
    verify_symbol_order_with(a, alpha_max, beta_max, XDerivative::FiniteDifference)
}

fn fd4_open(v: &[C64], step: f64) -> Vec<C64> {
    // First derivative on the interior (loses two samples at each end).
    if v.len() < 5 {
        return Vec::new();
    }
    (2..v.len() - 2).map(|i| (v[i - 2] - v[i - 1] * 8.0 + v[i + 1] * 8.0 - v[i + 2]) / (12.0 * step)).collect()
}

fn fd4_periodic(v: &[C64], step: f64) -> Vec<C64> {
    let n = v.len();
    (0..n)
        .map(|i| {
            let at = |o: isize| v[((i as isize + o).rem_euclid(n as isize)) as usize];
            (at(-2) - at(-1) * 8.0 + at(1) * 8.0 - at(2)) / (12.0 * step)
        })
        .collect()
}

/// As [`verify_symbol_order`], choosing the x-differentiation method.
///
/// ξ-derivatives are iterated 4th-order centered differences along the sorted
/// frequency lattice (only interior samples enter the sup); the request is a
/// resolution error when fewer than one interior frequency survives.
pub fn verify_symbol_order_with(
    a: &Symbol,
    alpha_max: usize,
    beta_max: usize,
    xd: XDerivative,
) -> Result<SymbolOrderTable> {
    if alpha_max > 7 || beta_max > 7 {
        return Err(PevoError::ParameterDomain("derivative orders above 7 are not supported".into()));
    }
    let g = &a.grid;
    let n = g.n();
    if 4 * alpha_max + 1 > n || (xd == XDerivative::FiniteDifference && 5 > n) {
        return Err(PevoError::Numeric(format!("grid with N = {n} cannot resolve ξ-derivatives of order {alpha_max}")));
    }
    let order = g.sorted_frequency_order();
    let xi_sorted: Vec<f64> = order.iter().map(|&k| g.xi()[k]).collect();
    let dxi = g.dxi();
    let dx = g.dx();

    // x-derivative tables D_x^β a for β = 0..=beta_max, stored [j][sorted k].
    let mut dx_tables: Vec<Vec<Vec<C64>>> = Vec::with_capacity(beta_max + 1);
    let base: Vec<Vec<C64>> = (0..n).map(|j| order.iter().map(|&k| a.at(j, k)).collect()).collect();
    dx_tables.push(base);
    for beta in 1..=beta_max {
        let prev = &dx_tables[beta - 1];
        let mut next = vec![vec![C64::new(0.0, 0.0); n]; n];
        for kk in 0..n {
            let col: Vec<C64> = (0..n).map(|j| prev[j][kk]).collect();
            let d = match xd {
                XDerivative::FiniteDifference => fd4_periodic(&col, dx),
                XDerivative::Spectral => g.derivative_of(&col, 1),
            };
            for j in 0..n {
                // D_x = -i ∂_x for the finite-difference path; the spectral
                // path already applies the multiplier ξ.
                next[j][kk] = match xd {
                    XDerivative::FiniteDifference => d[j] * C64::new(0.0, -1.0),
                    XDerivative::Spectral => d[j],
                };
            }
        }
        dx_tables.push(next);
    }

    let mut constants = vec![vec![0.0; beta_max + 1]; alpha_max + 1];
    for (beta, table) in dx_tables.iter().enumerate() {
        for j in 0..n {
            let mut row = table[j].clone();
            let mut offset = 0usize;
            for alpha in 0..=alpha_max {
                if alpha > 0 {
                    row = fd4_open(&row, dxi);
                    offset += 2;
                }
                for (i, v) in row.iter().enumerate() {
                    let xi = xi_sorted[i + offset];
                    let w = bracket_unchecked(xi, a.h).powf(a.order - alpha as f64);
                    let r = v.norm() / w;
                    if r > constants[alpha][beta] {
                        constants[alpha][beta] = r;
                    }
                }
            }
        }
    }
    Ok(SymbolOrderTable { order: a.order, h: a.h, constants })
}

/// Entries `(α, β, fine/coarse)` whose constant grew by more than `tol`
/// (relative) between two resolutions — the divergence flag of the contract.
pub fn compare_refinement(coarse: &SymbolOrderTable, fine: &SymbolOrderTable, tol: f64) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for (alpha, row) in coarse.constants.iter().enumerate() {
        for (beta, &c) in row.iter().enumerate() {
            if let Some(&f) = fine.constants.get(alpha).and_then(|r| r.get(beta)) {
                let ratio = if c > 0.0 {
                    f / c
                } else if f > 0.0 {
                    f64::INFINITY
                } else {
                    1.0
                };
                if ratio > 1.0 + tol {
                    out.push((alpha, beta, ratio));
                }
            }
        }
    }
    out
}

/// Minimum eigenvalue `c*` of `W^{-1/2}·sym(A)·W^{-1/2}` where `sym(A)` is the
/// Hermitian part and `W` the quadratic form of `‖·‖_{σ'}`, `σ' = order_shift`.
pub fn garding_defect(a: &OperatorMatrix, order_shift: f64) -> Result<f64> {
    let mask = vec![true; a.dim()];
    garding_defect_on(a, order_shift, &mask)
}

/// [`garding_defect`] restricted to fields supported on the nodes where
/// `support` is true (the principal compression of the quadratic forms).
pub fn garding_defect_on(a: &OperatorMatrix, order_shift: f64, support: &[bool]) -> Result<f64> {
    let n = a.dim();
    if a.entries.ncols() != n || support.len() != n {
        return Err(PevoError::Structural("garding_defect needs a square matrix and a full mask".into()));
    }
    let idx: Vec<usize> = (0..n).filter(|&i| support[i]).collect();
    let m = idx.len();
    if m == 0 {
        return Err(PevoError::Structural("empty support for garding_defect".into()));
    }
    let herm = DMatrix::from_fn(m, m, |r, c| {
        let (i, j) = (idx[r], idx[c]);
        (a.entries[(i, j)] + a.entries[(j, i)].conj()) * 0.5
    });
    let target = if order_shift == 0.0 {
        herm
    } else {
        // W restricted to the support: G = F_S^* D F_S / N with D = ⟨ξ⟩^{2σ'}.
        let grid = Grid::new(n, a.half_length)?;
        let modes = grid.modes();
        let weights: Vec<f64> =
            grid.xi().iter().map(|&xi| bracket_unchecked(xi, a.h).powf(2.0 * order_shift)).collect();
        let gram = DMatrix::from_fn(m, m, |r, c| {
            let (i, j) = (idx[r], idx[c]);
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..n {
                acc += modes[i * n + k] * modes[j * n + k].conj() * weights[k];
            }
            acc / n as f64
        });
        let chol = nalgebra::Cholesky::new(gram)
            .ok_or_else(|| PevoError::Numeric("Sobolev weight Gram matrix is not positive definite".into()))?;
        let lower = chol.l();
        let y =
            lower.solve_lower_triangular(&herm).ok_or_else(|| PevoError::Numeric("triangular solve failed".into()))?;
        let z = lower
            .solve_lower_triangular(&y.adjoint())
            .ok_or_else(|| PevoError::Numeric("triangular solve failed".into()))?;
        let z = z.adjoint();
        (&z + z.adjoint()) * C64::new(0.5, 0.0)
    };
    min_hermitian_eigenvalue(target)
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_hermitian_eigenvalue(h: DMatrix<C64>) -> Result<f64> {
    let norm = h.norm();
    let eig = nalgebra::SymmetricEigen::try_new(h, 1e-14, 10_000).ok_or_else(|| {
        PevoError::Numeric(format!("Hermitian eigen-solver did not converge (Frobenius norm {norm:.3e})"))
    })?;
    Ok(eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min))
}
