//! The change-of-variable symbols `λ_{p-k}`, `Λ = Σ_k λ_{p-k}`, the operators
//! `e^{±Λ}`, the truncated Neumann inverse of `e^Λ`, the symbol-level
//! conjugated generator, and the automatic tuning of `M_{p-k}` and `h`.
//!
//! For `k = 1..p-1`,
//!
//! `λ_{p-k}(x,ξ) = M_{p-k} ω(ξ/h) ⟨ξ⟩_h^{-k+1} ∫_0^x ⟨y⟩^{-(p-k)/(p-1)} ψ(⟨y⟩/⟨ξ⟩_h^{p-1}) dy`.
//!
//! On the periodic box the symbol is multiplied by a boundary taper `b(x)`
//! (1 on the interior, 0 at `±L`, smooth in between) so that `Λ(·,ξ)` is
//! periodic; the construction of the whole-line symbol is untouched on the
//! interior, which is also where Gårding defects are measured.

use crate::coefficients::CoefficientSet;
use crate::error::{PevoError, Result};
use crate::grid::{bracket, bracket_unchecked, Field, Grid, C64, I};
use crate::jet::{glue, glue_jet, Jet};
use crate::linear::GeneratorCoefficients;
use crate::symbol::{
    garding_defect_on, quantize_raw, to_matrix, verify_symbol_order_with, Symbol, SymbolOrderTable, XDerivative,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

/// Boundary taper `b(x) = 1 − glue((|x| − start·L)/((end − start)·L))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct BoundaryTaper {
    /// Fraction of `L` where the taper starts (`b = 1` inside).
    pub start: f64,
    /// Fraction of `L` where the taper reaches zero.
    pub end: f64,
}

impl Default for BoundaryTaper {
    fn default() -> Self {
        BoundaryTaper { start: 0.75, end: 0.95 }
    }
}

/// The cutoff pair `(ω, ψ)` and the boundary taper.
///
/// * `ω(y) = 0` for `|y| ≤ 1`, `ω(y) = sign(y)^{p-1}` for `|y| ≥ 2`, joined by
///   the `exp(−1/t)` smoothstep on `1 < |y| < 2`;
/// * `ψ(y) = 1` for `|y| ≤ ½`, `ψ(y) = 0` for `|y| ≥ 1`, same glue.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffPair {
    /// Evolution order (fixes the far-field value of `ω`).
    pub p: u32,
    /// Periodizing taper; `None` keeps the untapered whole-line formula.
    pub taper: Option<BoundaryTaper>,
}

impl CutoffPair {
    /// Standard pair with the default taper.
    pub fn new(p: u32) -> Self {
        CutoffPair { p, taper: Some(BoundaryTaper::default()) }
    }

    /// Pair without taper.
    pub fn untapered(p: u32) -> Self {
        CutoffPair { p, taper: None }
    }

    /// `ω(y)`.
    pub fn omega(&self, y: f64) -> f64 {
        let far = if self.p.is_multiple_of(2) && y < 0.0 { -1.0 } else { 1.0 };
        far * glue(y.abs() - 1.0)
    }

    /// `ψ(y)`.
    pub fn psi(&self, y: f64) -> f64 {
        1.0 - glue(2.0 * y.abs() - 1.0)
    }

    /// `ψ` on jets (argument assumed positive, as for `⟨y⟩/R`).
    pub fn psi_jet(&self, y: &Jet) -> Jet {
        (-&glue_jet(&y.scale(2.0).add_scalar(-1.0))).add_scalar(1.0)
    }

    /// Taper `b(x)` on a box of half-length `l`.
    pub fn taper(&self, x: f64, l: f64) -> f64 {
        match self.taper {
            None => 1.0,
            Some(t) => 1.0 - glue((x.abs() - t.start * l) / ((t.end - t.start) * l)),
        }
    }

    /// Taper on jets.
    pub fn taper_jet(&self, x: &Jet, l: f64) -> Jet {
        match self.taper {
            None => Jet::constant(1.0, x.order()),
            Some(t) => {
                let ax = x.abs();
                (-&glue_jet(&ax.add_scalar(-t.start * l).scale(1.0 / ((t.end - t.start) * l)))).add_scalar(1.0)
            }
        }
    }

    /// Nodes where the taper is identically one (the interior window).
    pub fn interior_mask(&self, grid: &Grid) -> Vec<bool> {
        let l = grid.l();
        grid.x()
            .iter()
            .map(|&x| match self.taper {
                None => true,
                Some(t) => x.abs() <= t.start * l,
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Quadrature
// ---------------------------------------------------------------------------

const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

fn gl8<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    GL_NODES.iter().zip(GL_WEIGHTS).map(|(&t, w)| w * f(c + r * t)).sum::<f64>() * r
}

/// Adaptive 8-point Gauss–Legendre: accepts a cell when the whole-cell value
/// and the two-half value agree; errors after the recursion budget.
fn adaptive_gl<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> Result<f64> {
    let whole = gl8(f, a, b);
    let m = 0.5 * (a + b);
    let halves = gl8(f, a, m) + gl8(f, m, b);
    if (whole - halves).abs() <= tol.max(1e-15 * halves.abs()) {
        return Ok(halves);
    }
    if depth == 0 {
        return Err(PevoError::Numeric(format!(
            "λ quadrature did not converge on [{a}, {b}] (two-level difference {:.3e})",
            (whole - halves).abs()
        )));
    }
    Ok(adaptive_gl(f, a, m, 0.5 * tol, depth - 1)? + adaptive_gl(f, m, b, 0.5 * tol, depth - 1)?)
}

/// Public adaptive quadrature (used as an oracle in tests).
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    adaptive_gl(&f, a, b, tol, 40)
}

// ---------------------------------------------------------------------------
// λ levels
// ---------------------------------------------------------------------------

/// One level `λ_{p-k}` in factored form: `fac(ξ)·I(x, ξ)·b(x)`.
#[derive(Clone, Debug)]
struct Level {
    /// Decay exponent `(p-k)/(p-1)` of the integrand.
    q: f64,
    /// Per FFT-order column: `M ω(ξ/h) ⟨ξ⟩_h^{-k+1}`.
    fac: Vec<f64>,
    /// Per column: `R = ⟨ξ⟩_h^{p-1}`.
    radius: Vec<f64>,
    /// `I(x_j, ξ_col)` row-major (zero for inactive columns).
    integral: Vec<f64>,
}

fn build_level(k: u32, m: f64, h: f64, grid: &Grid, cutoffs: &CutoffPair) -> Result<Level> {
    let p = cutoffs.p;
    if k == 0 || k >= p {
        return Err(PevoError::ParameterDomain(format!("level k = {k} outside 1..p-1 for p = {p}")));
    }
    bracket(0.0, h)?;
    if !(m >= 0.0) || !m.is_finite() {
        return Err(PevoError::ParameterDomain(format!("M_{{p-k}} must be ≥ 0, got {m}")));
    }
    let n = grid.n();
    let q = (p - k) as f64 / (p - 1) as f64;
    let mut fac = vec![0.0; n];
    let mut radius = vec![0.0; n];
    for (col, &xi) in grid.xi().iter().enumerate() {
        let b = bracket_unchecked(xi, h);
        fac[col] = m * cutoffs.omega(xi / h) * b.powi(-(k as i32) + 1);
        radius[col] = b.powi((p - 1) as i32);
    }
    let mut integral = vec![0.0; n * n];
    let x = grid.x();
    let centre = n / 2; // x = 0 is a node
                        // Columns sharing |ξ| share the integral; cache by the radius bits.
    let mut cache: Vec<(u64, Vec<f64>)> = Vec::new();
    for col in 0..n {
        if fac[col] == 0.0 {
            continue;
        }
        let r = radius[col];
        let key = r.to_bits();
        let column = if let Some((_, c)) = cache.iter().find(|(k, _)| *k == key) {
            c.clone()
        } else {
            let f = |y: f64| {
                let by = bracket_unchecked(y, 1.0);
                by.powf(-q) * cutoffs.psi(by / r)
            };
            let mut c = vec![0.0; n];
            for j in centre + 1..n {
                c[j] = c[j - 1] + adaptive_gl(&f, x[j - 1], x[j], 1e-14, 30)?;
            }
            for j in (0..centre).rev() {
                c[j] = c[j + 1] - adaptive_gl(&f, x[j], x[j + 1], 1e-14, 30)?;
            }
            cache.push((key, c.clone()));
            c
        };
        for j in 0..n {
            integral[j * n + col] = column[j];
        }
    }
    Ok(Level { q, fac, radius, integral })
}

impl Level {
    fn value(&self, grid: &Grid, cutoffs: &CutoffPair, j: usize, col: usize) -> f64 {
        let n = grid.n();
        self.fac[col] * self.integral[j * n + col] * cutoffs.taper(grid.x()[j], grid.l())
    }

    /// Taylor jet in `x` of `λ_{p-k}(·, ξ_col)` at node `j`, order `order`.
    fn jet(&self, grid: &Grid, cutoffs: &CutoffPair, j: usize, col: usize, order: usize) -> Jet {
        let n = grid.n();
        if self.fac[col] == 0.0 {
            return Jet::constant(0.0, order);
        }
        let x0 = grid.x()[j];
        let xj = Jet::variable(x0, order.saturating_sub(1));
        // integrand g(y) = ⟨y⟩^{-q} ψ(⟨y⟩/R) as a jet of order `order - 1`
        let by = (&xj * &xj).add_scalar(1.0).sqrt();
        let g = &by.powf(-self.q) * &cutoffs.psi_jet(&by.scale(1.0 / self.radius[col]));
        let mut c = vec![0.0; order + 1];
        c[0] = self.integral[j * n + col];
        for i in 1..=order {
            c[i] = g.coeffs()[i - 1] / i as f64;
        }
        let ijet = Jet::from_coeffs(c);
        let b = cutoffs.taper_jet(&Jet::variable(x0, order), grid.l());
        (&ijet * &b).scale(self.fac[col])
    }
}

/// Builds `λ_{p-k}` on the grid (declared order 0: it is `O(log⟨ξ⟩)` for
/// `k = 1` and bounded for `k ≥ 2`).
pub fn build_lambda(k: u32, m: f64, h: f64, grid: &Grid, cutoffs: &CutoffPair) -> Result<Symbol> {
    let level = build_level(k, m, h, grid, cutoffs)?;
    level_symbol(&level, h, grid, cutoffs)
}

fn level_symbol(level: &Level, h: f64, grid: &Grid, cutoffs: &CutoffPair) -> Result<Symbol> {
    let n = grid.n();
    let mut s = Vec::with_capacity(n * n);
    for j in 0..n {
        for col in 0..n {
            s.push(C64::new(level.value(grid, cutoffs, j, col), 0.0));
        }
    }
    Symbol::new(grid, h, 0.0, s)
}

// ---------------------------------------------------------------------------
// Transform pack
// ---------------------------------------------------------------------------

struct PackMatrices {
    e_plus: DMatrix<C64>,
    e_minus: DMatrix<C64>,
    lu: nalgebra::LU<C64, nalgebra::Dyn, nalgebra::Dyn>,
}

/// Λ, its levels, `e^{±Λ}`, the Neumann data and the measured order `δ`.
pub struct TransformPack {
    p: u32,
    m: Vec<f64>,
    h: f64,
    grid: Grid,
    cutoffs: CutoffPair,
    levels: Vec<Level>,
    lambdas: Vec<Symbol>,
    lambda: Symbol,
    exp_lambda: Symbol,
    exp_neg_lambda: Symbol,
    neumann_order: usize,
    delta: f64,
    delta_c: f64,
    matrices: OnceLock<PackMatrices>,
    neumann_norm: OnceLock<f64>,
}

impl std::fmt::Debug for TransformPack {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TransformPack")
            .field("p", &self.p)
            .field("m", &self.m)
            .field("h", &self.h)
            .field("neumann_order", &self.neumann_order)
            .field("delta", &self.delta)
            .finish()
    }
}

/// Serializable pack summary.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PackSummary {
    /// Evolution order.
    pub p: u32,
    /// `(M_{p-1}, …, M_1)`.
    pub m: Vec<f64>,
    /// Bracket parameter.
    pub h: f64,
    /// Fitted order `δ` of `e^Λ`.
    pub delta: f64,
    /// Fitted constant `C` in `|Λ| ≤ C + δ log⟨ξ⟩_h`.
    pub delta_constant: f64,
    /// Loss of derivatives `σ = 2δ`.
    pub sigma: f64,
    /// Neumann truncation order.
    pub neumann_order: usize,
    /// Operator norm of `r = I − e^{-Λ}e^{Λ}`.
    pub neumann_norm: f64,
    /// Certified tail bound `‖r‖^{n+1}/(1−‖r‖)` (infinite when `‖r‖ ≥ 1`).
    pub tail_bound: f64,
}

impl TransformPack {
    /// Evolution order.
    pub fn p(&self) -> u32 {
        self.p
    }
    /// `(M_{p-1}, …, M_1)`.
    pub fn m(&self) -> &[f64] {
        &self.m
    }
    /// Bracket parameter.
    pub fn h(&self) -> f64 {
        self.h
    }
    /// Grid.
    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    /// Cutoffs.
    pub fn cutoffs(&self) -> &CutoffPair {
        &self.cutoffs
    }
    /// `λ_{p-k}` for `k = 1..p-1` (index `k-1`).
    pub fn lambdas(&self) -> &[Symbol] {
        &self.lambdas
    }
    /// `Λ`.
    pub fn lambda(&self) -> &Symbol {
        &self.lambda
    }
    /// `e^Λ`.
    pub fn exp_lambda(&self) -> &Symbol {
        &self.exp_lambda
    }
    /// `e^{-Λ}`.
    pub fn exp_neg_lambda(&self) -> &Symbol {
        &self.exp_neg_lambda
    }
    /// Neumann order.
    pub fn neumann_order(&self) -> usize {
        self.neumann_order
    }
    /// Fitted `δ`.
    pub fn delta(&self) -> f64 {
        self.delta
    }
    /// Fitted `C` of the log bound.
    pub fn delta_constant(&self) -> f64 {
        self.delta_c
    }
    /// `σ = 2δ`.
    pub fn sigma(&self) -> f64 {
        2.0 * self.delta
    }
    /// True when every `M` vanishes.
    pub fn is_trivial(&self) -> bool {
        self.m.iter().all(|&m| m == 0.0)
    }

    /// Summary for reports (computes the Neumann norm if needed).
    pub fn summary(&self) -> PackSummary {
        let nn = estimate_neumann_norm(self);
        PackSummary {
            p: self.p,
            m: self.m.clone(),
            h: self.h,
            delta: self.delta,
            delta_constant: self.delta_c,
            sigma: self.sigma(),
            neumann_order: self.neumann_order,
            neumann_norm: nn,
            tail_bound: tail_bound(nn, self.neumann_order),
        }
    }

    fn matrices(&self) -> &PackMatrices {
        self.matrices.get_or_init(|| {
            let e_plus = to_matrix(&self.exp_lambda).entries;
            let e_minus = to_matrix(&self.exp_neg_lambda).entries;
            let lu = e_plus.clone().lu();
            PackMatrices { e_plus, e_minus, lu }
        })
    }

    /// Dense `e^Λ` (quantized).
    pub fn exp_lambda_matrix(&self) -> &DMatrix<C64> {
        &self.matrices().e_plus
    }

    /// Dense `e^{-Λ}` (quantized).
    pub fn exp_neg_lambda_matrix(&self) -> &DMatrix<C64> {
        &self.matrices().e_minus
    }

    /// Applies `e^{Λ(x,D)}`.
    pub fn apply_exp_lambda(&self, u: &Field) -> Result<Field> {
        crate::symbol::quantize_apply(&self.exp_lambda, u)
    }

    /// Applies `e^{-Λ(x,D)}`.
    pub fn apply_exp_neg_lambda(&self, u: &Field) -> Result<Field> {
        crate::symbol::quantize_apply(&self.exp_neg_lambda, u)
    }

    /// Exact discrete inverse `(e^Λ)^{-1}u` by dense LU (raw samples).
    pub(crate) fn solve_dense_raw(&self, u: &[C64]) -> Result<Vec<C64>> {
        let b = DVector::from_column_slice(u);
        let x = self.matrices().lu.solve(&b).ok_or_else(|| PevoError::Numeric("e^Λ is singular".into()))?;
        Ok(x.as_slice().to_vec())
    }

    /// Taylor jet of `λ_{p-k}` (level index `k-1`) at node `j`, column `col`.
    fn level_jet(&self, level: usize, j: usize, col: usize, order: usize) -> Jet {
        self.levels[level].jet(&self.grid, &self.cutoffs, j, col, order)
    }
}

/// Tail bound `ρ^{n+1}/(1−ρ)` of the truncated Neumann series.
pub fn tail_bound(rho: f64, order: usize) -> f64 {
    if rho >= 1.0 {
        f64::INFINITY
    } else {
        rho.powi(order as i32 + 1) / (1.0 - rho)
    }
}

/// Builds the pack: levels, `Λ`, `e^{±Λ}` and the fitted `δ`.
///
/// `m` lists `(M_{p-1}, …, M_1)`.
pub fn build_pack(
    p: u32,
    m: &[f64],
    h: f64,
    grid: &Grid,
    cutoffs: &CutoffPair,
    neumann_order: usize,
) -> Result<TransformPack> {
    if p < 2 {
        return Err(PevoError::ParameterDomain(format!("p must be ≥ 2, got {p}")));
    }
    if cutoffs.p != p {
        return Err(PevoError::Structural(format!("cutoffs built for p = {}, pack requested for p = {p}", cutoffs.p)));
    }
    if m.len() != (p - 1) as usize {
        return Err(PevoError::ParameterDomain(format!("expected {} constants M, got {}", p - 1, m.len())));
    }
    if let Some(bad) = m.iter().find(|&&v| !(v >= 0.0)) {
        return Err(PevoError::ParameterDomain(format!("constants M must be ≥ 0, got {bad}")));
    }
    bracket(0.0, h)?;
    let n = grid.n();
    let mut levels = Vec::with_capacity(m.len());
    for (idx, &mk) in m.iter().enumerate() {
        levels.push(build_level(idx as u32 + 1, mk, h, grid, cutoffs)?);
    }
    let lambdas: Vec<Symbol> = levels.iter().map(|lv| level_symbol(lv, h, grid, cutoffs)).collect::<Result<_>>()?;
    let mut total = vec![C64::new(0.0, 0.0); n * n];
    for s in &lambdas {
        for (t, v) in total.iter_mut().zip(s.samples()) {
            *t += v;
        }
    }
    let max_lambda = total.iter().map(|v| v.re.abs()).fold(0.0, f64::max);
    if max_lambda > 700.0 {
        return Err(PevoError::ParameterDomain(format!(
            "e^Λ overflows (max |Λ| = {max_lambda:.1}); increase h or decrease M"
        )));
    }
    let lambda = Symbol::new(grid, h, 0.0, total)?;
    let (delta, delta_c) = fit_log_order(&lambda);
    let exp_lambda = lambda.map(delta, |v| v.exp());
    let exp_neg_lambda = lambda.map(delta, |v| (-v).exp());
    Ok(TransformPack {
        p,
        m: m.to_vec(),
        h,
        grid: grid.clone(),
        cutoffs: *cutoffs,
        levels,
        lambdas,
        lambda,
        exp_lambda,
        exp_neg_lambda,
        neumann_order,
        delta,
        delta_c,
        matrices: OnceLock::new(),
        neumann_norm: OnceLock::new(),
    })
}

/// Fits `sup_x |Λ(x,ξ)| ≤ C + δ log⟨ξ⟩_h`: least-squares slope `δ ≥ 0` over
/// the columns where the frequency cutoff is fully on (`|ξ| ≥ 2h`; all active
/// columns if fewer than two are), then the smallest `C` making it a bound
/// at every column.
fn fit_log_order(lambda: &Symbol) -> (f64, f64) {
    let g = lambda.grid();
    let n = g.n();
    let h = lambda.h();
    let mut pts = Vec::new();
    let mut full = Vec::new();
    for (col, &xi) in g.xi().iter().enumerate() {
        let s = (0..n).map(|j| lambda.at(j, col).norm()).fold(0.0, f64::max);
        let pt = (bracket_unchecked(xi, h).ln(), s);
        pts.push(pt);
        if s > 0.0 && xi.abs() >= 2.0 * h {
            full.push(pt);
        }
    }
    let active: Vec<(f64, f64)> =
        if full.len() >= 2 { full } else { pts.iter().cloned().filter(|p| p.1 > 0.0).collect() };
    let slope = |pts: &[(f64, f64)]| -> f64 {
        if pts.len() < 2 {
            return 0.0;
        }
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        if sxx > 1e-14 {
            (sxy / sxx).max(0.0)
        } else {
            0.0
        }
    };
    let delta = slope(&active);
    let c = pts.iter().map(|p| p.1 - delta * p.0).fold(0.0, f64::max);
    (delta, c)
}

/// How [`invert_exp_lambda`] realizes the inverse.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InverseMode {
    /// Truncated Neumann series `(Σ_{n≤K} r^n) e^{-Λ}`, `r = I − e^{-Λ}e^{Λ}`.
    Neumann,
    /// Dense LU solve of `e^Λ x = u`.
    Dense,
}

/// Applies the inverse of `e^{Λ(x,D)}` to `u`.
///
/// The Neumann path requires the certified norm `‖r‖ < 1`.
pub fn invert_exp_lambda(pack: &TransformPack, u: &Field, mode: InverseMode) -> Result<Field> {
    if *u.grid() != pack.grid {
        return Err(PevoError::Structural("field and pack live on different grids".into()));
    }
    match mode {
        InverseMode::Dense => Ok(Field::from_raw(u.grid(), pack.solve_dense_raw(u.values())?)),
        InverseMode::Neumann => {
            if pack.is_trivial() {
                return Ok(u.clone());
            }
            let nr = estimate_neumann_norm(pack);
            if nr >= 1.0 {
                return Err(PevoError::Certification { norm: nr, limit: 1.0 });
            }
            let y = quantize_raw(&pack.exp_neg_lambda, u.values());
            // Horner: z ← y + r z, with r z = z − e^{-Λ}(e^{Λ} z).
            let mut z = y.clone();
            for _ in 0..pack.neumann_order {
                let ez = quantize_raw(&pack.exp_lambda, &z);
                let eez = quantize_raw(&pack.exp_neg_lambda, &ez);
                z = y.iter().zip(z.iter().zip(&eez)).map(|(yv, (zv, ev))| yv + zv - ev).collect();
            }
            Ok(Field::from_raw(u.grid(), z))
        }
    }
}

/// Operator norm of `r = I − e^{-Λ}e^{Λ}` by power iteration on `r*r`
/// (deterministic start vector). Cached per pack.
pub fn estimate_neumann_norm(pack: &TransformPack) -> f64 {
    *pack.neumann_norm.get_or_init(|| {
        if pack.is_trivial() {
            return 0.0;
        }
        let mats = pack.matrices();
        let n = pack.grid.n();
        let r = DMatrix::<C64>::identity(n, n) - &mats.e_minus * &mats.e_plus;
        power_norm(&r)
    })
}

/// Largest singular value of `a` by power iteration on `a*a`.
pub fn power_norm(a: &DMatrix<C64>) -> f64 {
    let n = a.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v = DVector::from_fn(n, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    let nv = v.norm();
    if nv == 0.0 {
        return 0.0;
    }
    v /= C64::new(nv, 0.0);
    let ah = a.adjoint();
    let mut est = 0.0;
    for _ in 0..2000 {
        let w = &ah * (a * &v);
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        let next = nw.sqrt();
        v = w / C64::new(nw, 0.0);
        if (next - est).abs() <= 1e-12 * next {
            est = next;
            break;
        }
        est = next;
    }
    est
}

// ---------------------------------------------------------------------------
// Pointwise symbol bounds and derivative fits
// ---------------------------------------------------------------------------

/// Largest violation of the pointwise bounds on `λ_{p-k}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LevelBoundCheck {
    /// Level index `k`.
    pub k: u32,
    /// `max(|λ_{p-k}| − bound)` over all samples (≤ 0 means the bound holds).
    pub max_excess: f64,
    /// Largest `|λ_{p-k}|/bound` over samples with a positive bound.
    pub max_ratio: f64,
}

/// Checks `|λ_{p-1}| ≤ M(log 2 + (p−1) log⟨ξ⟩_h)` and, for `k ≥ 2`,
/// `|λ_{p-k}| ≤ M (p−1)/(k−1) ⟨x⟩^{(k−1)/(p−1)} ⟨ξ⟩_h^{−k+1}` on `E`
/// (beyond `E` the integrand vanishes, so `λ` is frozen at its value on the
/// boundary of `E`, where the bound is evaluated).
pub fn check_lambda_bounds(pack: &TransformPack) -> Vec<LevelBoundCheck> {
    let g = &pack.grid;
    let n = g.n();
    let p = pack.p as f64;
    let mut out = Vec::new();
    for (idx, s) in pack.lambdas.iter().enumerate() {
        let k = idx as u32 + 1;
        let m = pack.m[idx];
        let mut max_excess = f64::NEG_INFINITY;
        let mut max_ratio: f64 = 0.0;
        for j in 0..n {
            let x = g.x()[j];
            for (col, &xi) in g.xi().iter().enumerate() {
                let bxi = bracket_unchecked(xi, pack.h);
                let bound = if k == 1 {
                    m * (2f64.ln() + (p - 1.0) * bxi.ln())
                } else {
                    let radius = bxi.powf(p - 1.0);
                    let bx = bracket_unchecked(x, 1.0).min(radius);
                    m * (p - 1.0) / (k as f64 - 1.0) * bx.powf((k as f64 - 1.0) / (p - 1.0)) * bxi.powi(-(k as i32) + 1)
                };
                let v = s.at(j, col).norm();
                max_excess = max_excess.max(v - bound);
                if bound > 0.0 {
                    max_ratio = max_ratio.max(v / bound);
                }
            }
        }
        out.push(LevelBoundCheck { k, max_excess, max_ratio });
    }
    out
}

/// Fitted `δ_{α,β} = sup |∂_ξ^α D_x^β Λ| ⟨ξ⟩_h^{α}` (finite differences).
pub fn fit_lambda_derivative_bounds(
    pack: &TransformPack,
    alpha_max: usize,
    beta_max: usize,
) -> Result<SymbolOrderTable> {
    verify_symbol_order_with(&pack.lambda, alpha_max, beta_max, XDerivative::FiniteDifference)
}

/// Fitted `C_β = sup |D_x^β e^{±Λ}| ⟨x⟩^β e^{∓Λ}` over the interior window
/// (exact x-derivatives through jets). Index `β = 0..=beta_max`.
pub fn fit_exp_decay_constants(pack: &TransformPack, beta_max: usize) -> Vec<f64> {
    let g = &pack.grid;
    let n = g.n();
    let mask = pack.cutoffs.interior_mask(g);
    let mut out = vec![0.0f64; beta_max + 1];
    for j in 0..n {
        if !mask[j] {
            continue;
        }
        let bx = bracket_unchecked(g.x()[j], 1.0);
        for col in 0..n {
            for sign in [1.0, -1.0] {
                let mut total = Jet::constant(0.0, beta_max);
                for lv in 0..pack.levels.len() {
                    total = &total + &pack.level_jet(lv, j, col, beta_max);
                }
                let mut c = total.coeffs().to_vec();
                c[0] = 0.0;
                let e = Jet::from_coeffs(c).scale(sign).exp();
                for beta in 0..=beta_max {
                    let v = e.derivative(beta).abs() * bx.powi(beta as i32);
                    if v > out[beta] {
                        out[beta] = v;
                    }
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Symbol-level conjugation
// ---------------------------------------------------------------------------

/// Graded exponential jets: `coef[n][g]` is the Taylor coefficient of order `n`
/// of `e^{-Λ}∂^n e^{Λ}/n!` collecting products of λ-derivatives whose total
/// ξ-order deficit is `g` (level `p−k` contributes deficit `k−1`).
fn graded_exp(jets: &[Jet], order: usize, grades: usize) -> Vec<Vec<f64>> {
    // X[n][g] = Taylor coefficient n (≥ 1) of the level with deficit g.
    let mut x = vec![vec![0.0; grades + 1]; order + 1];
    for (lv, jet) in jets.iter().enumerate() {
        if lv > grades {
            break;
        }
        for nn in 1..=order {
            x[nn][lv] += jet.coeffs()[nn];
        }
    }
    let mut f = vec![vec![0.0; grades + 1]; order + 1];
    f[0][0] = 1.0;
    for nn in 1..=order {
        let mut acc = vec![0.0; grades + 1];
        for m in 1..=nn {
            for g1 in 0..=grades {
                if x[m][g1] == 0.0 {
                    continue;
                }
                for g2 in 0..=grades - g1 {
                    acc[g1 + g2] += m as f64 * x[m][g1] * f[nn - m][g2];
                }
            }
        }
        for (a, v) in f[nn].iter_mut().zip(acc) {
            *a = v / nn as f64;
        }
    }
    f
}

/// The conjugated generator `e^{-Λ}·(A ∘ e^{Λ})` at symbol level.
///
/// `A ∘ e^Λ = Σ_{α≤p} (1/α!) ∂_ξ^α A · D_x^α e^Λ` is exact for the polynomial
/// generator; the outer factor is the leading term of the left composition
/// with `e^{-Λ}`. Each contribution has nominal ξ-order `j − α − g`; only
/// terms with order `≥ min_level` are kept (`None` keeps all).
pub fn conjugated_symbol(pack: &TransformPack, gen: &GeneratorCoefficients, min_level: Option<i64>) -> Result<Symbol> {
    let g = &pack.grid;
    let n = g.n();
    let p = pack.p as usize;
    if gen.p as usize != p || gen.a.len() != p + 1 {
        return Err(PevoError::Structural("generator and pack disagree on p".into()));
    }
    let grades = p.saturating_sub(2);
    let keep = |ord: i64| min_level.is_none_or(|m| ord >= m);
    let mut samples = Vec::with_capacity(n * n);
    let factorial = |v: usize| (1..=v).map(|q| q as f64).product::<f64>();
    let nyq = g.nyquist_index();
    for j in 0..n {
        for col in 0..n {
            let xi = g.xi()[col];
            let jets: Vec<Jet> = (0..pack.levels.len()).map(|lv| pack.level_jet(lv, j, col, p)).collect();
            let f = graded_exp(&jets, p, grades);
            let mut acc = C64::new(0.0, 0.0);
            for alpha in 0..=p {
                // (−i)^α
                let mi = C64::new(0.0, -1.0).powu(alpha as u32);
                for (grade, &fc) in f[alpha].iter().enumerate() {
                    if fc == 0.0 {
                        continue;
                    }
                    for jj in alpha..=p {
                        let a = gen.a[jj][j];
                        if a == C64::new(0.0, 0.0) {
                            continue;
                        }
                        let ord = jj as i64 - alpha as i64 - grade as i64;
                        if !keep(ord) {
                            continue;
                        }
                        // odd powers of ξ vanish at the Nyquist column (derivative convention)
                        let e = jj - alpha;
                        if e % 2 == 1 && col == nyq {
                            continue;
                        }
                        let dxi = factorial(jj) / factorial(jj - alpha) * xi.powi(e as i32);
                        acc += I * a * dxi * mi * fc;
                    }
                }
            }
            if let Some(layer) = &gen.layer {
                if keep(p as i64 - 1) {
                    acc += layer[j] * xi.abs().powi(p as i32 - 1);
                }
            }
            samples.push(acc);
        }
    }
    Symbol::new(g, pack.h, p as f64, samples)
}

// ---------------------------------------------------------------------------
// Tuning
// ---------------------------------------------------------------------------

/// Settings of [`tune_constants`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSettings {
    /// Starting value of every `M_{p-k}`.
    pub m_initial: f64,
    /// Starting `h`.
    pub h_initial: f64,
    /// Neumann truncation order of the returned pack.
    pub neumann_order: usize,
    /// Certification threshold for `‖r‖`.
    pub neumann_target: f64,
    /// Cap on `M` (tuning failure above it).
    pub m_cap: f64,
    /// Cap on `h`.
    pub h_cap: f64,
    /// Multiplicative step when raising `h`.
    pub h_growth: f64,
    /// Budget constant `c₀`; `None` uses `C·⟨2h⟩^{p-1}` (the bound of the
    /// low-frequency block where `ω` switches the transform off).
    pub c0: Option<f64>,
    /// Weight exponent `σ'` of the Gårding comparison norm.
    pub order_shift: f64,
    /// Evaluation time of the generator.
    pub t: f64,
}

impl Default for TuneSettings {
    fn default() -> Self {
        TuneSettings {
            m_initial: 0.125,
            h_initial: 1.0,
            neumann_order: 8,
            neumann_target: 0.5,
            m_cap: 65536.0,
            h_cap: 1024.0,
            h_growth: 1.25,
            c0: None,
            order_shift: 0.0,
            t: 0.0,
        }
    }
}

/// Defect measurement for one level.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LevelDefect {
    /// Level index `k` (tuning `M_{p-k}`).
    pub k: u32,
    /// Final `M_{p-k}`.
    pub m: f64,
    /// Gårding defect of the truncated conjugated generator at the final pack.
    pub defect: f64,
    /// Budget it is compared with.
    pub budget: f64,
    /// Defect of the untransformed generator truncated the same way.
    pub untransformed_defect: f64,
}

/// Report of [`tune_constants`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TuneReport {
    /// Pack summary.
    pub pack: PackSummary,
    /// Per-level defects.
    pub levels: Vec<LevelDefect>,
    /// `γ̄(u) = sup γ(u(x))`.
    pub gamma_bar: f64,
    /// `‖u‖_{4p-3}`.
    pub u_norm: f64,
    /// Budget constant used.
    pub c0: f64,
    /// Closed-form sufficient value for `M_{p-1}` with fitted `C₁′`.
    pub closed_form_m_top: f64,
    /// Fitted `C₁′ = sup |Im a_{p-1}|⟨x⟩ / (1+γ̄)`.
    pub fitted_c1: f64,
    /// Number of pack builds performed.
    pub builds: usize,
    /// `(h, ‖r‖)` for every certification attempt.
    pub h_history: Vec<(f64, f64)>,
}

/// `defect_budget(u) = c₀ (1 + γ̄(u)) (1 + ‖u‖_{4p-3}^{4p-3})`.
pub fn defect_budget(c0: f64, gamma_bar: f64, u_norm: f64, p: u32) -> f64 {
    let e = (4 * p - 3) as i32;
    c0 * (1.0 + gamma_bar) * (1.0 + u_norm.powi(e))
}

/// Default budget constant `C·⟨2h⟩^{p-1}`.
pub fn default_c0(coeffs: &CoefficientSet, h: f64) -> f64 {
    coeffs.c * bracket_unchecked(2.0 * h, 1.0).powi(coeffs.p as i32 - 1)
}

/// Gårding defect of the conjugated generator truncated at `min_level`,
/// measured on the interior window of the pack.
pub fn conjugated_defect(
    pack: &TransformPack,
    gen: &GeneratorCoefficients,
    min_level: Option<i64>,
    order_shift: f64,
) -> Result<f64> {
    let sym = conjugated_symbol(pack, gen, min_level)?;
    let mat = to_matrix(&sym);
    let mask = pack.cutoffs.interior_mask(&pack.grid);
    garding_defect_on(&mat, order_shift, &mask)
}

/// Chooses `M_{p-1}, …, M_1` by outer-to-inner doubling against the defect
/// budget, then raises `h` (at least to `max(M_{p-2},…,M_1)`) until the
/// Neumann remainder is certified; re-tunes whenever `h` changes.
pub fn tune_constants(
    coeffs: &CoefficientSet,
    u: &Field,
    grid: &Grid,
    cutoffs: &CutoffPair,
    settings: &TuneSettings,
    layer: Option<&[f64]>,
) -> Result<(TransformPack, TuneReport)> {
    let p = coeffs.p;
    let gen = GeneratorCoefficients::assemble(coeffs, u, settings.t, layer)?;
    let gamma_bar = u.values().iter().map(|&w| coeffs.gamma(w)).fold(0.0, f64::max);
    let u_norm = grid.sobolev_norm_of(u.values(), (4 * p - 3) as f64, 1.0);
    let mut m = vec![settings.m_initial; (p - 1) as usize];
    let mut h = settings.h_initial.max(1.0);
    let mut builds = 0usize;
    let mut h_history = Vec::new();
    loop {
        let c0 = settings.c0.unwrap_or_else(|| default_c0(coeffs, h));
        let budget = defect_budget(c0, gamma_bar, u_norm, p);
        for k in 1..p {
            let idx = (k - 1) as usize;
            let min_level = (p - k) as i64;
            loop {
                let pack = build_pack(p, &m, h, grid, cutoffs, settings.neumann_order)?;
                builds += 1;
                let d = conjugated_defect(&pack, &gen, Some(min_level), settings.order_shift)?;
                if d >= -budget {
                    break;
                }
                m[idx] *= 2.0;
                if m[idx] > settings.m_cap {
                    return Err(PevoError::Tuning(format!(
                        "level k = {k} (M_{}) exceeded cap {} with defect {d:.4e} < −{budget:.4e}",
                        p - k,
                        settings.m_cap
                    )));
                }
            }
        }
        let inner_max = m.iter().skip(1).cloned().fold(0.0, f64::max);
        let mut h_new = h.max(inner_max);
        loop {
            let pack = build_pack(p, &m, h_new, grid, cutoffs, settings.neumann_order)?;
            builds += 1;
            let nr = estimate_neumann_norm(&pack);
            h_history.push((h_new, nr));
            if nr <= settings.neumann_target {
                if h_new == h {
                    let levels = final_levels(&pack, &gen, coeffs, gamma_bar, u_norm, settings)?;
                    let fitted_c1 = fitted_c1(coeffs, grid, gamma_bar, settings.t);
                    let closed = closed_form_m_top(coeffs, fitted_c1, gamma_bar);
                    let c0 = settings.c0.unwrap_or_else(|| default_c0(coeffs, h));
                    let report = TuneReport {
                        pack: pack.summary(),
                        levels,
                        gamma_bar,
                        u_norm,
                        c0,
                        closed_form_m_top: closed,
                        fitted_c1,
                        builds,
                        h_history,
                    };
                    return Ok((pack, report));
                }
                break;
            }
            h_new *= settings.h_growth;
            if h_new > settings.h_cap {
                return Err(PevoError::Tuning(format!(
                    "Neumann remainder not certified below {} up to h = {} (last ‖r‖ = {nr:.4})",
                    settings.neumann_target, settings.h_cap
                )));
            }
        }
        h = h_new;
    }
}

fn final_levels(
    pack: &TransformPack,
    gen: &GeneratorCoefficients,
    coeffs: &CoefficientSet,
    gamma_bar: f64,
    u_norm: f64,
    settings: &TuneSettings,
) -> Result<Vec<LevelDefect>> {
    let p = pack.p;
    let c0 = settings.c0.unwrap_or_else(|| default_c0(coeffs, pack.h));
    let budget = defect_budget(c0, gamma_bar, u_norm, p);
    let zero = build_pack(p, &vec![0.0; (p - 1) as usize], pack.h, &pack.grid, &pack.cutoffs, 0)?;
    let mut out = Vec::new();
    for k in 1..p {
        let min_level = Some((p - k) as i64);
        out.push(LevelDefect {
            k,
            m: pack.m[(k - 1) as usize],
            defect: conjugated_defect(pack, gen, min_level, settings.order_shift)?,
            budget,
            untransformed_defect: conjugated_defect(&zero, gen, min_level, settings.order_shift)?,
        });
    }
    Ok(out)
}

/// `C₁′ = sup_x |Im a_{p-1}(t,x,0)|·⟨x⟩ / (1 + γ̄)` on the grid.
fn fitted_c1(coeffs: &CoefficientSet, grid: &Grid, gamma_bar: f64, t: f64) -> f64 {
    let j = coeffs.p as usize - 1;
    grid.x()
        .iter()
        .map(|&x| coeffs.a_j(j, t, x, C64::new(0.0, 0.0)).im.abs() * bracket_unchecked(x, 1.0))
        .fold(0.0, f64::max)
        / (1.0 + gamma_bar)
}

/// Sufficient choice `M_{p-1} ≥ C₁′(1+γ̄)/(2^{p-2}/√5^{p-1} · p · C_p)`.
pub fn closed_form_m_top(coeffs: &CoefficientSet, c1: f64, gamma_bar: f64) -> f64 {
    let p = coeffs.p as i32;
    let denom = 2f64.powi(p - 2) / 5f64.sqrt().powi(p - 1) * p as f64 * coeffs.c_p;
    c1 * (1.0 + gamma_bar) / denom
}
