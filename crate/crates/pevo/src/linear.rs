//! Method-of-lines solver for the linear(ized) Cauchy problem
//! `∂_t v = i f − A(t,x,u,D) v`, optionally in the Λ-transformed variable,
//! plus trajectory storage, export and the energy audit.
//!
//! The generator is `A = i a_p D^p + Σ_j i a_j(t,x,u) D^j` (optionally plus a
//! real absorbing layer `s(x)|D|^{p-1}` near the box edges). Time stepping is
//! Lawson RK4: the x-independent principal part `i ā_p ξ^p` is integrated
//! exactly, the rest by classical RK4.

use crate::coefficients::{composed_coefficient, CoefficientSet};
use crate::error::{PevoError, Result};
use crate::grid::{Field, Grid, C64, I};
use crate::jet::glue;
use crate::lambda::{estimate_neumann_norm, TransformPack};
use crate::symbol::{quantize_raw, Symbol};
use nalgebra::{DMatrix, DVector};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Blow-up threshold of the integrator.
pub const BLOWUP_NORM: f64 = 1e12;

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

/// Lagrange interpolation (cubic, on the four nearest stored frames; lower
/// degree when fewer frames exist) of raw frames at time `t`.
pub fn interpolate_frames(times: &[f64], frames: &[Vec<C64>], t: f64) -> Vec<C64> {
    let m = times.len();
    assert!(m > 0 && m == frames.len(), "interpolation needs matching, non-empty frames");
    if m == 1 {
        return frames[0].clone();
    }
    // exact node hit
    let idx = times.partition_point(|&s| s < t);
    if idx < m && times[idx] == t {
        return frames[idx].clone();
    }
    let deg = (m - 1).min(3);
    // window start so that t is as central as possible
    let right = idx.clamp(1, m - 1);
    let mut start = right as i64 - deg.div_ceil(2) as i64;
    start = start.clamp(0, (m - 1 - deg) as i64);
    let start = start as usize;
    let nodes = &times[start..=start + deg];
    let n = frames[0].len();
    let mut out = vec![C64::new(0.0, 0.0); n];
    for (a, &ta) in nodes.iter().enumerate() {
        let mut w = 1.0;
        for (b, &tb) in nodes.iter().enumerate() {
            if a != b {
                w *= (t - tb) / (ta - tb);
            }
        }
        if w != 0.0 {
            for (o, v) in out.iter_mut().zip(&frames[start + a]) {
                *o += v * w;
            }
        }
    }
    out
}

/// Time-stamped sequence of fields with recorded Sobolev norms.
#[derive(Clone, Debug)]
pub struct Trajectory {
    grid: Grid,
    times: Vec<f64>,
    frames: Vec<Field>,
    norm_indices: Vec<f64>,
    norms: Vec<Vec<f64>>,
    /// `d/dt ‖·‖₀²` along the flow at each frame (filled by the solvers).
    pub energy_rates: Vec<f64>,
}

impl Trajectory {
    /// Builds a trajectory; checks strictly increasing times, shared grid and
    /// finite frames, and records `‖·‖₀`.
    pub fn new(times: Vec<f64>, frames: Vec<Field>) -> Result<Self> {
        if times.is_empty() || times.len() != frames.len() {
            return Err(PevoError::Structural("trajectory needs equally many (≥1) times and frames".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(PevoError::Input("trajectory times must be strictly increasing".into()));
        }
        let grid = frames[0].grid().clone();
        for f in &frames {
            if *f.grid() != grid {
                return Err(PevoError::Structural("trajectory frames live on different grids".into()));
            }
            if f.values().iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(PevoError::Input("trajectory frame is not finite".into()));
            }
        }
        let mut t = Trajectory { grid, times, frames, norm_indices: vec![], norms: vec![], energy_rates: vec![] };
        t.record_norms(&[0.0]);
        Ok(t)
    }

    /// Trajectory constant in time.
    pub fn constant(times: Vec<f64>, field: &Field) -> Result<Self> {
        let frames = vec![field.clone(); times.len()];
        Trajectory::new(times, frames)
    }

    /// Trajectory `t ↦ f(t)` on the given times.
    pub fn from_fn(times: Vec<f64>, f: impl Fn(f64) -> Field) -> Result<Self> {
        let frames = times.iter().map(|&t| f(t)).collect();
        Trajectory::new(times, frames)
    }

    /// (Re)computes `‖·‖_s` (bracket `⟨ξ⟩_1`) for each index.
    pub fn record_norms(&mut self, indices: &[f64]) {
        self.norm_indices = indices.to_vec();
        self.norms = self
            .frames
            .iter()
            .map(|f| indices.iter().map(|&s| self.grid.sobolev_norm_of(f.values(), s, 1.0)).collect())
            .collect();
    }

    /// Grid.
    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    /// Number of frames.
    pub fn len(&self) -> usize {
        self.times.len()
    }
    /// True if there are no frames (never, by construction).
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
    /// Times.
    pub fn times(&self) -> &[f64] {
        &self.times
    }
    /// Frames.
    pub fn frames(&self) -> &[Field] {
        &self.frames
    }
    /// Last frame.
    pub fn last(&self) -> &Field {
        self.frames.last().expect("non-empty")
    }
    /// Recorded Sobolev indices.
    pub fn norm_indices(&self) -> &[f64] {
        &self.norm_indices
    }
    /// Recorded norms, `[frame][index]`.
    pub fn norms(&self) -> &[Vec<f64>] {
        &self.norms
    }

    /// Recorded `‖·‖_s` series, if `s` was recorded.
    pub fn norm_series(&self, s: f64) -> Option<Vec<f64>> {
        let i = self.norm_indices.iter().position(|&v| (v - s).abs() < 1e-12)?;
        Some(self.norms.iter().map(|r| r[i]).collect())
    }

    /// Field at time `t` (cubic interpolation between frames).
    pub fn at(&self, t: f64) -> Field {
        let idx = self.times.partition_point(|&s| s < t);
        if idx < self.len() && self.times[idx] == t {
            return self.frames[idx].clone();
        }
        let raw: Vec<Vec<C64>> = self.frames.iter().map(|f| f.values().to_vec()).collect();
        Field::from_raw(&self.grid, interpolate_frames(&self.times, &raw, t))
    }

    /// Raw frames (copies).
    pub fn raw_frames(&self) -> Vec<Vec<C64>> {
        self.frames.iter().map(|f| f.values().to_vec()).collect()
    }

    /// Frame-wise map.
    pub fn map(&self, f: impl Fn(f64, &Field) -> Field) -> Result<Trajectory> {
        let frames = self.times.iter().zip(&self.frames).map(|(&t, u)| f(t, u)).collect();
        Trajectory::new(self.times.clone(), frames)
    }

    /// Frame-wise `self + a·other` (same times required).
    pub fn axpy(&self, a: C64, other: &Trajectory) -> Result<Trajectory> {
        self.check_same_times(other)?;
        let frames = self.frames.iter().zip(&other.frames).map(|(x, y)| x.axpy(a, y)).collect();
        Trajectory::new(self.times.clone(), frames)
    }

    /// Frame-wise difference.
    pub fn sub(&self, other: &Trajectory) -> Result<Trajectory> {
        self.axpy(C64::new(-1.0, 0.0), other)
    }

    /// Frame-wise scaling.
    pub fn scale(&self, a: C64) -> Trajectory {
        let mut out = self.clone();
        for f in &mut out.frames {
            f.scale_mut(a);
        }
        out.record_norms(&self.norm_indices.clone());
        out
    }

    /// Zero trajectory on the same times.
    pub fn zeros_like(&self) -> Trajectory {
        let z = Field::zeros(&self.grid);
        Trajectory::constant(self.times.clone(), &z).expect("valid times")
    }

    /// `sup_t ‖·(t)‖₀`.
    pub fn sup_l2(&self) -> f64 {
        self.frames.iter().map(|f| f.l2_norm()).fold(0.0, f64::max)
    }

    /// `sup_t ‖·(t)‖_s`.
    pub fn sup_sobolev(&self, s: f64) -> f64 {
        self.frames.iter().map(|f| self.grid.sobolev_norm_of(f.values(), s, 1.0)).fold(0.0, f64::max)
    }

    /// Errors unless both trajectories share grid and times.
    pub fn check_same_times(&self, other: &Trajectory) -> Result<()> {
        if self.grid != other.grid {
            return Err(PevoError::Structural("trajectories live on different grids".into()));
        }
        if self.times.len() != other.times.len()
            || self.times.iter().zip(&other.times).any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + a.abs()))
        {
            return Err(PevoError::Structural("trajectories use different time grids".into()));
        }
        Ok(())
    }

    /// Writes the binary frame dump: `"PEVO"`, version, `N`, frame count
    /// (u32 LE), then per frame `t` and `2N` interleaved `f64` (LE).
    pub fn write_frames<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"PEVO")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.grid.n() as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        for (t, f) in self.times.iter().zip(&self.frames) {
            w.write_all(&t.to_le_bytes())?;
            for v in f.values() {
                w.write_all(&v.re.to_le_bytes())?;
                w.write_all(&v.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a binary frame dump written by [`Trajectory::write_frames`].
    pub fn read_frames<R: Read>(mut r: R, grid: &Grid) -> Result<Trajectory> {
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        if &b4 != b"PEVO" {
            return Err(PevoError::Input("bad frame-dump magic".into()));
        }
        let read_u32 = |r: &mut R| -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        };
        let version = read_u32(&mut r)?;
        if version != 1 {
            return Err(PevoError::Input(format!("unsupported frame-dump version {version}")));
        }
        let n = read_u32(&mut r)? as usize;
        if n != grid.n() {
            return Err(PevoError::Structural(format!("frame dump has N = {n}, grid has {}", grid.n())));
        }
        let count = read_u32(&mut r)? as usize;
        let read_f64 = |r: &mut R| -> Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let mut times = Vec::with_capacity(count);
        let mut frames = Vec::with_capacity(count);
        for _ in 0..count {
            times.push(read_f64(&mut r)?);
            let mut vals = Vec::with_capacity(n);
            for _ in 0..n {
                let re = read_f64(&mut r)?;
                let im = read_f64(&mut r)?;
                vals.push(C64::new(re, im));
            }
            frames.push(Field::new(grid, vals)?);
        }
        Trajectory::new(times, frames)
    }
}

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

/// Nodal coefficients of one generator instance `A(t)`.
#[derive(Clone, Debug)]
pub struct GeneratorCoefficients {
    /// Evolution order.
    pub p: u32,
    /// `a[j][node]` for `j = 0..=p` (`a[p]` real).
    pub a: Vec<Vec<C64>>,
    /// Optional absorbing-layer strength `s(x_j) ≥ 0` (adds `s|D|^{p-1}`).
    pub layer: Option<Vec<f64>>,
}

impl GeneratorCoefficients {
    /// Samples `a_j(t, x_j, u(x_j))` and `a_p(t, x_j)`.
    pub fn assemble(coeffs: &CoefficientSet, u: &Field, t: f64, layer: Option<&[f64]>) -> Result<Self> {
        let grid = u.grid();
        let p = coeffs.p as usize;
        let mut a = Vec::with_capacity(p + 1);
        for j in 0..p {
            a.push(composed_coefficient(coeffs, j, u, t)?.into_values());
        }
        let ap: Vec<C64> = grid.x().iter().map(|&x| C64::new(coeffs.a_p(t, x), 0.0)).collect();
        if ap.iter().any(|v| !v.re.is_finite()) {
            return Err(PevoError::Input("a_p is not finite on the grid".into()));
        }
        a.push(ap);
        if let Some(l) = layer {
            if l.len() != grid.n() {
                return Err(PevoError::Structural("absorbing layer length differs from N".into()));
            }
        }
        Ok(GeneratorCoefficients { p: coeffs.p, a, layer: layer.map(|l| l.to_vec()) })
    }

    /// `A v = Σ_j i a_j D^j v (+ s|D|^{p-1} v)` by spectral differentiation.
    pub fn apply(&self, grid: &Grid, v: &[C64]) -> Vec<C64> {
        let n = grid.n();
        let vhat = grid.forward(v);
        let nyq = grid.nyquist_index();
        let mut out = vec![C64::new(0.0, 0.0); n];
        for (j, aj) in self.a.iter().enumerate() {
            if aj.iter().all(|z| *z == C64::new(0.0, 0.0)) {
                continue;
            }
            let dj = derivative_from_hat(grid, &vhat, j as u32, nyq);
            for ((o, a), d) in out.iter_mut().zip(aj).zip(dj) {
                *o += I * a * d;
            }
        }
        if let Some(layer) = &self.layer {
            let pm1 = self.p as i32 - 1;
            let mut h = vhat.clone();
            for (v, &xi) in h.iter_mut().zip(grid.xi()) {
                *v *= xi.abs().powi(pm1);
            }
            let d = grid.inverse(&h);
            for ((o, s), dv) in out.iter_mut().zip(layer).zip(d) {
                *o += dv * *s;
            }
        }
        out
    }
}

fn derivative_from_hat(grid: &Grid, vhat: &[C64], j: u32, nyq: usize) -> Vec<C64> {
    if j == 0 {
        return grid.inverse(vhat);
    }
    let odd = j % 2 == 1;
    let h: Vec<C64> = vhat
        .iter()
        .zip(grid.xi())
        .enumerate()
        .map(|(idx, (v, &xi))| if odd && idx == nyq { C64::new(0.0, 0.0) } else { v * xi.powi(j as i32) })
        .collect();
    grid.inverse(&h)
}

/// Multiplier value of `D^j` at FFT index `idx` (odd orders vanish at Nyquist).
fn d_multiplier(grid: &Grid, idx: usize, j: u32) -> f64 {
    if j % 2 == 1 && idx == grid.nyquist_index() {
        0.0
    } else {
        grid.xi()[idx].powi(j as i32)
    }
}

/// Real absorbing-layer profile `s(x) = strength·glue((|x| − a·L)/((b−a)·L))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AbsorbingLayer {
    /// Peak strength.
    pub strength: f64,
    /// Fraction of `L` where the layer starts.
    pub start: f64,
    /// Fraction of `L` where it reaches full strength.
    pub end: f64,
}

impl AbsorbingLayer {
    /// Nodal samples on the grid.
    pub fn samples(&self, grid: &Grid) -> Vec<f64> {
        let l = grid.l();
        grid.x()
            .iter()
            .map(|&x| self.strength * glue((x.abs() - self.start * l) / ((self.end - self.start) * l)))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Problems
// ---------------------------------------------------------------------------

/// Frozen state entering the coefficients.
#[derive(Clone, Debug)]
pub enum FrozenState {
    /// `u ≡ 0`.
    Zero,
    /// Time-independent field.
    Static(Field),
    /// Time-dependent trajectory (interpolated between frames).
    Trajectory(Trajectory),
}

impl FrozenState {
    fn at(&self, grid: &Grid, t: f64) -> Field {
        match self {
            FrozenState::Zero => Field::zeros(grid),
            FrozenState::Static(f) => f.clone(),
            FrozenState::Trajectory(tr) => tr.at(t),
        }
    }

    fn is_static(&self) -> bool {
        !matches!(self, FrozenState::Trajectory(_))
    }

    /// `sup_t ‖u‖_s`.
    pub fn sup_sobolev(&self, grid: &Grid, s: f64) -> f64 {
        match self {
            FrozenState::Zero => 0.0,
            FrozenState::Static(f) => grid.sobolev_norm_of(f.values(), s, 1.0),
            FrozenState::Trajectory(tr) => tr.sup_sobolev(s),
        }
    }
}

/// Forcing `f(t, x)`.
#[derive(Clone, Debug)]
pub enum Forcing {
    /// `f ≡ 0`.
    Zero,
    /// Time-independent forcing.
    Static(Field),
    /// Sampled forcing (interpolated between frames).
    Sampled(Trajectory),
}

impl Forcing {
    /// `f(t)` (`None` for zero forcing).
    pub fn at(&self, t: f64) -> Option<Field> {
        match self {
            Forcing::Zero => None,
            Forcing::Static(f) => Some(f.clone()),
            Forcing::Sampled(tr) => Some(tr.at(t)),
        }
    }

    fn is_static(&self) -> bool {
        !matches!(self, Forcing::Sampled(_))
    }
}

/// Linear(ized) Cauchy problem.
#[derive(Clone, Debug)]
pub struct LinearProblem {
    /// Coefficients (possibly linearized).
    pub coeffs: CoefficientSet,
    /// Frozen state `u`.
    pub frozen: FrozenState,
    /// Forcing.
    pub forcing: Forcing,
    /// Initial datum.
    pub u0: Field,
    /// Horizon `T`.
    pub horizon: f64,
    /// Step; `None` uses `0.5 / (max|a_p| ξ_max^p)`.
    pub dt: Option<f64>,
    /// Store every `save_every`-th step (the final step is always stored).
    pub save_every: usize,
    /// Sobolev index `s` recorded along the run.
    pub s: f64,
    /// Optional absorbing layer.
    pub layer: Option<AbsorbingLayer>,
}

impl LinearProblem {
    /// Problem with zero forcing, frozen `u = 0`, unit save cadence, `s = 0`.
    pub fn new(coeffs: CoefficientSet, u0: Field, horizon: f64) -> Self {
        LinearProblem {
            coeffs,
            frozen: FrozenState::Zero,
            forcing: Forcing::Zero,
            u0,
            horizon,
            dt: None,
            save_every: 1,
            s: 0.0,
            layer: None,
        }
    }

    /// Grid.
    pub fn grid(&self) -> &Grid {
        self.u0.grid()
    }

    /// Default step `0.5/(max|a_p| ξ_max^p)`.
    pub fn default_dt(&self) -> f64 {
        let g = self.grid();
        let amax = self.coeffs.max_abs_a_p(g, 0.0).max(1e-300);
        0.5 / (amax * g.xi_max().powi(self.coeffs.p as i32))
    }

    /// Step count and step, checking that `T/Δt` is integral.
    pub fn steps(&self) -> Result<(usize, f64)> {
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(PevoError::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        match self.dt {
            Some(dt) => {
                if !(dt > 0.0) {
                    return Err(PevoError::Config(format!("Δt must be positive, got {dt}")));
                }
                let steps = (self.horizon / dt).round();
                if steps < 1.0 || (steps * dt - self.horizon).abs() > 1e-9 * self.horizon {
                    return Err(PevoError::Config(format!("T/Δt must be integral (T = {}, Δt = {dt})", self.horizon)));
                }
                Ok((steps as usize, self.horizon / steps))
            }
            None => {
                let steps = (self.horizon / self.default_dt()).ceil().max(1.0) as usize;
                Ok((steps, self.horizon / steps as f64))
            }
        }
    }

    fn layer_samples(&self) -> Option<Vec<f64>> {
        self.layer.map(|l| l.samples(self.grid()))
    }

    fn time_independent(&self) -> bool {
        self.frozen.is_static() && self.forcing.is_static() && self.coeffs.sampled_zero_order.is_none()
    }

    /// Mean of `a_p` over the nodes at time `t` (exactly integrated part).
    fn principal_mean(&self, t: f64) -> f64 {
        let g = self.grid();
        g.x().iter().map(|&x| self.coeffs.a_p(t, x)).sum::<f64>() / g.n() as f64
    }
}

/// `A(t)` as a sampled symbol: `i a_p ξ^p + Σ_j i a_j(t,x_j,u) ξ^j`
/// (plus the absorbing layer when configured). Odd powers vanish on the
/// Nyquist column, matching spectral differentiation.
pub fn assemble_generator(problem: &LinearProblem, t: f64) -> Result<Symbol> {
    if t < 0.0 || t > problem.horizon * (1.0 + 1e-12) {
        return Err(PevoError::ParameterDomain(format!("t = {t} outside [0, {}]", problem.horizon)));
    }
    let g = problem.grid();
    let u = problem.frozen.at(g, t);
    let gen = GeneratorCoefficients::assemble(&problem.coeffs, &u, t, problem.layer_samples().as_deref())?;
    generator_symbol(g, &gen)
}

/// Sampled symbol of a nodal generator.
pub fn generator_symbol(g: &Grid, gen: &GeneratorCoefficients) -> Result<Symbol> {
    let n = g.n();
    let p = gen.p;
    let mut samples = Vec::with_capacity(n * n);
    for j in 0..n {
        for k in 0..n {
            let mut acc = C64::new(0.0, 0.0);
            for (jj, aj) in gen.a.iter().enumerate() {
                acc += I * aj[j] * d_multiplier(g, k, jj as u32);
            }
            if let Some(l) = &gen.layer {
                acc += l[j] * g.xi()[k].abs().powi(p as i32 - 1);
            }
            samples.push(acc);
        }
    }
    Symbol::new(g, 1.0, p as f64, samples)
}

// ---------------------------------------------------------------------------
// Stepper
// ---------------------------------------------------------------------------

/// Right-hand side `N(t, y) = i f(t) − (A(t) − P₀) y` in some variable.
trait Rhs {
    fn eval(&self, t: f64, y: &[C64]) -> Result<Vec<C64>>;
    /// Full derivative `i f − A y` (for energy rates).
    fn full(&self, t: f64, y: &[C64]) -> Result<Vec<C64>>;
}

/// Saved times, saved frames and the energy rate at each saved time.
type SteppedRun = (Vec<f64>, Vec<Vec<C64>>, Vec<f64>);

/// Lawson RK4 with the exact factor `exp(−i ā ξ^p τ)`.
fn lawson_rk4<R: Rhs>(
    grid: &Grid,
    rhs: &R,
    p0: &[f64],
    y0: Vec<C64>,
    steps: usize,
    dt: f64,
    save_every: usize,
) -> Result<SteppedRun> {
    let e_half: Vec<C64> = p0.iter().map(|&w| (-I * w * (0.5 * dt)).exp()).collect();
    let e_full: Vec<C64> = p0.iter().map(|&w| (-I * w * dt).exp()).collect();
    let apply = |e: &[C64], v: &[C64]| -> Vec<C64> {
        let mut h = grid.forward(v);
        for (a, b) in h.iter_mut().zip(e) {
            *a *= b;
        }
        grid.inverse(&h)
    };
    let rate = |t: f64, y: &[C64]| -> Result<f64> {
        let d = rhs.full(t, y)?;
        Ok(2.0 * grid.inner_product(&d, y).re)
    };
    let mut times = vec![0.0];
    let mut frames = vec![y0.clone()];
    let mut rates = vec![rate(0.0, &y0)?];
    let mut y = y0;
    let save_every = save_every.max(1);
    for step in 0..steps {
        let t = step as f64 * dt;
        let k1 = rhs.eval(t, &y)?;
        let a2: Vec<C64> = y.iter().zip(&k1).map(|(a, b)| a + b * (0.5 * dt)).collect();
        let k2 = rhs.eval(t + 0.5 * dt, &apply(&e_half, &a2))?;
        let ey_half = apply(&e_half, &y);
        let a3: Vec<C64> = ey_half.iter().zip(&k2).map(|(a, b)| a + b * (0.5 * dt)).collect();
        let k3 = rhs.eval(t + 0.5 * dt, &a3)?;
        let ek3 = apply(&e_half, &k3);
        let ey_full = apply(&e_half, &ey_half);
        let a4: Vec<C64> = ey_full.iter().zip(&ek3).map(|(a, b)| a + b * dt).collect();
        let k4 = rhs.eval(t + dt, &a4)?;
        // y_new = E y + dt/6 (E k1 + 2 E_{1/2}(k2 + k3) + k4)
        let ek1 = apply(&e_full, &k1);
        let mid: Vec<C64> = k2.iter().zip(&k3).map(|(a, b)| a + b).collect();
        let emid = apply(&e_half, &mid);
        y = (0..y.len()).map(|i| ey_full[i] + (ek1[i] + emid[i] * 2.0 + k4[i]) * (dt / 6.0)).collect();
        let tn = (step + 1) as f64 * dt;
        let norm = grid.l2_norm(&y);
        if !norm.is_finite() || norm > BLOWUP_NORM {
            return Err(PevoError::Instability { time: tn, norm });
        }
        if (step + 1) % save_every == 0 || step + 1 == steps {
            times.push(tn);
            rates.push(rate(tn, &y)?);
            frames.push(y.clone());
        }
    }
    Ok((times, frames, rates))
}

struct DirectRhs<'a> {
    problem: &'a LinearProblem,
    layer: Option<Vec<f64>>,
    pbar: f64,
    cached: Option<GeneratorCoefficients>,
}

impl DirectRhs<'_> {
    fn generator(&self, t: f64) -> Result<GeneratorCoefficients> {
        if let Some(g) = &self.cached {
            return Ok(g.clone());
        }
        let grid = self.problem.grid();
        let u = self.problem.frozen.at(grid, t);
        GeneratorCoefficients::assemble(&self.problem.coeffs, &u, t, self.layer.as_deref())
    }

    fn residual_generator(&self, t: f64) -> Result<GeneratorCoefficients> {
        let mut g = self.generator(t)?;
        let p = g.p as usize;
        for v in &mut g.a[p] {
            *v -= self.pbar;
        }
        Ok(g)
    }
}

impl Rhs for DirectRhs<'_> {
    fn eval(&self, t: f64, y: &[C64]) -> Result<Vec<C64>> {
        let grid = self.problem.grid();
        let gen = self.residual_generator(t)?;
        let mut out: Vec<C64> = gen.apply(grid, y).into_iter().map(|v| -v).collect();
        if let Some(f) = self.problem.forcing.at(t) {
            for (o, fv) in out.iter_mut().zip(f.values()) {
                *o += I * fv;
            }
        }
        Ok(out)
    }

    fn full(&self, t: f64, y: &[C64]) -> Result<Vec<C64>> {
        let grid = self.problem.grid();
        let gen = self.generator(t)?;
        let mut out: Vec<C64> = gen.apply(grid, y).into_iter().map(|v| -v).collect();
        if let Some(f) = self.problem.forcing.at(t) {
            for (o, fv) in out.iter_mut().zip(f.values()) {
                *o += I * fv;
            }
        }
        Ok(out)
    }
}

fn principal_multiplier(grid: &Grid, pbar: f64, p: u32) -> Vec<f64> {
    (0..grid.n()).map(|k| pbar * d_multiplier(grid, k, p)).collect()
}

fn validate_problem(problem: &LinearProblem) -> Result<()> {
    problem.coeffs.validate()?;
    if problem.save_every == 0 {
        return Err(PevoError::Config("save cadence must be ≥ 1".into()));
    }
    let g = problem.grid();
    if let FrozenState::Static(f) = &problem.frozen {
        if *f.grid() != *g {
            return Err(PevoError::Structural("frozen state on another grid".into()));
        }
    }
    if let FrozenState::Trajectory(tr) = &problem.frozen {
        if *tr.grid() != *g {
            return Err(PevoError::Structural("frozen trajectory on another grid".into()));
        }
    }
    Ok(())
}

/// Integrates `∂_t v = i f − A(t) v`, `v(0) = u₀`.
pub fn solve_linear(problem: &LinearProblem) -> Result<Trajectory> {
    validate_problem(problem)?;
    let (steps, dt) = problem.steps()?;
    let grid = problem.grid().clone();
    let pbar = problem.principal_mean(0.0);
    let layer = problem.layer_samples();
    let mut rhs = DirectRhs { problem, layer, pbar, cached: None };
    if problem.frozen.is_static() && problem.coeffs.sampled_zero_order.is_none() {
        rhs.cached = Some(rhs.generator(0.0)?);
    }
    let p0 = principal_multiplier(&grid, pbar, problem.coeffs.p);
    let (times, frames, rates) =
        lawson_rk4(&grid, &rhs, &p0, problem.u0.values().to_vec(), steps, dt, problem.save_every)?;
    finish(&grid, times, frames, rates, problem.s)
}

fn finish(grid: &Grid, times: Vec<f64>, frames: Vec<Vec<C64>>, rates: Vec<f64>, s: f64) -> Result<Trajectory> {
    let fields = frames.into_iter().map(|v| Field::from_raw(grid, v)).collect();
    let mut tr = Trajectory::new(times, fields)?;
    tr.energy_rates = rates;
    if s != 0.0 {
        tr.record_norms(&[0.0, s]);
    }
    Ok(tr)
}

/// Output of [`solve_transformed`].
#[derive(Clone, Debug)]
pub struct TransformedSolution {
    /// `w` (the transformed unknown).
    pub w: Trajectory,
    /// `v = e^Λ w`.
    pub v: Trajectory,
    /// Neumann norm of the pack used.
    pub neumann_norm: f64,
}

struct TransformedRhs<'a> {
    problem: &'a LinearProblem,
    pack: &'a TransformPack,
    layer: Option<Vec<f64>>,
    pbar: f64,
    /// Precomputed `E^{-1} A E` (time-independent problems).
    dense: Option<DMatrix<C64>>,
    forcing_static: Option<Vec<C64>>,
}

impl TransformedRhs<'_> {
    fn conj_apply(&self, t: f64, y: &[C64]) -> Result<Vec<C64>> {
        if let Some(m) = &self.dense {
            let r = m * DVector::from_column_slice(y);
            return Ok(r.as_slice().to_vec());
        }
        let grid = self.problem.grid();
        let u = self.problem.frozen.at(grid, t);
        let gen = GeneratorCoefficients::assemble(&self.problem.coeffs, &u, t, self.layer.as_deref())?;
        let ey = quantize_raw(self.pack.exp_lambda(), y);
        let aey = gen.apply(grid, &ey);
        self.pack.solve_dense_raw(&aey)
    }

    fn forcing(&self, t: f64) -> Result<Option<Vec<C64>>> {
        if let Some(f) = &self.forcing_static {
            return Ok(Some(f.clone()));
        }
        match self.problem.forcing.at(t) {
            None => Ok(None),
            Some(f) => Ok(Some(self.pack.solve_dense_raw(f.values())?)),
        }
    }
}

impl Rhs for TransformedRhs<'_> {
    fn eval(&self, t: f64, y: &[C64]) -> Result<Vec<C64>> {
        let grid = self.problem.grid();
        let a = self.conj_apply(t, y)?;
        let p0y =
            grid.apply_multiplier(y, |k, _| C64::new(0.0, self.pbar * d_multiplier(grid, k, self.problem.coeffs.p)));
        let mut out: Vec<C64> = a.iter().zip(&p0y).map(|(x, z)| z - x).collect();
        if let Some(f) = self.forcing(t)? {
            for (o, fv) in out.iter_mut().zip(&f) {
                *o += I * fv;
            }
        }
        Ok(out)
    }

    fn full(&self, t: f64, y: &[C64]) -> Result<Vec<C64>> {
        let mut out: Vec<C64> = self.conj_apply(t, y)?.into_iter().map(|v| -v).collect();
        if let Some(f) = self.forcing(t)? {
            for (o, fv) in out.iter_mut().zip(&f) {
                *o += I * fv;
            }
        }
        Ok(out)
    }
}

/// Integrates the conjugated system `∂_t w = i f_Λ − (e^Λ)^{-1} A e^Λ w`,
/// `w(0) = (e^Λ)^{-1} u₀`, and returns `w` and `v = e^Λ w`.
///
/// The inverse is the exact discrete one (dense LU); the pack must be
/// certified (`‖r‖ < 1`).
pub fn solve_transformed(problem: &LinearProblem, pack: &TransformPack) -> Result<TransformedSolution> {
    validate_problem(problem)?;
    let grid = problem.grid().clone();
    if *pack.grid() != grid {
        return Err(PevoError::Structural("pack and problem live on different grids".into()));
    }
    if pack.p() != problem.coeffs.p {
        return Err(PevoError::Structural("pack and problem disagree on p".into()));
    }
    let nr = estimate_neumann_norm(pack);
    if nr >= 1.0 {
        return Err(PevoError::Certification { norm: nr, limit: 1.0 });
    }
    let (steps, dt) = problem.steps()?;
    let pbar = problem.principal_mean(0.0);
    let layer = problem.layer_samples();
    let mut rhs = TransformedRhs { problem, pack, layer, pbar, dense: None, forcing_static: None };
    if problem.time_independent() {
        let u = problem.frozen.at(&grid, 0.0);
        let gen = GeneratorCoefficients::assemble(&problem.coeffs, &u, 0.0, rhs.layer.as_deref())?;
        let n = grid.n();
        let e = pack.exp_lambda_matrix();
        let mut ae = DMatrix::<C64>::zeros(n, n);
        for c in 0..n {
            let col: Vec<C64> = e.column(c).iter().cloned().collect();
            let a = gen.apply(&grid, &col);
            for (r, v) in a.into_iter().enumerate() {
                ae[(r, c)] = v;
            }
        }
        let lu = e.clone().lu();
        let m = lu.solve(&ae).ok_or_else(|| PevoError::Numeric("e^Λ is singular".into()))?;
        rhs.dense = Some(m);
        if let Some(f) = problem.forcing.at(0.0) {
            rhs.forcing_static = Some(pack.solve_dense_raw(f.values())?);
        }
    }
    let w0 = pack.solve_dense_raw(problem.u0.values())?;
    let p0 = principal_multiplier(&grid, pbar, problem.coeffs.p);
    let (times, frames, rates) = lawson_rk4(&grid, &rhs, &p0, w0, steps, dt, problem.save_every)?;
    let v_frames: Vec<Vec<C64>> = frames.iter().map(|w| quantize_raw(pack.exp_lambda(), w)).collect();
    let w = finish(&grid, times.clone(), frames, rates, problem.s)?;
    let v = finish(&grid, times, v_frames, vec![], problem.s)?;
    Ok(TransformedSolution { w, v, neumann_norm: nr })
}

// ---------------------------------------------------------------------------
// Energy audit
// ---------------------------------------------------------------------------

/// One row of the norms CSV.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AuditRow {
    /// Time.
    pub t: f64,
    /// `‖v‖₀`.
    pub norm0: f64,
    /// `‖v‖_s`.
    pub norm_s: f64,
    /// `‖v‖_{s−σ}`.
    pub norm_s_sigma: f64,
    /// Right-hand side of the energy bound.
    pub bound_rhs: f64,
    /// `RHS / ‖v‖²_{s−σ}`.
    pub margin: f64,
}

/// Energy-audit diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnergyAudit {
    /// Sobolev index `s`.
    pub s: f64,
    /// Loss `σ` used (`2δ` of the pack, or 0).
    pub sigma: f64,
    /// Exponent proxy `1 + sup_t‖u‖_{4p−3}^{4p−3}`.
    pub exponent_proxy: f64,
    /// Fitted `C_{s,γ}` (first 10% of the horizon).
    pub fitted_constant: f64,
    /// `min_t RHS/LHS` of the energy bound.
    pub margin: f64,
    /// Energy bound violated after the fitting window.
    pub violated: bool,
    /// Gronwall constant used: `max(fitted K, exponent proxy)`.
    pub gronwall_k: f64,
    /// Fitted `K` from the first 10%.
    pub gronwall_k_fitted: f64,
    /// `K / max_t [d/dt‖w‖₀² / (‖f_Λ‖₀² + ‖w‖₀²)]` (≥ 1 passes).
    pub gronwall_differential_margin: f64,
    /// `min_t [‖w₀‖² e^{Kt} + ∫ e^{K(t−τ)}K‖f‖²] / ‖w(t)‖²` (≥ 1 passes).
    pub gronwall_margin: f64,
    /// Per-frame rows.
    pub rows: Vec<AuditRow>,
}

impl EnergyAudit {
    /// True when the fitted energy bound and the integrated Gronwall bound
    /// both hold (the differential ratio is reported as a diagnostic).
    pub fn pass(&self) -> bool {
        !self.violated && self.gronwall_margin >= 1.0 - 1e-12
    }

    /// Writes the gnuplot-ready norms CSV.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,norm_0,norm_s,norm_s_minus_sigma,bound_rhs,margin")?;
        for r in &self.rows {
            writeln!(
                w,
                "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                r.t, r.norm0, r.norm_s, r.norm_s_sigma, r.bound_rhs, r.margin
            )?;
        }
        Ok(())
    }
}

/// Audits a trajectory against the energy bound
/// `‖v(t)‖²_{s−σ} ≤ C e^{κt}(‖u₀‖²_s + ∫‖f‖²_s)` with `κ = 1 + ‖u‖^{4p−3}_{4p−3}`
/// and the differential Gronwall inequality on `‖·‖₀²`.
///
/// `forcing_l2` gives `‖f_Λ(t)‖₀` at the frame times (zero if `None`);
/// `forcing_s` gives `‖f(t)‖_s`.
pub fn energy_audit(
    traj: &Trajectory,
    s: f64,
    sigma: f64,
    frozen: &FrozenState,
    coeffs: &CoefficientSet,
    forcing_l2: Option<&[f64]>,
    forcing_s: Option<&[f64]>,
) -> EnergyAudit {
    let g = traj.grid();
    let p = coeffs.p;
    let e = (4 * p - 3) as f64;
    let kappa = 1.0 + frozen.sup_sobolev(g, e).powf(e);
    let times = traj.times();
    let m = times.len();
    let t_end = *times.last().unwrap_or(&0.0);
    let window = 0.1 * t_end;
    let norm_s: Vec<f64> = traj.frames().iter().map(|f| g.sobolev_norm_of(f.values(), s, 1.0)).collect();
    let norm_ss: Vec<f64> = traj.frames().iter().map(|f| g.sobolev_norm_of(f.values(), s - sigma, 1.0)).collect();
    let norm0: Vec<f64> = traj.frames().iter().map(|f| f.l2_norm()).collect();
    let fs: Vec<f64> = forcing_s.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; m]);
    let f0: Vec<f64> = forcing_l2.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; m]);
    // cumulative trapezoid of ‖f‖_s²
    let mut int_f = vec![0.0; m];
    for i in 1..m {
        int_f[i] = int_f[i - 1] + 0.5 * (times[i] - times[i - 1]) * (fs[i].powi(2) + fs[i - 1].powi(2));
    }
    let base: Vec<f64> = (0..m).map(|i| (kappa * times[i]).exp() * (norm_s[0].powi(2) + int_f[i])).collect();
    let mut c_fit: f64 = 0.0;
    for i in 0..m {
        if times[i] <= window + 1e-15 && base[i] > 0.0 {
            c_fit = c_fit.max(norm_ss[i].powi(2) / base[i]);
        }
    }
    let mut rows = Vec::with_capacity(m);
    let mut margin = f64::INFINITY;
    for i in 0..m {
        let rhs = c_fit * base[i];
        let lhs = norm_ss[i].powi(2);
        let mg = if lhs > 0.0 { rhs / lhs } else { f64::INFINITY };
        margin = margin.min(mg);
        rows.push(AuditRow {
            t: times[i],
            norm0: norm0[i],
            norm_s: norm_s[i],
            norm_s_sigma: norm_ss[i],
            bound_rhs: rhs,
            margin: mg,
        });
    }
    let violated = margin < 1.0 - 1e-12;
    // Gronwall: d/dt‖w‖² ≤ K(‖f‖² + ‖w‖²)
    let rates: Vec<f64> = if traj.energy_rates.len() == m {
        traj.energy_rates.clone()
    } else {
        // fall back to 4th-order differences of ‖w‖²
        let sq: Vec<f64> = norm0.iter().map(|v| v * v).collect();
        finite_difference_series(times, &sq)
    };
    let ratio: Vec<f64> = (0..m)
        .map(|i| {
            let den = f0[i].powi(2) + norm0[i].powi(2);
            if den > 0.0 {
                rates[i] / den
            } else {
                0.0
            }
        })
        .collect();
    let mut k_fit: f64 = 0.0;
    for i in 0..m {
        if times[i] <= window + 1e-15 {
            k_fit = k_fit.max(ratio[i]);
        }
    }
    let k = k_fit.max(kappa);
    let max_ratio = ratio.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let diff_margin = if max_ratio <= 0.0 { f64::INFINITY } else { k / max_ratio };
    // integrated Gronwall bound
    let mut gm = f64::INFINITY;
    let mut acc = 0.0;
    for i in 0..m {
        if i > 0 {
            let dt = times[i] - times[i - 1];
            acc = acc * (k * dt).exp() + 0.5 * dt * k * (f0[i].powi(2) + f0[i - 1].powi(2) * (k * dt).exp());
        }
        let bound = norm0[0].powi(2) * (k * times[i]).exp() + acc;
        let lhs = norm0[i].powi(2);
        if lhs > 0.0 {
            gm = gm.min(bound / lhs);
        }
    }
    EnergyAudit {
        s,
        sigma,
        exponent_proxy: kappa,
        fitted_constant: c_fit,
        margin,
        violated,
        gronwall_k: k,
        gronwall_k_fitted: k_fit,
        gronwall_differential_margin: diff_margin,
        gronwall_margin: gm,
        rows,
    }
}

/// 4th-order finite-difference derivative of a sampled series (uniform or
/// not: local Lagrange on 5 nodes, one-sided at the ends).
pub fn finite_difference_series(times: &[f64], y: &[f64]) -> Vec<f64> {
    let m = times.len();
    if m < 2 {
        return vec![0.0; m];
    }
    let w = 5.min(m);
    (0..m)
        .map(|i| {
            let start = i.saturating_sub(w / 2).min(m - w);
            let nodes = &times[start..start + w];
            lagrange_derivative_weights(nodes, times[i]).iter().zip(&y[start..start + w]).map(|(c, v)| c * v).sum()
        })
        .collect()
}

/// Weights `c_a` with `Σ c_a f(t_a) = p'(t)` for the interpolant on `nodes`.
pub fn lagrange_derivative_weights(nodes: &[f64], t: f64) -> Vec<f64> {
    let k = nodes.len();
    (0..k)
        .map(|a| {
            let mut total = 0.0;
            for b in 0..k {
                if b == a {
                    continue;
                }
                let mut prod = 1.0 / (nodes[a] - nodes[b]);
                for c in 0..k {
                    if c != a && c != b {
                        prod *= (t - nodes[c]) / (nodes[a] - nodes[c]);
                    }
                }
                total += prod;
            }
            total
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_interpolation_is_exact_for_cubics() {
        let times: Vec<f64> = (0..7).map(|i| 0.1 * i as f64).collect();
        let f = |t: f64| C64::new(t * t * t - 2.0 * t, 0.5 * t * t);
        let frames: Vec<Vec<C64>> = times.iter().map(|&t| vec![f(t)]).collect();
        for &t in &[0.03, 0.25, 0.57, 0.6] {
            let v = interpolate_frames(&times, &frames, t)[0];
            assert!((v - f(t)).norm() < 1e-14);
        }
    }

    #[test]
    fn derivative_weights_exact_for_quartics() {
        let nodes = [0.0, 0.1, 0.2, 0.3, 0.4];
        let w = lagrange_derivative_weights(&nodes, 0.0);
        let d: f64 = w.iter().zip(&nodes).map(|(c, t)| c * t.powi(4)).sum();
        assert!(d.abs() < 1e-12);
        let w = lagrange_derivative_weights(&nodes, 0.2);
        let d: f64 = w.iter().zip(&nodes).map(|(c, t)| c * t.powi(3)).sum();
        assert!((d - 3.0 * 0.04).abs() < 1e-12);
    }
}
