//! Coefficient functions `a_p`, `a_j(t,x,w)`, the control function `γ(w)`,
//! the decay-condition checker and the composed / linearized coefficients.
//!
//! Coefficients are built from named, parameterized building blocks only:
//! each `a_j` is a finite sum of terms `c · φ(x) · w^k` with a complex scale
//! `c`, an x-profile `φ` and a power of `w` (so every `a_j` is holomorphic in
//! `w`). The linearization of the semilinear problem adds a grid-sampled
//! zero-order part, which is stored separately.

use crate::error::{PevoError, Result};
use crate::grid::{bracket_unchecked, Field, Grid, C64};
use crate::jet::{Jet, Smooth};
use serde::{Deserialize, Serialize};

/// Real x-profile of a coefficient term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    /// `1`.
    Constant,
    /// `⟨x⟩^{-exponent}` ("inverse_bracket_decay").
    InverseBracket {
        /// Decay exponent.
        exponent: f64,
    },
    /// `sech(x/width)`.
    Sech {
        /// Length scale.
        width: f64,
    },
    /// Long-wave speed `c₀(x) = (3/2)√(g/d(x))` over the depth
    /// `d(x) = d₀(1 + amplitude·sech(x/width))`.
    KdvSpeed {
        /// Gravity.
        g: f64,
        /// Reference depth.
        depth: f64,
        /// Relative bump amplitude.
        amplitude: f64,
        /// Bump width.
        width: f64,
    },
    /// Dispersion `c₀(x)σ(x)/3` with `σ = d³/3 − T d/(ρ g)`.
    KdvDispersion {
        /// Gravity.
        g: f64,
        /// Reference depth.
        depth: f64,
        /// Relative bump amplitude.
        amplitude: f64,
        /// Bump width.
        width: f64,
        /// Surface tension.
        tension: f64,
        /// Density.
        rho: f64,
    },
}

fn depth_jet(depth: f64, amplitude: f64, width: f64, x: &Jet) -> Jet {
    x.scale(1.0 / width).sech().scale(amplitude).add_scalar(1.0).scale(depth)
}

impl Smooth for Profile {
    fn eval(&self, x: f64) -> f64 {
        match *self {
            Profile::Constant => 1.0,
            Profile::InverseBracket { exponent } => bracket_unchecked(x, 1.0).powf(-exponent),
            Profile::Sech { width } => 1.0 / (x / width).cosh(),
            Profile::KdvSpeed { g, depth, amplitude, width } => {
                let d = depth * (1.0 + amplitude / (x / width).cosh());
                1.5 * (g / d).sqrt()
            }
            Profile::KdvDispersion { g, depth, amplitude, width, tension, rho } => {
                let d = depth * (1.0 + amplitude / (x / width).cosh());
                let c0 = 1.5 * (g / d).sqrt();
                let sigma = d.powi(3) / 3.0 - tension * d / (rho * g);
                c0 * sigma / 3.0
            }
        }
    }

    fn eval_jet(&self, x: &Jet) -> Jet {
        let k = x.order();
        match *self {
            Profile::Constant => Jet::constant(1.0, k),
            Profile::InverseBracket { exponent } => (x * x).add_scalar(1.0).powf(-0.5 * exponent),
            Profile::Sech { width } => x.scale(1.0 / width).sech(),
            Profile::KdvSpeed { g, depth, amplitude, width } => {
                depth_jet(depth, amplitude, width, x).scale(1.0 / g).powf(-0.5).scale(1.5)
            }
            Profile::KdvDispersion { g, depth, amplitude, width, tension, rho } => {
                let d = depth_jet(depth, amplitude, width, x);
                let c0 = d.scale(1.0 / g).powf(-0.5).scale(1.5);
                let sigma = &(&(&d * &d) * &d).scale(1.0 / 3.0) - &d.scale(tension / (rho * g));
                (&c0 * &sigma).scale(1.0 / 3.0)
            }
        }
    }
}

impl Profile {
    /// True when the profile depends on `x`.
    pub fn is_x_dependent(&self) -> bool {
        !matches!(self, Profile::Constant)
    }
}

/// One term `scale · profile(x) · w^power` of a lower-order coefficient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    /// Complex scale, serialized as `[re, im]`.
    pub scale: C64,
    /// x-profile.
    pub profile: Profile,
    /// Power of `w`.
    #[serde(default)]
    pub w_power: u32,
}

impl Term {
    /// `scale·profile(x)·w^power`.
    pub fn eval(&self, x: f64, w: C64) -> C64 {
        self.scale * self.profile.eval(x) * w.powu(self.w_power)
    }

    /// `∂_w` of the term.
    pub fn dw(&self, x: f64, w: C64) -> C64 {
        if self.w_power == 0 {
            C64::new(0.0, 0.0)
        } else {
            self.scale * self.profile.eval(x) * (self.w_power as f64) * w.powu(self.w_power - 1)
        }
    }
}

/// Principal coefficient `a_p(t,x) = scale · profile(x)` (real).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Principal {
    /// Real scale.
    pub scale: f64,
    /// x-profile (`constant` for the x-independent case).
    pub profile: Profile,
}

impl Principal {
    /// Evaluates `a_p(t,x)`.
    pub fn eval(&self, _t: f64, x: f64) -> f64 {
        self.scale * self.profile.eval(x)
    }
}

/// Shape of the control function `γ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GammaKind {
    /// `1`.
    Constant,
    /// `1 + |w|²`.
    OnePlusAbsSquared,
    /// `(1 + |w|²)^{power/2}`.
    OnePlusAbsPower {
        /// Growth power.
        power: f64,
    },
}

/// Control function `γ(w) = scale · base(w) > 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gamma {
    /// Positive scale.
    pub scale: f64,
    /// Shape.
    pub kind: GammaKind,
}

impl Gamma {
    /// `γ ≡ value`.
    pub fn constant(value: f64) -> Self {
        Gamma { scale: value, kind: GammaKind::Constant }
    }

    /// `γ(w) = 1 + |w|²`.
    pub fn one_plus_abs_squared() -> Self {
        Gamma { scale: 1.0, kind: GammaKind::OnePlusAbsSquared }
    }

    /// Evaluates `γ(w)`.
    pub fn eval(&self, w: C64) -> f64 {
        let base = match self.kind {
            GammaKind::Constant => 1.0,
            GammaKind::OnePlusAbsSquared => 1.0 + w.norm_sqr(),
            GammaKind::OnePlusAbsPower { power } => (1.0 + w.norm_sqr()).powf(0.5 * power),
        };
        self.scale * base
    }
}

/// Grid-sampled zero-order coefficient `b(t, x_j)` (stored per time frame).
#[derive(Clone, Debug)]
pub struct SampledCoefficient {
    /// Grid of the samples.
    pub grid: Grid,
    /// Frame times (strictly increasing).
    pub times: Vec<f64>,
    /// Samples per frame.
    pub frames: Vec<Vec<C64>>,
}

impl SampledCoefficient {
    /// Values at time `t` (cubic Lagrange interpolation in time).
    pub fn at(&self, t: f64) -> Vec<C64> {
        crate::linear::interpolate_frames(&self.times, &self.frames, t)
    }
}

/// The coefficient set of a p-evolution operator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoefficientSet {
    /// Evolution order `p ≥ 2`.
    pub p: u32,
    /// Principal coefficient `a_p`.
    pub principal: Principal,
    /// `lower[j]` lists the terms of `a_j`, `j = 0..p-1`.
    pub lower: Vec<Vec<Term>>,
    /// Control function `γ`.
    pub gamma: Gamma,
    /// Lower bound `C_p` for `a_p`.
    pub c_p: f64,
    /// Decay constant `C`.
    pub c: f64,
    /// Grid-sampled extra zero-order part (present after linearization).
    #[serde(skip)]
    pub sampled_zero_order: Option<SampledCoefficient>,
}

impl CoefficientSet {
    /// Empty set `a_p ≡ principal`, all lower coefficients zero.
    pub fn new(p: u32, principal: Principal, gamma: Gamma, c_p: f64, c: f64) -> Result<Self> {
        let set = CoefficientSet {
            p,
            principal,
            lower: vec![Vec::new(); p as usize],
            gamma,
            c_p,
            c,
            sampled_zero_order: None,
        };
        set.validate()?;
        Ok(set)
    }

    /// Adds a term to `a_j`.
    pub fn with_term(mut self, j: usize, term: Term) -> Result<Self> {
        if j >= self.p as usize {
            return Err(PevoError::Config(format!("lower-order index {j} must be below p = {}", self.p)));
        }
        self.lower[j].push(term);
        Ok(self)
    }

    /// Structural validation.
    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(PevoError::Config(format!("p must be ≥ 2, got {}", self.p)));
        }
        if self.lower.len() != self.p as usize {
            return Err(PevoError::Config(format!(
                "expected {} lower-order coefficient lists, got {}",
                self.p,
                self.lower.len()
            )));
        }
        if !(self.c_p > 0.0) || !(self.c > 0.0) {
            return Err(PevoError::Config("constants C_p and C must be positive".into()));
        }
        if !(self.gamma.scale > 0.0) {
            return Err(PevoError::Config("γ scale must be positive".into()));
        }
        Ok(())
    }

    /// `a_p(t,x)`.
    pub fn a_p(&self, t: f64, x: f64) -> f64 {
        self.principal.eval(t, x)
    }

    /// Closed-form part of `a_j(t,x,w)` (the sampled zero-order part, if any,
    /// is only available on grid nodes; see [`composed_coefficient`]).
    pub fn a_j(&self, j: usize, _t: f64, x: f64, w: C64) -> C64 {
        self.lower[j].iter().map(|term| term.eval(x, w)).sum()
    }

    /// Exact holomorphic derivative `∂_w a_j(t,x,w)`.
    pub fn da_j_dw(&self, j: usize, _t: f64, x: f64, w: C64) -> C64 {
        self.lower[j].iter().map(|term| term.dw(x, w)).sum()
    }

    /// `γ(w)`.
    pub fn gamma(&self, w: C64) -> f64 {
        self.gamma.eval(w)
    }

    /// True when no lower-order coefficient depends on `w`.
    pub fn is_w_independent(&self) -> bool {
        self.lower.iter().flatten().all(|t| t.w_power == 0)
    }

    /// True when `a_p` depends on `x` (the generalized principal part).
    pub fn has_x_dependent_principal(&self) -> bool {
        self.principal.profile.is_x_dependent()
    }

    /// True when no coefficient has a nonzero imaginary part.
    pub fn all_real(&self) -> bool {
        self.lower.iter().flatten().all(|t| t.scale.im == 0.0) && self.sampled_zero_order.is_none()
    }

    /// Replaces `a_j` by `s·a_j` and `γ` by `s·γ` (`s > 0`).
    pub fn scaled(&self, s: f64) -> CoefficientSet {
        let mut out = self.clone();
        for term in out.lower.iter_mut().flatten() {
            term.scale *= s;
        }
        out.gamma.scale *= s;
        if let Some(sz) = out.sampled_zero_order.as_mut() {
            for frame in &mut sz.frames {
                for v in frame.iter_mut() {
                    *v *= s;
                }
            }
        }
        out
    }

    /// Largest `|a_p|` over the grid nodes.
    pub fn max_abs_a_p(&self, grid: &Grid, t: f64) -> f64 {
        grid.x().iter().map(|&x| self.a_p(t, x).abs()).fold(0.0, f64::max)
    }
}

/// Samples `x_j ↦ a_j(t, x_j, u(x_j))` (plus the sampled zero-order part for
/// `j = 0` when present).
pub fn composed_coefficient(coeffs: &CoefficientSet, j: usize, u: &Field, t: f64) -> Result<Field> {
    if j >= coeffs.p as usize {
        return Err(PevoError::ParameterDomain(format!("coefficient index {j} ≥ p")));
    }
    let grid = u.grid();
    let mut vals: Vec<C64> = grid.x().iter().zip(u.values()).map(|(&x, &w)| coeffs.a_j(j, t, x, w)).collect();
    if j == 0 {
        if let Some(sz) = &coeffs.sampled_zero_order {
            if sz.grid != *grid {
                return Err(PevoError::Structural("sampled coefficient on another grid".into()));
            }
            for (v, s) in vals.iter_mut().zip(sz.at(t)) {
                *v += s;
            }
        }
    }
    Field::new(grid, vals)
}

/// Linearized coefficient set of `P̃_u(D)`: `ã_j = a_j` for `j ≥ 1` and
/// `ã_0 = a_0 + Σ_h ∂_w a_h(t,x,u) D_x^h u` (the sum is stored as a sampled
/// zero-order part on the trajectory's frames).
pub fn linearized_coefficients(coeffs: &CoefficientSet, u: &crate::linear::Trajectory) -> Result<CoefficientSet> {
    let grid = u.grid().clone();
    let mut frames = Vec::with_capacity(u.len());
    for (t, field) in u.times().iter().zip(u.frames()) {
        let mut acc = vec![C64::new(0.0, 0.0); grid.n()];
        for h in 0..coeffs.p as usize {
            if coeffs.lower[h].iter().all(|term| term.w_power == 0) {
                continue;
            }
            let dhu = grid.derivative_of(field.values(), h as u32);
            for (i, (&x, &w)) in grid.x().iter().zip(field.values()).enumerate() {
                acc[i] += coeffs.da_j_dw(h, *t, x, w) * dhu[i];
            }
        }
        if let Some(sz) = &coeffs.sampled_zero_order {
            for (a, s) in acc.iter_mut().zip(sz.at(*t)) {
                *a += s;
            }
        }
        frames.push(acc);
    }
    let mut out = coeffs.clone();
    let all_zero = frames.iter().flatten().all(|v| *v == C64::new(0.0, 0.0));
    out.sampled_zero_order = if all_zero && coeffs.sampled_zero_order.is_none() {
        None
    } else {
        Some(SampledCoefficient { grid, times: u.times().to_vec(), frames })
    };
    Ok(out)
}

// ---------------------------------------------------------------------------
// Decay-condition checker
// ---------------------------------------------------------------------------

/// Sample lattices and derivative caps for [`check_conditions`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleSpec {
    /// Time samples.
    pub times: Vec<f64>,
    /// Spatial samples.
    pub xs: Vec<f64>,
    /// Samples of the state variable `w`.
    pub ws: Vec<C64>,
    /// Largest x-derivative order probed (further capped by each condition).
    pub beta_max: u32,
    /// Largest w-derivative order probed.
    pub gamma_max: u32,
    /// Relative slack in the verdict comparison (guards exact saturation
    /// against roundoff).
    pub rtol: f64,
}

impl SampleSpec {
    /// Uniform x-lattice of `nx` points on `[-extent, extent)`, `t = 0`, and a
    /// `w`-lattice with real and imaginary parts in `{-1, -½, 0, ½, 1}`.
    pub fn standard(extent: f64, nx: usize, p: u32) -> Self {
        let xs = (0..nx).map(|i| -extent + 2.0 * extent * i as f64 / nx as f64).collect();
        let levels = [-1.0, -0.5, 0.0, 0.5, 1.0];
        let ws = levels.iter().flat_map(|&re| levels.iter().map(move |&im| C64::new(re, im))).collect();
        SampleSpec { times: vec![0.0], xs, ws, beta_max: 2 * p - 1, gamma_max: 2, rtol: 1e-8 }
    }

    /// Same lattice with real `w` only.
    pub fn real_w(mut self) -> Self {
        self.ws.retain(|w| w.im == 0.0);
        self
    }
}

/// Location of the worst ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    /// Time.
    pub t: f64,
    /// Position.
    pub x: f64,
    /// State value, `[re, im]`.
    pub w: C64,
    /// x-derivative order.
    pub beta: u32,
    /// w-derivative order.
    pub gamma_order: u32,
    /// Coefficient index `j` (or `p` for the principal part).
    pub j: u32,
}

/// Verdict for one condition.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionVerdict {
    /// Condition name (`ap`, `im`, `re`, `dew`, `Rea2`, `a2`, `a1`, `ap_odd`, …).
    pub name: String,
    /// True when the worst ratio stays within the bound.
    pub pass: bool,
    /// Worst ratio `|derivative|·⟨x⟩^{exponent}/γ(w)` over the lattice.
    pub worst_ratio: f64,
    /// Bound the ratio is compared with.
    pub bound: f64,
    /// Smallest constant that would pass (equals the worst ratio).
    pub fitted_constant: f64,
    /// Where the worst ratio occurs.
    pub witness: Option<Witness>,
    /// False when the condition has no instances for this `p`.
    pub applicable: bool,
}

/// Per-condition verdicts plus lattice extents.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecayReport {
    /// Verdicts in a fixed order.
    pub conditions: Vec<ConditionVerdict>,
    /// `[min x, max x]` of the lattice.
    pub x_extent: [f64; 2],
    /// Number of `w` samples.
    pub w_samples: usize,
    /// Number of time samples.
    pub t_samples: usize,
}

impl DecayReport {
    /// True when every applicable condition passes.
    pub fn all_pass(&self) -> bool {
        self.conditions.iter().all(|c| c.pass)
    }

    /// Looks a verdict up by name.
    pub fn get(&self, name: &str) -> Option<&ConditionVerdict> {
        self.conditions.iter().find(|c| c.name == name)
    }

    /// Names of failing conditions.
    pub fn failures(&self) -> Vec<String> {
        self.conditions.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect()
    }
}

struct Acc {
    name: String,
    bound: f64,
    rtol: f64,
    worst: f64,
    witness: Option<Witness>,
    applicable: bool,
}

impl Acc {
    fn new(name: &str, bound: f64, rtol: f64) -> Self {
        Acc { name: name.into(), bound, rtol, worst: 0.0, witness: None, applicable: false }
    }

    fn offer(&mut self, ratio: f64, w: Witness) -> Result<()> {
        if !ratio.is_finite() {
            return Err(PevoError::Input(format!(
                "non-finite coefficient evaluation in condition {} at t={}, x={}, w={}",
                self.name, w.t, w.x, w.w
            )));
        }
        self.applicable = true;
        if self.witness.is_none() || ratio > self.worst {
            self.worst = ratio;
            self.witness = Some(w);
        }
        Ok(())
    }

    fn finish(self) -> ConditionVerdict {
        let pass = !self.applicable || self.worst <= self.bound * (1.0 + self.rtol);
        ConditionVerdict {
            name: self.name,
            pass,
            worst_ratio: self.worst,
            bound: self.bound,
            fitted_constant: self.worst,
            witness: self.witness,
            applicable: self.applicable,
        }
    }
}

/// Centered 4th-order stencil for the `n`-th derivative (iterated first
/// derivative), as coefficients over offsets `-2n..=2n`.
fn iterated_stencil(n: u32) -> Vec<f64> {
    let base = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
    let mut s = vec![1.0];
    for _ in 0..n {
        let mut next = vec![0.0; s.len() + 4];
        for (i, a) in s.iter().enumerate() {
            for (k, b) in base.iter().enumerate() {
                next[i + k] += a * b;
            }
        }
        s = next;
    }
    s
}

/// Step for a derivative of order `n` balancing truncation and roundoff.
fn fd_step(n: u32, scale: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    f64::EPSILON.powf(1.0 / (n as f64 + 4.0)) * scale
}

/// `(∂_x^β ∂_{w,d}^γ f)(x, w)` by iterated centered differences; `d` is the
/// probe direction (`1` or `i`).
fn mixed_derivative<F: Fn(f64, C64) -> C64>(f: &F, x: f64, w: C64, beta: u32, gamma: u32, dir: C64) -> C64 {
    let sx = iterated_stencil(beta);
    let sw = iterated_stencil(gamma);
    let hx = fd_step(beta, 1.0);
    let hw = if gamma == 1 { 1e-4 * (1.0 + w.norm()) } else { fd_step(gamma, 1.0 + w.norm()) };
    let ox = 2 * beta as i64;
    let ow = 2 * gamma as i64;
    let mut acc = C64::new(0.0, 0.0);
    for (a, &cx) in sx.iter().enumerate() {
        if cx == 0.0 {
            continue;
        }
        let xx = x + (a as i64 - ox) as f64 * hx;
        for (b, &cw) in sw.iter().enumerate() {
            if cw == 0.0 {
                continue;
            }
            let ww = w + dir * ((b as i64 - ow) as f64 * hw);
            acc += f(xx, ww) * (cx * cw);
        }
    }
    let mut denom = 1.0;
    if beta > 0 {
        denom *= hx.powi(beta as i32);
    }
    if gamma > 0 {
        denom *= hw.powi(gamma as i32);
    }
    acc / denom
}

/// `D_x^β = (-i)^β ∂_x^β` factor.
fn d_factor(beta: u32) -> C64 {
    C64::new(0.0, -1.0).powu(beta)
}

/// Evaluates the decay and lower-bound conditions of the well-posedness result (and of its
/// x-dependent-principal generalization) on the sample lattice.
pub fn check_conditions(coeffs: &CoefficientSet, spec: &SampleSpec) -> Result<DecayReport> {
    coeffs.validate()?;
    let p = coeffs.p as i64;
    let pm1 = (p - 1) as f64;
    let c = coeffs.c;
    let rtol = spec.rtol;
    let mut out = Vec::new();

    // (ap): a_p ≥ C_p, reported as the ratio C_p / a_p against 1.
    let mut ap = Acc::new("ap", 1.0, rtol);
    for &t in &spec.times {
        for &x in &spec.xs {
            let a = coeffs.a_p(t, x);
            let ratio = if a > 0.0 { coeffs.c_p / a } else { f64::MAX };
            ap.offer(ratio, Witness { t, x, w: C64::new(0.0, 0.0), beta: 0, gamma_order: 0, j: p as u32 })?;
        }
    }
    out.push(ap.finish());

    // x-dependent principal part: odd derivatives decay like ⟨x⟩^{-(p-[β/2])/(p-1)}.
    let mut ap_odd = Acc::new("ap_odd", c, rtol);
    if coeffs.has_x_dependent_principal() {
        let f = |x: f64, _w: C64| C64::new(coeffs.a_p(0.0, x), 0.0);
        for &t in &spec.times {
            for &x in &spec.xs {
                let mut beta = 1u32;
                while ((beta / 2) as i64) < p && beta <= spec.beta_max.max(1) {
                    let d = mixed_derivative(&f, x, C64::new(0.0, 0.0), beta, 0, C64::new(1.0, 0.0));
                    let expo = (p - (beta / 2) as i64) as f64 / pm1;
                    let ratio = d.norm() * bracket_unchecked(x, 1.0).powf(expo);
                    ap_odd.offer(ratio, Witness { t, x, w: C64::new(0.0, 0.0), beta, gamma_order: 0, j: p as u32 })?;
                    beta += 2;
                }
            }
        }
    }
    out.push(ap_odd.finish());

    let mut im = Acc::new("im", c, rtol);
    let mut re = Acc::new("re", c, rtol);
    let mut dew = Acc::new("dew", c, rtol);
    let mut rea2 = Acc::new("Rea2", c, rtol);
    let mut a2 = Acc::new("a2", c, rtol);
    let mut a1 = Acc::new("a1", c, rtol);
    let dirs = [C64::new(1.0, 0.0), C64::new(0.0, 1.0)];

    for &t in &spec.times {
        for &x in &spec.xs {
            let bx = bracket_unchecked(x, 1.0);
            for &w in &spec.ws {
                let gw = coeffs.gamma(w);
                let wit = |beta: u32, gamma_order: u32, j: usize| Witness { t, x, w, beta, gamma_order, j: j as u32 };
                for j in 3..p {
                    let ju = j as usize;
                    let f = |xx: f64, ww: C64| coeffs.a_j(ju, t, xx, ww);
                    // (im)
                    let bmax = (2 * j - 1).min(spec.beta_max as i64) as u32;
                    for beta in 0..=bmax {
                        let d = mixed_derivative(&f, x, w, beta, 0, dirs[0]) * d_factor(beta);
                        let expo = (j - (beta / 2) as i64) as f64 / pm1;
                        im.offer(d.im.abs() * bx.powf(expo) / gw, wit(beta, 0, ju))?;
                    }
                    // (re)
                    for beta in 0..=((j - 1) as u32).min(spec.beta_max) {
                        let d = mixed_derivative(&f, x, w, beta, 0, dirs[0]) * d_factor(beta);
                        re.offer(d.re.abs() / gw, wit(beta, 0, ju))?;
                    }
                    // (dew)
                    for gamma in 1..=spec.gamma_max {
                        for beta in 0..=spec.beta_max {
                            if ((gamma + beta) / 2) as i64 > j - 1 {
                                break;
                            }
                            let expo = (j - ((gamma + beta) / 2) as i64) as f64 / pm1;
                            let m = dirs
                                .iter()
                                .map(|&d| mixed_derivative(&f, x, w, beta, gamma, d).norm())
                                .fold(0.0, f64::max);
                            dew.offer(m * bx.powf(expo) / gw, wit(beta, gamma, ju))?;
                        }
                    }
                }
                if p >= 3 {
                    let a2v = coeffs.a_j(2, t, x, w);
                    rea2.offer(a2v.re.abs() / gw, wit(0, 0, 2))?;
                    a2.offer(a2v.im.abs() * bx.powf(2.0 / pm1) / gw, wit(0, 0, 2))?;
                }
                // (a1)
                let mut lhs = coeffs.a_j(1, t, x, w).im.abs();
                if p >= 3 {
                    let f2 = |xx: f64, ww: C64| coeffs.a_j(2, t, xx, ww);
                    let dx = mixed_derivative(&f2, x, w, 1, 0, dirs[0]) * d_factor(1);
                    let dw = dirs.iter().map(|&d| mixed_derivative(&f2, x, w, 0, 1, d).norm()).fold(0.0, f64::max);
                    lhs += dx.im.abs() + dw;
                }
                a1.offer(lhs * bx.powf(1.0 / pm1) / gw, wit(0, 0, 1))?;
            }
        }
    }
    out.extend([im.finish(), re.finish(), dew.finish(), rea2.finish(), a2.finish(), a1.finish()]);

    let (xmin, xmax) = spec.xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    Ok(DecayReport { conditions: out, x_extent: [xmin, xmax], w_samples: spec.ws.len(), t_samples: spec.times.len() })
}

/// Checks the composed-coefficient bounds along a fixed state `u`:
/// `|Re D_x^β a_j(t,x,u)| ≤ C′γ(u)(1+‖u‖_{1+β}^β)` and the decayed imaginary
/// analogue with weight `⟨x⟩^{(j-[β/2])/(p-1)}`. Derivatives are spectral;
/// the fitted `C′` is the worst ratio, compared against `c_prime`.
pub fn check_composed_bounds(
    coeffs: &CoefficientSet,
    u: &Field,
    beta_max: u32,
    c_prime: f64,
    t: f64,
) -> Result<DecayReport> {
    let grid = u.grid();
    let p = coeffs.p as i64;
    let pm1 = (p - 1) as f64;
    let mut out = Vec::new();
    for j in 1..coeffs.p as usize {
        let composed = composed_coefficient(coeffs, j, u, t)?;
        for beta in 0..=beta_max {
            if (beta / 2) as i64 > j as i64 - 1 {
                break;
            }
            let growth = if beta == 0 {
                1.0
            } else {
                1.0 + grid.sobolev_norm_of(u.values(), 1.0 + beta as f64, 1.0).powi(beta as i32)
            };
            let d = grid.derivative_of(composed.values(), beta);
            let mut re_acc = Acc::new(&format!("euna_j{j}_b{beta}"), c_prime, 1e-8);
            let mut im_acc = Acc::new(&format!("edue_j{j}_b{beta}"), c_prime, 1e-8);
            let expo = (j as i64 - (beta / 2) as i64) as f64 / pm1;
            for (i, (&x, &w)) in grid.x().iter().zip(u.values()).enumerate() {
                let gw = coeffs.gamma(w) * growth;
                let wit = Witness { t, x, w, beta, gamma_order: 0, j: j as u32 };
                re_acc.offer(d[i].re.abs() / gw, wit.clone())?;
                im_acc.offer(d[i].im.abs() * bracket_unchecked(x, 1.0).powf(expo) / gw, wit)?;
            }
            out.push(re_acc.finish());
            out.push(im_acc.finish());
        }
    }
    let x = grid.x();
    Ok(DecayReport { conditions: out, x_extent: [x[0], x[x.len() - 1]], w_samples: grid.n(), t_samples: 1 })
}
