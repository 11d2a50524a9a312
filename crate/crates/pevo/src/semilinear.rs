//! The semilinear Cauchy problem in integral form: the map `T`, its Fréchet
//! derivative, the solve map `S`, the Taylor seed, the mollified target and
//! the Newton loop, plus residual diagnostics.
//!
//! With the generator `A(t,u) = i a_p D^p + Σ_j i a_j(t,x,u) D^j`,
//!
//! `T(u)(t) = u(t) − u₀ + ∫_0^t (A(s,u(s)) u(s) − i f(s)) ds`,
//!
//! which vanishes exactly when `D_t u + a_p D^p u + Σ a_j(u) D^j u = f` with
//! `u(0) = u₀`. Time integrals use a cumulative fourth-order rule on the
//! uniform time grid shared by all trajectories of a problem.

use crate::coefficients::{linearized_coefficients, CoefficientSet};
use crate::error::{PevoError, Result};
use crate::grid::{Field, Grid, C64, I};
use crate::jet::glue;
use crate::linear::{
    lagrange_derivative_weights, solve_linear, Forcing, FrozenState, GeneratorCoefficients, LinearProblem, Trajectory,
};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

/// Starting iterate of the Newton loop.
#[derive(Clone, Debug)]
pub enum Seed {
    /// The linear-in-time Taylor seed.
    Taylor,
    /// `u ≡ 0`.
    Zero,
    /// `u ≡ u₀`.
    Initial,
    /// User trajectory on the problem's time grid.
    Custom(Trajectory),
}

impl Seed {
    /// Short name for reports.
    pub fn name(&self) -> &'static str {
        match self {
            Seed::Taylor => "taylor",
            Seed::Zero => "zero",
            Seed::Initial => "initial",
            Seed::Custom(_) => "custom",
        }
    }
}

/// Right-hand side of the Newton equation `T(u) = target`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// The mollified target `φ_ε` built from the Taylor seed.
    Mollified,
    /// `0` (the Cauchy problem on the whole horizon).
    Zero,
}

/// Semilinear Cauchy problem `P_u(D)u = f`, `u(0) = u₀`.
#[derive(Clone, Debug)]
pub struct SemilinearProblem {
    /// Coefficients.
    pub coeffs: CoefficientSet,
    /// Initial datum.
    pub u0: Field,
    /// Forcing.
    pub forcing: Forcing,
    /// Horizon `T*`.
    pub horizon: f64,
    /// Time step of the shared time grid (`T*/Δt` integral).
    pub dt: f64,
    /// Sobolev index `s` (graded residuals are recorded for `n ≤ s`).
    pub s: u32,
    /// Newton tolerance on `⦀T(u) − target⦀₀`.
    pub tol: f64,
    /// Maximum Newton iterations.
    pub max_iter: usize,
    /// Mollifier parameter `ε` (`None`: `T*/8`).
    pub epsilon: Option<f64>,
    /// Target.
    pub target: TargetKind,
    /// Starting iterate.
    pub seed: Seed,
    /// Zero the top third of the spectrum of every Newton update.
    pub smoothing: bool,
}

impl SemilinearProblem {
    /// Problem with defaults: zero forcing, `s = 0`, `tol = 1e-6`, 10
    /// iterations, `ε = T*/8`, mollified target, Taylor seed, no smoothing.
    pub fn new(coeffs: CoefficientSet, u0: Field, horizon: f64, dt: f64) -> Self {
        SemilinearProblem {
            coeffs,
            u0,
            forcing: Forcing::Zero,
            horizon,
            dt,
            s: 0,
            tol: 1e-6,
            max_iter: 10,
            epsilon: None,
            target: TargetKind::Mollified,
            seed: Seed::Taylor,
            smoothing: false,
        }
    }

    /// Grid.
    pub fn grid(&self) -> &Grid {
        self.u0.grid()
    }

    /// Number of steps of the time grid.
    pub fn steps(&self) -> Result<usize> {
        if !(self.horizon > 0.0) || !(self.dt > 0.0) {
            return Err(PevoError::Config("horizon and Δt must be positive".into()));
        }
        let k = (self.horizon / self.dt).round();
        if k < 1.0 || (k * self.dt - self.horizon).abs() > 1e-9 * self.horizon {
            return Err(PevoError::Config(format!("T*/Δt must be integral (T* = {}, Δt = {})", self.horizon, self.dt)));
        }
        Ok(k as usize)
    }

    /// The time grid `t_k = k T*/K`.
    pub fn times(&self) -> Result<Vec<f64>> {
        let k = self.steps()?;
        Ok((0..=k).map(|i| self.horizon * i as f64 / k as f64).collect())
    }

    /// `ε` in use.
    pub fn epsilon(&self) -> f64 {
        self.epsilon.unwrap_or(self.horizon / 8.0)
    }

    fn validate(&self) -> Result<()> {
        self.coeffs.validate()?;
        if !(self.tol > 0.0) {
            return Err(PevoError::Config("tolerance must be positive".into()));
        }
        let eps = self.epsilon();
        if self.target == TargetKind::Mollified && !(eps > 0.0 && eps < self.horizon / 2.0) {
            return Err(PevoError::Config(format!("ε = {eps} must lie in (0, T*/2)")));
        }
        self.steps()?;
        Ok(())
    }

    fn forcing_raw(&self, t: f64) -> Option<Vec<C64>> {
        self.forcing.at(t).map(|f| f.into_values())
    }

    fn check_traj(&self, u: &Trajectory) -> Result<()> {
        let times = self.times()?;
        if *u.grid() != *self.grid() {
            return Err(PevoError::Structural("trajectory on another grid".into()));
        }
        if u.len() != times.len() || u.times().iter().zip(&times).any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + b.abs()))
        {
            return Err(PevoError::Structural("trajectory is not sampled on the problem's time grid".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Quadrature and time differences
// ---------------------------------------------------------------------------

/// Cumulative integrals `∫_{t_0}^{t_k} g` of frames on a uniform grid with
/// step `dt`: fourth-order interval rules (`(−1,13,13,−1)/24` inside, the
/// one-sided `(9,19,−5,1)/24` on the first and last intervals); trapezoid
/// when fewer than four nodes exist.
pub fn cumulative_integral(frames: &[Vec<C64>], dt: f64) -> Vec<Vec<C64>> {
    let m = frames.len();
    if m == 0 {
        return vec![];
    }
    let n = frames[0].len();
    let mut out = vec![vec![C64::new(0.0, 0.0); n]; m];
    for k in 0..m.saturating_sub(1) {
        let w: Vec<(usize, f64)> = if m < 4 {
            vec![(k, 0.5), (k + 1, 0.5)]
        } else if k == 0 {
            vec![(0, 9.0 / 24.0), (1, 19.0 / 24.0), (2, -5.0 / 24.0), (3, 1.0 / 24.0)]
        } else if k + 2 >= m {
            vec![(k + 1, 9.0 / 24.0), (k, 19.0 / 24.0), (k - 1, -5.0 / 24.0), (k - 2, 1.0 / 24.0)]
        } else {
            vec![(k - 1, -1.0 / 24.0), (k, 13.0 / 24.0), (k + 1, 13.0 / 24.0), (k + 2, -1.0 / 24.0)]
        };
        let (prev, rest) = out.split_at_mut(k + 1);
        let next = &mut rest[0];
        next.copy_from_slice(&prev[k]);
        for (idx, c) in w {
            for (o, v) in next.iter_mut().zip(&frames[idx]) {
                *o += v * (c * dt);
            }
        }
    }
    out
}

/// Fourth-order time derivative `∂_t` of frames (five-point Lagrange stencils,
/// one-sided at the ends).
pub fn time_derivative(times: &[f64], frames: &[Vec<C64>]) -> Vec<Vec<C64>> {
    let m = times.len();
    let n = frames.first().map_or(0, |f| f.len());
    if m < 2 {
        return vec![vec![C64::new(0.0, 0.0); n]; m];
    }
    let w = 5.min(m);
    (0..m)
        .map(|i| {
            let start = i.saturating_sub(w / 2).min(m - w);
            let c = lagrange_derivative_weights(&times[start..start + w], times[i]);
            let mut out = vec![C64::new(0.0, 0.0); n];
            for (a, ca) in c.iter().enumerate() {
                for (o, v) in out.iter_mut().zip(&frames[start + a]) {
                    *o += v * *ca;
                }
            }
            out
        })
        .collect()
}

/// Graded seminorm `⦀g⦀_n = sup_t (‖g(t)‖_n + ‖D_t g(t)‖_n)`.
pub fn seminorm(g: &Trajectory, n: f64) -> f64 {
    let grid = g.grid();
    let raw = g.raw_frames();
    let d = time_derivative(g.times(), &raw);
    raw.iter()
        .zip(&d)
        .map(|(v, dv)| grid.sobolev_norm_of(v, n, 1.0) + grid.sobolev_norm_of(dv, n, 1.0))
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// T, DT, S
// ---------------------------------------------------------------------------

/// Integrand frames `A(t,u(t)) u(t) − i f(t)` of `T`.
fn t_integrand(u: &Trajectory, problem: &SemilinearProblem) -> Result<Vec<Vec<C64>>> {
    let grid = u.grid();
    u.times()
        .iter()
        .zip(u.frames())
        .map(|(&t, f)| {
            let gen = GeneratorCoefficients::assemble(&problem.coeffs, f, t, None)?;
            let mut a = gen.apply(grid, f.values());
            if let Some(fv) = problem.forcing_raw(t) {
                for (o, v) in a.iter_mut().zip(fv) {
                    *o -= I * v;
                }
            }
            Ok(a)
        })
        .collect()
}

/// `T(u)(t) = u(t) − u₀ + ∫_0^t (A(s,u)u − i f) ds`.
pub fn evaluate_t(u: &Trajectory, problem: &SemilinearProblem) -> Result<Trajectory> {
    problem.check_traj(u)?;
    let integrand = t_integrand(u, problem)?;
    let ints = cumulative_integral(&integrand, problem.horizon / (u.len() - 1).max(1) as f64);
    let grid = u.grid();
    let frames = u
        .frames()
        .iter()
        .zip(ints)
        .map(|(f, int)| {
            let v: Vec<C64> =
                f.values().iter().zip(problem.u0.values()).zip(int).map(|((a, b), c)| a - b + c).collect();
            Field::new(grid, v)
        })
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(u.times().to_vec(), frames)
}

/// Linearized generator frames `Ã(t) v(t)` with coefficients frozen at `u`.
fn linearized_action(lin: &CoefficientSet, u: &Trajectory, v: &Trajectory) -> Result<Vec<Vec<C64>>> {
    let grid = u.grid();
    u.times()
        .iter()
        .zip(u.frames().iter().zip(v.frames()))
        .map(|(&t, (uf, vf))| {
            let gen = GeneratorCoefficients::assemble(lin, uf, t, None)?;
            Ok(gen.apply(grid, vf.values()))
        })
        .collect()
}

/// `DT(u)v = v + ∫_0^t Ã(s) v ds` where `Ã` uses `ã_j = a_j(·,u)` for
/// `j ≥ 1` and `ã_0 = a_0(·,u) + Σ_h ∂_w a_h(·,u) D^h u`.
pub fn frechet_dt(u: &Trajectory, v: &Trajectory, problem: &SemilinearProblem) -> Result<Trajectory> {
    problem.check_traj(u)?;
    problem.check_traj(v)?;
    let lin = linearized_coefficients(&problem.coeffs, u)?;
    let act = linearized_action(&lin, u, v)?;
    let ints = cumulative_integral(&act, problem.horizon / (u.len() - 1).max(1) as f64);
    let grid = u.grid();
    let frames = v
        .frames()
        .iter()
        .zip(ints)
        .map(|(f, int)| {
            let vals: Vec<C64> = f.values().iter().zip(int).map(|(a, b)| a + b).collect();
            Field::new(grid, vals)
        })
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(v.times().to_vec(), frames)
}

/// `S(u,h)`: the solution `v` of the linearized problem `DT(u)v = h`,
/// i.e. `∂_t v = −Ã v + ∂_t h`, `v(0) = h(0)`. Computed as `v = h + z` with
/// `∂_t z = −Ã(z + h)`, `z(0) = 0` (no time derivative of `h` is needed).
pub fn solve_s(u: &Trajectory, h: &Trajectory, problem: &SemilinearProblem) -> Result<Trajectory> {
    problem.check_traj(u)?;
    problem.check_traj(h)?;
    let grid = u.grid();
    if h.frames().iter().all(|f| f.values().iter().all(|v| *v == C64::new(0.0, 0.0))) {
        return Ok(h.clone());
    }
    let lin = linearized_coefficients(&problem.coeffs, u)?;
    // forcing i f = −Ã h  ⇒  f = i Ã h
    let ah = linearized_action(&lin, u, h)?;
    let f_frames: Vec<Field> =
        ah.into_iter().map(|v| Field::new(grid, v.into_iter().map(|z| I * z).collect())).collect::<Result<_>>()?;
    let forcing = Trajectory::new(u.times().to_vec(), f_frames)?;
    let lp = LinearProblem {
        coeffs: lin,
        frozen: FrozenState::Trajectory(u.clone()),
        forcing: Forcing::Sampled(forcing),
        u0: Field::zeros(grid),
        horizon: problem.horizon,
        dt: Some(problem.dt),
        save_every: 1,
        s: 0.0,
        layer: None,
    };
    let z = solve_linear(&lp)?;
    problem.check_traj(&z)?;
    h.axpy(C64::new(1.0, 0.0), &z)
}

/// Taylor seed `w(t) = u₀ − i t (a_p D^p u₀ + Σ a_j(0,x,u₀) D^j u₀ − f(0))`.
pub fn taylor_seed(problem: &SemilinearProblem) -> Result<Trajectory> {
    let times = problem.times()?;
    let grid = problem.grid();
    let gen = GeneratorCoefficients::assemble(&problem.coeffs, &problem.u0, 0.0, None)?;
    // A u₀ − i f(0) = i(a_p D^p u₀ + … − f(0))
    let mut slope = gen.apply(grid, problem.u0.values());
    if let Some(f) = problem.forcing_raw(0.0) {
        for (o, v) in slope.iter_mut().zip(f) {
            *o -= I * v;
        }
    }
    Trajectory::from_fn(times, |t| {
        let vals = problem.u0.values().iter().zip(&slope).map(|(a, b)| a - b * t).collect();
        Field::from_raw(grid, vals)
    })
}

/// `ρ(s) = 0` for `s ≤ 1`, `1` for `s ≥ 2` (smooth glue in between).
pub fn rho(s: f64) -> f64 {
    glue(s - 1.0)
}

/// Mollified target `φ_ε(t) = ∫_0^t ρ(s/ε) ∂_t(Tw)(s) ds`; frames at
/// `t ≤ ε` are exactly zero.
pub fn mollified_target(w: &Trajectory, epsilon: f64, problem: &SemilinearProblem) -> Result<Trajectory> {
    problem.check_traj(w)?;
    if !(epsilon > 0.0) {
        return Err(PevoError::ParameterDomain(format!("ε must be positive, got {epsilon}")));
    }
    let times = w.times();
    let raw = w.raw_frames();
    // ∂_t T w = ∂_t w + A(t,w) w − i f
    let dw = time_derivative(times, &raw);
    let g = t_integrand(w, problem)?;
    let n = problem.grid().n();
    let integrand: Vec<Vec<C64>> = times
        .iter()
        .zip(dw.iter().zip(&g))
        .map(|(&t, (a, b))| {
            let r = rho(t / epsilon);
            a.iter().zip(b).map(|(x, y)| (x + y) * r).collect()
        })
        .collect();
    let k0 = times.partition_point(|&t| t <= epsilon).saturating_sub(1);
    let mut frames = vec![vec![C64::new(0.0, 0.0); n]; times.len()];
    let dt = problem.horizon / (times.len() - 1).max(1) as f64;
    let tail = cumulative_integral(&integrand[k0..], dt);
    for (i, f) in tail.into_iter().enumerate() {
        frames[k0 + i] = f;
    }
    let grid = problem.grid();
    let fields = frames.into_iter().map(|v| Field::new(grid, v)).collect::<Result<Vec<_>>>()?;
    Trajectory::new(times.to_vec(), fields)
}

// ---------------------------------------------------------------------------
// Newton
// ---------------------------------------------------------------------------

/// One Newton iteration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NewtonIteration {
    /// Iteration index (0 = seed).
    pub index: usize,
    /// `⦀T(u_n) − target⦀₀`.
    pub residual: f64,
    /// `⦀T(u_n) − target⦀_n` for `n = 0..=s`.
    pub graded: Vec<f64>,
    /// `sup_t ‖u_{n+1} − u_n‖₀` (zero for the last record).
    pub update_norm: f64,
}

/// Report of [`newton_solve`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NewtonReport {
    /// Seed name.
    pub seed: String,
    /// Target kind.
    pub target: TargetKind,
    /// `ε` (when the target is mollified).
    pub epsilon: Option<f64>,
    /// Per-iteration records.
    pub iterations: Vec<NewtonIteration>,
    /// Converged within tolerance.
    pub converged: bool,
    /// Reason when not converged.
    pub failure: Option<String>,
    /// Residual ratios `r_n / r_{n+1}`.
    pub contraction_factors: Vec<f64>,
    /// Geometric mean of the contraction factors.
    pub fitted_contraction: f64,
    /// Interval on which the solution is certified by `T(u) = 0`.
    pub certified_interval: [f64; 2],
    /// Interval on which the differential residual was checked.
    pub residual_interval: [f64; 2],
    /// `sup_t ‖P_u(D)u − f‖₀` on the residual interval.
    pub final_pde_residual: f64,
    /// `⦀T(w) − φ_ε⦀₀` for the Taylor seed `w` (mollified target only).
    pub target_closeness: Option<f64>,
}

/// Result of [`newton_solve`]: last iterate and report.
#[derive(Clone, Debug)]
pub struct NewtonOutcome {
    /// Last iterate.
    pub solution: Trajectory,
    /// Report.
    pub report: NewtonReport,
}

impl NewtonOutcome {
    /// `Ok(solution)` when converged, the nonconvergence error otherwise.
    pub fn into_result(self) -> Result<(Trajectory, NewtonReport)> {
        if self.report.converged {
            Ok((self.solution, self.report))
        } else {
            Err(PevoError::Nonconvergence(self.report.failure.clone().unwrap_or_else(|| "not converged".into())))
        }
    }
}

fn smooth_update(v: &Trajectory) -> Result<Trajectory> {
    let grid = v.grid().clone();
    let cut = grid.xi_max() * 2.0 / 3.0;
    v.map(|_, f| {
        let vals =
            grid.apply_multiplier(
                f.values(),
                |_, xi| {
                    if xi.abs() > cut {
                        C64::new(0.0, 0.0)
                    } else {
                        C64::new(1.0, 0.0)
                    }
                },
            );
        Field::from_raw(&grid, vals)
    })
}

/// Newton iteration `u_{n+1} = u_n + S(u_n, target − T(u_n))`.
///
/// Stops when `⦀T(u_n) − target⦀₀ ≤ tol`; reports divergence after three
/// consecutive residual increases or when the iteration budget is spent.
pub fn newton_solve(problem: &SemilinearProblem) -> Result<NewtonOutcome> {
    problem.validate()?;
    let times = problem.times()?;
    let grid = problem.grid().clone();
    let w = taylor_seed(problem)?;
    let eps = problem.epsilon();
    let (target, closeness) = match problem.target {
        TargetKind::Zero => {
            let z = Trajectory::constant(times.clone(), &Field::zeros(&grid))?;
            (z, None)
        }
        TargetKind::Mollified => {
            let phi = mollified_target(&w, eps, problem)?;
            let tw = evaluate_t(&w, problem)?;
            let close = seminorm(&tw.sub(&phi)?, 0.0);
            (phi, Some(close))
        }
    };
    let mut u = match &problem.seed {
        Seed::Taylor => w.clone(),
        Seed::Zero => Trajectory::constant(times.clone(), &Field::zeros(&grid))?,
        Seed::Initial => Trajectory::constant(times.clone(), &problem.u0)?,
        Seed::Custom(t) => {
            problem.check_traj(t)?;
            t.clone()
        }
    };
    let mut iterations: Vec<NewtonIteration> = Vec::new();
    let mut increases = 0usize;
    let mut failure = None;
    let mut converged = false;
    let graded = |g: &Trajectory| -> Vec<f64> { (0..=problem.s).map(|n| seminorm(g, n as f64)).collect() };
    for index in 0..=problem.max_iter {
        let resid = target.sub(&evaluate_t(&u, problem)?)?; // target − T(u)
        let gr = graded(&resid);
        let r = gr[0];
        if let Some(prev) = iterations.last() {
            if r > prev.residual {
                increases += 1;
            } else {
                increases = 0;
            }
        }
        iterations.push(NewtonIteration { index, residual: r, graded: gr, update_norm: 0.0 });
        if r <= problem.tol {
            converged = true;
            break;
        }
        if !r.is_finite() {
            failure = Some(format!("residual became non-finite at iteration {index}"));
            break;
        }
        if increases >= 3 {
            failure = Some(format!("residual increased for 3 consecutive iterations (iteration {index})"));
            break;
        }
        if index == problem.max_iter {
            failure = Some(format!("residual {r:.3e} above tolerance after {} iterations", problem.max_iter));
            break;
        }
        let mut upd = solve_s(&u, &resid, problem)?;
        if problem.smoothing {
            upd = smooth_update(&upd)?;
        }
        iterations.last_mut().expect("pushed").update_norm = upd.sup_l2();
        u = u.axpy(C64::new(1.0, 0.0), &upd)?;
    }
    let contraction_factors: Vec<f64> = iterations
        .windows(2)
        .map(|p| if p[1].residual > 0.0 { p[0].residual / p[1].residual } else { f64::INFINITY })
        .collect();
    let finite: Vec<f64> = contraction_factors.iter().cloned().filter(|v| v.is_finite() && *v > 0.0).collect();
    let fitted_contraction = if finite.is_empty() {
        f64::NAN
    } else {
        (finite.iter().map(|v| v.ln()).sum::<f64>() / finite.len() as f64).exp()
    };
    let (certified, interval) = match problem.target {
        TargetKind::Zero => ([0.0, problem.horizon], [0.0, problem.horizon]),
        TargetKind::Mollified => ([0.0, eps], [0.0, eps]),
    };
    let final_pde_residual = pde_residual(&u, problem, interval)?;
    let report = NewtonReport {
        seed: problem.seed.name().to_string(),
        target: problem.target,
        epsilon: (problem.target == TargetKind::Mollified).then_some(eps),
        iterations,
        converged,
        failure,
        contraction_factors,
        fitted_contraction,
        certified_interval: certified,
        residual_interval: interval,
        final_pde_residual,
        target_closeness: closeness,
    };
    Ok(NewtonOutcome { solution: u, report })
}

/// `sup_t ‖P_u(D)u − f‖₀` over frames with `t` in `interval`, where
/// `P_u(D)u − f = −i(∂_t u + A(t,u)u − i f)` and `∂_t` is a fourth-order
/// difference in time.
pub fn pde_residual(u: &Trajectory, problem: &SemilinearProblem, interval: [f64; 2]) -> Result<f64> {
    let raw = u.raw_frames();
    let du = time_derivative(u.times(), &raw);
    let g = t_integrand(u, problem)?;
    let grid = u.grid();
    let mut worst: f64 = 0.0;
    for (i, &t) in u.times().iter().enumerate() {
        if t < interval[0] - 1e-14 || t > interval[1] + 1e-14 {
            continue;
        }
        let r: Vec<C64> = du[i].iter().zip(&g[i]).map(|(a, b)| a + b).collect();
        worst = worst.max(grid.l2_norm(&r));
    }
    Ok(worst)
}

/// Uniqueness residual `sup_t ‖P̃̃(u − v)‖₀` with
/// `P̃̃ = D_t + a_p D^p + Σ_j a_j(t,x,u) D^j + ã̃₀`,
/// `ã̃₀ = Σ_j ∫_0^1 ∂_w a_j(t,x,v + θ(u−v)) dθ · D^j v` (8-point Gauss–Legendre
/// in `θ`). For two solutions this equals `‖P_u u − P_v v‖`.
pub fn uniqueness_residual(u: &Trajectory, v: &Trajectory, problem: &SemilinearProblem) -> Result<f64> {
    problem.check_traj(u)?;
    problem.check_traj(v)?;
    let diff = u.sub(v)?;
    let grid = u.grid();
    let raw = diff.raw_frames();
    let ddiff = time_derivative(diff.times(), &raw);
    // Gauss–Legendre on [0,1]
    let (nodes, weights) = gauss_legendre_unit();
    let p = problem.coeffs.p as usize;
    let mut worst: f64 = 0.0;
    for (i, &t) in u.times().iter().enumerate() {
        let uf = &u.frames()[i];
        let vf = &v.frames()[i];
        let wf = &raw[i];
        // −i ∂_t w
        let mut r: Vec<C64> = ddiff[i].iter().map(|z| -I * z).collect();
        // a_p D^p w + Σ a_j(u) D^j w  =  −i A(u) w
        let gen = GeneratorCoefficients::assemble(&problem.coeffs, uf, t, None)?;
        for (o, z) in r.iter_mut().zip(gen.apply(grid, wf)) {
            *o += -I * z;
        }
        // ã̃₀ w
        for j in 0..p {
            if problem.coeffs.lower[j].iter().all(|term| term.w_power == 0) {
                continue;
            }
            let djv = grid.derivative_of(vf.values(), j as u32);
            for (k, &x) in grid.x().iter().enumerate() {
                let mut avg = C64::new(0.0, 0.0);
                for (th, wt) in nodes.iter().zip(&weights) {
                    let wv = vf.values()[k] + (uf.values()[k] - vf.values()[k]) * *th;
                    avg += problem.coeffs.da_j_dw(j, t, x, wv) * *wt;
                }
                r[k] += avg * djv[k] * wf[k];
            }
        }
        worst = worst.max(grid.l2_norm(&r));
    }
    Ok(worst)
}

fn gauss_legendre_unit() -> (Vec<f64>, Vec<f64>) {
    const X: [f64; 4] =
        [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_2];
    const W: [f64; 4] =
        [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_47, 0.101_228_536_290_376_26];
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for (x, w) in X.iter().zip(W) {
        nodes.push(0.5 * (1.0 - x));
        weights.push(0.5 * w);
        nodes.push(0.5 * (1.0 + x));
        weights.push(0.5 * w);
    }
    (nodes, weights)
}
