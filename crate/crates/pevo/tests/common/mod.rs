//! Shared setups for the integration and acceptance tests.
#![allow(dead_code)]

use pevo::coefficients::CoefficientSet;
use pevo::linear::{AbsorbingLayer, LinearProblem, Trajectory};
use pevo::scenarios::{
    preset_decaying_im, preset_kdv, preset_schrodinger, ImParams, InitialData, KdvParams, RunConfig, SchrodingerParams,
};
use pevo::semilinear::SemilinearProblem;
use pevo::{Field, Grid, C64};
use rand::Rng;

/// `p = 3`, `a₂ = i/⟨x⟩` on `[−10, 10)`.
pub fn decaying_setup(n: usize) -> (Grid, CoefficientSet) {
    let grid = Grid::new(n, 10.0).unwrap();
    (grid, preset_decaying_im(&ImParams::default()).unwrap())
}

/// Absorbing layer used with the decaying preset.
pub fn sponge() -> AbsorbingLayer {
    AbsorbingLayer { strength: 5.0, start: 0.6, end: 0.75 }
}

/// Right-moving packet `e^{iκx} e^{−2(x+4)²}`.
pub fn packet(grid: &Grid, carrier: f64) -> Field {
    Field::from_fn(grid, |x| C64::new(0.0, carrier * x).exp() * (-2.0 * (x + 4.0).powi(2)).exp())
}

/// Linear problem for the Gårding-stabilization runs.
pub fn decaying_problem(n: usize) -> (LinearProblem, Grid) {
    let (grid, coeffs) = decaying_setup(n);
    let (carrier, dt) = if n >= 256 { (20.0, 1e-5) } else { (10.0, 2e-5) };
    let mut lp = LinearProblem::new(coeffs, packet(&grid, carrier), 0.1);
    lp.dt = Some(dt);
    lp.save_every = 10;
    lp.layer = Some(sponge());
    (lp, grid)
}

/// KdV preset on `N = 128`, `L = 40` with `‖u₀‖₄ = 0.1`, `T* = 0.05`.
pub fn kdv_problem(dt: f64) -> SemilinearProblem {
    let grid = Grid::new(128, 40.0).unwrap();
    let coeffs = preset_kdv(&KdvParams::default(), &grid).unwrap();
    let mut cfg = RunConfig::golden();
    cfg.initial = InitialData::Normalized { norm: 0.1, s: 4.0, center: 0.0, width: 3.0 };
    let u0 = cfg.build_initial(&grid).unwrap();
    SemilinearProblem::new(coeffs, u0, 0.05, dt)
}

/// Schrödinger preset (`p = 2`, `a₁ = i/(2⟨x⟩)`) on `N = 128`, `L = 20`.
pub fn schrodinger_problem(dt: f64) -> SemilinearProblem {
    let grid = Grid::new(128, 20.0).unwrap();
    let coeffs = preset_schrodinger(&SchrodingerParams::default()).unwrap();
    let u0 = Field::from_fn(&grid, |x| C64::new(0.3 * (-x * x / 4.0).exp(), 0.0));
    SemilinearProblem::new(coeffs, u0, 0.05, dt)
}

/// Random smooth trajectory `h(t) = r₁ cos(1+t) + r₂ t²` on the problem's times.
pub fn random_trajectory<R: Rng>(problem: &SemilinearProblem, rng: &mut R) -> Trajectory {
    let grid = problem.grid();
    let r1 = Field::random_smooth(grid, rng, 2.0);
    let r2 = Field::random_smooth(grid, rng, 2.0);
    Trajectory::from_fn(problem.times().unwrap(), |t| {
        r1.scale(C64::new((1.0 + t).cos(), 0.0)).axpy(C64::new(t * t, 0.0), &r2)
    })
    .unwrap()
}

/// `sup_t ‖a(t)‖₀ / ‖a(0)‖₀`.
pub fn growth_factor(traj: &Trajectory) -> f64 {
    let n0 = traj.frames()[0].l2_norm();
    traj.frames().iter().map(|f| f.l2_norm()).fold(0.0, f64::max) / n0
}
