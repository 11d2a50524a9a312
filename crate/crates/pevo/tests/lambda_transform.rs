//! Λ construction, pack invariants and the Neumann inverse.

mod common;

use approx::assert_relative_eq;
use pevo::lambda::{
    build_lambda, build_pack, conjugated_symbol, estimate_neumann_norm, integrate, invert_exp_lambda, tail_bound,
    CutoffPair, InverseMode,
};
use pevo::linear::{generator_symbol, GeneratorCoefficients};
use pevo::{bracket, Field, Grid, PevoError, C64};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn adaptive_quadrature_matches_closed_forms() {
    assert_relative_eq!(
        integrate(|y| (1.0 + y * y).powf(-0.5), 0.0, 7.0, 1e-13).unwrap(),
        7f64.asinh(),
        epsilon = 1e-12
    );
    assert_relative_eq!(integrate(|y| y.powi(5) - y, -1.0, 2.0, 1e-13).unwrap(), 63.0 / 6.0 - 1.5, epsilon = 1e-12);
    assert_relative_eq!(
        integrate(|y| (-y * y).exp(), 0.0, 6.0, 1e-13).unwrap(),
        std::f64::consts::PI.sqrt() / 2.0,
        epsilon = 1e-12
    );
}

#[test]
fn top_level_matches_closed_form_inside_the_characteristic_set() {
    // Where ω = 1 and ψ ≡ 1 on [0, x]: λ_{p-1} = M asinh(x).
    let p = 3;
    let (m, h) = (2.0, 1.0);
    let grid = Grid::new(64, 4.0).unwrap();
    let cut = CutoffPair::untapered(p);
    let lam = build_lambda(1, m, h, &grid, &cut).unwrap();
    let mut checked = 0;
    for (j, &x) in grid.x().iter().enumerate() {
        for (col, &xi) in grid.xi().iter().enumerate() {
            let radius = bracket(xi, h).unwrap().powi(p as i32 - 1);
            if xi >= 2.0 * h && bracket(x, 1.0).unwrap() <= 0.5 * radius {
                assert_relative_eq!(lam.at(j, col).re, m * x.asinh(), epsilon = 1e-10);
                checked += 1;
            }
        }
    }
    assert!(checked > 100);
    // the frequency cutoff switches the level off for |ξ| ≤ h
    for (col, &xi) in grid.xi().iter().enumerate() {
        if xi.abs() <= h {
            assert!((0..grid.n()).all(|j| lam.at(j, col) == C64::new(0.0, 0.0)));
        }
    }
}

#[test]
fn levels_are_odd_in_x_and_real() {
    let grid = Grid::new(32, 6.0).unwrap();
    let lam = build_lambda(2, 1.0, 2.0, &grid, &CutoffPair::new(3)).unwrap();
    let n = grid.n();
    for j in 1..n {
        // x_{N-j} = −x_j for j ≥ 1
        for col in 0..n {
            assert_relative_eq!(lam.at(j, col).re, -lam.at(n - j, col).re, epsilon = 1e-12);
            assert_eq!(lam.at(j, col).im, 0.0);
        }
    }
}

#[test]
fn taper_vanishes_at_the_boundary() {
    let grid = Grid::new(64, 10.0).unwrap();
    let lam = build_lambda(1, 1.0, 1.0, &grid, &CutoffPair::new(3)).unwrap();
    let n = grid.n();
    for (j, &x) in grid.x().iter().enumerate() {
        if x.abs() >= 0.95 * grid.l() {
            assert!((0..n).all(|col| lam.at(j, col).norm() == 0.0));
        }
    }
}

#[test]
fn zero_constants_give_the_identity() {
    let grid = Grid::new(32, 5.0).unwrap();
    let pack = build_pack(3, &[0.0, 0.0], 1.0, &grid, &CutoffPair::new(3), 8).unwrap();
    assert!(pack.is_trivial());
    assert_eq!(estimate_neumann_norm(&pack), 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let u = Field::random(&grid, &mut rng);
    assert!(pack.apply_exp_lambda(&u).unwrap().sub(&u).sup_norm() < 1e-13);
    assert!(invert_exp_lambda(&pack, &u, InverseMode::Neumann).unwrap().sub(&u).sup_norm() < 1e-13);
}

#[test]
fn trivial_conjugation_is_the_generator() {
    let (grid, coeffs) = common::decaying_setup(32);
    let gen = GeneratorCoefficients::assemble(&coeffs, &Field::zeros(&grid), 0.0, None).unwrap();
    let pack = build_pack(3, &[0.0, 0.0], 1.0, &grid, &CutoffPair::new(3), 8).unwrap();
    let a = conjugated_symbol(&pack, &gen, None).unwrap();
    let b = generator_symbol(&grid, &gen).unwrap();
    let diff = a.samples().iter().zip(b.samples()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    assert!(diff < 1e-9 * b.sup_abs(), "diff {diff}");
}

#[test]
fn invalid_packs_are_rejected() {
    let grid = Grid::new(32, 5.0).unwrap();
    let cut = CutoffPair::new(3);
    assert!(matches!(build_pack(1, &[], 1.0, &grid, &CutoffPair::new(1), 8), Err(PevoError::ParameterDomain(_))));
    assert!(build_pack(3, &[1.0], 1.0, &grid, &cut, 8).is_err());
    assert!(build_pack(3, &[-1.0, 0.0], 1.0, &grid, &cut, 8).is_err());
    assert!(build_pack(2, &[1.0], 1.0, &grid, &cut, 8).is_err());
    assert!(matches!(build_pack(3, &[1e4, 0.0], 1.0, &grid, &cut, 8), Err(PevoError::ParameterDomain(_))));
}

#[test]
fn loss_of_derivatives_is_twice_the_fitted_order_and_bounds_lambda() {
    let grid = Grid::new(64, 10.0).unwrap();
    let pack = build_pack(3, &[1.0, 0.5], 1.0, &grid, &CutoffPair::new(3), 8).unwrap();
    assert!(pack.delta() >= 0.0);
    assert_eq!(pack.sigma(), 2.0 * pack.delta());
    // the fitted line bounds sup_x |Λ| at every column
    for (col, &xi) in grid.xi().iter().enumerate() {
        let s = (0..grid.n()).map(|j| pack.lambda().at(j, col).norm()).fold(0.0, f64::max);
        assert!(s <= pack.delta_constant() + pack.delta() * bracket(xi, 1.0).unwrap().ln() + 1e-12);
    }
}

#[test]
fn uncertified_neumann_inverse_is_refused() {
    let grid = Grid::new(64, 10.0).unwrap();
    // h = 1 with M = 1 on both levels leaves ‖r‖ far above one
    let pack = build_pack(3, &[1.0, 1.0], 1.0, &grid, &CutoffPair::new(3), 8).unwrap();
    assert!(estimate_neumann_norm(&pack) >= 1.0);
    let u = Field::from_fn(&grid, |x| C64::new((-x * x).exp(), 0.0));
    assert!(matches!(invert_exp_lambda(&pack, &u, InverseMode::Neumann), Err(PevoError::Certification { .. })));
    // the dense inverse is always available
    let x = invert_exp_lambda(&pack, &u, InverseMode::Dense).unwrap();
    assert!(pack.apply_exp_lambda(&x).unwrap().sub(&u).l2_norm() < 1e-9 * u.l2_norm());
}

#[test]
fn tail_bound_is_geometric() {
    assert_relative_eq!(tail_bound(0.5, 8), 2f64.powi(-9) / 0.5);
    assert!(tail_bound(1.0, 3).is_infinite());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// The truncated Neumann inverse is within the geometric tail of the
    /// exact discrete inverse.
    #[test]
    fn neumann_error_is_within_tail_bound(seed in any::<u64>(), order in 2usize..10) {
        let grid = Grid::new(32, 8.0).unwrap();
        let pack = build_pack(3, &[0.5, 0.125], 1.0, &grid, &CutoffPair::new(3), order).unwrap();
        let rho = estimate_neumann_norm(&pack);
        prop_assume!(rho < 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Field::random(&grid, &mut rng);
        let exact = invert_exp_lambda(&pack, &u, InverseMode::Dense).unwrap();
        let approx = invert_exp_lambda(&pack, &u, InverseMode::Neumann).unwrap();
        let y = pack.apply_exp_neg_lambda(&u).unwrap();
        let bound = tail_bound(rho, order) * y.l2_norm();
        prop_assert!(approx.sub(&exact).l2_norm() <= bound * (1.0 + 1e-8) + 1e-12);
    }
}
