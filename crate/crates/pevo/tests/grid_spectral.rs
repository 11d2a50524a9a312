//! Grid and spectral primitives against brute-force oracles.

use approx::assert_relative_eq;
use pevo::{bracket, derivative, sobolev_norm, Field, Grid, PevoError, C64};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Direct O(N²) DFT with the library's sign convention.
fn brute_dft(grid: &Grid, u: &[C64]) -> Vec<C64> {
    grid.xi().iter().map(|&xi| u.iter().zip(grid.x()).map(|(v, &x)| v * C64::new(0.0, -xi * x).exp()).sum()).collect()
}

fn max_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

#[test]
fn nodes_and_frequencies_follow_the_convention() {
    let g = Grid::new(16, 3.0).unwrap();
    assert_relative_eq!(g.x()[0], -3.0);
    assert_relative_eq!(g.dx(), 6.0 / 16.0);
    assert_relative_eq!(g.xi()[1], std::f64::consts::PI / 3.0, epsilon = 1e-14);
    assert_relative_eq!(g.xi()[g.nyquist_index()], -g.xi_max(), epsilon = 1e-14);
    assert!(Grid::new(15, 1.0).is_err());
    assert!(Grid::new(16, -1.0).is_err());
}

#[test]
fn fft_matches_direct_dft() {
    let g = Grid::new(32, 5.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let u = Field::random(&g, &mut rng);
    let fast = g.forward(u.values());
    let slow = brute_dft(&g, u.values());
    assert!(max_diff(&fast, &slow) < 1e-11);
    let back = g.inverse(&fast);
    assert!(max_diff(&back, u.values()) < 1e-13);
}

#[test]
fn derivative_of_trigonometric_polynomial_is_exact() {
    let g = Grid::new(64, std::f64::consts::PI).unwrap();
    // u = Σ c_k e^{ikx}, so D^j u = Σ k^j c_k e^{ikx}.
    let terms: [(f64, C64); 4] =
        [(3.0, C64::new(0.0, -0.5)), (-3.0, C64::new(0.0, 0.5)), (5.0, C64::new(0.5, 0.0)), (-5.0, C64::new(0.5, 0.0))];
    let eval = |j: i32| {
        Field::from_fn(&g, move |x| terms.iter().map(|&(k, c)| c * k.powi(j) * C64::new(0.0, k * x).exp()).sum())
    };
    let u = eval(0);
    assert!(u.values().iter().all(|v| v.im.abs() < 1e-14));
    for j in 0..=4u32 {
        let d = derivative(&u, j).unwrap();
        assert!(d.sub(&eval(j as i32)).sup_norm() < 1e-11 * 5f64.powi(j as i32 + 1), "order {j}");
    }
}

#[test]
fn odd_derivative_drops_nyquist_mode() {
    let g = Grid::new(8, 1.0).unwrap();
    let nyq = Field::from_fn(&g, |x| C64::new((g.xi_max() * x).cos(), 0.0));
    assert!(derivative(&nyq, 1).unwrap().sup_norm() < 1e-12);
    let d2 = derivative(&nyq, 2).unwrap();
    assert!(d2.sub(&nyq.scale(C64::new(g.xi_max().powi(2), 0.0))).sup_norm() < 1e-10);
}

#[test]
fn derivative_order_cap_is_enforced() {
    let g = Grid::with_max_derivative(16, 1.0, 3).unwrap();
    let u = Field::zeros(&g);
    assert!(matches!(derivative(&u, 4), Err(PevoError::ParameterDomain(_))));
}

#[test]
fn sobolev_norm_matches_direct_formula() {
    let g = Grid::new(32, 2.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let u = Field::random(&g, &mut rng);
    let uhat = brute_dft(&g, u.values());
    for (s, h) in [(0.0, 1.0), (1.5, 1.0), (-1.0, 3.0), (2.0, 10.0)] {
        let direct: f64 =
            uhat.iter().zip(g.xi()).map(|(v, &xi)| (h * h + xi * xi).powf(s) * v.norm_sqr()).sum::<f64>() * 2.0 * g.l()
                / (g.n() as f64).powi(2);
        assert_relative_eq!(sobolev_norm(&u, s, h).unwrap(), direct.sqrt(), max_relative = 1e-12);
    }
    assert!(sobolev_norm(&u, 1.0, 0.5).is_err());
}

#[test]
fn bracket_rejects_small_h() {
    assert_relative_eq!(bracket(3.0, 4.0).unwrap(), 5.0);
    assert!(bracket(1.0, 0.9).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn parseval_and_round_trip(seed in any::<u64>(), log_n in 3u32..8, l in 0.5f64..50.0) {
        let g = Grid::new(1 << log_n, l).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Field::random(&g, &mut rng);
        let l2 = u.l2_norm();
        prop_assert!((sobolev_norm(&u, 0.0, 1.0).unwrap() - l2).abs() <= 1e-12 * (1.0 + l2));
        let back = g.inverse(&g.forward(u.values()));
        prop_assert!(max_diff(&back, u.values()) < 1e-12);
    }

    #[test]
    fn sobolev_norm_is_monotone_in_s(seed in any::<u64>(), s in -2.0f64..3.0, ds in 0.0f64..2.0) {
        let g = Grid::new(32, 4.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Field::random(&g, &mut rng);
        let a = sobolev_norm(&u, s, 1.0).unwrap();
        let b = sobolev_norm(&u, s + ds, 1.0).unwrap();
        prop_assert!(b >= a * (1.0 - 1e-12));
    }

    #[test]
    fn derivative_is_linear(seed in any::<u64>(), j in 0u32..5, a in -3.0f64..3.0) {
        let g = Grid::new(32, 4.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Field::random(&g, &mut rng);
        let v = Field::random(&g, &mut rng);
        let lhs = derivative(&u.axpy(C64::new(a, 0.0), &v), j).unwrap();
        let rhs = derivative(&u, j).unwrap().axpy(C64::new(a, 0.0), &derivative(&v, j).unwrap());
        prop_assert!(lhs.sub(&rhs).sup_norm() <= 1e-9 * (1.0 + g.xi_max().powi(j as i32)));
    }
}
