//! Coefficient sets, presets and the decay-condition checker.

use approx::assert_relative_eq;
use pevo::coefficients::{check_conditions, CoefficientSet, Gamma, Principal, Profile, SampleSpec};
use pevo::scenarios::{
    preset_constant_im, preset_decaying_im, preset_kdv, preset_schrodinger, ImParams, KdvParams, SchrodingerParams,
};
use pevo::{Grid, PevoError, C64};
use proptest::prelude::*;

fn kdv_reference(p: &KdvParams, x: f64) -> (f64, f64) {
    let depth = p.depth * (1.0 + p.bump / (x / p.bump_width).cosh());
    let c0 = 1.5 * (p.g / depth).sqrt();
    let sigma = depth.powi(3) / 3.0 - p.tension * depth / (p.rho * p.g);
    (c0 * sigma / 3.0, c0)
}

#[test]
fn kdv_mapping_flat_bottom() {
    let grid = Grid::new(64, 40.0).unwrap();
    let params = KdvParams { g: 9.81, depth: 2.0, alpha: 0.4, tension: 0.5, rho: 1.2, ..KdvParams::default() };
    let set = preset_kdv(&params, &grid).unwrap();
    let (a3, c0) = kdv_reference(&params, 0.0);
    assert_eq!(set.p, 3);
    assert_relative_eq!(set.a_p(0.0, 3.0), a3, max_relative = 1e-12);
    assert_relative_eq!(set.c_p, a3, max_relative = 1e-12);
    let w = C64::new(0.3, 0.0);
    assert_relative_eq!(set.a_j(1, 0.0, 1.0, w).re, -c0 * (0.3 + 2.0 * 0.4 / 3.0), max_relative = 1e-12);
    assert_eq!(set.a_j(2, 0.0, 1.0, w), C64::new(0.0, 0.0));
    assert_eq!(set.a_j(0, 0.0, 1.0, w), C64::new(0.0, 0.0));
    assert!(set.all_real());
    assert!(!set.is_w_independent());
}

#[test]
fn kdv_mapping_variable_depth() {
    let grid = Grid::new(64, 40.0).unwrap();
    let params = KdvParams { bump: 0.4, bump_width: 6.0, ..KdvParams::default() };
    let set = preset_kdv(&params, &grid).unwrap();
    for &x in &[-20.0, -3.0, 0.0, 1.5, 30.0] {
        let (a3, c0) = kdv_reference(&params, x);
        assert_relative_eq!(set.a_p(0.0, x), a3, max_relative = 1e-10);
        assert_relative_eq!(
            set.a_j(1, 0.0, x, C64::new(0.0, 0.0)).re,
            -c0 * 2.0 * params.alpha / 3.0,
            max_relative = 1e-10
        );
    }
    let min = grid.x().iter().map(|&x| kdv_reference(&params, x).0).fold(f64::INFINITY, f64::min);
    assert_relative_eq!(set.c_p, min, max_relative = 1e-10);
}

#[test]
fn kdv_rejects_nonpositive_dispersion() {
    let grid = Grid::new(32, 10.0).unwrap();
    let params = KdvParams { tension: 1.0, ..KdvParams::default() }; // σ = 1/3 − 1 < 0
    assert!(matches!(preset_kdv(&params, &grid), Err(PevoError::Config(_))));
    assert!(preset_kdv(&KdvParams { depth: -1.0, ..KdvParams::default() }, &grid).is_err());
}

#[test]
fn kdv_passes_on_the_real_lattice() {
    let grid = Grid::new(64, 40.0).unwrap();
    for (bump, bump_width) in [(0.0, 10.0), (0.1, 10.0), (0.3, 6.0)] {
        let set = preset_kdv(&KdvParams { bump, bump_width, ..KdvParams::default() }, &grid).unwrap();
        let spec = SampleSpec::standard(40.0, 81, 3).real_w();
        let rep = check_conditions(&set, &spec).unwrap();
        assert!(rep.all_pass(), "bump {bump}: {:?}", rep.failures());
    }
}

#[test]
fn schrodinger_passes_and_constant_im_fails() {
    let spec2 = SampleSpec::standard(20.0, 101, 2);
    let rep = check_conditions(&preset_schrodinger(&SchrodingerParams::default()).unwrap(), &spec2).unwrap();
    assert!(rep.all_pass(), "{:?}", rep.failures());
    // p = 2 with non-decaying Im a₁
    let bad = preset_schrodinger(&SchrodingerParams { a1_decay: 0.0, ..SchrodingerParams::default() }).unwrap();
    let rep = check_conditions(&bad, &spec2).unwrap();
    assert_eq!(rep.failures(), vec!["a1".to_string()]);
    // ⟨x⟩^{-1/2} decay is too slow for p = 2
    let slow = preset_schrodinger(&SchrodingerParams { a1_decay: 0.5, ..SchrodingerParams::default() }).unwrap();
    assert_eq!(check_conditions(&slow, &spec2).unwrap().failures(), vec!["a1".to_string()]);

    let spec3 = SampleSpec::standard(10.0, 101, 3);
    let good = preset_decaying_im(&ImParams::default()).unwrap();
    assert!(check_conditions(&good, &spec3).unwrap().all_pass());
    let bad = preset_constant_im(&ImParams::default()).unwrap();
    let rep = check_conditions(&bad, &spec3).unwrap();
    let v = rep.get("a2").unwrap();
    assert!(!v.pass);
    let wit = v.witness.as_ref().unwrap();
    assert_eq!(wit.j, 2);
    assert_relative_eq!(wit.x.abs(), 10.0);
    assert_relative_eq!(v.worst_ratio, (1.0f64 + 100.0).sqrt(), max_relative = 1e-12);
}

#[test]
fn principal_part_below_its_lower_bound_fails() {
    let set = CoefficientSet::new(
        2,
        Principal { scale: 1.0, profile: Profile::Sech { width: 2.0 } },
        Gamma::constant(1.0),
        0.5,
        1.0,
    )
    .unwrap();
    let rep = check_conditions(&set, &SampleSpec::standard(10.0, 41, 2)).unwrap();
    let ap = rep.get("ap").unwrap();
    assert!(!ap.pass);
    // sech(x/2) < 1/2 first happens away from the origin
    assert!(ap.witness.as_ref().unwrap().x.abs() > 2.0);
}

#[test]
fn invalid_sets_are_rejected() {
    let principal = Principal { scale: 1.0, profile: Profile::Constant };
    assert!(CoefficientSet::new(3, principal.clone(), Gamma::constant(1.0), 0.0, 1.0).is_err());
    assert!(CoefficientSet::new(3, principal.clone(), Gamma::constant(1.0), 1.0, -1.0).is_err());
    let set = CoefficientSet::new(3, principal, Gamma::constant(1.0), 1.0, 1.0).unwrap();
    assert!(set
        .with_term(3, pevo::coefficients::Term { scale: C64::new(1.0, 0.0), profile: Profile::Constant, w_power: 0 })
        .is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Scaling (a_j, γ) → (s a_j, s γ) leaves every verdict unchanged.
    #[test]
    fn verdicts_are_scale_invariant(s in 0.01f64..100.0, c in 0.1f64..3.0, decay in prop::sample::select(vec![0.0, 1.0])) {
        let set = preset_decaying_im(&ImParams { c, decay, ..ImParams::default() }).unwrap();
        let spec = SampleSpec::standard(10.0, 41, 3);
        let a = check_conditions(&set, &spec).unwrap();
        let b = check_conditions(&set.scaled(s), &spec).unwrap();
        for (x, y) in a.conditions.iter().zip(&b.conditions) {
            prop_assert_eq!(&x.name, &y.name);
            prop_assert_eq!(x.pass, y.pass);
        }
    }
}
