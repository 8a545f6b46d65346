mod common;

use common::*;
use num_rational::Rational64;
use proptest::prelude::*;
use vfckit::expr::VarSpace;
use vfckit::map::SmoothMap;
use vfckit::perturbation::build_multivalued_perturbation;
use vfckit::scenario::{Model, Scenario};
use vfckit::tol;
use vfckit::vfc::*;

fn count(m: &Model, seed: u64, n: u64) -> Rational64 {
    let g = &m.primary().gcs;
    let mvp = build_multivalued_perturbation(g, seed, &[n]).unwrap();
    let (zs, chain) = virtual_chain_dim0(g, &mvp, n, &g.supports, tol::DELTA_U).unwrap();
    assert_eq!(zs.total(), chain.total);
    chain.total
}

fn r(p: i64, q: i64) -> Rational64 {
    Rational64::new(p, q)
}

#[test]
fn exact_counts_on_zero_dimensional_gallery() {
    let expected = [("G1", r(1, 1)), ("G2", r(1, 2)), ("G3:2", r(1, 1)), ("G3:3", r(2, 3)), ("G3:4", r(1, 2)), ("G7", r(1, 1))];
    for (name, want) in expected {
        let m = gallery(name);
        for seed in [1, 2, 3] {
            for n in [50, 100] {
                assert_eq!(count(&m, seed, n), want, "{name} seed {seed} n {n}");
            }
        }
    }
}

#[test]
fn cone_points_carry_one_over_n() {
    for n in 2..=4i64 {
        let m = gallery(&format!("G3:{n}"));
        let g = &m.primary().gcs;
        let mvp = build_multivalued_perturbation(g, 1, &[100]).unwrap();
        let zs = solve_zeros_dim0(g, &mvp, 100, &g.supports, tol::DELTA_U).unwrap();
        assert_eq!(zs.points.len(), 2, "north and south cone points");
        for p in &zs.points {
            assert_eq!(p.multiplicity, r(1, n));
        }
    }
}

#[test]
fn sign_line_point_has_half_weight() {
    let m = gallery("G2");
    let c = &m.charts[0];
    let branches = vec![SmoothMap::parse(&["y1"], VarSpace::y(1)).unwrap()];
    let (mult, order, signs) = multiplicity(c, &branches, c.orientation(), &[0.0]).unwrap();
    assert_eq!((mult, order, signs), (r(1, 2), 2, vec![1]));
    let pair: Vec<SmoothMap> = ["y1 - 0.3", "y1 + 0.3"].iter().map(|s| SmoothMap::parse(&[*s], VarSpace::y(1)).unwrap()).collect();
    let (m1, o1, s1) = multiplicity(c, &pair, c.orientation(), &[0.3]).unwrap();
    assert_eq!((m1, o1, s1), (r(1, 2), 1, vec![1, 0]));
}

#[test]
fn degenerate_zero_has_no_sign() {
    let m = gallery("G1");
    let c = &m.charts[0];
    let b = vec![SmoothMap::parse(&["y1^3"], VarSpace::y(1)).unwrap()];
    assert_eq!(multiplicity(c, &b, 1.0, &[0.0]).unwrap_err().code(), "SIGN_UNDETERMINED");
}

#[test]
fn reversing_the_obstruction_orientation_negates_the_count() {
    let mut sc = vfckit::gallery::by_name("G2").unwrap();
    sc.charts[0].or_e = -sc.charts[0].or_e;
    let flipped = Model::build(sc).unwrap();
    assert_eq!(count(&flipped, 1, 50), r(-1, 2));
}

#[test]
fn support_and_neighbourhood_independence() {
    for name in ["G1", "G2", "G3:2", "G3:3"] {
        let m = gallery(name);
        let p = m.primary();
        let g = &p.gcs;
        let mvp = build_multivalued_perturbation(g, 9, &[100]).unwrap();
        let main = solve_zeros_dim0(g, &mvp, 100, &g.supports, tol::DELTA_U).unwrap().total();
        let half = solve_zeros_dim0(g, &mvp, 100, &g.supports, tol::DELTA_U / 2.0).unwrap().total();
        assert_eq!(main, half, "{name}");
        if let Some(alt) = &p.alt_supports {
            let other = solve_zeros_dim0(g, &mvp, 100, alt, tol::DELTA_U).unwrap().total();
            assert_eq!(main, other, "{name}");
        }
    }
}

#[test]
fn boundary_chain_vanishes() {
    for name in ["G4", "G5"] {
        let m = gallery(name);
        let g = &m.primary().gcs;
        for seed in 1..=5 {
            let mvp = build_multivalued_perturbation(g, seed, &[50]).unwrap();
            let out = boundary_vanishing_check(g, &mvp, 50).unwrap();
            assert_eq!(out.chain.total, r(0, 1), "{name} seed {seed}");
            assert!(out.checks.all_pass());
            assert_eq!(out.zeros.points.len(), 2, "{name}: two ends of opposite sign");
        }
    }
}

#[test]
fn boundary_needs_dimension_one() {
    let m = gallery("G1");
    let g = &m.primary().gcs;
    let mvp = build_multivalued_perturbation(g, 1, &[50]).unwrap();
    assert_eq!(boundary_vanishing_check(g, &mvp, 50).unwrap_err().code(), "TYPE_ERROR");
}

#[test]
fn half_circle_sweep_is_constant_then_empty() {
    let m = gallery("G4");
    let g = &m.primary().gcs;
    let f = m.map_on(m.scenario.run.sweep.as_ref().unwrap(), g).unwrap();
    let mvp = build_multivalued_perturbation(g, 1, &[50]).unwrap();
    let levels = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 1.5];
    let out = level_sweep(g, &mvp, 50, &f, &levels).unwrap();
    assert!(out.checks.all_pass(), "{:?}", out.checks.failures().collect::<Vec<_>>());
    let regular: Vec<Rational64> = out.rows.iter().filter(|r| r.level < 1.0).filter_map(|r| r.chain).collect();
    assert_eq!(regular.len(), 8);
    assert!(regular.iter().all(|c| *c == regular[0]));
    let top = out.rows.last().unwrap();
    assert_eq!((top.chain, top.points), (Some(r(0, 1)), 0));
}

#[test]
fn vdim_zero_solver_rejects_curves() {
    let m = gallery("G4");
    let g = &m.primary().gcs;
    let mvp = build_multivalued_perturbation(g, 1, &[50]).unwrap();
    assert!(solve_zeros_dim0(g, &mvp, 50, &g.supports, tol::DELTA_U).is_err());
}

#[test]
fn scenario_round_trip_keeps_counts() {
    let sc = vfckit::gallery::by_name("G3:3").unwrap();
    let again = Model::build(Scenario::from_toml(&sc.to_toml().unwrap()).unwrap()).unwrap();
    assert_eq!(count(&again, 2, 50), r(2, 3));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn counts_do_not_depend_on_the_seed(seed in any::<u64>(), n in 30u64..300) {
        prop_assert_eq!(count(&gallery("G2"), seed, n), r(1, 2));
        prop_assert_eq!(count(&gallery("G3:3"), seed, n), r(2, 3));
    }

    #[test]
    fn boundary_vanishes_for_any_seed(seed in any::<u64>()) {
        let m = gallery("G5");
        let g = &m.primary().gcs;
        let mvp = build_multivalued_perturbation(g, seed, &[50]).unwrap();
        prop_assert_eq!(boundary_vanishing_check(g, &mvp, 50).unwrap().chain.total, r(0, 1));
    }
}
