mod common;

use common::*;
use proptest::prelude::*;
use vfckit::expr::{Expr, VarSpace};
use vfckit::integrate::*;
use vfckit::orbifold::{Domain, Form};
use vfckit::perturbation::{build_cfp_system, Cfp};
use vfckit::run::{run, Flags};
use vfckit::scenario::Model;

struct Setup {
    m: Model,
    cfps: Vec<Cfp>,
    pou: Vec<Expr>,
}

fn setup(name: &str) -> Setup {
    let m = gallery(name);
    let g = &m.primary().gcs;
    let cfps = build_cfp_system(g).unwrap();
    let pou = gcs_partition(g).unwrap();
    Setup { m, cfps, pou }
}

fn function_on(dim: usize, src: &str) -> Form {
    Form::function(dim, Expr::parse(src, VarSpace::y(dim)).unwrap())
}

#[test]
fn stokes_on_strip_and_half_circle() {
    for name in ["G5", "G4"] {
        let s = setup(name);
        let g = &s.m.primary().gcs;
        let h = s.m.form_on(s.m.scenario.run.stokes_form.as_ref().unwrap(), g).unwrap();
        let out = stokes_check(g, &s.cfps, &s.pou, &h, &[0.1, 0.05], Quad { order: 16 }, 1e-6).unwrap();
        assert!(out.checks.all_pass(), "{name}: {:?}", out.checks.failures().collect::<Vec<_>>());
        for r in out.rows.iter().filter(|r| r.order == 16) {
            assert!(r.residual <= 1e-6, "{name}: {r:?}");
        }
    }
}

#[test]
fn half_circle_coordinate_difference() {
    let s = setup("G4");
    let g = &s.m.primary().gcs;
    let x = vec![function_on(2, "y1")];
    let row = stokes_point(g, &s.cfps, &s.pou, &x, 0.05, Quad { order: 16 }).unwrap();
    // ∫ dx along the arc from one end (x = ±1) to the other.
    assert!((row.lhs.abs() - 2.0).abs() < 0.05, "{row:?}");
    assert!(row.residual < 1e-6, "{row:?}");
}

#[test]
fn stokes_sign_follows_obstruction_rank() {
    assert_eq!(stokes_sign(0), 1.0);
    assert_eq!(stokes_sign(1), -1.0);
    assert_eq!(stokes_sign(2), 1.0);
}

#[test]
fn degree_bookkeeping() {
    assert_eq!(pushout_degree(0, 0, 0), 0);
    assert_eq!(pushout_degree(0, 1, 1), 0);
    assert_eq!(pushout_degree(1, 0, 1), 0);
    assert_eq!(pushout_degree(2, 1, 2), 1);
}

#[test]
fn projection_formula_on_the_strip() {
    let s = setup("G5");
    let g = &s.m.primary().gcs;
    let f = s.m.map_on("t", g).unwrap();
    let rho = s.m.target_form("rho").unwrap();
    for hname in ["one", "h"] {
        let h = s.m.form_on(hname, g).unwrap();
        let data = PushoutData { gcs: g, cfps: &s.cfps, pou: &s.pou, h: &h, f: &f };
        let pair = pushout(&data, 0.1, Mode::Pair(&rho), Quad::default()).unwrap().scalar().unwrap();
        let nodes = Domain::open_box(vec![0.0], vec![1.0]).quadrature(16, 1e9);
        let pts: Vec<Vec<f64>> = nodes.iter().map(|(x, _)| x.clone()).collect();
        let PushoutValue::Samples(vals) = pushout(&data, 0.1, Mode::Grid(&pts), Quad::default()).unwrap() else { panic!() };
        let integral: f64 = vals.iter().zip(&nodes).map(|((x, v), (_, w))| w * v * x[0] * x[0]).sum();
        assert!((pair - integral).abs() < 1e-8, "{hname}: {pair} vs {integral}");
        if hname == "one" {
            assert!((pair - 1.0 / 3.0).abs() < 1e-10);
        }
    }
}

#[test]
fn chain_map_identity_on_the_strip() {
    let s = setup("G5");
    let g = &s.m.primary().gcs;
    let f = s.m.map_on("t", g).unwrap();
    let h = s.m.form_on("h", g).unwrap();
    let rho = s.m.target_form("wave").unwrap();
    let c = chain_map_check(g, &s.cfps, &s.pou, &h, &f, &rho, 0.1, Quad::default(), 1e-6).unwrap();
    assert!(c.passed(), "{c:?}");
}

#[test]
fn pushout_to_a_point_of_the_constant_is_the_count() {
    for (name, want) in [("G1", 1.0), ("G2", 0.5), ("G3:3", 2.0 / 3.0), ("G7", 1.0)] {
        let s = setup(name);
        let g = &s.m.primary().gcs;
        let one: Vec<Form> = g.ks.charts.iter().map(|c| Form::function(c.dim(), Expr::one())).collect();
        let data = PushoutData { gcs: g, cfps: &s.cfps, pou: &s.pou, h: &one, f: &[] };
        let v = pushout(&data, 0.1, Mode::Point, Quad::default()).unwrap().scalar().unwrap();
        assert!((v - want).abs() < 1e-8, "{name}: {v}");
    }
}

fn run_ok(cmd: &str, name: &str) -> vfckit::report::Report {
    let out = run(cmd, &gallery(name), &Flags::default()).unwrap();
    assert_eq!(out.report.exit_code(), 0, "{cmd} {name}: {:?}", out.report.checks.iter().filter(|c| !c.passed()).collect::<Vec<_>>());
    out.report
}

#[test]
fn composition_matches_fubini_oracles() {
    let rep = run_ok("compose", "G6");
    let comp: Vec<_> = rep.checks.iter().filter(|c| c.name.contains("composition[")).collect();
    assert!(comp.len() >= 3);
    for c in &comp {
        assert!(c.residual <= 1e-8, "{c:?}");
    }
    assert!(rep.checks.iter().any(|c| c.name.contains("oracle[") && c.detail.contains("0.5")));
    assert!(rep.checks.iter().any(|c| c.name.contains("oracle[") && c.detail.contains("0.333333333333333")));
}

#[test]
fn fubini_kernel_on_the_unit_square() {
    let unit = Domain::open_box(vec![0.0], vec![1.0]);
    let h1 = Expr::parse("y1 * y2", VarSpace::y(2)).unwrap();
    let h2 = Expr::parse("exp(y1)", VarSpace::y(1)).unwrap();
    let (l, r) = fubini_kernel(&unit, &unit, &h1, &h2, Quad::default()).unwrap();
    // ∫∫ u x e^x = 1/2 · 1.
    assert!((l - 0.5).abs() < 1e-12 && (r - 0.5).abs() < 1e-12);
}

#[test]
fn invariance_between_presentations() {
    let rep = run_ok("invariance", "G7");
    let gap = rep.checks.iter().find(|c| c.name.ends_with("pushout_gap")).unwrap();
    assert!(gap.residual <= 1e-6);
    assert!(rep.checks.iter().find(|c| c.name.ends_with("count_equal")).unwrap().passed());
}

#[test]
fn cobordant_ends_cancel() {
    for name in ["G4", "G5"] {
        let rep = run_ok("invariance", name);
        assert_eq!(rep.results["ends"], serde_json::json!(["1/1", "-1/1"]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pushout_is_linear(a in -3.0..3.0f64, b in -3.0..3.0f64, eps in 0.05..0.2f64) {
        let s = setup("G1");
        let g = &s.m.primary().gcs;
        let h1 = vec![function_on(1, "exp(0 - y1^2)")];
        let h2 = vec![function_on(1, "y1^3 + 2 * y1 + 1")];
        let mix = vec![h1[0].scale(&Expr::Num(a)).add(&h2[0].scale(&Expr::Num(b))).unwrap()];
        let val = |h: &[Form]| {
            let data = PushoutData { gcs: g, cfps: &s.cfps, pou: &s.pou, h, f: &[] };
            pushout(&data, eps, Mode::Point, Quad::default()).unwrap().scalar().unwrap()
        };
        let lhs = val(&mix);
        let rhs = a * val(&h1) + b * val(&h2);
        prop_assert!((lhs - rhs).abs() < 1e-10, "{} vs {}", lhs, rhs);
    }
}
