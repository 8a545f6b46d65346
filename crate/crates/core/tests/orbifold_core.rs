mod common;

use common::*;
use proptest::prelude::*;
use vfckit::expr::{Env, Expr, VarSpace};
use vfckit::integrate::gcs_partition;
use vfckit::orbifold::*;

fn line(group: FiniteGroupAction) -> OrbifoldChart {
    OrbifoldChart::new("c", Domain::open_box(vec![-2.0], vec![2.0]), group, vec![0.0])
}

#[test]
fn gallery_groups_satisfy_axioms() {
    for name in ALL {
        for c in &gallery(name).charts {
            let (closure, identity, inverse) = c.group().axiom_residuals();
            assert!(closure.max(identity).max(inverse) < vfckit::tol::GROUP, "{name}/{}", c.label());
            let rep = verify_chart(c.base()).unwrap();
            assert!(rep.all_pass(), "{name}/{}: {:?}", c.label(), rep.failures().collect::<Vec<_>>());
        }
    }
}

#[test]
fn cone_point_stabilizer_has_full_order() {
    for n in 2..=4 {
        let m = gallery(&format!("G3:{n}"));
        let c = &m.charts[0];
        let st = stabilizer(c.base(), &vec![0.0; c.dim()]).unwrap();
        assert_eq!(st.indices.len(), n);
        let off = stabilizer(c.base(), &[0.3, 0.1]).unwrap();
        assert_eq!(off.indices.len(), 1);
    }
}

#[test]
fn single_full_piece_is_constant_one() {
    let c = line(FiniteGroupAction::trivial(1));
    let piece = PouPiece { domain: c.domain.clone(), group: c.group.clone(), support: c.domain.clone(), margin: 0.1, full: true };
    let chis = partition_of_unity(&[piece], &[], &[vec![(0, vec![0.0])], vec![(0, vec![1.9])]]).unwrap();
    for y in c.domain.samples(17) {
        assert_eq!(chis[0].eval(&Env::y(&y)), 1.0);
    }
}

#[test]
fn uncovered_target_is_a_cover_gap() {
    let c = line(FiniteGroupAction::trivial(1));
    let piece = PouPiece { domain: c.domain.clone(), group: c.group.clone(), support: Domain::open_box(vec![0.5], vec![1.5]), margin: 0.1, full: false };
    let err = partition_of_unity(&[piece], &[], &[vec![(0, vec![0.0])]]).unwrap_err();
    assert_eq!(err.code(), "COVER_GAP");
    assert!(matches!(err, vfckit::Error::CoverGap(ref w) if w == &vec![0.0]));
}

#[test]
fn nested_pieces_sum_to_one_on_footprints() {
    let m = gallery("G7");
    let g = &m.presentation("two").unwrap().gcs;
    let chis = gcs_partition(g).unwrap();
    let c1 = &g.ks.charts[g.ks.chart_index("c1").unwrap()];
    let c2 = &g.ks.charts[g.ks.chart_index("c2").unwrap()];
    let (i1, i2) = (g.ks.chart_index("c1").unwrap(), g.ks.chart_index("c2").unwrap());
    let a = chis[i1].eval(&Env::y(&[0.0]));
    let b = chis[i2].eval(&Env::y(&[0.0, 0.0]));
    assert!((a + b - 1.0).abs() < vfckit::tol::POU, "{a} + {b}");
    assert_eq!((c1.dim(), c2.dim()), (1, 2));
}

#[test]
fn group_order_divides_integrals() {
    let c = line(FiniteGroupAction::trivial(1));
    let z2 = line(FiniteGroupAction::sign(1));
    let form = Form::top(1, Expr::parse("exp(0 - y1^2)", VarSpace::y(1)).unwrap());
    let one = Expr::one();
    let a = integrate_top_form(&[(&c, &form, &one, &c.domain)], 16).unwrap();
    let b = integrate_top_form(&[(&z2, &form, &one, &z2.domain)], 16).unwrap();
    // ∫_{-2}^{2} e^{-y²} dy = √π erf(2).
    assert!((a - 1.764_162_781_524_843).abs() < 1e-9, "{a}");
    assert!((b - a / 2.0).abs() < 1e-12);
}

#[test]
fn wrong_degree_is_rejected() {
    let c = OrbifoldChart::new("p", Domain::open_box(vec![-1.0, -1.0], vec![1.0, 1.0]), FiniteGroupAction::trivial(2), vec![0.0, 0.0]);
    let f = Form::dy(2, 0);
    let one = Expr::one();
    assert_eq!(integrate_top_form(&[(&c, &f, &one, &c.domain)], 8).unwrap_err().code(), "DIM_MISMATCH");
}

#[test]
fn local_representative_on_sign_chart() {
    let c = line(FiniteGroupAction::sign(1));
    let atlas = OrbifoldAtlas {
        charts: vec![c.clone()],
        transitions: vec![],
        global: vec![vfckit::map::SmoothMap::identity(1)],
    };
    let r = local_representative(&atlas, 0, 0, &[-0.5]).unwrap();
    let again = local_representative(&atlas, 0, 0, &[0.5]).unwrap();
    // Both points of the orbit {±0.5} land on the same canonical representative.
    assert!((r.map.at(&[-0.5])[0] - again.map.at(&[0.5])[0]).abs() < 1e-15);
    assert_ne!(r.mu, again.mu);
    assert_eq!(local_representative(&atlas, 0, 0, &[3.0]).unwrap_err().code(), "NOT_IN_OVERLAP");
}

fn eval(f: &Form, y: &[f64], vecs: &[Vec<f64>]) -> f64 {
    match form_calculus(FormOp::Evaluate(f, y, vecs)).unwrap() {
        FormValue::Scalar(x) => x,
        FormValue::Form(_) => unreachable!(),
    }
}

fn function(a: f64, b: f64, c: f64) -> Form {
    let src = format!("{a} * y1^2 * y2 + {b} * sin(y1 * y2) + {c} * exp(y2) * cos(y1)");
    Form::function(2, Expr::parse(&src, VarSpace::y(2)).unwrap())
}

fn coeffs() -> impl Strategy<Value = (f64, f64, f64)> {
    (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64)
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5..1.5f64, 2)
}

const E: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, 1.0]];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn d_squared_vanishes((a, b, c) in coeffs(), y in point()) {
        let f = function(a, b, c);
        let dd = f.d().unwrap().d().unwrap();
        let v = eval(&dd, &y, &[E[0].to_vec(), E[1].to_vec()]);
        prop_assert!(v.abs() < 1e-9, "{}", v);
    }

    #[test]
    fn wedge_of_one_forms_is_antisymmetric((a, b, c) in coeffs(), (p, q, r) in coeffs(), y in point()) {
        let u = function(a, b, c).d().unwrap();
        let v = function(p, q, r).d().unwrap();
        let uv = eval(&u.wedge(&v).unwrap(), &y, &[E[0].to_vec(), E[1].to_vec()]);
        let vu = eval(&v.wedge(&u).unwrap(), &y, &[E[0].to_vec(), E[1].to_vec()]);
        prop_assert!((uv + vu).abs() < 1e-9);
    }

    #[test]
    fn d_is_linear((a, b, c) in coeffs(), (p, q, r) in coeffs(), y in point(), s in -2.0..2.0f64) {
        let f = function(a, b, c);
        let g = function(p, q, r);
        let sum = f.scale(&Expr::Num(s)).add(&g).unwrap();
        for e in E {
            let lhs = eval(&sum.d().unwrap(), &y, &[e.to_vec()]);
            let rhs = s * eval(&f.d().unwrap(), &y, &[e.to_vec()]) + eval(&g.d().unwrap(), &y, &[e.to_vec()]);
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn pullback_commutes_with_d((a, b, c) in coeffs(), t in -1.0..1.0f64) {
        let f = function(a, b, c);
        let curve = vfckit::map::SmoothMap::parse(&["cos(y1)", "y1^3 - y1"], VarSpace::y(1)).unwrap();
        let lhs = f.pullback(&curve).unwrap().d().unwrap();
        let rhs = f.d().unwrap().pullback(&curve).unwrap();
        let (l, r) = (eval(&lhs, &[t], &[vec![1.0]]), eval(&rhs, &[t], &[vec![1.0]]));
        prop_assert!((l - r).abs() < 1e-9);
    }

    #[test]
    fn bump_is_one_inside_and_zero_outside(lo in -1.5..-0.5f64, hi in 0.5..1.5f64, y in -2.0..2.0f64) {
        let dom = Domain::open_box(vec![-2.0], vec![2.0]);
        let k = Domain::open_box(vec![lo], vec![hi]);
        let b = bump_expr(&k, &dom, 0.2).eval(&Env::y(&[y]));
        if y > lo + 0.2 && y < hi - 0.2 {
            prop_assert!((b - 1.0).abs() < 1e-12);
        }
        if y <= lo || y >= hi {
            prop_assert!(b.abs() < 1e-12);
        }
        prop_assert!((0.0..=1.0).contains(&b));
    }
}
