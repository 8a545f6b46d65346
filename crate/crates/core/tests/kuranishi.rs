mod common;

use common::*;
use vfckit::bundle::BundleChart;
use vfckit::expr::VarSpace;
use vfckit::kuranishi::*;
use vfckit::map::{ExprMatrix, SmoothMap};
use vfckit::orbifold::{Domain, FiniteGroupAction, OrbifoldChart};
use vfckit::run::presentation_embedding;
use vfckit::tol;

fn chart(label: &str, dim: usize, rank: usize, s: &[&str], psi: &[&str]) -> KuranishiChart {
    let base = OrbifoldChart::new(label, Domain::open_box(vec![-2.0; dim], vec![2.0; dim]), FiniteGroupAction::trivial(dim), vec![0.0; dim]);
    KuranishiChart::new(
        BundleChart::trivial_rep(base, rank),
        SmoothMap::parse(s, VarSpace::y(dim)).unwrap(),
        SmoothMap::parse(psi, VarSpace::y(dim)).unwrap(),
        1,
        1,
    )
    .unwrap()
}

fn line_into_plane(phi: [&str; 2]) -> CoordinateChange {
    CoordinateChange {
        label: "c1>c2".into(),
        kind: ChangeKind::Strong,
        src: "c1".into(),
        dst: "c2".into(),
        domain: Domain::open_box(vec![-2.0], vec![2.0]),
        phi: SmoothMap::parse(&phi, VarSpace::y(1)).unwrap(),
        hom: vec![0],
        phi_hat: ExprMatrix::constant(&nalgebra::DMatrix::from_row_slice(2, 1, &[1.0, 0.0])),
    }
}

#[test]
fn line_into_plane_has_unit_normal_derivative() {
    let c1 = chart("c1", 1, 1, &["y1"], &["y1"]);
    let c2 = chart("c2", 2, 2, &["y1", "y2"], &["y1"]);
    let rep = verify_change(&line_into_plane(["y1", "0"]), &c1, &c2).unwrap();
    assert!(rep.all_pass(), "{rep:?}");
    let nd = rep.get("normal_derivative").unwrap();
    assert!((nd.residual - 1.0).abs() < 1e-12);
}

#[test]
fn degenerate_normal_direction_is_singular() {
    let c1 = chart("c1", 1, 1, &["y1"], &["y1"]);
    let c2 = chart("c2", 2, 2, &["y1", "y2^2"], &["y1"]);
    let rep = verify_change(&line_into_plane(["y1", "0"]), &c1, &c2).unwrap();
    let nd = rep.get("normal_derivative").unwrap();
    assert!(!nd.passed());
    assert!(nd.witness.as_ref().unwrap()[0].abs() < 1e-6);
    match require_normal_derivative(&rep) {
        Err(vfckit::Error::SingularNormalDerivative { sigma_min, .. }) => assert!(sigma_min < tol::RANK),
        other => panic!("expected a singular normal derivative, got {other:?}"),
    }
}

fn nested_with(change: &str, edit: impl Fn(&mut CoordinateChange)) -> KuranishiStructure {
    let mut ks = nested_ok().primary().ks.clone();
    edit(ks.changes.iter_mut().find(|c| c.label == change).unwrap());
    ks
}

#[test]
fn cocycle_holds_on_nested_triple() {
    let m = nested_ok();
    let rep = verify_structure_cocycle(&m.primary().ks, tol::EQUIV);
    let c = rep.get("cocycle[c1>c2>c3]").expect("triple present");
    assert!(c.passed() && c.residual < 1e-12);
}

#[test]
fn cocycle_defect_in_base_map() {
    let ks = nested_with("c1>c3", |c| c.phi = SmoothMap::parse(&["y1 + 0.01", "0", "0"], VarSpace::y(1)).unwrap());
    let rep = verify_structure_cocycle(&ks, tol::EQUIV);
    let c = rep.get("cocycle[c1>c2>c3]").unwrap();
    assert!(!c.passed());
    assert!((c.residual - 0.01).abs() < 1e-9);
    assert!(c.witness.is_some());
}

#[test]
fn cocycle_defect_in_fibre_map() {
    let ks = nested_with("c1>c3", |c| c.phi_hat = ExprMatrix::constant(&nalgebra::DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 0.5])));
    let rep = verify_structure_cocycle(&ks, tol::EQUIV);
    let c = rep.get("cocycle[c1>c2>c3]").unwrap();
    assert!(!c.passed());
    assert!((c.residual - 0.5).abs() < 1e-9);
    assert!(c.detail.contains("fibre 5e-1"), "{}", c.detail);
}

#[test]
fn cocycle_defect_in_middle_change() {
    let ks = nested_with("c2>c3", |c| c.phi = SmoothMap::parse(&["y1", "y2", "0.01 * y1"], VarSpace::y(2)).unwrap());
    let rep = verify_structure_cocycle(&ks, tol::EQUIV);
    let c = rep.get("cocycle[c1>c2>c3]").unwrap();
    assert!(!c.passed());
    // The defect 0.01·y1 is largest at the ends of the interval.
    let w = c.witness.as_ref().unwrap();
    assert!((c.residual - 0.01 * w[0].abs()).abs() < 1e-9);
    assert!(w[0].abs() > 1.5);
}

fn square_residual(rep: &vfckit::check::CheckReport) -> f64 {
    rep.checks.iter().filter(|c| c.name.ends_with("_square")).map(|c| c.residual).fold(0.0, f64::max)
}

fn g7_two() -> Gcs {
    gallery("G7").presentation("two").unwrap().gcs.clone()
}

#[test]
fn gallery_structures_pass_every_check() {
    for name in ALL {
        let m = gallery(name);
        for p in &m.presentations {
            let rep = p.ks.verify().unwrap();
            assert!(rep.all_pass(), "{name}/{}: {:?}", p.name, rep.failures().collect::<Vec<_>>());
            let coc = verify_structure_cocycle(&p.ks, tol::EQUIV);
            assert!(coc.all_pass() && coc.max_residual() < 1e-8, "{name}");
            let ax = verify_gcs_axioms(&p.gcs);
            assert!(ax.all_pass(), "{name}/{}: {:?}", p.name, ax.failures().collect::<Vec<_>>());
            let kg = verify_embedding_record(&p.kg, Side::Ks(&p.ks), Side::Gcs(&p.gcs)).unwrap();
            assert!(kg.all_pass() && square_residual(&kg) < 1e-8, "{name}");
            let gg = verify_embedding_record(&identity_gg(&p.gcs), Side::Gcs(&p.gcs), Side::Gcs(&p.gcs)).unwrap();
            assert!(gg.all_pass(), "{name}");
        }
    }
}

#[test]
fn axioms_detect_missing_order_relation() {
    let g = g7_two();
    let bad = Gcs::new(g.ks.clone(), g.pieces.clone(), &[], g.supports.clone()).unwrap();
    let rep = verify_gcs_axioms(&bad);
    let c = rep.get("comparability").unwrap();
    assert!(!c.passed());
    // Both footprints contain the point 0.
    assert!(c.witness.as_ref().unwrap()[0].abs() < 1e-6);
    assert!(rep.get("support_covering").unwrap().passed());
}

#[test]
fn axioms_detect_uncovered_point() {
    let g = g7_two();
    let mut sup = g.supports.clone();
    sup[0] = Support { k: Domain::open_box(vec![0.5], vec![1.0]), k_prime: None };
    sup[1] = Support { k: Domain::open_box(vec![0.5, 0.5], vec![1.0, 1.0]), k_prime: None };
    let bad = Gcs::new(g.ks.clone(), g.pieces.clone(), &[(0, 1)], sup).unwrap();
    let rep = verify_gcs_axioms(&bad);
    let c = rep.get("support_covering").unwrap();
    assert!(!c.passed());
    assert!(c.witness.as_ref().unwrap()[0].abs() < 1e-6);
}

#[test]
fn axioms_detect_support_pair_not_nested() {
    let g = g7_two();
    let mut sup = g.supports.clone();
    sup[1].k_prime = Some(Domain::open_box(vec![-1.8, -1.8], vec![1.8, 1.8]));
    let bad = Gcs::new(g.ks.clone(), g.pieces.clone(), &[(0, 1)], sup).unwrap();
    let rep = verify_gcs_axioms(&bad);
    let c = rep.get("support_pairs").unwrap();
    assert!(!c.passed());
    assert_eq!(c.witness.as_deref(), Some(&[-1.8, -1.8][..]));
}

#[test]
fn axioms_detect_non_injective_change() {
    let g = g7_two();
    let mut ks = g.ks.clone();
    ks.changes[0].phi = SmoothMap::parse(&["y1^2", "0"], VarSpace::y(1)).unwrap();
    let bad = Gcs::new(ks, g.pieces.clone(), &[(0, 1)], g.supports.clone()).unwrap();
    let rep = verify_gcs_axioms(&bad);
    let c = rep.get("equivalence").unwrap();
    assert!(!c.passed());
    assert!(c.witness.is_some());
}

#[test]
fn embedding_defect_in_base_map() {
    let g = g7_two();
    let mut rec = identity_gg(&g);
    rec.maps[1].phi = SmoothMap::parse(&["y1 + 0.01", "y2"], VarSpace::y(2)).unwrap();
    let rep = verify_embedding_record(&rec, Side::Gcs(&g), Side::Gcs(&g)).unwrap();
    let sq = rep.get("c2>c2/section_square").unwrap();
    assert!(!sq.passed() && (sq.residual - 0.01).abs() < 1e-9);
    assert!(sq.witness.is_some());
    let fp = rep.get("c2>c2/footprint_square").unwrap();
    assert!(!fp.passed() && fp.witness.is_some());
}

#[test]
fn embedding_defect_in_fibre_map() {
    let g = g7_two();
    let mut rec = identity_gg(&g);
    rec.maps[0].phi_hat = ExprMatrix::constant(&nalgebra::DMatrix::from_element(1, 1, 2.0));
    let rep = verify_embedding_record(&rec, Side::Gcs(&g), Side::Gcs(&g)).unwrap();
    let sq = rep.get("c1>c1/section_square").unwrap();
    assert!(!sq.passed());
    // |s(y) − 2 s(y)| = |y| peaks at the edge of the domain.
    let w = sq.witness.as_ref().unwrap();
    assert!((sq.residual - w[0].abs()).abs() < 1e-9);
}

#[test]
fn embedding_defect_in_domain() {
    let g = g7_two();
    let mut rec = identity_gg(&g);
    rec.maps[0].domain = Domain::open_box(vec![0.5], vec![2.0]);
    let rep = verify_embedding_record(&rec, Side::Gcs(&g), Side::Gcs(&g)).unwrap();
    let c = rep.get("c1>c1/domain_cover").unwrap();
    assert!(!c.passed());
    assert!(c.witness.as_ref().unwrap()[0].abs() < 1e-6);
}

#[test]
fn embedding_defect_in_index_map() {
    let g = g7_two();
    let mut rec = identity_gg(&g);
    rec.index_map = vec![("p1".into(), "p2".into()), ("p2".into(), "p1".into())];
    let rep = verify_embedding_record(&rec, Side::Gcs(&g), Side::Gcs(&g)).unwrap();
    let c = rep.get("order_preserving").unwrap();
    assert!(!c.passed());
    assert!(c.detail.contains("p1 < p2"));
}

#[test]
fn single_chart_embeds_into_nested_pair() {
    let m = gallery("G7");
    let (a, b) = (&m.presentation("one").unwrap().gcs, &m.presentation("two").unwrap().gcs);
    let rec = presentation_embedding(a, b).unwrap();
    let rep = verify_embedding_record(&rec, Side::Gcs(a), Side::Gcs(b)).unwrap();
    assert!(rep.all_pass() && square_residual(&rep) < 1e-8, "{:?}", rep);
}

#[test]
fn build_orders_by_dimension() {
    let m = gallery("G7");
    let ks = &m.presentation("two").unwrap().ks;
    let (g, kg) = build_gcs(ks, None).unwrap();
    assert_eq!(g.pieces.len(), 2);
    let lo = g.pieces.iter().position(|p| p.sheets == vec![ks.chart_index("c1").unwrap()]).unwrap();
    let hi = g.pieces.iter().position(|p| p.sheets == vec![ks.chart_index("c2").unwrap()]).unwrap();
    assert!(g.order.contains(&(lo, hi)));
    assert!(verify_gcs_axioms(&g).all_pass());
    assert!(verify_embedding_record(&kg, Side::Ks(ks), Side::Gcs(&g)).unwrap().all_pass());

    let g1m = gallery("G1");
    let one = &g1m.primary().ks;
    let (g1, _) = build_gcs(one, None).unwrap();
    assert_eq!(g1.pieces.len(), 1);
    assert!(g1.order.is_empty());
}

#[test]
fn strip_boundary_is_two_segments() {
    let m = gallery("G5");
    let bd = normalized_boundary(&m.primary().ks).unwrap();
    assert_eq!(bd.charts.len(), 2);
    let signs: Vec<i8> = bd.charts.iter().map(|b| b.chart.or_u).collect();
    assert_eq!(signs.iter().map(|&s| s as i32).sum::<i32>(), 0, "opposite ends carry opposite orientations");
    for b in &bd.charts {
        assert_eq!(b.chart.dim(), 1);
        assert_eq!(b.chart.vdim(), 0);
    }
}

#[test]
fn half_disc_boundary_is_one_segment() {
    let m = gallery("G4");
    let bd = normalized_boundary(&m.primary().ks).unwrap();
    assert_eq!(bd.charts.len(), 1);
    assert_eq!(bd.charts[0].chart.dim(), 1);
}

#[test]
fn closed_square_has_four_edges_and_corners() {
    let dom = Domain::with_faces(vec![0.0, 0.0], vec![1.0, 1.0], vec![true, true], vec![true, true]);
    let base = OrbifoldChart::new("sq", dom.clone(), FiniteGroupAction::trivial(2), vec![0.5, 0.5]);
    let c = KuranishiChart::new(
        BundleChart::trivial_rep(base, 0),
        SmoothMap::new(vec![], 2, 0),
        SmoothMap::parse(&["y1", "y2"], VarSpace::y(2)).unwrap(),
        1,
        1,
    )
    .unwrap();
    let ks = KuranishiStructure { charts: vec![c], ..Default::default() };
    let bd = normalized_boundary(&ks).unwrap();
    assert_eq!(bd.charts.len(), 4);
    let corners = corner_stratum(&dom, 2, 5).samples;
    assert_eq!(corners.len(), 4);
    // Each corner lies on exactly two boundary charts.
    for p in &corners {
        let on = bd.charts.iter().filter(|b| (p[b.face.axis] - dom.face_value(b.face)).abs() < 1e-12).count();
        assert_eq!(on, 2);
    }
}

#[test]
fn stratum_of_top_dimension_is_closed() {
    let m = gallery("G7");
    let ks = &m.presentation("two").unwrap().ks;
    assert!(stratum_closed_check(ks, 2).passed());
    assert!(!dimension_stratum(ks, 2).samples.is_empty());
    assert!(dimension_stratum(ks, 3).samples.is_empty());
}

#[test]
fn products_multiply_dimensions() {
    let a = chart("a", 1, 1, &["y1"], &["y1"]);
    let b = chart("b", 2, 1, &["y1 + y2^2"], &["y1", "y2"]);
    let p = direct_product(&a, &b).unwrap();
    assert_eq!((p.dim(), p.rank(), p.vdim()), (3, 2, 1));
    let x = vfckit::orbifold::Domain::open_box(vec![-1.0], vec![1.0]);
    let m = OrbifoldChart::new("M", x, FiniteGroupAction::trivial(1), vec![0.0]);
    let mchart = KuranishiChart::new(
        BundleChart::trivial_rep(m, 0),
        SmoothMap::new(vec![], 1, 0),
        SmoothMap::identity(1),
        1,
        1,
    )
    .unwrap();
    let line = chart("l", 2, 1, &["y2"], &["y1", "y2"]);
    let (fp, f, kind) = fiber_product(&line, &SmoothMap::parse(&["0.5 * y1"], VarSpace::y(2)).unwrap(), &mchart, &SmoothMap::identity(1)).unwrap();
    assert_eq!(kind, FiberKind::KeepFirst);
    assert_eq!(fp.vdim(), line.vdim());
    assert_eq!(f.dim_out(), 1);
}
