mod common;

use common::*;
use nalgebra::DMatrix;
use vfckit::bundle::*;
use vfckit::expr::VarSpace;
use vfckit::map::{ExprMatrix, SmoothMap};
use vfckit::orbifold::{Domain, FiniteGroupAction, OrbifoldChart};

fn sign_line() -> BundleChart {
    let c = OrbifoldChart::new("c", Domain::open_box(vec![-2.0], vec![2.0]), FiniteGroupAction::sign(1), vec![0.0]);
    BundleChart::new(c, 1, vec![DMatrix::identity(1, 1), -DMatrix::identity(1, 1)]).unwrap()
}

fn map1(s: &str) -> SmoothMap {
    SmoothMap::parse(&[s], VarSpace::y(1)).unwrap()
}

#[test]
fn odd_section_of_sign_bundle() {
    let le = local_expression(&map1("y1"), &sign_line()).unwrap();
    assert!(le.residual < 1e-15);
    assert!(local_expression(&map1("y1^3 - 2 * y1"), &sign_line()).is_ok());
}

#[test]
fn even_section_of_sign_bundle_fails() {
    match local_expression(&map1("y1^2"), &sign_line()) {
        Err(vfckit::Error::EquivarianceFail { y, gamma }) => {
            assert_eq!(gamma, 1);
            assert!(y[0].abs() > 0.0);
        }
        other => panic!("expected an equivariance failure, got {other:?}"),
    }
}

#[test]
fn wrong_fibre_dimension() {
    let s = SmoothMap::parse(&["y1", "y1"], VarSpace::y(1)).unwrap();
    assert_eq!(local_expression(&s, &sign_line()).unwrap_err().code(), "DIM_MISMATCH");
}

#[test]
fn gallery_representations_are_homomorphisms() {
    for name in ALL {
        for c in &gallery(name).charts {
            assert!(c.bundle.homomorphism_residual() < vfckit::tol::GROUP, "{name}/{}", c.label());
            let le = local_expression(&c.s, &c.bundle).unwrap();
            assert!(le.residual < vfckit::tol::EQUIV);
        }
    }
}

#[test]
fn pullback_along_identity_is_the_same_bundle() {
    let b = sign_line();
    let e = BundleEmbedding::identity(&b);
    let p = pullback_bundle(&b, &e, &b.base).unwrap();
    assert_eq!(p.rep, b.rep);
    assert_eq!(p.fiber_dim, 1);
}

#[test]
fn pullback_along_line_into_plane() {
    let m = gallery("G7");
    let c1 = &m.charts[0];
    let c2 = &m.charts[1];
    let e = BundleEmbedding {
        phi: SmoothMap::parse(&["y1", "0"], VarSpace::y(1)).unwrap(),
        hom: vec![0],
        fiber: ExprMatrix::constant(&DMatrix::from_row_slice(2, 1, &[1.0, 0.0])),
        domain: c1.domain().clone(),
    };
    assert!(e.verify(&c1.bundle, &c2.bundle).all_pass());
    let p = pullback_bundle(&c2.bundle, &e, c1.base()).unwrap();
    assert_eq!((p.fiber_dim, p.base.dim), (2, 1));
}

#[test]
fn pullback_leaving_the_target_is_unverified() {
    let b = sign_line();
    let e = BundleEmbedding { phi: map1("y1 + 1"), hom: vec![0, 1], fiber: ExprMatrix::identity(1), domain: b.base.domain.clone() };
    assert_eq!(pullback_bundle(&b, &e, &b.base).unwrap_err().code(), "UNVERIFIED_EMBEDDING");
}

fn datum(pi: &[&str], tilde: DMatrix<f64>) -> BundleExtensionDatum {
    BundleExtensionDatum {
        change: "c1>c2".into(),
        pi: SmoothMap::parse(pi, VarSpace::y(2)).unwrap(),
        phi_tilde: ExprMatrix::constant(&tilde),
        omega12: Domain::open_box(vec![-2.0, -2.0], vec![2.0, 2.0]),
        omega1: Domain::open_box(vec![-2.0], vec![2.0]),
    }
}

fn inclusion() -> (SmoothMap, ExprMatrix) {
    (SmoothMap::parse(&["y1", "0"], VarSpace::y(1)).unwrap(), ExprMatrix::constant(&DMatrix::from_row_slice(2, 1, &[1.0, 0.0])))
}

#[test]
fn linear_retraction_is_an_extension_datum() {
    let m = gallery("G7");
    let p = m.presentation("two").unwrap();
    let rep = p.ks.verify().unwrap();
    assert!(rep.get("c1>c2/datum/retraction_identity").unwrap().passed());
    let (phi, hat) = inclusion();
    let k = Domain::open_box(vec![-1.0], vec![1.0]);
    assert!(verify_bundle_extension(&datum(&["y1"], DMatrix::from_row_slice(2, 1, &[1.0, 0.0])), &phi, &hat, &k).unwrap().all_pass());
}

#[test]
fn curved_retraction_is_an_extension_datum() {
    let (phi, hat) = inclusion();
    let k = Domain::open_box(vec![-1.0], vec![1.0]);
    let rep = verify_bundle_extension(&datum(&["y1 + y2^2"], DMatrix::from_row_slice(2, 1, &[1.0, 0.0])), &phi, &hat, &k).unwrap();
    assert!(rep.all_pass(), "{rep:?}");
}

#[test]
fn degenerate_fibre_extension_fails_rank() {
    let (phi, _) = inclusion();
    let zero = ExprMatrix::constant(&DMatrix::zeros(2, 1));
    let k = Domain::open_box(vec![-1.0], vec![1.0]);
    let rep = verify_bundle_extension(&datum(&["y1"], DMatrix::zeros(2, 1)), &phi, &zero, &k).unwrap();
    let c = rep.get("fiber_rank").unwrap();
    assert!(!c.passed());
    assert!(c.witness.is_some());
    assert!(rep.get("retraction_identity").unwrap().passed());
}

#[test]
fn retraction_not_left_inverse() {
    let (phi, hat) = inclusion();
    let k = Domain::open_box(vec![-1.0], vec![1.0]);
    let rep = verify_bundle_extension(&datum(&["0.5 * y1"], DMatrix::from_row_slice(2, 1, &[1.0, 0.0])), &phi, &hat, &k).unwrap();
    let c = rep.get("retraction_identity").unwrap();
    assert!(!c.passed());
    assert!((c.residual - 0.5).abs() < 1e-9);
}

#[test]
fn neighbourhood_too_small() {
    let (phi, hat) = inclusion();
    let mut d = datum(&["y1"], DMatrix::from_row_slice(2, 1, &[1.0, 0.0]));
    d.omega12 = Domain::open_box(vec![-0.5, -0.5], vec![0.5, 0.5]);
    let k = Domain::open_box(vec![-1.0], vec![1.0]);
    assert_eq!(verify_bundle_extension(&d, &phi, &hat, &k).unwrap_err().code(), "DOMAIN_TOO_SMALL");
}

#[test]
fn retractions_compose() {
    let pi_qp = SmoothMap::parse(&["y1", "y2"], VarSpace::y(3)).unwrap();
    let pi_rq = SmoothMap::parse(&["y1"], VarSpace::y(2)).unwrap();
    let pi_rp = SmoothMap::parse(&["y1"], VarSpace::y(3)).unwrap();
    let common = Domain::open_box(vec![-1.0; 3], vec![1.0; 3]);
    assert!(extension_composition_residual(&pi_qp, &pi_rq, &pi_rp, &common).unwrap() < 1e-15);
    let bent = SmoothMap::parse(&["y1 + 0.1 * y3"], VarSpace::y(3)).unwrap();
    let r = extension_composition_residual(&pi_qp, &pi_rq, &bent, &common).unwrap();
    // The defect 0.1·|y3| is sampled strictly inside the open cube.
    assert!(r > 0.05 && r <= 0.1 + 1e-12, "{r}");
}
