//! Equivariant vector bundles over orbifold charts.

use crate::check::{Check, CheckReport};
use crate::error::{Error, Result};
use crate::map::{ExprMatrix, SmoothMap};
use crate::numeric::{dist, sigma_min};
use crate::orbifold::{Domain, FiniteGroupAction, OrbifoldChart};
use crate::tol;
use nalgebra::{DMatrix, DVector};

/// Trivial bundle `V × R^k` with Γ acting on the fibre by `rep`.
#[derive(Clone, Debug, PartialEq)]
pub struct BundleChart {
    pub base: OrbifoldChart,
    pub fiber_dim: usize,
    pub rep: Vec<DMatrix<f64>>,
    pub label: String,
}

impl BundleChart {
    pub fn new(base: OrbifoldChart, fiber_dim: usize, rep: Vec<DMatrix<f64>>) -> Result<Self> {
        if rep.len() != base.group.order() {
            return Err(Error::MalformedMatrix(format!(
                "{} representation matrices for a group of order {}",
                rep.len(),
                base.group.order()
            )));
        }
        for m in &rep {
            if m.nrows() != fiber_dim || m.ncols() != fiber_dim {
                return Err(Error::MalformedMatrix(format!("representation matrix is not {fiber_dim}x{fiber_dim}")));
            }
        }
        let label = base.label.clone();
        Ok(BundleChart { base, fiber_dim, rep, label })
    }

    pub fn trivial_rep(base: OrbifoldChart, fiber_dim: usize) -> Self {
        let rep = vec![DMatrix::identity(fiber_dim, fiber_dim); base.group.order()];
        let label = base.label.clone();
        BundleChart { base, fiber_dim, rep, label }
    }

    pub fn act(&self, g: usize, e: &[f64]) -> Vec<f64> {
        let m = &self.rep[g];
        (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)] * e[j]).sum()).collect()
    }

    /// Max residual of ρ(g)ρ(h) − ρ(gh).
    pub fn homomorphism_residual(&self) -> f64 {
        let g = &self.base.group;
        let mut worst: f64 = 0.0;
        for a in 0..g.order() {
            for b in 0..g.order() {
                let r = match g.product_index(a, b) {
                    Some(ab) => (&self.rep[a] * &self.rep[b] - &self.rep[ab]).abs().max(),
                    None => f64::INFINITY,
                };
                worst = worst.max(r);
            }
        }
        worst
    }

    /// Fibre representation as a group action (for orbit computations in E).
    pub fn fiber_action(&self) -> FiniteGroupAction {
        FiniteGroupAction { elements: self.rep.clone(), labels: self.base.group.labels.clone() }
    }
}

/// Sample points used by equivariance checks: probes near the base point, then a grid.
pub fn chart_samples(chart: &OrbifoldChart, k: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for i in 0..chart.dim {
        let mut p = chart.base_point.clone();
        p[i] += 1.0;
        if chart.domain.contains(&p) {
            out.push(p);
        }
    }
    out.extend(chart.domain.samples(k));
    out
}

/// Local expression of a section on a bundle chart, after the equivariance check.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalExpression {
    pub map: SmoothMap,
    pub residual: f64,
}

/// Verify s(γy) = ρ(γ)s(y) on samples and return the evaluator.
pub fn local_expression(section: &SmoothMap, bundle: &BundleChart) -> Result<LocalExpression> {
    if section.dim_out() != bundle.fiber_dim {
        return Err(Error::DimMismatch(format!(
            "section has {} components, fibre has dimension {}",
            section.dim_out(),
            bundle.fiber_dim
        )));
    }
    let chart = &bundle.base;
    let k = crate::orbifold::sample_count_for(200, chart.dim);
    let mut worst: f64 = 0.0;
    for y in chart_samples(chart, k) {
        let sy = section.at(&y);
        for g in 0..chart.group.order() {
            let gy = chart.group.apply(g, &y);
            let lhs = section.at(&gy);
            let rhs = bundle.act(g, sy.as_slice());
            let r = dist(lhs.as_slice(), &rhs);
            if r > tol::EQUIV {
                return Err(Error::EquivarianceFail { y, gamma: g });
            }
            worst = worst.max(r);
        }
    }
    Ok(LocalExpression { map: section.clone(), residual: worst })
}

/// Embedding of bundle charts: base map φ, group monomorphism, fibrewise linear maps g_y.
#[derive(Clone, Debug, PartialEq)]
pub struct BundleEmbedding {
    pub phi: SmoothMap,
    pub hom: Vec<usize>,
    /// `rank_dst × rank_src` matrix in source coordinates.
    pub fiber: ExprMatrix,
    pub domain: Domain,
}

impl BundleEmbedding {
    pub fn identity(b: &BundleChart) -> Self {
        BundleEmbedding {
            phi: SmoothMap::identity(b.base.dim),
            hom: (0..b.base.group.order()).collect(),
            fiber: ExprMatrix::identity(b.fiber_dim),
            domain: b.base.domain.clone(),
        }
    }

    /// Injectivity of g_y and equivariance of base and fibre maps on samples.
    pub fn verify(&self, src: &BundleChart, dst: &BundleChart) -> CheckReport {
        let mut rep = CheckReport::new();
        let k = crate::orbifold::sample_count_for(100, src.base.dim);
        let samples = self.domain.samples(k);
        let mut smin = f64::INFINITY;
        let mut smin_at = None;
        let mut eq: f64 = 0.0;
        let mut eq_at = None;
        let mut inside = true;
        let mut outside_at = None;
        for y in &samples {
            let g = self.fiber.at(y);
            let s = if g.ncols() == 0 { f64::INFINITY } else { sigma_min(&g) };
            if s < smin {
                smin = s;
                smin_at = Some(y.clone());
            }
            let py = self.phi.at(y);
            if !dst.base.domain.contains(py.as_slice()) && inside {
                inside = false;
                outside_at = Some(y.clone());
            }
            for a in 0..src.base.group.order() {
                let ay = src.base.group.apply(a, y);
                if !self.domain.contains(&ay) {
                    continue;
                }
                let ha = self.hom.get(a).copied().unwrap_or(0);
                let r1 = dist(self.phi.at(&ay).as_slice(), &dst.base.group.apply(ha, py.as_slice()));
                let lhs = self.fiber.at(&ay) * &src.rep[a];
                let rhs = &dst.rep[ha] * &g;
                let r2 = if lhs.shape() == rhs.shape() { (lhs - rhs).abs().max() } else { f64::INFINITY };
                let r = r1.max(r2);
                if r > eq {
                    eq = r;
                    eq_at = Some(y.clone());
                }
            }
        }
        rep.push(Check::new("fiber_injective", smin > tol::RANK, smin).with_witness((smin <= tol::RANK).then_some(smin_at).flatten()));
        rep.push(Check::residual("equivariance", eq, tol::EQUIV).with_witness((eq >= tol::EQUIV).then_some(eq_at).flatten()));
        rep.push(Check::new("image_in_target", inside, 0.0).with_witness(outside_at));
        rep
    }
}

/// Pull a bundle back along a verified embedding: same fibre, representation ρ∘h.
pub fn pullback_bundle(bundle: &BundleChart, emb: &BundleEmbedding, src: &OrbifoldChart) -> Result<BundleChart> {
    let src_bundle = BundleChart {
        base: src.clone(),
        fiber_dim: bundle.fiber_dim,
        rep: emb.hom.iter().map(|&h| bundle.rep[h].clone()).collect(),
        label: format!("{}*", bundle.label),
    };
    let probe = BundleEmbedding {
        phi: emb.phi.clone(),
        hom: emb.hom.clone(),
        fiber: ExprMatrix::identity(bundle.fiber_dim),
        domain: emb.domain.clone(),
    };
    let rep = probe.verify(&src_bundle, bundle);
    if emb.hom.len() != src.group.order() || !rep.all_pass() {
        let why = rep.failures().map(|c| c.name.clone()).collect::<Vec<_>>().join(", ");
        return Err(Error::UnverifiedEmbedding(why));
    }
    Ok(src_bundle)
}

/// Retraction π: Ω₁₂ → Ω₁ with a fibre extension φ̃ of the bundle map along it.
#[derive(Clone, Debug, PartialEq)]
pub struct BundleExtensionDatum {
    /// Coordinate change this datum belongs to.
    pub change: String,
    pub pi: SmoothMap,
    /// `rank_p × rank_q` matrix in the coordinates of the larger chart.
    pub phi_tilde: ExprMatrix,
    pub omega12: Domain,
    pub omega1: Domain,
}

impl BundleExtensionDatum {
    /// φ̃(y) · v.
    pub fn extend(&self, y: &[f64], v: &DVector<f64>) -> DVector<f64> {
        self.phi_tilde.at(y) * v
    }

    /// Whether the retraction is defined on the whole chart.
    pub fn covers(&self, domain: &Domain) -> bool {
        let (lo, hi) = domain.bbox();
        let (olo, ohi) = self.omega12.bbox();
        lo.iter().zip(&olo).all(|(a, b)| a >= b) && hi.iter().zip(&ohi).all(|(a, b)| a <= b)
    }
}

/// Check retraction ∘ embedding = id and φ̃ = φ̂ along the embedded copy of `k`.
pub fn verify_bundle_extension(datum: &BundleExtensionDatum, phi: &SmoothMap, phi_hat: &ExprMatrix, k: &Domain) -> Result<CheckReport> {
    let kk = crate::orbifold::sample_count_for(200, k.dim());
    let samples: Vec<Vec<f64>> = {
        let (lo, hi) = k.bbox();
        crate::numeric::closed_grid(&lo, &hi, kk)
            .into_iter()
            .filter(|p| k.contains_closed(p, 1e-12))
            .collect()
    };
    for y in &samples {
        let x = phi.at(y);
        if !datum.omega12.contains(x.as_slice()) || datum.omega12.margin_to_open_boundary(x.as_slice()) <= 0.0 {
            return Err(Error::DomainTooSmall(x.as_slice().to_vec()));
        }
        if !datum.omega1.contains(y) {
            return Err(Error::DomainTooSmall(y.clone()));
        }
    }
    let mut retract: f64 = 0.0;
    let mut restrict: f64 = 0.0;
    let mut smin = f64::INFINITY;
    let mut smin_at = None;
    for y in &samples {
        let x = phi.at(y);
        retract = retract.max(dist(datum.pi.at(x.as_slice()).as_slice(), y));
        let a = datum.phi_tilde.at(x.as_slice());
        let b = phi_hat.at(y);
        restrict = restrict.max(if a.shape() == b.shape() { (a.clone() - b).abs().max() } else { f64::INFINITY });
        let s = if a.ncols() == 0 { f64::INFINITY } else { sigma_min(&a) };
        if s < smin {
            smin = s;
            smin_at = Some(x.as_slice().to_vec());
        }
    }
    let mut rep = CheckReport::new();
    rep.push(Check::residual("retraction_identity", retract, tol::EQUIV));
    rep.push(Check::residual("restricts_to_bundle_map", restrict, tol::EQUIV));
    rep.push(Check::new("fiber_rank", smin > tol::RANK, smin).with_witness((smin <= tol::RANK).then_some(smin_at).flatten()));
    Ok(rep)
}

/// π_rq ∘ π_qp = π_rp on samples of the common domain.
pub fn extension_composition_residual(pi_qp: &SmoothMap, pi_rq: &SmoothMap, pi_rp: &SmoothMap, common: &Domain) -> Result<f64> {
    let comp = pi_rq.compose(pi_qp)?;
    let k = crate::orbifold::sample_count_for(200, common.dim());
    Ok(common
        .samples(k)
        .iter()
        .map(|y| dist(comp.at(y).as_slice(), pi_rp.at(y).as_slice()))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::VarSpace;

    fn g2() -> BundleChart {
        let c = OrbifoldChart::new("c", Domain::open_box(vec![-2.0], vec![2.0]), FiniteGroupAction::sign(1), vec![0.0]);
        BundleChart::new(c, 1, vec![DMatrix::identity(1, 1), -DMatrix::identity(1, 1)]).unwrap()
    }

    #[test]
    fn odd_section_is_equivariant() {
        let s = SmoothMap::parse(&["y1"], VarSpace::y(1)).unwrap();
        assert_eq!(local_expression(&s, &g2()).unwrap().residual, 0.0);
        let s2 = SmoothMap::parse(&["y1^2"], VarSpace::y(1)).unwrap();
        match local_expression(&s2, &g2()) {
            Err(Error::EquivarianceFail { y, gamma }) => {
                assert_eq!(y, vec![1.0]);
                assert_eq!(gamma, 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn representation_is_homomorphism() {
        assert_eq!(g2().homomorphism_residual(), 0.0);
    }

    #[test]
    fn extension_checks() {
        let phi = SmoothMap::parse(&["y1", "0"], VarSpace::y(1)).unwrap();
        let phi_hat = ExprMatrix::constant(&DMatrix::from_row_slice(2, 1, &[1.0, 0.0]));
        let datum = BundleExtensionDatum {
            change: "c".into(),
            pi: SmoothMap::parse(&["y1 + y2^2"], VarSpace::y(2)).unwrap(),
            phi_tilde: phi_hat.clone(),
            omega12: Domain::open_box(vec![-2.0, -2.0], vec![2.0, 2.0]),
            omega1: Domain::open_box(vec![-2.0], vec![2.0]),
        };
        let k = Domain::open_box(vec![-1.5], vec![1.5]);
        let rep = verify_bundle_extension(&datum, &phi, &phi_hat, &k).unwrap();
        assert!(rep.all_pass(), "{rep:?}");
        let mut bad = datum.clone();
        bad.phi_tilde = ExprMatrix::constant(&DMatrix::zeros(2, 1));
        let rep = verify_bundle_extension(&bad, &phi, &phi_hat, &k).unwrap();
        assert!(!rep.get("fiber_rank").unwrap().passed());
        let mut small = datum;
        small.omega12 = Domain::open_box(vec![-1.0, -2.0], vec![1.0, 2.0]);
        assert_eq!(verify_bundle_extension(&small, &phi, &phi_hat, &k).unwrap_err().code(), "DOMAIN_TOO_SMALL");
    }
}
