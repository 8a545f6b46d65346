//! Kuranishi charts, coordinate changes, Kuranishi structures and good coordinate systems,
//! embeddings between them, products and normalized boundaries.

use crate::bundle::{local_expression, BundleChart, BundleEmbedding, BundleExtensionDatum};
use crate::check::{Check, CheckReport, Status};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::map::{ExprMatrix, SmoothMap};
use crate::numeric::{dist, lex_cmp, sigma_min};
use crate::orbifold::{effectivity_check, sample_count_for, verify_chart, Domain, Face, FiniteGroupAction, OrbifoldChart};
use crate::tol;
use crate::zeros::{self, gauss_newton};
use nalgebra::{DMatrix, DVector};
use std::collections::BTreeSet;

/// (U, E, Γ, s, ψ) with coordinate orientations of U and E.
#[derive(Clone, Debug, PartialEq)]
pub struct KuranishiChart {
    pub bundle: BundleChart,
    pub s: SmoothMap,
    /// Global coordinates of the footprint; Γ-invariant.
    pub psi: SmoothMap,
    pub or_u: i8,
    pub or_e: i8,
}

impl KuranishiChart {
    pub fn new(bundle: BundleChart, s: SmoothMap, psi: SmoothMap, or_u: i8, or_e: i8) -> Result<Self> {
        let n = bundle.base.dim;
        if s.dim_in() > n || psi.dim_in() > n {
            return Err(Error::DimMismatch(format!("chart {} has dimension {n}", bundle.label)));
        }
        if s.dim_out() != bundle.fiber_dim {
            return Err(Error::DimMismatch(format!(
                "section of {} has {} components, obstruction rank is {}",
                bundle.label,
                s.dim_out(),
                bundle.fiber_dim
            )));
        }
        if or_u.abs() != 1 || or_e.abs() != 1 {
            return Err(Error::Type("orientation flags must be +1 or -1".into()));
        }
        let s = s.widen(n, 0);
        let psi = psi.widen(n, 0);
        local_expression(&s, &bundle)?;
        Ok(KuranishiChart { bundle, s, psi, or_u, or_e })
    }

    pub fn label(&self) -> &str {
        &self.bundle.label
    }
    pub fn base(&self) -> &OrbifoldChart {
        &self.bundle.base
    }
    pub fn domain(&self) -> &Domain {
        &self.bundle.base.domain
    }
    pub fn group(&self) -> &FiniteGroupAction {
        &self.bundle.base.group
    }
    pub fn dim(&self) -> usize {
        self.bundle.base.dim
    }
    pub fn rank(&self) -> usize {
        self.bundle.fiber_dim
    }
    pub fn vdim(&self) -> i64 {
        self.dim() as i64 - self.rank() as i64
    }
    /// Product of the two orientation flags.
    pub fn orientation(&self) -> f64 {
        (self.or_u * self.or_e) as f64
    }

    pub fn field(&self) -> impl Fn(&[f64]) -> (DVector<f64>, DMatrix<f64>) + Sync + '_ {
        move |y: &[f64]| (self.s.at(y), self.s.jac_at(y))
    }

    /// Sample points of s⁻¹(0) ∩ region.
    pub fn zero_samples(&self, region: &Domain) -> Vec<Vec<f64>> {
        let n = self.dim();
        let pts = if self.rank() == 0 {
            region.samples(sample_count_for(400, n))
        } else if self.vdim() == 0 {
            zeros::grid_zeros(&self.field(), region, tol::SEEDS_PER_DIM)
        } else {
            zeros::project_samples(&self.field(), region, sample_count_for(400, n))
        };
        pts.into_iter().filter(|p| region.contains(p) && self.domain().contains(p)).collect()
    }

    /// A point of s⁻¹(0) ∩ closure(region) with ψ = z, found by Gauss–Newton on (s, ψ − z).
    pub fn locate(&self, z: &[f64], region: &Domain) -> Option<Vec<f64>> {
        self.locate_with(z, region, true)
    }

    /// A point of closure(region) with ψ = z, not necessarily a zero of s.
    pub fn locate_near(&self, z: &[f64], region: &Domain) -> Option<Vec<f64>> {
        self.locate_with(z, region, false)
    }

    fn locate_with(&self, z: &[f64], region: &Domain, on_zeros: bool) -> Option<Vec<f64>> {
        let r = if on_zeros { self.rank() } else { 0 };
        let n = self.dim();
        let m = self.psi.dim_out();
        if z.len() != m {
            return None;
        }
        let f = |y: &[f64]| {
            let mut v = DVector::zeros(r + m);
            let mut j = DMatrix::zeros(r + m, n);
            if r > 0 {
                v.rows_mut(0, r).copy_from(&self.s.at(y));
                j.view_mut((0, 0), (r, n)).copy_from(&self.s.jac_at(y));
            }
            let p = self.psi.at(y);
            for i in 0..m {
                v[r + i] = p[i] - z[i];
            }
            j.view_mut((r, 0), (m, n)).copy_from(&self.psi.jac_at(y));
            (v, j)
        };
        let (lo, hi) = region.bbox();
        let mut seeds: Vec<(f64, Vec<f64>)> = crate::numeric::closed_grid(&lo, &hi, sample_count_for(300, n))
            .into_iter()
            .filter(|p| region.contains_closed(p, 1e-12))
            .map(|p| (f(&p).0.norm(), p))
            .collect();
        seeds.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| lex_cmp(&a.1, &b.1)));
        for (_, s) in seeds.iter().take(6) {
            if let Some(x) = gauss_newton(&f, s, 1e-9) {
                if region.contains_closed(&x, 1e-9) {
                    return Some(x);
                }
            }
        }
        None
    }
}

/// Orbifold, bundle, section and footprint checks for one chart.
pub fn verify_kchart(c: &KuranishiChart) -> Result<CheckReport> {
    let mut rep = CheckReport::new();
    rep.extend("orbifold", verify_chart(c.base())?);
    rep.push(Check::residual("bundle_homomorphism", c.bundle.homomorphism_residual(), tol::GROUP));
    match local_expression(&c.s, &c.bundle) {
        Ok(l) => rep.push(Check::residual("section_equivariance", l.residual, tol::EQUIV)),
        Err(Error::EquivarianceFail { y, gamma }) => rep.push(
            Check::new("section_equivariance", false, f64::NAN)
                .with_witness(Some(y))
                .with_detail(format!("group element {gamma}")),
        ),
        Err(e) => return Err(e),
    }
    let zs = c.zero_samples(c.domain());
    let mut worst: (f64, Option<Vec<f64>>) = (0.0, None);
    for y in &zs {
        let p = c.psi.at(y);
        for g in 0..c.group().order() {
            let gy = c.group().apply(g, y);
            let r = dist(c.psi.at(&gy).as_slice(), p.as_slice());
            if r > worst.0 {
                worst = (r, Some(y.clone()));
            }
        }
    }
    rep.push(Check::residual("footprint_invariance", worst.0, tol::EQUIV).with_witness((worst.0 >= tol::EQUIV).then_some(worst.1).flatten()));
    Ok(rep)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChangeKind {
    Weak,
    Strong,
    /// Same-dimensional open embedding used to glue sheets of a sum chart.
    Open,
}

/// Coordinate change from the smaller chart `src` into `dst`, defined on `domain ⊂ U_src`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateChange {
    pub label: String,
    pub kind: ChangeKind,
    pub src: String,
    pub dst: String,
    pub domain: Domain,
    pub phi: SmoothMap,
    pub hom: Vec<usize>,
    /// `rank_dst × rank_src`, in source coordinates.
    pub phi_hat: ExprMatrix,
}

impl CoordinateChange {
    pub fn embedding(&self) -> BundleEmbedding {
        BundleEmbedding { phi: self.phi.clone(), hom: self.hom.clone(), fiber: self.phi_hat.clone(), domain: self.domain.clone() }
    }
}

/// Orthonormal basis of the orthogonal complement of the column space.
pub fn complement(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut from_m = 0;
    let cands = (0..m.ncols()).map(|j| (true, m.column(j).into_owned())).chain((0..n).map(|i| {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        (false, e)
    }));
    for (is_m, c) in cands {
        let mut v = c.clone();
        for _ in 0..2 {
            for b in &basis {
                v -= b * b.dot(&v);
            }
        }
        if v.norm() > 1e-8 * c.norm().max(1.0) {
            basis.push(v.normalize());
            if is_m {
                from_m += 1;
            }
        }
    }
    let rest = &basis[from_m..];
    DMatrix::from_fn(n, rest.len(), |i, j| rest[j][i])
}

/// Smallest singular value of the map TU_dst/TU_src → E_dst/E_src induced by Ds_dst at y.
pub fn normal_sigma(change: &CoordinateChange, dst: &KuranishiChart, y: &[f64]) -> f64 {
    let x = change.phi.at(y);
    let n = complement(&change.phi.jac_at(y));
    let q = complement(&change.phi_hat.at(y));
    let m = q.transpose() * dst.s.jac_at(x.as_slice()) * n;
    if m.nrows() == 0 && m.ncols() == 0 {
        return f64::INFINITY;
    }
    if m.nrows() != m.ncols() {
        return 0.0;
    }
    sigma_min(&m)
}

/// Itemized checks of a coordinate change, including the normal-derivative isomorphism.
pub fn verify_change(change: &CoordinateChange, src: &KuranishiChart, dst: &KuranishiChart) -> Result<CheckReport> {
    if change.phi.dim_in() > src.dim() || change.phi.dim_out() != dst.dim() {
        return Err(Error::DimMismatch(format!("change {} maps R^{} to R^{}", change.label, change.phi.dim_in(), change.phi.dim_out())));
    }
    if change.phi_hat.rows != dst.rank() || change.phi_hat.cols != src.rank() {
        return Err(Error::DimMismatch(format!("fibre map of {} is {}x{}", change.label, change.phi_hat.rows, change.phi_hat.cols)));
    }
    if src.vdim() != dst.vdim() {
        return Err(Error::DimMismatch(format!("virtual dimensions {} and {}", src.vdim(), dst.vdim())));
    }
    let mut rep = CheckReport::new();
    rep.extend("embedding", change.embedding().verify(&src.bundle, &dst.bundle));

    let k = sample_count_for(400, src.dim());
    let mut sec: (f64, Option<Vec<f64>>) = (0.0, None);
    for y in change.domain.samples(k) {
        let x = change.phi.at(&y);
        let lhs = dst.s.at(x.as_slice());
        let rhs = change.phi_hat.at(&y) * src.s.at(&y);
        let r = (lhs - rhs).norm();
        if r > sec.0 {
            sec = (r, Some(y));
        }
    }
    rep.push(Check::residual("section_compatibility", sec.0, tol::EQUIV).with_witness((sec.0 >= tol::EQUIV).then_some(sec.1).flatten()));

    let zs = src.zero_samples(&change.domain);
    let mut fp: (f64, Option<Vec<f64>>) = (0.0, None);
    let mut smin = (f64::INFINITY, None);
    for y in &zs {
        let x = change.phi.at(y);
        let r = dist(dst.psi.at(x.as_slice()).as_slice(), src.psi.at(y).as_slice());
        if r > fp.0 {
            fp = (r, Some(y.clone()));
        }
        let s = normal_sigma(change, dst, y);
        if s < smin.0 {
            smin = (s, Some(y.clone()));
        }
    }
    rep.push(Check::residual("footprint_compatibility", fp.0, tol::EQUIV).with_witness((fp.0 >= tol::EQUIV).then_some(fp.1).flatten()));
    let nd = if smin.0.is_finite() {
        Check::new("normal_derivative", smin.0 > tol::RANK, smin.0).with_witness((smin.0 <= tol::RANK).then_some(smin.1).flatten())
    } else {
        Check::new("normal_derivative", true, 0.0).with_detail("no zeros in the domain or zero codimension")
    };
    rep.push(nd);

    if change.kind == ChangeKind::Strong {
        // Every footprint point of dst that lies in Im ψ_src must come from U_change.
        let mut bad = None;
        for x in dst.zero_samples(dst.domain()) {
            let z = dst.psi.at(&x);
            if let Some(y) = src.locate(z.as_slice(), src.domain()) {
                if src.domain().contains(&y) && !change.domain.contains(&y) {
                    bad = Some(y);
                    break;
                }
            }
        }
        rep.push(Check::new("strong_footprint", bad.is_none(), 0.0).with_witness(bad));
    }
    Ok(rep)
}

/// Turn a failed normal-derivative item into the corresponding error.
pub fn require_normal_derivative(rep: &CheckReport) -> Result<()> {
    match rep.get("normal_derivative") {
        Some(c) if !c.passed() => Err(Error::SingularNormalDerivative {
            point: c.witness.clone().unwrap_or_default(),
            sigma_min: c.residual,
        }),
        _ => Ok(()),
    }
}

/// Finite generating family of charts with coordinate changes.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct KuranishiStructure {
    pub charts: Vec<KuranishiChart>,
    pub changes: Vec<CoordinateChange>,
    pub data: Vec<BundleExtensionDatum>,
}

impl KuranishiStructure {
    pub fn chart_index(&self, label: &str) -> Result<usize> {
        self.charts.iter().position(|c| c.label() == label).ok_or_else(|| Error::UnresolvedLabel(label.into()))
    }

    pub fn chart(&self, label: &str) -> Result<&KuranishiChart> {
        Ok(&self.charts[self.chart_index(label)?])
    }

    pub fn change(&self, src: &str, dst: &str) -> Option<&CoordinateChange> {
        self.changes.iter().find(|c| c.src == src && c.dst == dst)
    }

    pub fn datum(&self, change: &str) -> Option<&BundleExtensionDatum> {
        self.data.iter().find(|d| d.change == change)
    }

    pub fn vdim(&self) -> Option<i64> {
        let v = self.charts.first()?.vdim();
        self.charts.iter().all(|c| c.vdim() == v).then_some(v)
    }

    /// Footprint samples: (chart index, zero point, global point).
    pub fn footprint_samples(&self) -> Vec<(usize, Vec<f64>, Vec<f64>)> {
        let mut out = Vec::new();
        for (i, c) in self.charts.iter().enumerate() {
            for y in c.zero_samples(c.domain()) {
                let z = c.psi.at(&y).as_slice().to_vec();
                out.push((i, y, z));
            }
        }
        out
    }

    /// Whether the footprints of charts `a` and `b` meet (sampled from `a`).
    pub fn footprints_meet(&self, a: usize, b: usize) -> Option<Vec<f64>> {
        let (ca, cb) = (&self.charts[a], &self.charts[b]);
        for y in ca.zero_samples(ca.domain()) {
            let z = ca.psi.at(&y);
            if let Some(x) = cb.locate(z.as_slice(), cb.domain()) {
                if cb.domain().contains(&x) {
                    return Some(z.as_slice().to_vec());
                }
            }
        }
        None
    }

    /// Every chart and change check.
    pub fn verify(&self) -> Result<CheckReport> {
        let mut rep = CheckReport::new();
        for c in &self.charts {
            rep.extend(c.label(), verify_kchart(c)?);
        }
        for ch in &self.changes {
            let src = self.chart(&ch.src)?;
            let dst = self.chart(&ch.dst)?;
            rep.extend(&ch.label, verify_change(ch, src, dst)?);
        }
        for d in &self.data {
            let ch = self
                .changes
                .iter()
                .find(|c| c.label == d.change)
                .ok_or_else(|| Error::UnresolvedLabel(d.change.clone()))?;
            let k = d.omega1.intersect(&ch.domain).unwrap_or_else(|| ch.domain.clone());
            let k = k.shrink(1e-6);
            rep.extend(&format!("{}/datum", ch.label), crate::bundle::verify_bundle_extension(d, &ch.phi, &ch.phi_hat, &k)?);
        }
        Ok(rep)
    }
}

/// Φ_pr = Φ_pq ∘ Φ_qr on base and fibre wherever all three changes are defined.
pub fn verify_structure_cocycle(ks: &KuranishiStructure, tol: f64) -> CheckReport {
    let mut rep = CheckReport::new();
    let mut any = false;
    for qr in &ks.changes {
        for pq in ks.changes.iter().filter(|c| c.src == qr.dst) {
            let Some(pr) = ks.change(&qr.src, &pq.dst) else { continue };
            if pr.label == qr.label || pr.label == pq.label {
                continue;
            }
            any = true;
            let n = qr.phi.dim_in().max(1);
            let mut worst: (f64, f64, Option<Vec<f64>>) = (0.0, 0.0, None);
            for y in qr.domain.samples(sample_count_for(500, n)) {
                if !pr.domain.contains(&y) {
                    continue;
                }
                let x = qr.phi.at(&y);
                if !pq.domain.contains(x.as_slice()) {
                    continue;
                }
                let base = dist(pq.phi.at(x.as_slice()).as_slice(), pr.phi.at(&y).as_slice());
                let comp = pq.phi_hat.at(x.as_slice()) * qr.phi_hat.at(&y);
                let direct = pr.phi_hat.at(&y);
                let fiber = if comp.shape() == direct.shape() { (comp - direct).abs().max() } else { f64::INFINITY };
                if base.max(fiber) > worst.0.max(worst.1) {
                    worst = (base, fiber, Some(y.clone()));
                }
            }
            let r = worst.0.max(worst.1);
            rep.push(
                Check::residual(format!("cocycle[{}>{}>{}]", qr.src, qr.dst, pq.dst), r, tol)
                    .with_witness(if r >= tol { worst.2 } else { None })
                    .with_detail(format!("base {:e}, fibre {:e}", worst.0, worst.1)),
            );
        }
    }
    if !any {
        rep.push(Check::new("cocycle", true, 0.0).with_detail("no triple overlaps"));
    }
    rep
}

/// One poset element: a chart, or a sum chart made of several sheets.
#[derive(Clone, Debug, PartialEq)]
pub struct Piece {
    pub label: String,
    pub sheets: Vec<usize>,
}

/// Support set K with an optional smaller K′.
#[derive(Clone, Debug, PartialEq)]
pub struct Support {
    pub k: Domain,
    pub k_prime: Option<Domain>,
}

/// Good coordinate system: pieces indexed by a finite poset, strong changes q ≤ p, supports.
#[derive(Clone, Debug, PartialEq)]
pub struct Gcs {
    pub ks: KuranishiStructure,
    pub pieces: Vec<Piece>,
    /// Strict relations (lower, higher), transitively closed.
    pub order: BTreeSet<(usize, usize)>,
    /// One support per chart.
    pub supports: Vec<Support>,
}

impl Gcs {
    pub fn new(ks: KuranishiStructure, pieces: Vec<Piece>, order: &[(usize, usize)], supports: Vec<Support>) -> Result<Self> {
        let mut seen = vec![false; ks.charts.len()];
        for p in &pieces {
            for &s in &p.sheets {
                if s >= seen.len() || seen[s] {
                    return Err(Error::Type(format!("chart {s} is missing or appears in two pieces")));
                }
                seen[s] = true;
            }
        }
        if seen.iter().any(|b| !b) {
            return Err(Error::Type("every chart must belong to a piece".into()));
        }
        if supports.len() != ks.charts.len() {
            return Err(Error::Type(format!("{} supports for {} charts", supports.len(), ks.charts.len())));
        }
        let mut closed: BTreeSet<(usize, usize)> = order.iter().copied().collect();
        loop {
            let extra: Vec<(usize, usize)> = closed
                .iter()
                .flat_map(|&(a, b)| closed.iter().filter(move |&&(c, _)| c == b).map(move |&(_, d)| (a, d)))
                .filter(|r| !closed.contains(r))
                .collect();
            if extra.is_empty() {
                break;
            }
            closed.extend(extra);
        }
        if closed.iter().any(|(a, b)| a == b) {
            return Err(Error::Type("order relation has a cycle".into()));
        }
        Ok(Gcs { ks, pieces, order: closed, supports })
    }

    pub fn piece_of(&self, chart: usize) -> usize {
        self.pieces.iter().position(|p| p.sheets.contains(&chart)).unwrap_or(usize::MAX)
    }

    pub fn le(&self, a: usize, b: usize) -> bool {
        a == b || self.order.contains(&(a, b))
    }

    pub fn comparable(&self, a: usize, b: usize) -> bool {
        self.le(a, b) || self.le(b, a)
    }

    /// Pieces in a linear extension of the order (ties by index).
    pub fn linear_order(&self) -> Vec<usize> {
        let mut left: Vec<usize> = (0..self.pieces.len()).collect();
        let mut out = Vec::new();
        while !left.is_empty() {
            let pos = left
                .iter()
                .position(|&p| !left.iter().any(|&q| q != p && self.order.contains(&(q, p))))
                .unwrap_or(0);
            out.push(left.remove(pos));
        }
        out
    }

    /// Charts sorted by the linear order of their pieces.
    pub fn charts_in_order(&self) -> Vec<usize> {
        self.linear_order().into_iter().flat_map(|p| self.pieces[p].sheets.clone()).collect()
    }

    pub fn glued(&self, a: usize, b: usize) -> bool {
        let (la, lb) = (self.ks.charts[a].label(), self.ks.charts[b].label());
        self.ks
            .changes
            .iter()
            .any(|c| c.kind == ChangeKind::Open && ((c.src == la && c.dst == lb) || (c.src == lb && c.dst == la)))
    }
}

fn quotient_point(c: &KuranishiChart, y: &[f64]) -> Vec<f64> {
    c.base().canonical(y).0
}

/// Comparability, equivalence-relation consistency, Hausdorff sampling and support covering.
pub fn verify_gcs_axioms(gcs: &Gcs) -> CheckReport {
    let ks = &gcs.ks;
    let n = ks.charts.len();
    let mut rep = CheckReport::new();

    // Footprints of unrelated charts must be disjoint.
    let mut comp = Check::new("comparability", true, 0.0);
    'outer: for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let (pa, pb) = (gcs.piece_of(a), gcs.piece_of(b));
            let unrelated = if pa == pb { !gcs.glued(a, b) } else { !gcs.comparable(pa, pb) };
            if !unrelated {
                continue;
            }
            if let Some(z) = ks.footprints_meet(a, b) {
                comp = Check::new("comparability", false, 0.0)
                    .with_witness(Some(z))
                    .with_detail(format!("{} and {} overlap without an order relation", ks.charts[a].label(), ks.charts[b].label()));
                break 'outer;
            }
        }
    }
    rep.push(comp);

    // Each change induces an injective map of quotients, and changes compose consistently.
    let mut eqv = Check::new("equivalence", true, 0.0);
    for ch in &ks.changes {
        let (Ok(src), Ok(dst)) = (ks.chart(&ch.src), ks.chart(&ch.dst)) else {
            eqv = Check::new("equivalence", false, 0.0).with_detail(format!("change {} names an unknown chart", ch.label));
            break;
        };
        let k = sample_count_for(300, src.dim());
        let pts: Vec<(Vec<f64>, Vec<f64>)> = ch
            .domain
            .samples(k)
            .into_iter()
            .map(|y| {
                let x = ch.phi.at(&y);
                (quotient_point(src, &y), quotient_point(dst, x.as_slice()))
            })
            .collect();
        let mut bad = None;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                if dist(&pts[i].0, &pts[j].0) > 10.0 * tol::HAUSDORFF_MARGIN && dist(&pts[i].1, &pts[j].1) < 0.1 * tol::HAUSDORFF_MARGIN {
                    bad = Some(pts[i].0.clone());
                    break;
                }
            }
            if bad.is_some() {
                break;
            }
        }
        if let Some(w) = bad {
            eqv = Check::new("equivalence", false, 0.0)
                .with_witness(Some(w))
                .with_detail(format!("change {} identifies two points", ch.label));
            break;
        }
    }
    if eqv.passed() {
        let coc = verify_structure_cocycle(ks, tol::EQUIV);
        let worst = coc.max_residual();
        if worst >= tol::EQUIV {
            let w = coc.failures().next().and_then(|c| c.witness.clone());
            let status = if worst < tol::HAUSDORFF_MARGIN { Status::Unknown } else { Status::Fail };
            eqv = Check::new("equivalence", false, worst).with_status(status).with_witness(w).with_detail("changes do not compose");
        }
    }
    rep.push(eqv);

    // Limits of U_change inside U_src must not land inside U_dst.
    let mut haus = Check::new("hausdorff", true, 0.0).with_detail("no violation at sampling resolution");
    for ch in &ks.changes {
        let (Ok(src), Ok(dst)) = (ks.chart(&ch.src), ks.chart(&ch.dst)) else { continue };
        let k = sample_count_for(60, src.dim().saturating_sub(1).max(1));
        let mut found = None;
        let mut unknown = None;
        for y in ch.domain.open_boundary_samples(k) {
            if !src.domain().contains(&y) || src.domain().margin_to_open_boundary(&y) <= tol::HAUSDORFF_MARGIN {
                continue;
            }
            let x = ch.phi.at(&y);
            if !dst.domain().contains(x.as_slice()) {
                continue;
            }
            if dst.domain().margin_to_open_boundary(x.as_slice()) > tol::HAUSDORFF_MARGIN {
                found = Some(y);
                break;
            } else {
                unknown.get_or_insert(y);
            }
        }
        if let Some(y) = found {
            haus = Check::new("hausdorff", false, 0.0)
                .with_witness(Some(y))
                .with_detail(format!("limit of {} lies in both charts", ch.label));
            break;
        }
        if let Some(y) = unknown {
            haus = Check::new("hausdorff", false, 0.0)
                .with_status(Status::Unknown)
                .with_witness(Some(y))
                .with_detail("separation below the sampling margin");
        }
    }
    rep.push(haus);

    // ⋃ ψ_p(int K_p ∩ s_p⁻¹(0)) covers the footprint samples.
    let mut cover = Check::new("support_covering", true, 0.0);
    for (_, _, z) in ks.footprint_samples() {
        let covered = (0..n).any(|c| {
            let chart = &ks.charts[c];
            let k = &gcs.supports[c].k;
            chart
                .locate(&z, k)
                .is_some_and(|y| k.contains(&y) && k.margin_to_open_boundary(&y) > 0.0 && chart.domain().contains(&y))
        });
        if !covered {
            cover = Check::new("support_covering", false, 0.0).with_witness(Some(z));
            break;
        }
    }
    rep.push(cover);

    let mut pairs = Check::new("support_pairs", true, 0.0);
    for (c, s) in gcs.supports.iter().enumerate() {
        let dom = ks.charts[c].domain();
        if !dom.contains_domain(&s.k, 1e-12) {
            pairs = Check::new("support_pairs", false, 0.0).with_witness(Some(s.k.bbox().0)).with_detail(format!("K of {} leaves the chart", ks.charts[c].label()));
            break;
        }
        if let Some(kp) = &s.k_prime {
            if !s.k.contains_domain(kp, 1e-12) {
                pairs = Check::new("support_pairs", false, 0.0).with_witness(Some(kp.bbox().0)).with_detail("K' is not inside K");
                break;
            }
        }
    }
    rep.push(pairs);
    rep
}

/// Sum chart: sheets glued along an open change.
#[derive(Clone, Debug, PartialEq)]
pub struct SumChart {
    pub sheets: Vec<KuranishiChart>,
    pub gluing: Option<CoordinateChange>,
}

impl SumChart {
    pub fn footprint(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = self
            .sheets
            .iter()
            .flat_map(|c| c.zero_samples(c.domain()).into_iter().map(move |y| c.psi.at(&y).as_slice().to_vec()))
            .collect();
        out = zeros::dedup_points(out, tol::DEDUP);
        out
    }
}

/// Sampling check that the gluing map is proper: limits of its domain do not land inside the target.
pub fn gluing_is_proper(ch: &CoordinateChange, src: &KuranishiChart, dst: &KuranishiChart) -> Result<()> {
    let k = sample_count_for(60, src.dim().saturating_sub(1).max(1));
    for y in ch.domain.open_boundary_samples(k) {
        if !src.domain().contains(&y) || src.domain().margin_to_open_boundary(&y) <= tol::HAUSDORFF_MARGIN {
            continue;
        }
        let x = ch.phi.at(&y);
        if dst.domain().contains(x.as_slice()) && dst.domain().margin_to_open_boundary(x.as_slice()) > tol::HAUSDORFF_MARGIN {
            return Err(Error::NotProper(y));
        }
    }
    Ok(())
}

pub fn sum_chart(c1: &KuranishiChart, c2: &KuranishiChart, gluing: Option<&CoordinateChange>) -> Result<SumChart> {
    if c1.dim() != c2.dim() || c1.rank() != c2.rank() {
        return Err(Error::DimMismatch(format!(
            "sum of a ({},{}) chart and a ({},{}) chart",
            c1.dim(),
            c1.rank(),
            c2.dim(),
            c2.rank()
        )));
    }
    if let Some(g) = gluing {
        let (src, dst) = if g.src == c1.label() { (c1, c2) } else { (c2, c1) };
        gluing_is_proper(g, src, dst)?;
    }
    Ok(SumChart { sheets: vec![c1.clone(), c2.clone()], gluing: gluing.cloned() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingKind {
    KK,
    GG,
    KG,
    GK,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChartEmbedding {
    pub src: String,
    pub dst: String,
    pub domain: Domain,
    pub phi: SmoothMap,
    pub hom: Vec<usize>,
    pub phi_hat: ExprMatrix,
}

impl ChartEmbedding {
    pub fn identity(c: &KuranishiChart, domain: Domain) -> Self {
        ChartEmbedding {
            src: c.label().into(),
            dst: c.label().into(),
            domain,
            phi: SmoothMap::identity(c.dim()),
            hom: (0..c.group().order()).collect(),
            phi_hat: ExprMatrix::identity(c.rank()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRecord {
    pub kind: EmbeddingKind,
    pub maps: Vec<ChartEmbedding>,
    /// Piece labels (source, target) of the index map; GG only.
    pub index_map: Vec<(String, String)>,
}

/// Either side of an embedding record.
#[derive(Clone, Copy, Debug)]
pub enum Side<'a> {
    Ks(&'a KuranishiStructure),
    Gcs(&'a Gcs),
}

impl<'a> Side<'a> {
    fn ks(&self) -> &'a KuranishiStructure {
        match self {
            Side::Ks(k) => k,
            Side::Gcs(g) => &g.ks,
        }
    }
    fn gcs(&self) -> Option<&'a Gcs> {
        match self {
            Side::Gcs(g) => Some(g),
            Side::Ks(_) => None,
        }
    }
}

/// Commuting-square residuals for every chart embedding, plus order and domain conditions for GG.
pub fn verify_embedding_record(rec: &EmbeddingRecord, src: Side, dst: Side) -> Result<CheckReport> {
    let mut rep = CheckReport::new();
    for m in &rec.maps {
        let a = src.ks().chart(&m.src)?;
        let b = dst.ks().chart(&m.dst)?;
        let name = format!("{}>{}", m.src, m.dst);
        let emb = BundleEmbedding { phi: m.phi.clone(), hom: m.hom.clone(), fiber: m.phi_hat.clone(), domain: m.domain.clone() };
        rep.extend(&name, emb.verify(&a.bundle, &b.bundle));
        let k = sample_count_for(300, a.dim());
        let mut sec: (f64, Option<Vec<f64>>) = (0.0, None);
        for y in m.domain.samples(k) {
            let x = m.phi.at(&y);
            let r = (b.s.at(x.as_slice()) - m.phi_hat.at(&y) * a.s.at(&y)).norm();
            if r > sec.0 {
                sec = (r, Some(y));
            }
        }
        rep.push(Check::residual(format!("{name}/section_square"), sec.0, tol::EQUIV).with_witness((sec.0 >= tol::EQUIV).then_some(sec.1).flatten()));
        let mut fp: (f64, Option<Vec<f64>>) = (0.0, None);
        for y in a.zero_samples(&m.domain) {
            let x = m.phi.at(&y);
            let r = dist(b.psi.at(x.as_slice()).as_slice(), a.psi.at(&y).as_slice());
            if r > fp.0 {
                fp = (r, Some(y));
            }
        }
        rep.push(Check::residual(format!("{name}/footprint_square"), fp.0, tol::EQUIV).with_witness((fp.0 >= tol::EQUIV).then_some(fp.1).flatten()));
        if matches!(rec.kind, EmbeddingKind::GK | EmbeddingKind::GG) {
            if let Some(g) = src.gcs() {
                let ci = g.ks.chart_index(&m.src)?;
                let kp = &g.supports[ci].k;
                let miss = a.zero_samples(a.domain()).into_iter().find(|y| kp.contains(y) && !m.domain.contains(y));
                rep.push(Check::new(format!("{name}/domain_cover"), miss.is_none(), 0.0).with_witness(miss));
            }
        }
    }
    if rec.kind == EmbeddingKind::GG {
        let (Some(gs), Some(gd)) = (src.gcs(), dst.gcs()) else {
            return Err(Error::Type("GG record needs good coordinate systems on both sides".into()));
        };
        let piece = |g: &Gcs, l: &str| g.pieces.iter().position(|p| p.label == l).ok_or_else(|| Error::UnresolvedLabel(l.into()));
        let mut idx = Vec::new();
        for (a, b) in &rec.index_map {
            idx.push((piece(gs, a)?, piece(gd, b)?));
        }
        let image = |p: usize| idx.iter().find(|(a, _)| *a == p).map(|(_, b)| *b);
        let mut bad = None;
        for &(q, p) in &gs.order {
            if let (Some(iq), Some(ip)) = (image(q), image(p)) {
                if !gd.le(iq, ip) {
                    bad = Some((q, p));
                }
            }
        }
        rep.push(
            Check::new("order_preserving", bad.is_none(), 0.0)
                .with_detail(bad.map(|(q, p)| format!("{} < {} is not preserved", gs.pieces[q].label, gs.pieces[p].label)).unwrap_or_default()),
        );
        // φ_{ip iq} ∘ φ_q = φ_p ∘ φ_pq and U_pq = φ_q⁻¹(U'_{ip iq}).
        let mut worst: (f64, Option<Vec<f64>>) = (0.0, None);
        let mut dom_bad = None;
        for ch in &gs.ks.changes {
            let (Some(mq), Some(mp)) = (rec.maps.iter().find(|m| m.src == ch.src), rec.maps.iter().find(|m| m.src == ch.dst)) else {
                continue;
            };
            let target = if mq.dst == mp.dst { None } else { gd.ks.change(&mq.dst, &mp.dst) };
            if mq.dst != mp.dst && target.is_none() {
                continue;
            }
            let srcc = gs.ks.chart(&ch.src)?;
            for y in srcc.domain().samples(sample_count_for(300, srcc.dim())) {
                let yq = mq.phi.at(&y);
                let in_target = target.map_or(true, |t| t.domain.contains(yq.as_slice()));
                if ch.domain.contains(&y) != in_target && mq.domain.contains(&y) {
                    dom_bad.get_or_insert(y.clone());
                }
                if !ch.domain.contains(&y) {
                    continue;
                }
                let lhs = match target {
                    Some(t) => t.phi.at(yq.as_slice()),
                    None => yq.clone(),
                };
                let rhs = mp.phi.at(ch.phi.at(&y).as_slice());
                let r = (lhs - rhs).norm();
                if r > worst.0 {
                    worst = (r, Some(y.clone()));
                }
            }
        }
        rep.push(Check::residual("change_square", worst.0, tol::EQUIV).with_witness((worst.0 >= tol::EQUIV).then_some(worst.1).flatten()));
        rep.push(Check::new("domain_condition", dom_bad.is_none(), 0.0).with_witness(dom_bad));
    }
    Ok(rep)
}

/// Identity GG record of a good coordinate system onto itself.
pub fn identity_gg(g: &Gcs) -> EmbeddingRecord {
    EmbeddingRecord {
        kind: EmbeddingKind::GG,
        maps: g.ks.charts.iter().map(|c| ChartEmbedding::identity(c, c.domain().clone())).collect(),
        index_map: g.pieces.iter().map(|p| (p.label.clone(), p.label.clone())).collect(),
    }
}

fn default_support(c: &KuranishiChart) -> Support {
    let (lo, hi) = c.domain().bbox();
    let ext = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(f64::INFINITY, f64::min);
    Support { k: c.domain().shrink(0.1 * ext), k_prime: Some(c.domain().shrink(0.2 * ext)) }
}

fn shrink_structure(ks: &KuranishiStructure, supports: &[Support], m: f64) -> (KuranishiStructure, Vec<Support>) {
    let mut out = ks.clone();
    for c in &mut out.charts {
        c.bundle.base.domain = c.domain().shrink(m);
    }
    for ch in &mut out.changes {
        if let Some(src) = out.charts.iter().find(|c| c.label() == ch.src) {
            if let Some(d) = ch.domain.intersect(src.domain()) {
                ch.domain = d;
            }
        }
    }
    let sup = supports
        .iter()
        .zip(&out.charts)
        .map(|(s, c)| Support {
            k: s.k.intersect(c.domain()).unwrap_or_else(|| s.k.clone()),
            k_prime: s.k_prime.as_ref().map(|kp| kp.intersect(c.domain()).unwrap_or_else(|| kp.clone())),
        })
        .collect();
    (out, sup)
}

/// Order charts by dimension, merge each dimension into one piece, shrink until the axioms hold.
pub fn build_gcs(ks: &KuranishiStructure, supports: Option<Vec<Support>>) -> Result<(Gcs, EmbeddingRecord)> {
    if ks.charts.is_empty() {
        return Err(Error::Type("no charts".into()));
    }
    let supports = supports.unwrap_or_else(|| ks.charts.iter().map(default_support).collect());
    let n = ks.charts.len();
    let mut dims: Vec<usize> = ks.charts.iter().map(|c| c.dim()).collect();
    dims.sort_unstable();
    dims.dedup();
    let level = |c: usize| dims.iter().position(|&d| d == ks.charts[c].dim()).unwrap();

    let linked = |a: usize, b: usize| {
        let (la, lb) = (ks.charts[a].label(), ks.charts[b].label());
        ks.changes.iter().find(|c| (c.src == la && c.dst == lb) || (c.src == lb && c.dst == la))
    };
    for a in 0..n {
        for b in a + 1..n {
            match linked(a, b) {
                Some(ch) if level(a) == level(b) => {
                    if ch.kind != ChangeKind::Open {
                        return Err(Error::IncompatibleCharts(format!("{} joins two charts of equal dimension", ch.label)));
                    }
                    let (s, d) = (ks.chart(&ch.src)?, ks.chart(&ch.dst)?);
                    sum_chart(s, d, Some(ch))?;
                }
                Some(ch) => {
                    let rep = verify_change(ch, ks.chart(&ch.src)?, ks.chart(&ch.dst)?)?;
                    require_normal_derivative(&rep)?;
                }
                None => {
                    if let Some(z) = ks.footprints_meet(a, b).or_else(|| ks.footprints_meet(b, a)) {
                        return Err(Error::IncompatibleCharts(format!(
                            "footprints of {} and {} meet at {:?} without a coordinate change",
                            ks.charts[a].label(),
                            ks.charts[b].label(),
                            z
                        )));
                    }
                }
            }
        }
    }

    let pieces: Vec<Piece> = (0..dims.len())
        .map(|l| {
            let sheets: Vec<usize> = (0..n).filter(|&c| level(c) == l).collect();
            let label = sheets.iter().map(|&c| ks.charts[c].label().to_string()).collect::<Vec<_>>().join("+");
            Piece { label, sheets }
        })
        .collect();
    let mut order = Vec::new();
    for ch in &ks.changes {
        let (a, b) = (level(ks.chart_index(&ch.src)?), level(ks.chart_index(&ch.dst)?));
        if a < b {
            order.push((a, b));
        } else if a > b {
            return Err(Error::IncompatibleCharts(format!("change {} lowers the dimension", ch.label)));
        }
    }

    let extent = ks
        .charts
        .iter()
        .map(|c| {
            let (lo, hi) = c.domain().bbox();
            lo.iter().zip(&hi).map(|(a, b)| b - a).fold(f64::INFINITY, f64::min)
        })
        .fold(f64::INFINITY, f64::min);
    for round in 0..=tol::MAX_SHRINK {
        let (shrunk, sup) = if round == 0 {
            (ks.clone(), supports.clone())
        } else {
            shrink_structure(ks, &supports, 0.25 * extent / (1u64 << (round - 1)) as f64)
        };
        let gcs = Gcs::new(shrunk, pieces.clone(), &order, sup)?;
        if verify_gcs_axioms(&gcs).all_pass() {
            let kg = EmbeddingRecord {
                kind: EmbeddingKind::KG,
                maps: gcs.ks.charts.iter().map(|c| ChartEmbedding::identity(c, c.domain().clone())).collect(),
                index_map: Vec::new(),
            };
            return Ok((gcs, kg));
        }
    }
    Err(Error::ShrinkExhausted(tol::MAX_SHRINK))
}

pub fn shift_map(m: &SmoothMap, offset: usize, total: usize) -> SmoothMap {
    let ys: Vec<Expr> = (0..m.dim_in()).map(|j| Expr::y(offset + j)).collect();
    m.map_comps(|e| e.compose_y(&ys), total, 0)
}

fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = (a.nrows(), b.nrows());
    let mut g = DMatrix::zeros(n + m, n + m);
    g.view_mut((0, 0), (n, n)).copy_from(a);
    g.view_mut((n, n), (m, m)).copy_from(b);
    g
}

fn product_bundle(a: &KuranishiChart, b: &KuranishiChart, extra_fibre: usize, label: String) -> Result<BundleChart> {
    let dom = a
        .domain()
        .product(b.domain())
        .ok_or_else(|| Error::ModeUnsupported("products of ball-shaped domains".into()))?;
    let group = a.group().product(b.group());
    let mut bp = a.base().base_point.clone();
    bp.extend(&b.base().base_point);
    let base = OrbifoldChart::new(label, dom, group, bp);
    let mut rep = Vec::new();
    for ra in &a.bundle.rep {
        for rb in &b.bundle.rep {
            rep.push(block_diag(&block_diag(ra, rb), &DMatrix::identity(extra_fibre, extra_fibre)));
        }
    }
    let probes = base.domain.samples(5);
    let eff = effectivity_check("effectivity", &base.group, &probes);
    if eff.status == Status::Fail {
        return Err(Error::EffectivityLost(base.label.clone()));
    }
    BundleChart::new(base, a.rank() + b.rank() + extra_fibre, rep)
}

/// U_a × U_b with E_a ⊕ E_b; orientation chosen so that the zero set carries or(Z_a) × or(Z_b).
pub fn direct_product(a: &KuranishiChart, b: &KuranishiChart) -> Result<KuranishiChart> {
    let n = a.dim() + b.dim();
    let bundle = product_bundle(a, b, 0, format!("{}*{}", a.label(), b.label()))?;
    let s = a.s.widen(n, 0).stack(&shift_map(&b.s, a.dim(), n));
    let psi = a.psi.widen(n, 0).stack(&shift_map(&b.psi, a.dim(), n));
    let swap = if (a.vdim() * b.rank() as i64) % 2 == 0 { 1 } else { -1 };
    KuranishiChart::new(bundle, s, psi, a.or_u * b.or_u * swap, a.or_e * b.or_e)
}

fn is_identity_map(f: &SmoothMap, n: usize) -> bool {
    f.dim_out() == n && f.comps().iter().enumerate().all(|(i, e)| *e == Expr::y(i))
}

fn check_transversal(a: &KuranishiChart, fa: &SmoothMap, b: &KuranishiChart, fb: &SmoothMap) -> Result<()> {
    let thin = |v: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        let step = (v.len() / 30).max(1);
        v.into_iter().step_by(step).collect()
    };
    let za = thin(a.zero_samples(a.domain()));
    let zb = thin(b.zero_samples(b.domain()));
    for x in &za {
        let ja = fa.jac_at(x);
        for y in &zb {
            let jb = fb.jac_at(y);
            let m = ja.nrows();
            let mut j = DMatrix::zeros(m, ja.ncols() + jb.ncols());
            j.view_mut((0, 0), (m, ja.ncols())).copy_from(&ja);
            j.view_mut((0, ja.ncols()), (m, jb.ncols())).copy_from(&(-&jb));
            let smin = if j.ncols() < m { 0.0 } else { sigma_min(&j) };
            if smin <= tol::RANK {
                let mut w = x.clone();
                w.extend(y);
                return Err(Error::NotTransversal(w));
            }
        }
    }
    Ok(())
}

/// How a fibre product chart was formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FiberKind {
    /// The second factor was M itself and has been eliminated.
    KeepFirst,
    KeepSecond,
    /// U_a × U_b with the extra obstruction TM.
    Stabilized,
}

/// Fibre product over M. When one factor is M itself with the identity map it is eliminated;
/// otherwise the chart on U_a × U_b is stabilized by the obstruction TM with section f_a − f_b.
pub fn fiber_product(a: &KuranishiChart, fa: &SmoothMap, b: &KuranishiChart, fb: &SmoothMap) -> Result<(KuranishiChart, SmoothMap, FiberKind)> {
    if fa.dim_out() != fb.dim_out() {
        return Err(Error::DimMismatch(format!("maps into R^{} and R^{}", fa.dim_out(), fb.dim_out())));
    }
    let fa = fa.widen(a.dim(), 0);
    let fb = fb.widen(b.dim(), 0);
    check_transversal(a, &fa, b, &fb)?;
    let m = fa.dim_out();
    let trivial_side = |c: &KuranishiChart, f: &SmoothMap| c.rank() == 0 && c.group().order() == 1 && c.dim() == m && is_identity_map(f, m);
    let eliminate = |keep: &KuranishiChart, fk: &SmoothMap, other: &KuranishiChart, kind: FiberKind| -> Result<(KuranishiChart, SmoothMap, FiberKind)> {
        let k = sample_count_for(200, keep.dim());
        if let Some(y) = keep.domain().samples(k).into_iter().find(|y| !other.domain().contains_closed(fk.at(y).as_slice(), 1e-12)) {
            return Err(Error::ModeUnsupported(format!("fibre product cuts the domain near {y:?}")));
        }
        let mut c = keep.clone();
        c.bundle.label = format!("{}x{}", a.label(), b.label());
        c.bundle.base.label = c.bundle.label.clone();
        c.or_u *= other.or_u;
        Ok((c, fk.clone(), kind))
    };
    if trivial_side(b, &fb) {
        return eliminate(a, &fa, b, FiberKind::KeepFirst);
    }
    if trivial_side(a, &fa) {
        return eliminate(b, &fb, a, FiberKind::KeepSecond);
    }
    let n = a.dim() + b.dim();
    let bundle = product_bundle(a, b, m, format!("{}x{}", a.label(), b.label()))?;
    let fb_shift = shift_map(&fb, a.dim(), n);
    let diff = SmoothMap::new(
        fa.comps().iter().zip(fb_shift.comps()).map(|(x, y)| Expr::sub(x.clone(), y.clone()).simplify()).collect(),
        n,
        0,
    );
    let s = a.s.widen(n, 0).stack(&shift_map(&b.s, a.dim(), n)).stack(&diff);
    let psi = a.psi.widen(n, 0).stack(&shift_map(&b.psi, a.dim(), n));
    let swap = if (a.vdim() * b.rank() as i64) % 2 == 0 { 1 } else { -1 };
    let chart = KuranishiChart::new(bundle, s, psi, a.or_u * b.or_u * swap, a.or_e * b.or_e)?;
    Ok((chart, fa.widen(n, 0), FiberKind::Stabilized))
}

/// Direct product (no maps) or fibre product of single-chart structures.
pub fn product_and_fiber_product(
    a: &KuranishiStructure,
    fa: Option<&SmoothMap>,
    b: &KuranishiStructure,
    fb: Option<&SmoothMap>,
) -> Result<(KuranishiStructure, Option<SmoothMap>)> {
    if a.charts.len() != 1 || b.charts.len() != 1 {
        return Err(Error::ModeUnsupported("products of structures with more than one chart".into()));
    }
    let (ca, cb) = (&a.charts[0], &b.charts[0]);
    match (fa, fb) {
        (None, None) => Ok((KuranishiStructure { charts: vec![direct_product(ca, cb)?], ..Default::default() }, None)),
        (Some(fa), Some(fb)) => {
            let (c, f, _) = fiber_product(ca, fa, cb, fb)?;
            Ok((KuranishiStructure { charts: vec![c], ..Default::default() }, Some(f)))
        }
        _ => Err(Error::Type("fibre product needs both maps".into())),
    }
}

/// Substitute y_axis = value and renumber the remaining variables.
pub fn restrict_expr(e: &Expr, axis: usize, value: f64, n: usize) -> Expr {
    let ys: Vec<Expr> = (0..n)
        .map(|j| match j.cmp(&axis) {
            std::cmp::Ordering::Less => Expr::y(j),
            std::cmp::Ordering::Equal => Expr::Num(value),
            std::cmp::Ordering::Greater => Expr::y(j - 1),
        })
        .collect();
    e.compose_y(&ys).simplify()
}

fn restrict_map(m: &SmoothMap, axis: usize, value: f64, n: usize) -> SmoothMap {
    m.map_comps(|e| restrict_expr(e, axis, value, n), n - 1, 0)
}

/// Boundary chart: a face of a chart with the stabilizer of that face.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryChart {
    pub chart: KuranishiChart,
    pub parent: usize,
    pub face: Face,
    /// Indices in the parent group of the face stabilizer, in the order of the new group.
    pub stabilizer: Vec<usize>,
}

impl BoundaryChart {
    /// π: boundary chart → parent chart.
    pub fn project(&self, y: &[f64], parent: &KuranishiChart) -> Vec<f64> {
        let mut p = y.to_vec();
        p.insert(self.face.axis, parent.domain().face_value(self.face));
        p
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryData {
    pub structure: KuranishiStructure,
    pub charts: Vec<BoundaryChart>,
}

fn face_image(chart: &OrbifoldChart, g: usize, f: Face) -> Option<Face> {
    let p = chart.domain.face_samples(f, 3).into_iter().next()?;
    let gp = chart.group.apply(g, &p);
    chart.domain.faces_at(&gp, 1e-9).into_iter().next()
}

fn boundary_chart(c: &KuranishiChart, parent: usize, f: Face) -> Result<BoundaryChart> {
    let base = c.base();
    let n = c.dim();
    let v = c.domain().face_value(f);
    let stab: Vec<usize> = (0..base.group.order()).filter(|&g| face_image(base, g, f) == Some(f)).collect();
    let elements: Vec<DMatrix<f64>> = stab
        .iter()
        .map(|&g| base.group.elements[g].clone().remove_row(f.axis).remove_column(f.axis))
        .collect();
    let labels = stab.iter().map(|&g| base.group.labels.get(g).cloned().unwrap_or_default()).collect();
    let group = if n > 1 { FiniteGroupAction::new(elements, labels)? } else { FiniteGroupAction::trivial(0) };
    let label = format!("{}@{}{}", c.label(), if f.hi { "hi" } else { "lo" }, f.axis + 1);
    let mut bp = base.base_point.clone();
    bp.remove(f.axis);
    let ob = OrbifoldChart::new(label, c.domain().face_domain(f), group, bp);
    let rep = stab.iter().map(|&g| c.bundle.rep[g].clone()).collect();
    let bundle = BundleChart::new(ob, c.rank(), rep)?;
    let chart = KuranishiChart {
        bundle,
        s: restrict_map(&c.s, f.axis, v, n),
        psi: restrict_map(&c.psi, f.axis, v, n),
        or_u: c.or_u * f.orientation_sign(),
        or_e: c.or_e,
    };
    Ok(BoundaryChart { chart, parent, face: f, stabilizer: stab })
}

/// Normalized boundary: one chart per orbit of closed faces, with restricted changes.
pub fn normalized_boundary(ks: &KuranishiStructure) -> Result<BoundaryData> {
    let mut charts = Vec::new();
    for (i, c) in ks.charts.iter().enumerate() {
        let mut seen: Vec<Face> = Vec::new();
        for f in c.domain().faces() {
            if seen.contains(&f) {
                continue;
            }
            for g in 0..c.group().order() {
                if let Some(h) = face_image(c.base(), g, f) {
                    if !seen.contains(&h) {
                        seen.push(h);
                    }
                }
            }
            seen.push(f);
            charts.push(boundary_chart(c, i, f)?);
        }
    }
    let mut changes = Vec::new();
    for ch in &ks.changes {
        let (qi, pi) = (ks.chart_index(&ch.src)?, ks.chart_index(&ch.dst)?);
        for bq in charts.iter().filter(|b| b.parent == qi) {
            let Domain::Box(db) = &ch.domain else { continue };
            let closed = if bq.face.hi { db.closed_hi[bq.face.axis] } else { db.closed_lo[bq.face.axis] };
            if !closed {
                continue;
            }
            let samples = ch.domain.face_samples(bq.face, 4);
            for bp in charts.iter().filter(|b| b.parent == pi) {
                let v = ks.charts[pi].domain().face_value(bp.face);
                let lands = !samples.is_empty() && samples.iter().all(|y| (ch.phi.at(y)[bp.face.axis] - v).abs() < 1e-10);
                if !lands {
                    continue;
                }
                let nq = ks.charts[qi].dim();
                let vq = ks.charts[qi].domain().face_value(bq.face);
                let comps: Vec<Expr> = ch
                    .phi
                    .comps()
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != bp.face.axis)
                    .map(|(_, e)| restrict_expr(e, bq.face.axis, vq, nq))
                    .collect();
                let entries = ch.phi_hat.entries.iter().map(|e| restrict_expr(e, bq.face.axis, vq, nq)).collect();
                let hom = bq
                    .stabilizer
                    .iter()
                    .map(|&g| bp.stabilizer.iter().position(|&h| h == ch.hom[g]))
                    .collect::<Option<Vec<usize>>>();
                let Some(hom) = hom else { continue };
                changes.push(CoordinateChange {
                    label: format!("{}@{}", ch.label, bq.chart.label()),
                    kind: ch.kind,
                    src: bq.chart.label().into(),
                    dst: bp.chart.label().into(),
                    domain: ch.domain.face_domain(bq.face),
                    phi: SmoothMap::new(comps, nq - 1, 0),
                    hom,
                    phi_hat: ExprMatrix { rows: ch.phi_hat.rows, cols: ch.phi_hat.cols, entries },
                });
            }
        }
    }
    let structure = KuranishiStructure { charts: charts.iter().map(|b| b.chart.clone()).collect(), changes, data: Vec::new() };
    Ok(BoundaryData { structure, charts })
}

/// Boundary of a good coordinate system, with pieces, order and supports restricted to faces.
pub fn normalized_boundary_gcs(g: &Gcs) -> Result<(Gcs, BoundaryData)> {
    let bd = normalized_boundary(&g.ks)?;
    let mut pieces = Vec::new();
    let mut piece_map = Vec::new();
    for (pi, p) in g.pieces.iter().enumerate() {
        let sheets: Vec<usize> = bd.charts.iter().enumerate().filter(|(_, b)| p.sheets.contains(&b.parent)).map(|(i, _)| i).collect();
        if !sheets.is_empty() {
            piece_map.push(pi);
            pieces.push(Piece { label: format!("{}@", p.label), sheets });
        }
    }
    let order: Vec<(usize, usize)> = g
        .order
        .iter()
        .filter_map(|&(a, b)| Some((piece_map.iter().position(|&x| x == a)?, piece_map.iter().position(|&x| x == b)?)))
        .collect();
    let supports = bd
        .charts
        .iter()
        .map(|b| {
            let s = &g.supports[b.parent];
            Support { k: s.k.face_domain(b.face), k_prime: s.k_prime.as_ref().map(|k| k.face_domain(b.face)) }
        })
        .collect();
    let gb = Gcs::new(bd.structure.clone(), pieces, &order, supports)?;
    Ok((gb, bd))
}

/// Sampled stratum.
#[derive(Clone, Debug, PartialEq)]
pub struct Stratum {
    pub samples: Vec<Vec<f64>>,
}

/// Number of closed faces through `y`.
pub fn corner_depth(domain: &Domain, y: &[f64]) -> usize {
    domain.faces_at(y, 1e-12).len()
}

/// Points of the domain lying on exactly `k` closed faces.
pub fn corner_stratum(domain: &Domain, k: usize, per_axis: usize) -> Stratum {
    let (lo, hi) = domain.bbox();
    let samples = crate::numeric::closed_grid(&lo, &hi, per_axis)
        .into_iter()
        .filter(|y| domain.contains(y) && corner_depth(domain, y) == k)
        .collect();
    Stratum { samples }
}

/// Whether the footprint point `z` lies in a chart of dimension ≥ d.
pub fn in_dimension_stratum(ks: &KuranishiStructure, d: usize, z: &[f64]) -> bool {
    ks.charts
        .iter()
        .filter(|c| c.dim() >= d)
        .any(|c| c.locate(z, c.domain()).is_some_and(|y| c.domain().contains(&y)))
}

/// Footprint samples lying in the dimension stratum of level d.
pub fn dimension_stratum(ks: &KuranishiStructure, d: usize) -> Stratum {
    let pts = ks.footprint_samples().into_iter().map(|(_, _, z)| z).collect();
    let pts = zeros::dedup_points(pts, tol::DEDUP);
    Stratum { samples: pts.into_iter().filter(|z| in_dimension_stratum(ks, d, z)).collect() }
}

/// No footprint sample outside the stratum coincides with a limit of stratum samples.
pub fn stratum_closed_check(ks: &KuranishiStructure, d: usize) -> Check {
    let all = zeros::dedup_points(ks.footprint_samples().into_iter().map(|(_, _, z)| z).collect(), tol::DEDUP);
    let inside = dimension_stratum(ks, d).samples;
    let gap = all
        .iter()
        .filter(|z| !inside.contains(z))
        .find(|z| inside.iter().any(|s| dist(s, z) < tol::DEDUP));
    Check::new(format!("stratum{d}_closed"), gap.is_none(), 0.0).with_witness(gap.cloned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::VarSpace;

    fn line_chart(label: &str, s: &str, psi: &str) -> KuranishiChart {
        let base = OrbifoldChart::new(label, Domain::open_box(vec![-2.0], vec![2.0]), FiniteGroupAction::trivial(1), vec![0.0]);
        KuranishiChart::new(
            BundleChart::trivial_rep(base, 1),
            SmoothMap::parse(&[s], VarSpace::y(1)).unwrap(),
            SmoothMap::parse(&[psi], VarSpace::y(1)).unwrap(),
            1,
            1,
        )
        .unwrap()
    }

    #[test]
    fn complement_is_orthonormal() {
        let m = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 0.0]);
        let c = complement(&m);
        assert_eq!(c.ncols(), 2);
        assert!((c.transpose() * &m).norm() < 1e-12);
        assert!((c.transpose() * &c - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn sum_of_shifted_lines() {
        let a = line_chart("a", "y1", "y1");
        let b = line_chart("b", "y1", "y1 + 2.5");
        let glue = CoordinateChange {
            label: "g".into(),
            kind: ChangeKind::Open,
            src: "a".into(),
            dst: "b".into(),
            domain: Domain::open_box(vec![0.5], vec![2.0]),
            phi: SmoothMap::parse(&["y1 - 2.5"], VarSpace::y(1)).unwrap(),
            hom: vec![0],
            phi_hat: ExprMatrix::identity(1),
        };
        let s = sum_chart(&a, &b, Some(&glue)).unwrap();
        let fp = s.footprint();
        assert_eq!(fp.len(), 2);
        assert!(fp[0][0].abs() < 1e-12 && (fp[1][0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn direct_product_associates() {
        let a = line_chart("a", "y1", "y1");
        let b = line_chart("b", "y1^3 + y1", "y1");
        let c = line_chart("c", "2*y1", "y1");
        let l = direct_product(&direct_product(&a, &b).unwrap(), &c).unwrap();
        let r = direct_product(&a, &direct_product(&b, &c).unwrap()).unwrap();
        assert_eq!(l.s.comps(), r.s.comps());
        assert_eq!(l.psi.comps(), r.psi.comps());
        assert_eq!(l.group().elements, r.group().elements);
    }
}
