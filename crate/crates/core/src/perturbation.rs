//! Multisections, multivalued perturbations and CF-perturbations.

use crate::bundle::{chart_samples, BundleExtensionDatum};
use crate::check::{Check, CheckReport};
use crate::error::{Error, Result};
use crate::expr::{Env, Expr, Var};
use crate::kuranishi::{complement, fiber_product, restrict_expr, shift_map, ChangeKind, FiberKind, Gcs, KuranishiChart, Support};
use crate::map::SmoothMap;
use crate::numeric::{dist, sigma_min};
use crate::orbifold::{bump_expr, sample_count_for, Domain};
use crate::tol;
use crate::zeros::{self, dedup_points};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// ℓ branches of a local multisection, each a map V → E.
#[derive(Clone, Debug, PartialEq)]
pub struct Multisection {
    pub chart: String,
    pub branches: Vec<SmoothMap>,
}

impl Multisection {
    pub fn len(&self) -> usize {
        self.branches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.branches.is_empty()
    }

    pub fn branches_at(&self, y: &[f64]) -> Vec<DVector<f64>> {
        self.branches.iter().map(|b| b.at(y)).collect()
    }
}

/// σ with `b[σ(k)] ≈ a[k]` for every k, by backtracking over Perm(ℓ).
pub fn match_permutation(a: &[DVector<f64>], b: &[DVector<f64>], tol: f64) -> Option<Vec<usize>> {
    fn go(k: usize, a: &[DVector<f64>], b: &[DVector<f64>], tol: f64, used: &mut [bool], sigma: &mut Vec<usize>) -> bool {
        if k == a.len() {
            return true;
        }
        for j in 0..b.len() {
            if !used[j] && (&a[k] - &b[j]).norm() <= tol {
                used[j] = true;
                sigma.push(j);
                if go(k + 1, a, b, tol, used, sigma) {
                    return true;
                }
                sigma.pop();
                used[j] = false;
            }
        }
        false
    }
    if a.len() != b.len() {
        return None;
    }
    let mut used = vec![false; b.len()];
    let mut sigma = Vec::new();
    go(0, a, b, tol, &mut used, &mut sigma).then_some(sigma)
}

/// Equivariance up to permutation: s_{σ(k)}(γy) = ρ(γ)s_k(y) at every sample.
pub fn verify_multisection(ms: &Multisection, chart: &KuranishiChart) -> Result<CheckReport> {
    let l = ms.len();
    if l == 0 {
        return Err(Error::Type(format!("multisection on {} has no branches", ms.chart)));
    }
    if l > tol::MAX_BRANCH_PERM {
        return Err(Error::ModeUnsupported(format!("{l} branches exceed the permutation search limit")));
    }
    for b in &ms.branches {
        if b.dim_out() != chart.rank() {
            return Err(Error::DimMismatch(format!("branch has {} components, fibre rank {}", b.dim_out(), chart.rank())));
        }
    }
    let base = chart.base();
    let mut worst: f64 = 0.0;
    let mut first_sigma = None;
    for y in chart_samples(base, sample_count_for(300, base.dim)) {
        let sy = ms.branches_at(&y);
        for g in 0..base.group.order() {
            let gy = base.group.apply(g, &y);
            if !base.domain.contains(&gy) {
                continue;
            }
            let lhs: Vec<DVector<f64>> = ms.branches_at(&gy);
            let rhs: Vec<DVector<f64>> = sy.iter().map(|v| &chart.bundle.rep[g] * v).collect();
            let sigma = match_permutation(&rhs, &lhs, tol::EQUIV).ok_or(Error::NoPermutationFound { y: y.clone(), gamma: g })?;
            let r = rhs.iter().zip(&sigma).map(|(v, &j)| (v - &lhs[j]).norm()).fold(0.0, f64::max);
            worst = worst.max(r);
            if g != 0 && first_sigma.is_none() {
                first_sigma = Some(sigma);
            }
        }
    }
    let mut rep = CheckReport::new();
    let detail = first_sigma.map(|s| format!("permutation {s:?}")).unwrap_or_default();
    rep.push(Check::residual("equivariance", worst, tol::EQUIV).with_detail(detail));
    rep.push(Check::new("branch_count", true, l as f64));
    Ok(rep)
}

/// Cut-off equal to 1 where the extension datum is trusted; identically 1 if it covers the chart.
pub fn chi0_expr(datum: &BundleExtensionDatum, chart: &KuranishiChart) -> Expr {
    if datum.covers(chart.domain()) {
        return Expr::one();
    }
    let (lo, hi) = datum.omega12.bbox();
    let ext = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(f64::INFINITY, f64::min);
    bump_expr(&datum.omega12, chart.domain(), 0.25 * ext)
}

fn transfer_branch(comps: &[Expr], s_q: &SmoothMap, s_p: &SmoothMap, datum: &BundleExtensionDatum, chi0: &Expr) -> Vec<Expr> {
    let pi = datum.pi.comps();
    let diff: Vec<Expr> = comps
        .iter()
        .zip(s_q.comps())
        .map(|(b, s)| Expr::sub(b.compose_y(pi), s.compose_y(pi)))
        .collect();
    let ext = datum.phi_tilde.apply(&diff);
    s_p.comps()
        .iter()
        .zip(ext)
        .map(|(s, e)| Expr::add(s.clone(), Expr::mul(chi0.clone(), e)).simplify())
        .collect()
}

/// Extend branches from the smaller chart along the datum: s_p + χ₀·φ̃(s_{q,i}∘π − s_q∘π).
pub fn extend_multisection(ms: &Multisection, datum: Option<&BundleExtensionDatum>, q: &KuranishiChart, p: &KuranishiChart) -> Result<Multisection> {
    let datum = datum.ok_or_else(|| Error::MissingExtensionData(p.label().into()))?;
    let chi0 = chi0_expr(datum, p);
    let branches = ms
        .branches
        .iter()
        .map(|b| SmoothMap::new(transfer_branch(b.comps(), &q.s, &p.s, datum, &chi0), p.dim(), 0))
        .collect();
    Ok(Multisection { chart: p.label().into(), branches })
}

/// Restrict branches along a change with constant fibre map: g⁻¹ s_{p,i}∘φ.
pub fn restrict_multisection(ms: &Multisection, phi: &SmoothMap, phi_hat: &crate::map::ExprMatrix, q: &KuranishiChart) -> Result<Multisection> {
    let consts: Option<Vec<f64>> = phi_hat.entries.iter().map(Expr::as_const).collect();
    let consts = consts.ok_or_else(|| Error::ModeUnsupported("restriction along a non-constant fibre map".into()))?;
    let g = DMatrix::from_row_slice(phi_hat.rows, phi_hat.cols, &consts);
    let gt = g.transpose();
    let pinv = (&gt * &g)
        .try_inverse()
        .ok_or_else(|| Error::UnverifiedEmbedding("fibre map is not injective".into()))?
        * gt;
    let pinv = crate::map::ExprMatrix::constant(&pinv);
    let branches = ms
        .branches
        .iter()
        .map(|b| {
            let moved: Vec<Expr> = b.comps().iter().map(|e| e.compose_y(phi.comps())).collect();
            SmoothMap::new(pinv.apply(&moved).into_iter().map(|e| e.simplify()).collect(), q.dim(), 0)
        })
        .collect();
    Ok(Multisection { chart: q.label().into(), branches })
}

/// Sampled transversality diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct TransversalityReport {
    pub region: Domain,
    pub zeros_checked: usize,
    pub sigma_min: f64,
    pub witness: Option<Vec<f64>>,
    pub transversal: bool,
    /// Restrictions to closed faces are transversal too.
    pub boundary_transversal: Option<bool>,
    /// f restricted to the zero set is a submersion.
    pub submersive: Option<bool>,
    /// Seeds per box dimension used for the search.
    pub resolution: usize,
}

impl TransversalityReport {
    pub fn ok(&self) -> bool {
        self.transversal && self.boundary_transversal != Some(false) && self.submersive != Some(false)
    }

    pub fn to_check(&self, name: &str) -> Check {
        let r = if self.sigma_min.is_finite() { self.sigma_min } else { 0.0 };
        Check::new(name, self.ok(), r)
            .with_witness(if self.ok() { None } else { self.witness.clone() })
            .with_detail(format!("{} zeros at {} seeds per dimension", self.zeros_checked, self.resolution))
    }
}

/// Zeros of a section given by a field; isolated zeros when square, projected samples otherwise.
fn section_zeros(field: &zeros::Field, n: usize, r: usize, region: &Domain) -> Vec<Vec<f64>> {
    if r == 0 {
        return region.samples(sample_count_for(200, n));
    }
    let pts = if r == n {
        zeros::grid_zeros(field, region, tol::SEEDS_PER_DIM)
    } else if r > n {
        zeros::grid_zeros(field, region, tol::SEEDS_PER_DIM)
            .into_iter()
            .filter(|p| field(p).0.norm() <= tol::ZERO)
            .collect()
    } else {
        zeros::project_samples(field, region, sample_count_for(400, n))
    };
    pts.into_iter().filter(|p| region.contains_closed(p, 1e-12)).collect()
}

struct Tally {
    zeros: usize,
    smin: f64,
    witness: Option<Vec<f64>>,
}

impl Tally {
    fn new() -> Self {
        Tally { zeros: 0, smin: f64::INFINITY, witness: None }
    }
    fn add(&mut self, y: &[f64], s: f64) -> Result<()> {
        if s.is_nan() {
            return Err(Error::DerivativeUnavailable(format!("at {y:?}")));
        }
        self.zeros += 1;
        if s < self.smin {
            self.smin = s;
            self.witness = Some(y.to_vec());
        }
        Ok(())
    }
}

fn surjective_sigma(j: &DMatrix<f64>) -> f64 {
    if j.nrows() == 0 {
        return f64::INFINITY;
    }
    if j.nrows() > j.ncols() {
        return 0.0;
    }
    sigma_min(j)
}

/// Transversality of each branch on `region`, and of its restriction to closed faces of the chart.
pub fn check_branches(branches: &[SmoothMap], chart: &KuranishiChart, region: &Domain) -> Result<TransversalityReport> {
    let n = chart.dim();
    let r = chart.rank();
    let mut t = Tally::new();
    let mut tb = Tally::new();
    let faces = chart.domain().faces();
    for b in branches {
        let f = |y: &[f64]| (b.at(y), b.jac_at(y));
        for y in section_zeros(&f, n, r, region) {
            t.add(&y, surjective_sigma(&b.jac_at(&y)))?;
        }
        for face in &faces {
            let Domain::Box(rb) = region else { continue };
            let v = chart.domain().face_value(*face);
            let reaches = if face.hi { (rb.hi[face.axis] - v).abs() < 1e-12 } else { (rb.lo[face.axis] - v).abs() < 1e-12 };
            if !reaches || n == 1 && r == 1 {
                if n == 1 && reaches {
                    // A 0-dimensional face: the branch must not vanish there.
                    let y = vec![v];
                    if b.at(&y).norm() <= tol::ZERO {
                        tb.add(&y, 0.0)?;
                    }
                }
                continue;
            }
            let rb_face = region.face_domain(*face);
            let bf = b.map_comps(|e| restrict_expr(e, face.axis, v, n), n - 1, 0);
            let ff = |y: &[f64]| (bf.at(y), bf.jac_at(y));
            for y in section_zeros(&ff, n - 1, r, &rb_face) {
                let mut full = y.clone();
                full.insert(face.axis, v);
                tb.add(&full, surjective_sigma(&bf.jac_at(&y)))?;
            }
        }
    }
    let transversal = t.smin > tol::RANK;
    let boundary = (!faces.is_empty()).then_some(tb.smin > tol::RANK);
    let witness = if !transversal { t.witness } else if boundary == Some(false) { tb.witness } else { None };
    Ok(TransversalityReport {
        region: region.clone(),
        zeros_checked: t.zeros + tb.zeros,
        sigma_min: t.smin.min(tb.smin),
        witness,
        transversal,
        boundary_transversal: boundary,
        submersive: None,
        resolution: tol::SEEDS_PER_DIM,
    })
}

/// Centre and half-width of a box B in E with ρ(γ)B ∩ B = ∅ for every ρ(γ) ≠ 1.
pub fn free_orbit_box(rep: &[DMatrix<f64>]) -> (Vec<f64>, f64) {
    let r = rep.first().map_or(0, |m| m.nrows());
    let c: Vec<f64> = (0..r).map(|i| 0.5 / (i + 1) as f64).collect();
    let cv = DVector::from_column_slice(&c);
    let mut d = f64::INFINITY;
    for m in rep {
        if (m - DMatrix::identity(r, r)).abs().max() <= tol::GROUP {
            continue;
        }
        d = d.min((m * &cv - &cv).norm());
    }
    let h = if d.is_finite() { (0.4 * d / (r as f64).sqrt()).min(0.25) } else { 0.25 };
    (c, h)
}

/// One chart's branches as expressions in y and t = 1/n.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchFamily {
    pub chart: usize,
    pub branches: Vec<Vec<Expr>>,
    pub xi: Vec<f64>,
    pub attempts: usize,
}

impl BranchFamily {
    pub fn at(&self, n: u64, dim: usize, label: &str) -> Multisection {
        let t = 1.0 / n as f64;
        let branches = self
            .branches
            .iter()
            .map(|b| SmoothMap::new(b.iter().map(|e| e.substitute(&|v| (v == Var::T).then_some(Expr::Num(t))).simplify()).collect(), dim, 0))
            .collect();
        Multisection { chart: label.into(), branches }
    }
}

/// {s^n}: branch families on every chart of a good coordinate system.
#[derive(Clone, Debug, PartialEq)]
pub struct MultivaluedPerturbation {
    pub seed: u64,
    pub families: Vec<BranchFamily>,
}

impl MultivaluedPerturbation {
    pub fn at(&self, gcs: &Gcs, n: u64) -> Vec<Multisection> {
        self.families
            .iter()
            .map(|f| {
                let c = &gcs.ks.charts[f.chart];
                f.at(n, c.dim(), c.label())
            })
            .collect()
    }

    pub fn family(&self, chart: usize) -> Option<&BranchFamily> {
        self.families.iter().find(|f| f.chart == chart)
    }

    /// sup over K of |s^n_i − s| + |Ds^n_i − Ds| for each n.
    pub fn c1_gaps(&self, gcs: &Gcs, ns: &[u64]) -> Vec<(u64, f64)> {
        ns.iter()
            .map(|&n| {
                let mut gap: f64 = 0.0;
                for (f, ms) in self.families.iter().zip(self.at(gcs, n)) {
                    let c = &gcs.ks.charts[f.chart];
                    for y in gcs.supports[f.chart].k.samples(sample_count_for(200, c.dim())) {
                        for b in &ms.branches {
                            let g = (b.at(&y) - c.s.at(&y)).norm() + (b.jac_at(&y) - c.s.jac_at(&y)).norm();
                            gap = gap.max(g);
                        }
                    }
                }
                (n, gap)
            })
            .collect()
    }
}

/// The unique lower chart joined to `c` by a coordinate change, with its extension datum.
fn lower_datum<'a>(gcs: &'a Gcs, c: usize) -> Result<Option<(usize, &'a BundleExtensionDatum)>> {
    let ks = &gcs.ks;
    let label = ks.charts[c].label();
    let lower: Vec<_> = ks.changes.iter().filter(|ch| ch.dst == label && ch.kind != ChangeKind::Open).collect();
    match lower.as_slice() {
        [] => Ok(None),
        [ch] => {
            let d = ks.datum(&ch.label).ok_or_else(|| Error::MissingExtensionData(ch.label.clone()))?;
            Ok(Some((ks.chart_index(&ch.src)?, d)))
        }
        _ => Err(Error::ModeUnsupported(format!("{label} receives more than one coordinate change"))),
    }
}

fn draw_xi(rng: &mut ChaCha8Rng, rep: &[DMatrix<f64>]) -> Vec<f64> {
    let (c, h) = free_orbit_box(rep);
    c.iter().map(|ci| ci + h * (2.0 * rng.gen::<f64>() - 1.0)).collect()
}

fn own_branches(chart: &KuranishiChart, xi: &[f64], weight: &Expr) -> Vec<Vec<Expr>> {
    let xv = DVector::from_column_slice(xi);
    chart
        .bundle
        .rep
        .iter()
        .map(|m| {
            let v = m * &xv;
            chart
                .s
                .comps()
                .iter()
                .enumerate()
                .map(|(i, s)| Expr::sub(s.clone(), Expr::mul(Expr::mul(Expr::t(), weight.clone()), Expr::Num(v[i]))).simplify())
                .collect()
        })
        .collect()
}

/// Build {s^n} chart by chart in the order of the poset: extend lower branches through the
/// extension data and add an own term −t(1−χ₀)ρ(γ)ξ with ξ drawn from a free-orbit box.
pub fn build_multivalued_perturbation(gcs: &Gcs, seed: u64, ns: &[u64]) -> Result<MultivaluedPerturbation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ks = &gcs.ks;
    let mut families: Vec<BranchFamily> = Vec::new();
    for c in gcs.charts_in_order() {
        let chart = &ks.charts[c];
        let region = &gcs.supports[c].k;
        let lower = lower_datum(gcs, c)?;
        let mut done = None;
        for attempt in 1..=tol::MAX_RETRY {
            let (branches, xi) = match lower {
                Some((q, datum)) => {
                    let fam_q = families.iter().find(|f| f.chart == q).ok_or_else(|| Error::FilterInductionStuck(chart.label().into()))?;
                    let chi0 = chi0_expr(datum, chart);
                    let lower_ext: Vec<Vec<Expr>> =
                        fam_q.branches.iter().map(|b| transfer_branch(b, &ks.charts[q].s, &chart.s, datum, &chi0)).collect();
                    if chi0.as_const() == Some(1.0) {
                        (lower_ext, Vec::new())
                    } else {
                        let xi = draw_xi(&mut rng, &chart.bundle.rep);
                        let own = own_branches(chart, &xi, &Expr::sub(Expr::one(), chi0.clone()));
                        let mut out = Vec::new();
                        for b in &lower_ext {
                            for o in &own {
                                out.push(
                                    b.iter()
                                        .zip(o)
                                        .zip(chart.s.comps())
                                        .map(|((x, y), s)| Expr::sub(Expr::add(x.clone(), y.clone()), s.clone()).simplify())
                                        .collect(),
                                );
                            }
                        }
                        (out, xi)
                    }
                }
                None if chart.rank() == 0 => (vec![Vec::new()], Vec::new()),
                None => {
                    let xi = draw_xi(&mut rng, &chart.bundle.rep);
                    (own_branches(chart, &xi, &Expr::one()), xi)
                }
            };
            let fam = BranchFamily { chart: c, branches, xi, attempts: attempt };
            let mut ok = true;
            for &n in ns {
                let ms = fam.at(n, chart.dim(), chart.label());
                if !check_branches(&ms.branches, chart, region)?.ok() {
                    ok = false;
                    break;
                }
            }
            if ok {
                done = Some(fam);
                break;
            }
            if lower.is_some_and(|(_, d)| chi0_expr(d, chart).as_const() == Some(1.0)) {
                return Err(Error::FilterInductionStuck(chart.label().into()));
            }
        }
        families.push(done.ok_or(Error::TransversalityRetryExhausted(tol::MAX_RETRY))?);
    }
    families.sort_by_key(|f| f.chart);
    Ok(MultivaluedPerturbation { seed, families })
}

/// CF-perturbation on one chart: parameter space W, weight ω supported in `support`, s^ε(y, w).
#[derive(Clone, Debug, PartialEq)]
pub struct Cfp {
    pub chart: usize,
    pub w: Domain,
    pub support: Domain,
    /// Action of the chart group on W.
    pub w_rep: Vec<DMatrix<f64>>,
    /// Density of ω in the w variables, valid on `support` and zero outside it.
    pub omega: Expr,
    /// Components in y, w and t = ε.
    pub s_eps: SmoothMap,
}

impl Cfp {
    pub fn w_dim(&self) -> usize {
        self.w.dim()
    }

    pub fn eval(&self, y: &[f64], w: &[f64], eps: f64) -> DVector<f64> {
        self.s_eps.eval(&Env::new(y, w, eps))
    }

    pub fn jac_y(&self, y: &[f64], w: &[f64], eps: f64) -> DMatrix<f64> {
        self.s_eps.jac_y(&Env::new(y, w, eps))
    }

    pub fn jac_w(&self, y: &[f64], w: &[f64], eps: f64) -> DMatrix<f64> {
        self.s_eps.jac_w(&Env::new(y, w, eps))
    }

    pub fn omega_at(&self, w: &[f64]) -> f64 {
        if self.support.contains_closed(w, 0.0) {
            self.omega.eval(&Env::new(&[], w, 0.0))
        } else {
            0.0
        }
    }

    /// Quadrature nodes on supp ω with weights multiplied by ω.
    pub fn weighted_nodes(&self, q: usize) -> Vec<(Vec<f64>, f64)> {
        if self.w_dim() == 0 {
            return vec![(Vec::new(), 1.0)];
        }
        self.support
            .quadrature(q, 1e9)
            .into_iter()
            .map(|(w, a)| {
                let v = self.omega.eval(&Env::new(&[], &w, 0.0));
                (w, a * v)
            })
            .collect()
    }

    pub fn omega_mass(&self, q: usize) -> f64 {
        self.weighted_nodes(q).iter().map(|(_, a)| a).sum()
    }

    /// Field y ↦ (s^ε(y, w), D_y s^ε) at fixed w and ε.
    pub fn field<'a>(&'a self, w: &'a [f64], eps: f64) -> impl Fn(&[f64]) -> (DVector<f64>, DMatrix<f64>) + Sync + 'a {
        move |y: &[f64]| (self.eval(y, w, eps), self.jac_y(y, w, eps))
    }
}

const OMEGA_RADIUS: f64 = 0.5;
const OMEGA_POWER: f64 = 4.0;

/// Polynomial bump ∏(1 − (w_i/a)²)^4 on a box, or (1 − |w|²/a²)^4 on a ball, normalized to mass 1.
pub fn normalized_bump(support: &Domain) -> Result<Expr> {
    let dens = match support {
        Domain::Box(b) => {
            let mut e = Expr::one();
            for i in 0..b.lo.len() {
                let c = 0.5 * (b.lo[i] + b.hi[i]);
                let a = 0.5 * (b.hi[i] - b.lo[i]);
                let u = Expr::div(Expr::sub(Expr::w(i), Expr::Num(c)), Expr::Num(a));
                e = Expr::mul(e, Expr::pow(Expr::sub(Expr::one(), Expr::pow(u, 2.0)), OMEGA_POWER));
            }
            e
        }
        Domain::Ball { center, radius } => {
            let r2 = Expr::sum(center.iter().enumerate().map(|(i, c)| Expr::pow(Expr::sub(Expr::w(i), Expr::Num(*c)), 2.0)));
            Expr::pow(Expr::sub(Expr::one(), Expr::div(r2, Expr::Num(radius * radius))), OMEGA_POWER)
        }
    };
    let mass: f64 = support.quadrature(tol::GL_ORDER, 1e9).iter().map(|(w, a)| a * dens.eval(&Env::new(&[], w, 0.0))).sum();
    if !(mass.is_finite() && mass > 0.0) {
        return Err(Error::OmegaNotNormalized(mass));
    }
    Ok(Expr::mul(Expr::Num(1.0 / mass), dens).simplify())
}

fn preserves_cube(rep: &[DMatrix<f64>]) -> bool {
    rep.iter().all(|m| {
        (0..m.nrows()).all(|i| {
            let nz: Vec<f64> = (0..m.ncols()).map(|j| m[(i, j)]).filter(|v| v.abs() > tol::GROUP).collect();
            nz.len() == 1 && (nz[0].abs() - 1.0).abs() <= tol::GROUP
        })
    })
}

/// s^ε = s − ε·χ·w with W = (−1,1)^r (or the unit ball when ρ does not preserve the cube).
pub fn standard_cfp(index: usize, chart: &KuranishiChart, chi: &Expr) -> Result<Cfp> {
    let r = chart.rank();
    if r > tol::MAX_W_DIM {
        return Err(Error::ModeUnsupported(format!("parameter dimension {r} exceeds {}", tol::MAX_W_DIM)));
    }
    let cube = preserves_cube(&chart.bundle.rep);
    let (w, support) = if cube || r <= 1 {
        (Domain::open_box(vec![-1.0; r], vec![1.0; r]), Domain::open_box(vec![-OMEGA_RADIUS; r], vec![OMEGA_RADIUS; r]))
    } else {
        (Domain::ball(vec![0.0; r], 1.0), Domain::ball(vec![0.0; r], OMEGA_RADIUS))
    };
    let omega = if r == 0 { Expr::one() } else { normalized_bump(&support)? };
    let comps = chart
        .s
        .comps()
        .iter()
        .enumerate()
        .map(|(i, s)| Expr::sub(s.clone(), Expr::mul(Expr::mul(Expr::t(), chi.clone()), Expr::w(i))).simplify())
        .collect();
    Ok(Cfp { chart: index, w, support, w_rep: chart.bundle.rep.clone(), omega, s_eps: SmoothMap::new(comps, chart.dim(), r) })
}

/// ∫ω = 1, ω ≥ 0, invariance of ω and W, equivariance of s^ε and C¹ convergence as ε → 0.
pub fn verify_cfp(cfp: &Cfp, chart: &KuranishiChart) -> Result<CheckReport> {
    let mut rep = CheckReport::new();
    let mass = cfp.omega_mass(tol::GL_ORDER);
    if (mass - 1.0).abs() > tol::OMEGA {
        return Err(Error::OmegaNotNormalized(mass));
    }
    rep.push(Check::residual("omega_mass", (mass - 1.0).abs(), tol::OMEGA).with_detail(format!("{mass:.15}")));
    let nodes = cfp.weighted_nodes(8);
    let neg = nodes.iter().find(|(w, _)| cfp.omega_at(w) < 0.0).map(|(w, _)| w.clone());
    rep.push(Check::new("omega_nonnegative", neg.is_none(), 0.0).with_witness(neg));
    let g = chart.group();
    let mut inv: f64 = 0.0;
    for (w, _) in &nodes {
        for m in &cfp.w_rep {
            let gw: Vec<f64> = (m * DVector::from_column_slice(w)).iter().copied().collect();
            inv = inv.max((cfp.omega_at(&gw) - cfp.omega_at(w)).abs());
        }
    }
    rep.push(Check::residual("omega_invariance", inv, tol::EQUIV));
    let ys = chart_samples(chart.base(), sample_count_for(60, chart.dim()));
    let mut eq: (f64, Option<Vec<f64>>) = (0.0, None);
    for eps in [0.1, 0.01] {
        for y in &ys {
            for (w, _) in nodes.iter().step_by((nodes.len() / 8).max(1)) {
                let base = cfp.eval(y, w, eps);
                for k in 0..g.order() {
                    let gy = g.apply(k, y);
                    if !chart.domain().contains(&gy) {
                        continue;
                    }
                    let gw: Vec<f64> = (&cfp.w_rep[k] * DVector::from_column_slice(w)).iter().copied().collect();
                    let r = (cfp.eval(&gy, &gw, eps) - &chart.bundle.rep[k] * &base).norm();
                    if r > eq.0 {
                        eq = (r, Some(y.clone()));
                    }
                }
            }
        }
    }
    rep.push(Check::residual("equivariance", eq.0, tol::EQUIV).with_witness((eq.0 >= tol::EQUIV).then_some(eq.1).flatten()));
    let gap = |eps: f64| {
        let mut g: f64 = 0.0;
        for y in &ys {
            for (w, _) in &nodes {
                let d0 = (cfp.eval(y, w, eps) - chart.s.at(y)).norm();
                let d1 = (cfp.jac_y(y, w, eps) - chart.s.jac_at(y)).norm();
                g = g.max(d0 + d1);
            }
        }
        g
    };
    let (g1, g2) = (gap(0.1), gap(0.01));
    let c = g1 / 0.1;
    rep.push(Check::new("c1_convergence", g2 <= c * 0.01 * (1.0 + 1e-9) + 1e-14, g2).with_detail(format!("gap(0.1) = {g1:e}, gap(0.01) = {g2:e}, C = {c:e}")));
    Ok(rep)
}

/// Shift the w variables of an expression by `off` and the y variables by `yoff`.
pub fn shift_vars(e: &Expr, yoff: usize, off: usize) -> Expr {
    e.substitute(&|v| match v {
        Var::W(i) => Some(Expr::w(i + off)),
        Var::Y(i) if yoff > 0 => Some(Expr::y(i + yoff)),
        _ => None,
    })
}

fn product_domain(a: &Domain, b: &Domain) -> Result<Domain> {
    if a.dim() == 0 {
        return Ok(b.clone());
    }
    if b.dim() == 0 {
        return Ok(a.clone());
    }
    a.product(b).ok_or_else(|| Error::ModeUnsupported("products of ball-shaped parameter spaces".into()))
}

fn block_rep(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let mut out = Vec::new();
    for x in a {
        for y in b {
            let (n, m) = (x.nrows(), y.nrows());
            let mut g = DMatrix::zeros(n + m, n + m);
            g.view_mut((0, 0), (n, n)).copy_from(x);
            g.view_mut((n, n), (m, m)).copy_from(y);
            out.push(g);
        }
    }
    out
}

/// s + Σ χ_r (s_r^ε(y, w_r) − s) on W = ∏ W_r with the product weight.
pub fn sum_cfp(chart: &KuranishiChart, cfps: &[Cfp], chis: &[Expr]) -> Result<Cfp> {
    if cfps.is_empty() || cfps.len() != chis.len() {
        return Err(Error::Type("sum needs one cut-off per CF-perturbation".into()));
    }
    let mut w = cfps[0].w.clone();
    let mut support = cfps[0].support.clone();
    let mut omega = cfps[0].omega.clone();
    let mut w_rep = cfps[0].w_rep.clone();
    let mut offs = vec![0];
    for c in &cfps[1..] {
        let off = w.dim();
        offs.push(off);
        w = product_domain(&w, &c.w)?;
        support = product_domain(&support, &c.support)?;
        omega = Expr::mul(omega, shift_vars(&c.omega, 0, off));
        // The chart group acts diagonally.
        w_rep = w_rep
            .iter()
            .zip(&c.w_rep)
            .map(|(x, y)| block_rep(std::slice::from_ref(x), std::slice::from_ref(y)).remove(0))
            .collect();
    }
    if w.dim() > tol::MAX_W_DIM {
        return Err(Error::ModeUnsupported(format!("parameter dimension {} exceeds {}", w.dim(), tol::MAX_W_DIM)));
    }
    let comps = chart
        .s
        .comps()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let terms = cfps.iter().zip(chis).zip(&offs).map(|((c, chi), &off)| {
                Expr::mul(chi.clone(), Expr::sub(shift_vars(&c.s_eps.comps()[i], 0, off), s.clone()))
            });
            Expr::add(s.clone(), Expr::sum(terms)).simplify()
        })
        .collect();
    let nw = w.dim();
    Ok(Cfp { chart: cfps[0].chart, w, support, w_rep, omega: omega.simplify(), s_eps: SmoothMap::new(comps, chart.dim(), nw) })
}

/// Extend a CF-perturbation from q to p along the datum: s_p + χ₀φ̃(s_q^ε(π y, w) − s_q(π y)),
/// with an own parameter block −ε(1−χ₀)w′ where χ₀ < 1.
pub fn extend_cfp(cfp_q: &Cfp, q: &KuranishiChart, p_index: usize, p: &KuranishiChart, datum: Option<&BundleExtensionDatum>) -> Result<Cfp> {
    let datum = datum.ok_or_else(|| Error::MissingExtensionData(p.label().into()))?;
    if p.group().order() != 1 {
        return Err(Error::ModeUnsupported(format!("extension into {} with a nontrivial group", p.label())));
    }
    let chi0 = chi0_expr(datum, p);
    let pi = datum.pi.comps();
    let diff: Vec<Expr> = cfp_q
        .s_eps
        .comps()
        .iter()
        .zip(q.s.comps())
        .map(|(a, s)| Expr::sub(a.compose_y(pi), s.compose_y(pi)))
        .collect();
    let ext = datum.phi_tilde.apply(&diff);
    let covers = chi0.as_const() == Some(1.0);
    let (w, support, omega) = if covers {
        (cfp_q.w.clone(), cfp_q.support.clone(), cfp_q.omega.clone())
    } else {
        let own = standard_cfp(p_index, p, &Expr::one())?;
        let off = cfp_q.w_dim();
        (
            product_domain(&cfp_q.w, &own.w)?,
            product_domain(&cfp_q.support, &own.support)?,
            Expr::mul(cfp_q.omega.clone(), shift_vars(&own.omega, 0, off)).simplify(),
        )
    };
    if w.dim() > tol::MAX_W_DIM {
        return Err(Error::ModeUnsupported(format!("parameter dimension {} exceeds {}", w.dim(), tol::MAX_W_DIM)));
    }
    let off = cfp_q.w_dim();
    let comps = p
        .s
        .comps()
        .iter()
        .zip(ext)
        .enumerate()
        .map(|(i, (s, e))| {
            let mut c = Expr::add(s.clone(), Expr::mul(chi0.clone(), e));
            if !covers {
                c = Expr::sub(c, Expr::mul(Expr::mul(Expr::t(), Expr::sub(Expr::one(), chi0.clone())), Expr::w(off + i)));
            }
            c.simplify()
        })
        .collect();
    let nw = w.dim();
    Ok(Cfp { chart: p_index, w, support, w_rep: vec![DMatrix::identity(nw, nw)], omega, s_eps: SmoothMap::new(comps, p.dim(), nw) })
}

/// Transversality of s^ε(·, w) on `region` for w at the quadrature nodes of supp ω, and
/// submersivity of `f` restricted to the zero sets.
pub fn check_cfp(cfp: &Cfp, chart: &KuranishiChart, region: &Domain, eps: f64, f: Option<&SmoothMap>) -> Result<TransversalityReport> {
    let n = chart.dim();
    let r = chart.rank();
    let mut t = Tally::new();
    let mut sub = Tally::new();
    for (w, _) in cfp.weighted_nodes(4) {
        let field = cfp.field(&w, eps);
        for y in section_zeros(&field, n, r, region) {
            let j = cfp.jac_y(&y, &w, eps);
            t.add(&y, surjective_sigma(&j))?;
            if let Some(f) = f {
                let ker = complement(&j.transpose());
                let df = f.jac_at(&y) * ker;
                let s = if df.nrows() == 0 { f64::INFINITY } else if df.ncols() < df.nrows() { 0.0 } else { sigma_min(&df) };
                sub.add(&y, s)?;
            }
        }
    }
    let transversal = t.smin > tol::RANK;
    let submersive = f.map(|_| sub.smin > tol::RANK);
    Ok(TransversalityReport {
        region: region.clone(),
        zeros_checked: t.zeros,
        sigma_min: t.smin,
        witness: if transversal { sub.witness.filter(|_| submersive == Some(false)) } else { t.witness },
        transversal,
        boundary_transversal: None,
        submersive,
        resolution: tol::SEEDS_PER_DIM,
    })
}

/// CF-perturbations for every chart, built upward along the poset.
pub fn build_cfp_system(gcs: &Gcs) -> Result<Vec<Cfp>> {
    let ks = &gcs.ks;
    let mut out: Vec<Option<Cfp>> = vec![None; ks.charts.len()];
    for c in gcs.charts_in_order() {
        let chart = &ks.charts[c];
        let cfp = match lower_datum(gcs, c)? {
            None => standard_cfp(c, chart, &Expr::one())?,
            Some((q, datum)) => {
                let cq = out[q].as_ref().ok_or_else(|| Error::FilterInductionStuck(chart.label().into()))?;
                extend_cfp(cq, &ks.charts[q], c, chart, Some(datum)).map_err(|e| match e {
                    Error::MissingExtensionData(_) => e,
                    _ => Error::FilterInductionStuck(format!("{}: {e}", chart.label())),
                })?
            }
        };
        for eps in tol::EPS_LADDER {
            if !check_cfp(&cfp, chart, &gcs.supports[c].k, eps, None)?.ok() {
                return Err(Error::FilterInductionStuck(format!("{} is not transversal at eps = {eps}", chart.label())));
            }
        }
        out[c] = Some(cfp);
    }
    Ok(out.into_iter().map(|c| c.expect("every chart visited")).collect())
}

/// CF-perturbation on a direct or fibre product chart.
pub fn product_fiberproduct_cfp(
    a: &Cfp,
    ca: &KuranishiChart,
    b: &Cfp,
    cb: &KuranishiChart,
    maps: Option<(&SmoothMap, &SmoothMap)>,
) -> Result<(KuranishiChart, Cfp, Option<SmoothMap>)> {
    let (chart, kind, f) = match maps {
        None => (crate::kuranishi::direct_product(ca, cb)?, FiberKind::Stabilized, None),
        Some((fa, fb)) => {
            let (c, f, k) = fiber_product(ca, fa, cb, fb)?;
            (c, k, Some(f))
        }
    };
    match kind {
        FiberKind::KeepFirst if b.w_dim() == 0 => return Ok((chart, Cfp { chart: 0, ..a.clone() }, f)),
        FiberKind::KeepSecond if a.w_dim() == 0 => return Ok((chart, Cfp { chart: 0, ..b.clone() }, f)),
        FiberKind::KeepFirst | FiberKind::KeepSecond => {
            return Err(Error::ModeUnsupported("eliminated factor carries a perturbation".into()));
        }
        FiberKind::Stabilized => {}
    }
    let n = chart.dim();
    let off = a.w_dim();
    let mut comps: Vec<Expr> = a.s_eps.comps().to_vec();
    comps.extend(b.s_eps.comps().iter().map(|e| shift_vars(e, ca.dim(), off).simplify()));
    if let Some((fa, fb)) = maps {
        let fb_s = shift_map(&fb.widen(cb.dim(), 0), ca.dim(), n);
        comps.extend(fa.comps().iter().zip(fb_s.comps()).map(|(x, y)| Expr::sub(x.clone(), y.clone()).simplify()));
    }
    let w = product_domain(&a.w, &b.w)?;
    let support = product_domain(&a.support, &b.support)?;
    let omega = Expr::mul(a.omega.clone(), shift_vars(&b.omega, 0, off)).simplify();
    let w_rep = block_rep(&a.w_rep, &b.w_rep);
    let nw = w.dim();
    Ok((chart, Cfp { chart: 0, w, support, w_rep, omega, s_eps: SmoothMap::new(comps, n, nw) }, f))
}

/// Which perturbation a zero-set diagnostic refers to.
#[derive(Clone, Copy, Debug)]
pub enum Perturbed<'a> {
    Unperturbed,
    Multi(&'a MultivaluedPerturbation, u64),
    Cf(&'a [Cfp], f64),
}

/// Per-chart zero sets of the perturbed sections, in chart coordinates, restricted to `region`.
/// Each entry is (w, points) for CF-perturbations and (branch, points) for multisections.
pub fn perturbed_zeros(gcs: &Gcs, p: Perturbed, c: usize, region: &Domain) -> Vec<Vec<Vec<f64>>> {
    let chart = &gcs.ks.charts[c];
    let (n, r) = (chart.dim(), chart.rank());
    match p {
        Perturbed::Unperturbed => vec![section_zeros(&chart.field(), n, r, region)],
        Perturbed::Multi(m, k) => {
            let Some(fam) = m.family(c) else { return Vec::new() };
            fam.at(k, n, chart.label())
                .branches
                .iter()
                .map(|b| section_zeros(&|y: &[f64]| (b.at(y), b.jac_at(y)), n, r, region))
                .collect()
        }
        Perturbed::Cf(cfps, eps) => {
            let cfp = &cfps[c];
            cfp.weighted_nodes(tol::GL_ORDER)
                .iter()
                .map(|(w, _)| section_zeros(&cfp.field(w, eps), n, r, region))
                .collect()
        }
    }
}

/// Project `y` onto the zero set of the given field; distance in global coordinates.
fn distance_to_zero_set(chart: &KuranishiChart, field: &zeros::Field, y: &[f64]) -> f64 {
    match zeros::project(field, y) {
        Some(p) => dist(chart.psi.at(&p).as_slice(), chart.psi.at(y).as_slice()),
        None => f64::INFINITY,
    }
}

/// One row of the convergence table.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    /// ε for CF-perturbations, n for multivalued perturbations.
    pub param: f64,
    pub hausdorff: f64,
    /// Perturbed zeros within δ_U of X lie in some int K_p.
    pub inside_supports: bool,
    /// Zero sets clipped by the two support systems agree near X (dimension 0 only).
    pub supports_agree: Option<bool>,
    pub zeros: usize,
}

fn clipped_points(gcs: &Gcs, p: Perturbed, supports: &[Support]) -> Vec<Vec<f64>> {
    let mut pts = Vec::new();
    for (c, s) in supports.iter().enumerate() {
        let chart = &gcs.ks.charts[c];
        for set in perturbed_zeros(gcs, p, c, &s.k) {
            for y in set {
                pts.push(chart.psi.at(&y).as_slice().to_vec());
            }
        }
    }
    dedup_points(pts, tol::DEDUP)
}

/// d_H(Π(zeros), X), support inclusion and two-support agreement for each parameter.
pub fn zero_support_and_convergence(gcs: &Gcs, rows: &[Perturbed], alt: Option<&[Support]>) -> Vec<ConvergenceRow> {
    let ks = &gcs.ks;
    let x_samples: Vec<(usize, Vec<f64>)> = (0..ks.charts.len())
        .flat_map(|c| perturbed_zeros(gcs, Perturbed::Unperturbed, c, &gcs.supports[c].k).into_iter().flatten().map(move |y| (c, y)))
        .collect();
    let x_global: Vec<Vec<f64>> = x_samples.iter().map(|(c, y)| ks.charts[*c].psi.at(y).as_slice().to_vec()).collect();
    rows.iter()
        .map(|&p| {
            let param = match p {
                Perturbed::Unperturbed => 0.0,
                Perturbed::Multi(_, n) => n as f64,
                Perturbed::Cf(_, e) => e,
            };
            let mut d_ax: f64 = 0.0;
            let mut count = 0;
            let mut inside = true;
            let mut fields_per_chart: Vec<Vec<Box<dyn Fn(&[f64]) -> (DVector<f64>, DMatrix<f64>) + Sync + '_>>> = Vec::new();
            for c in 0..ks.charts.len() {
                let chart = &ks.charts[c];
                let mut fs: Vec<Box<dyn Fn(&[f64]) -> (DVector<f64>, DMatrix<f64>) + Sync>> = Vec::new();
                match p {
                    Perturbed::Unperturbed => fs.push(Box::new(chart.field())),
                    Perturbed::Multi(m, k) => {
                        if let Some(f) = m.family(c) {
                            for b in f.at(k, chart.dim(), chart.label()).branches {
                                fs.push(Box::new(move |y: &[f64]| (b.at(y), b.jac_at(y))));
                            }
                        }
                    }
                    Perturbed::Cf(cfps, eps) => {
                        let cfp = &cfps[c];
                        for (w, _) in cfp.weighted_nodes(tol::GL_ORDER) {
                            fs.push(Box::new(move |y: &[f64]| (cfp.eval(y, &w, eps), cfp.jac_y(y, &w, eps))));
                        }
                    }
                }
                fields_per_chart.push(fs);
                let region = chart.domain().clone();
                for set in perturbed_zeros(gcs, p, c, &region) {
                    for y in set {
                        let g = chart.psi.at(&y);
                        let dx = distance_to_zero_set(chart, &chart.field(), &y);
                        if dx > tol::DELTA_U {
                            continue;
                        }
                        count += 1;
                        d_ax = d_ax.max(dx);
                        let in_k = gcs.supports[c].k.contains_closed(&y, 1e-9)
                            || (0..ks.charts.len()).any(|c2| {
                                let k = &gcs.supports[c2].k;
                                c2 != c
                                    && ks.charts[c2].psi.dim_out() == g.len()
                                    && ks.charts[c2].locate_near(g.as_slice(), k).is_some_and(|y2| k.contains_closed(&y2, 1e-9))
                            });
                        inside &= in_k;
                    }
                }
            }
            let mut d_xa: f64 = 0.0;
            for (c, y) in &x_samples {
                let chart = &ks.charts[*c];
                let best = fields_per_chart[*c].iter().map(|f| distance_to_zero_set(chart, f.as_ref(), y)).fold(f64::INFINITY, f64::min);
                d_xa = d_xa.max(best);
            }
            let hausdorff = if count == 0 && x_global.is_empty() { 0.0 } else { d_ax.max(d_xa) };
            let supports_agree = match (alt, ks.vdim()) {
                (Some(alt), Some(0)) => {
                    let near = |pts: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
                        pts.into_iter().filter(|z| x_global.iter().any(|x| dist(x, z) <= tol::DELTA_U)).collect()
                    };
                    let a = near(clipped_points(gcs, p, &gcs.supports));
                    let b = near(clipped_points(gcs, p, alt));
                    Some(a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| dist(x, y) <= tol::DEDUP))
                }
                _ => None,
            };
            ConvergenceRow { param, hausdorff, inside_supports: inside, supports_agree, zeros: count }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::BundleChart;
    use crate::expr::VarSpace;
    use crate::orbifold::{FiniteGroupAction, OrbifoldChart};

    fn g2() -> KuranishiChart {
        let base = OrbifoldChart::new("G2", Domain::open_box(vec![-2.0], vec![2.0]), FiniteGroupAction::sign(1), vec![0.0]);
        let b = BundleChart::new(base, 1, vec![DMatrix::identity(1, 1), -DMatrix::identity(1, 1)]).unwrap();
        KuranishiChart::new(b, SmoothMap::parse(&["y1"], VarSpace::y(1)).unwrap(), SmoothMap::parse(&["y1^2"], VarSpace::y(1)).unwrap(), 1, 1).unwrap()
    }

    fn ms(srcs: &[&str]) -> Multisection {
        Multisection { chart: "G2".into(), branches: srcs.iter().map(|s| SmoothMap::parse(&[*s], VarSpace::y(1)).unwrap()).collect() }
    }

    #[test]
    fn swap_pair_is_equivariant() {
        let rep = verify_multisection(&ms(&["y1 - 0.3", "y1 + 0.3"]), &g2()).unwrap();
        assert!(rep.all_pass());
        assert_eq!(rep.get("equivariance").unwrap().detail, "permutation [1, 0]");
        assert!(verify_multisection(&ms(&["y1"]), &g2()).unwrap().all_pass());
        match verify_multisection(&ms(&["y1 + 0.1"]), &g2()) {
            Err(Error::NoPermutationFound { y, gamma }) => {
                assert_eq!(y, vec![1.0]);
                assert_eq!(gamma, 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bump_has_unit_mass() {
        for d in [Domain::open_box(vec![-0.5], vec![0.5]), Domain::ball(vec![0.0, 0.0], 0.5), Domain::ball(vec![0.0; 3], 0.5)] {
            let e = normalized_bump(&d).unwrap();
            let m: f64 = d.quadrature(16, 1e9).iter().map(|(w, a)| a * e.eval(&Env::new(&[], w, 0.0))).sum();
            assert!((m - 1.0).abs() < 1e-12, "{m}");
        }
    }

    #[test]
    fn free_orbit_box_separates_orbit() {
        let rep = FiniteGroupAction::rotation(3).elements;
        let (c, h) = free_orbit_box(&rep);
        let cv = DVector::from_column_slice(&c);
        for m in &rep[1..] {
            assert!((m * &cv - &cv).norm() > 2.0 * h * 2f64.sqrt());
        }
    }
}
