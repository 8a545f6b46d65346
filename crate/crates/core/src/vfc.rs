//! Rational virtual chains: weighted zeros in dimension 0, boundary vanishing, level sweeps.

use crate::check::{Check, CheckReport, Status};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::kuranishi::{normalized_boundary_gcs, restrict_expr, BoundaryData, Gcs, KuranishiChart, Support};
use crate::map::SmoothMap;
use crate::numeric::{det, dist, lex_cmp};
use crate::orbifold::{average_over, sample_count_for, stabilizer, Domain};
use crate::perturbation::{check_branches, BranchFamily, MultivaluedPerturbation};
use crate::tol;
use crate::zeros;
use nalgebra::{DMatrix, DVector};
use num_rational::Rational64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One deduplicated zero with its multiplicity data.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedPoint {
    pub chart: String,
    pub coords: Vec<f64>,
    pub global: Vec<f64>,
    pub multiplicity: Rational64,
    pub stabilizer_order: usize,
    pub branches: usize,
    /// ε_i per branch; 0 where the branch does not vanish.
    pub signs: Vec<i8>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightedZeroSet {
    pub points: Vec<WeightedPoint>,
    /// Candidates merged into an earlier point by global-coordinate deduplication.
    pub merged: usize,
}

impl WeightedZeroSet {
    pub fn total(&self) -> Rational64 {
        self.points.iter().fold(Rational64::from_integer(0), |a, p| a + p.multiplicity)
    }
}

/// Exact total of a 0-dimensional chain with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct RationalChain {
    pub total: Rational64,
    pub stage: String,
    pub seed: u64,
    pub supports: String,
}

/// Zeros of a list of branches on one chart.
pub struct BranchSet<'a> {
    pub chart: &'a KuranishiChart,
    pub region: Domain,
    pub branches: Vec<SmoothMap>,
    /// Orientation factor multiplying sign det.
    pub sign: f64,
}

/// Distance in global coordinates from `y` to the unperturbed zero set of `chart`.
pub fn distance_to_x(chart: &KuranishiChart, y: &[f64]) -> f64 {
    if chart.rank() == 0 {
        return 0.0;
    }
    match zeros::project(&chart.field(), y) {
        Some(p) => dist(chart.psi.at(&p).as_slice(), chart.psi.at(y).as_slice()),
        None => f64::INFINITY,
    }
}

/// m = Σε/(ℓ·#Γ_p) at `y`, with the signs per branch.
pub fn multiplicity(chart: &KuranishiChart, branches: &[SmoothMap], sign: f64, y: &[f64]) -> Result<(Rational64, usize, Vec<i8>)> {
    let stab = stabilizer(chart.base(), y)?;
    let order = stab.indices.len().max(1);
    let mut signs = Vec::with_capacity(branches.len());
    for b in branches {
        if b.at(y).norm() > tol::ZERO {
            signs.push(0);
            continue;
        }
        let j = b.jac_at(y);
        if j.nrows() != j.ncols() {
            return Err(Error::NotVdim0(j.ncols() as i64 - j.nrows() as i64));
        }
        let d = det(&j);
        if d.abs() < tol::DET {
            return Err(Error::SignUndetermined { point: y.to_vec(), det: d });
        }
        signs.push(if d * sign > 0.0 { 1 } else { -1 });
    }
    let total: i64 = signs.iter().map(|&s| s as i64).sum();
    let denom = (branches.len() * order) as i64;
    Ok((Rational64::new(total, denom), order, signs))
}

/// Grid Newton per branch, clipping to the region and to the δ_U-neighbourhood of X,
/// global deduplication in set order, multiplicities at the canonical representative.
pub fn weighted_zeros(sets: &[BranchSet], delta_u: f64) -> Result<WeightedZeroSet> {
    let mut cands: Vec<(usize, Vec<f64>)> = Vec::new();
    for (k, set) in sets.iter().enumerate() {
        let mut pts = Vec::new();
        for b in &set.branches {
            let f = |y: &[f64]| (b.at(y), b.jac_at(y));
            pts.extend(
                zeros::grid_zeros(&f, &set.region, tol::SEEDS_PER_DIM)
                    .into_iter()
                    .filter(|y| set.region.contains_closed(y, 1e-9) && set.chart.domain().contains(y)),
            );
        }
        pts.sort_by(|a, b| lex_cmp(a, b));
        for y in zeros::dedup_points(pts, tol::DEDUP) {
            if distance_to_x(set.chart, &y) <= delta_u {
                cands.push((k, y));
            }
        }
    }
    let mut out = WeightedZeroSet::default();
    for (k, y) in cands {
        let set = &sets[k];
        let g: Vec<f64> = set.chart.psi.at(&y).iter().copied().collect();
        if out.points.iter().any(|p| dist(&p.global, &g) <= tol::DEDUP) {
            out.merged += 1;
            continue;
        }
        let (rep, _) = set.chart.base().canonical(&y);
        let rep = if set.chart.domain().contains(&rep) { rep } else { y.clone() };
        let (m, order, signs) = multiplicity(set.chart, &set.branches, set.sign, &rep)?;
        out.points.push(WeightedPoint {
            chart: set.chart.label().into(),
            coords: rep,
            global: g,
            multiplicity: m,
            stabilizer_order: order,
            branches: set.branches.len(),
            signs,
        });
    }
    Ok(out)
}

fn support_region(s: &Support) -> Domain {
    s.k_prime.clone().unwrap_or_else(|| s.k.clone())
}

fn require_vdim0(gcs: &Gcs) -> Result<()> {
    match gcs.ks.vdim() {
        Some(0) => Ok(()),
        Some(d) => Err(Error::NotVdim0(d)),
        None => Err(Error::NotVdim0(i64::MIN)),
    }
}

/// Zeros of s^n inside K′ ∩ 𝔘(X), one entry per equivalence class.
pub fn solve_zeros_dim0(gcs: &Gcs, mvp: &MultivaluedPerturbation, n: u64, supports: &[Support], delta_u: f64) -> Result<WeightedZeroSet> {
    require_vdim0(gcs)?;
    if supports.len() != gcs.ks.charts.len() {
        return Err(Error::Type(format!("{} supports for {} charts", supports.len(), gcs.ks.charts.len())));
    }
    let sets: Vec<BranchSet> = gcs
        .charts_in_order()
        .into_iter()
        .filter_map(|c| {
            let chart = &gcs.ks.charts[c];
            let fam = mvp.family(c)?;
            Some(BranchSet {
                chart,
                region: support_region(&supports[c]),
                branches: fam.at(n, chart.dim(), chart.label()).branches,
                sign: chart.orientation(),
            })
        })
        .collect();
    weighted_zeros(&sets, delta_u)
}

/// Exact rational count of the perturbed zeros at stage n.
pub fn virtual_chain_dim0(gcs: &Gcs, mvp: &MultivaluedPerturbation, n: u64, supports: &[Support], delta_u: f64) -> Result<(WeightedZeroSet, RationalChain)> {
    let zs = solve_zeros_dim0(gcs, mvp, n, supports, delta_u)?;
    let chain = RationalChain {
        total: zs.total(),
        stage: format!("n={n}"),
        seed: mvp.seed,
        supports: format!("delta_u={delta_u}"),
    };
    Ok((zs, chain))
}

/// Restrict each branch family to the faces of the boundary data.
pub fn restrict_perturbation(mvp: &MultivaluedPerturbation, gcs: &Gcs, bd: &BoundaryData) -> MultivaluedPerturbation {
    let families = bd
        .charts
        .iter()
        .enumerate()
        .filter_map(|(i, b)| {
            let fam = mvp.family(b.parent)?;
            let parent = &gcs.ks.charts[b.parent];
            let v = parent.domain().face_value(b.face);
            let branches =
                fam.branches.iter().map(|br| br.iter().map(|e| restrict_expr(e, b.face.axis, v, parent.dim())).collect()).collect();
            Some(BranchFamily { chart: i, branches, xi: fam.xi.clone(), attempts: fam.attempts })
        })
        .collect();
    MultivaluedPerturbation { seed: mvp.seed, families }
}

/// Boundary chain together with its checks.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryOutcome {
    pub zeros: WeightedZeroSet,
    pub chain: RationalChain,
    pub checks: CheckReport,
}

/// The 0-dimensional chain on the normalized boundary of a vdim-1 system, asserted to vanish.
pub fn boundary_vanishing_check(gcs: &Gcs, mvp: &MultivaluedPerturbation, n: u64) -> Result<BoundaryOutcome> {
    match gcs.ks.vdim() {
        Some(1) => {}
        Some(d) => return Err(Error::Type(format!("boundary vanishing needs vdim 1, found {d}"))),
        None => return Err(Error::Type("charts disagree on the virtual dimension".into())),
    }
    let (gb, bd) = normalized_boundary_gcs(gcs)?;
    let restricted = restrict_perturbation(mvp, gcs, &bd);
    let mut checks = CheckReport::new();
    for fam in &restricted.families {
        let chart = &gb.ks.charts[fam.chart];
        let ms = fam.at(n, chart.dim(), chart.label());
        let rep = check_branches(&ms.branches, chart, &gb.supports[fam.chart].k)?;
        if !rep.ok() {
            return Err(Error::BoundaryNotTransversal(rep.witness.unwrap_or_default()));
        }
        checks.push(rep.to_check(&format!("transversal[{}]", chart.label())));
    }
    let zeros = if gb.ks.charts.is_empty() { WeightedZeroSet::default() } else { solve_zeros_dim0(&gb, &restricted, n, &gb.supports, tol::DELTA_U)? };
    let total = zeros.total();
    checks.push(Check::new("boundary_chain_zero", total == Rational64::from_integer(0), *total.numer() as f64).with_detail(format!("{total}")));
    let chain = RationalChain { total, stage: format!("n={n}"), seed: mvp.seed, supports: "boundary".into() };
    Ok(BoundaryOutcome { zeros, chain, checks })
}

/// Sweep function after the Morse perturbation f̃ = f·(1 + p).
#[derive(Clone, Debug, PartialEq)]
pub struct MorseFunction {
    /// f̃ per chart, indexed like the charts of the system.
    pub per_chart: Vec<SmoothMap>,
    pub critical_values: Vec<f64>,
    pub attempts: usize,
}

/// Random Γ-averaged polynomial of degree ≤ 2 with sup-norm `sup` over samples of `domain`.
fn random_polynomial(rng: &mut ChaCha8Rng, chart: &KuranishiChart, sup: f64) -> Expr {
    let n = chart.dim();
    let mut terms = vec![Expr::Num(rng.gen::<f64>() * 2.0 - 1.0)];
    for i in 0..n {
        terms.push(Expr::mul(Expr::Num(rng.gen::<f64>() * 2.0 - 1.0), Expr::y(i)));
        for j in i..n {
            terms.push(Expr::mul(Expr::Num(rng.gen::<f64>() * 2.0 - 1.0), Expr::mul(Expr::y(i), Expr::y(j))));
        }
    }
    let p = average_over(chart.group(), &Expr::sum(terms).simplify());
    let peak = chart
        .domain()
        .samples(sample_count_for(400, n))
        .iter()
        .map(|y| p.eval(&crate::expr::Env::y(y)).abs())
        .fold(0.0, f64::max);
    if peak <= 0.0 {
        return Expr::zero();
    }
    Expr::mul(Expr::Num(sup / peak), p).simplify()
}

/// Critical points of f restricted to the traced zero set of one branch: sign changes of df(τ)
/// refined on the polyline, with the second derivative along the curve.
fn critical_points(chart: &KuranishiChart, branch: &SmoothMap, f: &SmoothMap, region: &Domain) -> Result<Vec<(Vec<f64>, f64, f64)>> {
    let field = |y: &[f64]| (branch.at(y), branch.jac_at(y));
    let true_faces: Vec<_> = chart.domain().faces();
    let opts = zeros::TraceOptions { region, true_faces: &true_faces, orientation: 1.0, h: tol::H_TRACE };
    let seeds = zeros::curve_seeds(&field, region, tol::SEEDS_PER_DIM);
    let curves = zeros::trace_curves(&field, &opts, &seeds)?;
    let mut out = Vec::new();
    for c in &curves {
        let slope = |k: usize| {
            let j = branch.jac_at(&c.nodes[k]);
            let t = zeros::tangent(&j).unwrap_or_else(|| DVector::zeros(j.ncols()));
            (f.jac_at(&c.nodes[k]) * t)[0]
        };
        let m = c.nodes.len();
        let s: Vec<f64> = (0..m).map(slope).collect();
        for k in 1..m {
            if s[k - 1] * s[k] < 0.0 {
                let a = s[k - 1] / (s[k - 1] - s[k]);
                let p: Vec<f64> = c.nodes[k - 1].iter().zip(&c.nodes[k]).map(|(x, y)| x + a * (y - x)).collect();
                let h = dist(&c.nodes[k - 1], &c.nodes[k]).max(1e-12);
                let second = (s[k] - s[k - 1]) / h;
                out.push((p.clone(), f.at(&p)[0], second));
            }
        }
    }
    Ok(out)
}

/// f̃ = f·(1 + p) with seeded random p of sup-norm 1e-3, retried until every critical point
/// on the perturbed zero set is nondegenerate.
pub fn morse_perturb(gcs: &Gcs, mvp: &MultivaluedPerturbation, n: u64, f: &[SmoothMap], seed: u64) -> Result<MorseFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
    for attempt in 1..=tol::MORSE_RETRY {
        let per_chart: Vec<SmoothMap> = gcs
            .ks
            .charts
            .iter()
            .zip(f)
            .map(|(c, fc)| {
                let p = random_polynomial(&mut rng, c, tol::MORSE_SUP);
                let fc = fc.widen(c.dim(), 0);
                fc.map_comps(|e| Expr::mul(e.clone(), Expr::add(Expr::one(), p.clone())), c.dim(), 0)
            })
            .collect();
        let mut values = Vec::new();
        let mut degenerate = false;
        for fam in &mvp.families {
            let chart = &gcs.ks.charts[fam.chart];
            for b in fam.at(n, chart.dim(), chart.label()).branches {
                for (_, v, second) in critical_points(chart, &b, &per_chart[fam.chart], &gcs.supports[fam.chart].k)? {
                    if second.abs() < tol::MORSE_HESSIAN {
                        degenerate = true;
                    }
                    values.push(v);
                }
            }
        }
        if !degenerate {
            values.sort_by(f64::total_cmp);
            values.dedup_by(|a, b| (*a - *b).abs() < tol::DEDUP);
            return Ok(MorseFunction { per_chart, critical_values: values, attempts: attempt });
        }
    }
    Err(Error::TransversalityRetryExhausted(tol::MORSE_RETRY))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelRow {
    pub level: f64,
    /// None when the level was skipped as critical.
    pub chain: Option<Rational64>,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutcome {
    pub rows: Vec<LevelRow>,
    pub morse: MorseFunction,
    pub checks: CheckReport,
}

/// Inward normal derivative of f at the boundary points of X, and f ≈ 0 there.
fn normal_positivity(gcs: &Gcs, f: &[SmoothMap]) -> Result<Check> {
    let (gb, bd) = normalized_boundary_gcs(gcs)?;
    let mut worst_val: f64 = 0.0;
    let mut min_deriv = f64::INFINITY;
    let mut witness = None;
    for (i, b) in bd.charts.iter().enumerate() {
        let parent = &gcs.ks.charts[b.parent];
        let fp = f[b.parent].widen(parent.dim(), 0);
        for y in gb.ks.charts[i].zero_samples(&gb.supports[i].k) {
            let p = b.project(&y, parent);
            worst_val = worst_val.max(fp.at(&p)[0].abs());
            let inward = if b.face.hi { -1.0 } else { 1.0 };
            let d = fp.jac_at(&p)[(0, b.face.axis)] * inward;
            if d < min_deriv {
                min_deriv = d;
                witness = Some(p);
            }
        }
    }
    let ok = worst_val <= tol::FORM && min_deriv > 0.0;
    Ok(Check::new("normal_positivity", ok, worst_val)
        .with_witness(if ok { None } else { witness })
        .with_detail(format!("min inward derivative {min_deriv:e}")))
}

/// 0-dimensional chain of the level set {f̃ = s}, oriented as the boundary of {f̃ ≥ s}.
pub fn level_chain(gcs: &Gcs, mvp: &MultivaluedPerturbation, n: u64, ftilde: &[SmoothMap], level: f64) -> Result<WeightedZeroSet> {
    let sets: Vec<BranchSet> = gcs
        .charts_in_order()
        .into_iter()
        .filter_map(|c| {
            let chart = &gcs.ks.charts[c];
            let fam = mvp.family(c)?;
            let d = chart.dim();
            let fc = &ftilde[c];
            let branches = fam
                .at(n, d, chart.label())
                .branches
                .into_iter()
                .map(|b| {
                    let mut comps = b.comps().to_vec();
                    comps.push(Expr::sub(fc.comps()[0].clone(), Expr::Num(level)).simplify());
                    SmoothMap::new(comps, d, 0)
                })
                .collect();
            let sign = chart.orientation() * if d % 2 == 0 { 1.0 } else { -1.0 };
            Some(BranchSet { chart, region: support_region(&gcs.supports[c]), branches, sign })
        })
        .collect();
    weighted_zeros(&sets, tol::DELTA_U)
}

/// Chains on regular levels of a Morse-perturbed sweep function; asserts constancy across
/// regular levels below the maximum and emptiness above it.
pub fn level_sweep(gcs: &Gcs, mvp: &MultivaluedPerturbation, n: u64, f: &[SmoothMap], levels: &[f64]) -> Result<SweepOutcome> {
    if f.len() != gcs.ks.charts.len() {
        return Err(Error::Type(format!("{} sweep functions for {} charts", f.len(), gcs.ks.charts.len())));
    }
    let mut checks = CheckReport::new();
    checks.push(normal_positivity(gcs, f)?);
    let morse = morse_perturb(gcs, mvp, n, f, mvp.seed)?;
    let top = morse.critical_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut rows = Vec::new();
    for &s in levels {
        if morse.critical_values.iter().any(|v| (v - s).abs() < tol::LEVEL_MARGIN) {
            rows.push(LevelRow { level: s, chain: None, points: 0 });
            continue;
        }
        let zs = level_chain(gcs, mvp, n, &morse.per_chart, s)?;
        rows.push(LevelRow { level: s, chain: Some(zs.total()), points: zs.points.len() });
    }
    let below: Vec<&LevelRow> = rows.iter().filter(|r| r.chain.is_some() && r.level < top).collect();
    let constant = below.windows(2).all(|w| w[0].chain == w[1].chain);
    let values: Vec<String> = below.iter().map(|r| r.chain.map(|c| c.to_string()).unwrap_or_default()).collect();
    checks.push(Check::new("constant_across_levels", constant, below.len() as f64).with_detail(values.join(", ")));
    let above: Vec<&LevelRow> = rows.iter().filter(|r| r.level > top && top.is_finite()).collect();
    let empty = above.iter().all(|r| r.points == 0);
    let mut c = Check::new("empty_above_max", empty, above.len() as f64).with_detail(format!("max critical value {top}"));
    if above.is_empty() {
        c = c.with_status(Status::Unknown);
    }
    checks.push(c);
    let skipped = rows.iter().filter(|r| r.chain.is_none()).count();
    if skipped > 0 {
        checks.push(
            Check::new("critical_levels_skipped", true, skipped as f64)
                .with_detail(Error::LevelCritical(rows.iter().find(|r| r.chain.is_none()).map_or(0.0, |r| r.level)).to_string()),
        );
    }
    Ok(SweepOutcome { rows, morse, checks })
}

/// Jacobian determinant sign helper exposed for orientation tests.
pub fn oriented_sign(j: &DMatrix<f64>, sign: f64) -> Option<i8> {
    let d = det(j);
    (d.abs() >= tol::DET).then_some(if d * sign > 0.0 { 1 } else { -1 })
}
