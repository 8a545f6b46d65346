//! Integration along the fibre on perturbed zero sets, Stokes, correspondences and invariance.

use crate::check::{Check, CheckReport};
use crate::error::{Error, Result};
use crate::expr::{Env, Expr};
use crate::kuranishi::{fiber_product, normalized_boundary_gcs, restrict_expr, FiberKind, Gcs, KuranishiChart};
use crate::map::SmoothMap;
use crate::numeric::{det, gl_interval, newton};
use crate::orbifold::{partition_of_unity, Domain, Form, PouPiece, Transport};
use crate::perturbation::{check_cfp, Cfp};
use crate::tol;
use crate::zeros::{self, Curve};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Field y ↦ (F(y), DF(y)).
type FieldFn<'a> = dyn Fn(&[f64]) -> (DVector<f64>, DMatrix<f64>) + Sync + 'a;

/// Point on the curve F = 0 over the chord point a + uΔ, in the hyperplane orthogonal to Δ.
fn chord_point(f: &FieldFn, a: &[f64], d: &DVector<f64>, u: f64) -> Option<Vec<f64>> {
    let n = a.len();
    let base: Vec<f64> = (0..n).map(|i| a[i] + u * d[i]).collect();
    let g = |z: &[f64]| {
        let (fv, fj) = f(z);
        let r = fv.len();
        let mut res = DVector::zeros(r + 1);
        res.rows_mut(0, r).copy_from(&fv);
        res[r] = (0..n).map(|i| d[i] * (z[i] - base[i])).sum();
        let mut j = DMatrix::zeros(r + 1, n);
        j.view_mut((0, 0), (r, n)).copy_from(&fj);
        for i in 0..n {
            j[(r, i)] = d[i];
        }
        (res, j)
    };
    newton(&g, &base, tol::CORRECTOR_TOL, 30)
}

/// dc/du for the chord parametrization: [J; Δᵀ] c′ = [0; |Δ|²].
fn chord_velocity(f: &FieldFn, c: &[f64], d: &DVector<f64>) -> Option<DVector<f64>> {
    let (_, j) = f(c);
    let (r, n) = (j.nrows(), j.ncols());
    let mut a = DMatrix::zeros(r + 1, n);
    a.view_mut((0, 0), (r, n)).copy_from(&j);
    for i in 0..n {
        a[(r, i)] = d[i];
    }
    let mut b = DVector::zeros(r + 1);
    b[r] = d.norm_squared();
    a.lu().solve(&b)
}

struct Segment {
    a: Vec<f64>,
    d: DVector<f64>,
    length: f64,
}

fn seg_speed(f: &FieldFn, s: &Segment, u: f64) -> Option<(Vec<f64>, DVector<f64>)> {
    let c = chord_point(f, &s.a, &s.d, u)?;
    let v = chord_velocity(f, &c, &s.d)?;
    Some((c, v))
}

fn seg_arclength(f: &FieldFn, s: &Segment, u: f64) -> Option<f64> {
    let mut acc = 0.0;
    for (x, w) in gl_interval(0.0, u, 8) {
        acc += w * seg_speed(f, s, x)?.1.norm();
    }
    Some(acc)
}

/// ∫_curve α(c, T) ds with Gauss–Legendre of order `q` in the true arclength of the whole curve.
/// `alpha` receives the point and the unit tangent.
pub fn curve_integral(f: &FieldFn, curve: &Curve, alpha: &dyn Fn(&[f64], &[f64]) -> f64, q: usize) -> Result<f64> {
    let mut nodes: Vec<Vec<f64>> = Vec::with_capacity(curve.nodes.len() + 1);
    for p in &curve.nodes {
        if nodes.last().is_none_or(|q| crate::numeric::dist(p, q) > 1e-9) {
            nodes.push(p.clone());
        } else if nodes.len() > 1 {
            // Keep the exact end point.
            *nodes.last_mut().unwrap() = p.clone();
        }
    }
    if curve.closed {
        nodes.push(nodes[0].clone());
    }
    if nodes.len() < 2 {
        return Ok(0.0);
    }
    let mut segs = Vec::with_capacity(nodes.len() - 1);
    let mut cum = vec![0.0];
    for w in nodes.windows(2) {
        let d = DVector::from_iterator(w[0].len(), w[0].iter().zip(&w[1]).map(|(a, b)| b - a));
        let mut s = Segment { a: w[0].clone(), d, length: 0.0 };
        s.length = seg_arclength(f, &s, 1.0).ok_or_else(|| Error::TraceBreak(w[0].clone()))?;
        cum.push(cum.last().unwrap() + s.length);
        segs.push(s);
    }
    let total = *cum.last().unwrap();
    let mut acc = 0.0;
    for (s, w) in gl_interval(0.0, total, q) {
        let k = match cum.binary_search_by(|v| v.total_cmp(&s)) {
            Ok(i) => i.min(segs.len() - 1),
            Err(i) => i.saturating_sub(1).min(segs.len() - 1),
        };
        let seg = &segs[k];
        let target = s - cum[k];
        let mut u = (target / seg.length).clamp(0.0, 1.0);
        for _ in 0..6 {
            let g = seg_arclength(f, seg, u).ok_or_else(|| Error::TraceBreak(seg.a.clone()))? - target;
            let sp = seg_speed(f, seg, u).ok_or_else(|| Error::TraceBreak(seg.a.clone()))?.1.norm();
            let du = g / sp;
            u -= du;
            if du.abs() < 1e-15 {
                break;
            }
        }
        let (c, v) = seg_speed(f, seg, u).ok_or_else(|| Error::TraceBreak(seg.a.clone()))?;
        let vn = v.norm();
        let t: Vec<f64> = v.iter().map(|x| x / vn).collect();
        acc += w * alpha(&c, &t);
    }
    Ok(acc)
}

/// Zero-set quadrature options.
#[derive(Clone, Copy, Debug)]
pub struct Quad {
    /// Gauss–Legendre order along curves and per parameter dimension.
    pub order: usize,
}

impl Default for Quad {
    fn default() -> Self {
        Quad { order: tol::GL_ORDER }
    }
}

fn form_value(h: &Form, y: &[f64], vecs: &[Vec<f64>]) -> f64 {
    if h.degree == 0 {
        return h.terms.get(&Vec::new()).map_or(0.0, |c| c.eval(&Env::y(y)));
    }
    h.eval_on(&Env::y(y), vecs)
}

/// ∫ over the zero set of one field on `region`: signed points, traced curves, or the whole
/// region when the bundle has rank 0.
/// `sign` is the orientation factor of the field.
fn zero_set_integral(field: &FieldFn, n: usize, r: usize, region: &Domain, true_faces: &[crate::orbifold::Face], sign: f64, integrand: &Form, weight: &Expr, q: usize) -> Result<f64> {
    let d = n as i64 - r as i64;
    if integrand.degree as i64 != d {
        return Err(Error::Type(format!("a {}-form cannot be integrated over a {d}-dimensional zero set", integrand.degree)));
    }
    match d {
        0 => {
            let mut acc = 0.0;
            for y in zeros::grid_zeros(field, region, tol::SEEDS_PER_DIM) {
                if !region.contains_closed(&y, 1e-12) {
                    continue;
                }
                let (_, j) = field(&y);
                let dj = det(&j);
                if dj.abs() < tol::DET {
                    return Err(Error::SignUndetermined { point: y, det: dj });
                }
                acc += dj.signum() * sign * form_value(integrand, &y, &[]) * weight.eval(&Env::y(&y));
            }
            Ok(acc)
        }
        1 => {
            let opts = zeros::TraceOptions { region, true_faces, orientation: sign, h: tol::H_TRACE };
            let seeds = zeros::curve_seeds(field, region, tol::SEEDS_PER_DIM);
            let curves = zeros::trace_curves(field, &opts, &seeds)?;
            let mut acc = 0.0;
            for c in &curves {
                acc += curve_integral(field, c, &|y, t| form_value(integrand, y, &[t.to_vec()]) * weight.eval(&Env::y(y)), q)?;
            }
            Ok(acc)
        }
        _ if r == 0 => {
            // No equation: the zero set is the region itself.
            let coef = integrand.top_coefficient();
            let mut acc = 0.0;
            for (y, w) in region.quadrature(q, 1e9) {
                let env = Env::y(&y);
                acc += w * coef.eval(&env) * weight.eval(&env);
            }
            Ok(sign * acc)
        }
        _ => Err(Error::ModeUnsupported(format!("zero sets of dimension {d}"))),
    }
}

fn true_faces_of(chart: &KuranishiChart, region: &Domain) -> Vec<crate::orbifold::Face> {
    let (Some(rb), Some(db)) = (region.to_box(), chart.domain().to_box()) else { return Vec::new() };
    chart
        .domain()
        .faces()
        .into_iter()
        .filter(|f| {
            let (rv, dv) = if f.hi { (rb.hi[f.axis], db.hi[f.axis]) } else { (rb.lo[f.axis], db.lo[f.axis]) };
            (rv - dv).abs() < 1e-12
        })
        .collect()
}

/// (1/#Γ) ∫_W ω ∫_{(s^ε_w)⁻¹(0) ∩ region} χ·h.
pub fn integrate_on_perturbed_zero_set(chart: &KuranishiChart, cfp: &Cfp, eps: f64, h: &Form, chi: &Expr, region: &Domain, quad: Quad) -> Result<f64> {
    if h.is_zero() {
        return Ok(0.0);
    }
    let faces = true_faces_of(chart, region);
    let nodes = cfp.weighted_nodes(quad.order);
    let parts: Vec<Result<f64>> = nodes
        .par_iter()
        .map(|(w, a)| {
            if *a == 0.0 {
                return Ok(0.0);
            }
            let field = cfp.field(w, eps);
            Ok(a * zero_set_integral(&field, chart.dim(), chart.rank(), region, &faces, chart.orientation(), h, chi, quad.order)?)
        })
        .collect();
    let mut acc = 0.0;
    for p in parts {
        acc += p?;
    }
    Ok(acc / chart.group().order() as f64)
}

/// Target of a pushout.
#[derive(Clone, Copy, Debug)]
pub enum Mode<'a> {
    /// M is a point.
    Point,
    /// ∫_M f!(h) ∧ ρ.
    Pair(&'a Form),
    /// f!(h) at points of M (dim M ≤ 1).
    Grid(&'a [Vec<f64>]),
}

#[derive(Clone, Debug, PartialEq)]
pub enum PushoutValue {
    Scalar(f64),
    Samples(Vec<(Vec<f64>, f64)>),
}

impl PushoutValue {
    pub fn scalar(&self) -> Option<f64> {
        match self {
            PushoutValue::Scalar(v) => Some(*v),
            PushoutValue::Samples(_) => None,
        }
    }
}

/// Everything a pushout needs on one good coordinate system.
pub struct PushoutData<'a> {
    pub gcs: &'a Gcs,
    pub cfps: &'a [Cfp],
    /// Partition of unity, one function per chart.
    pub pou: &'a [Expr],
    /// The form h, one per chart.
    pub h: &'a [Form],
    /// f: chart → M, one per chart; empty when M is a point.
    pub f: &'a [SmoothMap],
}

/// Degree of f!(h): deg h + dim M − vdim.
pub fn pushout_degree(deg_h: usize, dim_m: usize, vdim: i64) -> i64 {
    deg_h as i64 + dim_m as i64 - vdim
}

fn dim_m(data: &PushoutData) -> usize {
    data.f.first().map_or(0, |f| f.dim_out())
}

/// f strongly submersive on the perturbed zero sets.
pub fn submersion_check(data: &PushoutData, eps: f64) -> Result<Check> {
    if data.f.is_empty() {
        return Ok(Check::new("strongly_submersive", true, f64::INFINITY).with_detail("target is a point"));
    }
    let mut worst = f64::INFINITY;
    let mut witness = None;
    for c in 0..data.gcs.ks.charts.len() {
        let chart = &data.gcs.ks.charts[c];
        let rep = check_cfp(&data.cfps[c], chart, &data.gcs.supports[c].k, eps, Some(&data.f[c].widen(chart.dim(), 0)))?;
        if rep.sigma_min < worst {
            worst = rep.sigma_min;
        }
        if rep.submersive == Some(false) {
            witness = rep.witness.clone();
            return Err(Error::NotSubmersive(witness.unwrap_or_default()));
        }
    }
    Ok(Check::new("strongly_submersive", true, worst).with_witness(witness))
}

/// f!(h; 𝔖^ε) in the requested mode.
pub fn pushout(data: &PushoutData, eps: f64, mode: Mode, quad: Quad) -> Result<PushoutValue> {
    let ks = &data.gcs.ks;
    let m = dim_m(data);
    if matches!(mode, Mode::Point) || m == 0 {
        let mut acc = 0.0;
        for c in 0..ks.charts.len() {
            acc += integrate_on_perturbed_zero_set(&ks.charts[c], &data.cfps[c], eps, &data.h[c], &data.pou[c], &data.gcs.supports[c].k, quad)?;
        }
        return Ok(PushoutValue::Scalar(acc));
    }
    submersion_check(data, eps)?;
    match mode {
        Mode::Point => unreachable!(),
        Mode::Pair(rho) => {
            let mut acc = 0.0;
            for c in 0..ks.charts.len() {
                let chart = &ks.charts[c];
                let fr = rho.pullback(&data.f[c].widen(chart.dim(), 0))?;
                let integrand = data.h[c].wedge(&fr)?;
                acc += integrate_on_perturbed_zero_set(chart, &data.cfps[c], eps, &integrand, &data.pou[c], &data.gcs.supports[c].k, quad)?;
            }
            Ok(PushoutValue::Scalar(acc))
        }
        Mode::Grid(points) => {
            if m > 1 {
                return Err(Error::ModeUnsupported(format!("grid pushout to a {m}-dimensional target")));
            }
            let mut out = Vec::with_capacity(points.len());
            for p in points {
                let mut acc = 0.0;
                for c in 0..ks.charts.len() {
                    acc += fibre_integral(data, c, eps, p, quad)?;
                }
                out.push((p.clone(), acc));
            }
            Ok(PushoutValue::Samples(out))
        }
    }
}

/// ∫ over f⁻¹(p) in the perturbed zero set of chart c, fibre oriented fibre-first.
fn fibre_integral(data: &PushoutData, c: usize, eps: f64, p: &[f64], quad: Quad) -> Result<f64> {
    let chart = &data.gcs.ks.charts[c];
    let cfp = &data.cfps[c];
    let f = data.f[c].widen(chart.dim(), 0);
    let m = f.dim_out();
    let fibre_dim = chart.vdim() - m as i64;
    if fibre_dim < 0 {
        return Ok(0.0);
    }
    let sign = chart.orientation() * if (fibre_dim as usize * m) % 2 == 0 { 1.0 } else { -1.0 };
    let region = &data.gcs.supports[c].k;
    let faces = true_faces_of(chart, region);
    let mut acc = 0.0;
    for (w, a) in cfp.weighted_nodes(quad.order) {
        if a == 0.0 {
            continue;
        }
        let w2 = w.clone();
        let f = &f;
        let aug = move |y: &[f64]| {
            let (sv, sj) = (cfp.eval(y, &w2, eps), cfp.jac_y(y, &w2, eps));
            let fv = f.at(y);
            let fj = f.jac_at(y);
            let r = sv.len();
            let n = y.len();
            let mut v = DVector::zeros(r + m);
            let mut j = DMatrix::zeros(r + m, n);
            v.rows_mut(0, r).copy_from(&sv);
            j.view_mut((0, 0), (r, n)).copy_from(&sj);
            for i in 0..m {
                v[r + i] = fv[i] - p[i];
            }
            j.view_mut((r, 0), (m, n)).copy_from(&fj);
            (v, j)
        };
        acc += a * zero_set_integral(&aug, chart.dim(), chart.rank() + m, region, &faces, sign, &data.h[c], &data.pou[c], quad.order)?;
    }
    Ok(acc / chart.group().order() as f64)
}

/// Partition of unity on a good coordinate system: bumps of K_p, earlier charts transported
/// through the retractions of the extension data.
pub fn gcs_partition(gcs: &Gcs) -> Result<Vec<Expr>> {
    let order = gcs.charts_in_order();
    let ks = &gcs.ks;
    let pieces: Vec<PouPiece> = order
        .iter()
        .map(|&c| {
            let chart = &ks.charts[c];
            let k = &gcs.supports[c].k;
            let (lo, hi) = k.bbox();
            let ext = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(f64::INFINITY, f64::min);
            PouPiece { domain: chart.domain().clone(), group: chart.group().clone(), support: k.clone(), margin: 0.25 * ext, full: k.contains_domain(chart.domain(), 1e-12) }
        })
        .collect();
    let mut transports = Vec::new();
    for (pi, &p) in order.iter().enumerate() {
        for ch in ks.changes.iter().filter(|ch| ch.dst == ks.charts[p].label()) {
            let q = ks.chart_index(&ch.src)?;
            let Some(qi) = order.iter().position(|&x| x == q) else { continue };
            if qi >= pi {
                continue;
            }
            let datum = ks.datum(&ch.label).ok_or_else(|| Error::MissingPou(format!("no retraction for {}", ch.label)))?;
            let cutoff = crate::perturbation::chi0_expr(datum, &ks.charts[p]);
            transports.push(Transport { from: pi, to: qi, map: datum.pi.clone(), cutoff });
        }
    }
    let targets: Vec<Vec<(usize, Vec<f64>)>> = ks
        .footprint_samples()
        .into_iter()
        .map(|(c, y, z)| {
            let mut reps = Vec::new();
            for (oi, &o) in order.iter().enumerate() {
                let other = &ks.charts[o];
                let rep = if o == c { Some(y.clone()) } else { other.locate(&z, other.domain()) };
                if let Some(r) = rep.filter(|r| gcs.supports[o].k.contains_closed(r, 1e-9)) {
                    reps.push((oi, r));
                }
            }
            reps
        })
        .filter(|r: &Vec<(usize, Vec<f64>)>| !r.is_empty())
        .collect();
    let chis = partition_of_unity(&pieces, &transports, &targets)?;
    let mut out = vec![Expr::zero(); ks.charts.len()];
    for (i, &c) in order.iter().enumerate() {
        out[c] = chis[i].clone();
    }
    Ok(out)
}

/// Pairing form of the chain-map identity for a function h and a function ρ on M:
/// P(dh, ρ) + P(h, dρ) = σ P_∂(h, ρ) with P(h, ρ) = Σ_p ∫ χ_p h ∧ f*ρ.
pub fn chain_map_check(gcs: &Gcs, cfps: &[Cfp], pou: &[Expr], h: &[Form], f: &[SmoothMap], rho: &Form, eps: f64, quad: Quad, bound: f64) -> Result<Check> {
    if rho.degree != 0 || h.iter().any(|x| x.degree != 0) {
        return Err(Error::ModeUnsupported("chain-map identity is checked for functions".into()));
    }
    let ks = &gcs.ks;
    let mut hg = Vec::with_capacity(h.len());
    let (mut a, mut b) = (0.0, 0.0);
    for c in 0..ks.charts.len() {
        let chart = &ks.charts[c];
        let g = rho.pullback(&f[c].widen(chart.dim(), 0))?;
        let region = &gcs.supports[c].k;
        a += integrate_on_perturbed_zero_set(chart, &cfps[c], eps, &h[c].d()?.wedge(&g)?, &pou[c], region, quad)?;
        b += integrate_on_perturbed_zero_set(chart, &cfps[c], eps, &h[c].wedge(&g.d()?)?, &pou[c], region, quad)?;
        hg.push(h[c].wedge(&g)?);
    }
    let rhs = stokes_point(gcs, cfps, pou, &hg, eps, quad)?.rhs;
    let r = (a + b - rhs).abs();
    Ok(Check::residual("chain_map", r, bound).with_detail(format!("P(dh,rho) {a:.12e}, P(h,drho) {b:.12e}, boundary {rhs:.12e}")))
}

/// One row of a Stokes ladder.
#[derive(Clone, Debug, PartialEq)]
pub struct StokesRow {
    pub eps: f64,
    pub order: usize,
    /// Σ_p ∫ χ_p dh (plus the pairing terms).
    pub lhs: f64,
    /// σ · boundary integral.
    pub rhs: f64,
    pub residual: f64,
}

/// Sign relating the interior integral of dh to the boundary integral with the
/// outward-first boundary orientation: (−1)^{rank E}.
pub fn stokes_sign(rank: usize) -> f64 {
    if rank % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

fn restrict_form(h: &Form, axis: usize, value: f64, n: usize) -> Form {
    if h.degree != 0 {
        return Form::zero(n - 1, h.degree.min(n - 1));
    }
    let c = h.terms.get(&Vec::new()).cloned().unwrap_or(Expr::zero());
    Form::function(n - 1, restrict_expr(&c, axis, value, n))
}

/// Σ_p ∫ χ_p dh over the perturbed zero sets against σ·Σ_∂ ∫ χ h on the normalized boundary,
/// for a function h and M a point.
pub fn stokes_point(gcs: &Gcs, cfps: &[Cfp], pou: &[Expr], h: &[Form], eps: f64, quad: Quad) -> Result<StokesRow> {
    let ks = &gcs.ks;
    let vdim = ks.vdim().ok_or_else(|| Error::Type("charts disagree on the virtual dimension".into()))?;
    let mut lhs = 0.0;
    if vdim == 1 {
        for c in 0..ks.charts.len() {
            let dh = h[c].d()?;
            lhs += integrate_on_perturbed_zero_set(&ks.charts[c], &cfps[c], eps, &dh, &pou[c], &gcs.supports[c].k, quad)?;
        }
    }
    let (gb, bd) = normalized_boundary_gcs(gcs)?;
    let mut bsum = 0.0;
    if vdim == 1 {
        for (i, b) in bd.charts.iter().enumerate() {
            let parent = &ks.charts[b.parent];
            let n = parent.dim();
            let v = parent.domain().face_value(b.face);
            let pc = &cfps[b.parent];
            let s_eps = pc.s_eps.map_comps(|e| restrict_expr(e, b.face.axis, v, n), n - 1, pc.w_dim());
            let bcfp = Cfp { chart: i, s_eps, ..pc.clone() };
            let hb = restrict_form(&h[b.parent], b.face.axis, v, n);
            let chib = restrict_expr(&pou[b.parent], b.face.axis, v, n);
            bsum += integrate_on_perturbed_zero_set(&gb.ks.charts[i], &bcfp, eps, &hb, &chib, &gb.supports[i].k, quad)?;
        }
    }
    let rank = ks.charts.first().map_or(0, |c| c.rank());
    let rhs = stokes_sign(rank) * bsum;
    Ok(StokesRow { eps, order: quad.order, lhs, rhs, residual: (lhs - rhs).abs() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StokesOutcome {
    pub rows: Vec<StokesRow>,
    pub checks: CheckReport,
}

/// Stokes along an ε ladder at quadrature orders q/2 and q; asserts the residual bound at
/// order q and a tenfold gain from q/2 to q.
pub fn stokes_check(gcs: &Gcs, cfps: &[Cfp], pou: &[Expr], h: &[Form], ladder: &[f64], quad: Quad, bound: f64) -> Result<StokesOutcome> {
    let mut rows = Vec::new();
    let mut checks = CheckReport::new();
    for &eps in ladder {
        let coarse = stokes_point(gcs, cfps, pou, h, eps, Quad { order: quad.order / 2 })?;
        let fine = stokes_point(gcs, cfps, pou, h, eps, quad)?;
        checks.push(Check::residual(format!("residual[eps={eps}]"), fine.residual, bound).with_detail(format!("lhs {:.12e}, rhs {:.12e}", fine.lhs, fine.rhs)));
        let detail = format!("order {}: {:e}, order {}: {:e}", coarse.order, coarse.residual, fine.order, fine.residual);
        if coarse.residual < 1e-13 && fine.residual < 1e-13 {
            // Nothing left to resolve: both orders are exact to rounding.
            checks.push(Check::new(format!("order_gain[eps={eps}]"), true, 0.0).with_detail(format!("exact at both orders; {detail}")));
        } else {
            let gain = coarse.residual / fine.residual.max(f64::MIN_POSITIVE);
            checks.push(Check::new(format!("order_gain[eps={eps}]"), gain >= 10.0, gain).with_detail(detail));
        }
        rows.push(coarse);
        rows.push(fine);
    }
    Ok(StokesOutcome { rows, checks })
}

/// Smooth correspondence: a good coordinate system with f_s to M_s and f_t to M_t.
#[derive(Clone, Debug)]
pub struct Correspondence {
    pub gcs: Gcs,
    pub cfps: Vec<Cfp>,
    pub pou: Vec<Expr>,
    pub f_s: Vec<SmoothMap>,
    pub f_t: Vec<SmoothMap>,
    pub dim_s: usize,
    pub dim_t: usize,
}

impl Correspondence {
    /// deg Corr(h) − deg h = dim M_t − vdim.
    pub fn degree_shift(&self) -> i64 {
        self.dim_t as i64 - self.gcs.ks.vdim().unwrap_or(0)
    }
}

/// A form on M_s or M_t (one chart each).
fn pulled_back(h: &Form, f: &[SmoothMap], gcs: &Gcs) -> Result<Vec<Form>> {
    gcs.ks.charts.iter().zip(f).map(|(c, fc)| h.pullback(&fc.widen(c.dim(), 0))).collect()
}

/// Corr(h) = f_t!(f_s* h; 𝔖^ε).
pub fn correspondence_apply(corr: &Correspondence, eps: f64, h: &Form, mode: Mode, quad: Quad) -> Result<PushoutValue> {
    let hs = pulled_back(h, &corr.f_s, &corr.gcs)?;
    let data = PushoutData { gcs: &corr.gcs, cfps: &corr.cfps, pou: &corr.pou, h: &hs, f: &corr.f_t };
    pushout(&data, eps, mode, quad)
}

/// Composite correspondence on the fibre product N₂₁ ×_{M₂} N₃₂ (single-chart spaces).
pub fn compose(c21: &Correspondence, c32: &Correspondence) -> Result<Correspondence> {
    if c21.gcs.ks.charts.len() != 1 || c32.gcs.ks.charts.len() != 1 {
        return Err(Error::ModeUnsupported("composition of multi-chart correspondences".into()));
    }
    let (a, b) = (&c21.gcs.ks.charts[0], &c32.gcs.ks.charts[0]);
    let (chart, _, kind) = fiber_product(a, &c21.f_t[0], b, &c32.f_s[0])?;
    let (f_s, f_t) = match kind {
        FiberKind::KeepFirst => {
            let ft = c32.f_t[0].widen(b.dim(), 0);
            let inner = c21.f_t[0].widen(a.dim(), 0);
            (c21.f_s[0].widen(a.dim(), 0), ft.map_comps(|e| e.compose_y(inner.comps()), a.dim(), 0))
        }
        FiberKind::KeepSecond => {
            let fs = c21.f_s[0].widen(a.dim(), 0);
            let inner = c32.f_s[0].widen(b.dim(), 0);
            (fs.map_comps(|e| e.compose_y(inner.comps()), b.dim(), 0), c32.f_t[0].widen(b.dim(), 0))
        }
        FiberKind::Stabilized => {
            let n = a.dim() + b.dim();
            (c21.f_s[0].widen(n, 0), crate::kuranishi::shift_map(&c32.f_t[0].widen(b.dim(), 0), a.dim(), n))
        }
    };
    let (cfp, pou) = match kind {
        FiberKind::KeepFirst => (c21.cfps[0].clone(), c21.pou[0].clone()),
        FiberKind::KeepSecond => (c32.cfps[0].clone(), c32.pou[0].clone()),
        FiberKind::Stabilized => {
            let (_, cfp, _) = crate::perturbation::product_fiberproduct_cfp(&c21.cfps[0], a, &c32.cfps[0], b, Some((&c21.f_t[0], &c32.f_s[0])))?;
            (cfp, Expr::one())
        }
    };
    let k = chart.domain().clone();
    let ks = crate::kuranishi::KuranishiStructure { charts: vec![chart.clone()], ..Default::default() };
    let gcs = Gcs::new(
        ks,
        vec![crate::kuranishi::Piece { label: chart.label().into(), sheets: vec![0] }],
        &[],
        vec![crate::kuranishi::Support { k, k_prime: None }],
    )?;
    Ok(Correspondence { gcs, cfps: vec![cfp], pou: vec![pou], f_s: vec![f_s], f_t: vec![f_t], dim_s: c21.dim_s, dim_t: c32.dim_t })
}

/// ∫_{M₃} Corr₃₂(Corr₂₁(h)) ∧ ρ with the inner pushout sampled at quadrature nodes of M₂.
fn nested_pairing(c21: &Correspondence, c32: &Correspondence, eps: f64, h: &Form, rho: &Form, m2: &Domain, quad: Quad) -> Result<f64> {
    if c21.dim_t != 1 || c32.gcs.ks.charts.len() != 1 {
        return Err(Error::ModeUnsupported("nested pairing needs a 1-dimensional middle space and a one-chart second factor".into()));
    }
    let nodes = m2.quadrature(quad.order, 1e9);
    let pts: Vec<Vec<f64>> = nodes.iter().map(|(p, _)| p.clone()).collect();
    let PushoutValue::Samples(g) = correspondence_apply(c21, eps, h, Mode::Grid(&pts), quad)? else {
        return Err(Error::Type("grid pushout returned a scalar".into()));
    };
    // Corr₃₂ of the sampled 0-form g, paired with ρ: the second space is M₂ itself with f_s = id.
    let b = &c32.gcs.ks.charts[0];
    if b.rank() != 0 || b.dim() != 1 || c32.f_s[0].comps()[0] != Expr::y(0) {
        return Err(Error::ModeUnsupported("nested pairing expects the identity correspondence second".into()));
    }
    let ft = c32.f_t[0].widen(1, 0);
    let fr = rho.pullback(&ft)?;
    let coef = fr.terms.get(&vec![0]).cloned().unwrap_or(Expr::zero());
    let mut acc = 0.0;
    for ((p, w), (_, gv)) in nodes.iter().zip(&g) {
        acc += w * gv * coef.eval(&Env::y(p)) * c32.pou[0].eval(&Env::y(p));
    }
    Ok(acc * b.orientation())
}

/// One integrand pair of the composition check.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositionRow {
    pub label: String,
    pub nested: f64,
    pub composite: f64,
    pub oracle: Option<f64>,
    pub gap: f64,
}

/// Corr₃₂∘Corr₂₁ against Corr₃₂∘₂₁ paired with test forms on M₃.
pub fn composition_check(c21: &Correspondence, c32: &Correspondence, eps: f64, pairs: &[(String, Form, Form, Option<f64>)], m2: &Domain, quad: Quad, bound: f64) -> Result<(Vec<CompositionRow>, CheckReport)> {
    let c31 = compose(c21, c32)?;
    let mut rows = Vec::new();
    let mut checks = CheckReport::new();
    for (label, h, rho, oracle) in pairs {
        let nested = nested_pairing(c21, c32, eps, h, rho, m2, quad)?;
        let composite = correspondence_apply(&c31, eps, h, Mode::Pair(rho), quad)?.scalar().unwrap_or(f64::NAN);
        let gap = (nested - composite).abs();
        let oracle_gap = oracle.map_or(0.0, |o| (o - composite).abs().max((o - nested).abs()));
        checks.push(Check::residual(format!("composition[{label}]"), gap, bound).with_detail(format!("{nested:.15} vs {composite:.15}")));
        if let Some(o) = oracle {
            checks.push(Check::residual(format!("oracle[{label}]"), oracle_gap, bound).with_detail(format!("expected {o:.15}")));
        }
        rows.push(CompositionRow { label: label.clone(), nested, composite, oracle: *oracle, gap });
    }
    Ok((rows, checks))
}

/// Fubini kernel on a product box N = F × M with f the projection to the last factor:
/// ∫_N h₁ ∧ f*h₂ against ∫_M f!(h₁) ∧ h₂. `h1` is the coefficient of dy_1 ∧ … on the fibre
/// directions, `h2` the coefficient of the top form on M.
pub fn fubini_kernel(fibre: &Domain, base: &Domain, h1: &Expr, h2: &Expr, quad: Quad) -> Result<(f64, f64)> {
    let (k, m) = (fibre.dim(), base.dim());
    let n = k + m;
    let joined = fibre.product(base).ok_or_else(|| Error::ModeUnsupported("Fubini kernel on non-box factors".into()))?;
    let h2_n = h2.compose_y(&(k..n).map(Expr::y).collect::<Vec<_>>());
    let mut lhs = 0.0;
    for (y, w) in joined.quadrature(quad.order, 1e9) {
        let env = Env::y(&y);
        lhs += w * h1.eval(&env) * h2_n.eval(&env);
    }
    let mut rhs = 0.0;
    for (x, wx) in base.quadrature(quad.order, 1e9) {
        let mut inner = 0.0;
        for (u, wu) in fibre.quadrature(quad.order, 1e9) {
            let mut y = u.clone();
            y.extend(&x);
            inner += wu * h1.eval(&Env::y(&y));
        }
        rhs += wx * inner * h2.eval(&Env::y(&x));
    }
    Ok((lhs, rhs))
}

/// Invariance between two presentations of the same space.
#[derive(Clone, Debug, PartialEq)]
pub struct InvarianceOutcome {
    pub counts: (num_rational::Rational64, num_rational::Rational64),
    pub pushouts: (f64, f64),
    pub checks: CheckReport,
}

/// Counts equal exactly, pushouts to a point agree within `bound`.
pub fn invariance_checks(
    counts: (num_rational::Rational64, num_rational::Rational64),
    a: &PushoutData,
    b: &PushoutData,
    eps: f64,
    quad: Quad,
    bound: f64,
) -> Result<InvarianceOutcome> {
    let pa = pushout(a, eps, Mode::Point, quad)?.scalar().unwrap_or(f64::NAN);
    let pb = pushout(b, eps, Mode::Point, quad)?.scalar().unwrap_or(f64::NAN);
    let mut checks = CheckReport::new();
    checks.push(Check::new("count_equal", counts.0 == counts.1, 0.0).with_detail(format!("{} vs {}", counts.0, counts.1)));
    checks.push(Check::residual("pushout_gap", (pa - pb).abs(), bound).with_detail(format!("{pa:.15} vs {pb:.15}")));
    Ok(InvarianceOutcome { counts, pushouts: (pa, pb), checks })
}
