//! Zero sets of smooth maps: isolated points by grid-seeded Newton, samples of
//! higher-dimensional zero sets by minimum-norm projection, and traced curves.

use crate::error::{Error, Result};
use crate::numeric::{self, dist, lex_cmp, min_norm_solve, newton};
use crate::orbifold::{Domain, Face};
use crate::tol;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Residual and Jacobian of a map R^n → R^r.
pub type Field<'a> = dyn Fn(&[f64]) -> (DVector<f64>, DMatrix<f64>) + Sync + 'a;

/// Sorted, de-duplicated points.
pub fn dedup_points(mut pts: Vec<Vec<f64>>, radius: f64) -> Vec<Vec<f64>> {
    pts.sort_by(|a, b| lex_cmp(a, b));
    let mut out: Vec<Vec<f64>> = Vec::new();
    for p in pts {
        if !out.iter().any(|q| dist(q, &p) <= radius) {
            out.push(p);
        }
    }
    out
}

fn seeds(region: &Domain, k: usize) -> Vec<Vec<f64>> {
    let (lo, hi) = region.bbox();
    numeric::closed_grid(&lo, &hi, k)
}

/// Isolated zeros of a square system inside the closed region.
pub fn grid_zeros(f: &Field, region: &Domain, k: usize) -> Vec<Vec<f64>> {
    let found: Vec<Option<Vec<f64>>> = seeds(region, k)
        .par_iter()
        .map(|s| newton(f, s, tol::NEWTON_TOL, tol::NEWTON_MAX_ITER))
        .collect();
    let pts = found
        .into_iter()
        .flatten()
        .filter(|p| region.contains_closed(p, 1e-12))
        .collect();
    dedup_points(pts, tol::DEDUP)
}

/// Samples of an underdetermined zero set obtained by projecting grid seeds.
pub fn project_samples(f: &Field, region: &Domain, k: usize) -> Vec<Vec<f64>> {
    let found: Vec<Option<Vec<f64>>> = seeds(region, k)
        .par_iter()
        .map(|s| newton(f, s, 1e-11, tol::NEWTON_MAX_ITER))
        .collect();
    let pts = found.into_iter().flatten().filter(|p| region.contains_closed(p, 1e-12)).collect();
    dedup_points(pts, 1e-9)
}

/// How a traced curve ends.
#[derive(Clone, Debug, PartialEq)]
pub enum CurveEnd {
    /// Hit a face of the region box; `true_boundary` marks faces of the chart itself.
    Face { face: Face, true_boundary: bool },
    /// Hit the sphere bounding a ball region.
    Sphere,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    /// Nodes in the direction of the orientation.
    pub nodes: Vec<Vec<f64>>,
    pub closed: bool,
    pub start: Option<CurveEnd>,
    pub end: Option<CurveEnd>,
}

impl Curve {
    pub fn length(&self) -> f64 {
        let mut l: f64 = self.nodes.windows(2).map(|w| dist(&w[0], &w[1])).sum();
        if self.closed && self.nodes.len() > 1 {
            l += dist(&self.nodes[0], self.nodes.last().unwrap());
        }
        l
    }
}

/// Unit tangent of the 1-dimensional zero set: kernel of the (n−1)×n Jacobian.
pub fn tangent(j: &DMatrix<f64>) -> Option<DVector<f64>> {
    let n = j.ncols();
    if j.nrows() + 1 != n {
        return None;
    }
    // Cofactor expansion gives the kernel direction with a sign fixed by det[J; τᵀ] > 0.
    let mut t = DVector::zeros(n);
    for i in 0..n {
        let mut m = DMatrix::zeros(n, n);
        m.view_mut((0, 0), (n - 1, n)).copy_from(j);
        m[(n - 1, i)] = 1.0;
        t[i] = numeric::det(&m);
    }
    let nrm = t.norm();
    (nrm > 1e-14).then(|| t / nrm)
}

/// Options for curve tracing.
pub struct TraceOptions<'a> {
    pub region: &'a Domain,
    /// Faces of the region that are true boundary faces of the chart.
    pub true_faces: &'a [Face],
    /// +1 or −1: orientation multiplier applied to the cofactor tangent.
    pub orientation: f64,
    pub h: f64,
}

fn region_exit(region: &Domain, x: &[f64]) -> bool {
    !region.contains_closed(x, 1e-13)
}

/// Solve `f = 0` together with the constraint that the point lies on the face/sphere crossed
/// between `inside` and `outside`.
fn land_on_boundary(f: &Field, region: &Domain, inside: &[f64], outside: &[f64]) -> Option<(Vec<f64>, CurveEnd, Vec<usize>)> {
    match region {
        Domain::Box(b) => {
            // The first face crossed along the segment; `inside` may sit on a face already.
            let mut best: Option<(f64, Face)> = None;
            for i in 0..b.lo.len() {
                for (hi, v) in [(false, b.lo[i]), (true, b.hi[i])] {
                    let depth = |x: &[f64]| if hi { v - x[i] } else { x[i] - v };
                    let (d_in, d_out) = (depth(inside), depth(outside));
                    if d_out >= 0.0 || d_in < -1e-9 {
                        continue;
                    }
                    let d_in = d_in.max(0.0);
                    let s = d_in / (d_in - d_out);
                    if best.as_ref().is_none_or(|(bs, _)| s < *bs) {
                        best = Some((s, Face { axis: i, hi }));
                    }
                }
            }
            let (_, face) = best?;
            let v = if face.hi { b.hi[face.axis] } else { b.lo[face.axis] };
            let g = |x: &[f64]| {
                let (fv, fj) = f(x);
                let n = x.len();
                let mut r = DVector::zeros(fv.len() + 1);
                r.rows_mut(0, fv.len()).copy_from(&fv);
                r[fv.len()] = x[face.axis] - v;
                let mut j = DMatrix::zeros(fv.len() + 1, n);
                j.view_mut((0, 0), (fv.len(), n)).copy_from(&fj);
                j[(fv.len(), face.axis)] = 1.0;
                (r, j)
            };
            let mut start = inside.to_vec();
            start[face.axis] = v;
            let p = newton(&g, &start, 1e-13, 60)?;
            Some((p, CurveEnd::Face { face, true_boundary: false }, vec![face.axis]))
        }
        Domain::Ball { center, radius } => {
            let g = |x: &[f64]| {
                let (fv, fj) = f(x);
                let n = x.len();
                let mut r = DVector::zeros(fv.len() + 1);
                r.rows_mut(0, fv.len()).copy_from(&fv);
                r[fv.len()] = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>() - radius * radius;
                let mut j = DMatrix::zeros(fv.len() + 1, n);
                j.view_mut((0, 0), (fv.len(), n)).copy_from(&fj);
                for i in 0..n {
                    j[(fv.len(), i)] = 2.0 * (x[i] - center[i]);
                }
                (r, j)
            };
            let p = newton(&g, inside, 1e-13, 60)?;
            Some((p, CurveEnd::Sphere, vec![]))
        }
    }
}

/// One pseudo-arclength step from `x` along `dir`.
fn palc_step(f: &Field, x: &[f64], dir: &DVector<f64>, h: f64) -> Option<Vec<f64>> {
    let n = x.len();
    let pred: Vec<f64> = (0..n).map(|i| x[i] + h * dir[i]).collect();
    let g = |z: &[f64]| {
        let (fv, fj) = f(z);
        let r = fv.len();
        let mut res = DVector::zeros(r + 1);
        res.rows_mut(0, r).copy_from(&fv);
        res[r] = (0..n).map(|i| dir[i] * (z[i] - pred[i])).sum();
        let mut j = DMatrix::zeros(r + 1, n);
        j.view_mut((0, 0), (r, n)).copy_from(&fj);
        for i in 0..n {
            j[(r, i)] = dir[i];
        }
        (res, j)
    };
    let p = newton(&g, &pred, tol::CORRECTOR_TOL, 20)?;
    (dist(&p, x) < 2.0 * h).then_some(p)
}

fn oriented_tangent(f: &Field, x: &[f64], orientation: f64) -> Option<DVector<f64>> {
    let (_, j) = f(x);
    tangent(&j).map(|t| t * orientation)
}

/// Trace from `seed` in direction `sign` until leaving the region or closing up.
fn trace_half(f: &Field, opts: &TraceOptions, seed: &[f64], sign: f64) -> Result<(Vec<Vec<f64>>, Option<CurveEnd>, bool)> {
    let mut nodes = vec![seed.to_vec()];
    let mut x = seed.to_vec();
    let mut prev_dir = oriented_tangent(f, seed, opts.orientation * sign).ok_or_else(|| Error::TraceBreak(seed.to_vec()))?;
    let max_steps = 200_000;
    let mut travelled = 0.0;
    for _ in 0..max_steps {
        let mut dir = oriented_tangent(f, &x, opts.orientation * sign).ok_or_else(|| Error::TraceBreak(x.clone()))?;
        if dir.dot(&prev_dir) < 0.0 {
            // Orientation flips only at singular points; keep continuity.
            dir = -dir;
        }
        let mut h = opts.h;
        let next = loop {
            if let Some(p) = palc_step(f, &x, &dir, h) {
                break p;
            }
            h /= 2.0;
            if h < 1e-7 {
                return Err(Error::TraceBreak(x.clone()));
            }
        };
        if region_exit(opts.region, &next) {
            let (p, mut end, _) = land_on_boundary(f, opts.region, &x, &next).ok_or_else(|| Error::TraceBreak(x.clone()))?;
            if let CurveEnd::Face { face, true_boundary } = &mut end {
                *true_boundary = opts.true_faces.contains(face);
            }
            nodes.push(p);
            return Ok((nodes, Some(end), false));
        }
        travelled += dist(&x, &next);
        if travelled > 4.0 * opts.h && dist(&next, seed) < 0.75 * opts.h {
            return Ok((nodes, None, true));
        }
        prev_dir = dir;
        x = next;
        nodes.push(x.clone());
    }
    Err(Error::TraceBreak(x))
}

/// Trace every component of the 1-dimensional zero set met by the seeds.
pub fn trace_curves(f: &Field, opts: &TraceOptions, seed_points: &[Vec<f64>]) -> Result<Vec<Curve>> {
    let mut curves: Vec<Curve> = Vec::new();
    for s in seed_points {
        let on_known = curves.iter().any(|c| c.nodes.iter().any(|n| dist(n, s) < 2.0 * opts.h));
        if on_known {
            continue;
        }
        // Seeds exactly on the region boundary are nudged inside by tracing from them.
        let (fwd, end, closed) = trace_half(f, opts, s, 1.0)?;
        let curve = if closed {
            Curve { nodes: fwd, closed: true, start: None, end: None }
        } else {
            let (bwd, start, _) = trace_half(f, opts, s, -1.0)?;
            let mut nodes: Vec<Vec<f64>> = bwd.into_iter().rev().collect();
            nodes.pop();
            nodes.extend(fwd);
            Curve { nodes, closed: false, start, end }
        };
        curves.push(curve);
    }
    curves.sort_by(|a, b| lex_cmp(&a.nodes[0], &b.nodes[0]));
    Ok(curves)
}

/// Seeds for tracing: projections of grid points onto the zero set.
pub fn curve_seeds(f: &Field, region: &Domain, k: usize) -> Vec<Vec<f64>> {
    project_samples(f, region, k)
}

/// Minimum-norm projection of one point onto the zero set.
pub fn project(f: &Field, x: &[f64]) -> Option<Vec<f64>> {
    newton(f, x, 1e-12, 50)
}

/// Solve `J dx = r` in the least-squares sense (Gauss–Newton step).
fn gn_step(j: &DMatrix<f64>, r: &DVector<f64>) -> Option<DVector<f64>> {
    if j.nrows() <= j.ncols() {
        return min_norm_solve(j, r);
    }
    let jt = j.transpose();
    (&jt * j).cholesky().map(|c| c.solve(&(&jt * r)))
}

/// Gauss–Newton for overdetermined systems; returns the point if the residual vanishes.
pub fn gauss_newton(f: &Field, x0: &[f64], tol: f64) -> Option<Vec<f64>> {
    let mut x = DVector::from_column_slice(x0);
    for _ in 0..60 {
        let (r, j) = f(x.as_slice());
        if !r.iter().all(|v| v.is_finite()) {
            return None;
        }
        if r.norm() <= tol {
            return Some(x.as_slice().to_vec());
        }
        let dx = gn_step(&j, &r)?;
        x -= &dx;
        if dx.norm() < 1e-15 {
            break;
        }
    }
    let (r, _) = f(x.as_slice());
    (r.norm() <= tol).then(|| x.as_slice().to_vec())
}
