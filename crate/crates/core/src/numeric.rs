//! Quadrature, Newton iterations and small linear-algebra helpers.

use crate::tol;
use nalgebra::{DMatrix, DVector};
use std::sync::OnceLock;

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    if n == 1 {
        return (vec![0.0], vec![2.0]);
    }
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Cached rule of the given order.
pub fn gl_rule(n: usize) -> &'static (Vec<f64>, Vec<f64>) {
    static CACHE: OnceLock<Vec<(Vec<f64>, Vec<f64>)>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| (1..=64).map(gauss_legendre).collect());
    &cache[n.clamp(1, 64) - 1]
}

/// Nodes and weights on [a, b].
pub fn gl_interval(a: f64, b: f64, n: usize) -> Vec<(f64, f64)> {
    let (x, w) = gl_rule(n);
    let (m, h) = ((a + b) / 2.0, (b - a) / 2.0);
    x.iter().zip(w).map(|(xi, wi)| (m + h * xi, h * wi)).collect()
}

/// Composite rule with panels no wider than `max_panel`.
pub fn gl_composite(a: f64, b: f64, n: usize, max_panel: f64) -> Vec<(f64, f64)> {
    let panels = (((b - a).abs() / max_panel).ceil() as usize).max(1);
    let h = (b - a) / panels as f64;
    (0..panels)
        .flat_map(|k| gl_interval(a + k as f64 * h, a + (k + 1) as f64 * h, n))
        .collect()
}

/// Tensor product of 1-d rules; an empty list gives the single empty node.
pub fn tensor_nodes(rules: &[Vec<(f64, f64)>]) -> Vec<(Vec<f64>, f64)> {
    let mut out = vec![(Vec::new(), 1.0)];
    for rule in rules {
        let mut next = Vec::with_capacity(out.len() * rule.len());
        for (p, w) in &out {
            for (x, v) in rule {
                let mut q = p.clone();
                q.push(*x);
                next.push((q, w * v));
            }
        }
        out = next;
    }
    out
}

pub fn sigma_min(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return f64::INFINITY;
    }
    let k = m.nrows().min(m.ncols());
    let sv = m.clone().svd(false, false).singular_values;
    sv.iter().take(k).cloned().fold(f64::INFINITY, f64::min)
}

pub fn sigma_max(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.iter().cloned().fold(0.0, f64::max)
}

pub fn det(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    m.clone().lu().determinant()
}

/// Minimum-norm solution of `J dx = r` for full-row-rank `J`.
pub fn min_norm_solve(j: &DMatrix<f64>, r: &DVector<f64>) -> Option<DVector<f64>> {
    if j.nrows() == j.ncols() {
        return j.clone().lu().solve(r);
    }
    let jjt = j * j.transpose();
    let y = jjt.cholesky()?.solve(r);
    Some(j.transpose() * y)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Newton with minimum-norm steps for `F(x) = 0`, `F: R^n -> R^r`, `r <= n`.
/// `eval` returns the residual and Jacobian. Returns the converged point.
pub fn newton(
    eval: &dyn Fn(&[f64]) -> (DVector<f64>, DMatrix<f64>),
    x0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Option<Vec<f64>> {
    let mut x = DVector::from_column_slice(x0);
    for _ in 0..max_iter {
        let (f, j) = eval(x.as_slice());
        if !f.iter().all(|v| v.is_finite()) {
            return None;
        }
        let fnorm = f.norm();
        if fnorm <= tol {
            return Some(x.as_slice().to_vec());
        }
        let dx = min_norm_solve(&j, &f)?;
        if !dx.iter().all(|v| v.is_finite()) {
            return None;
        }
        x -= &dx;
        if dx.norm() > 1e3 {
            return None;
        }
        if dx.norm() <= 1e-15 * (1.0 + x.norm()) {
            let (f, _) = eval(x.as_slice());
            return (f.norm() <= tol.max(1e-11)).then(|| x.as_slice().to_vec());
        }
    }
    let (f, _) = eval(x.as_slice());
    (f.norm() <= tol.max(1e-11)).then(|| x.as_slice().to_vec())
}

/// Newton with the crate defaults.
pub fn newton_default(eval: &dyn Fn(&[f64]) -> (DVector<f64>, DMatrix<f64>), x0: &[f64]) -> Option<Vec<f64>> {
    newton(eval, x0, tol::NEWTON_TOL, tol::NEWTON_MAX_ITER)
}

/// Regular grid of `k` points per axis strictly inside the box.
pub fn interior_grid(lo: &[f64], hi: &[f64], k: usize) -> Vec<Vec<f64>> {
    let rules: Vec<Vec<(f64, f64)>> = lo
        .iter()
        .zip(hi)
        .map(|(a, b)| (0..k).map(|i| (a + (b - a) * (i as f64 + 0.5) / k as f64, 1.0)).collect())
        .collect();
    tensor_nodes(&rules).into_iter().map(|(p, _)| p).collect()
}

/// Grid including the endpoints of every axis.
pub fn closed_grid(lo: &[f64], hi: &[f64], k: usize) -> Vec<Vec<f64>> {
    let k = k.max(2);
    let rules: Vec<Vec<(f64, f64)>> = lo
        .iter()
        .zip(hi)
        .map(|(a, b)| (0..k).map(|i| (a + (b - a) * i as f64 / (k - 1) as f64, 1.0)).collect())
        .collect();
    tensor_nodes(&rules).into_iter().map(|(p, _)| p).collect()
}

/// Total order on float slices used for deterministic sorting.
pub fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}
