//! Effective orbifolds as finite atlases of finite-group quotients of boxes and balls.

use crate::check::{Check, CheckReport, Status};
use crate::error::{Error, Result};
use crate::expr::{Env, Expr, Var, VarSpace};
use crate::map::SmoothMap;
use crate::numeric::{self, dist, gl_composite, tensor_nodes};
use crate::tol;
use nalgebra::DMatrix;
use std::collections::BTreeMap;
use std::fmt;

/// A face `y[axis] = lo` (hi = false) or `y[axis] = hi`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Face {
    pub axis: usize,
    pub hi: bool,
}

impl Face {
    /// Sign of the induced orientation on the face, outward normal first.
    pub fn orientation_sign(&self) -> i8 {
        let side = if self.hi { 1 } else { -1 };
        if self.axis % 2 == 0 {
            side
        } else {
            -side
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// `closed_lo[i]` marks `y_i = lo_i` as a true boundary face.
    pub closed_lo: Vec<bool>,
    pub closed_hi: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Domain {
    Box(BoxDomain),
    /// Open Euclidean ball.
    Ball { center: Vec<f64>, radius: f64 },
}

const EDGE: f64 = 1e-12;

impl Domain {
    pub fn open_box(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        let n = lo.len();
        Domain::Box(BoxDomain { lo, hi, closed_lo: vec![false; n], closed_hi: vec![false; n] })
    }

    pub fn with_faces(lo: Vec<f64>, hi: Vec<f64>, closed_lo: Vec<bool>, closed_hi: Vec<bool>) -> Self {
        Domain::Box(BoxDomain { lo, hi, closed_lo, closed_hi })
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Self {
        Domain::Ball { center, radius }
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Box(b) => b.lo.len(),
            Domain::Ball { center, .. } => center.len(),
        }
    }

    pub fn bbox(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Domain::Box(b) => (b.lo.clone(), b.hi.clone()),
            Domain::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
        }
    }

    /// Membership respecting the corner mask: closed faces are included, open ones not.
    pub fn contains(&self, y: &[f64]) -> bool {
        if y.len() != self.dim() {
            return false;
        }
        match self {
            Domain::Box(b) => (0..y.len()).all(|i| {
                let above = if b.closed_lo[i] { y[i] >= b.lo[i] - EDGE } else { y[i] > b.lo[i] };
                let below = if b.closed_hi[i] { y[i] <= b.hi[i] + EDGE } else { y[i] < b.hi[i] };
                above && below
            }),
            Domain::Ball { center, radius } => dist(y, center) < *radius,
        }
    }

    /// Membership in the closure enlarged by `tol`.
    pub fn contains_closed(&self, y: &[f64], tol: f64) -> bool {
        if y.len() != self.dim() {
            return false;
        }
        match self {
            Domain::Box(b) => (0..y.len()).all(|i| y[i] >= b.lo[i] - tol && y[i] <= b.hi[i] + tol),
            Domain::Ball { center, radius } => dist(y, center) <= radius + tol,
        }
    }

    /// Distance from `y` (assumed inside) to the open part of the boundary.
    pub fn margin_to_open_boundary(&self, y: &[f64]) -> f64 {
        match self {
            Domain::Box(b) => (0..y.len())
                .flat_map(|i| {
                    let lo = if b.closed_lo[i] { f64::INFINITY } else { y[i] - b.lo[i] };
                    let hi = if b.closed_hi[i] { f64::INFINITY } else { b.hi[i] - y[i] };
                    [lo, hi]
                })
                .fold(f64::INFINITY, f64::min),
            Domain::Ball { center, radius } => radius - dist(y, center),
        }
    }

    pub fn faces(&self) -> Vec<Face> {
        match self {
            Domain::Box(b) => {
                let mut out = Vec::new();
                for i in 0..b.lo.len() {
                    if b.closed_lo[i] {
                        out.push(Face { axis: i, hi: false });
                    }
                    if b.closed_hi[i] {
                        out.push(Face { axis: i, hi: true });
                    }
                }
                out
            }
            Domain::Ball { .. } => Vec::new(),
        }
    }

    pub fn face_value(&self, f: Face) -> f64 {
        match self {
            Domain::Box(b) => {
                if f.hi {
                    b.hi[f.axis]
                } else {
                    b.lo[f.axis]
                }
            }
            Domain::Ball { .. } => f64::NAN,
        }
    }

    /// True boundary faces containing `y`.
    pub fn faces_at(&self, y: &[f64], tol: f64) -> Vec<Face> {
        self.faces().into_iter().filter(|f| (y[f.axis] - self.face_value(*f)).abs() <= tol).collect()
    }

    /// Drop coordinate `axis`, keeping the other faces.
    pub fn face_domain(&self, f: Face) -> Domain {
        match self {
            Domain::Box(b) => {
                let keep = |v: &Vec<f64>| v.iter().enumerate().filter(|(i, _)| *i != f.axis).map(|(_, x)| *x).collect();
                let keepb = |v: &Vec<bool>| v.iter().enumerate().filter(|(i, _)| *i != f.axis).map(|(_, x)| *x).collect();
                Domain::Box(BoxDomain {
                    lo: keep(&b.lo),
                    hi: keep(&b.hi),
                    closed_lo: keepb(&b.closed_lo),
                    closed_hi: keepb(&b.closed_hi),
                })
            }
            Domain::Ball { .. } => self.clone(),
        }
    }

    /// Shrink open sides by `m`; closed sides are kept.
    pub fn shrink(&self, m: f64) -> Domain {
        match self {
            Domain::Box(b) => Domain::Box(BoxDomain {
                lo: (0..b.lo.len()).map(|i| if b.closed_lo[i] { b.lo[i] } else { b.lo[i] + m }).collect(),
                hi: (0..b.hi.len()).map(|i| if b.closed_hi[i] { b.hi[i] } else { b.hi[i] - m }).collect(),
                closed_lo: b.closed_lo.clone(),
                closed_hi: b.closed_hi.clone(),
            }),
            Domain::Ball { center, radius } => Domain::Ball { center: center.clone(), radius: radius - m },
        }
    }

    /// Sample points inside the domain: a regular grid of `k` per axis, filtered.
    pub fn samples(&self, k: usize) -> Vec<Vec<f64>> {
        let (lo, hi) = self.bbox();
        numeric::interior_grid(&lo, &hi, k).into_iter().filter(|p| self.contains(p)).collect()
    }

    /// Samples on a true boundary face.
    pub fn face_samples(&self, f: Face, k: usize) -> Vec<Vec<f64>> {
        let (lo, hi) = self.bbox();
        let v = self.face_value(f);
        let mut lo2 = lo.clone();
        let mut hi2 = hi.clone();
        lo2.remove(f.axis);
        hi2.remove(f.axis);
        numeric::interior_grid(&lo2, &hi2, k)
            .into_iter()
            .map(|mut p| {
                p.insert(f.axis, v);
                p
            })
            .filter(|p| self.contains(p))
            .collect()
    }

    /// Quadrature nodes over the domain: composite Gauss–Legendre on boxes,
    /// polar/spherical product rules on balls.
    pub fn quadrature(&self, q: usize, panel: f64) -> Vec<(Vec<f64>, f64)> {
        match self {
            Domain::Box(b) => {
                let rules: Vec<_> = b.lo.iter().zip(&b.hi).map(|(a, c)| gl_composite(*a, *c, q, panel)).collect();
                tensor_nodes(&rules)
            }
            Domain::Ball { center, radius } => ball_quadrature(center, *radius, q, panel),
        }
    }

    /// Closure of `other` lies in the closure of `self`.
    pub fn contains_domain(&self, other: &Domain, tol: f64) -> bool {
        match (self, other) {
            (Domain::Ball { center, radius }, Domain::Ball { center: c2, radius: r2 }) => dist(center, c2) + r2 <= radius + tol,
            (Domain::Ball { .. }, Domain::Box(b)) => {
                let n = b.lo.len();
                (0..1usize << n).all(|m| {
                    let p: Vec<f64> = (0..n).map(|i| if m >> i & 1 == 1 { b.hi[i] } else { b.lo[i] }).collect();
                    self.contains_closed(&p, tol)
                })
            }
            (Domain::Box(_), _) => {
                let (lo, hi) = other.bbox();
                self.contains_closed(&lo, tol) && self.contains_closed(&hi, tol)
            }
        }
    }

    pub fn to_box(&self) -> Option<&BoxDomain> {
        match self {
            Domain::Box(b) => Some(b),
            _ => None,
        }
    }

    /// Intersection of two boxes; a side is closed only if the binding side is closed.
    /// Balls are intersected with boxes by returning the ball when it fits inside.
    pub fn intersect(&self, other: &Domain) -> Option<Domain> {
        match (self, other) {
            (Domain::Box(a), Domain::Box(b)) => {
                let n = a.lo.len();
                let mut out = BoxDomain { lo: vec![0.0; n], hi: vec![0.0; n], closed_lo: vec![false; n], closed_hi: vec![false; n] };
                for i in 0..n {
                    let (lo, clo) = if a.lo[i] > b.lo[i] {
                        (a.lo[i], a.closed_lo[i])
                    } else if b.lo[i] > a.lo[i] {
                        (b.lo[i], b.closed_lo[i])
                    } else {
                        (a.lo[i], a.closed_lo[i] && b.closed_lo[i])
                    };
                    let (hi, chi) = if a.hi[i] < b.hi[i] {
                        (a.hi[i], a.closed_hi[i])
                    } else if b.hi[i] < a.hi[i] {
                        (b.hi[i], b.closed_hi[i])
                    } else {
                        (a.hi[i], a.closed_hi[i] && b.closed_hi[i])
                    };
                    if hi <= lo {
                        return None;
                    }
                    out.lo[i] = lo;
                    out.hi[i] = hi;
                    out.closed_lo[i] = clo;
                    out.closed_hi[i] = chi;
                }
                Some(Domain::Box(out))
            }
            (ball @ Domain::Ball { .. }, other) | (other, ball @ Domain::Ball { .. }) => {
                let (lo, hi) = ball.bbox();
                let fits = other.contains_closed(&lo, 0.0) && other.contains_closed(&hi, 0.0);
                if fits {
                    Some(ball.clone())
                } else if let (Domain::Ball { center: c1, radius: r1 }, Domain::Ball { center: c2, radius: r2 }) = (ball, other) {
                    (dist(c1, c2) + r1 <= *r2).then(|| ball.clone()).or_else(|| (dist(c1, c2) + r2 <= *r1).then(|| other.clone()))
                } else {
                    None
                }
            }
        }
    }

    /// Cartesian product of two boxes.
    pub fn product(&self, other: &Domain) -> Option<Domain> {
        match (self, other) {
            (Domain::Box(a), Domain::Box(b)) => {
                let cat = |x: &Vec<f64>, y: &Vec<f64>| x.iter().chain(y).copied().collect::<Vec<_>>();
                let catb = |x: &Vec<bool>, y: &Vec<bool>| x.iter().chain(y).copied().collect::<Vec<_>>();
                Some(Domain::Box(BoxDomain {
                    lo: cat(&a.lo, &b.lo),
                    hi: cat(&a.hi, &b.hi),
                    closed_lo: catb(&a.closed_lo, &b.closed_lo),
                    closed_hi: catb(&a.closed_hi, &b.closed_hi),
                }))
            }
            _ => None,
        }
    }

    /// Points on the open part of the boundary (the frontier not belonging to the domain).
    pub fn open_boundary_samples(&self, k: usize) -> Vec<Vec<f64>> {
        match self {
            Domain::Box(b) => {
                let n = b.lo.len();
                let mut out = Vec::new();
                for axis in 0..n {
                    for (hi, closed) in [(false, b.closed_lo[axis]), (true, b.closed_hi[axis])] {
                        if closed {
                            continue;
                        }
                        let v = if hi { b.hi[axis] } else { b.lo[axis] };
                        let mut lo2 = b.lo.clone();
                        let mut hi2 = b.hi.clone();
                        lo2.remove(axis);
                        hi2.remove(axis);
                        for mut p in numeric::closed_grid(&lo2, &hi2, k) {
                            p.insert(axis, v);
                            out.push(p);
                        }
                    }
                }
                out
            }
            Domain::Ball { center, radius } => {
                let n = center.len();
                let dirs: Vec<Vec<f64>> = match n {
                    1 => vec![vec![-1.0], vec![1.0]],
                    2 => (0..4 * k)
                        .map(|i| {
                            let a = 2.0 * std::f64::consts::PI * i as f64 / (4 * k) as f64;
                            vec![a.cos(), a.sin()]
                        })
                        .collect(),
                    _ => numeric::closed_grid(&vec![-1.0; n], &vec![1.0; n], k)
                        .into_iter()
                        .filter(|p| numeric::norm(p) > 1e-9)
                        .map(|p| {
                            let r = numeric::norm(&p);
                            p.iter().map(|x| x / r).collect()
                        })
                        .collect(),
                };
                dirs.iter().map(|d| center.iter().zip(d).map(|(c, x)| c + radius * x).collect()).collect()
            }
        }
    }
}

fn ball_quadrature(center: &[f64], r: f64, q: usize, panel: f64) -> Vec<(Vec<f64>, f64)> {
    let n = center.len();
    match n {
        1 => gl_composite(center[0] - r, center[0] + r, q, panel).into_iter().map(|(x, w)| (vec![x], w)).collect(),
        2 => {
            let radial = gl_composite(0.0, r, q, panel);
            let angular = gl_composite(0.0, 2.0 * std::f64::consts::PI, q, panel.max(0.5));
            let mut out = Vec::new();
            for (rho, wr) in &radial {
                for (th, wt) in &angular {
                    out.push((vec![center[0] + rho * th.cos(), center[1] + rho * th.sin()], wr * wt * rho));
                }
            }
            out
        }
        _ => {
            let radial = gl_composite(0.0, r, q, panel);
            let polar = gl_composite(-1.0, 1.0, q, panel.max(0.5));
            let az = gl_composite(0.0, 2.0 * std::f64::consts::PI, q, panel.max(0.5));
            let mut out = Vec::new();
            for (rho, wr) in &radial {
                for (c, wc) in &polar {
                    let s = (1.0 - c * c).sqrt();
                    for (ph, wp) in &az {
                        let mut p = center.to_vec();
                        p[0] += rho * s * ph.cos();
                        p[1] += rho * s * ph.sin();
                        p[2] += rho * c;
                        out.push((p, wr * wc * wp * rho * rho));
                    }
                }
            }
            out
        }
    }
}

/// Finite group of matrices acting linearly on R^n.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteGroupAction {
    pub elements: Vec<DMatrix<f64>>,
    pub labels: Vec<String>,
}

impl FiniteGroupAction {
    pub fn new(elements: Vec<DMatrix<f64>>, labels: Vec<String>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::EmptyGroup);
        }
        let n = elements[0].nrows();
        for (k, m) in elements.iter().enumerate() {
            if m.nrows() != m.ncols() || m.nrows() != n {
                return Err(Error::MalformedMatrix(format!(
                    "element {k} is {}x{}, expected {n}x{n}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        Ok(FiniteGroupAction { elements, labels })
    }

    pub fn from_rows(rows: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let mut els = Vec::new();
        for (k, m) in rows.into_iter().enumerate() {
            let r = m.len();
            let c = m.first().map_or(0, |x| x.len());
            if m.iter().any(|x| x.len() != c) {
                return Err(Error::MalformedMatrix(format!("element {k} has ragged rows")));
            }
            els.push(DMatrix::from_row_iterator(r, c, m.into_iter().flatten()));
        }
        Self::new(els, Vec::new())
    }

    pub fn trivial(n: usize) -> Self {
        FiniteGroupAction { elements: vec![DMatrix::identity(n, n)], labels: vec!["e".into()] }
    }

    /// Z/2 acting by -1.
    pub fn sign(n: usize) -> Self {
        FiniteGroupAction {
            elements: vec![DMatrix::identity(n, n), -DMatrix::identity(n, n)],
            labels: vec!["e".into(), "-1".into()],
        }
    }

    /// Z/n rotating the plane.
    pub fn rotation(n: usize) -> Self {
        let els = (0..n)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                DMatrix::from_row_slice(2, 2, &[a.cos(), -a.sin(), a.sin(), a.cos()])
            })
            .collect();
        FiniteGroupAction { elements: els, labels: (0..n).map(|k| format!("r{k}")).collect() }
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn dim(&self) -> usize {
        self.elements[0].nrows()
    }

    pub fn apply(&self, g: usize, y: &[f64]) -> Vec<f64> {
        let m = &self.elements[g];
        (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)] * y[j]).sum()).collect()
    }

    fn mat_dist(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).abs().max()
    }

    pub fn find(&self, m: &DMatrix<f64>) -> Option<usize> {
        self.elements.iter().position(|e| Self::mat_dist(e, m) <= tol::GROUP)
    }

    pub fn identity_index(&self) -> Option<usize> {
        self.find(&DMatrix::identity(self.dim(), self.dim()))
    }

    pub fn product_index(&self, a: usize, b: usize) -> Option<usize> {
        self.find(&(&self.elements[a] * &self.elements[b]))
    }

    pub fn inverse_index(&self, a: usize) -> Option<usize> {
        let inv = self.elements[a].clone().try_inverse()?;
        self.find(&inv)
    }

    /// Residuals of closure, identity and inverses.
    pub fn axiom_residuals(&self) -> (f64, f64, f64) {
        let nearest = |m: &DMatrix<f64>| self.elements.iter().map(|e| Self::mat_dist(e, m)).fold(f64::INFINITY, f64::min);
        let mut closure: f64 = 0.0;
        for a in &self.elements {
            for b in &self.elements {
                closure = closure.max(nearest(&(a * b)));
            }
        }
        let identity = nearest(&DMatrix::identity(self.dim(), self.dim()));
        let mut inverse: f64 = 0.0;
        for a in &self.elements {
            inverse = inverse.max(a.clone().try_inverse().map_or(f64::INFINITY, |i| nearest(&i)));
        }
        (closure, identity, inverse)
    }

    /// Subgroup given by indices.
    pub fn subgroup(&self, idx: &[usize]) -> FiniteGroupAction {
        FiniteGroupAction {
            elements: idx.iter().map(|&i| self.elements[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels.get(i).cloned().unwrap_or_else(|| format!("g{i}"))).collect(),
        }
    }

    /// Block-diagonal product action.
    pub fn product(&self, other: &FiniteGroupAction) -> FiniteGroupAction {
        let (n, m) = (self.dim(), other.dim());
        let mut els = Vec::new();
        let mut labels = Vec::new();
        for (i, a) in self.elements.iter().enumerate() {
            for (j, b) in other.elements.iter().enumerate() {
                let mut g = DMatrix::zeros(n + m, n + m);
                g.view_mut((0, 0), (n, n)).copy_from(a);
                g.view_mut((n, n), (m, m)).copy_from(b);
                els.push(g);
                labels.push(format!("({},{})", i, j));
            }
        }
        FiniteGroupAction { elements: els, labels }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrbifoldChart {
    pub label: String,
    pub dim: usize,
    pub domain: Domain,
    pub group: FiniteGroupAction,
    pub base_point: Vec<f64>,
}

impl OrbifoldChart {
    pub fn new(label: impl Into<String>, domain: Domain, group: FiniteGroupAction, base_point: Vec<f64>) -> Self {
        OrbifoldChart { label: label.into(), dim: domain.dim(), domain, group, base_point }
    }

    /// Canonical orbit representative: the lexicographically largest image, lowest index on ties.
    pub fn canonical(&self, y: &[f64]) -> (Vec<f64>, usize) {
        let mut best = (y.to_vec(), self.group.identity_index().unwrap_or(0));
        for g in 0..self.group.order() {
            let gy = self.group.apply(g, y);
            if lex_gt(&gy, &best.0, 1e-9) {
                best = (gy, g);
            }
        }
        best
    }
}

/// `a > b` lexicographically, treating coordinates within `tol` as equal.
fn lex_gt(a: &[f64], b: &[f64], tol: f64) -> bool {
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() <= tol {
            continue;
        }
        return x > y;
    }
    false
}

fn effectivity_probes(chart: &OrbifoldChart) -> Vec<Vec<f64>> {
    let mut probes = Vec::new();
    for i in 0..chart.dim {
        let mut p = chart.base_point.clone();
        p[i] += 1.0;
        if chart.domain.contains(&p) {
            probes.push(p);
        }
    }
    probes.extend(chart.domain.samples(7));
    probes
}

/// Group axioms, effectivity, base point, domain invariance and corner effectivity.
pub fn verify_chart(chart: &OrbifoldChart) -> Result<CheckReport> {
    if chart.group.elements.is_empty() {
        return Err(Error::EmptyGroup);
    }
    if chart.group.dim() != chart.dim {
        return Err(Error::MalformedMatrix(format!(
            "group acts on R^{} but chart has dimension {}",
            chart.group.dim(),
            chart.dim
        )));
    }
    let mut rep = CheckReport::new();
    let (closure, identity, inverse) = chart.group.axiom_residuals();
    rep.push(Check::residual("group_closure", closure, tol::GROUP));
    rep.push(Check::residual("group_identity", identity, tol::GROUP));
    rep.push(Check::residual("group_inverse", inverse, tol::GROUP));

    let probes = effectivity_probes(chart);
    rep.push(effectivity_check("effectivity", &chart.group, &probes));

    let base_in = chart.domain.contains(&chart.base_point);
    let base_res = (0..chart.group.order())
        .map(|g| dist(&chart.group.apply(g, &chart.base_point), &chart.base_point))
        .fold(0.0, f64::max);
    rep.push(
        Check::new("base_point", base_in && base_res < tol::GROUP, base_res)
            .with_witness((!base_in).then(|| chart.base_point.clone())),
    );

    let samples = chart.domain.samples(7);
    let mut bad = None;
    'outer: for y in &samples {
        for g in 0..chart.group.order() {
            if !chart.domain.contains(&chart.group.apply(g, y)) {
                bad = Some(y.clone());
                break 'outer;
            }
        }
    }
    let mut face_bad = None;
    for f in chart.domain.faces() {
        for y in chart.domain.face_samples(f, 5) {
            for g in 0..chart.group.order() {
                let gy = chart.group.apply(g, &y);
                if chart.domain.faces_at(&gy, 1e-9).is_empty() {
                    face_bad.get_or_insert(y.clone());
                }
            }
        }
    }
    rep.push(Check::new("domain_invariance", bad.is_none() && face_bad.is_none(), 0.0).with_witness(bad.or(face_bad)));

    let mut corner = Check::new("corner_effectivity", true, 0.0);
    for f in chart.domain.faces() {
        let fs = chart.domain.face_samples(f, 5);
        if fs.is_empty() {
            continue;
        }
        let id = chart.group.identity_index();
        for g in 0..chart.group.order() {
            if Some(g) == id {
                continue;
            }
            let preserves = fs.iter().all(|y| chart.group.apply(g, y)[f.axis] - chart.domain.face_value(f) == 0.0);
            if !preserves {
                continue;
            }
            let disp = fs.iter().map(|y| dist(&chart.group.apply(g, y), y)).fold(0.0, f64::max);
            if disp <= tol::GROUP {
                corner = Check::new("corner_effectivity", false, disp).with_witness(Some(fs[0].clone()));
            }
        }
    }
    rep.push(corner);
    Ok(rep)
}

/// Every non-identity element must move some probe point. Probes come first in `probes`.
pub fn effectivity_check(name: &str, group: &FiniteGroupAction, probes: &[Vec<f64>]) -> Check {
    let id = group.identity_index().unwrap_or(0);
    let mut worst = f64::INFINITY;
    let mut witness = None;
    let mut status = Status::Pass;
    for g in 0..group.order() {
        if g == id {
            continue;
        }
        let mut moved = None;
        let mut max_disp: f64 = 0.0;
        for y in probes {
            let d = dist(&group.apply(g, y), y);
            max_disp = max_disp.max(d);
            if moved.is_none() && d > tol::EFFECTIVITY_UNKNOWN {
                moved = Some(y.clone());
            }
        }
        worst = worst.min(max_disp);
        if max_disp <= tol::GROUP {
            status = Status::Fail;
            witness = probes.first().cloned();
        } else if moved.is_none() {
            if status == Status::Pass {
                status = Status::Unknown;
            }
            witness = probes.first().cloned();
        } else if witness.is_none() && status == Status::Pass {
            witness = moved;
        }
    }
    if group.order() == 1 {
        worst = 0.0;
    }
    Check::new(name, status == Status::Pass, worst).with_status(status).with_witness(witness)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stabilizer {
    pub indices: Vec<usize>,
    pub group: FiniteGroupAction,
    /// Subgroup closure verified.
    pub closed: bool,
}

pub fn stabilizer(chart: &OrbifoldChart, point: &[f64]) -> Result<Stabilizer> {
    if !chart.domain.contains(point) {
        return Err(Error::PointOutsideDomain(point.to_vec()));
    }
    let indices: Vec<usize> = (0..chart.group.order())
        .filter(|&g| dist(&chart.group.apply(g, point), point) <= tol::GROUP * (1.0 + numeric::norm(point)))
        .collect();
    let closed = indices.iter().all(|&a| {
        indices
            .iter()
            .all(|&b| chart.group.product_index(a, b).is_some_and(|p| indices.contains(&p)))
    });
    Ok(Stabilizer { group: chart.group.subgroup(&indices), indices, closed })
}

/// Local representative (h, φ̃) of an embedding between charts, defined on `domain`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub src: usize,
    pub dst: usize,
    pub domain: Domain,
    /// `hom[g]` is the index of h(g) in the destination group.
    pub hom: Vec<usize>,
    pub map: SmoothMap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrbifoldAtlas {
    pub charts: Vec<OrbifoldChart>,
    pub transitions: Vec<Transition>,
    /// Injective maps into R^N inducing the metric.
    pub global: Vec<SmoothMap>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Representative {
    pub hom: Vec<usize>,
    pub map: SmoothMap,
    /// Element applied to the stored transition.
    pub mu: usize,
}

impl OrbifoldAtlas {
    pub fn chart_index(&self, label: &str) -> Result<usize> {
        self.charts.iter().position(|c| c.label == label).ok_or_else(|| Error::UnresolvedLabel(label.into()))
    }

    /// Equivariance residual ‖φ̃(γy) − h(γ)φ̃(y)‖ of each transition on samples.
    pub fn verify(&self) -> CheckReport {
        let mut rep = CheckReport::new();
        for (k, tr) in self.transitions.iter().enumerate() {
            let (res, w) = transition_equivariance(self, tr);
            rep.push(Check::residual(format!("transition{k}_equivariance"), res, tol::EQUIV).with_witness(w));
        }
        rep
    }
}

pub fn transition_equivariance(atlas: &OrbifoldAtlas, tr: &Transition) -> (f64, Option<Vec<f64>>) {
    let src = &atlas.charts[tr.src];
    let dst = &atlas.charts[tr.dst];
    let mut worst = (0.0, None);
    let k = sample_count_for(100, src.dim);
    for y in tr.domain.samples(k) {
        for g in 0..src.group.order() {
            let gy = src.group.apply(g, &y);
            if !tr.domain.contains(&gy) {
                continue;
            }
            let lhs = tr.map.at(&gy);
            let rhs = dst.group.apply(tr.hom[g], tr.map.at(&y).as_slice());
            let r = dist(lhs.as_slice(), &rhs);
            if r > worst.0 {
                worst = (r, Some(y.clone()));
            }
        }
    }
    worst
}

/// Grid size per axis giving roughly `n` points.
pub fn sample_count_for(n: usize, dim: usize) -> usize {
    if dim == 0 {
        return 1;
    }
    ((n as f64).powf(1.0 / dim as f64).ceil() as usize).max(2)
}

/// Canonical local representative at `point`: the stored transition post-composed with the
/// μ sending the image to its canonical orbit representative.
pub fn local_representative(atlas: &OrbifoldAtlas, src: usize, dst: usize, point: &[f64]) -> Result<Representative> {
    let tr = atlas
        .transitions
        .iter()
        .find(|t| t.src == src && t.dst == dst && t.domain.contains(point));
    let (hom, map) = match tr {
        Some(t) => (t.hom.clone(), t.map.clone()),
        None if src == dst && atlas.charts[src].domain.contains(point) => {
            let c = &atlas.charts[src];
            ((0..c.group.order()).collect(), SmoothMap::identity(c.dim))
        }
        None => return Err(Error::NotInOverlap(point.to_vec())),
    };
    let dstc = &atlas.charts[dst];
    let image = map.at(point);
    let (_, mu) = dstc.canonical(image.as_slice());
    let m = &dstc.group.elements[mu];
    let comps: Vec<Expr> = (0..m.nrows())
        .map(|i| Expr::sum((0..m.ncols()).map(|j| Expr::mul(Expr::Num(m[(i, j)]), map.comps()[j].clone()))))
        .collect();
    let mu_inv = dstc.group.inverse_index(mu).unwrap_or(mu);
    let hom = hom
        .iter()
        .map(|&h| {
            let a = dstc.group.product_index(mu, h).unwrap_or(h);
            dstc.group.product_index(a, mu_inv).unwrap_or(h)
        })
        .collect();
    Ok(Representative { hom, map: SmoothMap::new(comps, map.dim_in(), 0), mu })
}

/// Differential form on a chart: sum of `coef · dy_I` over sorted multi-indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Form {
    pub dim: usize,
    pub degree: usize,
    pub terms: BTreeMap<Vec<usize>, Expr>,
}

/// Sort a multi-index, returning its sign, or `None` if it repeats.
fn sort_index(idx: &[usize]) -> Option<(Vec<usize>, f64)> {
    let mut v = idx.to_vec();
    let mut sign = 1.0;
    for i in 0..v.len() {
        for j in 0..v.len() - 1 - i {
            if v[j] > v[j + 1] {
                v.swap(j, j + 1);
                sign = -sign;
            } else if v[j] == v[j + 1] {
                return None;
            }
        }
    }
    if v.windows(2).any(|w| w[0] == w[1]) {
        return None;
    }
    Some((v, sign))
}

impl Form {
    pub fn new(dim: usize, degree: usize, terms: Vec<(Vec<usize>, Expr)>) -> Result<Self> {
        if degree > dim {
            return Err(Error::DegreeOverflow { degree, dim });
        }
        let mut f = Form { dim, degree, terms: BTreeMap::new() };
        for (idx, c) in terms {
            if idx.len() != degree || idx.iter().any(|&i| i >= dim) {
                return Err(Error::Type(format!("multi-index {idx:?} invalid for a {degree}-form in dimension {dim}")));
            }
            if let Some((s, sign)) = sort_index(&idx) {
                f.add_term(s, Expr::mul(Expr::Num(sign), c));
            }
        }
        Ok(f)
    }

    pub fn zero(dim: usize, degree: usize) -> Self {
        Form { dim, degree, terms: BTreeMap::new() }
    }

    pub fn function(dim: usize, f: Expr) -> Self {
        let mut m = BTreeMap::new();
        if !f.simplify().is_zero() {
            m.insert(vec![], f.simplify());
        }
        Form { dim, degree: 0, terms: m }
    }

    /// `c · dy_1 ∧ … ∧ dy_dim`.
    pub fn top(dim: usize, c: Expr) -> Self {
        let mut m = BTreeMap::new();
        if !c.simplify().is_zero() {
            m.insert((0..dim).collect(), c.simplify());
        }
        Form { dim, degree: dim, terms: m }
    }

    pub fn dy(dim: usize, i: usize) -> Self {
        let mut m = BTreeMap::new();
        m.insert(vec![i], Expr::one());
        Form { dim, degree: 1, terms: m }
    }

    /// Parse from (multi-index, coefficient) strings, indices 1-based.
    pub fn parse(dim: usize, degree: usize, terms: &[(Vec<usize>, String)]) -> Result<Self> {
        let mut out = Vec::new();
        for (idx, c) in terms {
            if idx.iter().any(|&i| i == 0) {
                return Err(Error::Type("form indices start at 1".into()));
            }
            out.push((idx.iter().map(|i| i - 1).collect(), Expr::parse(c, VarSpace::y(dim))?));
        }
        Form::new(dim, degree, out)
    }

    fn add_term(&mut self, idx: Vec<usize>, c: Expr) {
        let entry = match self.terms.remove(&idx) {
            Some(old) => Expr::add(old, c).simplify(),
            None => c.simplify(),
        };
        if !entry.is_zero() {
            self.terms.insert(idx, entry);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, idx: &[usize]) -> Expr {
        match sort_index(idx) {
            Some((s, sign)) => self.terms.get(&s).map_or(Expr::zero(), |c| Expr::mul(Expr::Num(sign), c.clone()).simplify()),
            None => Expr::zero(),
        }
    }

    pub fn scale(&self, f: &Expr) -> Form {
        let mut out = Form::zero(self.dim, self.degree);
        for (i, c) in &self.terms {
            out.add_term(i.clone(), Expr::mul(f.clone(), c.clone()));
        }
        out
    }

    pub fn add(&self, other: &Form) -> Result<Form> {
        if self.dim != other.dim || self.degree != other.degree {
            return Err(Error::DimMismatch("adding forms of different type".into()));
        }
        let mut out = self.clone();
        for (i, c) in &other.terms {
            out.add_term(i.clone(), c.clone());
        }
        Ok(out)
    }

    pub fn wedge(&self, other: &Form) -> Result<Form> {
        if self.dim != other.dim {
            return Err(Error::DimMismatch("wedge of forms on different charts".into()));
        }
        let degree = self.degree + other.degree;
        if degree > self.dim {
            return Err(Error::DegreeOverflow { degree, dim: self.dim });
        }
        let mut out = Form::zero(self.dim, degree);
        for (i, a) in &self.terms {
            for (j, b) in &other.terms {
                let mut idx = i.clone();
                idx.extend(j);
                if let Some((s, sign)) = sort_index(&idx) {
                    out.add_term(s, Expr::mul(Expr::Num(sign), Expr::mul(a.clone(), b.clone())));
                }
            }
        }
        Ok(out)
    }

    /// Exterior derivative.
    pub fn d(&self) -> Result<Form> {
        let degree = self.degree + 1;
        if degree > self.dim {
            return Err(Error::DegreeOverflow { degree, dim: self.dim });
        }
        let mut out = Form::zero(self.dim, degree);
        for (i, c) in &self.terms {
            for j in 0..self.dim {
                let dc = c.diff(Var::Y(j));
                if dc.is_zero() {
                    continue;
                }
                let mut idx = vec![j];
                idx.extend(i);
                if let Some((s, sign)) = sort_index(&idx) {
                    out.add_term(s, Expr::mul(Expr::Num(sign), dc));
                }
            }
        }
        Ok(out)
    }

    /// Pullback along `map`, which sends the new chart into this one.
    pub fn pullback(&self, map: &SmoothMap) -> Result<Form> {
        if map.dim_out() != self.dim {
            return Err(Error::DimMismatch(format!(
                "pullback map lands in R^{} but the form lives on R^{}",
                map.dim_out(),
                self.dim
            )));
        }
        let m = map.dim_in();
        if self.degree > m {
            return Err(Error::DegreeOverflow { degree: self.degree, dim: m });
        }
        let jac = map.jac_y_exprs();
        let mut out = Form::zero(m, self.degree);
        for (idx, c) in &self.terms {
            let coef = c.compose_y(map.comps());
            // dy_{i1} ∧ … pulled back: ∑ over target multi-indices of the minor.
            let mut partial: Vec<(Vec<usize>, Expr)> = vec![(vec![], coef)];
            for &i in idx {
                let mut next = Vec::new();
                for (cur, e) in &partial {
                    for (j, dj) in jac[i].iter().enumerate() {
                        if dj.is_zero() || cur.contains(&j) {
                            continue;
                        }
                        let mut n = cur.clone();
                        n.push(j);
                        next.push((n, Expr::mul(e.clone(), dj.clone())));
                    }
                }
                partial = next;
            }
            for (k, e) in partial {
                if let Some((s, sign)) = sort_index(&k) {
                    out.add_term(s, Expr::mul(Expr::Num(sign), e));
                }
            }
        }
        Ok(out)
    }

    /// Evaluate on tangent vectors at `y`.
    pub fn eval_on(&self, env: &Env, vecs: &[Vec<f64>]) -> f64 {
        if vecs.len() != self.degree {
            return f64::NAN;
        }
        let mut acc = 0.0;
        for (idx, c) in &self.terms {
            let minor = DMatrix::from_fn(self.degree, self.degree, |a, b| vecs[b][idx[a]]);
            acc += c.eval(env) * numeric::det(&minor);
        }
        acc
    }

    /// Coefficient of the volume form (top degree only).
    pub fn top_coefficient(&self) -> Expr {
        self.terms.get(&(0..self.dim).collect::<Vec<_>>()).cloned().unwrap_or(Expr::zero())
    }

    /// Maximum of |γ*form − form| at samples.
    pub fn invariance_residual(&self, group: &FiniteGroupAction, samples: &[Vec<f64>]) -> f64 {
        let mut worst: f64 = 0.0;
        for g in &group.elements {
            let lin = SmoothMap::new(
                (0..self.dim)
                    .map(|i| Expr::sum((0..self.dim).map(|j| Expr::mul(Expr::Num(g[(i, j)]), Expr::y(j)))))
                    .collect(),
                self.dim,
                0,
            );
            let Ok(pb) = self.pullback(&lin) else { return f64::INFINITY };
            let Ok(diff) = pb.add(&self.scale(&Expr::Num(-1.0))) else { return f64::INFINITY };
            for y in samples {
                for c in diff.terms.values() {
                    worst = worst.max(c.eval(&Env::y(y)).abs());
                }
            }
        }
        worst
    }

    /// NON_DIFFERENTIABLE if a coefficient is not finite at a sample.
    pub fn check_finite(&self, samples: &[Vec<f64>]) -> Result<()> {
        for y in samples {
            for c in self.terms.values() {
                if !c.eval(&Env::y(y)).is_finite() {
                    return Err(Error::NonDifferentiable(y.clone()));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for Form {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        let mut first = true;
        for (idx, c) in &self.terms {
            if !first {
                f.write_str(" + ")?;
            }
            first = false;
            write!(f, "({c})")?;
            for i in idx {
                write!(f, " dy{}", i + 1)?;
            }
        }
        Ok(())
    }
}

pub enum FormOp<'a> {
    Wedge(&'a Form, &'a Form),
    ExteriorDerivative(&'a Form),
    Pullback(&'a Form, &'a SmoothMap),
    Evaluate(&'a Form, &'a [f64], &'a [Vec<f64>]),
}

pub enum FormValue {
    Form(Form),
    Scalar(f64),
}

pub fn form_calculus(op: FormOp) -> Result<FormValue> {
    match op {
        FormOp::Wedge(a, b) => a.wedge(b).map(FormValue::Form),
        FormOp::ExteriorDerivative(a) => a.d().map(FormValue::Form),
        FormOp::Pullback(a, m) => a.pullback(m).map(FormValue::Form),
        FormOp::Evaluate(a, y, v) => {
            let x = a.eval_on(&Env::y(y), v);
            if x.is_finite() {
                Ok(FormValue::Scalar(x))
            } else {
                Err(Error::NonDifferentiable(y.to_vec()))
            }
        }
    }
}

/// Smooth bump equal to 1 on `support` shrunk by `margin` and 0 outside `support`.
/// Faces of `support` lying on closed faces of `domain` are not cut off.
pub fn bump_expr(support: &Domain, domain: &Domain, margin: f64) -> Expr {
    match support {
        Domain::Box(k) => {
            let dbox = domain.to_box();
            let mut factors = Vec::new();
            for i in 0..k.lo.len() {
                let keep_lo = dbox.is_some_and(|d| d.closed_lo[i] && (d.lo[i] - k.lo[i]).abs() < 1e-12);
                let keep_hi = dbox.is_some_and(|d| d.closed_hi[i] && (d.hi[i] - k.hi[i]).abs() < 1e-12);
                if !keep_lo {
                    factors.push(Expr::step(Expr::div(Expr::sub(Expr::y(i), Expr::Num(k.lo[i])), Expr::Num(margin))));
                }
                if !keep_hi {
                    factors.push(Expr::step(Expr::div(Expr::sub(Expr::Num(k.hi[i]), Expr::y(i)), Expr::Num(margin))));
                }
            }
            factors.into_iter().fold(Expr::one(), Expr::mul).simplify()
        }
        Domain::Ball { center, radius } => {
            let r2 = Expr::sum(
                center
                    .iter()
                    .enumerate()
                    .map(|(i, c)| Expr::pow(Expr::sub(Expr::y(i), Expr::Num(*c)), 2.0)),
            );
            let inner = (radius - margin).max(0.0);
            let width = radius * radius - inner * inner;
            Expr::step(Expr::div(Expr::sub(Expr::Num(radius * radius), r2), Expr::Num(width))).simplify()
        }
    }
}

/// Group average of an expression.
pub fn average_over(group: &FiniteGroupAction, e: &Expr) -> Expr {
    let n = group.dim();
    let terms: Vec<Expr> = group
        .elements
        .iter()
        .map(|g| {
            let ys: Vec<Expr> = (0..n)
                .map(|i| Expr::sum((0..n).map(|j| Expr::mul(Expr::Num(g[(i, j)]), Expr::y(j)))))
                .collect();
            e.compose_y(&ys)
        })
        .collect();
    Expr::mul(Expr::Num(1.0 / group.order() as f64), Expr::sum(terms)).simplify()
}

pub fn is_invariant(group: &FiniteGroupAction, e: &Expr, samples: &[Vec<f64>]) -> bool {
    samples.iter().all(|y| {
        let v = e.eval(&Env::y(y));
        (0..group.order()).all(|g| (e.eval(&Env::y(&group.apply(g, y))) - v).abs() <= 1e-12)
    })
}

/// One piece of a partition-of-unity problem.
#[derive(Clone, Debug)]
pub struct PouPiece {
    pub domain: Domain,
    pub group: FiniteGroupAction,
    pub support: Domain,
    pub margin: f64,
    /// Use the constant bump 1 (the piece absorbs everything not claimed earlier).
    pub full: bool,
}

/// Transport of earlier bumps onto a later piece: `bump_to ∘ map · cutoff` on piece `from`.
#[derive(Clone, Debug)]
pub struct Transport {
    pub from: usize,
    pub to: usize,
    pub map: SmoothMap,
    pub cutoff: Expr,
}

/// Sequential partition of unity: χ_k = b_k ∏_{j<k} (1 − b_j∘τ_kj · cutoff).
/// `targets` lists every chart representative of each target point; the sum over
/// representatives must be 1 within the partition-of-unity tolerance.
pub fn partition_of_unity(pieces: &[PouPiece], transports: &[Transport], targets: &[Vec<(usize, Vec<f64>)>]) -> Result<Vec<Expr>> {
    let mut bumps = Vec::new();
    for p in pieces {
        let b = if p.full { Expr::one() } else { bump_expr(&p.support, &p.domain, p.margin) };
        let samples = p.domain.samples(5);
        let b = if is_invariant(&p.group, &b, &samples) { b } else { average_over(&p.group, &b) };
        bumps.push(b);
    }
    let mut chis = Vec::new();
    for (k, b) in bumps.iter().enumerate() {
        let mut chi = b.clone();
        for tr in transports.iter().filter(|t| t.from == k && t.to < k) {
            let moved = Expr::mul(bumps[tr.to].compose_y(tr.map.comps()), tr.cutoff.clone());
            chi = Expr::mul(chi, Expr::sub(Expr::one(), moved));
        }
        chis.push(chi.simplify());
    }
    for reps in targets {
        let s: f64 = reps.iter().map(|(c, y)| chis[*c].eval(&Env::y(y))).sum();
        if (s - 1.0).abs() > tol::POU {
            let w = reps.first().map(|r| r.1.clone()).unwrap_or_default();
            return Err(Error::CoverGap(w));
        }
    }
    Ok(chis)
}

/// Σ_charts (1/#Γ) ∫ χ · coefficient over each region by tensor Gauss–Legendre.
pub fn integrate_top_form(pieces: &[(&OrbifoldChart, &Form, &Expr, &Domain)], q: usize) -> Result<f64> {
    let mut total = 0.0;
    for (chart, form, chi, region) in pieces {
        if form.degree != chart.dim {
            return Err(Error::DimMismatch(format!("form of degree {} on a {}-chart", form.degree, chart.dim)));
        }
        let coef = form.top_coefficient();
        if coef.is_zero() {
            continue;
        }
        let mut acc = 0.0;
        for (y, w) in region.quadrature(q, 0.125) {
            if !chart.domain.contains_closed(&y, 1e-12) {
                continue;
            }
            let env = Env::y(&y);
            let v = chi.eval(&env) * coef.eval(&env);
            if !v.is_finite() {
                return Err(Error::QuadratureDiverged);
            }
            acc += w * v;
        }
        total += acc / chart.group.order() as f64;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(group: FiniteGroupAction) -> OrbifoldChart {
        OrbifoldChart::new("c", Domain::open_box(vec![-2.0], vec![2.0]), group, vec![0.0])
    }

    #[test]
    fn sign_action_effective_with_witness_at_one() {
        let rep = verify_chart(&line(FiniteGroupAction::sign(1))).unwrap();
        assert!(rep.all_pass(), "{rep:?}");
        assert_eq!(rep.get("effectivity").unwrap().witness, Some(vec![1.0]));
    }

    #[test]
    fn duplicate_identity_is_not_effective() {
        let g = FiniteGroupAction::new(vec![DMatrix::identity(1, 1), DMatrix::identity(1, 1)], vec![]).unwrap();
        let rep = verify_chart(&line(g)).unwrap();
        let c = rep.get("effectivity").unwrap();
        assert_eq!(c.status, Status::Fail);
        assert!(c.witness.is_some());
    }

    #[test]
    fn malformed_and_empty_groups() {
        let bad = FiniteGroupAction::from_rows(vec![vec![vec![1.0, 0.0]]]);
        assert_eq!(bad.unwrap_err().code(), "MALFORMED_MATRIX");
        assert_eq!(FiniteGroupAction::new(vec![], vec![]).unwrap_err().code(), "EMPTY_GROUP");
    }

    #[test]
    fn stabilizers() {
        let c = line(FiniteGroupAction::sign(1));
        assert_eq!(stabilizer(&c, &[0.0]).unwrap().indices.len(), 2);
        assert_eq!(stabilizer(&c, &[0.7]).unwrap().indices.len(), 1);
        assert_eq!(stabilizer(&c, &[3.0]).unwrap_err().code(), "POINT_OUTSIDE_DOMAIN");
        let disk = OrbifoldChart::new("d", Domain::ball(vec![0.0, 0.0], 1.0), FiniteGroupAction::rotation(3), vec![0.0, 0.0]);
        assert_eq!(stabilizer(&disk, &[0.5, 0.0]).unwrap().indices, vec![0]);
        assert!(stabilizer(&disk, &[0.0, 0.0]).unwrap().closed);
    }

    #[test]
    fn forms() {
        let f = Form::function(1, Expr::parse("y1^2", VarSpace::y(1)).unwrap());
        assert_eq!(f.d().unwrap().to_string(), "(2.0*y1) dy1");
        let dy = Form::dy(1, 0);
        assert!(dy.wedge(&dy).is_err());
        let dz = Form::dy(2, 1);
        let inc = SmoothMap::parse(&["y1", "0"], VarSpace::y(1)).unwrap();
        assert!(dz.pullback(&inc).unwrap().is_zero());
        let dx = Form::dy(2, 0);
        assert!(dz.wedge(&dx).unwrap().coefficient(&[0, 1]).as_const() == Some(-1.0));
    }

    #[test]
    fn top_form_integral_of_unit_bump() {
        let c = line(FiniteGroupAction::trivial(1));
        let b = bump_expr(&Domain::open_box(vec![-1.0], vec![1.0]), &c.domain, 0.5);
        let form = Form::top(1, Expr::mul(Expr::Num(1.0 / 1.5), b));
        let one = Expr::one();
        let v = integrate_top_form(&[(&c, &form, &one, &c.domain)], 16).unwrap();
        assert!((v - 1.0).abs() < 1e-8, "{v}");
        let c2 = line(FiniteGroupAction::sign(1));
        let v2 = integrate_top_form(&[(&c2, &form, &one, &c2.domain)], 16).unwrap();
        assert!((v2 - 0.5).abs() < 1e-8);
    }

    #[test]
    fn local_representative_canonicalizes_mu() {
        let c = line(FiniteGroupAction::sign(1));
        let atlas = OrbifoldAtlas {
            charts: vec![c.clone()],
            transitions: vec![Transition {
                src: 0,
                dst: 0,
                domain: c.domain.clone(),
                hom: vec![0, 1],
                map: SmoothMap::parse(&["-y1"], VarSpace::y(1)).unwrap(),
            }],
            global: vec![SmoothMap::identity(1)],
        };
        let r = local_representative(&atlas, 0, 0, &[0.7]).unwrap();
        assert_eq!(r.mu, 1);
        assert!((r.map.at(&[0.7])[0] - 0.7).abs() < 1e-15);
    }
}
