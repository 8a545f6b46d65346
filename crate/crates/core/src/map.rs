//! Vector-valued expression maps with cached symbolic Jacobians.

use crate::error::{Error, Result};
use crate::expr::{Env, Expr, Var, VarSpace};
use nalgebra::{DMatrix, DVector};
use std::fmt;

#[derive(Clone, PartialEq)]
pub struct SmoothMap {
    comps: Vec<Expr>,
    ny: usize,
    nw: usize,
    jy: Vec<Vec<Expr>>,
    jw: Vec<Vec<Expr>>,
}

impl fmt::Debug for SmoothMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.comps.iter().map(|e| e.to_string())).finish()
    }
}

impl SmoothMap {
    /// Map in `ny` chart variables and `nw` parameters.
    pub fn new(comps: Vec<Expr>, ny: usize, nw: usize) -> Self {
        let jy = comps
            .iter()
            .map(|c| (0..ny).map(|j| c.diff(Var::Y(j))).collect())
            .collect();
        let jw = comps
            .iter()
            .map(|c| (0..nw).map(|j| c.diff(Var::W(j))).collect())
            .collect();
        SmoothMap { comps, ny, nw, jy, jw }
    }

    pub fn parse(srcs: &[impl AsRef<str>], space: VarSpace) -> Result<Self> {
        let comps = srcs
            .iter()
            .map(|s| Expr::parse(s.as_ref(), space))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(comps, space.ny, space.nw))
    }

    pub fn identity(n: usize) -> Self {
        Self::new((0..n).map(Expr::y).collect(), n, 0)
    }

    pub fn constant(values: &[f64], ny: usize) -> Self {
        Self::new(values.iter().map(|v| Expr::Num(*v)).collect(), ny, 0)
    }

    pub fn comps(&self) -> &[Expr] {
        &self.comps
    }
    pub fn dim_out(&self) -> usize {
        self.comps.len()
    }
    pub fn dim_in(&self) -> usize {
        self.ny
    }
    pub fn dim_w(&self) -> usize {
        self.nw
    }

    pub fn eval(&self, env: &Env) -> DVector<f64> {
        DVector::from_iterator(self.comps.len(), self.comps.iter().map(|c| c.eval(env)))
    }

    pub fn at(&self, y: &[f64]) -> DVector<f64> {
        self.eval(&Env::y(y))
    }

    pub fn jac_y(&self, env: &Env) -> DMatrix<f64> {
        DMatrix::from_fn(self.comps.len(), self.ny, |i, j| self.jy[i][j].eval(env))
    }

    pub fn jac_at(&self, y: &[f64]) -> DMatrix<f64> {
        self.jac_y(&Env::y(y))
    }

    pub fn jac_w(&self, env: &Env) -> DMatrix<f64> {
        DMatrix::from_fn(self.comps.len(), self.nw, |i, j| self.jw[i][j].eval(env))
    }

    pub fn jac_y_exprs(&self) -> &[Vec<Expr>] {
        &self.jy
    }

    /// Same components viewed in a larger variable space.
    pub fn widen(&self, ny: usize, nw: usize) -> Self {
        Self::new(self.comps.clone(), ny.max(self.ny), nw.max(self.nw))
    }

    /// `self ∘ inner`, where inner maps the new chart into this map's domain.
    pub fn compose(&self, inner: &SmoothMap) -> Result<Self> {
        if inner.dim_out() != self.ny {
            return Err(Error::DimMismatch(format!(
                "cannot compose: inner has {} outputs, outer expects {}",
                inner.dim_out(),
                self.ny
            )));
        }
        let comps = self.comps.iter().map(|c| c.compose_y(&inner.comps)).collect();
        Ok(Self::new(comps, inner.ny, self.nw.max(inner.nw)))
    }

    /// Concatenate outputs.
    pub fn stack(&self, other: &SmoothMap) -> Self {
        let mut comps = self.comps.clone();
        comps.extend(other.comps.iter().cloned());
        Self::new(comps, self.ny.max(other.ny), self.nw.max(other.nw))
    }

    pub fn map_comps(&self, f: impl Fn(&Expr) -> Expr, ny: usize, nw: usize) -> Self {
        Self::new(self.comps.iter().map(|c| f(c).simplify()).collect(), ny, nw)
    }

    pub fn to_strings(&self) -> Vec<String> {
        self.comps.iter().map(|e| e.to_string()).collect()
    }
}

/// Matrix of expressions in the chart variables, e.g. a fibrewise linear map.
#[derive(Clone, Debug, PartialEq)]
pub struct ExprMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<Expr>,
}

impl ExprMatrix {
    pub fn from_rows(rows: Vec<Vec<Expr>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        if rows.iter().any(|x| x.len() != c) {
            return Err(Error::MalformedMatrix("ragged expression matrix".into()));
        }
        Ok(ExprMatrix { rows: r, cols: c, entries: rows.into_iter().flatten().collect() })
    }

    pub fn constant(m: &DMatrix<f64>) -> Self {
        ExprMatrix {
            rows: m.nrows(),
            cols: m.ncols(),
            entries: (0..m.nrows())
                .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
                .map(|(i, j)| Expr::Num(m[(i, j)]))
                .collect(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(&DMatrix::identity(n, n))
    }

    pub fn get(&self, i: usize, j: usize) -> &Expr {
        &self.entries[i * self.cols + j]
    }

    pub fn eval(&self, env: &Env) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).eval(env))
    }

    pub fn at(&self, y: &[f64]) -> DMatrix<f64> {
        self.eval(&Env::y(y))
    }

    /// Matrix times expression vector.
    pub fn apply(&self, v: &[Expr]) -> Vec<Expr> {
        (0..self.rows)
            .map(|i| Expr::sum((0..self.cols).map(|j| Expr::mul(self.get(i, j).clone(), v[j].clone()))))
            .collect()
    }

    pub fn compose_y(&self, ys: &[Expr]) -> Self {
        ExprMatrix {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|e| e.compose_y(ys)).collect(),
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<String>> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j).to_string()).collect())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobian_matches_hand_computation() {
        let m = SmoothMap::parse(&["y1^2 + y2", "sin(y1)*y2"], VarSpace::y(2)).unwrap();
        let j = m.jac_at(&[0.5, 2.0]);
        assert!((j[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((j[(0, 1)] - 1.0).abs() < 1e-15);
        assert!((j[(1, 0)] - 2.0 * 0.5f64.cos()).abs() < 1e-15);
        assert!((j[(1, 1)] - 0.5f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn composition() {
        let outer = SmoothMap::parse(&["y1*y2"], VarSpace::y(2)).unwrap();
        let inner = SmoothMap::parse(&["y1", "0"], VarSpace::y(1)).unwrap();
        let c = outer.compose(&inner).unwrap();
        assert!(c.comps()[0].is_zero());
    }
}
