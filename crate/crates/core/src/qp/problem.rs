use std::ops::Range;

use serde::{Deserialize, Serialize};

/// Named column ranges of a QP, in allocation order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VarMap {
    blocks: Vec<(String, Range<usize>)>,
}

impl VarMap {
    pub fn get(&self, name: &str) -> Option<Range<usize>> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, r)| r.clone())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Range<usize>)> {
        self.blocks.iter().map(|(n, r)| (n.as_str(), r))
    }

    /// Name of the block owning column `col`.
    pub fn owner(&self, col: usize) -> Option<&str> {
        self.blocks
            .iter()
            .find(|(_, r)| r.contains(&col))
            .map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.blocks.last().map_or(0, |(_, r)| r.end)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Sparse row-major constraint block with a right-hand side.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstraintRows {
    starts: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    rhs: Vec<f64>,
}

impl ConstraintRows {
    pub(crate) fn push(&mut self, terms: &[(usize, f64)], rhs: f64) -> usize {
        if self.starts.is_empty() {
            self.starts.push(0);
        }
        let mut sorted: Vec<(usize, f64)> = terms.to_vec();
        sorted.sort_by_key(|&(c, _)| c);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(sorted.len());
        for (c, v) in sorted {
            match merged.last_mut() {
                Some((lc, lv)) if *lc == c => *lv += v,
                _ => merged.push((c, v)),
            }
        }
        for (c, v) in merged {
            if v != 0.0 {
                self.cols.push(c);
                self.vals.push(v);
            }
        }
        self.starts.push(self.cols.len());
        self.rhs.push(rhs);
        self.rhs.len() - 1
    }

    pub fn len(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// Column indices and coefficients of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.starts[i]..self.starts[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    pub fn iter(&self) -> impl Iterator<Item = ((&[usize], &[f64]), f64)> + '_ {
        (0..self.len()).map(move |i| (self.row(i), self.rhs[i]))
    }

    pub fn row_dot(&self, i: usize, z: &[f64]) -> f64 {
        let (c, v) = self.row(i);
        c.iter().zip(v).map(|(&j, &a)| a * z[j]).sum()
    }

    /// `M z`
    pub fn mul(&self, z: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|i| self.row_dot(i, z)).collect()
    }

    /// `out += Mᵀ y`
    pub fn mul_t_add(&self, y: &[f64], out: &mut [f64]) {
        for (i, &yi) in y.iter().enumerate() {
            if yi == 0.0 {
                continue;
            }
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                out[j] += a * yi;
            }
        }
    }
}

/// Convex QP
///
/// ```text
///     minimize    ½ zᵀQz + cᵀz + constant
///     subject to  A z  = b
///                 G z <= h
/// ```
///
/// `Q` is held as its upper triangle; every column is allocated through a
/// named block so that callers can find their variables again after a solve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QpProblem {
    quad: Vec<(usize, usize, f64)>,
    linear: Vec<f64>,
    constant: f64,
    eq: ConstraintRows,
    ineq: ConstraintRows,
    vars: VarMap,
}

impl QpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `len` columns under `name` and returns their range.
    pub fn add_variables(&mut self, name: impl Into<String>, len: usize) -> Range<usize> {
        let start = self.linear.len();
        let range = start..start + len;
        self.linear.resize(start + len, 0.0);
        self.vars.blocks.push((name.into(), range.clone()));
        range
    }

    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn vars(&self) -> &VarMap {
        &self.vars
    }

    /// Adds `v` to `Q[i][j]` and `Q[j][i]` (once on the diagonal).
    pub fn add_quadratic(&mut self, i: usize, j: usize, v: f64) {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        self.quad.push((a, b, v));
    }

    pub fn add_linear(&mut self, i: usize, v: f64) {
        self.linear[i] += v;
    }

    pub fn add_constant(&mut self, v: f64) {
        self.constant += v;
    }

    /// `Σ terms <= rhs`; returns the inequality row index.
    pub fn add_le(&mut self, terms: &[(usize, f64)], rhs: f64) -> usize {
        self.ineq.push(terms, rhs)
    }

    /// `Σ terms >= rhs`, stored negated.
    pub fn add_ge(&mut self, terms: &[(usize, f64)], rhs: f64) -> usize {
        let neg: Vec<(usize, f64)> = terms.iter().map(|&(j, a)| (j, -a)).collect();
        self.ineq.push(&neg, -rhs)
    }

    pub fn add_eq(&mut self, terms: &[(usize, f64)], rhs: f64) -> usize {
        self.eq.push(terms, rhs)
    }

    pub fn add_lower_bound(&mut self, i: usize, lb: f64) -> usize {
        self.add_le(&[(i, -1.0)], -lb)
    }

    pub fn add_upper_bound(&mut self, i: usize, ub: f64) -> usize {
        self.add_le(&[(i, 1.0)], ub)
    }

    pub fn fix(&mut self, i: usize, value: f64) -> usize {
        self.add_eq(&[(i, 1.0)], value)
    }

    pub fn linear(&self) -> &[f64] {
        &self.linear
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn equalities(&self) -> &ConstraintRows {
        &self.eq
    }

    pub fn inequalities(&self) -> &ConstraintRows {
        &self.ineq
    }

    /// Upper-triangle entries of `Q`, possibly with repeated coordinates.
    pub fn quadratic_entries(&self) -> &[(usize, usize, f64)] {
        &self.quad
    }

    /// `Q z`
    pub fn quad_mul(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; z.len()];
        for &(i, j, v) in &self.quad {
            out[i] += v * z[j];
            if i != j {
                out[j] += v * z[i];
            }
        }
        out
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        let qz = self.quad_mul(z);
        let quad: f64 = z.iter().zip(&qz).map(|(a, b)| a * b).sum();
        let lin: f64 = z.iter().zip(&self.linear).map(|(a, b)| a * b).sum();
        0.5 * quad + lin + self.constant
    }

    /// Largest violation of any constraint at `z` (0 when feasible).
    pub fn max_violation(&self, z: &[f64]) -> f64 {
        let eq = (0..self.eq.len())
            .map(|i| (self.eq.row_dot(i, z) - self.eq.rhs[i]).abs())
            .fold(0.0, f64::max);
        let ineq = (0..self.ineq.len())
            .map(|i| (self.ineq.row_dot(i, z) - self.ineq.rhs[i]).max(0.0))
            .fold(0.0, f64::max);
        eq.max(ineq)
    }

    /// Plain-text dump of `(Q, c, G, h, Aeq, beq)` in coordinate format.
    ///
    /// ```text
    /// qp <n> <m_eq> <m_ineq>
    /// Q <nnz>        then  i j value   (upper triangle, 0-based)
    /// c <n>          then  value per line
    /// G <nnz>        then  row col value
    /// h <m_ineq>     then  value per line
    /// Aeq <nnz>      then  row col value
    /// beq <m_eq>     then  value per line
    /// ```
    pub fn dump(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(out, "qp {} {} {}", self.num_vars(), self.eq.len(), self.ineq.len());
        let _ = writeln!(out, "Q {}", self.quad.len());
        for &(i, j, v) in &self.quad {
            let _ = writeln!(out, "{i} {j} {v:e}");
        }
        let _ = writeln!(out, "c {}", self.linear.len());
        for v in &self.linear {
            let _ = writeln!(out, "{v:e}");
        }
        for (label, rows, rhs_label) in [("G", &self.ineq, "h"), ("Aeq", &self.eq, "beq")] {
            let _ = writeln!(out, "{label} {}", rows.nnz());
            for i in 0..rows.len() {
                let (c, v) = rows.row(i);
                for (j, a) in c.iter().zip(v) {
                    let _ = writeln!(out, "{i} {j} {a:e}");
                }
            }
            let _ = writeln!(out, "{rhs_label} {}", rows.len());
            for v in &rows.rhs {
                let _ = writeln!(out, "{v:e}");
            }
        }
        out
    }
}
