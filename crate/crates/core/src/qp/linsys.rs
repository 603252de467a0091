//! Sparse quasi-definite KKT factorization.
//!
//! The interior-point Newton system
//!
//! ```text
//!     [ Q + ρI   Aᵀ     Gᵀ      ] [dz]
//!     [ A       -ρI     0       ] [dy]
//!     [ G        0     -W - ρI  ] [dλ]
//! ```
//!
//! is factored as LDLᵀ with a fixed AMD ordering. The sign pattern (+ on the
//! primal block, − on the dual blocks) is known up front, so no pivoting is
//! needed; the small static shift ρ is removed again by iterative refinement.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::ldlt::factor::LdltRegularization;
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, CholeskySymbolicParams, LdltRef, SymbolicCholesky,
    SymmetricOrdering,
};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Conj, MatMut, Par, Side, Spec};

use super::problem::ConstraintRows;

/// Largest static shift tried before giving up.
const MAX_REG: f64 = 1e-4;

pub(crate) struct KktSystem {
    n: usize,
    m_eq: usize,
    dim: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    base: Vec<f64>,
    values: Vec<f64>,
    diag: Vec<usize>,
    signs: Vec<i8>,
    symbolic: SymbolicCholesky<usize>,
    factor: Vec<f64>,
    mem: MemBuffer,
    reg: f64,
    w: Vec<f64>,
}

#[derive(Debug)]
pub(crate) struct FactorError;

impl KktSystem {
    /// Builds the sparsity pattern and the symbolic factorization.
    pub fn new(
        n: usize,
        quad: &[(usize, usize, f64)],
        eq: &ConstraintRows,
        ineq: &ConstraintRows,
        reg: f64,
    ) -> Result<Self, FactorError> {
        let m_eq = eq.len();
        let m_in = ineq.len();
        let dim = n + m_eq + m_in;
        // upper-triangle triplets (row <= col)
        let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(
            dim + quad.len() + eq.nnz() + ineq.nnz(),
        );
        for i in 0..dim {
            trip.push((i, i, 0.0));
        }
        trip.extend(quad.iter().copied());
        for (r, ((cols, vals), _)) in eq.iter().enumerate() {
            for (&j, &a) in cols.iter().zip(vals) {
                trip.push((j, n + r, a));
            }
        }
        for (r, ((cols, vals), _)) in ineq.iter().enumerate() {
            for (&j, &a) in cols.iter().zip(vals) {
                trip.push((j, n + m_eq + r, a));
            }
        }
        trip.sort_by_key(|e| (e.1, e.0));

        let mut col_ptr = vec![0usize; dim + 1];
        let mut row_idx = Vec::with_capacity(trip.len());
        let mut base: Vec<f64> = Vec::with_capacity(trip.len());
        let mut diag = vec![0usize; dim];
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &trip {
            if last == Some((r, c)) {
                *base.last_mut().unwrap() += v;
                continue;
            }
            if r == c {
                diag[c] = row_idx.len();
            }
            row_idx.push(r);
            base.push(v);
            col_ptr[c + 1] += 1;
            last = Some((r, c));
        }
        for c in 0..dim {
            col_ptr[c + 1] += col_ptr[c];
        }

        let sym = SymbolicSparseColMatRef::new_checked(dim, dim, &col_ptr, None, &row_idx);
        let symbolic = factorize_symbolic_cholesky(
            sym,
            Side::Upper,
            SymmetricOrdering::Amd,
            CholeskySymbolicParams::default(),
        )
        .map_err(|_| FactorError)?;
        let par = Par::Seq;
        let mem = MemBuffer::new(
            symbolic
                .factorize_numeric_ldlt_scratch::<f64>(par, Spec::default())
                .or(symbolic.solve_in_place_scratch::<f64>(1, par)),
        );
        let factor = vec![0.0; symbolic.len_val()];
        let mut signs = vec![1i8; dim];
        for s in signs.iter_mut().skip(n) {
            *s = -1;
        }
        let values = base.clone();
        Ok(Self {
            n,
            m_eq,
            dim,
            col_ptr,
            row_idx,
            base,
            values,
            diag,
            signs,
            symbolic,
            factor,
            mem,
            reg,
            w: vec![0.0; m_in],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Numeric factorization for the diagonal scaling `w = s / λ`.
    pub fn factor(&mut self, w: &[f64]) -> Result<(), FactorError> {
        self.w.copy_from_slice(w);
        while self.factor_numeric().is_err() {
            self.boost()?;
        }
        Ok(())
    }

    /// Raises the static shift after a breakdown; it stays raised for the
    /// rest of the solve.
    fn boost(&mut self) -> Result<(), FactorError> {
        if self.reg >= MAX_REG {
            return Err(FactorError);
        }
        self.reg = (self.reg * 100.0).clamp(1e-10, MAX_REG);
        Ok(())
    }

    fn factor_numeric(&mut self) -> Result<(), FactorError> {
        let w = &self.w;
        self.values.copy_from_slice(&self.base);
        let off = self.n + self.m_eq;
        for i in 0..self.dim {
            let p = self.diag[i];
            if i < self.n {
                self.values[p] += self.reg;
            } else if i < off {
                self.values[p] -= self.reg;
            } else {
                self.values[p] -= w[i - off] + self.reg;
            }
        }
        let sym =
            SymbolicSparseColMatRef::new_checked(self.dim, self.dim, &self.col_ptr, None, &self.row_idx);
        let mat = SparseColMatRef::new(sym, &self.values);
        let regularization = LdltRegularization {
            dynamic_regularization_signs: Some(&self.signs),
            dynamic_regularization_delta: 1e-7,
            dynamic_regularization_epsilon: 1e-13,
        };
        self.symbolic
            .factorize_numeric_ldlt(
                &mut self.factor,
                mat,
                Side::Upper,
                regularization,
                Par::Seq,
                MemStack::new(&mut self.mem),
                Spec::default(),
            )
            .map_err(|_| FactorError)?;
        if self.factor.iter().any(|v| !v.is_finite()) {
            return Err(FactorError);
        }
        Ok(())
    }

    fn raw_solve(&mut self, rhs: &mut [f64]) {
        let ldlt = LdltRef::new(&self.symbolic, &self.factor);
        ldlt.solve_in_place_with_conj(
            Conj::No,
            MatMut::from_column_major_slice_mut(rhs, self.dim, 1),
            Par::Seq,
            MemStack::new(&mut self.mem),
        );
    }

    /// Product with the unshifted KKT matrix.
    fn mul_exact(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for c in 0..self.dim {
            for p in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[p];
                let v = self.base[p];
                out[r] += v * x[c];
                if r != c {
                    out[c] += v * x[r];
                }
            }
        }
        let off = self.n + self.m_eq;
        for (i, wi) in self.w.iter().enumerate() {
            out[off + i] -= wi * x[off + i];
        }
        out
    }

    /// Solves `K x = rhs` in place, refining against the unshifted matrix.
    /// A non-finite result triggers refactorization with a larger shift.
    pub fn solve(&mut self, rhs: &mut [f64], refine_steps: usize) -> Result<(), FactorError> {
        let b = rhs.to_vec();
        loop {
            rhs.copy_from_slice(&b);
            self.refined_solve(rhs, &b, refine_steps);
            if rhs.iter().all(|v| v.is_finite()) {
                return Ok(());
            }
            self.boost()?;
            while self.factor_numeric().is_err() {
                self.boost()?;
            }
        }
    }

    /// Refinement stops as soon as the residual no longer shrinks.
    fn refined_solve(&mut self, rhs: &mut [f64], b: &[f64], refine_steps: usize) {
        self.raw_solve(rhs);
        let bnorm = norm_inf(b);
        let residual = |this: &Self, x: &[f64]| -> Vec<f64> {
            let kx = this.mul_exact(x);
            b.iter().zip(&kx).map(|(bi, ki)| bi - ki).collect()
        };
        let mut r = residual(self, rhs);
        let mut rnorm = norm_inf(&r);
        for _ in 0..refine_steps {
            if !(rnorm > 1e-15 * (1.0 + bnorm)) {
                break;
            }
            self.raw_solve(&mut r);
            let trial: Vec<f64> = rhs.iter().zip(&r).map(|(x, d)| x + d).collect();
            let r_new = residual(self, &trial);
            let n_new = norm_inf(&r_new);
            if !(n_new < rnorm) {
                break;
            }
            rhs.copy_from_slice(&trial);
            r = r_new;
            rnorm = n_new;
        }
    }
}

/// Max-norm that maps NaN to infinity.
fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| if x.is_nan() { f64::INFINITY } else { m.max(x.abs()) })
}
