//! Oracles shared by the integration tests. None of them call into the
//! solver or assembler they check.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use robust_dispatch::network::Line;
use robust_dispatch::qp::QpProblem;

/// Dense strictly convex QP `min ½zᵀQz + cᵀz  s.t.  Az = b, Gz <= h`.
#[derive(Debug, Clone)]
pub struct DenseQp {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

impl DenseQp {
    /// Feasible by construction: rows are tight or slack at a random point.
    pub fn random(rng: &mut impl Rng) -> Self {
        let n = rng.gen_range(1..=8);
        let m_eq = rng.gen_range(0..=(n - 1).min(2));
        let m_in = rng.gen_range(0..=6);
        let r = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let q = r.transpose() * &r + DMatrix::identity(n, n) * rng.gen_range(0.05..1.0);
        let c = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
        let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
        let a = DMatrix::from_fn(m_eq, n, |_, _| rng.gen_range(-1.0..1.0));
        let b = &a * &x0;
        let g = DMatrix::from_fn(m_in, n, |_, _| rng.gen_range(-1.0..1.0));
        let slack = DVector::from_fn(m_in, |_, _| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..2.0) });
        let h = &g * &x0 + slack;
        Self { q, c, a, b, g, h }
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.q * z)) + self.c.dot(z)
    }

    pub fn to_problem(&self) -> QpProblem {
        let n = self.n();
        let mut qp = QpProblem::new();
        qp.add_variables("z", n);
        for i in 0..n {
            for j in i..n {
                if self.q[(i, j)] != 0.0 {
                    qp.add_quadratic(i, j, self.q[(i, j)]);
                }
            }
            qp.add_linear(i, self.c[i]);
        }
        let row = |m: &DMatrix<f64>, r: usize| (0..n).map(|j| (j, m[(r, j)])).collect::<Vec<_>>();
        for r in 0..self.a.nrows() {
            qp.add_eq(&row(&self.a, r), self.b[r]);
        }
        for r in 0..self.g.nrows() {
            qp.add_le(&row(&self.g, r), self.h[r]);
        }
        qp
    }

    /// Enumerates every active set, solves its equality-constrained KKT
    /// system and keeps the primal-feasible, dual-feasible point.
    pub fn active_set_solution(&self) -> Option<DVector<f64>> {
        let n = self.n();
        let m_eq = self.a.nrows();
        let m_in = self.g.nrows();
        let mut best: Option<(f64, DVector<f64>)> = None;
        for mask in 0..1usize << m_in {
            let active: Vec<usize> = (0..m_in).filter(|i| mask >> i & 1 == 1).collect();
            let k = m_eq + active.len();
            if k > n {
                continue;
            }
            let mut kkt = DMatrix::zeros(n + k, n + k);
            let mut rhs = DVector::zeros(n + k);
            kkt.view_mut((0, 0), (n, n)).copy_from(&self.q);
            rhs.rows_mut(0, n).copy_from(&(-&self.c));
            for r in 0..k {
                let (row, val) = if r < m_eq {
                    (self.a.row(r).clone_owned(), self.b[r])
                } else {
                    (self.g.row(active[r - m_eq]).clone_owned(), self.h[active[r - m_eq]])
                };
                for j in 0..n {
                    kkt[(n + r, j)] = row[j];
                    kkt[(j, n + r)] = row[j];
                }
                rhs[n + r] = val;
            }
            let lu = kkt.lu();
            let Some(sol) = lu.solve(&rhs) else { continue };
            let z = sol.rows(0, n).clone_owned();
            // Qz + c + Rᵀλ = 0 with λ >= 0 on the active inequalities
            let duals_ok = (m_eq..k).all(|r| sol[n + r] >= -1e-9);
            let gz = &self.g * &z;
            let primal_ok = (0..m_in).all(|i| gz[i] <= self.h[i] + 1e-9);
            if duals_ok && primal_ok {
                let f = self.objective(&z);
                if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                    best = Some((f, z));
                }
            }
        }
        best.map(|(_, z)| z)
    }
}

/// Line flows from a direct angle solve `B'θ = p` with `θ_slack = 0`.
pub fn dc_flows(buses: usize, lines: &[Line], slack: usize, p: &[f64]) -> Vec<f64> {
    let mut b = DMatrix::zeros(buses, buses);
    for l in lines {
        let (i, j, y) = (l.from_bus - 1, l.to_bus - 1, 1.0 / l.reactance);
        b[(i, i)] += y;
        b[(j, j)] += y;
        b[(i, j)] -= y;
        b[(j, i)] -= y;
    }
    let keep: Vec<usize> = (0..buses).filter(|&i| i != slack - 1).collect();
    let reduced = DMatrix::from_fn(keep.len(), keep.len(), |r, c| b[(keep[r], keep[c])]);
    let rhs = DVector::from_iterator(keep.len(), keep.iter().map(|&i| p[i]));
    let theta_r = reduced.lu().solve(&rhs).expect("connected network");
    let mut theta = vec![0.0; buses];
    for (r, &i) in keep.iter().enumerate() {
        theta[i] = theta_r[r];
    }
    lines
        .iter()
        .map(|l| (theta[l.from_bus - 1] - theta[l.to_bus - 1]) / l.reactance)
        .collect()
}

/// Sorted-tail CVaR: the mean of the worst `K(1-β)` losses, with the
/// boundary sample weighted fractionally.
pub fn tail_mean_cvar(losses: &[f64], beta: f64) -> f64 {
    let mut l = losses.to_vec();
    l.sort_by(|a, b| b.total_cmp(a));
    let k = l.len() as f64;
    let mut mass = k * (1.0 - beta);
    if mass <= 0.0 {
        return l[0];
    }
    let total = mass;
    let mut acc = 0.0;
    for &x in &l {
        let w = mass.min(1.0);
        acc += w * x;
        mass -= w;
        if mass <= 0.0 {
            break;
        }
    }
    acc / total
}
