use faer::sparse::{SparseColMat, Triplet};
use faer::Side;

use super::linsys::KktSystem;
use super::problem::{ConstraintRows, QpProblem};
use super::{KktResiduals, QpError, QpSolution, SolveStatus, SolverOptions};

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Relative primal infeasibility, dual infeasibility and complementarity of
/// `(z, y, λ)` for the unscaled problem.
pub fn kkt_residuals(problem: &QpProblem, z: &[f64], eq_duals: &[f64], ineq_duals: &[f64]) -> KktResiduals {
    let eq = problem.equalities();
    let ineq = problem.inequalities();
    let b = eq.rhs();
    let h = ineq.rhs();

    let az = eq.mul(z);
    let gz = ineq.mul(z);
    let p_eq = az.iter().zip(b).fold(0.0f64, |m, (a, bi)| m.max((a - bi).abs()));
    let p_in = gz.iter().zip(h).fold(0.0f64, |m, (g, hi)| m.max(g - hi));
    let primal = p_eq.max(p_in).max(0.0) / (1.0 + norm_inf(b).max(norm_inf(h)));

    let qz = problem.quad_mul(z);
    let mut rd: Vec<f64> = qz.iter().zip(problem.linear()).map(|(q, c)| q + c).collect();
    eq.mul_t_add(eq_duals, &mut rd);
    ineq.mul_t_add(ineq_duals, &mut rd);
    let neg_dual = ineq_duals.iter().fold(0.0f64, |m, l| m.max(-l));
    let dual = norm_inf(&rd).max(neg_dual) / (1.0 + norm_inf(problem.linear()).max(norm_inf(&qz)));

    let compl: f64 = ineq_duals
        .iter()
        .zip(gz.iter().zip(h))
        .map(|(l, (g, hi))| (l.max(0.0) * (hi - g)).abs())
        .sum();
    let gap = compl / (1.0 + problem.objective(z).abs());
    KktResiduals { primal, dual, gap }
}

fn check_convex(problem: &QpProblem) -> Result<(), QpError> {
    let entries = problem.quadratic_entries();
    if entries.is_empty() {
        return Ok(());
    }
    let mut cols: Vec<usize> = entries.iter().flat_map(|&(i, j, _)| [i, j]).collect();
    cols.sort_unstable();
    cols.dedup();
    let local = |c: usize| cols.binary_search(&c).unwrap();
    let mut trip: Vec<(usize, usize, f64)> = entries.iter().map(|&(i, j, v)| (local(i), local(j), v)).collect();
    trip.sort_by_key(|e| (e.1, e.0));
    let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(trip.len() + cols.len());
    for t in trip {
        match merged.last_mut() {
            Some(l) if (l.0, l.1) == (t.0, t.1) => l.2 += t.2,
            _ => merged.push(t),
        }
    }
    let scale = merged.iter().fold(0.0f64, |m, t| m.max(t.2.abs()));
    let shift = 1e-9 * (1.0 + scale);
    let k = cols.len();
    let mut with_diag: Vec<Triplet<usize, usize, f64>> = merged.iter().map(|&(i, j, v)| Triplet::new(i, j, v)).collect();
    for i in 0..k {
        with_diag.push(Triplet::new(i, i, shift));
    }
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(k, k, &with_diag)
        .map_err(|_| QpError::Dimension("quadratic term".into()))?;
    mat.sp_cholesky(Side::Upper).map(|_| ()).map_err(|_| QpError::NotConvex)
}

/// Row- and objective-scaled copy of a problem. Empty rows are removed.
struct Scaled {
    quad: Vec<(usize, usize, f64)>,
    c: Vec<f64>,
    eq: ConstraintRows,
    ineq: ConstraintRows,
    eq_src: Vec<(usize, f64)>,
    ineq_src: Vec<(usize, f64)>,
    cost_scale: f64,
    trivially_infeasible: bool,
}

impl Scaled {
    fn new(problem: &QpProblem) -> Self {
        let qmax = problem.quadratic_entries().iter().fold(0.0f64, |m, t| m.max(t.2.abs()));
        let cost_scale = 1.0 / (1.0f64).max(norm_inf(problem.linear())).max(qmax);
        let quad = problem
            .quadratic_entries()
            .iter()
            .map(|&(i, j, v)| (i, j, v * cost_scale))
            .collect();
        let c = problem.linear().iter().map(|v| v * cost_scale).collect();
        let mut trivially_infeasible = false;
        let mut scale_rows = |rows: &ConstraintRows, is_eq: bool| {
            let mut out = ConstraintRows::default();
            let mut src = Vec::new();
            for (i, ((cols, vals), rhs)) in rows.iter().enumerate() {
                let amax = norm_inf(vals);
                if amax == 0.0 {
                    let bad = if is_eq { rhs.abs() > 1e-9 } else { rhs < -1e-9 };
                    trivially_infeasible |= bad;
                    continue;
                }
                let s = 1.0 / amax;
                let terms: Vec<(usize, f64)> = cols.iter().zip(vals).map(|(&j, &a)| (j, a * s)).collect();
                out.push(&terms, rhs * s);
                src.push((i, s));
            }
            (out, src)
        };
        let (eq, eq_src) = scale_rows(problem.equalities(), true);
        let (ineq, ineq_src) = scale_rows(problem.inequalities(), false);
        Self {
            quad,
            c,
            eq,
            ineq,
            eq_src,
            ineq_src,
            cost_scale,
            trivially_infeasible,
        }
    }

    fn quad_mul(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; z.len()];
        for &(i, j, v) in &self.quad {
            out[i] += v * z[j];
            if i != j {
                out[j] += v * z[i];
            }
        }
        out
    }

    fn unscale_duals(&self, y: &[f64], lam: &[f64], m_eq: usize, m_in: usize) -> (Vec<f64>, Vec<f64>) {
        let mut eq_duals = vec![0.0; m_eq];
        for (&(i, s), v) in self.eq_src.iter().zip(y) {
            eq_duals[i] = v * s / self.cost_scale;
        }
        let mut ineq_duals = vec![0.0; m_in];
        for (&(i, s), v) in self.ineq_src.iter().zip(lam) {
            ineq_duals[i] = v * s / self.cost_scale;
        }
        (eq_duals, ineq_duals)
    }
}

fn max_step(x: &[f64], dx: &[f64]) -> f64 {
    x.iter()
        .zip(dx)
        .filter(|(_, d)| **d < 0.0)
        .map(|(v, d)| -v / d)
        .fold(f64::INFINITY, f64::min)
}

/// Solves a convex QP with a Mehrotra predictor-corrector interior-point
/// method. Deterministic for identical inputs.
pub fn solve(problem: &QpProblem, options: &SolverOptions) -> Result<QpSolution, QpError> {
    let n = problem.num_vars();
    for (rows, what) in [(problem.equalities(), "equality"), (problem.inequalities(), "inequality")] {
        if let Some(bad) = (0..rows.len()).flat_map(|i| rows.row(i).0.to_vec()).find(|&j| j >= n) {
            return Err(QpError::Dimension(format!("{what} row references column {bad} of {n}")));
        }
    }
    if problem.quadratic_entries().iter().any(|&(_, j, _)| j >= n) {
        return Err(QpError::Dimension("quadratic entry out of range".into()));
    }
    check_convex(problem)?;

    let m_eq_orig = problem.equalities().len();
    let m_in_orig = problem.inequalities().len();
    let sc = Scaled::new(problem);
    if sc.trivially_infeasible {
        let z = vec![0.0; n];
        return Ok(QpSolution {
            objective: problem.objective(&z),
            residuals: kkt_residuals(problem, &z, &vec![0.0; m_eq_orig], &vec![0.0; m_in_orig]),
            z,
            eq_duals: vec![0.0; m_eq_orig],
            ineq_duals: vec![0.0; m_in_orig],
            status: SolveStatus::Infeasible,
            iterations: 0,
        });
    }

    let m_eq = sc.eq.len();
    let m = sc.ineq.len();
    let b = sc.eq.rhs().to_vec();
    let h = sc.ineq.rhs().to_vec();
    let bnorm = norm_inf(&b);
    let hnorm = norm_inf(&h);
    let cnorm = norm_inf(&sc.c);

    let mut kkt = KktSystem::new(n, &sc.quad, &sc.eq, &sc.ineq, options.regularization)
        .map_err(|_| QpError::Numerical { iteration: 0 })?;
    let dim = kkt.dim();

    // initial point: least-squares slack problem with W = I
    kkt.factor(&vec![1.0; m]).map_err(|_| QpError::Numerical { iteration: 0 })?;
    let mut rhs = vec![0.0; dim];
    for j in 0..n {
        rhs[j] = -sc.c[j];
    }
    rhs[n..n + m_eq].copy_from_slice(&b);
    rhs[n + m_eq..].copy_from_slice(&h);
    kkt.solve(&mut rhs, options.refine_steps).map_err(|_| QpError::Numerical { iteration: 0 })?;
    let mut z = rhs[..n].to_vec();
    let mut y = rhs[n..n + m_eq].to_vec();
    let lam_hat = rhs[n + m_eq..].to_vec();
    let mut s: Vec<f64> = lam_hat.iter().map(|v| -v).collect();
    let mut lam = lam_hat;
    if m > 0 {
        let ap = s.iter().fold(f64::NEG_INFINITY, |a, v| a.max(-v));
        if ap >= -1e-8 {
            s.iter_mut().for_each(|v| *v += 1.0 + ap);
        }
        let ad = lam.iter().fold(f64::NEG_INFINITY, |a, v| a.max(-v));
        if ad >= -1e-8 {
            lam.iter_mut().for_each(|v| *v += 1.0 + ad);
        }
    }

    let tol = options.tolerance;
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;
    let mut best: Option<(f64, Vec<f64>, Vec<f64>, Vec<f64>)> = None;

    for iter in 0..=options.max_iterations {
        iterations = iter;
        let qz = sc.quad_mul(&z);
        let mut rd: Vec<f64> = qz.iter().zip(&sc.c).map(|(q, c)| q + c).collect();
        sc.eq.mul_t_add(&y, &mut rd);
        sc.ineq.mul_t_add(&lam, &mut rd);
        let rp: Vec<f64> = sc.eq.mul(&z).iter().zip(&b).map(|(a, bi)| a - bi).collect();
        let gz = sc.ineq.mul(&z);
        let ri: Vec<f64> = (0..m).map(|i| gz[i] + s[i] - h[i]).collect();
        let mu = if m > 0 { dot(&s, &lam) / m as f64 } else { 0.0 };

        let pobj = 0.5 * dot(&z, &qz) + dot(&sc.c, &z);
        let pres = (norm_inf(&rp) / (1.0 + bnorm)).max(norm_inf(&ri) / (1.0 + hnorm));
        let dres = norm_inf(&rd) / (1.0 + cnorm);
        let gap = if m > 0 { dot(&s, &lam) / (1.0 + pobj.abs()) } else { 0.0 };
        let merit = pres.max(dres).max(gap);
        if best.as_ref().is_none_or(|b| merit < b.0) {
            best = Some((merit, z.clone(), y.clone(), lam.clone()));
        }
        if pres <= tol && dres <= tol && gap <= tol {
            status = SolveStatus::Optimal;
            break;
        }

        // Farkas direction: Aᵀy + Gᵀλ ≈ 0 with bᵀy + hᵀλ < 0
        let cert = -(dot(&b, &y) + dot(&h, &lam));
        if iter > 5 && cert > 0.0 && pres > tol {
            let mut farkas = vec![0.0; n];
            sc.eq.mul_t_add(&y, &mut farkas);
            sc.ineq.mul_t_add(&lam, &mut farkas);
            if norm_inf(&farkas) / cert < 1e-9 || norm_inf(&lam).max(norm_inf(&y)) > 1e13 {
                status = SolveStatus::Infeasible;
                break;
            }
        }
        if iter == options.max_iterations {
            break;
        }

        let w: Vec<f64> = s.iter().zip(&lam).map(|(si, li)| si / li).collect();
        kkt.factor(&w).map_err(|_| QpError::Numerical { iteration: iter })?;

        // predictor
        let mut rhs = vec![0.0; dim];
        for j in 0..n {
            rhs[j] = -rd[j];
        }
        for i in 0..m_eq {
            rhs[n + i] = -rp[i];
        }
        for i in 0..m {
            rhs[n + m_eq + i] = -ri[i] + s[i];
        }
        kkt.solve(&mut rhs, options.refine_steps).map_err(|_| QpError::Numerical { iteration: iter })?;
        let dl_aff = &rhs[n + m_eq..];
        let ds_aff: Vec<f64> = (0..m).map(|i| -s[i] - w[i] * dl_aff[i]).collect();
        let sigma = if m > 0 {
            let a = 1.0f64.min(max_step(&s, &ds_aff)).min(max_step(&lam, dl_aff));
            let mu_aff: f64 = (0..m)
                .map(|i| (s[i] + a * ds_aff[i]) * (lam[i] + a * dl_aff[i]))
                .sum::<f64>()
                / m as f64;
            (mu_aff / mu).clamp(0.0, 1.0).powi(3)
        } else {
            0.0
        };

        // corrector
        let rc: Vec<f64> = (0..m)
            .map(|i| s[i] * lam[i] + ds_aff[i] * dl_aff[i] - sigma * mu)
            .collect();
        let mut rhs2 = vec![0.0; dim];
        for j in 0..n {
            rhs2[j] = -rd[j];
        }
        for i in 0..m_eq {
            rhs2[n + i] = -rp[i];
        }
        for i in 0..m {
            rhs2[n + m_eq + i] = -ri[i] + rc[i] / lam[i];
        }
        kkt.solve(&mut rhs2, options.refine_steps).map_err(|_| QpError::Numerical { iteration: iter })?;
        let (dz, rest) = rhs2.split_at(n);
        let (dy, dl) = rest.split_at(m_eq);
        let ds: Vec<f64> = (0..m).map(|i| -(rc[i] + s[i] * dl[i]) / lam[i]).collect();

        let alpha = if m > 0 {
            1.0f64.min(0.99 * max_step(&s, &ds).min(max_step(&lam, dl)))
        } else {
            1.0
        };
        if !alpha.is_finite() || dz.iter().chain(dl.iter()).any(|v| !v.is_finite()) {
            return Err(QpError::Numerical { iteration: iter });
        }
        for j in 0..n {
            z[j] += alpha * dz[j];
        }
        for i in 0..m_eq {
            y[i] += alpha * dy[i];
        }
        for i in 0..m {
            s[i] += alpha * ds[i];
            lam[i] += alpha * dl[i];
        }
    }

    if status == SolveStatus::MaxIterations {
        if let Some((_, bz, by, bl)) = best {
            z = bz;
            y = by;
            lam = bl;
        }
    }
    let (eq_duals, ineq_duals) = sc.unscale_duals(&y, &lam, m_eq_orig, m_in_orig);
    let residuals = kkt_residuals(problem, &z, &eq_duals, &ineq_duals);
    Ok(QpSolution {
        objective: problem.objective(&z),
        z,
        eq_duals,
        ineq_duals,
        status,
        iterations,
        residuals,
    })
}
