//! Wind forecasts, sample sets and the sample-based CVaR of curtailment and
//! deficiency losses.
//!
//! For a loss sample `ℓ₁..ℓ_K` and risk level `β` the CVaR is
//!
//! ```text
//!     min_γ  γ + 1/(K(1-β)) · Σ_k [ℓ_k - γ]⁺
//! ```
//!
//! [`empirical_cvar`] evaluates this directly by sorting; [`build_cvar_blocks`]
//! emits the equivalent linear program (auxiliaries `γ`, `v`, `μ`) into a QP so
//! the box bounds `δ⁻`, `δ⁺` can be optimized jointly.

use std::io::Read;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qp::QpProblem;
use crate::robust::BoxScaling;

#[derive(Debug, Error)]
pub enum CvarError {
    #[error("risk level must lie in [0, 1), got {0}")]
    RiskLevel(f64),
    #[error("empty loss sample")]
    EmptySample,
    #[error("wind farm {farm}: {what}")]
    Wind { farm: usize, what: String },
    #[error("sample csv: {0}")]
    Csv(String),
}

/// Curtailed wind `[w - (w̄ + δ⁺)]⁺`.
pub fn loss_curtail(w: f64, forecast: f64, delta_plus: f64) -> f64 {
    (w - (forecast + delta_plus)).max(0.0)
}

/// Deficient wind `[(w̄ - δ⁻) - w]⁺`.
pub fn loss_deficit(w: f64, forecast: f64, delta_minus: f64) -> f64 {
    ((forecast - delta_minus) - w).max(0.0)
}

fn check_beta(beta: f64) -> Result<(), CvarError> {
    if (0.0..1.0).contains(&beta) {
        Ok(())
    } else {
        Err(CvarError::RiskLevel(beta))
    }
}

/// Sort-based β-CVaR of an equally weighted sample.
///
/// The objective is piecewise linear in `γ` with breakpoints at the sample
/// values, so the minimum is taken over those breakpoints.
pub fn empirical_cvar(losses: &[f64], beta: f64) -> Result<f64, CvarError> {
    check_beta(beta)?;
    if losses.is_empty() {
        return Err(CvarError::EmptySample);
    }
    let mut sorted = losses.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let k = sorted.len();
    let weight = 1.0 / (k as f64 * (1.0 - beta));
    // suffix[j] = Σ_{i≥j} sorted[i]
    let mut suffix = vec![0.0; k + 1];
    for j in (0..k).rev() {
        suffix[j] = suffix[j + 1] + sorted[j];
    }
    let mut best = f64::INFINITY;
    for j in 0..k {
        let gamma = sorted[j];
        // samples strictly above gamma start after the last tie
        let mut above = j + 1;
        while above < k && sorted[above] <= gamma {
            above += 1;
        }
        let excess = suffix[above] - (k - above) as f64 * gamma;
        best = best.min(gamma + weight * excess);
    }
    Ok(best)
}

/// β-quantile (VaR) of an equally weighted sample.
pub fn value_at_risk(losses: &[f64], beta: f64) -> Result<f64, CvarError> {
    check_beta(beta)?;
    if losses.is_empty() {
        return Err(CvarError::EmptySample);
    }
    let mut sorted = losses.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let k = sorted.len();
    // smallest sample whose empirical cdf reaches beta
    let idx = (0..k).find(|&j| (j + 1) as f64 >= beta * k as f64 - 1e-12).unwrap_or(k - 1);
    Ok(sorted[idx])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSide {
    /// wind above `w̄ + δ⁺`
    Curtailment,
    /// wind below `w̄ - δ⁻`
    Deficiency,
}

impl LossSide {
    pub fn loss(self, w: f64, forecast: f64, delta_minus: f64, delta_plus: f64) -> f64 {
        match self {
            LossSide::Curtailment => loss_curtail(w, forecast, delta_plus),
            LossSide::Deficiency => loss_deficit(w, forecast, delta_minus),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindFarm {
    /// 1-based bus id
    pub bus: usize,
    /// MW per slot
    pub forecast: Vec<f64>,
    /// `samples[t]` holds the `K_t` historical outputs (MW) for slot `t`
    pub samples: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WindModel {
    pub farms: Vec<WindFarm>,
}

impl WindModel {
    pub fn num_farms(&self) -> usize {
        self.farms.len()
    }

    pub fn validate(&self, horizon: usize) -> Result<(), CvarError> {
        for (i, f) in self.farms.iter().enumerate() {
            let err = |what: String| CvarError::Wind { farm: i, what };
            if f.forecast.len() != horizon {
                return Err(err(format!("forecast has {} slots, expected {horizon}", f.forecast.len())));
            }
            if f.samples.len() != horizon {
                return Err(err(format!("samples cover {} slots, expected {horizon}", f.samples.len())));
            }
            if let Some(t) = f.forecast.iter().position(|v| !(*v >= 0.0)) {
                return Err(err(format!("negative forecast in slot {t}")));
            }
            for (t, s) in f.samples.iter().enumerate() {
                if s.is_empty() {
                    return Err(err(format!("no samples in slot {t}")));
                }
                if s.iter().any(|v| !(*v >= 0.0)) {
                    return Err(err(format!("negative sample in slot {t}")));
                }
            }
        }
        Ok(())
    }

    /// Sort-based CVaR of one farm, slot and side at the given box bounds.
    pub fn cvar_at(
        &self,
        farm: usize,
        slot: usize,
        side: LossSide,
        delta_minus: f64,
        delta_plus: f64,
        beta: f64,
    ) -> Result<f64, CvarError> {
        let f = &self.farms[farm];
        let losses: Vec<f64> = f.samples[slot]
            .iter()
            .map(|&w| side.loss(w, f.forecast[slot], delta_minus, delta_plus))
            .collect();
        empirical_cvar(&losses, beta)
    }
}

/// Seeded stand-in samples: `max(0, w̄·(1 + spread·u))` with `u ~ U[-1, 1]`.
pub fn synthetic_samples(forecast: &[f64], k: usize, spread: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    forecast
        .iter()
        .map(|&w| {
            (0..k)
                .map(|_| (w * (1.0 + spread * rng.gen_range(-1.0..=1.0))).max(0.0))
                .collect()
        })
        .collect()
}

/// Reads `bus,slot,k,value_mw` records (1-based slot and k) into
/// `samples[farm][slot]`, matching farms by bus.
pub fn read_samples_csv<R: Read>(
    reader: R,
    farm_buses: &[usize],
    horizon: usize,
) -> Result<Vec<Vec<Vec<f64>>>, CvarError> {
    #[derive(Deserialize)]
    struct Record {
        bus: usize,
        slot: usize,
        k: usize,
        value_mw: f64,
    }
    let mut cells: Vec<Vec<Vec<Option<f64>>>> = vec![vec![Vec::new(); horizon]; farm_buses.len()];
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    for (line, rec) in rdr.deserialize::<Record>().enumerate() {
        let rec = rec.map_err(|e| CvarError::Csv(format!("record {}: {e}", line + 1)))?;
        let farm = farm_buses
            .iter()
            .position(|&b| b == rec.bus)
            .ok_or_else(|| CvarError::Csv(format!("record {}: no wind farm at bus {}", line + 1, rec.bus)))?;
        if rec.slot == 0 || rec.slot > horizon || rec.k == 0 {
            return Err(CvarError::Csv(format!("record {}: slot/k out of range", line + 1)));
        }
        let cell = &mut cells[farm][rec.slot - 1];
        if cell.len() < rec.k {
            cell.resize(rec.k, None);
        }
        if cell[rec.k - 1].replace(rec.value_mw).is_some() {
            return Err(CvarError::Csv(format!("record {}: duplicate sample", line + 1)));
        }
    }
    cells
        .into_iter()
        .enumerate()
        .map(|(f, slots)| {
            slots
                .into_iter()
                .enumerate()
                .map(|(t, s)| {
                    s.into_iter().collect::<Option<Vec<f64>>>().filter(|v| !v.is_empty()).ok_or_else(|| {
                        CvarError::Csv(format!("bus {} slot {}: missing samples", farm_buses[f], t + 1))
                    })
                })
                .collect()
        })
        .collect()
}

/// Column indices of one `(farm, slot, side)` CVaR block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvarTerm {
    pub farm: usize,
    pub slot: usize,
    pub side: LossSide,
    pub gamma: usize,
    pub v: Range<usize>,
    pub mu: Range<usize>,
    /// `1 / (K (1-β))`
    pub weight: f64,
    pub eta: f64,
}

impl CvarTerm {
    /// `γ + weight · Σ v` at `z`.
    pub fn value(&self, z: &[f64]) -> f64 {
        z[self.gamma] + self.weight * z[self.v.clone()].iter().sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvarBlock {
    pub beta: f64,
    pub terms: Vec<CvarTerm>,
}

impl CvarBlock {
    pub fn term(&self, farm: usize, slot: usize, side: LossSide) -> Option<&CvarTerm> {
        self.terms
            .iter()
            .find(|t| t.farm == farm && t.slot == slot && t.side == side)
    }

    /// Σ over farms and slots of the block values for one side.
    pub fn total(&self, side: LossSide, z: &[f64]) -> f64 {
        self.terms.iter().filter(|t| t.side == side).map(|t| t.value(z)).sum()
    }
}

/// Emits, for every farm, slot, sample `k` and requested side,
///
/// ```text
///     v_k >= 0,  μ_k >= 0,  v_k + γ >= μ_k,
///     μ_k >= w_k - w̄ - δ⁺        (curtailment)
///     μ_k >= w̄ - δ⁻ - w_k        (deficiency)
/// ```
///
/// and adds `η (γ + Σ_k v_k / (K(1-β)))` to the objective.
pub fn build_cvar_blocks(
    qp: &mut QpProblem,
    wind: &WindModel,
    beta: f64,
    sides: &[(LossSide, f64)],
    bounds: &BoxScaling,
) -> Result<CvarBlock, CvarError> {
    check_beta(beta)?;
    let mut terms = Vec::new();
    for &(side, eta) in sides {
        let tag = match side {
            LossSide::Curtailment => "1",
            LossSide::Deficiency => "2",
        };
        for (i, farm) in wind.farms.iter().enumerate() {
            for (t, samples) in farm.samples.iter().enumerate() {
                let k = samples.len();
                let gamma = qp.add_variables(format!("gamma{tag}[{i},{t}]"), 1).start;
                let v = qp.add_variables(format!("v{tag}[{i},{t}]"), k);
                let mu = qp.add_variables(format!("mu{tag}[{i},{t}]"), k);
                let weight = 1.0 / (k as f64 * (1.0 - beta));
                qp.add_linear(gamma, eta);
                for (j, &w) in samples.iter().enumerate() {
                    let (vj, mj) = (v.start + j, mu.start + j);
                    qp.add_linear(vj, eta * weight);
                    qp.add_lower_bound(vj, 0.0);
                    qp.add_lower_bound(mj, 0.0);
                    qp.add_le(&[(mj, 1.0), (vj, -1.0), (gamma, -1.0)], 0.0);
                    match side {
                        // -μ - δ⁺ <= w̄ - w
                        LossSide::Curtailment => {
                            qp.add_le(&[(mj, -1.0), (bounds.plus(i, t), -1.0)], farm.forecast[t] - w)
                        }
                        // -μ - δ⁻ <= w - w̄
                        LossSide::Deficiency => {
                            qp.add_le(&[(mj, -1.0), (bounds.minus(i, t), -1.0)], w - farm.forecast[t])
                        }
                    };
                }
                terms.push(CvarTerm {
                    farm: i,
                    slot: t,
                    side,
                    gamma,
                    v,
                    mu,
                    weight,
                    eta,
                });
            }
        }
    }
    Ok(CvarBlock { beta, terms })
}
