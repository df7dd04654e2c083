//! Epistemic uncertainty over an ensemble of predictive models.
//!
//! Classification disagreement uses the closed-form mutual information between
//! model weights and the categorical output, `H(mean) - mean(H)`. The Gaussian
//! bearing head has no closed-form MI, so it is estimated with pairwise-distance
//! estimators over the ensemble components, using either the KL divergence or
//! the Bhattacharyya distance. Everything is in nats.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqmodel::{forward, ActionRow, ModelWeights, StepPrediction};
use crate::vehicle::SIGMA_MIN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairwiseDistance {
    Kl,
    Bhattacharyya,
}

/// Predictions of all ensemble members for one query; members share the horizon
/// and are weighted uniformly.
#[derive(Debug, Clone)]
pub struct EnsembleOutput {
    members: Vec<Vec<StepPrediction>>,
}

impl EnsembleOutput {
    pub fn new(members: Vec<Vec<StepPrediction>>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::domain("an ensemble needs at least 2 members"));
        }
        let h = members[0].len();
        if h == 0 || members.iter().any(|m| m.len() != h) {
            return Err(Error::domain("ensemble members must share a non-zero horizon"));
        }
        Ok(EnsembleOutput { members })
    }

    pub fn members(&self) -> &[Vec<StepPrediction>] {
        &self.members
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn horizon(&self) -> usize {
        self.members[0].len()
    }

    /// Per-step mean of the member event distributions and bearing means.
    pub fn mean_predictions(&self) -> Vec<StepPrediction> {
        let m = self.members.len() as f64;
        (0..self.horizon())
            .map(|t| {
                let k = self.members[0][t].event_probs.len();
                let mut probs = vec![0.0; k];
                let mut mu = 0.0;
                let mut var = 0.0;
                for member in &self.members {
                    for (p, q) in probs.iter_mut().zip(&member[t].event_probs) {
                        *p += q / m;
                    }
                    mu += member[t].bearing_mu / m;
                    var += member[t].bearing_var / m;
                }
                StepPrediction {
                    event_probs: probs,
                    bearing_mu: mu,
                    bearing_var: var,
                }
            })
            .collect()
    }
}

/// Per-step uncertainty summary; `sigma` is the scalar consumed by the MPC
/// reward.
#[derive(Debug, Clone)]
pub struct UncertaintyTrace {
    pub mi_class: Vec<f64>,
    pub mi_bearing_kl: Vec<f64>,
    pub mi_bearing_bhatt: Vec<f64>,
    pub sigma: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UncertaintyWeights {
    pub w_class: f64,
    pub w_bearing: f64,
    pub distance: PairwiseDistance,
}

impl Default for UncertaintyWeights {
    fn default() -> Self {
        UncertaintyWeights {
            w_class: 1.0,
            w_bearing: 1.0,
            distance: PairwiseDistance::Kl,
        }
    }
}

fn entropy(probs: &[f64]) -> f64 {
    probs
        .iter()
        .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
        .sum()
}

/// Closed-form categorical mutual information: `H(mean) - mean(H)`, nats.
pub fn categorical_mi(member_probs: &[Vec<f64>]) -> Result<f64> {
    if member_probs.len() < 2 {
        return Err(Error::domain("categorical MI needs at least 2 members"));
    }
    let k = member_probs[0].len();
    for row in member_probs {
        if row.len() != k {
            return Err(Error::domain("member distributions must share a length"));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || row.iter().any(|&p| p < 0.0) {
            return Err(Error::Domain(format!(
                "member distribution sums to {sum}, not 1"
            )));
        }
    }
    let m = member_probs.len() as f64;
    let mut mean = vec![0.0; k];
    let mut mean_entropy = 0.0;
    for row in member_probs {
        for (acc, &p) in mean.iter_mut().zip(row) {
            *acc += p / m;
        }
        mean_entropy += entropy(row) / m;
    }
    Ok((entropy(&mean) - mean_entropy).max(0.0))
}

/// KL(p1 || p2) between two univariate Gaussians.
pub fn gaussian_kl(mu1: f64, var1: f64, mu2: f64, var2: f64) -> f64 {
    ((var2 / var1).sqrt()).ln() + (var1 + (mu1 - mu2).powi(2)) / (2.0 * var2) - 0.5
}

/// Bhattacharyya distance between two univariate Gaussians.
pub fn gaussian_bhattacharyya(mu1: f64, var1: f64, mu2: f64, var2: f64) -> f64 {
    let vs = var1 + var2;
    (mu1 - mu2).powi(2) / (4.0 * vs) + 0.5 * (vs / (2.0 * (var1 * var2).sqrt())).ln()
}

/// Pairwise-distance estimate of the mutual information for an ensemble of
/// univariate Gaussians:
/// `I = -(1/M) sum_i ln[(1/M) sum_j exp(-D(p_i, p_j))]`.
pub fn gaussian_mi_paide(members: &[(f64, f64)], distance: PairwiseDistance) -> Result<f64> {
    if members.len() < 2 {
        return Err(Error::domain("PaiDE needs at least 2 members"));
    }
    for &(_, var) in members {
        if !(var > 0.0) || !var.is_finite() {
            return Err(Error::Domain(format!("non-positive variance {var}")));
        }
    }
    let m = members.len() as f64;
    let mut total = 0.0;
    for &(mu_i, var_i) in members {
        let mut inner = 0.0;
        for &(mu_j, var_j) in members {
            let d = match distance {
                PairwiseDistance::Kl => gaussian_kl(mu_i, var_i, mu_j, var_j),
                PairwiseDistance::Bhattacharyya => {
                    gaussian_bhattacharyya(mu_i, var_i, mu_j, var_j)
                }
            };
            inner += (-d).exp() / m;
        }
        total += inner.ln() / m;
    }
    Ok((-total).max(0.0))
}

/// Forward every ensemble member on the same query; member order is fixed by
/// index, and members may be evaluated concurrently.
pub fn ensemble_predict(
    models: &[ModelWeights],
    obs: &[f64],
    actions: &[ActionRow],
) -> Result<EnsembleOutput> {
    let members: Vec<Vec<StepPrediction>> = models
        .par_iter()
        .enumerate()
        .map(|(i, w)| {
            forward(w, obs, actions).map_err(|e| {
                Error::Inference {
                    layer: format!("ensemble member {i}"),
                    detail: e.to_string(),
                }
            })
        })
        .collect::<Result<_>>()?;
    EnsembleOutput::new(members)
}

/// Assemble the per-step uncertainty trace. The classification MI is
/// normalized by its `ln M` ceiling before the weighted sum so both terms are
/// comparable; the result is floored at `SIGMA_MIN`.
pub fn uncertainty_trace(
    ens: &EnsembleOutput,
    weights: &UncertaintyWeights,
) -> Result<UncertaintyTrace> {
    let m = ens.size();
    let ln_m = (m as f64).ln();
    let h = ens.horizon();
    let mut trace = UncertaintyTrace {
        mi_class: Vec::with_capacity(h),
        mi_bearing_kl: Vec::with_capacity(h),
        mi_bearing_bhatt: Vec::with_capacity(h),
        sigma: Vec::with_capacity(h),
    };
    for t in 0..h {
        let probs: Vec<Vec<f64>> = ens
            .members
            .iter()
            .map(|mem| mem[t].event_probs.clone())
            .collect();
        let gaussians: Vec<(f64, f64)> = ens
            .members
            .iter()
            .map(|mem| (mem[t].bearing_mu, mem[t].bearing_var))
            .collect();
        let mi_class = categorical_mi(&probs)?;
        let mi_kl = gaussian_mi_paide(&gaussians, PairwiseDistance::Kl)?;
        let mi_bhatt = gaussian_mi_paide(&gaussians, PairwiseDistance::Bhattacharyya)?;
        let mi_bearing = match weights.distance {
            PairwiseDistance::Kl => mi_kl,
            PairwiseDistance::Bhattacharyya => mi_bhatt,
        };
        let sigma =
            (weights.w_class * mi_class / ln_m + weights.w_bearing * mi_bearing).max(SIGMA_MIN);
        trace.mi_class.push(mi_class);
        trace.mi_bearing_kl.push(mi_kl);
        trace.mi_bearing_bhatt.push(mi_bhatt);
        trace.sigma.push(sigma);
    }
    Ok(trace)
}
