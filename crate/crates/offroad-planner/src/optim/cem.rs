//! Cross-entropy method with a diagonal Gaussian sampling distribution.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{argsort, BoxProblem};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CemConfig {
    pub population: usize,
    pub elite_frac: f64,
    pub iters: usize,
    /// Initial sampling mean; defaults to the box center.
    pub init_mean: Option<Vec<f64>>,
    /// Initial per-coordinate std; defaults to a quarter of the box width.
    pub init_std: Option<Vec<f64>>,
    pub min_std: f64,
}

impl Default for CemConfig {
    fn default() -> Self {
        CemConfig {
            population: 64,
            elite_frac: 0.125,
            iters: 50,
            init_mean: None,
            init_std: None,
            min_std: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CemResult {
    pub best_x: Vec<f64>,
    pub best_f: f64,
    /// Incumbent best objective after each iteration; non-increasing.
    pub trace: Vec<f64>,
    pub final_mean: Vec<f64>,
    pub final_std: Vec<f64>,
    pub evaluations: usize,
}

pub fn cem_minimize(problem: &BoxProblem<'_>, config: &CemConfig) -> Result<CemResult> {
    problem.validate()?;
    if !(config.elite_frac > 0.0 && config.elite_frac <= 1.0) {
        return Err(Error::domain("elite_frac must lie in (0, 1]"));
    }
    let n_elite = ((config.population as f64 * config.elite_frac).floor() as usize).max(1);
    if (config.population as f64 * config.elite_frac) < 1.0 {
        return Err(Error::domain("population * elite_frac must be >= 1"));
    }
    if problem.budget < config.population {
        return Err(Error::domain("budget must cover at least one generation"));
    }

    let dim = problem.dim;
    let mut mean = match &config.init_mean {
        Some(m) if m.len() == dim => m.clone(),
        Some(_) => return Err(Error::domain("init_mean length mismatch")),
        None => (0..dim)
            .map(|i| 0.5 * (problem.lower[i] + problem.upper[i]))
            .collect(),
    };
    let mut std = match &config.init_std {
        Some(s) if s.len() == dim => s.clone(),
        Some(_) => return Err(Error::domain("init_std length mismatch")),
        None => (0..dim)
            .map(|i| 0.25 * (problem.upper[i] - problem.lower[i]))
            .collect(),
    };
    for s in &mut std {
        *s = s.max(config.min_std);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(problem.seed);
    let mut best_x = mean.clone();
    let mut best_f = f64::INFINITY;
    let mut trace = Vec::with_capacity(config.iters);
    let mut evals = 0usize;

    for _ in 0..config.iters {
        if evals + config.population > problem.budget {
            break;
        }
        let candidates: Vec<Vec<f64>> = (0..config.population)
            .map(|_| {
                (0..dim)
                    .map(|i| {
                        let z: f64 = rng.sample(StandardNormal);
                        (mean[i] + std[i] * z).clamp(problem.lower[i], problem.upper[i])
                    })
                    .collect()
            })
            .collect();
        let fs = problem.evaluate_all(&candidates);
        evals += config.population;

        let order = argsort(&fs);
        if fs[order[0]] < best_f {
            best_f = fs[order[0]];
            best_x = candidates[order[0]].clone();
        }

        // Refit the diagonal Gaussian to the elite set.
        let elite = &order[..n_elite];
        for i in 0..dim {
            let m: f64 = elite.iter().map(|&e| candidates[e][i]).sum::<f64>() / n_elite as f64;
            let var: f64 = elite
                .iter()
                .map(|&e| {
                    let d = candidates[e][i] - m;
                    d * d
                })
                .sum::<f64>()
                / n_elite as f64;
            mean[i] = m;
            std[i] = var.sqrt().max(config.min_std);
        }

        trace.push(best_f);
    }

    Ok(CemResult {
        best_x,
        best_f,
        trace,
        final_mean: mean,
        final_std: std,
        evaluations: evals,
    })
}
