//! Derivative-free global optimizers over box-bounded real vectors.
//!
//! Both optimizers minimize; reward-maximizing callers negate their objective.
//! Candidate evaluations inside one generation run in parallel, but samples are
//! drawn before dispatch, so results are bit-reproducible for a fixed seed
//! regardless of thread count.

mod cem;
mod cma;

pub use cem::{cem_minimize, CemConfig, CemResult};
pub use cma::{cma_minimize, CmaConfig, CmaResult};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// A fixed-length, box-bounded minimization problem.
pub struct BoxProblem<'a> {
    pub dim: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Deterministic scalar objective to minimize. Must be safe to call from
    /// multiple threads.
    pub objective: &'a (dyn Fn(&[f64]) -> f64 + Sync),
    /// Maximum objective evaluations.
    pub budget: usize,
    pub seed: u64,
}

impl<'a> BoxProblem<'a> {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::domain("problem dimension must be >= 1"));
        }
        if self.lower.len() != self.dim || self.upper.len() != self.dim {
            return Err(Error::domain("bound vectors must match the problem dimension"));
        }
        for i in 0..self.dim {
            if !(self.lower[i] < self.upper[i]) {
                return Err(Error::Domain(format!(
                    "bounds at coordinate {i}: lower {} must be < upper {}",
                    self.lower[i], self.upper[i]
                )));
            }
        }
        Ok(())
    }

    /// Evaluate a generation of candidates; non-finite objective values are
    /// mapped to +inf so a bad sample never crashes the search.
    fn evaluate_all(&self, candidates: &[Vec<f64>]) -> Vec<f64> {
        candidates
            .par_iter()
            .map(|x| {
                let f = (self.objective)(x);
                if f.is_finite() {
                    f
                } else {
                    f64::INFINITY
                }
            })
            .collect()
    }
}

/// Indices `0..n` sorted ascending by fitness with index tie-breaking, so the
/// ordering is total even with repeated or infinite values.
fn argsort(fs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..fs.len()).collect();
    idx.sort_by(|&a, &b| {
        fs[a]
            .partial_cmp(&fs[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_catches_bad_bounds() {
        let obj = |_: &[f64]| 0.0;
        let p = BoxProblem {
            dim: 2,
            lower: vec![0.0, 1.0],
            upper: vec![1.0, 1.0],
            objective: &obj,
            budget: 100,
            seed: 0,
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn argsort_is_total_with_infinities() {
        let fs = vec![f64::INFINITY, 1.0, f64::INFINITY, 0.5];
        assert_eq!(argsort(&fs), vec![3, 1, 0, 2]);
    }
}
