//! Event-based trajectory costs and the MPC uncertainty/speed reward.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::seqmodel::StepPrediction;
use crate::vehicle::wrap_angle;

/// Terrain classes that count as collisions: tree, other-obstacles, human.
pub const DEFAULT_COLLISION_CLASSES: [usize; 3] = [0, 1, 2];
/// Terrain classes that count as bumpy: waterhole, mud, jump, wet-leaves.
pub const DEFAULT_BUMPY_CLASSES: [usize; 4] = [3, 4, 5, 8];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EventRewardConfig {
    pub alpha_pos: f64,
    pub alpha_bum: f64,
    /// Discount factor over the horizon.
    pub gamma: f64,
    pub collision_classes: BTreeSet<usize>,
    pub bumpy_classes: BTreeSet<usize>,
}

impl Default for EventRewardConfig {
    fn default() -> Self {
        EventRewardConfig {
            alpha_pos: 1.0,
            alpha_bum: 0.5,
            gamma: 0.99,
            collision_classes: DEFAULT_COLLISION_CLASSES.into_iter().collect(),
            bumpy_classes: DEFAULT_BUMPY_CLASSES.into_iter().collect(),
        }
    }
}

impl EventRewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha_pos < 0.0 || self.alpha_bum < 0.0 {
            return Err(Error::domain("reward alphas must be >= 0"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Domain(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcRewardConfig {
    pub beta_sigma: f64,
    pub beta_v: f64,
    pub sigma_min: f64,
}

impl Default for MpcRewardConfig {
    fn default() -> Self {
        MpcRewardConfig {
            beta_sigma: 10.0,
            beta_v: 1.0,
            sigma_min: 1e-3,
        }
    }
}

impl MpcRewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta_sigma < 0.0 || self.beta_v < 0.0 {
            return Err(Error::domain("mpc betas must be >= 0"));
        }
        if self.sigma_min <= 0.0 {
            return Err(Error::domain("sigma_min must be > 0"));
        }
        Ok(())
    }
}

/// Absolute wrapped difference between the predicted heading and the bearing
/// from `position` to `goal`, in [0, pi].
pub fn bearing_error(predicted_heading: f64, position: (f64, f64), goal: (f64, f64)) -> Result<f64> {
    let dx = goal.0 - position.0;
    let dy = goal.1 - position.1;
    if dx == 0.0 && dy == 0.0 {
        return Err(Error::domain("bearing undefined: position equals goal"));
    }
    let bearing = dy.atan2(dx);
    Ok(wrap_angle(predicted_heading - bearing).abs())
}

/// Per-step penalty combining collision probability, heading-to-goal error and
/// bumpiness. All three terms are penalties; zero is the ideal step.
pub fn step_cost(
    pred: &StepPrediction,
    position: (f64, f64),
    goal: (f64, f64),
    config: &EventRewardConfig,
) -> Result<f64> {
    let e_coll: f64 = config
        .collision_classes
        .iter()
        .filter_map(|&c| pred.event_probs.get(c))
        .sum();
    let e_bum: f64 = config
        .bumpy_classes
        .iter()
        .filter_map(|&c| pred.event_probs.get(c))
        .sum();
    let angle = bearing_error(pred.bearing_mu, position, goal)?;
    let r_pos = (1.0 - e_coll) * angle / PI + e_coll;
    let r_bum = (1.0 - e_coll) * e_bum + e_coll;
    Ok(e_coll + config.alpha_pos * r_pos + config.alpha_bum * r_bum)
}

/// Discounted negated cost sum: `-sum_t gamma^t cost_t`.
pub fn trajectory_return(costs: &[f64], gamma: f64) -> f64 {
    let mut total = 0.0;
    let mut w = 1.0;
    for &c in costs {
        total += w * c;
        w *= gamma;
    }
    -total
}

/// `beta_sigma / max(sigma, sigma_min)^2 + beta_v * v^2`.
pub fn mpc_reward(sigma: f64, v: f64, config: &MpcRewardConfig) -> f64 {
    let s = sigma.max(config.sigma_min);
    config.beta_sigma / (s * s) + config.beta_v * v * v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqmodel::StepPrediction;
    use proptest::prelude::*;

    fn pred(event_probs: Vec<f64>, mu: f64) -> StepPrediction {
        StepPrediction {
            event_probs,
            bearing_mu: mu,
            bearing_var: 1.0,
        }
    }

    fn uniform9() -> Vec<f64> {
        vec![1.0 / 9.0; 9]
    }

    #[test]
    fn bearing_error_aligned_and_opposed() {
        assert_eq!(bearing_error(0.0, (0.0, 0.0), (5.0, 0.0)).unwrap(), 0.0);
        let e = bearing_error(0.0, (0.0, 0.0), (-5.0, 0.0)).unwrap();
        assert!((e - PI).abs() < 1e-12);
        let e = bearing_error(PI / 2.0, (0.0, 0.0), (5.0, 0.0)).unwrap();
        assert!((e - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn bearing_error_rejects_degenerate_geometry() {
        assert!(bearing_error(0.0, (1.0, 2.0), (1.0, 2.0)).is_err());
    }

    #[test]
    fn step_cost_ideal_step_is_zero() {
        let mut probs = vec![0.0; 9];
        probs[7] = 1.0; // smooth-road
        let p = pred(probs, 0.0);
        let c = step_cost(&p, (0.0, 0.0), (10.0, 0.0), &EventRewardConfig::default()).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn step_cost_saturates_on_certain_collision() {
        let mut probs = vec![0.0; 9];
        probs[0] = 1.0; // tree
        let p = pred(probs, 0.0);
        let c = step_cost(&p, (0.0, 0.0), (10.0, 0.0), &EventRewardConfig::default()).unwrap();
        assert!((c - 2.5).abs() < 1e-12);
    }

    #[test]
    fn step_cost_bumpy_anti_aligned() {
        let mut probs = vec![0.0; 9];
        probs[4] = 1.0; // mud: bumpy, not collision
        let p = pred(probs, PI); // goal is due east, heading due west
        let c = step_cost(&p, (0.0, 0.0), (10.0, 0.0), &EventRewardConfig::default()).unwrap();
        assert!((c - 1.5).abs() < 1e-12);
    }

    #[test]
    fn trajectory_return_examples() {
        assert_eq!(trajectory_return(&[0.0, 0.0, 0.0], 0.99), 0.0);
        assert!((trajectory_return(&[1.0, 1.0], 0.99) + 1.99).abs() < 1e-12);
        assert_eq!(trajectory_return(&[0.5; 8], 1.0), -4.0);
    }

    #[test]
    fn trajectory_return_zero_cost_padding_invariant_at_gamma_one() {
        let base = [0.3, 0.7, 0.1];
        let padded = [0.3, 0.7, 0.1, 0.0, 0.0];
        assert_eq!(trajectory_return(&base, 1.0), trajectory_return(&padded, 1.0));
    }

    #[test]
    fn mpc_reward_examples() {
        let cfg = MpcRewardConfig::default();
        assert!((mpc_reward(1.0, 2.0, &cfg) - 14.0).abs() < 1e-12);
        assert_eq!(mpc_reward(0.0, 0.0, &cfg), 1e7);
        assert_eq!(mpc_reward(1e-4, 0.0, &cfg), 1e7);
        let ablated = MpcRewardConfig {
            beta_sigma: 0.0,
            ..cfg
        };
        assert_eq!(mpc_reward(0.5, 3.0, &ablated), 9.0);
    }

    #[test]
    fn mpc_reward_monotone() {
        let cfg = MpcRewardConfig::default();
        let mut prev = mpc_reward(0.01, 1.0, &cfg);
        for i in 1..100 {
            let s = 0.01 + 0.05 * i as f64;
            let r = mpc_reward(s, 1.0, &cfg);
            assert!(r < prev, "reward must strictly decrease in sigma");
            prev = r;
        }
        let mut prev = mpc_reward(1.0, 0.0, &cfg);
        for i in 1..100 {
            let r = mpc_reward(1.0, 0.05 * i as f64, &cfg);
            assert!(r > prev, "reward must strictly increase in v");
            prev = r;
        }
    }

    #[test]
    fn step_cost_monotone_in_collision_mass() {
        // Shift probability from smooth-road into tree while the heading term is
        // held at zero error and bumpiness at zero.
        let cfg = EventRewardConfig::default();
        let mut prev = -1.0;
        for i in 0..=20 {
            let e = i as f64 / 20.0;
            let mut probs = vec![0.0; 9];
            probs[0] = e;
            probs[7] = 1.0 - e;
            let p = pred(probs, 0.0);
            let c = step_cost(&p, (0.0, 0.0), (10.0, 0.0), &cfg).unwrap();
            assert!(c >= prev);
            prev = c;
        }
    }

    proptest! {
        #[test]
        fn step_cost_bounded(
            coll in 0.0..1.0f64,
            bum_frac in 0.0..1.0f64,
            mu in -PI..PI,
        ) {
            let cfg = EventRewardConfig::default();
            let bum = (1.0 - coll) * bum_frac;
            let mut probs = vec![0.0; 9];
            probs[0] = coll;
            probs[4] = bum;
            probs[7] = (1.0 - coll - bum).max(0.0);
            let p = pred(probs, mu);
            let c = step_cost(&p, (0.0, 0.0), (10.0, 0.0), &cfg).unwrap();
            prop_assert!(c >= 0.0);
            prop_assert!(c <= 1.0 + cfg.alpha_pos + cfg.alpha_bum + 1e-9);
        }
    }

    #[test]
    fn uniform_probs_are_valid_input() {
        let p = pred(uniform9(), 0.3);
        let cfg = EventRewardConfig::default();
        let c = step_cost(&p, (0.0, 0.0), (10.0, 0.0), &cfg).unwrap();
        assert!(c.is_finite() && c > 0.0);
    }
}
