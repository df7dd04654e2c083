//! Per-step evaluation metrics for curve plotting: macro-F1, accuracy and
//! bearing MAE computed independently at each prediction step.

use rayon::prelude::*;

use super::{forward, ModelWeights, StepPrediction, TrajectorySample, NUM_EVENT_CLASSES};
use crate::error::{Error, Result};
use crate::vehicle::wrap_angle;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub bearing_mae: f64,
}

/// Evaluate a model on a held-out set.
pub fn per_step_metrics(
    weights: &ModelWeights,
    test: &[TrajectorySample],
) -> Result<Vec<StepMetrics>> {
    let predictions: Vec<Vec<StepPrediction>> = test
        .par_iter()
        .map(|s| forward(weights, &s.obs, &s.actions))
        .collect::<Result<_>>()?;
    metrics_from_predictions(&predictions, test)
}

/// Metrics from precomputed predictions; also the entry point for sanity
/// predictors (perfect, uniform-random) that bypass a trained model.
pub fn metrics_from_predictions(
    predictions: &[Vec<StepPrediction>],
    test: &[TrajectorySample],
) -> Result<Vec<StepMetrics>> {
    if predictions.len() != test.len() || test.is_empty() {
        return Err(Error::domain("predictions and test set must align and be non-empty"));
    }
    let horizon = test[0].horizon();
    for (p, s) in predictions.iter().zip(test) {
        if p.len() != horizon || s.horizon() != horizon {
            return Err(Error::domain("metrics require a uniform horizon"));
        }
    }

    let mut out = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let mut tp = [0usize; NUM_EVENT_CLASSES];
        let mut fp = [0usize; NUM_EVENT_CLASSES];
        let mut fn_ = [0usize; NUM_EVENT_CLASSES];
        let mut support = [0usize; NUM_EVENT_CLASSES];
        let mut correct = 0usize;
        let mut mae_sum = 0.0;
        for (preds, sample) in predictions.iter().zip(test) {
            let label = sample.event_labels[t];
            support[label] += 1;
            let predicted = argmax(&preds[t].event_probs);
            if predicted == label {
                correct += 1;
                tp[label] += 1;
            } else {
                fp[predicted] += 1;
                fn_[label] += 1;
            }
            mae_sum += wrap_angle(preds[t].bearing_mu - sample.bearing_labels[t]).abs();
        }

        let mut f1_sum = 0.0;
        let mut f1_classes = 0usize;
        for c in 0..NUM_EVENT_CLASSES {
            if support[c] == 0 {
                log::debug!("step {t}: class {c} absent from test labels, skipped in macro-F1");
                continue;
            }
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            let f1 = if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            };
            f1_sum += f1;
            f1_classes += 1;
        }

        let n = test.len() as f64;
        out.push(StepMetrics {
            step: t,
            macro_f1: f1_sum / f1_classes.max(1) as f64,
            accuracy: correct as f64 / n,
            bearing_mae: mae_sum / n,
        });
    }
    Ok(out)
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn make_test_set(n: usize, h: usize, seed: u64) -> Vec<TrajectorySample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| TrajectorySample {
                obs: vec![0.0; 4],
                actions: vec![[0.0, 0.0, 0.2]; h],
                event_labels: (0..h).map(|_| rng.gen_range(0..NUM_EVENT_CLASSES)).collect(),
                bearing_labels: (0..h).map(|_| rng.gen_range(-3.0..3.0)).collect(),
            })
            .collect()
    }

    fn perfect_predictions(test: &[TrajectorySample]) -> Vec<Vec<StepPrediction>> {
        test.iter()
            .map(|s| {
                s.event_labels
                    .iter()
                    .zip(&s.bearing_labels)
                    .map(|(&lab, &b)| {
                        let mut probs = vec![0.0; NUM_EVENT_CLASSES];
                        probs[lab] = 1.0;
                        StepPrediction {
                            event_probs: probs,
                            bearing_mu: b,
                            bearing_var: 1e-6,
                        }
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn perfect_predictor_scores_perfectly() {
        let test = make_test_set(200, 5, 1);
        let preds = perfect_predictions(&test);
        for m in metrics_from_predictions(&preds, &test).unwrap() {
            assert_eq!(m.macro_f1, 1.0);
            assert_eq!(m.accuracy, 1.0);
            assert_eq!(m.bearing_mae, 0.0);
        }
    }

    #[test]
    fn uniform_random_predictor_accuracy_near_one_ninth() {
        let test = make_test_set(5000, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let preds: Vec<Vec<StepPrediction>> = test
            .iter()
            .map(|s| {
                (0..s.horizon())
                    .map(|_| {
                        // A uniformly random argmax with a flat-ish distribution.
                        let winner = rng.gen_range(0..NUM_EVENT_CLASSES);
                        let mut probs = vec![1.0 / (NUM_EVENT_CLASSES as f64 + 1.0); NUM_EVENT_CLASSES];
                        probs[winner] += 1.0 / (NUM_EVENT_CLASSES as f64 + 1.0);
                        StepPrediction {
                            event_probs: probs,
                            bearing_mu: 0.0,
                            bearing_var: 1.0,
                        }
                    })
                    .collect()
            })
            .collect();
        for m in metrics_from_predictions(&preds, &test).unwrap() {
            assert!((m.accuracy - 1.0 / 9.0).abs() < 0.02, "accuracy = {}", m.accuracy);
        }
    }

    #[test]
    fn bearing_mae_wraps_angles() {
        let test = vec![TrajectorySample {
            obs: vec![0.0; 4],
            actions: vec![[0.0, 0.0, 0.2]],
            event_labels: vec![0],
            bearing_labels: vec![3.1],
        }];
        let mut probs = vec![0.0; NUM_EVENT_CLASSES];
        probs[0] = 1.0;
        let preds = vec![vec![StepPrediction {
            event_probs: probs,
            bearing_mu: -3.1,
            bearing_var: 1.0,
        }]];
        let m = metrics_from_predictions(&preds, &test).unwrap();
        // Angular distance between 3.1 and -3.1 is about 0.083, not 6.2.
        assert!(m[0].bearing_mae < 0.1, "mae = {}", m[0].bearing_mae);
    }

    #[test]
    fn mixed_horizons_rejected() {
        let mut test = make_test_set(3, 4, 5);
        test[1].actions.pop();
        test[1].event_labels.pop();
        test[1].bearing_labels.pop();
        let preds = perfect_predictions(&test);
        assert!(metrics_from_predictions(&preds, &test).is_err());
    }
}
