//! Minibatch Adam training loop. Per-sample gradients inside a batch are
//! evaluated in parallel but reduced in index order, so a fixed seed gives a
//! bit-identical run on any thread count.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Tensor};
use super::{build_graph, build_loss, register_leaves, ModelConfig, ModelWeights, TrajectorySample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 64,
            lr: 3e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    /// Weights from the epoch with the lowest mean loss.
    pub weights: ModelWeights,
    /// Mean training loss per epoch, in nats.
    pub epoch_losses: Vec<f64>,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(weights: &ModelWeights, lr: f64) -> Self {
        let shapes: Vec<Vec<f64>> = weights
            .tensors()
            .iter()
            .map(|(_, t)| vec![0.0; t.len()])
            .collect();
        Adam {
            m: shapes.clone(),
            v: shapes,
            t: 0,
            lr,
        }
    }

    fn step(&mut self, weights: &mut ModelWeights, grads: &[Tensor]) {
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t);
        let bc2 = 1.0 - Self::BETA2.powi(self.t);
        for (ti, (_, tensor)) in weights.tensors_mut().iter_mut().enumerate() {
            let g = &grads[ti].data;
            let m = &mut self.m[ti];
            let v = &mut self.v[ti];
            for i in 0..tensor.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                tensor.data[i] -= self.lr * mhat / (vhat.sqrt() + Self::EPS);
            }
        }
    }
}

/// Loss and leaf gradients for one sample.
fn sample_gradients(
    weights: &ModelWeights,
    sample: &TrajectorySample,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let leaves = register_leaves(&mut tape, weights);
    let out = build_graph(&mut tape, weights, &leaves, &sample.obs, &sample.actions)?;
    let loss = build_loss(&mut tape, &out, &sample.event_labels, &sample.bearing_labels)?;
    let value = tape.value(loss).data[0];
    let mut grads = tape.backward(loss)?;
    let leaf_grads = leaves
        .iter()
        .map(|&id| std::mem::replace(&mut grads[id], Tensor::zeros(0, 0)))
        .collect();
    Ok((value, leaf_grads))
}

/// Train a model on the dataset. Returns the best-epoch weights and the
/// per-epoch loss trace; deterministic for a fixed config.
pub fn train(
    dataset: &[TrajectorySample],
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<TrainResult> {
    if dataset.is_empty() {
        return Err(Error::domain("training dataset is empty"));
    }
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::domain("epochs and batch_size must be >= 1"));
    }
    for s in dataset {
        s.validate(model_config.feature_dim)?;
    }

    let mut weights = ModelWeights::init(*model_config, config.seed)?;
    let mut adam = Adam::new(&weights, config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut best = (f64::INFINITY, weights.clone());
    let mut batch_index = 0usize;

    for _epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut epoch_samples = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let per_sample: Vec<(f64, Vec<Tensor>)> = chunk
                .par_iter()
                .map(|&i| sample_gradients(&weights, &dataset[i]))
                .collect::<Result<_>>()?;

            let scale = 1.0 / chunk.len() as f64;
            let mut batch_loss = 0.0;
            let mut acc: Vec<Tensor> = weights
                .tensors()
                .iter()
                .map(|(_, t)| Tensor::zeros(t.rows, t.cols))
                .collect();
            for (l, grads) in &per_sample {
                batch_loss += l;
                for (a, g) in acc.iter_mut().zip(grads) {
                    for (av, gv) in a.data.iter_mut().zip(&g.data) {
                        *av += gv * scale;
                    }
                }
            }
            batch_loss *= scale;
            if !batch_loss.is_finite() {
                return Err(Error::Training {
                    batch: batch_index,
                    detail: format!("non-finite batch loss {batch_loss}"),
                });
            }
            adam.step(&mut weights, &acc);
            epoch_loss += batch_loss * chunk.len() as f64;
            epoch_samples += chunk.len();
            batch_index += 1;
        }

        let mean = epoch_loss / epoch_samples as f64;
        epoch_losses.push(mean);
        if mean < best.0 {
            best = (mean, weights.clone());
        }
    }

    Ok(TrainResult {
        weights: best.1,
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqmodel::{Architecture, NUM_EVENT_CLASSES};
    use rand::Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            feature_dim: 8,
            width: 16,
            layers: 1,
            heads: 2,
            ..ModelConfig::default()
        }
    }

    /// Separable synthetic set: the label is determined by one observation
    /// channel, the bearing target by another.
    fn separable_dataset(n: usize, h: usize, seed: u64) -> Vec<TrajectorySample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let class = rng.gen_range(0..3usize);
                let bearing = rng.gen_range(-1.0..1.0f64);
                let mut obs = vec![0.0; 8];
                obs[class] = 1.0;
                obs[5] = bearing;
                let actions = (0..h)
                    .map(|_| [rng.gen_range(-0.3..0.3), rng.gen_range(0.0..1.0), 0.2])
                    .collect();
                TrajectorySample {
                    obs,
                    actions,
                    event_labels: vec![class; h],
                    bearing_labels: vec![bearing; h],
                }
            })
            .collect()
    }

    #[test]
    fn zero_lr_leaves_weights_unchanged() {
        let data = separable_dataset(8, 3, 1);
        let mc = tiny_config();
        let tc = TrainConfig {
            epochs: 3,
            batch_size: 4,
            lr: 0.0,
            seed: 5,
        };
        let result = train(&data, &mc, &tc).unwrap();
        let init = ModelWeights::init(mc, 5).unwrap();
        assert_eq!(result.weights, init);
    }

    #[test]
    fn same_seed_reproduces_loss_trace() {
        let data = separable_dataset(24, 4, 2);
        let mc = tiny_config();
        let tc = TrainConfig {
            epochs: 3,
            batch_size: 8,
            lr: 3e-3,
            seed: 9,
        };
        let a = train(&data, &mc, &tc).unwrap();
        let b = train(&data, &mc, &tc).unwrap();
        assert_eq!(a.epoch_losses, b.epoch_losses);
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn overfits_separable_set() {
        let data = separable_dataset(32, 3, 3);
        let mc = ModelConfig {
            feature_dim: 8,
            width: 32,
            layers: 1,
            heads: 2,
            ..ModelConfig::default()
        };
        let tc = TrainConfig {
            epochs: 40,
            batch_size: 32,
            lr: 1e-2,
            seed: 7,
        };
        let result = train(&data, &mc, &tc).unwrap();
        // With CE + NLL summed, the CE part alone must be well under 0.1;
        // check classification accuracy instead of raw loss.
        let mut ce_sum = 0.0;
        let mut n = 0;
        for s in &data {
            let preds = crate::seqmodel::forward(&result.weights, &s.obs, &s.actions).unwrap();
            for (p, &lab) in preds.iter().zip(&s.event_labels) {
                ce_sum += -p.event_probs[lab].ln();
                n += 1;
            }
        }
        let ce = ce_sum / n as f64;
        assert!(ce < 0.1, "training CE = {ce}");
    }

    #[test]
    fn empty_dataset_rejected() {
        let mc = tiny_config();
        assert!(train(&[], &mc, &TrainConfig::default()).is_err());
    }

    #[test]
    fn lstm_trains_too() {
        let data = separable_dataset(16, 3, 4);
        let mc = ModelConfig {
            architecture: Architecture::Lstm,
            feature_dim: 8,
            width: 16,
            layers: 1,
            heads: 1,
            ..ModelConfig::default()
        };
        let tc = TrainConfig {
            epochs: 5,
            batch_size: 8,
            lr: 3e-3,
            seed: 2,
        };
        let result = train(&data, &mc, &tc).unwrap();
        assert_eq!(result.epoch_losses.len(), 5);
        assert!(result.epoch_losses.iter().all(|l| l.is_finite()));
        assert!(result.epoch_losses.last().unwrap() < result.epoch_losses.first().unwrap());
    }

    #[test]
    fn labels_out_of_range_rejected() {
        let mut data = separable_dataset(4, 3, 5);
        data[0].event_labels[1] = NUM_EVENT_CLASSES;
        assert!(train(&data, &tiny_config(), &TrainConfig::default()).is_err());
    }
}
