//! Predictive world model: given an observation feature vector and a sequence
//! of future `(steering, throttle, dt)` actions, predict a categorical terrain
//! event distribution and a Gaussian over bearing at every future step.
//!
//! Two interchangeable architectures share the embeddings and output heads: a
//! causally masked transformer stack and an LSTM baseline. Everything runs in
//! f64 on the crate's own gradient tape, which keeps gradient checks strict.

mod io;
mod metrics;
mod tape;
mod train;

pub use io::{load_dataset, load_weights, save_dataset, save_weights};
pub use metrics::{metrics_from_predictions, per_step_metrics, StepMetrics};
pub use tape::{NodeId, Tape, Tensor};
pub use train::{train, TrainConfig, TrainResult};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of terrain event classes.
pub const NUM_EVENT_CLASSES: usize = 9;

/// Event class names, in label-index order.
pub const EVENT_CLASS_NAMES: [&str; NUM_EVENT_CLASSES] = [
    "tree",
    "other-obstacles",
    "human",
    "waterhole",
    "mud",
    "jump",
    "traversable-grass",
    "smooth-road",
    "wet-leaves",
];

/// Planning horizons supported by training datasets.
pub const TRAINING_HORIZONS: [usize; 3] = [10, 20, 40];

/// One future action row: steering, throttle, per-step time dilation.
pub type ActionRow = [f64; 3];

/// Per-step model output: a categorical event distribution plus a Gaussian
/// over bearing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPrediction {
    pub event_probs: Vec<f64>,
    pub bearing_mu: f64,
    pub bearing_var: f64,
}

impl StepPrediction {
    pub fn validate(&self, var_min: f64) -> Result<()> {
        if self.event_probs.len() != NUM_EVENT_CLASSES {
            return Err(Error::domain("event_probs must have 9 entries"));
        }
        let sum: f64 = self.event_probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || self.event_probs.iter().any(|&p| p < 0.0) {
            return Err(Error::Domain(format!(
                "event_probs is not a distribution (sum {sum})"
            )));
        }
        if self.bearing_var < var_min {
            return Err(Error::Domain(format!(
                "bearing_var {} below floor {var_min}",
                self.bearing_var
            )));
        }
        Ok(())
    }
}

/// One supervised trajectory: observation, action rows and per-step labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub obs: Vec<f64>,
    pub actions: Vec<ActionRow>,
    pub event_labels: Vec<usize>,
    pub bearing_labels: Vec<f64>,
}

impl TrajectorySample {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        let h = self.actions.len();
        if self.obs.len() != feature_dim {
            return Err(Error::Domain(format!(
                "observation length {} != feature_dim {feature_dim}",
                self.obs.len()
            )));
        }
        if self.event_labels.len() != h || self.bearing_labels.len() != h {
            return Err(Error::domain("label lengths must match the horizon"));
        }
        if self.event_labels.iter().any(|&c| c >= NUM_EVENT_CLASSES) {
            return Err(Error::domain("event label out of range"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Transformer,
    Lstm,
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Architecture::Transformer => write!(f, "transformer"),
            Architecture::Lstm => write!(f, "lstm"),
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transformer" => Ok(Architecture::Transformer),
            "lstm" => Ok(Architecture::Lstm),
            other => Err(Error::Domain(format!("unknown architecture '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Observation feature vector length.
    pub feature_dim: usize,
    /// Model width (token embedding size).
    pub width: usize,
    /// Transformer blocks or stacked LSTM layers.
    pub layers: usize,
    /// Attention heads; must divide `width`.
    pub heads: usize,
    /// Feed-forward hidden size as a multiple of `width`.
    pub hidden_mult: usize,
    /// Floor on the predicted bearing variance.
    pub var_min: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            architecture: Architecture::Transformer,
            feature_dim: 64,
            width: 32,
            layers: 2,
            heads: 2,
            hidden_mult: 2,
            var_min: 1e-6,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.width == 0 || self.layers == 0 || self.hidden_mult == 0 {
            return Err(Error::domain("model dimensions must be >= 1"));
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::Domain(format!(
                "heads {} must divide width {}",
                self.heads, self.width
            )));
        }
        if self.var_min <= 0.0 {
            return Err(Error::domain("var_min must be > 0"));
        }
        Ok(())
    }
}

/// Named dense tensors in a fixed manifest order, plus the architecture config
/// and the seed they were initialized from.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub seed: u64,
    tensors: Vec<(String, Tensor)>,
}

/// Shape manifest for one architecture. The persisted weight buffer follows
/// this order exactly.
pub fn manifest(config: &ModelConfig) -> Vec<(String, usize, usize)> {
    let w = config.width;
    let f = config.feature_dim;
    let hidden = config.hidden_mult * w;
    let mut names: Vec<(String, usize, usize)> = vec![
        ("obs_w1".into(), f, w),
        ("obs_b1".into(), 1, w),
        ("obs_w2".into(), w, w),
        ("obs_b2".into(), 1, w),
        ("act_w".into(), 3, w),
        ("act_b".into(), 1, w),
    ];
    for l in 0..config.layers {
        match config.architecture {
            Architecture::Transformer => {
                names.push((format!("layer{l}.ln1_g"), 1, w));
                names.push((format!("layer{l}.ln1_b"), 1, w));
                names.push((format!("layer{l}.wq"), w, w));
                names.push((format!("layer{l}.wk"), w, w));
                names.push((format!("layer{l}.wv"), w, w));
                names.push((format!("layer{l}.wo"), w, w));
                names.push((format!("layer{l}.ln2_g"), 1, w));
                names.push((format!("layer{l}.ln2_b"), 1, w));
                names.push((format!("layer{l}.mlp_w1"), w, hidden));
                names.push((format!("layer{l}.mlp_b1"), 1, hidden));
                names.push((format!("layer{l}.mlp_w2"), hidden, w));
                names.push((format!("layer{l}.mlp_b2"), 1, w));
            }
            Architecture::Lstm => {
                names.push((format!("layer{l}.wx"), w, 4 * w));
                names.push((format!("layer{l}.wh"), w, 4 * w));
                names.push((format!("layer{l}.bias"), 1, 4 * w));
            }
        }
    }
    if config.architecture == Architecture::Transformer {
        names.push(("lnf_g".into(), 1, w));
        names.push(("lnf_b".into(), 1, w));
    }
    names.push(("head_event_w".into(), w, NUM_EVENT_CLASSES));
    names.push(("head_event_b".into(), 1, NUM_EVENT_CLASSES));
    names.push(("head_bearing_w".into(), w, 2));
    names.push(("head_bearing_b".into(), 1, 2));
    names
}

impl ModelWeights {
    /// Seeded initialization: scaled Gaussian weights, zero biases, unit gains.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = manifest(&config)
            .into_iter()
            .map(|(name, rows, cols)| {
                let t = if name.ends_with("_b") || name.ends_with(".bias") || name.ends_with("_b1")
                    || name.ends_with("_b2")
                {
                    Tensor::zeros(rows, cols)
                } else if name.ends_with("_g") {
                    Tensor {
                        rows,
                        cols,
                        data: vec![1.0; rows * cols],
                    }
                } else {
                    let std = 1.0 / (rows as f64).sqrt();
                    Tensor {
                        rows,
                        cols,
                        data: (0..rows * cols)
                            .map(|_| rng.sample::<f64, _>(StandardNormal) * std)
                            .collect(),
                    }
                };
                (name, t)
            })
            .collect();
        Ok(ModelWeights {
            config,
            seed,
            tensors,
        })
    }

    pub fn from_tensors(
        config: ModelConfig,
        seed: u64,
        tensors: Vec<(String, Tensor)>,
    ) -> Result<Self> {
        config.validate()?;
        let expected = manifest(&config);
        if tensors.len() != expected.len() {
            return Err(Error::domain("tensor count does not match the manifest"));
        }
        for ((name, t), (ename, er, ec)) in tensors.iter().zip(&expected) {
            if name != ename || t.rows != *er || t.cols != *ec {
                return Err(Error::Domain(format!(
                    "tensor {name} ({}x{}) does not match manifest entry {ename} ({er}x{ec})",
                    t.rows, t.cols
                )));
            }
            if !t.is_finite() {
                return Err(Error::Domain(format!("tensor {name} has non-finite values")));
            }
        }
        Ok(ModelWeights {
            config,
            seed,
            tensors,
        })
    }

    pub fn tensors(&self) -> &[(String, Tensor)] {
        &self.tensors
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut Vec<(String, Tensor)> {
        &mut self.tensors
    }

    fn index(&self, name: &str) -> usize {
        self.tensors
            .iter()
            .position(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("tensor {name} missing from manifest"))
    }
}

/// Sinusoidal position code for `positions` tokens of `width` channels.
fn position_encoding(positions: usize, width: usize) -> Tensor {
    let mut pe = Tensor::zeros(positions, width);
    for pos in 0..positions {
        for i in 0..width / 2 {
            let rate = (pos as f64) / 10000f64.powf(2.0 * i as f64 / width as f64);
            *pe.at_mut(pos, 2 * i) = rate.sin();
            *pe.at_mut(pos, 2 * i + 1) = rate.cos();
        }
    }
    pe
}

/// Node ids of the head outputs on a forward tape.
pub(crate) struct GraphOutput {
    pub event_probs: NodeId,
    pub bearing_mu: NodeId,
    pub bearing_var: NodeId,
}

/// Register every weight tensor as a trainable leaf, in manifest order.
pub(crate) fn register_leaves(tape: &mut Tape, weights: &ModelWeights) -> Vec<NodeId> {
    weights
        .tensors
        .iter()
        .map(|(_, t)| tape.leaf(t.clone()))
        .collect()
}

fn ensure_finite(tape: &Tape, id: NodeId, layer: &str) -> Result<()> {
    if !tape.value(id).is_finite() {
        return Err(Error::Inference {
            layer: layer.to_string(),
            detail: "non-finite activation".to_string(),
        });
    }
    Ok(())
}

/// Build the full forward graph for one sample on `tape`. `leaves` must come
/// from [`register_leaves`] on the same tape.
pub(crate) fn build_graph(
    tape: &mut Tape,
    weights: &ModelWeights,
    leaves: &[NodeId],
    obs: &[f64],
    actions: &[ActionRow],
) -> Result<GraphOutput> {
    let cfg = &weights.config;
    if obs.len() != cfg.feature_dim {
        return Err(Error::Domain(format!(
            "observation length {} != feature_dim {}",
            obs.len(),
            cfg.feature_dim
        )));
    }
    let h = actions.len();
    if h == 0 {
        return Err(Error::domain("horizon must be >= 1"));
    }
    let t_len = h + 1;
    let id = |name: &str| leaves[weights.index(name)];

    // Observation prefix token: 2-layer perceptron.
    let obs_leaf = tape.constant(Tensor::from_vec(1, cfg.feature_dim, obs.to_vec())?);
    let prefix = {
        let m1 = tape.matmul(obs_leaf, id("obs_w1"))?;
        let a1 = tape.add_row(m1, id("obs_b1"))?;
        let t1 = tape.tanh(a1)?;
        let m2 = tape.matmul(t1, id("obs_w2"))?;
        tape.add_row(m2, id("obs_b2"))?
    };

    // Action tokens: linear embedding of (delta, throttle, dt) rows.
    let mut act_data = Vec::with_capacity(3 * h);
    for a in actions {
        act_data.extend_from_slice(a);
    }
    let act_leaf = tape.constant(Tensor::from_vec(h, 3, act_data)?);
    let emb = {
        let m = tape.matmul(act_leaf, id("act_w"))?;
        tape.add_row(m, id("act_b"))?
    };

    let mut tokens = tape.concat_rows(&[prefix, emb])?;
    ensure_finite(tape, tokens, "embedding")?;

    match cfg.architecture {
        Architecture::Transformer => {
            let pe = tape.constant(position_encoding(t_len, cfg.width));
            tokens = tape.add(tokens, pe)?;
            let head_dim = cfg.width / cfg.heads;
            for l in 0..cfg.layers {
                let name = |s: &str| format!("layer{l}.{s}");
                // Pre-norm attention block.
                let normed = {
                    let n = tape.layer_norm_rows(tokens, 1e-5)?;
                    let g = tape.mul_row(n, id(&name("ln1_g")))?;
                    tape.add_row(g, id(&name("ln1_b")))?
                };
                let q = tape.matmul(normed, id(&name("wq")))?;
                let k = tape.matmul(normed, id(&name("wk")))?;
                let v = tape.matmul(normed, id(&name("wv")))?;
                let mut head_outs = Vec::with_capacity(cfg.heads);
                for hd in 0..cfg.heads {
                    let qh = tape.slice_cols(q, hd * head_dim, head_dim)?;
                    let kh = tape.slice_cols(k, hd * head_dim, head_dim)?;
                    let vh = tape.slice_cols(v, hd * head_dim, head_dim)?;
                    let (out, _probs) = tape.causal_attention(qh, kh, vh)?;
                    head_outs.push(out);
                }
                let merged = tape.concat_cols(&head_outs)?;
                let projected = tape.matmul(merged, id(&name("wo")))?;
                tokens = tape.add(tokens, projected)?;

                // Pre-norm feed-forward block.
                let normed = {
                    let n = tape.layer_norm_rows(tokens, 1e-5)?;
                    let g = tape.mul_row(n, id(&name("ln2_g")))?;
                    tape.add_row(g, id(&name("ln2_b")))?
                };
                let ff = {
                    let m1 = tape.matmul(normed, id(&name("mlp_w1")))?;
                    let a1 = tape.add_row(m1, id(&name("mlp_b1")))?;
                    let t1 = tape.tanh(a1)?;
                    let m2 = tape.matmul(t1, id(&name("mlp_w2")))?;
                    tape.add_row(m2, id(&name("mlp_b2")))?
                };
                tokens = tape.add(tokens, ff)?;
                ensure_finite(tape, tokens, &format!("transformer block {l}"))?;
            }
            tokens = {
                let n = tape.layer_norm_rows(tokens, 1e-5)?;
                let g = tape.mul_row(n, id("lnf_g"))?;
                tape.add_row(g, id("lnf_b"))?
            };
        }
        Architecture::Lstm => {
            // Stacked recurrence over the token rows; layer l's hidden states
            // feed layer l+1. Output at position p is the top hidden state.
            let zero = tape.constant(Tensor::zeros(1, cfg.width));
            let mut hs = vec![zero; cfg.layers];
            let mut cs = vec![zero; cfg.layers];
            let mut outputs = Vec::with_capacity(t_len);
            for p in 0..t_len {
                let mut x = tape.slice_rows(tokens, p, 1)?;
                for l in 0..cfg.layers {
                    let name = |s: &str| format!("layer{l}.{s}");
                    let (hn, cn) = tape.lstm_cell(
                        x,
                        hs[l],
                        cs[l],
                        id(&name("wx")),
                        id(&name("wh")),
                        id(&name("bias")),
                    )?;
                    hs[l] = hn;
                    cs[l] = cn;
                    x = hn;
                }
                outputs.push(x);
            }
            tokens = tape.concat_rows(&outputs)?;
            ensure_finite(tape, tokens, "lstm stack")?;
        }
    }

    // Prediction for step t is read from position t + 1, so it conditions on
    // the observation and action rows 0..=t only.
    let steps = tape.slice_rows(tokens, 1, h)?;
    let event_logits = {
        let m = tape.matmul(steps, id("head_event_w"))?;
        tape.add_row(m, id("head_event_b"))?
    };
    let event_probs = tape.softmax_rows(event_logits, false)?;
    let bearing = {
        let m = tape.matmul(steps, id("head_bearing_w"))?;
        tape.add_row(m, id("head_bearing_b"))?
    };
    let bearing_mu = tape.slice_cols(bearing, 0, 1)?;
    let bearing_var = {
        let logvar = tape.slice_cols(bearing, 1, 1)?;
        let ev = tape.exp(logvar)?;
        tape.clamp_min(ev, cfg.var_min)?
    };
    ensure_finite(tape, event_probs, "event head")?;
    ensure_finite(tape, bearing_mu, "bearing head")?;
    Ok(GraphOutput {
        event_probs,
        bearing_mu,
        bearing_var,
    })
}

pub(crate) fn extract_predictions(
    tape: &Tape,
    out: &GraphOutput,
    horizon: usize,
) -> Vec<StepPrediction> {
    let probs = tape.value(out.event_probs);
    let mu = tape.value(out.bearing_mu);
    let var = tape.value(out.bearing_var);
    (0..horizon)
        .map(|t| StepPrediction {
            event_probs: (0..NUM_EVENT_CLASSES).map(|c| probs.at(t, c)).collect(),
            bearing_mu: mu.at(t, 0),
            bearing_var: var.at(t, 0),
        })
        .collect()
}

/// Predict the per-step event distributions and bearing Gaussians for one
/// observation and action sequence.
pub fn forward(
    weights: &ModelWeights,
    obs: &[f64],
    actions: &[ActionRow],
) -> Result<Vec<StepPrediction>> {
    let mut tape = Tape::new();
    let leaves = register_leaves(&mut tape, weights);
    let out = build_graph(&mut tape, weights, &leaves, obs, actions)?;
    Ok(extract_predictions(&tape, &out, actions.len()))
}

/// Forward a batch of samples; each sample is independent of the others.
pub fn forward_batch(
    weights: &ModelWeights,
    batch: &[(&[f64], &[ActionRow])],
) -> Result<Vec<Vec<StepPrediction>>> {
    batch
        .par_iter()
        .map(|(obs, actions)| forward(weights, obs, actions))
        .collect()
}

/// Mean per-step training loss in nats: cross-entropy over events plus
/// Gaussian negative log-likelihood over bearing, equally weighted. The
/// bearing residual is angle-wrapped so labels on either side of the pi
/// boundary do not explode the loss.
pub fn loss(
    predictions: &[StepPrediction],
    event_labels: &[usize],
    bearing_labels: &[f64],
) -> Result<f64> {
    let h = predictions.len();
    if event_labels.len() != h || bearing_labels.len() != h || h == 0 {
        return Err(Error::domain("loss inputs must share a non-zero length"));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut total = 0.0;
    for t in 0..h {
        let lab = event_labels[t];
        if lab >= NUM_EVENT_CLASSES {
            return Err(Error::domain("event label out of range"));
        }
        let ce = -predictions[t].event_probs[lab].ln();
        let d = crate::vehicle::wrap_angle(predictions[t].bearing_mu - bearing_labels[t]);
        let v = predictions[t].bearing_var;
        let nll = 0.5 * (two_pi * v).ln() + d * d / (2.0 * v);
        total += ce + nll;
    }
    Ok(total / h as f64)
}

/// Tape counterpart of [`loss`], used by the training loop.
pub(crate) fn build_loss(
    tape: &mut Tape,
    out: &GraphOutput,
    event_labels: &[usize],
    bearing_labels: &[f64],
) -> Result<NodeId> {
    let ce = tape.cross_entropy_mean(out.event_probs, event_labels)?;
    let nll = tape.gaussian_nll_mean(out.bearing_mu, out.bearing_var, bearing_labels)?;
    tape.add(ce, nll)
}

/// Max symmetric relative error between the tape gradient and a central
/// finite-difference probe of `n_coords` randomly chosen weight coordinates.
pub fn model_gradient_check(
    config: &ModelConfig,
    seed: u64,
    horizon: usize,
    n_coords: usize,
    fd_step: f64,
) -> Result<f64> {
    let weights = ModelWeights::init(*config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let obs: Vec<f64> = (0..config.feature_dim)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let actions: Vec<ActionRow> = (0..horizon)
        .map(|_| {
            [
                rng.gen_range(-0.35..0.35),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.2..0.6),
            ]
        })
        .collect();
    let event_labels: Vec<usize> = (0..horizon)
        .map(|_| rng.gen_range(0..NUM_EVENT_CLASSES))
        .collect();
    let bearing_labels: Vec<f64> = (0..horizon).map(|_| rng.gen_range(-3.0..3.0)).collect();

    let eval = |w: &ModelWeights| -> Result<f64> {
        let mut tape = Tape::new();
        let leaves = register_leaves(&mut tape, w);
        let out = build_graph(&mut tape, w, &leaves, &obs, &actions)?;
        let l = build_loss(&mut tape, &out, &event_labels, &bearing_labels)?;
        Ok(tape.value(l).data[0])
    };

    let mut tape = Tape::new();
    let leaves = register_leaves(&mut tape, &weights);
    let out = build_graph(&mut tape, &weights, &leaves, &obs, &actions)?;
    let l = build_loss(&mut tape, &out, &event_labels, &bearing_labels)?;
    let grads = tape.backward(l)?;

    // Sample coordinates across all tensors.
    let n_tensors = weights.tensors().len();
    let mut max_rel: f64 = 0.0;
    for _ in 0..n_coords {
        let ti = rng.gen_range(0..n_tensors);
        let len = weights.tensors()[ti].1.len();
        let ei = rng.gen_range(0..len);
        let analytic = grads[leaves[ti]].data[ei];

        let mut wp = weights.clone();
        wp.tensors_mut()[ti].1.data[ei] += fd_step;
        let mut wm = weights.clone();
        wm.tensors_mut()[ti].1.data[ei] -= fd_step;
        let numeric = (eval(&wp)? - eval(&wm)?) / (2.0 * fd_step);
        let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-10);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}
