//! Seeded synthetic terrain world: a labeled 2-D grid with a smooth slope
//! field. Stands in for the real camera/GPS stack — it produces observation
//! feature vectors, ground-truth event labels for training data, and the
//! terrain the closed-loop episodes drive over.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqmodel::{TrajectorySample, NUM_EVENT_CLASSES};
use crate::vehicle::{step_rk4, ControlInput, ModelParams, VehicleState, V_MAX};

/// Observation layout: 6 forward offsets x (9-class histogram + mean slope),
/// then sin/cos heading, normalized speed, and a constant bias channel. The
/// offsets are spaced exponentially so the far end of a 3X-speed horizon is
/// still (coarsely) observed.
pub const OBS_OFFSET_CELLS: [usize; 6] = [1, 2, 4, 7, 11, 16];
pub const OBS_OFFSETS: usize = OBS_OFFSET_CELLS.len();
pub const FEATURE_DIM: usize = OBS_OFFSETS * (NUM_EVENT_CLASSES + 1) + 4;

/// Empirical label proportions of the annotated offroad dataset, used as the
/// default class priors for generated worlds.
pub const DEFAULT_CLASS_COUNTS: [f64; NUM_EVENT_CLASSES] =
    [586.0, 1631.0, 517.0, 66.0, 267.0, 164.0, 6421.0, 10632.0, 698.0];

pub fn default_class_frequencies() -> [f64; NUM_EVENT_CLASSES] {
    let total: f64 = DEFAULT_CLASS_COUNTS.iter().sum();
    let mut out = [0.0; NUM_EVENT_CLASSES];
    for (o, c) in out.iter_mut().zip(DEFAULT_CLASS_COUNTS) {
        *o = c / total;
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub size: usize,
    pub cell_size: f64,
    pub class_frequencies: Vec<f64>,
    /// Blob diameter of the value-noise labeling, in cells.
    pub blob_scale: f64,
    /// Gaussian sensor noise added to every observation channel.
    pub obs_noise_std: f64,
    /// Slope field amplitude (rad); the field spans [-amplitude, amplitude].
    pub slope_amplitude: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            size: 64,
            cell_size: 0.5,
            class_frequencies: default_class_frequencies().to_vec(),
            blob_scale: 12.0,
            obs_noise_std: 0.05,
            slope_amplitude: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerrainWorld {
    size: usize,
    cell_size: f64,
    seed: u64,
    class_frequencies: Vec<f64>,
    grid: Vec<u8>,
    slope: Vec<f64>,
}

/// Smooth value noise on a coarse lattice, bilinearly interpolated with a
/// smoothstep fade; values in [0, 1).
fn value_noise(seed: u64, size: usize, scale: f64) -> Vec<f64> {
    let lattice = (size as f64 / scale).ceil() as usize + 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let knots: Vec<f64> = (0..lattice * lattice).map(|_| rng.gen::<f64>()).collect();
    let fade = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut field = Vec::with_capacity(size * size);
    for row in 0..size {
        for col in 0..size {
            let fx = col as f64 / scale;
            let fy = row as f64 / scale;
            let x0 = fx.floor() as usize;
            let y0 = fy.floor() as usize;
            let tx = fade(fx - x0 as f64);
            let ty = fade(fy - y0 as f64);
            let k = |x: usize, y: usize| knots[y * lattice + x];
            let top = k(x0, y0) * (1.0 - tx) + k(x0 + 1, y0) * tx;
            let bottom = k(x0, y0 + 1) * (1.0 - tx) + k(x0 + 1, y0 + 1) * tx;
            field.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    field
}

/// Generate a labeled world. Class marginals are hit by quantile-thresholding
/// the blob-noise field, so large grids match the priors within rounding.
pub fn generate_world(seed: u64, config: &WorldConfig) -> Result<TerrainWorld> {
    if config.size < 8 {
        return Err(Error::domain("world size must be >= 8 cells"));
    }
    if config.class_frequencies.len() != NUM_EVENT_CLASSES {
        return Err(Error::domain("class_frequencies must have 9 entries"));
    }
    let sum: f64 = config.class_frequencies.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || config.class_frequencies.iter().any(|&f| f < 0.0) {
        return Err(Error::Domain(format!(
            "class_frequencies must be a distribution (sum {sum})"
        )));
    }
    if !(config.blob_scale > 0.0) || !(config.cell_size > 0.0) {
        return Err(Error::domain("blob_scale and cell_size must be > 0"));
    }

    let n = config.size * config.size;
    let field = value_noise(seed, config.size, config.blob_scale);

    // Rank cells by field value; hand out class bands in frequency order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        field[a]
            .partial_cmp(&field[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut grid = vec![0u8; n];
    let mut cursor = 0usize;
    let mut cumulative = 0.0;
    for (class, &freq) in config.class_frequencies.iter().enumerate() {
        cumulative += freq;
        let end = if class == NUM_EVENT_CLASSES - 1 {
            n
        } else {
            (cumulative * n as f64).round() as usize
        };
        for &cell in &order[cursor..end.min(n)] {
            grid[cell] = class as u8;
        }
        cursor = end.min(n);
    }

    let slope_field = value_noise(seed ^ 0x517c_c1b7_2722_0a95, config.size, config.blob_scale * 2.0);
    let slope = slope_field
        .into_iter()
        .map(|v| (2.0 * v - 1.0) * config.slope_amplitude)
        .collect();

    Ok(TerrainWorld {
        size: config.size,
        cell_size: config.cell_size,
        seed,
        class_frequencies: config.class_frequencies.clone(),
        grid,
        slope,
    })
}

/// Ground-truth labels of one rollout, one entry per future step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTruth {
    pub class: usize,
    pub collision: bool,
    pub bearing: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub steps: Vec<StepTruth>,
    /// Set when the rollout left the grid and labels were cut short.
    pub truncated: bool,
}

impl TerrainWorld {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn extent(&self) -> f64 {
        self.size as f64 * self.cell_size
    }

    pub fn in_bounds(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x < self.extent() && y < self.extent()
    }

    fn cell_index(&self, x: f64, y: f64) -> Option<usize> {
        if !self.in_bounds(x, y) {
            return None;
        }
        let col = (x / self.cell_size) as usize;
        let row = (y / self.cell_size) as usize;
        Some(row.min(self.size - 1) * self.size + col.min(self.size - 1))
    }

    pub fn class_at(&self, x: f64, y: f64) -> Result<usize> {
        self.cell_index(x, y)
            .map(|i| self.grid[i] as usize)
            .ok_or_else(|| Error::Observation(format!("({x:.2}, {y:.2}) outside the grid")))
    }

    pub fn slope_at(&self, x: f64, y: f64) -> Result<f64> {
        self.cell_index(x, y)
            .map(|i| self.slope[i])
            .ok_or_else(|| Error::Observation(format!("({x:.2}, {y:.2}) outside the grid")))
    }

    /// Class histogram plus mean slope of the 3x3 neighborhood around the cell
    /// containing `(x, y)`. Out-of-grid neighbors count as other-obstacles with
    /// zero slope, so the grid edge reads as a wall.
    fn patch_features(&self, x: f64, y: f64) -> ([f64; NUM_EVENT_CLASSES], f64) {
        let mut counts = [0.0; NUM_EVENT_CLASSES];
        let mut slope_sum = 0.0;
        let col = (x / self.cell_size).floor() as i64;
        let row = (y / self.cell_size).floor() as i64;
        for dr in -1..=1i64 {
            for dc in -1..=1i64 {
                let r = row + dr;
                let c = col + dc;
                if r >= 0 && c >= 0 && (r as usize) < self.size && (c as usize) < self.size {
                    let idx = r as usize * self.size + c as usize;
                    counts[self.grid[idx] as usize] += 1.0;
                    slope_sum += self.slope[idx];
                } else {
                    counts[1] += 1.0; // other-obstacles: the edge reads as a wall
                }
            }
        }
        let mut hist = counts;
        for h in &mut hist {
            *h /= 9.0;
        }
        (hist, slope_sum / 9.0)
    }

    /// Deterministic observation feature vector with seeded sensor noise.
    pub fn observe(
        &self,
        state: &VehicleState,
        noise_seed: u64,
        noise_std: f64,
    ) -> Result<Vec<f64>> {
        if !self.in_bounds(state.x, state.y) {
            return Err(Error::Observation(format!(
                "vehicle at ({:.2}, {:.2}) outside the grid",
                state.x, state.y
            )));
        }
        let mut features = Vec::with_capacity(FEATURE_DIM);
        for d in OBS_OFFSET_CELLS {
            let ahead = d as f64 * self.cell_size;
            let px = state.x + ahead * state.psi.cos();
            let py = state.y + ahead * state.psi.sin();
            let (hist, slope) = self.patch_features(px, py);
            features.extend_from_slice(&hist);
            features.push(slope);
        }
        features.push(state.psi.sin());
        features.push(state.psi.cos());
        features.push(state.v / V_MAX);
        features.push(1.0);
        debug_assert_eq!(features.len(), FEATURE_DIM);

        if noise_std > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
            for f in &mut features {
                *f += noise_std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(features)
    }

    /// Per-step labels for `states[1..]`: the cell class, whether it is a
    /// collision class, and the heading. Leaving the grid truncates the labels.
    pub fn ground_truth(
        &self,
        states: &[VehicleState],
        collision_classes: &BTreeSet<usize>,
    ) -> GroundTruth {
        let mut steps = Vec::new();
        for s in states.iter().skip(1) {
            match self.class_at(s.x, s.y) {
                Ok(class) => steps.push(StepTruth {
                    class,
                    collision: collision_classes.contains(&class),
                    bearing: s.psi,
                }),
                Err(_) => {
                    return GroundTruth {
                        steps,
                        truncated: true,
                    }
                }
            }
        }
        GroundTruth {
            steps,
            truncated: false,
        }
    }

    /// One dynamics step with the slope refreshed from the terrain under the
    /// vehicle; this is the ground-truth simulation used by datasets and
    /// episodes.
    pub fn step_in_world(
        &self,
        state: &VehicleState,
        input: &ControlInput,
        params: &ModelParams,
        dt: f64,
    ) -> Result<VehicleState> {
        let mut s = *state;
        s.phi = self.slope_at(s.x, s.y)?;
        step_rk4(&s, input, params, dt)
    }
}

/// Random-rollout training data: random starts, smoothed random steering, and
/// per-step throttle drawn from the {0, 0.5, 1} grid plus continuous jitter.
#[allow(clippy::too_many_arguments)]
pub fn make_dataset(
    world: &TerrainWorld,
    n_samples: usize,
    horizon: usize,
    seed: u64,
    params: &ModelParams,
    delta_max: f64,
    obs_noise_std: f64,
    collision_classes: &BTreeSet<usize>,
) -> Result<Vec<TrajectorySample>> {
    if !crate::seqmodel::TRAINING_HORIZONS.contains(&horizon) {
        return Err(Error::Domain(format!(
            "training horizon must be one of {:?}, got {horizon}",
            crate::seqmodel::TRAINING_HORIZONS
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let margin = 2.0 * world.cell_size();
    let extent = world.extent();
    let mut samples = Vec::with_capacity(n_samples);
    let max_attempts = 100 * n_samples.max(1);
    let mut attempts = 0usize;

    while samples.len() < n_samples {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Generation(format!(
                "could not place {n_samples} in-bounds rollouts after {max_attempts} attempts \
                 (world too small for horizon {horizon})"
            )));
        }
        let start = VehicleState::new(
            rng.gen_range(margin..extent - margin),
            rng.gen_range(margin..extent - margin),
            rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
            rng.gen_range(0.0..V_MAX),
            0.0,
            1e-3,
        );

        let mut delta = rng.gen_range(-delta_max..delta_max);
        let mut actions = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            delta = (delta + rng.gen_range(-0.1..0.1)).clamp(-delta_max, delta_max);
            let grid_throttle: f64 = [0.0, 0.5, 1.0][rng.gen_range(0..3usize)];
            let throttle = (grid_throttle + rng.gen_range(-0.125..0.125)).clamp(0.0, 1.0);
            let dt = crate::vehicle::throttle_to_dt(throttle)?;
            actions.push([delta, throttle, dt]);
        }

        // Roll the true dynamics; retry when the trajectory leaves the grid.
        let mut states = vec![start];
        let mut ok = true;
        for row in &actions {
            let input = ControlInput::bounded(row[0], row[1], delta_max)?;
            match world.step_in_world(states.last().unwrap(), &input, params, row[2]) {
                Ok(next) if world.in_bounds(next.x, next.y) => states.push(next),
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }

        let truth = world.ground_truth(&states, collision_classes);
        debug_assert!(!truth.truncated);
        let noise_seed = seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(samples.len() as u64);
        let obs = world.observe(&start, noise_seed, obs_noise_std)?;
        samples.push(TrajectorySample {
            obs,
            actions,
            event_labels: truth.steps.iter().map(|s| s.class).collect(),
            bearing_labels: truth.steps.iter().map(|s| s.bearing).collect(),
        });
    }
    Ok(samples)
}

#[derive(Debug, Serialize, Deserialize)]
struct WorldHeader {
    seed: u64,
    size: usize,
    cell_size: f64,
    class_frequencies: Vec<f64>,
}

/// Persist a world: one JSON header line, then the class-index byte grid and
/// the little-endian f64 slope grid, row-major.
pub fn save_world(path: &Path, world: &TerrainWorld) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let header = WorldHeader {
        seed: world.seed,
        size: world.size,
        cell_size: world.cell_size,
        class_frequencies: world.class_frequencies.clone(),
    };
    let mut out = BufWriter::new(fs::File::create(path)?);
    let json =
        serde_json::to_string(&header).map_err(|e| Error::Config(format!("world header: {e}")))?;
    out.write_all(json.as_bytes())?;
    out.write_all(b"\n")?;
    out.write_all(&world.grid)?;
    for v in &world.slope {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_world(path: &Path) -> Result<TerrainWorld> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut header_line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        reader.read_exact(&mut byte)?;
        if byte[0] == b'\n' {
            break;
        }
        header_line.push(byte[0]);
        if header_line.len() > 4096 {
            return Err(Error::Config("world header is not terminated".into()));
        }
    }
    let header: WorldHeader = serde_json::from_slice(&header_line)
        .map_err(|e| Error::Config(format!("world header: {e}")))?;
    let n = header.size * header.size;
    let mut grid = vec![0u8; n];
    reader.read_exact(&mut grid)?;
    if grid.iter().any(|&c| c as usize >= NUM_EVENT_CLASSES) {
        return Err(Error::Config("world grid has out-of-range class indices".into()));
    }
    let mut slope = vec![0.0f64; n];
    let mut buf = [0u8; 8];
    for v in &mut slope {
        reader.read_exact(&mut buf)?;
        *v = f64::from_le_bytes(buf);
    }
    Ok(TerrainWorld {
        size: header.size,
        cell_size: header.cell_size,
        seed: header.seed,
        class_frequencies: header.class_frequencies,
        grid,
        slope,
    })
}

/// A world with a single class everywhere and zero slope; handy for tests and
/// smoke scenarios.
pub fn uniform_world(size: usize, cell_size: f64, class: usize) -> TerrainWorld {
    let mut freqs = vec![0.0; NUM_EVENT_CLASSES];
    freqs[class] = 1.0;
    TerrainWorld {
        size,
        cell_size,
        seed: 0,
        class_frequencies: freqs,
        grid: vec![class as u8; size * size],
        slope: vec![0.0; size * size],
    }
}

/// Override the class of the cell containing `(x, y)`; test/bench helper for
/// constructing specific scenarios.
pub fn set_cell_class(world: &mut TerrainWorld, x: f64, y: f64, class: usize) {
    if let Some(idx) = world.cell_index(x, y) {
        world.grid[idx] = class as u8;
    }
}
