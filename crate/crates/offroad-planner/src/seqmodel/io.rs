//! Weight and dataset persistence.
//!
//! Weights: a directory holding `manifest.json` (architecture config, shapes,
//! seed, training config) plus `weights.bin`, the raw little-endian f64 tensor
//! buffers concatenated in manifest order.
//!
//! Datasets: a single file with a one-line JSON header followed by fixed-size
//! binary records (obs f64s, action f64s, event-label bytes, bearing f64s).

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tape::Tensor;
use super::{manifest, ModelConfig, ModelWeights, TrainConfig, TrajectorySample};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct WeightsManifest {
    config: ModelConfig,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    train: Option<TrainConfig>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

pub fn save_weights(dir: &Path, weights: &ModelWeights, train: Option<&TrainConfig>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let entries = weights
        .tensors()
        .iter()
        .map(|(name, t)| TensorEntry {
            name: name.clone(),
            rows: t.rows,
            cols: t.cols,
        })
        .collect();
    let m = WeightsManifest {
        config: weights.config,
        seed: weights.seed,
        train: train.copied(),
        tensors: entries,
    };
    let json = serde_json::to_string_pretty(&m)
        .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
    fs::write(dir.join("manifest.json"), json)?;

    let mut out = BufWriter::new(fs::File::create(dir.join("weights.bin"))?);
    for (_, t) in weights.tensors() {
        for v in &t.data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_weights(dir: &Path) -> Result<ModelWeights> {
    let json = fs::read_to_string(dir.join("manifest.json"))?;
    let m: WeightsManifest =
        serde_json::from_str(&json).map_err(|e| Error::Config(format!("manifest.json: {e}")))?;

    let expected = manifest(&m.config);
    if m.tensors.len() != expected.len() {
        return Err(Error::Config(format!(
            "manifest lists {} tensors, architecture needs {}",
            m.tensors.len(),
            expected.len()
        )));
    }
    for (entry, (name, rows, cols)) in m.tensors.iter().zip(&expected) {
        if &entry.name != name || entry.rows != *rows || entry.cols != *cols {
            return Err(Error::Config(format!(
                "manifest tensor {} ({}x{}) does not match expected {name} ({rows}x{cols})",
                entry.name, entry.rows, entry.cols
            )));
        }
    }

    let mut reader = BufReader::new(fs::File::open(dir.join("weights.bin"))?);
    let mut tensors = Vec::with_capacity(expected.len());
    for (name, rows, cols) in expected {
        let mut data = vec![0.0f64; rows * cols];
        let mut buf = [0u8; 8];
        for v in &mut data {
            reader.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        tensors.push((name, Tensor { rows, cols, data }));
    }
    let mut trailing = Vec::new();
    reader.read_to_end(&mut trailing)?;
    if !trailing.is_empty() {
        return Err(Error::Config(format!(
            "weights.bin has {} trailing bytes",
            trailing.len()
        )));
    }
    ModelWeights::from_tensors(m.config, m.seed, tensors)
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    n: usize,
    feature_dim: usize,
    horizon: usize,
    seed: u64,
}

pub fn save_dataset(path: &Path, samples: &[TrajectorySample], seed: u64) -> Result<()> {
    let feature_dim = samples.first().map(|s| s.obs.len()).unwrap_or(0);
    let horizon = samples.first().map(|s| s.horizon()).unwrap_or(0);
    for s in samples {
        if s.obs.len() != feature_dim || s.horizon() != horizon {
            return Err(Error::domain("dataset samples must share obs length and horizon"));
        }
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let header = DatasetHeader {
        n: samples.len(),
        feature_dim,
        horizon,
        seed,
    };
    let mut out = BufWriter::new(fs::File::create(path)?);
    let header_json = serde_json::to_string(&header)
        .map_err(|e| Error::Config(format!("dataset header: {e}")))?;
    out.write_all(header_json.as_bytes())?;
    out.write_all(b"\n")?;
    for s in samples {
        for v in &s.obs {
            out.write_all(&v.to_le_bytes())?;
        }
        for row in &s.actions {
            for v in row {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        for &lab in &s.event_labels {
            out.write_all(&[lab as u8])?;
        }
        for v in &s.bearing_labels {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<(Vec<TrajectorySample>, u64)> {
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
            return Err(Error::Config("dataset header is not terminated".into()));
        }
    }
    let header: DatasetHeader = serde_json::from_slice(&header_line)
        .map_err(|e| Error::Config(format!("dataset header: {e}")))?;

    let read_f64 = |r: &mut BufReader<fs::File>| -> Result<f64> {
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf)?;
        Ok(f64::from_le_bytes(buf))
    };

    let mut samples = Vec::with_capacity(header.n);
    for _ in 0..header.n {
        let mut obs = Vec::with_capacity(header.feature_dim);
        for _ in 0..header.feature_dim {
            obs.push(read_f64(&mut reader)?);
        }
        let mut actions = Vec::with_capacity(header.horizon);
        for _ in 0..header.horizon {
            actions.push([
                read_f64(&mut reader)?,
                read_f64(&mut reader)?,
                read_f64(&mut reader)?,
            ]);
        }
        let mut event_labels = Vec::with_capacity(header.horizon);
        for _ in 0..header.horizon {
            reader.read_exact(&mut byte)?;
            event_labels.push(byte[0] as usize);
        }
        let mut bearing_labels = Vec::with_capacity(header.horizon);
        for _ in 0..header.horizon {
            bearing_labels.push(read_f64(&mut reader)?);
        }
        samples.push(TrajectorySample {
            obs,
            actions,
            event_labels,
            bearing_labels,
        });
    }
    Ok((samples, header.seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqmodel::Architecture;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weights_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for arch in [Architecture::Transformer, Architecture::Lstm] {
            let cfg = ModelConfig {
                architecture: arch,
                feature_dim: 6,
                width: 8,
                layers: 1,
                heads: 2,
                ..ModelConfig::default()
            };
            let w = ModelWeights::init(cfg, 42).unwrap();
            let sub = dir.path().join(format!("{arch}"));
            save_weights(&sub, &w, Some(&TrainConfig::default())).unwrap();
            let loaded = load_weights(&sub).unwrap();
            assert_eq!(w, loaded);
        }
    }

    #[test]
    fn load_rejects_truncated_buffer() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig {
            feature_dim: 6,
            width: 8,
            layers: 1,
            heads: 2,
            ..ModelConfig::default()
        };
        let w = ModelWeights::init(cfg, 1).unwrap();
        save_weights(dir.path(), &w, None).unwrap();
        let bin = dir.path().join("weights.bin");
        let bytes = fs::read(&bin).unwrap();
        fs::write(&bin, &bytes[..bytes.len() - 8]).unwrap();
        assert!(load_weights(dir.path()).is_err());
    }

    #[test]
    fn dataset_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<TrajectorySample> = (0..5)
            .map(|_| TrajectorySample {
                obs: (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                actions: (0..4)
                    .map(|_| [rng.gen_range(-0.3..0.3), rng.gen_range(0.0..1.0), 0.4])
                    .collect(),
                event_labels: (0..4).map(|_| rng.gen_range(0..9)).collect(),
                bearing_labels: (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect(),
            })
            .collect();
        let path = dir.path().join("data.bin");
        save_dataset(&path, &samples, 99).unwrap();
        let (loaded, seed) = load_dataset(&path).unwrap();
        assert_eq!(seed, 99);
        assert_eq!(samples, loaded);
    }

    #[test]
    fn empty_dataset_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.bin");
        save_dataset(&path, &[], 0).unwrap();
        let (loaded, _) = load_dataset(&path).unwrap();
        assert!(loaded.is_empty());
    }
}
