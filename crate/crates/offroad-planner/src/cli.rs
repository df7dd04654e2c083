//! Command-line orchestration: configuration loading, experiment subcommands,
//! and CSV emission. Every subcommand is reproducible: the same config and
//! seed produce byte-identical output files.

use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::config::{load_config, RunConfig};
use crate::error::{Error, Result};
use crate::optim::{cem_minimize, cma_minimize, BoxProblem, CemConfig, CmaConfig};
use crate::planner::{run_paired_study, EnsembleSource, EpisodeResult};
use crate::seqmodel::{
    load_dataset, load_weights, model_gradient_check, per_step_metrics, save_dataset,
    save_weights, train, Architecture, ModelConfig, ModelWeights, TrajectorySample,
};
use crate::stats;
use crate::uncertainty::{ensemble_predict, uncertainty_trace};
use crate::worldsim::{generate_world, load_world, make_dataset, save_world, TerrainWorld};

/// One CSV cell. Floats are printed with 17 significant digits so they
/// round-trip bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub enum CsvValue {
    Int(i64),
    Float(f64),
    Str(String),
}

impl From<f64> for CsvValue {
    fn from(v: f64) -> Self {
        CsvValue::Float(v)
    }
}

impl From<i64> for CsvValue {
    fn from(v: i64) -> Self {
        CsvValue::Int(v)
    }
}

impl From<usize> for CsvValue {
    fn from(v: usize) -> Self {
        CsvValue::Int(v as i64)
    }
}

impl From<&str> for CsvValue {
    fn from(v: &str) -> Self {
        CsvValue::Str(v.to_string())
    }
}

/// Positional decimal rendering with 17 significant digits: exact for every
/// finite f64 on re-parse.
pub fn format_f64(x: f64) -> String {
    if x.is_nan() {
        return "NaN".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    if x == 0.0 {
        return if x.is_sign_negative() {
            "-0.00000000000000000"
        } else {
            "0.00000000000000000"
        }
        .to_string();
    }
    // Decimal exponent via the scientific formatter, then 17 significant
    // digits in positional notation.
    let sci = format!("{x:e}");
    let exp: i32 = sci
        .split('e')
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let frac = (16 - exp).max(0) as usize;
    format!("{x:.frac$}")
}

fn csv_escape(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') || s.contains('\r') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn csv_cell(v: &CsvValue) -> String {
    match v {
        CsvValue::Int(i) => i.to_string(),
        CsvValue::Float(f) => format_f64(*f),
        CsvValue::Str(s) => csv_escape(s),
    }
}

/// Write an RFC-4180-style CSV with LF line endings. Rows must match the
/// header width.
pub fn emit_csv(path: &Path, header: &[&str], rows: &[Vec<CsvValue>]) -> Result<()> {
    for (i, row) in rows.iter().enumerate() {
        if row.len() != header.len() {
            return Err(Error::Domain(format!(
                "csv row {i} has {} cells, header has {}",
                row.len(),
                header.len()
            )));
        }
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut out = String::new();
    out.push_str(&header.iter().map(|h| csv_escape(h)).collect::<Vec<_>>().join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.iter().map(csv_cell).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Parser)]
#[command(
    name = "offroad-planner",
    version,
    about = "Uncertainty-aware hybrid offroad planner over a synthetic terrain world"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a seeded terrain world file.
    GenWorld {
        #[arg(long)]
        config: PathBuf,
        /// Output world file (default: <output_dir>/world.bin).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a labeled random-rollout dataset from a world.
    MakeDataset {
        #[arg(long)]
        config: PathBuf,
        /// Reuse a saved world instead of regenerating from the config seed.
        #[arg(long)]
        world: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        /// Planning horizon: 10, 20 or 40.
        #[arg(long, default_value_t = 20)]
        horizon: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one predictive model.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// transformer | lstm (default: the config's model.architecture).
        #[arg(long)]
        architecture: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the ensemble: `ensemble.members` models with distinct seeds.
    TrainEnsemble {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-step macro-F1 / accuracy / bearing-MAE curves on a held-out set.
    EvalModel {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-step ensemble mutual-information curves on a held-out set.
    UncertaintyCurve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ensemble: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Paired closed-loop study: beta_sigma as configured vs beta_sigma = 0.
    RunEpisodes {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ensemble: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient check of both architectures.
    GradCheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// CEM and CMA-ES benchmark suite (sphere, Rosenbrock).
    BenchOptim {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Cap worker parallelism from the PLANNER_THREADS environment variable.
fn init_thread_pool() {
    if let Ok(v) = std::env::var("PLANNER_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

/// Entry point behind the binary: returns the process exit code.
/// 0 = success, 1 = usage or configuration error, 2 = runtime error.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    init_thread_pool();
    let args: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn load_optional(config: Option<&PathBuf>) -> Result<RunConfig> {
    match config {
        Some(path) => load_config(path),
        None => Ok(RunConfig::default()),
    }
}

fn prepared(config: &Path) -> Result<RunConfig> {
    let cfg = load_config(config)?;
    cfg.write_resolved(&cfg.output_dir)?;
    Ok(cfg)
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenWorld { config, out } => {
            let cfg = prepared(&config)?;
            let world = generate_world(cfg.seed, &cfg.world)?;
            let path = out.unwrap_or_else(|| cfg.output_dir.join("world.bin"));
            save_world(&path, &world)?;
            println!(
                "world seed={} size={} cells ({:.1} m) -> {}",
                cfg.seed,
                cfg.world.size,
                world.extent(),
                path.display()
            );
            Ok(())
        }
        Cmd::MakeDataset {
            config,
            world,
            samples,
            horizon,
            out,
        } => {
            let cfg = prepared(&config)?;
            let w = match world {
                Some(p) => load_world(&p)?,
                None => generate_world(cfg.seed, &cfg.world)?,
            };
            let data = make_dataset(
                &w,
                samples,
                horizon,
                cfg.seed,
                &cfg.vehicle,
                cfg.planner.delta_max,
                cfg.world.obs_noise_std,
                &cfg.reward.event.collision_classes,
            )?;
            let path =
                out.unwrap_or_else(|| cfg.output_dir.join(format!("dataset_h{horizon}.bin")));
            save_dataset(&path, &data, cfg.seed)?;
            println!("dataset n={} H={horizon} -> {}", data.len(), path.display());
            Ok(())
        }
        Cmd::Train {
            config,
            dataset,
            architecture,
            seed,
            out,
        } => {
            let cfg = prepared(&config)?;
            let (data, _) = load_dataset(&dataset)?;
            let mut model_cfg = cfg.model.model_config();
            if let Some(arch) = architecture {
                model_cfg.architecture = arch.parse()?;
            }
            let mut train_cfg = cfg.model.train;
            if let Some(s) = seed {
                train_cfg.seed = s;
            }
            let dir = out.unwrap_or_else(|| {
                cfg.output_dir.join(format!(
                    "model-{}-s{}",
                    model_cfg.architecture, train_cfg.seed
                ))
            });
            let result = train(&data, &model_cfg, &train_cfg)?;
            save_weights(&dir, &result.weights, Some(&train_cfg))?;
            let rows: Vec<Vec<CsvValue>> = result
                .epoch_losses
                .iter()
                .enumerate()
                .map(|(e, l)| vec![e.into(), (*l).into()])
                .collect();
            emit_csv(&dir.join("loss.csv"), &["epoch", "loss"], &rows)?;
            println!(
                "trained {} on {} samples, best epoch loss {:.4} -> {}",
                model_cfg.architecture,
                data.len(),
                result.epoch_losses.iter().cloned().fold(f64::INFINITY, f64::min),
                dir.display()
            );
            Ok(())
        }
        Cmd::TrainEnsemble {
            config,
            dataset,
            out,
        } => {
            let cfg = prepared(&config)?;
            let (data, _) = load_dataset(&dataset)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.join("ensemble"));
            train_ensemble(&cfg, &data, &dir)?;
            println!("trained {} members -> {}", cfg.ensemble.members, dir.display());
            Ok(())
        }
        Cmd::EvalModel {
            config,
            weights,
            dataset,
            out,
        } => {
            let cfg = prepared(&config)?;
            let w = load_weights(&weights)?;
            let (data, _) = load_dataset(&dataset)?;
            let metrics = per_step_metrics(&w, &data)?;
            let rows: Vec<Vec<CsvValue>> = metrics
                .iter()
                .map(|m| {
                    vec![
                        m.step.into(),
                        m.macro_f1.into(),
                        m.accuracy.into(),
                        m.bearing_mae.into(),
                    ]
                })
                .collect();
            let path = out.unwrap_or_else(|| cfg.output_dir.join("metrics.csv"));
            emit_csv(&path, &["step", "macro_f1", "accuracy", "bearing_mae"], &rows)?;
            println!("per-step metrics over {} samples -> {}", data.len(), path.display());
            Ok(())
        }
        Cmd::UncertaintyCurve {
            config,
            ensemble,
            dataset,
            out,
        } => {
            let cfg = prepared(&config)?;
            let models = load_ensemble(&ensemble)?;
            let (data, _) = load_dataset(&dataset)?;
            let path = out.unwrap_or_else(|| cfg.output_dir.join("uncertainty_curve.csv"));
            uncertainty_curve(&cfg, &models, &data, &path)?;
            println!("uncertainty curve over {} samples -> {}", data.len(), path.display());
            Ok(())
        }
        Cmd::RunEpisodes {
            config,
            ensemble,
            episodes,
            out,
        } => {
            let cfg = prepared(&config)?;
            let models = load_ensemble(&ensemble)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.join("study"));
            let n = episodes.unwrap_or(cfg.planner.episodes);
            run_episode_study(&cfg, models, n, &dir)
        }
        Cmd::GradCheck { config, seed } => {
            let cfg = load_optional(config.as_ref())?;
            cfg.write_resolved(&cfg.output_dir)?;
            let seed = seed.unwrap_or(cfg.seed);
            let mut rows = Vec::new();
            let mut worst: f64 = 0.0;
            for arch in [Architecture::Transformer, Architecture::Lstm] {
                let check_cfg = ModelConfig {
                    architecture: arch,
                    feature_dim: 8,
                    width: 8,
                    layers: 2,
                    heads: 2,
                    hidden_mult: 2,
                    var_min: 1e-6,
                };
                let rel = model_gradient_check(&check_cfg, seed, 4, 100, 1e-5)?;
                println!("{arch}: max relative gradient error {rel:.3e}");
                rows.push(vec![
                    CsvValue::Str(arch.to_string()),
                    CsvValue::Float(rel),
                ]);
                worst = worst.max(rel);
            }
            emit_csv(
                &cfg.output_dir.join("grad_check.csv"),
                &["architecture", "max_rel_error"],
                &rows,
            )?;
            if worst < 1e-4 {
                Ok(())
            } else {
                Err(Error::Domain(format!(
                    "gradient check failed: max relative error {worst:.3e} >= 1e-4"
                )))
            }
        }
        Cmd::BenchOptim { config, seed } => {
            let cfg = load_optional(config.as_ref())?;
            cfg.write_resolved(&cfg.output_dir)?;
            let seed = seed.unwrap_or(cfg.seed);
            bench_optim(&cfg, seed)
        }
    }
}

/// Train `members` models with distinct seeds and persist them as
/// member_<i> directories plus an ensemble manifest.
pub fn train_ensemble(cfg: &RunConfig, data: &[TrajectorySample], dir: &Path) -> Result<Vec<ModelWeights>> {
    let model_cfg = cfg.model.model_config();
    let base = cfg.model.train;
    let members: Vec<(u64, crate::seqmodel::TrainResult)> = (0..cfg.ensemble.members)
        .into_par_iter()
        .map(|i| {
            let mut tc = base;
            tc.seed = base.seed.wrapping_add(i as u64);
            train(data, &model_cfg, &tc).map(|r| (tc.seed, r))
        })
        .collect::<Result<_>>()?;

    fs::create_dir_all(dir)?;
    let mut loss_rows: Vec<Vec<CsvValue>> = Vec::new();
    let mut seeds = Vec::new();
    for (i, (seed, result)) in members.iter().enumerate() {
        let mut tc = base;
        tc.seed = *seed;
        save_weights(&dir.join(format!("member_{i}")), &result.weights, Some(&tc))?;
        seeds.push(*seed);
        for (e, l) in result.epoch_losses.iter().enumerate() {
            loss_rows.push(vec![i.into(), e.into(), (*l).into()]);
        }
    }
    emit_csv(&dir.join("loss.csv"), &["member", "epoch", "loss"], &loss_rows)?;
    let manifest = serde_json::json!({
        "members": cfg.ensemble.members,
        "seeds": seeds,
    });
    fs::write(
        dir.join("ensemble.json"),
        serde_json::to_string_pretty(&manifest).unwrap() + "\n",
    )?;
    Ok(members.into_iter().map(|(_, r)| r.weights).collect())
}

pub fn load_ensemble(dir: &Path) -> Result<Vec<ModelWeights>> {
    let manifest = fs::read_to_string(dir.join("ensemble.json"))
        .map_err(|e| Error::Config(format!("{}: {e}", dir.join("ensemble.json").display())))?;
    let v: serde_json::Value = serde_json::from_str(&manifest)
        .map_err(|e| Error::Config(format!("ensemble.json: {e}")))?;
    let members = v["members"]
        .as_u64()
        .ok_or_else(|| Error::Config("ensemble.json: missing members".into()))? as usize;
    (0..members)
        .map(|i| load_weights(&dir.join(format!("member_{i}"))))
        .collect()
}

/// Mean per-step MI curves over a held-out dataset.
fn uncertainty_curve(
    cfg: &RunConfig,
    models: &[ModelWeights],
    data: &[TrajectorySample],
    path: &Path,
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::domain("uncertainty curve needs a non-empty dataset"));
    }
    let h = data[0].horizon();
    let weights = cfg.ensemble.weights();
    let traces: Vec<crate::uncertainty::UncertaintyTrace> = data
        .par_iter()
        .map(|s| {
            let ens = ensemble_predict(models, &s.obs, &s.actions)?;
            uncertainty_trace(&ens, &weights)
        })
        .collect::<Result<_>>()?;
    let n = data.len() as f64;
    let mut rows = Vec::with_capacity(h);
    for t in 0..h {
        let mi_class: f64 = traces.iter().map(|tr| tr.mi_class[t]).sum::<f64>() / n;
        let mi_kl: f64 = traces.iter().map(|tr| tr.mi_bearing_kl[t]).sum::<f64>() / n;
        let mi_bh: f64 = traces.iter().map(|tr| tr.mi_bearing_bhatt[t]).sum::<f64>() / n;
        let sigma: f64 = traces.iter().map(|tr| tr.sigma[t]).sum::<f64>() / n;
        rows.push(vec![
            t.into(),
            mi_class.into(),
            mi_kl.into(),
            mi_bh.into(),
            sigma.into(),
        ]);
    }
    emit_csv(path, &["step", "mi_class", "mi_kl", "mi_bhatt", "sigma"], &rows)
}

fn episode_tick_rows(result: &EpisodeResult) -> Vec<Vec<CsvValue>> {
    result
        .ticks
        .iter()
        .map(|t| {
            vec![
                t.tick.into(),
                t.state.x.into(),
                t.state.y.into(),
                t.state.psi.into(),
                t.state.v.into(),
                t.delta.into(),
                t.throttle.into(),
                t.dt.into(),
                t.sigma.into(),
                t.expected_return.into(),
                t.mhe_cost.into(),
            ]
        })
        .collect()
}

const TICK_HEADER: [&str; 11] = [
    "tick", "x", "y", "psi", "v", "delta", "throttle", "dt", "sigma", "return", "mhe_cost",
];

fn write_episode(dir: &Path, result: &EpisodeResult) -> Result<()> {
    emit_csv(&dir.join("ticks.csv"), &TICK_HEADER, &episode_tick_rows(result))?;
    let m = &result.metrics;
    let rows: Vec<Vec<CsvValue>> = vec![
        vec!["success".into(), CsvValue::Int(m.success as i64)],
        vec!["ticks".into(), m.ticks.into()],
        vec!["mean_speed".into(), m.mean_speed.into()],
        vec!["speed_variance".into(), m.speed_variance.into()],
        vec!["collision_events".into(), m.collision_events.into()],
        vec!["mean_sigma".into(), m.mean_sigma.into()],
        vec!["expected_return_avg".into(), m.expected_return_avg.into()],
    ];
    emit_csv(&dir.join("summary.csv"), &["field", "value"], &rows)
}

fn run_episode_study(
    cfg: &RunConfig,
    models: Vec<ModelWeights>,
    episodes: usize,
    dir: &Path,
) -> Result<()> {
    let world = generate_world(cfg.seed, &cfg.world)?;
    let source = EnsembleSource {
        models,
        weights: cfg.ensemble.weights(),
    };
    let study = run_paired_study(
        &world,
        &source,
        cfg.vehicle,
        &cfg.planner,
        &cfg.reward.event,
        &cfg.reward.mpc,
        &cfg.mhe,
        &cfg.optimizer,
        cfg.world.obs_noise_std,
        cfg.seed,
        episodes,
    )?;

    let mut summary_rows: Vec<Vec<CsvValue>> = Vec::new();
    for (arm, results) in [
        ("beta_sigma", &study.with_uncertainty),
        ("beta_zero", &study.without_uncertainty),
    ] {
        for (i, r) in results.iter().enumerate() {
            write_episode(&dir.join(format!("ep{i:03}_{arm}")), r)?;
            let m = &r.metrics;
            summary_rows.push(vec![
                arm.into(),
                i.into(),
                CsvValue::Int(m.success as i64),
                m.ticks.into(),
                m.mean_speed.into(),
                m.speed_variance.into(),
                m.collision_events.into(),
                m.mean_sigma.into(),
                m.expected_return_avg.into(),
            ]);
        }
    }
    emit_csv(
        &dir.join("study_summary.csv"),
        &[
            "arm",
            "episode",
            "success",
            "ticks",
            "mean_speed",
            "speed_variance",
            "collision_events",
            "mean_sigma",
            "expected_return_avg",
        ],
        &summary_rows,
    )?;

    let speed_diffs = study.speed_diffs();
    let sigma_diffs = study.sigma_diffs();
    let p_speed = stats::sign_test_p(&speed_diffs);
    let p_sigma = stats::sign_test_p(&sigma_diffs);
    let mean_of = |xs: &[EpisodeResult], f: &dyn Fn(&EpisodeResult) -> f64| {
        xs.iter().map(f).sum::<f64>() / xs.len() as f64
    };
    let rows: Vec<Vec<CsvValue>> = vec![
        vec![
            "mean_speed".into(),
            mean_of(&study.with_uncertainty, &|r| r.metrics.mean_speed).into(),
            mean_of(&study.without_uncertainty, &|r| r.metrics.mean_speed).into(),
            p_speed.into(),
        ],
        vec![
            "mean_sigma".into(),
            mean_of(&study.with_uncertainty, &|r| r.metrics.mean_sigma).into(),
            mean_of(&study.without_uncertainty, &|r| r.metrics.mean_sigma).into(),
            p_sigma.into(),
        ],
    ];
    emit_csv(
        &dir.join("paired_tests.csv"),
        &["metric", "with_beta_sigma", "without_beta_sigma", "sign_test_p"],
        &rows,
    )?;
    println!(
        "paired study over {episodes} seeds: speed p = {p_speed:.4}, sigma p = {p_sigma:.4} -> {}",
        dir.display()
    );
    Ok(())
}

fn bench_optim(cfg: &RunConfig, seed: u64) -> Result<()> {
    let sphere = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
    let rosenbrock =
        |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);

    let cem_problem = BoxProblem {
        dim: 4,
        lower: vec![-5.0; 4],
        upper: vec![5.0; 4],
        objective: &sphere,
        budget: 64 * 50,
        seed,
    };
    let cem = cem_minimize(&cem_problem, &CemConfig::default())?;
    let cem_norm = cem.best_x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let cem_pass = cem_norm < 1e-3;
    println!(
        "CEM sphere dim 4: |x| = {cem_norm:.3e} after {} evaluations ({})",
        cem.evaluations,
        if cem_pass { "pass" } else { "FAIL" }
    );

    let cma_problem = BoxProblem {
        dim: 2,
        lower: vec![-5.0; 2],
        upper: vec![10.0; 2],
        objective: &rosenbrock,
        budget: 5000,
        seed: seed.wrapping_add(1),
    };
    let cma = cma_minimize(&cma_problem, &CmaConfig::default())?;
    let cma_pass = cma.best_f < 1e-6;
    println!(
        "CMA-ES Rosenbrock 2-D: f = {:.3e} after {} evaluations ({})",
        cma.best_f,
        cma.evaluations,
        if cma_pass { "pass" } else { "FAIL" }
    );

    let rows: Vec<Vec<CsvValue>> = vec![
        vec![
            "cem".into(),
            "sphere4".into(),
            cem.best_f.into(),
            cem.evaluations.into(),
            CsvValue::Int(cem_pass as i64),
        ],
        vec![
            "cma-es".into(),
            "rosenbrock2".into(),
            cma.best_f.into(),
            cma.evaluations.into(),
            CsvValue::Int(cma_pass as i64),
        ],
    ];
    emit_csv(
        &cfg.output_dir.join("bench_optim.csv"),
        &["optimizer", "problem", "best_f", "evaluations", "pass"],
        &rows,
    )?;
    if cem_pass && cma_pass {
        Ok(())
    } else {
        Err(Error::domain("optimizer benchmark target missed"))
    }
}

/// Build the episode study world the same way `run-episodes` does; shared with
/// the examples.
pub fn study_world(cfg: &RunConfig) -> Result<TerrainWorld> {
    generate_world(cfg.seed, &cfg.world)
}
