//! Paired closed-loop study at reduced scale: the same seeds driven with the
//! uncertainty term enabled (beta_sigma = 10) and disabled (beta_sigma = 0).
//! The uncertainty-aware arm should drive slower and accumulate less sigma.
//!
//! ```bash
//! cargo run --release --example speed_uncertainty_tradeoff
//! ```

use offroad_planner::config::RunConfig;
use offroad_planner::planner::{run_paired_study, EnsembleSource};
use offroad_planner::seqmodel::{train, TrainConfig};
use offroad_planner::stats::sign_test_p;
use offroad_planner::worldsim::{generate_world, make_dataset};
use offroad_planner::Result;

fn main() -> Result<()> {
    let mut cfg = RunConfig::default();
    cfg.model.train = TrainConfig {
        epochs: 10,
        ..cfg.model.train
    };
    let world = generate_world(cfg.seed, &cfg.world)?;
    let data = make_dataset(
        &world,
        600,
        10,
        cfg.seed,
        &cfg.vehicle,
        cfg.planner.delta_max,
        cfg.world.obs_noise_std,
        &cfg.reward.event.collision_classes,
    )?;
    let model_cfg = cfg.model.model_config();
    let members: Vec<_> = (0..cfg.ensemble.members)
        .map(|i| {
            let tc = TrainConfig {
                seed: cfg.model.train.seed.wrapping_add(i as u64),
                ..cfg.model.train
            };
            train(&data, &model_cfg, &tc).map(|r| r.weights)
        })
        .collect::<Result<_>>()?;
    let source = EnsembleSource {
        models: members,
        weights: cfg.ensemble.weights(),
    };

    let episodes = 8; // reduced scale; the acceptance suite runs 50
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

    println!("seed  arm            speed   sigma    success");
    for (i, (a, b)) in study
        .with_uncertainty
        .iter()
        .zip(&study.without_uncertainty)
        .enumerate()
    {
        println!(
            "{i:>4}  beta_sigma=10  {:>5.2}  {:>7.4}  {}",
            a.metrics.mean_speed, a.metrics.mean_sigma, a.metrics.success
        );
        println!(
            "      beta_sigma=0   {:>5.2}  {:>7.4}  {}",
            b.metrics.mean_speed, b.metrics.mean_sigma, b.metrics.success
        );
    }
    let speed_diffs = study.speed_diffs();
    let sigma_diffs = study.sigma_diffs();
    println!(
        "\nspeed: slower with uncertainty in {}/{} pairs (sign test p = {:.4})",
        speed_diffs.iter().filter(|&&d| d < 0.0).count(),
        episodes,
        sign_test_p(&speed_diffs)
    );
    println!(
        "sigma: lower with uncertainty in {}/{} pairs (sign test p = {:.4})",
        sigma_diffs.iter().filter(|&&d| d < 0.0).count(),
        episodes,
        sign_test_p(&sigma_diffs)
    );
    Ok(())
}
