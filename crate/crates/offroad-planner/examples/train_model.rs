//! Train the transformer world model on synthetic rollouts and evaluate its
//! per-step metrics against the LSTM baseline.
//!
//! ```bash
//! cargo run --release --example train_model
//! ```

use offroad_planner::config::RunConfig;
use offroad_planner::seqmodel::{per_step_metrics, train, Architecture, TrainConfig};
use offroad_planner::worldsim::{generate_world, make_dataset};
use offroad_planner::Result;

fn main() -> Result<()> {
    let cfg = RunConfig::default();
    let world = generate_world(cfg.seed, &cfg.world)?;
    let horizon = 10;
    let data = make_dataset(
        &world,
        700,
        horizon,
        cfg.seed,
        &cfg.vehicle,
        cfg.planner.delta_max,
        cfg.world.obs_noise_std,
        &cfg.reward.event.collision_classes,
    )?;
    let (train_set, test_set) = data.split_at(600);

    for arch in [Architecture::Transformer, Architecture::Lstm] {
        let mut model_cfg = cfg.model.model_config();
        model_cfg.architecture = arch;
        let tc = TrainConfig {
            epochs: 12,
            ..cfg.model.train
        };
        let t0 = std::time::Instant::now();
        let result = train(train_set, &model_cfg, &tc)?;
        println!("\n{arch}: trained {} epochs in {:.1?}", tc.epochs, t0.elapsed());
        println!(
            "  loss: first {:.4} -> best {:.4}",
            result.epoch_losses[0],
            result.epoch_losses.iter().cloned().fold(f64::INFINITY, f64::min)
        );
        println!("  step  macro_f1  accuracy  bearing_mae");
        for m in per_step_metrics(&result.weights, test_set)? {
            println!(
                "  {:>4}  {:>8.3}  {:>8.3}  {:>11.3}",
                m.step, m.macro_f1, m.accuracy, m.bearing_mae
            );
        }
    }
    Ok(())
}
