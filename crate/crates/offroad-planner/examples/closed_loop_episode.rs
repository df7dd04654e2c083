//! Full planner loop on a synthetic world: train a small ensemble, then drive
//! one episode tick by tick (estimate, plan steering, plan throttle, execute)
//! and print the executed trace.
//!
//! ```bash
//! cargo run --release --example closed_loop_episode
//! ```

use offroad_planner::config::RunConfig;
use offroad_planner::planner::{run_episode, EnsembleSource, EpisodeSetup};
use offroad_planner::seqmodel::{train, TrainConfig};
use offroad_planner::worldsim::{generate_world, make_dataset};
use offroad_planner::Result;

fn main() -> Result<()> {
    let mut cfg = RunConfig::default();
    cfg.model.train = TrainConfig {
        epochs: 10,
        ..cfg.model.train
    };
    let world = generate_world(cfg.seed, &cfg.world)?;

    let t0 = std::time::Instant::now();
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
    println!("ensemble of {} trained in {:.1?}", members.len(), t0.elapsed());

    let source = EnsembleSource {
        models: members,
        weights: cfg.ensemble.weights(),
    };
    let setup = EpisodeSetup {
        world: &world,
        source: &source,
        true_params: cfg.vehicle,
        nominal_params: cfg.vehicle,
        planner: cfg.planner.clone(),
        event: cfg.reward.event.clone(),
        mpc: cfg.reward.mpc,
        mhe: cfg.mhe.clone(),
        optimizer: cfg.optimizer.clone(),
        obs_noise_std: cfg.world.obs_noise_std,
        seed: cfg.seed,
    };
    let result = run_episode(&setup)?;

    println!(
        "\ngoal {:?} from {:?}; executed trace:",
        cfg.planner.goal, cfg.planner.start
    );
    println!("tick     x       y      psi     v    delta   D     dt    sigma");
    for t in &result.ticks {
        println!(
            "{:>4}  {:>6.2}  {:>6.2}  {:>5.2}  {:>4.2}  {:>5.2}  {:>4.2}  {:>4.2}  {:>7.4}",
            t.tick, t.state.x, t.state.y, t.state.psi, t.state.v, t.delta, t.throttle, t.dt,
            t.sigma
        );
    }
    let m = &result.metrics;
    println!(
        "\nsuccess = {}, ticks = {}, mean speed = {:.2} m/s, mean sigma = {:.4}, collisions = {}",
        m.success, m.ticks, m.mean_speed, m.mean_sigma, m.collision_events
    );
    Ok(())
}
