//! Scratch probe (not part of the example catalog).
use std::path::Path;
use offroad_planner::config::RunConfig;
use offroad_planner::planner::{run_episode, EnsembleSource, EpisodeSetup};
use offroad_planner::seqmodel::{forward, load_weights, save_weights, train, TrainConfig};
use offroad_planner::worldsim::{generate_world, make_dataset, uniform_world};
use offroad_planner::Result;

fn ensemble(cfg: &RunConfig) -> Result<Vec<offroad_planner::seqmodel::ModelWeights>> {
    let cache = Path::new("/tmp/probe_ensemble");
    if cache.join("member_4/manifest.json").exists() {
        return (0..5).map(|i| load_weights(&cache.join(format!("member_{i}")))).collect();
    }
    let world = generate_world(cfg.seed, &cfg.world)?;
    let data = make_dataset(&world, 1600, 20, cfg.seed, &cfg.vehicle, 0.35,
        cfg.world.obs_noise_std, &cfg.reward.event.collision_classes)?;
    let (tr, _) = data.split_at(1500);
    (0..5).map(|i| {
        let tc = TrainConfig { epochs: 150, batch_size: 64, lr: 3e-3, seed: cfg.model.train.seed + i };
        let r = train(tr, &cfg.model.model_config(), &tc)?;
        save_weights(&cache.join(format!("member_{i}")), &r.weights, Some(&tc))?;
        eprintln!("trained member {i}");
        Ok(r.weights)
    }).collect()
}

fn main() -> Result<()> {
    let cfg = RunConfig::default();
    let members = ensemble(&cfg)?;

    // Bearing response to steering: obs facing east, constant-delta candidates.
    let empty = uniform_world(64, 0.5, 7);
    let state = offroad_planner::vehicle::VehicleState::new(8.0, 16.0, 0.0, 2.0, 0.0, 1e-3);
    let obs = empty.observe(&state, 0, 0.0)?;
    for delta in [-0.3, -0.1, 0.0, 0.1, 0.3] {
        let actions: Vec<[f64;3]> = (0..10).map(|_| [delta, 0.5, 0.4]).collect();
        let preds = forward(&members[0], &obs, &actions)?;
        let mus: Vec<f64> = preds.iter().map(|p| p.bearing_mu).collect();
        eprintln!("delta {delta:+.1}: mu = {:.2?}", &mus[..6]);
    }
    // True yaw for comparison at delta=0.3, v~2: psidot = 2*0.3*1.69 = 1.01 rad/s; 0.4 s steps -> +0.4 rad/step

    // Empty-world episode trace with beta0
    let mut planner = cfg.planner.clone();
    planner.horizon = 10;
    planner.start = (6.0, 16.0);
    planner.goal = (24.0, 16.0);
    planner.max_ticks = 40;
    let mut mpc0 = cfg.reward.mpc;
    mpc0.beta_sigma = 0.0;
    let source = EnsembleSource { models: members, weights: cfg.ensemble.weights() };
    let setup = EpisodeSetup {
        world: &empty, source: &source, true_params: cfg.vehicle, nominal_params: cfg.vehicle,
        planner, event: cfg.reward.event.clone(), mpc: mpc0, mhe: cfg.mhe.clone(),
        optimizer: cfg.optimizer.clone(), obs_noise_std: cfg.world.obs_noise_std, seed: 5,
    };
    let r = run_episode(&setup)?;
    eprintln!("success {} ticks {} speed {:.2}", r.metrics.success, r.metrics.ticks, r.metrics.mean_speed);
    for t in &r.ticks {
        let d = ((t.state.x - 24.0).powi(2) + (t.state.y - 16.0).powi(2)).sqrt();
        eprintln!("{:>3} pos ({:6.2},{:6.2}) psi {:+5.2} v {:4.2} delta {:+5.2} D {:4.2} dist {:5.2}",
            t.tick, t.state.x, t.state.y, t.state.psi, t.state.v, t.delta, t.throttle, d);
    }
    Ok(())
}
