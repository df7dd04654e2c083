//! Train a small ensemble on synthetic terrain rollouts and print the
//! per-step mutual-information curves (classification MI and both PaiDEs),
//! plus the uncertainty response to the time-dilation input.
//!
//! ```bash
//! cargo run --release --example ensemble_uncertainty
//! ```

use offroad_planner::config::RunConfig;
use offroad_planner::seqmodel::{train, TrainConfig};
use offroad_planner::stats::spearman_rho;
use offroad_planner::uncertainty::{ensemble_predict, uncertainty_trace};
use offroad_planner::worldsim::{generate_world, make_dataset};
use offroad_planner::Result;

fn main() -> Result<()> {
    let t0 = std::time::Instant::now();
    let cfg = RunConfig::default();
    let world = generate_world(cfg.seed, &cfg.world)?;

    let horizon = 20;
    let n_train = 800;
    let n_test = 100;
    let data = make_dataset(
        &world,
        n_train + n_test,
        horizon,
        cfg.seed,
        &cfg.vehicle,
        cfg.planner.delta_max,
        cfg.world.obs_noise_std,
        &cfg.reward.event.collision_classes,
    )?;
    let (train_set, test_set) = data.split_at(n_train);
    println!(
        "dataset: {} train / {} test samples, H = {horizon} ({:.1?})",
        train_set.len(),
        test_set.len(),
        t0.elapsed()
    );

    let model_cfg = cfg.model.model_config();
    let members: Vec<_> = (0..cfg.ensemble.members)
        .map(|i| {
            let tc = TrainConfig {
                seed: cfg.model.train.seed.wrapping_add(i as u64),
                ..cfg.model.train
            };
            let r = train(train_set, &model_cfg, &tc)?;
            println!(
                "member {i}: best epoch loss {:.4} ({:.1?})",
                r.epoch_losses.iter().cloned().fold(f64::INFINITY, f64::min),
                t0.elapsed()
            );
            Ok(r.weights)
        })
        .collect::<Result<_>>()?;

    // Mean per-step MI over the held-out inputs.
    let weights = cfg.ensemble.weights();
    let mut mi_class = vec![0.0; horizon];
    let mut mi_kl = vec![0.0; horizon];
    let mut mi_bh = vec![0.0; horizon];
    let mut sigma = vec![0.0; horizon];
    for s in test_set {
        let ens = ensemble_predict(&members, &s.obs, &s.actions)?;
        let tr = uncertainty_trace(&ens, &weights)?;
        for t in 0..horizon {
            mi_class[t] += tr.mi_class[t] / n_test as f64;
            mi_kl[t] += tr.mi_bearing_kl[t] / n_test as f64;
            mi_bh[t] += tr.mi_bearing_bhatt[t] / n_test as f64;
            sigma[t] += tr.sigma[t] / n_test as f64;
        }
    }
    println!("\nstep  mi_class   mi_kl      mi_bhatt   sigma");
    for t in 0..horizon {
        println!(
            "{t:>4}  {:<9.5}  {:<9.5}  {:<9.5}  {:<9.5}",
            mi_class[t], mi_kl[t], mi_bh[t], sigma[t]
        );
    }
    let steps: Vec<f64> = (0..horizon).map(|t| t as f64).collect();
    println!(
        "\nSpearman(step, mi_class) = {:+.3}",
        spearman_rho(&steps, &mi_class)
    );
    println!(
        "Spearman(step, mi_kl)    = {:+.3}",
        spearman_rho(&steps, &mi_kl)
    );
    println!(
        "Spearman(step, mi_bhatt) = {:+.3}",
        spearman_rho(&steps, &mi_bh)
    );

    // Uncertainty response to the time dilation: same observations, constant
    // slow (D=0) vs fast (D=1) action sequences.
    let mut sigma_slow = 0.0;
    let mut sigma_fast = 0.0;
    for s in test_set.iter().take(50) {
        let slow: Vec<[f64; 3]> = s.actions.iter().map(|a| [a[0], 0.0, 0.2]).collect();
        let fast: Vec<[f64; 3]> = s.actions.iter().map(|a| [a[0], 1.0, 0.6]).collect();
        let tr_slow = uncertainty_trace(&ensemble_predict(&members, &s.obs, &slow)?, &weights)?;
        let tr_fast = uncertainty_trace(&ensemble_predict(&members, &s.obs, &fast)?, &weights)?;
        sigma_slow += tr_slow.sigma.iter().sum::<f64>() / (50.0 * horizon as f64);
        sigma_fast += tr_fast.sigma.iter().sum::<f64>() / (50.0 * horizon as f64);
    }
    println!("\nmean sigma at 1X (dt = 0.2 s): {sigma_slow:.5}");
    println!("mean sigma at 3X (dt = 0.6 s): {sigma_fast:.5}");
    println!("total {:.1?}", t0.elapsed());
    Ok(())
}
