//! Uncertainty-aware hybrid planner for offroad navigation at desk scale.
//!
//! A learned causal sequence model predicts terrain events and bearing along
//! candidate action sequences; an ensemble of five models quantifies epistemic
//! uncertainty via mutual information; a steering optimizer maximizes the
//! discounted event return while a nonlinear-MPC throttle optimizer trades goal
//! speed against uncertainty. Everything closes over a seeded synthetic terrain
//! world, so every experiment in this crate is deterministic and reproducible.
//!
//! ## Examples
//!
//! Each major capability has a runnable example:
//!
//! ```bash
//! cargo run --release --example vehicle_rollout          # dynamics + RK4 + time dilation
//! cargo run --release --example optimizer_benchmarks     # CEM and CMA-ES on test functions
//! cargo run --release --example mhe_identification       # moving horizon estimation
//! cargo run --release --example terrain_world            # seeded world generation
//! cargo run --release --example train_model              # train the predictive model
//! cargo run --release --example ensemble_uncertainty     # per-step MI curves
//! cargo run --release --example closed_loop_episode      # full planner tick loop
//! cargo run --release --example speed_uncertainty_tradeoff # paired beta_sigma study
//! ```
//!
//! The `offroad-planner` binary wraps the same library surface behind
//! subcommands (`gen-world`, `make-dataset`, `train`, `train-ensemble`,
//! `eval-model`, `uncertainty-curve`, `run-episodes`, `grad-check`,
//! `bench-optim`); see the README for the configuration schema.

pub mod cli;
pub mod config;
pub mod error;
pub mod estimator;
pub mod optim;
pub mod planner;
pub mod reward;
pub mod seqmodel;
pub mod stats;
pub mod uncertainty;
pub mod vehicle;
pub mod worldsim;

pub use error::{Error, Result};
