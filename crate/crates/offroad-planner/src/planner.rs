//! The hybrid control loop: per tick, the moving horizon estimator refreshes
//! the state and friction/slope estimates, a global optimizer picks the
//! steering sequence that maximizes the discounted event return, a second
//! optimizer picks the throttle sequence that trades goal speed against
//! ensemble uncertainty, and only the first action of the plan is executed.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{solve_mhe, Measurement, MheConfig, MheProblem};
use crate::optim::{cem_minimize, cma_minimize, BoxProblem, CemConfig, CmaConfig};
use crate::reward::{
    mpc_reward, step_cost, trajectory_return, EventRewardConfig, MpcRewardConfig,
};
use crate::seqmodel::{ActionRow, ModelWeights, StepPrediction};
use crate::stats;
use crate::uncertainty::{ensemble_predict, uncertainty_trace, UncertaintyTrace, UncertaintyWeights};
use crate::vehicle::{
    derivative, rollout, throttle_to_dt, ControlInput, ModelParams, VehicleState,
};
use crate::worldsim::TerrainWorld;

/// Model queries the planner needs: per-step sigma for the MPC reward and
/// ensemble-mean predictions for the event reward. Implemented by the real
/// ensemble and by test stubs.
pub trait UncertaintySource: Sync {
    fn sigma_trace(&self, obs: &[f64], actions: &[ActionRow]) -> Result<Vec<f64>>;
    fn mean_predictions(&self, obs: &[f64], actions: &[ActionRow]) -> Result<Vec<StepPrediction>>;
    /// Full trace for logging; the default builds it from `sigma_trace`.
    fn full_trace(&self, obs: &[f64], actions: &[ActionRow]) -> Result<UncertaintyTrace> {
        let sigma = self.sigma_trace(obs, actions)?;
        let zeros = vec![0.0; sigma.len()];
        Ok(UncertaintyTrace {
            mi_class: zeros.clone(),
            mi_bearing_kl: zeros.clone(),
            mi_bearing_bhatt: zeros,
            sigma,
        })
    }
}

/// The trained ensemble as an uncertainty source.
pub struct EnsembleSource {
    pub models: Vec<ModelWeights>,
    pub weights: UncertaintyWeights,
}

impl UncertaintySource for EnsembleSource {
    fn sigma_trace(&self, obs: &[f64], actions: &[ActionRow]) -> Result<Vec<f64>> {
        Ok(UncertaintySource::full_trace(self, obs, actions)?.sigma)
    }

    fn mean_predictions(&self, obs: &[f64], actions: &[ActionRow]) -> Result<Vec<StepPrediction>> {
        Ok(ensemble_predict(&self.models, obs, actions)?.mean_predictions())
    }

    fn full_trace(&self, obs: &[f64], actions: &[ActionRow]) -> Result<UncertaintyTrace> {
        let ens = ensemble_predict(&self.models, obs, actions)?;
        uncertainty_trace(&ens, &self.weights)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Cem,
    Cma,
}

/// Optimizer choice plus hyperparameters for one planning sub-problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimSettings {
    pub kind: OptimizerKind,
    pub cem: CemConfig,
    pub cma: CmaConfig,
}

impl Default for OptimSettings {
    fn default() -> Self {
        OptimSettings {
            kind: OptimizerKind::Cem,
            cem: CemConfig {
                population: 24,
                elite_frac: 0.25,
                iters: 4,
                init_mean: None,
                init_std: None,
                min_std: 1e-3,
            },
            cma: CmaConfig {
                lambda: Some(12),
                init_mean: None,
                init_sigma: 0.15,
                iters: 8,
            },
        }
    }
}

impl OptimSettings {
    fn budget(&self) -> usize {
        match self.kind {
            OptimizerKind::Cem => self.cem.population * self.cem.iters.max(1),
            OptimizerKind::Cma => self.cma.lambda.unwrap_or(12) * self.cma.iters.max(1),
        }
    }

    /// Run the configured optimizer warm-started at `init`.
    fn minimize(
        &self,
        dim: usize,
        lower: Vec<f64>,
        upper: Vec<f64>,
        init: &[f64],
        objective: &(dyn Fn(&[f64]) -> f64 + Sync),
        seed: u64,
    ) -> Result<(Vec<f64>, f64)> {
        let problem = BoxProblem {
            dim,
            lower,
            upper,
            objective,
            budget: self.budget(),
            seed,
        };
        match self.kind {
            OptimizerKind::Cem => {
                let mut cfg = self.cem.clone();
                cfg.init_mean = Some(init.to_vec());
                let r = cem_minimize(&problem, &cfg)?;
                Ok((r.best_x, r.best_f))
            }
            OptimizerKind::Cma => {
                let mut cfg = self.cma.clone();
                cfg.init_mean = Some(init.to_vec());
                let r = cma_minimize(&problem, &cfg)?;
                Ok((r.best_x, r.best_f))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    /// Planning horizon H.
    pub horizon: usize,
    pub delta_max: f64,
    pub goal: (f64, f64),
    pub goal_radius: f64,
    pub max_ticks: usize,
    /// Replan cadence in ticks; the receding-horizon contract uses 1.
    pub replan_every: usize,
    /// Episode start pose.
    pub start: (f64, f64),
    pub start_psi: f64,
    /// Throttle assumed for the steering pass before the first throttle plan.
    pub init_throttle: f64,
    /// Optimize steering and throttle jointly instead of alternately.
    pub joint: bool,
    /// Episode count for paired studies.
    pub episodes: usize,
    /// Per-sub-problem optimizer overrides; `None` uses the run-level settings.
    pub steering_optimizer: Option<OptimSettings>,
    pub throttle_optimizer: Option<OptimSettings>,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            horizon: 10,
            delta_max: crate::vehicle::DELTA_MAX,
            goal: (26.0, 16.0),
            goal_radius: 1.0,
            max_ticks: 60,
            replan_every: 1,
            start: (6.0, 16.0),
            start_psi: 0.0,
            init_throttle: 0.5,
            joint: false,
            episodes: 50,
            steering_optimizer: None,
            throttle_optimizer: None,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::domain("planner horizon must be >= 1"));
        }
        if !(self.goal_radius > 0.0) {
            return Err(Error::domain("goal_radius must be > 0"));
        }
        if self.replan_every != 1 {
            return Err(Error::domain(
                "replanning contract requires replan_every = 1",
            ));
        }
        if !(0.0..=1.0).contains(&self.init_throttle) {
            return Err(Error::domain("init_throttle must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// One tick's plan: both sequences, the steering objective value, the
/// uncertainty trace of the chosen plan, and the dynamics rollout behind it.
#[derive(Debug, Clone)]
pub struct PlanResult {
    pub steering_seq: Vec<f64>,
    pub throttle_seq: Vec<f64>,
    pub expected_return: f64,
    pub uncertainty: UncertaintyTrace,
    pub rollout: Vec<VehicleState>,
}

fn action_rows(steering: &[f64], throttle: &[f64]) -> Result<Vec<ActionRow>> {
    steering
        .iter()
        .zip(throttle)
        .map(|(&d, &t)| Ok([d, t, throttle_to_dt(t)?]))
        .collect()
}

fn rollout_for(
    state: &VehicleState,
    steering: &[f64],
    throttle: &[f64],
    params: &ModelParams,
    delta_max: f64,
) -> Result<Vec<VehicleState>> {
    let inputs: Vec<ControlInput> = steering
        .iter()
        .zip(throttle)
        .map(|(&d, &t)| ControlInput::bounded(d, t, delta_max))
        .collect::<Result<_>>()?;
    let dts: Vec<f64> = throttle
        .iter()
        .map(|&t| throttle_to_dt(t))
        .collect::<Result<_>>()?;
    rollout(state, &inputs, params, &dts)
}

/// Discounted event cost of one candidate under the ensemble-mean predictions;
/// positions come from the vehicle rollout, headings from the model.
#[allow(clippy::too_many_arguments)]
fn steering_objective(
    state: &VehicleState,
    obs: &[f64],
    steering: &[f64],
    throttle: &[f64],
    source: &dyn UncertaintySource,
    params: &ModelParams,
    config: &PlannerConfig,
    event: &EventRewardConfig,
) -> Result<f64> {
    let states = rollout_for(state, steering, throttle, params, config.delta_max)?;
    let rows = action_rows(steering, throttle)?;
    let preds = source.mean_predictions(obs, &rows)?;
    let mut costs = Vec::with_capacity(preds.len());
    for (t, pred) in preds.iter().enumerate() {
        let pos = (states[t + 1].x, states[t + 1].y);
        let cost = if pos == config.goal {
            // Rollout landed exactly on the goal; the bearing term is
            // undefined and the episode terminates here anyway.
            0.0
        } else {
            step_cost(pred, pos, config.goal, event)?
        };
        costs.push(cost);
    }
    Ok(-trajectory_return(&costs, event.gamma))
}

#[allow(clippy::too_many_arguments)]
fn throttle_objective(
    state: &VehicleState,
    obs: &[f64],
    steering: &[f64],
    throttle: &[f64],
    source: &dyn UncertaintySource,
    params: &ModelParams,
    config: &PlannerConfig,
    gamma: f64,
    mpc: &MpcRewardConfig,
) -> Result<f64> {
    let states = rollout_for(state, steering, throttle, params, config.delta_max)?;
    let rows = action_rows(steering, throttle)?;
    let sigma = source.sigma_trace(obs, &rows)?;
    let mut total = 0.0;
    let mut w = 1.0;
    for t in 0..sigma.len() {
        total += w * mpc_reward(sigma[t], states[t + 1].v, mpc);
        w *= gamma;
    }
    Ok(-total)
}

/// Optimize the steering sequence for a fixed throttle plan. Returns the
/// sequence and its expected discounted event return.
#[allow(clippy::too_many_arguments)]
pub fn plan_steering(
    state: &VehicleState,
    obs: &[f64],
    throttle_seq: &[f64],
    source: &dyn UncertaintySource,
    params: &ModelParams,
    config: &PlannerConfig,
    event: &EventRewardConfig,
    optim: &OptimSettings,
    warm_start: &[f64],
    seed: u64,
) -> Result<(Vec<f64>, f64)> {
    let h = throttle_seq.len();
    let objective = |x: &[f64]| {
        steering_objective(state, obs, x, throttle_seq, source, params, config, event)
            .unwrap_or(f64::INFINITY)
    };
    let settings = config.steering_optimizer.as_ref().unwrap_or(optim);
    let (best, best_f) = settings.minimize(
        h,
        vec![-config.delta_max; h],
        vec![config.delta_max; h],
        warm_start,
        &objective,
        seed,
    )?;
    Ok((best, -best_f))
}

/// Optimize the throttle sequence for a fixed steering plan. Returns the
/// sequence and the per-step sigma of the chosen plan.
#[allow(clippy::too_many_arguments)]
pub fn plan_throttle(
    state: &VehicleState,
    obs: &[f64],
    steering_seq: &[f64],
    source: &dyn UncertaintySource,
    params: &ModelParams,
    config: &PlannerConfig,
    gamma: f64,
    mpc: &MpcRewardConfig,
    optim: &OptimSettings,
    warm_start: &[f64],
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let h = steering_seq.len();
    let objective = |x: &[f64]| {
        throttle_objective(
            state, obs, steering_seq, x, source, params, config, gamma, mpc,
        )
        .unwrap_or(f64::INFINITY)
    };
    let settings = config.throttle_optimizer.as_ref().unwrap_or(optim);
    let (best, _f) = settings.minimize(
        h,
        vec![0.0; h],
        vec![1.0; h],
        warm_start,
        &objective,
        seed,
    )?;
    let rows = action_rows(steering_seq, &best)?;
    let sigma = source.sigma_trace(obs, &rows)?;
    Ok((best, sigma))
}

/// Everything the episode logger records about one executed tick.
#[derive(Debug, Clone)]
pub struct TickLog {
    pub tick: usize,
    /// True state at tick start.
    pub state: VehicleState,
    pub delta: f64,
    pub throttle: f64,
    pub dt: f64,
    /// Executed-step uncertainty (sigma at plan index 0).
    pub sigma: f64,
    pub expected_return: f64,
    /// Final MHE cost, or NaN while the window is still filling.
    pub mhe_cost: f64,
    pub plan: PlanResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpisodeMetrics {
    pub success: bool,
    pub ticks: usize,
    pub mean_speed: f64,
    pub speed_variance: f64,
    pub collision_events: usize,
    pub mean_sigma: f64,
    pub expected_return_avg: f64,
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub metrics: EpisodeMetrics,
    pub ticks: Vec<TickLog>,
}

/// Sensor noise applied when synthesizing episode measurements; the stds are
/// the MHE config's assumed stds, so the estimator sees consistent sensors.
fn synthesize_measurement(
    truth: &VehicleState,
    accel: f64,
    t: f64,
    mhe: &MheConfig,
    rng: &mut ChaCha8Rng,
) -> Measurement {
    let mut noise = |std: f64| std * rng.sample::<f64, _>(StandardNormal);
    Measurement {
        t,
        gps_xy: Some((
            (truth.x + noise(mhe.gps_xy_std), truth.y + noise(mhe.gps_xy_std)),
            mhe.gps_xy_std,
        )),
        gps_psi: Some((truth.psi + noise(mhe.gps_psi_std), mhe.gps_psi_std)),
        accel: Some((accel + noise(mhe.accel_std), mhe.accel_std)),
        speed: Some(((truth.v + noise(mhe.speed_std)).max(0.0), mhe.speed_std)),
    }
}

/// Bundle of everything one episode needs.
pub struct EpisodeSetup<'a> {
    pub world: &'a TerrainWorld,
    pub source: &'a dyn UncertaintySource,
    /// True simulation parameters.
    pub true_params: ModelParams,
    /// Nominal parameters the controller starts from.
    pub nominal_params: ModelParams,
    pub planner: PlannerConfig,
    pub event: EventRewardConfig,
    pub mpc: MpcRewardConfig,
    pub mhe: MheConfig,
    pub optimizer: OptimSettings,
    pub obs_noise_std: f64,
    pub seed: u64,
}

struct Controller {
    params: ModelParams,
    estimate: VehicleState,
    window: VecDeque<(Measurement, ControlInput)>,
    prev_steering: Vec<f64>,
    prev_throttle: Vec<f64>,
}

fn derive_seed(base: u64, tick: usize, salt: u64) -> u64 {
    base.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add((tick as u64) << 8)
        .wrapping_add(salt)
}

/// Episode termination states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeStatus {
    Running,
    /// Within goal_radius at a tick start; no further action executed.
    GoalReached,
    /// The executed step landed on a collision-class cell.
    Collided,
    /// The executed step left the world grid.
    OutOfBounds,
}

/// What one call to [`Episode::tick`] did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TickOutcome {
    /// Exactly the first planned action was executed.
    Executed,
    /// The episode had already terminated (or terminated at the goal check);
    /// nothing was executed.
    Terminated(EpisodeStatus),
}

/// One closed-loop episode, advanced one replanning tick at a time.
/// Deterministic in (world, setup.seed, config).
pub struct Episode<'a> {
    setup: &'a EpisodeSetup<'a>,
    truth: VehicleState,
    controller: Controller,
    meas_rng: ChaCha8Rng,
    time: f64,
    distance: f64,
    tick_speeds: Vec<f64>,
    logs: Vec<TickLog>,
    collisions: usize,
    status: EpisodeStatus,
}

impl<'a> Episode<'a> {
    pub fn new(setup: &'a EpisodeSetup<'a>) -> Result<Self> {
        setup.planner.validate()?;
        setup.event.validate()?;
        setup.mpc.validate()?;
        let cfg = &setup.planner;
        let start_phi = setup.world.slope_at(cfg.start.0, cfg.start.1)?;
        let truth =
            VehicleState::new(cfg.start.0, cfg.start.1, cfg.start_psi, 0.0, start_phi, 1e-3);
        Ok(Episode {
            setup,
            truth,
            controller: Controller {
                params: setup.nominal_params,
                estimate: truth,
                window: VecDeque::new(),
                prev_steering: vec![0.0; cfg.horizon],
                prev_throttle: vec![cfg.init_throttle; cfg.horizon],
            },
            meas_rng: ChaCha8Rng::seed_from_u64(derive_seed(setup.seed, 0, 1)),
            time: 0.0,
            distance: 0.0,
            tick_speeds: Vec::new(),
            logs: Vec::new(),
            collisions: 0,
            status: EpisodeStatus::Running,
        })
    }

    pub fn status(&self) -> EpisodeStatus {
        self.status
    }

    pub fn logs(&self) -> &[TickLog] {
        &self.logs
    }

    /// One replanning cycle: sense, estimate, plan steering, plan throttle,
    /// execute the first action, log.
    pub fn tick(&mut self) -> Result<TickOutcome> {
        if self.status != EpisodeStatus::Running {
            return Ok(TickOutcome::Terminated(self.status));
        }
        let setup = self.setup;
        let cfg = &setup.planner;
        let h = cfg.horizon;
        let tick = self.logs.len();

        let to_goal =
            ((self.truth.x - cfg.goal.0).powi(2) + (self.truth.y - cfg.goal.1).powi(2)).sqrt();
        if to_goal <= cfg.goal_radius {
            self.status = EpisodeStatus::GoalReached;
            return Ok(TickOutcome::Terminated(self.status));
        }

        // (1) Sense: measure the current true state. The paired input is
        // filled in at execution time; as the window tail it is unused by the
        // residual until then.
        let accel_now = {
            let zero = ControlInput::new(0.0, 0.0)?;
            derivative(&self.truth, &zero, &setup.true_params)?.v
        };
        let measurement = synthesize_measurement(
            &self.truth,
            accel_now,
            self.time,
            &setup.mhe,
            &mut self.meas_rng,
        );
        self.controller
            .window
            .push_back((measurement, ControlInput::new(0.0, 0.0)?));
        while self.controller.window.len() > setup.mhe.window {
            self.controller.window.pop_front();
        }

        // (2) Estimate: refresh state and slow parameters once the window has
        // at least two entries; before that, dead-reckon on the prior.
        let mut mhe_cost = f64::NAN;
        if self.controller.window.len() >= 2 {
            let problem = MheProblem {
                window: self.controller.window.iter().cloned().collect(),
                prior_state: window_start_prior(&self.controller, &self.logs),
                prior_std: setup.mhe.prior_std,
                params: self.controller.params,
                estimate: setup.mhe.estimate,
            };
            let init = problem.init_from_prior();
            match solve_mhe(&problem, &init, &setup.mhe.solver) {
                Ok(sol) => {
                    self.controller.estimate = sol.state;
                    self.controller.params.cr0 = sol.cr0;
                    self.controller.params.cr2 = sol.cr2;
                    self.controller.estimate.phi = sol.phi;
                    mhe_cost = sol.final_cost;
                }
                Err(e) => {
                    log::warn!("tick {tick}: MHE failed ({e}); keeping previous estimate");
                }
            }
        }

        let obs = setup.world.observe(
            &self.truth,
            derive_seed(setup.seed, tick, 2),
            setup.obs_noise_std,
        )?;

        // (3)+(4) Plan: steering against the shifted previous throttle plan,
        // then throttle against the fresh steering plan.
        let mut throttle_warm = self.controller.prev_throttle.clone();
        throttle_warm.rotate_left(1);
        throttle_warm[h - 1] = self.controller.prev_throttle[h - 1];
        let mut steering_warm = self.controller.prev_steering.clone();
        steering_warm.rotate_left(1);
        steering_warm[h - 1] = self.controller.prev_steering[h - 1];

        let (steering_seq, throttle_seq, expected_return, sigma_seq) = plan_with_fallback(
            &self.controller,
            &obs,
            setup,
            &steering_warm,
            &throttle_warm,
            tick,
        );

        // (5) Execute exactly the first action in the true world.
        let delta0 = steering_seq[0];
        let throttle0 = throttle_seq[0];
        let dt0 = throttle_to_dt(throttle0)?;
        let input = ControlInput::bounded(delta0, throttle0, cfg.delta_max)?;
        let before = self.truth;
        self.truth = setup
            .world
            .step_in_world(&self.truth, &input, &setup.true_params, dt0)?;

        // Complete the pending window entry with the executed input.
        if let Some(back) = self.controller.window.back_mut() {
            back.1 = input;
        }
        // Dead-reckoned estimate in case the next MHE solve is skipped/fails.
        self.controller.estimate = crate::vehicle::step_rk4(
            &self.controller.estimate,
            &input,
            &self.controller.params,
            dt0,
        )
        .unwrap_or(self.truth);
        self.controller.prev_steering = steering_seq.clone();
        self.controller.prev_throttle = throttle_seq.clone();

        let step_dist =
            ((self.truth.x - before.x).powi(2) + (self.truth.y - before.y).powi(2)).sqrt();
        self.distance += step_dist;
        self.time += dt0;
        self.tick_speeds.push(step_dist / dt0);

        // (6) Log the tick.
        let plan_rollout = rollout_for(
            &before,
            &steering_seq,
            &throttle_seq,
            &self.controller.params,
            cfg.delta_max,
        )?;
        let full_trace = {
            let rows = action_rows(&steering_seq, &throttle_seq)?;
            setup.source.full_trace(&obs, &rows)?
        };
        self.logs.push(TickLog {
            tick,
            state: before,
            delta: delta0,
            throttle: throttle0,
            dt: dt0,
            sigma: sigma_seq[0],
            expected_return,
            mhe_cost,
            plan: PlanResult {
                steering_seq,
                throttle_seq,
                expected_return,
                uncertainty: full_trace,
                rollout: plan_rollout,
            },
        });

        // Adjudicate the executed step.
        if !setup.world.in_bounds(self.truth.x, self.truth.y) {
            self.status = EpisodeStatus::OutOfBounds;
        } else {
            let class = setup.world.class_at(self.truth.x, self.truth.y)?;
            if setup.event.collision_classes.contains(&class) {
                self.collisions += 1;
                self.status = EpisodeStatus::Collided;
            }
        }
        Ok(TickOutcome::Executed)
    }

    /// Aggregate the episode so far into metrics and logs.
    pub fn finish(mut self) -> EpisodeResult {
        let cfg = &self.setup.planner;
        // The final executed step may have landed inside the goal ball.
        if self.status == EpisodeStatus::Running {
            let to_goal =
                ((self.truth.x - cfg.goal.0).powi(2) + (self.truth.y - cfg.goal.1).powi(2)).sqrt();
            if to_goal <= cfg.goal_radius {
                self.status = EpisodeStatus::GoalReached;
            }
        }
        let success = self.status == EpisodeStatus::GoalReached && self.collisions == 0;
        let sigmas: Vec<f64> = self.logs.iter().map(|t| t.sigma).collect();
        let returns: Vec<f64> = self.logs.iter().map(|t| t.expected_return).collect();
        let metrics = EpisodeMetrics {
            success,
            ticks: self.logs.len(),
            mean_speed: if self.time > 0.0 {
                self.distance / self.time
            } else {
                0.0
            },
            speed_variance: if self.tick_speeds.is_empty() {
                0.0
            } else {
                stats::variance(&self.tick_speeds)
            },
            collision_events: self.collisions,
            mean_sigma: if sigmas.is_empty() { 0.0 } else { stats::mean(&sigmas) },
            expected_return_avg: if returns.is_empty() {
                0.0
            } else {
                stats::mean(&returns)
            },
        };
        EpisodeResult {
            metrics,
            ticks: self.logs,
        }
    }
}

/// Run one closed-loop episode to termination or max_ticks.
pub fn run_episode(setup: &EpisodeSetup<'_>) -> Result<EpisodeResult> {
    let mut episode = Episode::new(setup)?;
    for _ in 0..setup.planner.max_ticks {
        if let TickOutcome::Terminated(_) = episode.tick()? {
            break;
        }
    }
    Ok(episode.finish())
}

/// Prior for the window-initial state: the one-step-ahead prediction made at
/// the tick when the window started, or the current estimate early on.
fn window_start_prior(controller: &Controller, ticks: &[TickLog]) -> VehicleState {
    let window_len = controller.window.len();
    if ticks.len() + 1 >= window_len {
        let idx = ticks.len() + 1 - window_len;
        if let Some(t) = ticks.get(idx) {
            return t.state;
        }
    }
    controller.estimate
}

/// Joint variant: one optimizer over the concatenated steering and throttle
/// sequences against the summed objectives. Config option; alternate planning
/// is the default.
#[allow(clippy::too_many_arguments)]
pub fn plan_joint(
    state: &VehicleState,
    obs: &[f64],
    source: &dyn UncertaintySource,
    params: &ModelParams,
    config: &PlannerConfig,
    event: &EventRewardConfig,
    mpc: &MpcRewardConfig,
    optim: &OptimSettings,
    steering_warm: &[f64],
    throttle_warm: &[f64],
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>, f64, Vec<f64>)> {
    let h = config.horizon;
    let objective = |x: &[f64]| {
        let (steer, thr) = x.split_at(h);
        let event_cost =
            steering_objective(state, obs, steer, thr, source, params, config, event)
                .unwrap_or(f64::INFINITY);
        let mpc_cost = throttle_objective(
            state, obs, steer, thr, source, params, config, event.gamma, mpc,
        )
        .unwrap_or(f64::INFINITY);
        event_cost + mpc_cost
    };
    let mut lower = vec![-config.delta_max; h];
    lower.extend(vec![0.0; h]);
    let mut upper = vec![config.delta_max; h];
    upper.extend(vec![1.0; h]);
    let mut init = steering_warm.to_vec();
    init.extend_from_slice(throttle_warm);
    let settings = config.steering_optimizer.as_ref().unwrap_or(optim);
    let (best, _f) = settings.minimize(2 * h, lower, upper, &init, &objective, seed)?;
    let (steer, thr) = best.split_at(h);
    let expected_return = -steering_objective(
        state, obs, steer, thr, source, params, config, event,
    )?;
    let rows = action_rows(steer, thr)?;
    let sigma = source.sigma_trace(obs, &rows)?;
    Ok((steer.to_vec(), thr.to_vec(), expected_return, sigma))
}

/// Steering pass then throttle pass; a failed optimizer falls back to the safe
/// stop (zero steering, zero throttle).
fn plan_with_fallback(
    controller: &Controller,
    obs: &[f64],
    setup: &EpisodeSetup<'_>,
    steering_warm: &[f64],
    throttle_warm: &[f64],
    tick: usize,
) -> (Vec<f64>, Vec<f64>, f64, Vec<f64>) {
    let cfg = &setup.planner;
    let h = cfg.horizon;
    let optim = &setup.optimizer;
    if cfg.joint {
        match plan_joint(
            &controller.estimate,
            obs,
            setup.source,
            &controller.params,
            cfg,
            &setup.event,
            &setup.mpc,
            optim,
            steering_warm,
            throttle_warm,
            derive_seed(setup.seed, tick, 3),
        ) {
            Ok(v) => return v,
            Err(e) => {
                log::warn!("tick {tick}: joint plan failed ({e}); safe stop");
                return (
                    vec![0.0; h],
                    vec![0.0; h],
                    f64::NEG_INFINITY,
                    vec![crate::vehicle::SIGMA_MIN; h],
                );
            }
        }
    }
    let steering = plan_steering(
        &controller.estimate,
        obs,
        throttle_warm,
        setup.source,
        &controller.params,
        cfg,
        &setup.event,
        optim,
        steering_warm,
        derive_seed(setup.seed, tick, 3),
    );
    let (steering_seq, expected_return) = match steering {
        Ok(v) => v,
        Err(e) => {
            log::warn!("tick {tick}: steering plan failed ({e}); zero steering");
            (vec![0.0; h], f64::NEG_INFINITY)
        }
    };
    let throttle = plan_throttle(
        &controller.estimate,
        obs,
        &steering_seq,
        setup.source,
        &controller.params,
        cfg,
        setup.event.gamma,
        &setup.mpc,
        optim,
        throttle_warm,
        derive_seed(setup.seed, tick, 4),
    );
    let (throttle_seq, sigma_seq) = match throttle {
        Ok(v) => v,
        Err(e) => {
            log::warn!("tick {tick}: throttle plan failed ({e}); safe stop");
            (vec![0.0; h], vec![crate::vehicle::SIGMA_MIN; h])
        }
    };
    (steering_seq, throttle_seq, expected_return, sigma_seq)
}

/// Paired episode study: each seed runs once with the configured `beta_sigma`
/// and once with `beta_sigma = 0`, all else identical. Episodes run in
/// parallel; each is internally deterministic.
pub struct PairedStudy {
    pub with_uncertainty: Vec<EpisodeResult>,
    pub without_uncertainty: Vec<EpisodeResult>,
}

impl PairedStudy {
    pub fn speed_diffs(&self) -> Vec<f64> {
        self.with_uncertainty
            .iter()
            .zip(&self.without_uncertainty)
            .map(|(a, b)| a.metrics.mean_speed - b.metrics.mean_speed)
            .collect()
    }

    pub fn sigma_diffs(&self) -> Vec<f64> {
        self.with_uncertainty
            .iter()
            .zip(&self.without_uncertainty)
            .map(|(a, b)| a.metrics.mean_sigma - b.metrics.mean_sigma)
            .collect()
    }
}

#[allow(clippy::too_many_arguments)]
pub fn run_paired_study(
    world: &TerrainWorld,
    source: &dyn UncertaintySource,
    true_params: ModelParams,
    planner: &PlannerConfig,
    event: &EventRewardConfig,
    mpc: &MpcRewardConfig,
    mhe: &MheConfig,
    optimizer: &OptimSettings,
    obs_noise_std: f64,
    base_seed: u64,
    episodes: usize,
) -> Result<PairedStudy> {
    let arms: Vec<(usize, bool)> = (0..episodes)
        .flat_map(|i| [(i, true), (i, false)])
        .collect();
    let results: Vec<((usize, bool), EpisodeResult)> = arms
        .par_iter()
        .map(|&(i, with_sigma)| {
            let mut mpc_arm = *mpc;
            if !with_sigma {
                mpc_arm.beta_sigma = 0.0;
            }
            let setup = EpisodeSetup {
                world,
                source,
                true_params,
                nominal_params: true_params,
                planner: planner.clone(),
                event: event.clone(),
                mpc: mpc_arm,
                mhe: mhe.clone(),
                optimizer: optimizer.clone(),
                obs_noise_std,
                seed: base_seed.wrapping_add(i as u64),
            };
            run_episode(&setup).map(|r| ((i, with_sigma), r))
        })
        .collect::<Result<_>>()?;

    let mut with_uncertainty = vec![None; episodes];
    let mut without_uncertainty = vec![None; episodes];
    for ((i, with_sigma), m) in results {
        if with_sigma {
            with_uncertainty[i] = Some(m);
        } else {
            without_uncertainty[i] = Some(m);
        }
    }
    Ok(PairedStudy {
        with_uncertainty: with_uncertainty.into_iter().map(|m| m.unwrap()).collect(),
        without_uncertainty: without_uncertainty.into_iter().map(|m| m.unwrap()).collect(),
    })
}
