//! Moving horizon estimation: nonlinear least squares over a sliding window of
//! noisy measurements, fitting the window-initial state and, optionally, the
//! slow parameters (slope phi, friction terms cr0/cr2). Solved with
//! Levenberg-Marquardt over central-difference Jacobians.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vehicle::{derivative, step_rk4, wrap_angle, ControlInput, ModelParams, VehicleState};

/// One timestamped sensor reading; any field may be absent. Values carry their
/// assumed noise std.
#[derive(Debug, Clone, Default)]
pub struct Measurement {
    pub t: f64,
    /// Position fix: ((x, y), std) with a shared std for both axes.
    pub gps_xy: Option<((f64, f64), f64)>,
    /// Heading fix: (psi, std).
    pub gps_psi: Option<(f64, f64)>,
    /// Longitudinal acceleration: (a, std).
    pub accel: Option<(f64, f64)>,
    /// Odometry speed: (v, std).
    pub speed: Option<(f64, f64)>,
}

impl Measurement {
    fn residual_count(&self) -> usize {
        let mut n = 0;
        if self.gps_xy.is_some() {
            n += 2;
        }
        if self.gps_psi.is_some() {
            n += 1;
        }
        if self.accel.is_some() {
            n += 1;
        }
        if self.speed.is_some() {
            n += 1;
        }
        n
    }

    fn stds_positive(&self) -> bool {
        self.gps_xy.map_or(true, |(_, s)| s > 0.0)
            && self.gps_psi.map_or(true, |(_, s)| s > 0.0)
            && self.accel.map_or(true, |(_, s)| s > 0.0)
            && self.speed.map_or(true, |(_, s)| s > 0.0)
    }
}

/// Which slow parameters the window estimates alongside the initial state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamFlags {
    pub phi: bool,
    pub cr0: bool,
    pub cr2: bool,
}

impl Default for ParamFlags {
    fn default() -> Self {
        ParamFlags {
            phi: true,
            cr0: true,
            cr2: true,
        }
    }
}

impl ParamFlags {
    pub fn count(&self) -> usize {
        self.phi as usize + self.cr0 as usize + self.cr2 as usize
    }
}

#[derive(Debug, Clone)]
pub struct MheProblem {
    /// Measurements paired with the input applied from that timestamp to the
    /// next one; the final entry's input is unused.
    pub window: Vec<(Measurement, ControlInput)>,
    pub prior_state: VehicleState,
    /// Diagonal prior stds over [x, y, psi, v, phi, sigma].
    pub prior_std: [f64; 6],
    /// Nominal model parameters; estimated entries are overridden by the
    /// decision vector.
    pub params: ModelParams,
    pub estimate: ParamFlags,
}

impl MheProblem {
    /// Decision vector length: the 6-component initial window state plus one
    /// entry per enabled parameter, appended in [phi, cr0, cr2] order.
    pub fn decision_len(&self) -> usize {
        6 + self.estimate.count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.window.len() < 2 {
            return Err(Error::domain("MHE window needs at least 2 entries"));
        }
        for pair in self.window.windows(2) {
            if !(pair[1].0.t > pair[0].0.t) {
                return Err(Error::domain("window timestamps must strictly increase"));
            }
        }
        for (m, _) in &self.window {
            if m.residual_count() == 0 {
                return Err(Error::domain("every window entry needs a measurement field"));
            }
            if !m.stds_positive() {
                return Err(Error::domain("measurement stds must be > 0"));
            }
        }
        if self.prior_std.iter().any(|&s| s <= 0.0) {
            return Err(Error::domain("prior stds must be > 0"));
        }
        self.params.validate()
    }

    /// Default starting point: the prior state plus nominal parameter values.
    pub fn init_from_prior(&self) -> Vec<f64> {
        let p = &self.prior_state;
        let mut init = vec![p.x, p.y, p.psi, p.v, p.phi, p.sigma];
        if self.estimate.phi {
            init.push(p.phi);
        }
        if self.estimate.cr0 {
            init.push(self.params.cr0);
        }
        if self.estimate.cr2 {
            init.push(self.params.cr2);
        }
        init
    }

    fn effective(&self, candidate: &[f64]) -> (VehicleState, ModelParams) {
        let mut params = self.params;
        let mut idx = 6;
        let mut phi = candidate[4];
        if self.estimate.phi {
            phi = candidate[idx];
            idx += 1;
        }
        if self.estimate.cr0 {
            params.cr0 = candidate[idx];
            idx += 1;
        }
        if self.estimate.cr2 {
            params.cr2 = candidate[idx];
        }
        let state = VehicleState {
            x: candidate[0],
            y: candidate[1],
            psi: candidate[2],
            v: candidate[3].max(0.0),
            phi,
            sigma: candidate[5].max(crate::vehicle::SIGMA_MIN),
        };
        (state, params)
    }

    fn rollout_window(&self, candidate: &[f64]) -> Result<(Vec<VehicleState>, ModelParams)> {
        let (state, params) = self.effective(candidate);
        params.validate().map_err(|_| {
            Error::domain("candidate drove a model parameter non-positive")
        })?;
        let mut states = Vec::with_capacity(self.window.len());
        states.push(state);
        for i in 0..self.window.len() - 1 {
            let dt = self.window[i + 1].0.t - self.window[i].0.t;
            let next = step_rk4(states.last().unwrap(), &self.window[i].1, &params, dt)?;
            states.push(next);
        }
        Ok((states, params))
    }
}

/// Weighted residual vector: measurement residuals (predicted minus measured,
/// each divided by its std) followed by the prior residuals on the initial
/// state. When a parameter is estimated through an appended entry, the
/// corresponding state component stays anchored to the prior.
pub fn mhe_residual(candidate: &[f64], problem: &MheProblem) -> Result<Vec<f64>> {
    if candidate.len() != problem.decision_len() {
        return Err(Error::Domain(format!(
            "decision vector has {} entries, expected {}",
            candidate.len(),
            problem.decision_len()
        )));
    }
    if candidate.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("decision vector must be finite"));
    }
    let (states, params) = problem.rollout_window(candidate)?;

    let mut r = Vec::new();
    for (i, (meas, input)) in problem.window.iter().enumerate() {
        let s = &states[i];
        if let Some(((mx, my), std)) = meas.gps_xy {
            r.push((s.x - mx) / std);
            r.push((s.y - my) / std);
        }
        if let Some((mpsi, std)) = meas.gps_psi {
            r.push(wrap_angle(s.psi - mpsi) / std);
        }
        if let Some((ma, std)) = meas.accel {
            let a = derivative(s, input, &params)?.v;
            r.push((a - ma) / std);
        }
        if let Some((mv, std)) = meas.speed {
            r.push((s.v - mv) / std);
        }
    }

    let prior = &problem.prior_state;
    let prior_vals = [prior.x, prior.y, prior.psi, prior.v, prior.phi, prior.sigma];
    for c in 0..6 {
        let diff = if c == 2 {
            wrap_angle(candidate[c] - prior_vals[c])
        } else {
            candidate[c] - prior_vals[c]
        };
        r.push(diff / problem.prior_std[c]);
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MheSolverConfig {
    pub max_iters: usize,
    /// Terminate when an accepted step decreases the cost by less than this.
    pub tol: f64,
    /// Initial Levenberg-Marquardt damping.
    pub damping: f64,
}

impl Default for MheSolverConfig {
    fn default() -> Self {
        MheSolverConfig {
            max_iters: 50,
            tol: 1e-12,
            damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MheSolution {
    /// Window-end state under the estimated parameters.
    pub state: VehicleState,
    pub phi: f64,
    pub cr0: f64,
    pub cr2: f64,
    /// Estimated window-initial state (decision vector head).
    pub initial_state: VehicleState,
    pub final_cost: f64,
    pub iterations: usize,
    /// Accepted-step cost trace, starting at the initial cost.
    pub cost_trace: Vec<f64>,
}

fn cost_of(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn jacobian_central(
    theta: &[f64],
    problem: &MheProblem,
    m: usize,
) -> Result<DMatrix<f64>> {
    let n = theta.len();
    let mut jac = DMatrix::zeros(m, n);
    for j in 0..n {
        let h = 1e-6 * theta[j].abs().max(1.0);
        let mut plus = theta.to_vec();
        plus[j] += h;
        let mut minus = theta.to_vec();
        minus[j] -= h;
        let rp = mhe_residual(&plus, problem)?;
        let rm = mhe_residual(&minus, problem)?;
        for i in 0..m {
            jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Levenberg-Marquardt over [`mhe_residual`]. Accepted steps never increase
/// the cost; the returned state is the window-end state obtained by rolling
/// the estimated initial state forward.
pub fn solve_mhe(
    problem: &MheProblem,
    init: &[f64],
    config: &MheSolverConfig,
) -> Result<MheSolution> {
    problem.validate()?;
    if init.len() != problem.decision_len() {
        return Err(Error::Domain(format!(
            "init has {} entries, expected {}",
            init.len(),
            problem.decision_len()
        )));
    }
    if init.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("init must be finite"));
    }

    const LAMBDA_MAX: f64 = 1e12;
    let mut theta = init.to_vec();
    let mut residual = mhe_residual(&theta, problem)?;
    let mut cost = cost_of(&residual);
    let mut lambda = config.damping;
    let mut iterations = 0usize;
    let mut cost_trace = vec![cost];

    'outer: for _ in 0..config.max_iters {
        let m = residual.len();
        let jac = jacobian_central(&theta, problem, m)?;
        let r_vec = DVector::from_column_slice(&residual);
        let grad = jac.transpose() * &r_vec;
        let hess = jac.transpose() * &jac;

        loop {
            let mut damped = hess.clone();
            for d in 0..theta.len() {
                damped[(d, d)] += lambda * damped[(d, d)].max(1e-12);
            }
            let solved = damped.lu().solve(&(-&grad));
            match solved {
                Some(delta) => {
                    let candidate: Vec<f64> =
                        theta.iter().zip(delta.iter()).map(|(t, d)| t + d).collect();
                    match mhe_residual(&candidate, problem) {
                        Ok(r_new) => {
                            let c_new = cost_of(&r_new);
                            if c_new <= cost {
                                let decrease = cost - c_new;
                                theta = candidate;
                                residual = r_new;
                                cost = c_new;
                                cost_trace.push(cost);
                                iterations += 1;
                                lambda = (lambda / 3.0).max(1e-12);
                                if decrease < config.tol {
                                    break 'outer;
                                }
                                break;
                            }
                        }
                        Err(_) => {
                            // Candidate left the valid region; escalate damping.
                        }
                    }
                    lambda *= 10.0;
                    if lambda > LAMBDA_MAX {
                        // No descent direction at maximal damping: converged.
                        break 'outer;
                    }
                }
                None => {
                    lambda *= 10.0;
                    if lambda > LAMBDA_MAX {
                        return Err(Error::EstimationFailed(
                            "singular normal equations at maximal damping".into(),
                        ));
                    }
                }
            }
        }
    }

    let (states, params) = problem.rollout_window(&theta)?;
    let mut end = *states.last().unwrap();
    end.psi = wrap_angle(end.psi);
    let (initial_state, _) = problem.effective(&theta);
    Ok(MheSolution {
        state: end,
        phi: initial_state.phi,
        cr0: params.cr0,
        cr2: params.cr2,
        initial_state,
        final_cost: cost,
        iterations,
        cost_trace,
    })
}

/// Noise stds and window length for the MHE, as configured under the `mhe`
/// config key.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MheConfig {
    pub window: usize,
    pub gps_xy_std: f64,
    pub gps_psi_std: f64,
    pub accel_std: f64,
    pub speed_std: f64,
    pub prior_std: [f64; 6],
    pub estimate: ParamFlags,
    pub solver: MheSolverConfig,
}

impl Default for MheConfig {
    fn default() -> Self {
        MheConfig {
            window: 20,
            gps_xy_std: 0.1,
            gps_psi_std: 0.05,
            accel_std: 0.2,
            speed_std: 0.1,
            prior_std: [0.5, 0.5, 0.2, 0.5, 0.1, 1.0],
            estimate: ParamFlags::default(),
            solver: MheSolverConfig::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn flat_params() -> ModelParams {
        ModelParams::default()
    }

    /// Simulate a window with the true model; optionally add seeded noise.
    fn build_window(
        start: &VehicleState,
        params: &ModelParams,
        n: usize,
        dt: f64,
        gps_std: Option<f64>,
        speed_std: Option<f64>,
        noise: Option<(&mut ChaCha8Rng, f64)>,
    ) -> Vec<(Measurement, ControlInput)> {
        let mut rng_noise = noise;
        let mut states = vec![*start];
        let mut inputs = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..n - 1 {
            let d = rng.gen_range(-0.1..0.1);
            let th = rng.gen_range(0.1..0.7);
            let input = ControlInput::new(d, th).unwrap();
            let next = step_rk4(states.last().unwrap(), &input, params, dt).unwrap();
            inputs.push(input);
            states.push(next);
        }
        inputs.push(ControlInput::new(0.0, 0.0).unwrap());

        states
            .iter()
            .zip(inputs)
            .enumerate()
            .map(|(i, (s, input))| {
                let mut jitter = |std: f64| -> f64 {
                    match &mut rng_noise {
                        Some((rng, scale)) => std * *scale * rng.sample::<f64, _>(StandardNormal),
                        None => 0.0,
                    }
                };
                let m = Measurement {
                    t: i as f64 * dt,
                    gps_xy: gps_std.map(|std| ((s.x + jitter(std), s.y + jitter(std)), std)),
                    gps_psi: gps_std.map(|std| (s.psi + jitter(std * 0.5), std * 0.5)),
                    accel: None,
                    speed: speed_std.map(|std| (s.v + jitter(std), std)),
                };
                (m, input)
            })
            .collect()
    }

    fn problem_from_window(
        window: Vec<(Measurement, ControlInput)>,
        truth_start: &VehicleState,
        estimate: ParamFlags,
        params: ModelParams,
    ) -> MheProblem {
        MheProblem {
            window,
            prior_state: *truth_start,
            prior_std: [0.5, 0.5, 0.2, 0.5, 0.1, 1.0],
            params,
            estimate,
        }
    }

    #[test]
    fn residual_zero_at_truth() {
        let start = VehicleState::new(1.0, 2.0, 0.3, 1.0, 0.02, 1e-3);
        let p = flat_params();
        let window = build_window(&start, &p, 10, 0.2, Some(0.1), Some(0.1), None);
        let problem = problem_from_window(
            window,
            &start,
            ParamFlags {
                phi: false,
                cr0: false,
                cr2: false,
            },
            p,
        );
        let candidate = problem.init_from_prior();
        let r = mhe_residual(&candidate, &problem).unwrap();
        for v in &r {
            assert!(v.abs() < 1e-9, "residual {v}");
        }
    }

    #[test]
    fn residual_sign_and_weighting() {
        let start = VehicleState::new(0.0, 0.0, 0.0, 1.0, 0.0, 1e-3);
        let p = flat_params();
        let window = build_window(&start, &p, 5, 0.2, Some(0.1), None, None);
        let problem = problem_from_window(
            window,
            &start,
            ParamFlags {
                phi: false,
                cr0: false,
                cr2: false,
            },
            p,
        );
        let mut candidate = problem.init_from_prior();
        candidate[0] += 1.0;
        let r = mhe_residual(&candidate, &problem).unwrap();
        // Predicted minus measured, weighted by std 0.1: +1 m shift gives +10.
        assert!((r[0] - 10.0).abs() < 1e-9, "first gps-x residual {}", r[0]);
    }

    #[test]
    fn speed_only_window_ignores_position_error() {
        let start = VehicleState::new(0.0, 0.0, 0.0, 1.5, 0.0, 1e-3);
        let p = flat_params();
        let window = build_window(&start, &p, 8, 0.2, None, Some(0.5), None);
        let problem = problem_from_window(
            window,
            &start,
            ParamFlags {
                phi: false,
                cr0: false,
                cr2: false,
            },
            p,
        );
        let mut candidate = problem.init_from_prior();
        candidate[0] += 3.0; // position error changes only the prior rows
        let r = mhe_residual(&candidate, &problem).unwrap();
        let n_meas = 8; // one speed residual per entry
        for v in &r[..n_meas] {
            assert!(v.abs() < 1e-9, "speed residual {v}");
        }
    }

    #[test]
    fn residual_rejects_dimension_mismatch() {
        let start = VehicleState::rest();
        let p = flat_params();
        let window = build_window(&start, &p, 4, 0.2, Some(0.1), None, None);
        let problem = problem_from_window(window, &start, ParamFlags::default(), p);
        assert_eq!(problem.decision_len(), 9);
        assert!(mhe_residual(&vec![0.0; 6], &problem).is_err());
    }

    #[test]
    fn noiseless_truth_init_converges_immediately() {
        let start = VehicleState::new(1.0, -2.0, 0.5, 1.2, 0.03, 1e-3);
        let p = flat_params();
        let window = build_window(&start, &p, 12, 0.2, Some(0.1), Some(0.1), None);
        let problem = problem_from_window(
            window,
            &start,
            ParamFlags {
                phi: false,
                cr0: false,
                cr2: false,
            },
            p,
        );
        let init = problem.init_from_prior();
        let sol = solve_mhe(&problem, &init, &MheSolverConfig::default()).unwrap();
        assert!(sol.iterations <= 2, "iterations = {}", sol.iterations);
        assert!(sol.final_cost <= 1e-12, "cost = {:e}", sol.final_cost);
    }

    #[test]
    fn recovers_perturbed_cr0_from_noiseless_window() {
        let start = VehicleState::new(2.0, 2.0, 0.1, 0.8, 0.0, 1e-3);
        let truth = flat_params(); // cr0 = 0.7
        let window = build_window(&start, &truth, 20, 0.2, Some(0.1), Some(0.1), None);
        let mut nominal = truth;
        nominal.cr0 = 0.5;
        let problem = problem_from_window(
            window,
            &start,
            ParamFlags {
                phi: false,
                cr0: true,
                cr2: false,
            },
            nominal,
        );
        let init = problem.init_from_prior();
        let sol = solve_mhe(&problem, &init, &MheSolverConfig::default()).unwrap();
        assert!(
            (sol.cr0 - 0.7).abs() < 1e-3,
            "recovered cr0 = {} (want 0.7)",
            sol.cr0
        );
    }

    #[test]
    fn accepted_costs_never_increase() {
        let start = VehicleState::new(0.0, 0.0, 0.2, 1.0, 0.0, 1e-3);
        let p = flat_params();
        let mut noise_rng = ChaCha8Rng::seed_from_u64(7);
        let window = build_window(
            &start,
            &p,
            15,
            0.2,
            Some(0.1),
            Some(0.1),
            Some((&mut noise_rng, 1.0)),
        );
        let problem = problem_from_window(window, &start, ParamFlags::default(), p);
        let mut init = problem.init_from_prior();
        init[0] += 0.3;
        init[3] += 0.2;
        let sol = solve_mhe(&problem, &init, &MheSolverConfig::default()).unwrap();
        for pair in sol.cost_trace.windows(2) {
            assert!(pair[1] <= pair[0], "cost increased: {:?}", pair);
        }
    }

    #[test]
    fn estimator_is_shift_invariant() {
        let start = VehicleState::new(1.0, 1.0, 0.3, 1.0, 0.0, 1e-3);
        let p = flat_params();
        let mut noise_rng = ChaCha8Rng::seed_from_u64(3);
        let window = build_window(
            &start,
            &p,
            12,
            0.2,
            Some(0.1),
            Some(0.1),
            Some((&mut noise_rng, 1.0)),
        );
        let flags = ParamFlags {
            phi: false,
            cr0: false,
            cr2: false,
        };
        let problem = problem_from_window(window.clone(), &start, flags, p);

        let (dx, dy) = (128.0, -64.0);
        let mut shifted_window = window;
        for (m, _) in &mut shifted_window {
            if let Some(((x, y), std)) = m.gps_xy {
                m.gps_xy = Some(((x + dx, y + dy), std));
            }
        }
        let mut shifted_start = start;
        shifted_start.x += dx;
        shifted_start.y += dy;
        let shifted = problem_from_window(shifted_window, &shifted_start, flags, p);

        let mut init = problem.init_from_prior();
        init[3] += 0.1;
        let mut init_shifted = init.clone();
        init_shifted[0] += dx;
        init_shifted[1] += dy;

        // Drive both solves to the machine optimum; the agreement bound is the
        // solver's convergence radius, not float noise.
        let cfg = MheSolverConfig {
            tol: 0.0,
            max_iters: 200,
            damping: 1e-3,
        };
        let a = solve_mhe(&problem, &init, &cfg).unwrap();
        let b = solve_mhe(&shifted, &init_shifted, &cfg).unwrap();
        assert!((b.state.x - a.state.x - dx).abs() < 1e-7, "dx residue {:e}", b.state.x - a.state.x - dx);
        assert!((b.state.y - a.state.y - dy).abs() < 1e-7, "dy residue {:e}", b.state.y - a.state.y - dy);
        assert!((b.state.v - a.state.v).abs() < 1e-7);
    }

    #[test]
    fn window_validation() {
        let start = VehicleState::rest();
        let p = flat_params();
        let mut window = build_window(&start, &p, 4, 0.2, Some(0.1), None, None);
        window[2].0.t = window[1].0.t; // break monotonicity
        let problem = problem_from_window(window, &start, ParamFlags::default(), p);
        assert!(problem.validate().is_err());

        let short = problem_from_window(
            build_window(&start, &p, 4, 0.2, Some(0.1), None, None)[..1].to_vec(),
            &start,
            ParamFlags::default(),
            p,
        );
        assert!(short.validate().is_err());
    }
}
