//! Continuous-time model-car dynamics with an RK4 integrator.
//!
//! State is `[x, y, psi, v, phi, sigma]`: planar position, heading, longitudinal
//! speed, road slope, and the accumulated model-uncertainty scalar. The slope and
//! uncertainty components have zero dynamics here; slope is refreshed by the
//! estimator and uncertainty by the ensemble module.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Default steering limit (rad). Typical for model-car Ackermann geometry.
pub const DELTA_MAX: f64 = 0.35;

/// Governed top speed of the car (m/s). The ESC caps the motor; the integrator
/// projects onto `v <= V_MAX` so closed-loop speed never exceeds it.
pub const V_MAX: f64 = 3.0;

/// Floor for the accumulated uncertainty state.
pub const SIGMA_MIN: f64 = 1e-3;

/// Vehicle state `[x, y, psi, v, phi, sigma]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Position east (m).
    pub x: f64,
    /// Position north (m).
    pub y: f64,
    /// Heading (rad), wrapped to (-pi, pi].
    pub psi: f64,
    /// Longitudinal speed (m/s), >= 0.
    pub v: f64,
    /// Road slope (rad).
    pub phi: f64,
    /// Accumulated model uncertainty, >= SIGMA_MIN.
    pub sigma: f64,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, psi: f64, v: f64, phi: f64, sigma: f64) -> Self {
        VehicleState {
            x,
            y,
            psi: wrap_angle(psi),
            v: v.max(0.0),
            phi,
            sigma: sigma.max(SIGMA_MIN),
        }
    }

    /// State at rest at the origin, flat ground.
    pub fn rest() -> Self {
        VehicleState::new(0.0, 0.0, 0.0, 0.0, 0.0, SIGMA_MIN)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.psi.is_finite()
            && self.v.is_finite()
            && self.phi.is_finite()
            && self.sigma.is_finite()
    }
}

/// Steering/throttle pair. Bounds are checked on construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput {
    delta: f64,
    throttle: f64,
}

impl ControlInput {
    /// Input with the default steering limit [`DELTA_MAX`].
    pub fn new(delta: f64, throttle: f64) -> Result<Self> {
        Self::bounded(delta, throttle, DELTA_MAX)
    }

    /// Input with a caller-supplied steering limit.
    pub fn bounded(delta: f64, throttle: f64, delta_max: f64) -> Result<Self> {
        if !delta.is_finite() || !throttle.is_finite() {
            return Err(Error::domain("control input must be finite"));
        }
        if delta.abs() > delta_max {
            return Err(Error::Domain(format!(
                "steering {delta} outside |delta| <= {delta_max}"
            )));
        }
        if !(0.0..=1.0).contains(&throttle) {
            return Err(Error::Domain(format!("throttle {throttle} outside [0, 1]")));
        }
        Ok(ControlInput { delta, throttle })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn throttle(&self) -> f64 {
        self.throttle
    }
}

/// Model parameters. Defaults are the nominal model-car values with unit mass scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    /// Geometrical constant (-).
    pub c1: f64,
    /// Geometrical constant (1/m).
    pub c2: f64,
    /// Motor gain (m/s^2).
    pub cm1: f64,
    /// Motor back-EMF constant (1/s).
    pub cm2: f64,
    /// Second-order friction (1/m).
    pub cr2: f64,
    /// Zeroth-order friction (m/s^2).
    pub cr0: f64,
    /// Gravity (m/s^2).
    pub g: f64,
    /// Dimensionless mass scale on the slope term.
    pub mass_scale: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            c1: 0.5,
            c2: 1.69,
            cm1: 12.0,
            cm2: 2.5,
            cr2: 0.15,
            cr0: 0.7,
            g: 9.81,
            mass_scale: 1.0,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("c1", self.c1),
            ("c2", self.c2),
            ("cm1", self.cm1),
            ("cm2", self.cm2),
            ("cr2", self.cr2),
            ("cr0", self.cr0),
            ("g", self.g),
            ("mass_scale", self.mass_scale),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Domain(format!(
                    "vehicle parameter {name} must be strictly positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Time-derivatives of the six state components (SI units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v: f64,
    pub phi: f64,
    pub sigma: f64,
}

/// Wrap an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = a % two_pi;
    if r <= -PI {
        r += two_pi;
    } else if r > PI {
        r -= two_pi;
    }
    r
}

/// Continuous-time dynamics.
///
/// The slope and uncertainty derivatives are reported as zero: the slope is a
/// window-constant handled by the estimator and the uncertainty dynamics live in
/// the ensemble module. At rest a negative net force is clamped to zero so static
/// friction does not pull the car backwards.
pub fn derivative(
    state: &VehicleState,
    input: &ControlInput,
    params: &ModelParams,
) -> Result<StateDerivative> {
    if !state.is_finite() {
        return Err(Error::domain("non-finite vehicle state"));
    }
    params.validate()?;

    let v = state.v;
    let delta = input.delta();
    let d = input.throttle();

    let heading = state.psi + params.c1 * delta;
    let x_dot = v * heading.cos();
    let y_dot = v * heading.sin();
    let psi_dot = v * delta * params.c2;

    let v_delta = v * delta;
    let mut v_dot = (params.cm1 - params.cm2 * v) * d
        - params.cr2 * v * v
        - params.cr0
        - v_delta * v_delta * params.c1 * params.c2 * params.c2
        - params.mass_scale * params.g * state.phi.sin();

    // Static-friction rule: a resting car does not roll backwards.
    if v == 0.0 && v_dot < 0.0 {
        v_dot = 0.0;
    }

    Ok(StateDerivative {
        x: x_dot,
        y: y_dot,
        psi: psi_dot,
        v: v_dot,
        phi: 0.0,
        sigma: 0.0,
    })
}

fn stage_state(base: &VehicleState, k: &StateDerivative, h: f64) -> VehicleState {
    VehicleState {
        x: base.x + h * k.x,
        y: base.y + h * k.y,
        psi: base.psi + h * k.psi,
        // Stage states are projected onto the admissible speed box.
        v: (base.v + h * k.v).clamp(0.0, V_MAX),
        phi: base.phi,
        sigma: base.sigma,
    }
}

fn check_stage(stage: usize, d: &StateDerivative) -> Result<()> {
    let vals = [d.x, d.y, d.psi, d.v, d.phi, d.sigma];
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Integration {
            stage,
            detail: format!("non-finite derivative {d:?}"),
        });
    }
    Ok(())
}

/// Advance the state by `dt` using two cascaded classical RK4 half-steps,
/// each followed by the speed clamp to `[0, V_MAX]` and the heading wrap.
/// The half-stepping keeps the one-call truncation error at the 0.2-0.6 s
/// planner time dilations around 1e-5 while preserving order-4 convergence.
pub fn step_rk4(
    state: &VehicleState,
    input: &ControlInput,
    params: &ModelParams,
    dt: f64,
) -> Result<VehicleState> {
    if !(dt > 0.0 && dt <= 1.0) {
        return Err(Error::Domain(format!("dt {dt} outside (0, 1] s")));
    }
    let mid = rk4_single(state, input, params, dt / 2.0)?;
    rk4_single(&mid, input, params, dt / 2.0)
}

fn rk4_single(
    state: &VehicleState,
    input: &ControlInput,
    params: &ModelParams,
    dt: f64,
) -> Result<VehicleState> {
    let k1 = derivative(state, input, params)?;
    check_stage(1, &k1)?;
    let k2 = derivative(&stage_state(state, &k1, dt / 2.0), input, params)?;
    check_stage(2, &k2)?;
    let k3 = derivative(&stage_state(state, &k2, dt / 2.0), input, params)?;
    check_stage(3, &k3)?;
    let k4 = derivative(&stage_state(state, &k3, dt), input, params)?;
    check_stage(4, &k4)?;

    let w = dt / 6.0;
    let next = VehicleState {
        x: state.x + w * (k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x),
        y: state.y + w * (k1.y + 2.0 * k2.y + 2.0 * k3.y + k4.y),
        psi: wrap_angle(state.psi + w * (k1.psi + 2.0 * k2.psi + 2.0 * k3.psi + k4.psi)),
        v: (state.v + w * (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v)).clamp(0.0, V_MAX),
        phi: state.phi,
        sigma: state.sigma,
    };
    if !next.is_finite() {
        return Err(Error::Integration {
            stage: 4,
            detail: format!("non-finite state {next:?}"),
        });
    }
    Ok(next)
}

/// Iterated [`step_rk4`]: returns the `H + 1` visited states, initial state first.
pub fn rollout(
    state: &VehicleState,
    inputs: &[ControlInput],
    params: &ModelParams,
    dts: &[f64],
) -> Result<Vec<VehicleState>> {
    if inputs.len() != dts.len() {
        return Err(Error::Domain(format!(
            "rollout inputs ({}) and dts ({}) differ in length",
            inputs.len(),
            dts.len()
        )));
    }
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(*state);
    let mut current = *state;
    for (input, &dt) in inputs.iter().zip(dts) {
        current = step_rk4(&current, input, params, dt)?;
        states.push(current);
    }
    Ok(states)
}

/// Map throttle to the per-step model time increment: 0.2 s at D = 0 (1X)
/// up to 0.6 s at D = 1 (3X), linear in between. Written as (1 + 2D)/5 so the
/// grid throttles land on the 0.2/0.4/0.6 literals exactly.
pub fn throttle_to_dt(throttle: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&throttle) {
        return Err(Error::Domain(format!("throttle {throttle} outside [0, 1]")));
    }
    Ok((1.0 + 2.0 * throttle) / 5.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> ModelParams {
        ModelParams::default()
    }

    /// Forward-Euler reference integrator, independent of the RK4 path.
    fn euler_oracle(
        state: &VehicleState,
        input: &ControlInput,
        p: &ModelParams,
        total: f64,
        micro: f64,
    ) -> VehicleState {
        let steps = (total / micro).round() as usize;
        let mut s = *state;
        for _ in 0..steps {
            let d = derivative(&s, input, p).unwrap();
            s = VehicleState {
                x: s.x + micro * d.x,
                y: s.y + micro * d.y,
                psi: s.psi + micro * d.psi,
                v: (s.v + micro * d.v).clamp(0.0, V_MAX),
                phi: s.phi,
                sigma: s.sigma,
            };
        }
        s.psi = wrap_angle(s.psi);
        s
    }

    fn max_component_diff(a: &VehicleState, b: &VehicleState) -> f64 {
        [
            a.x - b.x,
            a.y - b.y,
            a.psi - b.psi,
            a.v - b.v,
            a.phi - b.phi,
            a.sigma - b.sigma,
        ]
        .iter()
        .map(|d| d.abs())
        .fold(0.0, f64::max)
    }

    #[test]
    fn derivative_matches_hand_evaluation() {
        let s = VehicleState::new(0.0, 0.0, 0.0, 1.0, 0.0, 1.0);
        let u = ControlInput::new(0.0, 0.5).unwrap();
        let d = derivative(&s, &u, &params()).unwrap();
        assert!((d.v - 3.9).abs() < 1e-12, "vdot = {}", d.v);
        assert!((d.x - 1.0).abs() < 1e-12);
        assert!(d.y.abs() < 1e-12);
        assert!(d.psi.abs() < 1e-12);
        assert_eq!(d.phi, 0.0);
        assert_eq!(d.sigma, 0.0);
    }

    #[test]
    fn derivative_at_rest_is_zero() {
        let s = VehicleState::rest();
        let u = ControlInput::new(0.0, 0.0).unwrap();
        let d = derivative(&s, &u, &params()).unwrap();
        assert_eq!(d.x, 0.0);
        assert_eq!(d.y, 0.0);
        assert_eq!(d.psi, 0.0);
        assert_eq!(d.v, 0.0, "static friction must clamp the raw -cr0");
    }

    #[test]
    fn yaw_rate_example() {
        let s = VehicleState::new(0.0, 0.0, 0.0, 2.0, 0.0, 1.0);
        let u = ControlInput::new(0.1, 0.0).unwrap();
        let d = derivative(&s, &u, &params()).unwrap();
        assert!((d.psi - 0.338).abs() < 1e-12);
    }

    #[test]
    fn derivative_rejects_non_finite_state() {
        let mut s = VehicleState::rest();
        s.v = f64::NAN;
        let u = ControlInput::new(0.0, 0.0).unwrap();
        assert!(derivative(&s, &u, &params()).is_err());
    }

    #[test]
    fn derivative_rejects_bad_params() {
        let s = VehicleState::rest();
        let u = ControlInput::new(0.0, 0.0).unwrap();
        let mut p = params();
        p.cm1 = -1.0;
        assert!(derivative(&s, &u, &p).is_err());
        p.cm1 = f64::INFINITY;
        assert!(derivative(&s, &u, &p).is_err());
    }

    #[test]
    fn input_bounds_enforced() {
        assert!(ControlInput::new(0.36, 0.5).is_err());
        assert!(ControlInput::new(-0.36, 0.5).is_err());
        assert!(ControlInput::new(0.0, -0.01).is_err());
        assert!(ControlInput::new(0.0, 1.01).is_err());
        assert!(ControlInput::new(0.35, 1.0).is_ok());
        assert!(ControlInput::bounded(0.5, 0.5, 0.6).is_ok());
    }

    #[test]
    fn rest_state_is_fixed_point() {
        let s = VehicleState::rest();
        let u = ControlInput::new(0.0, 0.0).unwrap();
        for dt in [0.05, 0.2, 0.6, 1.0] {
            let next = step_rk4(&s, &u, &params(), dt).unwrap();
            assert_eq!(next, s);
        }
    }

    #[test]
    fn step_rejects_bad_dt() {
        let s = VehicleState::rest();
        let u = ControlInput::new(0.0, 0.0).unwrap();
        assert!(step_rk4(&s, &u, &params(), 0.0).is_err());
        assert!(step_rk4(&s, &u, &params(), -0.1).is_err());
        assert!(step_rk4(&s, &u, &params(), 1.5).is_err());
    }

    #[test]
    fn rk4_matches_fine_euler_oracle() {
        let s = VehicleState::new(0.0, 0.0, 0.0, 1.0, 0.0, 1.0);
        let u = ControlInput::new(0.0, 0.5).unwrap();
        let p = params();
        let got = step_rk4(&s, &u, &p, 0.2).unwrap();
        let oracle = euler_oracle(&s, &u, &p, 0.2, 1e-5);
        assert!(
            max_component_diff(&got, &oracle) < 1e-4,
            "diff = {}",
            max_component_diff(&got, &oracle)
        );
    }

    #[test]
    fn rk4_error_drops_about_sixteenfold_when_dt_halves() {
        // Fixed 0.4 s interval integrated with dt and dt/2; reference is RK4 at
        // dt = 1e-4, effectively exact at these magnitudes.
        let s = VehicleState::new(0.0, 0.0, 0.3, 1.0, 0.05, 1.0);
        let u = ControlInput::new(0.2, 0.5).unwrap();
        let p = params();
        let total = 0.4;
        let run = |dt: f64| {
            let n = (total / dt).round() as usize;
            let mut cur = s;
            for _ in 0..n {
                cur = step_rk4(&cur, &u, &p, dt).unwrap();
            }
            cur
        };
        let reference = run(1e-4);
        let err_coarse = max_component_diff(&run(0.2), &reference);
        let err_fine = max_component_diff(&run(0.1), &reference);
        let ratio = err_coarse / err_fine;
        assert!(
            (8.0..=24.0).contains(&ratio),
            "convergence ratio {ratio} (errors {err_coarse:.3e} / {err_fine:.3e})"
        );
    }

    #[test]
    fn rollout_empty_returns_initial() {
        let s = VehicleState::rest();
        let out = rollout(&s, &[], &params(), &[]).unwrap();
        assert_eq!(out, vec![s]);
    }

    #[test]
    fn rollout_straight_line_keeps_heading() {
        let s = VehicleState::new(0.0, 0.0, 0.0, 1.5, 0.0, 1.0);
        let inputs = vec![ControlInput::new(0.0, 0.4).unwrap(); 25];
        let dts = vec![0.2; 25];
        let states = rollout(&s, &inputs, &params(), &dts).unwrap();
        assert_eq!(states.len(), 26);
        for st in &states {
            assert_eq!(st.y, 0.0);
            assert_eq!(st.psi, 0.0);
        }
    }

    #[test]
    fn rollout_constant_steer_wraps_heading_monotonically() {
        // Throttle chosen to roughly hold v = 1 so the turn rate stays positive.
        let p = params();
        let v = 1.0;
        let delta = 0.2;
        let steady =
            (p.cr2 * v * v + p.cr0 + (v * delta).powi(2) * p.c1 * p.c2 * p.c2)
                / (p.cm1 - p.cm2 * v);
        let s = VehicleState::new(0.0, 0.0, 0.0, v, 0.0, 1.0);
        let n = 120;
        let inputs = vec![ControlInput::new(delta, steady).unwrap(); n];
        let dts = vec![0.2; n];
        let states = rollout(&s, &inputs, &p, &dts).unwrap();
        let mut wrapped = false;
        for pair in states.windows(2) {
            let inc = wrap_angle(pair[1].psi - pair[0].psi);
            assert!(inc > 0.0, "heading increment must stay positive");
            if pair[1].psi < pair[0].psi {
                wrapped = true; // crossed pi and wrapped to the negative side
            }
        }
        assert!(wrapped, "trajectory should wrap through pi");
    }

    #[test]
    fn rollout_length_mismatch_rejected() {
        let s = VehicleState::rest();
        let inputs = vec![ControlInput::new(0.0, 0.0).unwrap()];
        assert!(rollout(&s, &inputs, &params(), &[]).is_err());
    }

    #[test]
    fn speed_never_negative_randomized() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = params();
        for _ in 0..10_000 {
            let s = VehicleState::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-PI..PI),
                rng.gen_range(0.0..3.0),
                rng.gen_range(-0.15..0.15),
                1.0,
            );
            let u = ControlInput::new(
                rng.gen_range(-DELTA_MAX..DELTA_MAX),
                rng.gen_range(0.0..1.0),
            )
            .unwrap();
            let dt = rng.gen_range(0.01..1.0);
            let next = step_rk4(&s, &u, &p, dt).unwrap();
            assert!(next.v >= 0.0);
            assert!(next.v <= V_MAX);
            assert!(next.psi > -PI && next.psi <= PI);
        }
    }

    #[test]
    fn throttle_dilation_map() {
        assert_eq!(throttle_to_dt(0.0).unwrap(), 0.2);
        assert_eq!(throttle_to_dt(0.5).unwrap(), 0.4);
        assert_eq!(throttle_to_dt(1.0).unwrap(), 0.6);
        assert!(throttle_to_dt(-0.1).is_err());
        assert!(throttle_to_dt(1.1).is_err());
    }

    proptest! {
        #[test]
        fn derivative_mirror_symmetry(
            v in 0.0..3.0f64,
            psi in -1.0..1.0f64,
            delta in -DELTA_MAX..DELTA_MAX,
            d in 0.0..1.0f64,
        ) {
            let p = params();
            let s = VehicleState::new(0.0, 1.0, psi, v, 0.0, 1.0);
            let m = VehicleState::new(0.0, -1.0, -psi, v, 0.0, 1.0);
            let u = ControlInput::new(delta, d).unwrap();
            let um = ControlInput::new(-delta, d).unwrap();
            let a = derivative(&s, &u, &p).unwrap();
            let b = derivative(&m, &um, &p).unwrap();
            prop_assert!((a.x - b.x).abs() < 1e-12);
            prop_assert!((a.v - b.v).abs() < 1e-12);
            prop_assert!((a.y + b.y).abs() < 1e-12);
            prop_assert!((a.psi + b.psi).abs() < 1e-12);
        }

        #[test]
        fn wrap_angle_range(a in -100.0..100.0f64) {
            let w = wrap_angle(a);
            prop_assert!(w > -PI && w <= PI);
        }
    }
}
