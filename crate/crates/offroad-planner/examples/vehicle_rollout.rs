//! Integrate the car model: accelerate from rest, carve a constant turn, and
//! show the throttle-to-time-dilation map.
//!
//! ```bash
//! cargo run --release --example vehicle_rollout
//! ```

use offroad_planner::vehicle::{
    rollout, throttle_to_dt, ControlInput, ModelParams, VehicleState,
};
use offroad_planner::Result;

fn main() -> Result<()> {
    let params = ModelParams::default();

    println!("throttle -> model time step:");
    for d in [0.0, 0.25, 0.5, 0.75, 1.0] {
        println!("  D = {d:.2}  ->  dt = {:.2} s", throttle_to_dt(d)?);
    }

    // Full throttle from rest, straight line.
    let start = VehicleState::rest();
    let inputs = vec![ControlInput::new(0.0, 1.0)?; 12];
    let dts = vec![0.2; 12];
    let states = rollout(&start, &inputs, &params, &dts)?;
    println!("\nfull throttle from rest (0.2 s steps):");
    println!("  t(s)    x(m)     v(m/s)");
    for (i, s) in states.iter().enumerate() {
        println!("  {:4.1}  {:7.3}  {:7.3}", i as f64 * 0.2, s.x, s.v);
    }

    // Constant turn at part throttle.
    let inputs = vec![ControlInput::new(0.25, 0.4)?; 40];
    let dts = vec![0.2; 40];
    let states = rollout(&start, &inputs, &params, &dts)?;
    let last = states.last().unwrap();
    println!("\nconstant steer 0.25 rad at D = 0.4 for 8 s:");
    println!(
        "  end pose x = {:.2} m, y = {:.2} m, psi = {:.2} rad, v = {:.2} m/s",
        last.x, last.y, last.psi, last.v
    );
    Ok(())
}
