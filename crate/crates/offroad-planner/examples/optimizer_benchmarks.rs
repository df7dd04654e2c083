//! CEM and CMA-ES on the standard test functions.
//!
//! ```bash
//! cargo run --release --example optimizer_benchmarks
//! ```

use offroad_planner::optim::{cem_minimize, cma_minimize, BoxProblem, CemConfig, CmaConfig};
use offroad_planner::Result;

fn main() -> Result<()> {
    let sphere = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
    let problem = BoxProblem {
        dim: 4,
        lower: vec![-5.0; 4],
        upper: vec![5.0; 4],
        objective: &sphere,
        budget: 64 * 50,
        seed: 42,
    };
    let r = cem_minimize(&problem, &CemConfig::default())?;
    println!("CEM on sphere (dim 4):");
    println!("  best f = {:.3e} after {} evaluations", r.best_f, r.evaluations);
    for (i, f) in r.trace.iter().enumerate().step_by(10) {
        println!("  iter {i:>3}: incumbent {f:.3e}");
    }

    let rosenbrock = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
    let problem = BoxProblem {
        dim: 2,
        lower: vec![-5.0; 2],
        upper: vec![10.0; 2],
        objective: &rosenbrock,
        budget: 5000,
        seed: 42,
    };
    let r = cma_minimize(&problem, &CmaConfig::default())?;
    println!("\nCMA-ES on Rosenbrock (dim 2):");
    println!(
        "  best f = {:.3e} at ({:.4}, {:.4}) after {} evaluations",
        r.best_f, r.best_x[0], r.best_x[1], r.evaluations
    );
    for (i, f) in r.trace.iter().enumerate().step_by(100) {
        println!("  gen {i:>4}: incumbent {f:.3e}");
    }
    Ok(())
}
