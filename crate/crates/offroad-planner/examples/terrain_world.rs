//! Generate a seeded terrain world and print its class marginals and an ASCII
//! map.
//!
//! ```bash
//! cargo run --release --example terrain_world
//! ```

use offroad_planner::seqmodel::EVENT_CLASS_NAMES;
use offroad_planner::worldsim::{generate_world, WorldConfig};
use offroad_planner::Result;

fn main() -> Result<()> {
    let config = WorldConfig::default();
    let world = generate_world(42, &config)?;
    let size = world.size();
    let cell = world.cell_size();

    let mut counts = [0usize; 9];
    for row in 0..size {
        for col in 0..size {
            let c = world.class_at(col as f64 * cell, row as f64 * cell)?;
            counts[c] += 1;
        }
    }
    println!("class marginals on a {size}x{size} grid (prior in parentheses):");
    for (i, name) in EVENT_CLASS_NAMES.iter().enumerate() {
        println!(
            "  {name:<18} {:6.3} ({:.3})",
            counts[i] as f64 / (size * size) as f64,
            config.class_frequencies[i]
        );
    }

    // One glyph per class: collision classes upper-case, drivable lower-case.
    let glyphs = ['T', 'O', 'H', 'w', 'm', 'j', ',', '.', 'l'];
    println!("\nmap (top row = north):");
    for row in (0..size).rev() {
        let mut line = String::with_capacity(size);
        for col in 0..size {
            let c = world.class_at(col as f64 * cell, row as f64 * cell)?;
            line.push(glyphs[c]);
        }
        println!("  {line}");
    }
    Ok(())
}
