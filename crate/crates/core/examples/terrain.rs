//! Generates the three benchmark tiers, prints their statistics and an ASCII
//! relief of one map, and writes the maps as EMAP files.
//!
//! cargo run --release --example terrain [out_dir]

use vertinav::harness::{generate_tier_maps, write_maps, ExperimentConfig};
use vertinav::terrain::ElevationMap;

fn relief(map: &ElevationMap, cell: f64) -> String {
    let (x0, y0, x1, y1) = map.bounds();
    let mut out = String::new();
    let mut y = y1 - 0.5 * cell;
    while y > y0 {
        let mut x = x0 + 0.5 * cell;
        while x < x1 {
            out.push(match map.elevation_at(x, y).unwrap_or(0.0) {
                h if h > 0.3 => '#',
                h if h > 0.15 => '+',
                h if h > 0.03 => '.',
                _ => ' ',
            });
            x += cell;
        }
        out.push('\n');
        y -= cell;
    }
    out
}

fn main() -> vertinav::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/example-maps".into());
    let cfg = ExperimentConfig::default();
    let maps = generate_tier_maps(&cfg)?;
    for (name, map) in &maps {
        let h = map.heights();
        let rough = h.iter().filter(|&&v| v > 0.03).count() as f64 / h.len() as f64;
        println!("{name:<12} {}x{} cells  max {:.3} m  rock cover {:.0}%", map.cols(), map.rows(), map.max_height(), 100.0 * rough);
    }
    let (name, map) = &maps[cfg.trials];
    println!("\n{name} (x to the right, 4 cm per character)\n{}", relief(map, 0.04));
    let paths = write_maps(&out, &maps)?;
    println!("wrote {} maps to {out}", paths.len());
    Ok(())
}
