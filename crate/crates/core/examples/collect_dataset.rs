//! Drives the simulator on medium-tier maps with a random-walk driver and
//! records training frames.
//!
//! cargo run --release --example collect_dataset [frames] [out.vdst]

use vertinav::harness::{collect_on_maps, training_maps, ExperimentConfig};

fn main() -> vertinav::Result<()> {
    let mut args = std::env::args().skip(1);
    let frames: usize = args.next().map_or(2000, |s| s.parse().expect("frames must be an integer"));
    let out = args.next().unwrap_or_else(|| "target/example.vdst".into());
    let mut cfg = ExperimentConfig::default();
    cfg.collect.n_frames = frames;

    let maps = training_maps(&cfg, "medium", 8)?;
    let data = collect_on_maps(&maps, &cfg)?;
    let n = data.len() as f64;
    let mean = |f: &dyn Fn(&vertinav::dataset::TrainingFrame) -> f64| data.frames.iter().map(f).sum::<f64>() / n;
    println!("{} frames from {} maps", data.len(), data.source_meta.map_count);
    println!("height scale {:.3} (1 / rms of cell height relative to the vehicle)", data.norm_stats.height_scale);
    println!("mean |roll'| {:.2} deg, mean |pitch'| {:.2} deg", mean(&|f| f.state_t1.roll.abs().to_degrees()), mean(&|f| f.state_t1.pitch.abs().to_degrees()));
    data.save(&out)?;
    println!("saved {out}");
    Ok(())
}
