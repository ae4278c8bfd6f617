//! Runs one WM-VCT trial, saves its episode log and plans, and exports the
//! plot series (attitude over time, top view, plan overlays).
//!
//! cargo run --release --example replay [model.vmlp] [out_dir]

use std::fs;
use std::path::PathBuf;

use vertinav::harness::{generate_tier_maps, replay, run_trial, ExperimentConfig, Method};
use vertinav::nn::{Architecture, MlpModel};

fn main() -> vertinav::Result<()> {
    let mut args = std::env::args().skip(1);
    let model = match args.next() {
        Some(p) => MlpModel::load(p)?,
        None => MlpModel::zeros(&Architecture::default()),
    };
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/example-replay".into()));
    let cfg = ExperimentConfig::default();
    let maps = generate_tier_maps(&cfg)?;
    let (name, map) = &maps[0];
    let run = run_trial(map, Method::Wmvct, Some(&model), &cfg, 11)?;
    println!("{name}: {} in {:.1} s with {} plans", run.result.outcome, run.result.traversal_time, run.plans.len());

    fs::create_dir_all(&out)?;
    let log = out.join("episode.eplog");
    run.result.save_log(&log)?;
    let plans = out.join("episode.plans.csv");
    let mut text = String::new();
    for p in &run.plans {
        text.push_str(&p.to_csv(&run.goal, &cfg.weights)?);
    }
    fs::write(&plans, text)?;

    let files = replay(&log, Some(&plans), &out)?;
    println!("{} rows -> {}", files.rows, files.attitude.display());
    println!("top view -> {}", files.topview.display());
    if let Some(p) = files.plans {
        println!("plan overlays -> {}", p.display());
    }
    Ok(())
}
