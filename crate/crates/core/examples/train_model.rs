//! Collects a dataset, trains the attitude model, and compares it with the
//! persistence and zero predictors on held-out frames.
//!
//! cargo run --release --example train_model [frames] [epochs] [out.vmlp]

use vertinav::harness::{collect_on_maps, train_on_dataset, training_maps, ExperimentConfig};

fn main() -> vertinav::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = ExperimentConfig::default();
    cfg.collect.n_frames = args.next().map_or(4000, |s| s.parse().expect("frames"));
    cfg.train.epochs = args.next().map_or(5, |s| s.parse().expect("epochs"));
    let out = args.next().unwrap_or_else(|| "target/example.vmlp".into());

    let data = collect_on_maps(&training_maps(&cfg, "medium", 8)?, &cfg)?;
    let report = train_on_dataset(data, &cfg)?;
    println!("epoch  train      val");
    for (i, (t, v)) in report.curve.train.iter().zip(&report.curve.val).enumerate() {
        println!("{i:>5}  {t:.6}  {v:.6}");
    }
    let deg = |r: [f64; 2]| format!("roll {:.2} deg, pitch {:.2} deg", r[0].to_degrees(), r[1].to_degrees());
    println!("model       {}", deg(report.val_rmse));
    println!("persistence {}", deg(report.persistence_rmse));
    println!("zero        {}", deg(report.zero_rmse));
    report.model.save(&out)?;
    println!("saved {out}");
    Ok(())
}
