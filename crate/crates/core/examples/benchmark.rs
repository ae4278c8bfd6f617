//! Benchmarks WM-VCT, open-loop and greedy navigation over the three tiers.
//! Without a model file a short training run provides one.
//!
//! cargo run --release --example benchmark [model.vmlp] [seed]

use vertinav::harness::{
    collect_on_maps, evaluate, generate_tier_maps, group_by_tier, train_on_dataset, training_maps, ExperimentConfig,
    Method,
};
use vertinav::nn::MlpModel;

fn main() -> vertinav::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = ExperimentConfig::default();
    let model = match args.next() {
        Some(p) => MlpModel::load(p)?,
        None => {
            println!("no model given, training a small one (4000 frames, 5 epochs)");
            let mut quick = cfg.clone();
            quick.collect.n_frames = 4000;
            quick.train.epochs = 5;
            let data = collect_on_maps(&training_maps(&quick, "medium", 8)?, &quick)?;
            train_on_dataset(data, &quick)?.model
        }
    };
    if let Some(s) = args.next() {
        cfg.seed = s.parse().expect("seed must be an integer");
    }
    let maps = group_by_tier(generate_tier_maps(&cfg)?);
    let order: Vec<String> = cfg.tiers.iter().map(|t| t.name.clone()).collect();
    let methods = [Method::Wmvct, Method::OpenLoop, Method::Greedy];
    let report = evaluate(&maps, &order, Some(&model), &methods, &cfg, None)?;
    print!("{}", report.table());
    for m in methods {
        let (roll, pitch) = report.mean_attitude_deg(m).unwrap_or((f64::NAN, f64::NAN));
        println!("{m:<10} {:>2}/{} successes, mean |roll| {roll:.2} deg, |pitch| {pitch:.2} deg", report.success_total(m), order.len() * cfg.trials);
    }
    Ok(())
}
