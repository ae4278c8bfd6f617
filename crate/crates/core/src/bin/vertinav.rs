use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vertinav::dataset::Dataset;
use vertinav::harness::{
    collect_on_maps, evaluate, generate_tier_maps, group_by_tier, load_maps, replay, train_on_dataset, write_maps,
    EvaluateOutput, ExperimentConfig, Method,
};
use vertinav::nn::MlpModel;

#[derive(Parser)]
#[command(name = "vertinav", version, about = "Rough-terrain navigation with a learned vehicle-terrain model")]
struct Cli {
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,
    /// Experiment configuration (TOML); missing keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the tiered benchmark maps.
    GenTerrain {
        /// Tier/trial spec (same TOML layout as --config).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Drive the oracle simulator on maps and record training frames.
    Collect {
        #[arg(long)]
        maps: PathBuf,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the attitude model on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Loss-curve CSV; defaults to `<out>.loss.csv`.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Run the navigation benchmark.
    Evaluate {
        #[arg(long)]
        maps: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "wmvct,open_loop,greedy")]
        methods: String,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export plot series from an episode log.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        plans: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> vertinav::Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run(cli: Cli) -> vertinav::Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let Some(command) = cli.command else {
        eprintln!("no subcommand given; see --help");
        return Ok(());
    };
    match command {
        Command::GenTerrain { spec, seed, trials, out } => {
            if let Some(p) = spec {
                cfg = ExperimentConfig::load(p)?;
            }
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.trials = trials.unwrap_or(cfg.trials);
            let maps = generate_tier_maps(&cfg)?;
            let paths = write_maps(&out, &maps)?;
            for ((name, map), path) in maps.iter().zip(&paths) {
                println!(
                    "{name}: {}x{} cells, max height {:.3} m -> {}",
                    map.cols(),
                    map.rows(),
                    map.max_height(),
                    path.display()
                );
            }
        }
        Command::Collect { maps, frames, seed, out } => {
            cfg.collect.n_frames = frames.unwrap_or(cfg.collect.n_frames);
            cfg.collect.seed = seed.unwrap_or(cfg.collect.seed);
            let maps: Vec<_> = load_maps(&maps)?.into_iter().map(|(_, m)| m).collect();
            let data = collect_on_maps(&maps, &cfg)?;
            data.save(&out)?;
            println!("{} frames -> {}", data.len(), out.display());
            print_label_histogram(&data);
        }
        Command::Train { data, out, loss_csv } => {
            let data = Dataset::load(&data)?;
            let report = train_on_dataset(data, &cfg)?;
            report.model.save(&out)?;
            let loss_path = loss_csv.unwrap_or_else(|| {
                let mut s = out.clone().into_os_string();
                s.push(".loss.csv");
                PathBuf::from(s)
            });
            let mut csv = String::from("epoch,train_loss,val_loss\n");
            for (i, (t, v)) in report.curve.train.iter().zip(&report.curve.val).enumerate() {
                csv.push_str(&format!("{i},{t},{v}\n"));
            }
            fs::write(&loss_path, csv)?;
            let deg = |r: [f64; 2]| (r[0].to_degrees(), r[1].to_degrees());
            let (vr, vp) = deg(report.val_rmse);
            let (pr, pp) = deg(report.persistence_rmse);
            let (zr, zp) = deg(report.zero_rmse);
            println!("model -> {}, loss curve -> {}", out.display(), loss_path.display());
            println!("val RMSE roll {vr:.3} deg, pitch {vp:.3} deg");
            println!("persistence  roll {pr:.3} deg, pitch {pp:.3} deg");
            println!("zero         roll {zr:.3} deg, pitch {zp:.3} deg");
        }
        Command::Evaluate { maps, model, methods, trials, seed, out } => {
            cfg.trials = trials.unwrap_or(cfg.trials);
            cfg.seed = seed.unwrap_or(cfg.seed);
            let methods = Method::parse_list(&methods)?;
            let model = model.map(MlpModel::load).transpose()?;
            let tiers = group_by_tier(load_maps(&maps)?);
            // configured tier order first, then anything else found on disk
            let mut order: Vec<String> = cfg.tiers.iter().map(|t| t.name.clone()).filter(|n| tiers.contains_key(n)).collect();
            order.extend(tiers.keys().filter(|k| !order.contains(k)).cloned().collect::<Vec<_>>());
            let report = evaluate(&tiers, &order, model.as_ref(), &methods, &cfg, Some(&EvaluateOutput { dir: out.clone() }))?;
            print!("{}", report.table());
            println!("results -> {}", out.display());
        }
        Command::Replay { log, plans, out } => {
            let files = replay(&log, plans.as_deref(), &out)?;
            println!("{} states -> {}, {}", files.rows, files.attitude.display(), files.topview.display());
            if let Some(p) = files.plans {
                println!("plans -> {}", p.display());
            }
        }
    }
    Ok(())
}

fn print_label_histogram(data: &Dataset) {
    const BIN_DEG: f64 = 5.0;
    const BINS: usize = 7;
    let mut roll = [0usize; BINS];
    let mut pitch = [0usize; BINS];
    for f in &data.frames {
        let bin = |a: f64| ((a.abs().to_degrees() / BIN_DEG) as usize).min(BINS - 1);
        roll[bin(f.state_t1.roll)] += 1;
        pitch[bin(f.state_t1.pitch)] += 1;
    }
    println!("|angle| deg     roll    pitch");
    for i in 0..BINS {
        let label = if i + 1 == BINS {
            format!(">={:.0}", i as f64 * BIN_DEG)
        } else {
            format!("{:.0}-{:.0}", i as f64 * BIN_DEG, (i + 1) as f64 * BIN_DEG)
        };
        println!("{label:<12} {:>7} {:>8}", roll[i], pitch[i]);
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
