//! Ground-truth simulator: settles the vehicle on a rock map, steps it along
//! a straight line, and runs a full open-loop episode.
//!
//! cargo run --release --example oracle_episode

use vertinav::dynamics::ControlInput;
use vertinav::harness::{generate_tier_maps, run_trial, ExperimentConfig, Method};
use vertinav::sim::{settle_pose, step_oracle, VehicleState};

fn main() -> vertinav::Result<()> {
    let cfg = ExperimentConfig::default();
    let geometry = cfg.geometry.geometry();
    let maps = generate_tier_maps(&cfg)?;
    let (name, map) = &maps[cfg.trials];
    let (start, _) = cfg.start_and_goal(map)?;

    let att = settle_pose(map, start, &geometry)?;
    println!("{name}: settled at z {:.3} m, roll {:.2} deg, pitch {:.2} deg", att.z, att.roll.to_degrees(), att.pitch.to_degrees());

    let mut state = VehicleState { z: att.z, roll: att.roll, pitch: att.pitch, ..VehicleState::at(start.x, start.y, start.yaw) };
    let input = ControlInput::new(0.2, 0.0)?;
    println!("  t      x      y     roll   pitch  blocked");
    for _ in 0..12 {
        let step = step_oracle(&state, input, map, &geometry, 0.5, None)?;
        state = step.state;
        println!(
            "{:>3} {:>6.2} {:>6.2} {:>7.2} {:>7.2}  {}",
            state.t, state.x, state.y, state.roll.to_degrees(), state.pitch.to_degrees(), step.blocked
        );
        if step.rolled_over {
            println!("rolled over");
            break;
        }
    }

    let run = run_trial(map, Method::OpenLoop, None, &cfg, 7)?;
    let r = &run.result;
    println!(
        "open-loop episode: {} after {:.1} s, mean |roll| {:.2} deg, mean |pitch| {:.2} deg",
        r.outcome,
        r.traversal_time,
        r.mean_abs_roll.to_degrees(),
        r.mean_abs_pitch.to_degrees()
    );
    Ok(())
}
