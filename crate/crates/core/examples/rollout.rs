//! Rolls the learned model forward along a fixed input sequence and compares
//! the predicted attitude with the simulator.
//!
//! cargo run --release --example rollout [model.vmlp]

use vertinav::dynamics::{ControlInput, LearnedDynamics};
use vertinav::harness::{generate_tier_maps, ExperimentConfig};
use vertinav::nn::{Architecture, MlpModel};
use vertinav::sim::{settle_pose, step_oracle, VehicleState};

fn main() -> vertinav::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(p) => MlpModel::load(p)?,
        None => {
            println!("no model given, using the zero model (predicts level attitude)");
            MlpModel::zeros(&Architecture::default())
        }
    };
    let cfg = ExperimentConfig::default();
    let geometry = cfg.geometry.geometry();
    let maps = generate_tier_maps(&cfg)?;
    let (_, map) = &maps[cfg.trials + 1];
    let (start, _) = cfg.start_and_goal(map)?;
    let att = settle_pose(map, start, &geometry)?;
    let s0 = VehicleState { z: att.z, roll: att.roll, pitch: att.pitch, ..VehicleState::at(start.x, start.y, start.yaw) };

    let inputs: Vec<ControlInput> = [0.0, 0.0, 0.3, 0.3, 0.0, -0.3, -0.3, 0.0]
        .iter()
        .map(|&w| ControlInput::new(0.2, w))
        .collect::<vertinav::Result<_>>()?;
    let dynamics = LearnedDynamics::new(&model, &cfg.dynamics)?;
    let rollout = dynamics.rollout(&s0, &inputs, map)?;

    println!("step      x      y   roll pred/true   pitch pred/true");
    let mut truth = s0.clone();
    for (k, pred) in rollout.states.iter().enumerate() {
        if k > 0 {
            truth = step_oracle(&truth, inputs[k - 1], map, &geometry, cfg.dynamics.dt, None)?.state;
        }
        println!(
            "{k:>4} {:>6.2} {:>6.2}   {:>6.2} {:>6.2}   {:>6.2} {:>6.2}",
            pred.x,
            pred.y,
            pred.roll.to_degrees(),
            truth.roll.to_degrees(),
            pred.pitch.to_degrees(),
            truth.pitch.to_degrees()
        );
    }
    Ok(())
}
