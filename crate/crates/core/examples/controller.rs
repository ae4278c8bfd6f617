//! Tracks a plan with the low-level controller: pitch-scheduled throttle and
//! pure-pursuit steering toward the next waypoint.
//!
//! cargo run --release --example controller

use vertinav::controller::{actuation_to_input, throttle_from_pitch, PlanTracker};
use vertinav::dynamics::{ackermann_step, ControlInput, DEFAULT_OMEGA_EPSILON};
use vertinav::harness::ExperimentConfig;
use vertinav::planner::{CostTerms, Plan};
use vertinav::sim::VehicleState;

fn main() -> vertinav::Result<()> {
    let cfg = ExperimentConfig::default().controller;
    for deg in [-10.0f64, 0.0, 10.0] {
        println!("pitch {deg:>5} deg -> throttle {:.2}", throttle_from_pitch(deg.to_radians(), &cfg));
    }

    // a gentle left arc as the reference
    let input = ControlInput::new(0.2, 0.15)?;
    let mut states = vec![VehicleState::at(0.0, 0.0, 0.0)];
    for t in 1..=15 {
        let pose = ackermann_step(states[t - 1].pose(), input, 1.0, DEFAULT_OMEGA_EPSILON);
        states.push(VehicleState { t, ..VehicleState::at(pose.x, pose.y, pose.yaw) });
    }
    let plan = Plan {
        out_of_map: vec![false; states.len()],
        states,
        inputs: vec![input; 15],
        total_cost: 0.0,
        per_term_costs: CostTerms::default(),
        created_t: 0,
    };

    let mut tracker = PlanTracker::new(plan);
    let mut state = VehicleState::at(0.0, -0.1, 0.1);
    println!("   x      y   waypoint  throttle  steering");
    for _ in 0..20 {
        let (cmd, idx) = tracker.step(&state, &cfg)?;
        let wp = &tracker.plan().states[idx];
        let u = actuation_to_input(cmd, state.planar_distance(wp.x, wp.y), &cfg);
        println!("{:>5.2} {:>6.2} {:>6} {:>9.2} {:>9.3}", state.x, state.y, idx, cmd.throttle, cmd.steering);
        let pose = ackermann_step(state.pose(), u, 0.5, DEFAULT_OMEGA_EPSILON);
        state = VehicleState::at(pose.x, pose.y, pose.yaw);
    }
    Ok(())
}
