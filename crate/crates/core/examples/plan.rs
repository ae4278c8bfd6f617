//! One planner call on a rock map: per-stage candidate costs, the chosen
//! inputs, and the plan as CSV.
//!
//! cargo run --release --example plan [model.vmlp]

use vertinav::dynamics::LearnedDynamics;
use vertinav::harness::{generate_tier_maps, ExperimentConfig};
use vertinav::nn::{Architecture, MlpModel};
use vertinav::planner::{plan_with_trace, PlanError};
use vertinav::sim::VehicleState;

fn main() -> vertinav::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(p) => MlpModel::load(p)?,
        None => MlpModel::zeros(&Architecture::default()),
    };
    let cfg = ExperimentConfig::default();
    let maps = generate_tier_maps(&cfg)?;
    let (name, map) = &maps[cfg.trials];
    let (start, goal) = cfg.start_and_goal(map)?;
    let dynamics = LearnedDynamics::new(&model, &cfg.dynamics)?;
    let state = VehicleState::at(start.x, start.y, start.yaw);

    let (plan, trace) = match plan_with_trace(&state, map, &goal, &dynamics, &cfg.weights, &cfg.planner) {
        Ok(v) => v,
        Err(PlanError::Unplannable(p)) => {
            println!("every candidate left the map; best effort cost {:.3}", p.total_cost);
            return Ok(());
        }
        Err(PlanError::Other(e)) => return Err(e),
    };
    println!("{name}: start ({:.2}, {:.2}), goal ({:.2}, {:.2})", start.x, start.y, goal.x, goal.y);
    for stage in 0..cfg.planner.stages {
        let row: Vec<String> = trace
            .iter()
            .filter(|c| c.stage == stage)
            .map(|c| format!("{}{:.2}", if c.selected { "*" } else { " " }, c.total_cost))
            .collect();
        println!("stage {stage}: {}", row.join(" "));
    }
    println!("{} candidates, {} states, total cost {:.3}\n", trace.len(), plan.states.len(), plan.total_cost);
    print!("{}", plan.to_csv(&goal, &cfg.weights)?);
    Ok(())
}
