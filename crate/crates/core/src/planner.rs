//! Sampling-based receding-horizon planner over the learned dynamics.
//!
//! Each stage rolls every sampled action forward for `stage_steps`, scores
//! the committed prefix plus that segment, keeps the cheapest, and commits
//! its first `commit_steps` states. `stages` stages give the full horizon.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, LearnedDynamics};
use crate::error::{invalid, Error, Result};
use crate::sim::VehicleState;
use crate::terrain::{extract_patch, ElevationMap, PatchSpec};

/// Circular goal region in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalSpec {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

impl GoalSpec {
    pub fn new(x: f64, y: f64, radius: f64) -> Result<Self> {
        let g = Self { x, y, radius };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x.is_finite() && self.y.is_finite()) {
            return Err(invalid("goal", "position must be finite"));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(invalid("radius", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub w5: f64,
    pub w11: f64,
    pub w12: f64,
    pub w21: f64,
    pub w22: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 8.0,
            w3: 0.07,
            w4: 10.0,
            w5: 4.0,
            w11: 0.4,
            w12: 0.4,
            w21: 1.0,
            w22: 1.0,
        }
    }
}

impl CostWeights {
    pub fn zero() -> Self {
        Self {
            w1: 0.0,
            w2: 0.0,
            w3: 0.0,
            w4: 0.0,
            w5: 0.0,
            w11: 0.0,
            w12: 0.0,
            w21: 0.0,
            w22: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("w1", self.w1),
            ("w2", self.w2),
            ("w3", self.w3),
            ("w4", self.w4),
            ("w5", self.w5),
            ("w11", self.w11),
            ("w12", self.w12),
            ("w21", self.w21),
            ("w22", self.w22),
        ];
        for (name, w) in all {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(invalid(name, format!("must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub v_const: f64,
    pub omega_count: usize,
    pub omega_range: f64,
    pub stage_steps: usize,
    pub stages: usize,
    pub commit_steps: usize,
    pub replan_hz: f64,
    pub deviation_threshold: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            v_const: 0.2,
            omega_count: 11,
            omega_range: 0.78,
            stage_steps: 5,
            stages: 5,
            commit_steps: 3,
            replan_hz: 2.0,
            deviation_threshold: 0.4,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.omega_count < 3 || self.omega_count % 2 == 0 {
            return Err(invalid("omega_count", "must be odd and >= 3 so that omega = 0 is sampled"));
        }
        if !(self.omega_range > 0.0) {
            return Err(invalid("omega_range", "must be > 0"));
        }
        ControlInput::new(self.v_const, self.omega_range)?;
        if self.stage_steps == 0 || self.stages == 0 || self.commit_steps == 0 {
            return Err(invalid("stages", "stage_steps, stages and commit_steps must be >= 1"));
        }
        if self.commit_steps > self.stage_steps {
            return Err(invalid("commit_steps", "must not exceed stage_steps"));
        }
        if !(self.replan_hz > 0.0) {
            return Err(invalid("replan_hz", "must be > 0"));
        }
        if !(self.deviation_threshold > 0.0) {
            return Err(invalid("deviation_threshold", "must be > 0"));
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.stages * self.commit_steps
    }
}

/// Unweighted-by-w1..w5 cost terms, in reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostTerms {
    pub ro: f64,
    pub im: f64,
    pub hc: f64,
    pub mb: f64,
    pub est: f64,
}

impl CostTerms {
    pub fn total(&self, w: &CostWeights) -> f64 {
        w.w1 * self.ro + w.w2 * self.im + w.w3 * self.hc + w.w4 * self.mb + w.w5 * self.est
    }
}

/// Evenly spaced steering rates at constant speed, including zero.
pub fn sample_actions(config: &PlannerConfig) -> Result<Vec<ControlInput>> {
    config.validate()?;
    let half = (config.omega_count / 2) as i64;
    Ok((-half..=half)
        .map(|k| ControlInput {
            v: config.v_const,
            omega: config.omega_range * k as f64 / half as f64,
        })
        .collect())
}

pub fn cost_rollover(states: &[VehicleState], w: &CostWeights) -> f64 {
    let roll: f64 = states.iter().map(|s| s.roll.abs()).sum();
    let pitch: f64 = states.iter().map(|s| s.pitch.abs()).sum();
    w.w11 * roll + w.w12 * pitch
}

pub fn cost_immobilization(states: &[VehicleState], w: &CostWeights) -> f64 {
    let dx: f64 = states.windows(2).map(|p| (p[1].x - p[0].x).abs()).sum();
    let dy: f64 = states.windows(2).map(|p| (p[1].y - p[0].y).abs()).sum();
    -w.w21 * dx - w.w22 * dy
}

pub fn cost_height_change(states: &[VehicleState]) -> f64 {
    states.windows(2).map(|p| (p[1].z - p[0].z).abs()).sum()
}

pub fn cost_map_boundary(out_of_map: &[bool]) -> f64 {
    out_of_map.iter().filter(|&&f| f).count() as f64
}

pub fn cost_goal_estimate(last: &VehicleState, goal: &GoalSpec) -> f64 {
    last.planar_distance(goal.x, goal.y)
}

/// Weighted total and the five terms for a trajectory with per-state
/// out-of-map flags.
pub fn evaluate_cost(
    states: &[VehicleState],
    out_of_map: &[bool],
    goal: &GoalSpec,
    weights: &CostWeights,
) -> Result<(f64, CostTerms)> {
    let last = states.last().ok_or_else(|| invalid("states", "trajectory is empty"))?;
    if out_of_map.len() != states.len() {
        return Err(Error::Shape {
            what: "out-of-map flags",
            expected: states.len(),
            got: out_of_map.len(),
        });
    }
    let terms = CostTerms {
        ro: cost_rollover(states, weights),
        im: cost_immobilization(states, weights),
        hc: cost_height_change(states),
        mb: cost_map_boundary(out_of_map),
        est: cost_goal_estimate(last, goal),
    };
    Ok((terms.total(weights), terms))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub states: Vec<VehicleState>,
    pub inputs: Vec<ControlInput>,
    pub out_of_map: Vec<bool>,
    pub total_cost: f64,
    pub per_term_costs: CostTerms,
    pub created_t: usize,
}

impl Plan {
    /// CSV dump: one row per state; `cost_total` is the cost of the prefix
    /// ending at that row. The last row has no input.
    pub fn to_csv(&self, goal: &GoalSpec, weights: &CostWeights) -> Result<String> {
        let p = &self.per_term_costs;
        let mut out = String::from("t,x,y,z,roll,pitch,yaw,v,omega,cost_total\n");
        let _ = writeln!(
            out,
            "# per_term: c_ro={} c_im={} c_hc={} c_mb={} c_est={} total={}",
            p.ro, p.im, p.hc, p.mb, p.est, self.total_cost
        );
        for (i, s) in self.states.iter().enumerate() {
            let (cost, _) = evaluate_cost(&self.states[..=i], &self.out_of_map[..=i], goal, weights)?;
            let (v, w) = match self.inputs.get(i) {
                Some(u) => (u.v.to_string(), u.omega.to_string()),
                None => (String::new(), String::new()),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                s.t, s.x, s.y, s.z, s.roll, s.pitch, s.yaw, v, w, cost
            );
        }
        Ok(out)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    /// Every candidate left the map; carries the best plan found anyway.
    #[error("no candidate trajectory stays on the map")]
    Unplannable(Box<Plan>),
    #[error(transparent)]
    Other(#[from] Error),
}

/// One scored candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub stage: usize,
    pub input: ControlInput,
    pub total_cost: f64,
    pub terms: CostTerms,
    pub selected: bool,
}

/// Orders candidates by cost, then |omega|, then negative omega first.
fn prefer(a: (f64, f64), b: (f64, f64)) -> Ordering {
    a.0.total_cmp(&b.0)
        .then(a.1.abs().total_cmp(&b.1.abs()))
        .then(a.1.total_cmp(&b.1))
}

pub fn plan(
    state: &VehicleState,
    map: &ElevationMap,
    goal: &GoalSpec,
    dynamics: &LearnedDynamics<'_>,
    weights: &CostWeights,
    config: &PlannerConfig,
) -> Result<Plan, PlanError> {
    plan_with_trace(state, map, goal, dynamics, weights, config).map(|(p, _)| p)
}

/// `plan` that also returns every evaluated candidate in order.
pub fn plan_with_trace(
    state: &VehicleState,
    map: &ElevationMap,
    goal: &GoalSpec,
    dynamics: &LearnedDynamics<'_>,
    weights: &CostWeights,
    config: &PlannerConfig,
) -> Result<(Plan, Vec<Candidate>), PlanError> {
    weights.validate()?;
    goal.validate()?;
    if !state.is_finite() {
        return Err(invalid("state", "must be finite").into());
    }
    let actions = sample_actions(config)?;
    let mut states = vec![state.clone()];
    let mut flags = vec![map.elevation_at(state.x, state.y).is_none()];
    let mut inputs = Vec::with_capacity(config.horizon());
    let mut trace = Vec::with_capacity(config.stages * actions.len());
    let mut any_on_map = false;

    for stage in 0..config.stages {
        let anchor = states.last().expect("non-empty").clone();
        let anchor_flag = *flags.last().expect("non-empty");
        let patch = extract_patch(map, anchor.pose(), PatchSpec::default());
        let mut best: Option<(usize, f64, crate::dynamics::Rollout)> = None;
        let first = trace.len();
        for &action in &actions {
            let segment = vec![action; config.stage_steps];
            let roll = dynamics.rollout_from_patch(&anchor, anchor_flag, patch.clone(), &segment, map)?;
            any_on_map |= roll.out_of_map[1..].iter().any(|f| !f);
            let mut full_states = states.clone();
            full_states.extend_from_slice(&roll.states[1..]);
            let mut full_flags = flags.clone();
            full_flags.extend_from_slice(&roll.out_of_map[1..]);
            let (cost, terms) = evaluate_cost(&full_states, &full_flags, goal, weights)?;
            trace.push(Candidate {
                stage,
                input: action,
                total_cost: cost,
                terms,
                selected: false,
            });
            let better = match &best {
                None => true,
                Some((k, c, _)) => {
                    prefer((cost, action.omega), (*c, trace[*k].input.omega)) == Ordering::Less
                }
            };
            if better {
                best = Some((trace.len() - 1, cost, roll));
            }
        }
        let (k, _, roll) = best.expect("at least three actions");
        trace[k].selected = true;
        debug_assert!(trace[first..].iter().all(|c| c.total_cost >= trace[k].total_cost));
        states.extend_from_slice(&roll.states[1..=config.commit_steps]);
        flags.extend_from_slice(&roll.out_of_map[1..=config.commit_steps]);
        inputs.extend(std::iter::repeat(trace[k].input).take(config.commit_steps));
    }

    let (total_cost, per_term_costs) = evaluate_cost(&states, &flags, goal, weights)?;
    let plan = Plan {
        states,
        inputs,
        out_of_map: flags,
        total_cost,
        per_term_costs,
        created_t: state.t,
    };
    if !any_on_map {
        return Err(PlanError::Unplannable(Box::new(plan)));
    }
    Ok((plan, trace))
}

/// Planar distance from a point to the plan's state polyline.
pub fn distance_to_plan(x: f64, y: f64, plan: &Plan) -> f64 {
    match plan.states.as_slice() {
        [] => f64::INFINITY,
        [only] => only.planar_distance(x, y),
        states => states
            .windows(2)
            .map(|s| point_segment_distance(x, y, &s[0], &s[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

fn point_segment_distance(x: f64, y: f64, a: &VehicleState, b: &VehicleState) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((x - a.x) * dx + (y - a.y) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (x - (a.x + t * dx)).hypot(y - (a.y + t * dy))
}

pub fn should_replan(current: &VehicleState, plan: &Plan, elapsed_since_plan: f64, config: &PlannerConfig) -> bool {
    elapsed_since_plan >= 1.0 / config.replan_hz
        || distance_to_plan(current.x, current.y, plan) > config.deviation_threshold
}
