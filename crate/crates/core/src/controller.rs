//! Low-level plan tracking: pitch-gated throttle and heading-error steering
//! toward the next waypoint.

use serde::{Deserialize, Serialize};

use crate::dynamics::{wrap_angle, ControlInput};
use crate::error::{invalid, Error, Result};
use crate::planner::Plan;
use crate::sim::VehicleState;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActuationCommand {
    /// Dimensionless, in [-1, 1].
    pub throttle: f64,
    /// Radians, within the steering limit.
    pub steering: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub rate: f64,
    /// Degrees.
    pub pitch_low: f64,
    /// Degrees.
    pub pitch_high: f64,
    pub throttle_low: f64,
    pub throttle_mid: f64,
    pub throttle_high: f64,
    pub waypoint_advance_radius: f64,
    /// Radians.
    pub max_steering: f64,
    /// Speed commanded at `throttle_mid` on flat ground.
    pub v_const: f64,
    /// Distance used to turn a steering angle into a turn rate.
    pub steering_wheelbase: f64,
    pub max_omega: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            rate: 30.0,
            pitch_low: -5.0,
            pitch_high: 5.0,
            throttle_low: 0.15,
            throttle_mid: 0.20,
            throttle_high: 0.30,
            waypoint_advance_radius: 0.2,
            max_steering: 0.6,
            v_const: 0.2,
            steering_wheelbase: 0.66,
            max_omega: 0.78,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pitch_low < self.pitch_high) {
            return Err(invalid("pitch_low", "must be below pitch_high"));
        }
        if !(self.throttle_low <= self.throttle_mid && self.throttle_mid <= self.throttle_high) {
            return Err(invalid("throttle_mid", "throttles must be ascending"));
        }
        if [self.throttle_low, self.throttle_mid, self.throttle_high]
            .iter()
            .any(|t| !(-1.0..=1.0).contains(t))
        {
            return Err(invalid("throttle_high", "throttles must lie in [-1, 1]"));
        }
        if !(self.throttle_mid > 0.0) {
            return Err(invalid("throttle_mid", "must be > 0 to calibrate speed"));
        }
        if !(self.rate > 0.0) {
            return Err(invalid("rate", "must be > 0"));
        }
        if !(self.waypoint_advance_radius >= 0.0) {
            return Err(invalid("waypoint_advance_radius", "must be >= 0"));
        }
        if !(self.max_steering > 0.0 && self.max_steering <= std::f64::consts::PI) {
            return Err(invalid("max_steering", "must lie in (0, pi]"));
        }
        if !(self.steering_wheelbase > 0.0) {
            return Err(invalid("steering_wheelbase", "must be > 0"));
        }
        if !(self.max_omega > 0.0 && self.max_omega <= ControlInput::MAX_OMEGA) {
            return Err(invalid("max_omega", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Three-level throttle by pitch; the middle band is closed.
pub fn throttle_from_pitch(pitch: f64, config: &ControllerConfig) -> f64 {
    let deg = pitch.to_degrees();
    if deg < config.pitch_low {
        config.throttle_low
    } else if deg > config.pitch_high {
        config.throttle_high
    } else {
        config.throttle_mid
    }
}

/// Heading error to the waypoint in (-pi, pi], clamped to the steering
/// limit. Zero when the waypoint is within 1e-6 m.
pub fn steering_command(state: &VehicleState, waypoint: (f64, f64), max_steering: f64) -> Result<f64> {
    if !(waypoint.0.is_finite() && waypoint.1.is_finite()) {
        return Err(Error::Controller("waypoint must be finite".into()));
    }
    let (dx, dy) = (waypoint.0 - state.x, waypoint.1 - state.y);
    if dx.hypot(dy) <= 1e-6 {
        return Ok(0.0);
    }
    let mut err = wrap_angle(dy.atan2(dx) - state.yaw);
    // wrap_angle maps to [-pi, pi); this rule wants (-pi, pi].
    if err == -std::f64::consts::PI {
        err = std::f64::consts::PI;
    }
    Ok(err.clamp(-max_steering, max_steering))
}

fn nearest_index(state: &VehicleState, plan: &Plan, from: usize) -> usize {
    let mut best = from;
    let mut best_d = f64::INFINITY;
    for (i, s) in plan.states.iter().enumerate().skip(from) {
        let d = state.planar_distance(s.x, s.y);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Picks the target waypoint and emits a command. The search starts at the
/// plan state nearest to the vehicle (never before `min_index`) and takes the
/// first state farther than the advance radius, else the last state.
pub fn control_step_from(
    state: &VehicleState,
    plan: &Plan,
    config: &ControllerConfig,
    min_index: usize,
) -> Result<(ActuationCommand, usize)> {
    if plan.states.is_empty() {
        return Err(Error::Controller("plan has no states".into()));
    }
    let last = plan.states.len() - 1;
    let start = nearest_index(state, plan, min_index.min(last));
    let target = (start..=last)
        .find(|&i| {
            let s = &plan.states[i];
            state.planar_distance(s.x, s.y) > config.waypoint_advance_radius
        })
        .unwrap_or(last);
    let wp = &plan.states[target];
    Ok((
        ActuationCommand {
            throttle: throttle_from_pitch(state.pitch, config),
            steering: steering_command(state, (wp.x, wp.y), config.max_steering)?,
        },
        target,
    ))
}

pub fn control_step(state: &VehicleState, plan: &Plan, config: &ControllerConfig) -> Result<(ActuationCommand, usize)> {
    control_step_from(state, plan, config, 0)
}

/// Holds the current plan and enforces monotone waypoint progress on it.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanTracker {
    plan: Plan,
    last_index: usize,
}

impl PlanTracker {
    pub fn new(plan: Plan) -> Self {
        Self { plan, last_index: 0 }
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    pub fn replace(&mut self, plan: Plan) {
        self.plan = plan;
        self.last_index = 0;
    }

    pub fn step(&mut self, state: &VehicleState, config: &ControllerConfig) -> Result<(ActuationCommand, usize)> {
        let (cmd, idx) = control_step_from(state, &self.plan, config, self.last_index)?;
        self.last_index = idx.max(self.last_index);
        Ok((cmd, self.last_index))
    }
}

/// Simulated actuation: speed proportional to throttle (calibrated so the
/// middle throttle gives `v_const`), turn rate from pure pursuit over the
/// distance to the waypoint.
pub fn actuation_to_input(cmd: ActuationCommand, waypoint_distance: f64, config: &ControllerConfig) -> ControlInput {
    let v = (cmd.throttle * config.v_const / config.throttle_mid).clamp(-ControlInput::MAX_V, ControlInput::MAX_V);
    let lookahead = waypoint_distance.max(config.waypoint_advance_radius).max(1e-6);
    let omega = if cmd.steering == 0.0 {
        0.0
    } else {
        (2.0 * v * cmd.steering.sin() / lookahead).clamp(-config.max_omega, config.max_omega)
    };
    ControlInput { v, omega }
}
