//! Ground-truth vehicle/terrain simulator.
//!
//! The chassis is treated as rigid: its attitude is the least-squares plane
//! through the terrain under the wheel contact points. Planar motion follows
//! the same arc kinematics as the planner, with optional multiplicative slip
//! noise. A wheel that would have to climb more than `max_climb_height` within
//! one step blocks the whole planar motion for that step.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{ackermann_step, ControlInput, DEFAULT_OMEGA_EPSILON};
use crate::error::{invalid, Error, FormatError, Result};
use crate::planner::GoalSpec;
use crate::terrain::{ElevationMap, Pose2};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub t: usize,
}

impl VehicleState {
    /// Level state at a planar pose, `z = 0`, `t = 0`.
    pub fn at(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            yaw,
            ..Self::default()
        }
    }

    pub fn pose(&self) -> Pose2 {
        Pose2::new(self.x, self.y, self.yaw)
    }

    pub fn planar_distance(&self, x: f64, y: f64) -> f64 {
        (self.x - x).hypot(self.y - y)
    }

    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.z, self.roll, self.pitch, self.yaw]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Same state with every real field rounded to f32 precision.
    pub fn quantized(&self) -> Self {
        let q = |v: f64| v as f32 as f64;
        Self {
            x: q(self.x),
            y: q(self.y),
            z: q(self.z),
            roll: q(self.roll),
            pitch: q(self.pitch),
            yaw: q(self.yaw),
            t: self.t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryPreset {
    V4w,
    V6w,
}

impl GeometryPreset {
    pub fn name(self) -> &'static str {
        match self {
            GeometryPreset::V4w => "v4w",
            GeometryPreset::V6w => "v6w",
        }
    }

    pub fn geometry(self) -> VehicleGeometry {
        match self {
            GeometryPreset::V4w => VehicleGeometry::v4w(),
            GeometryPreset::V6w => VehicleGeometry::v6w(),
        }
    }
}

impl FromStr for GeometryPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "v4w" => Ok(Self::V4w),
            "v6w" => Ok(Self::V6w),
            other => Err(invalid("geometry", format!("unknown preset {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleGeometry {
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub wheelbase: f64,
    /// Body-frame (forward, left) offsets of the wheel contact points.
    pub wheel_contact_points: Vec<(f64, f64)>,
    pub max_climb_height: f64,
    pub rollover_limit: f64,
    pub max_steering: f64,
}

/// Default rollover threshold, 30 degrees.
pub const DEFAULT_ROLLOVER_LIMIT: f64 = 30.0 * std::f64::consts::PI / 180.0;

impl VehicleGeometry {
    /// Six-wheeled platform, 0.863 x 0.249 x 0.2 m.
    pub fn v6w() -> Self {
        let (fx, ly) = (0.33, 0.105);
        Self {
            length: 0.863,
            width: 0.249,
            height: 0.2,
            wheelbase: 2.0 * fx,
            wheel_contact_points: vec![
                (fx, ly),
                (fx, -ly),
                (0.0, ly),
                (0.0, -ly),
                (-fx, ly),
                (-fx, -ly),
            ],
            max_climb_height: 0.20,
            rollover_limit: DEFAULT_ROLLOVER_LIMIT,
            max_steering: 0.6,
        }
    }

    /// Four-wheeled platform, 0.523 x 0.249 x 0.2 m.
    pub fn v4w() -> Self {
        let (fx, ly) = (0.16, 0.105);
        Self {
            length: 0.523,
            width: 0.249,
            height: 0.2,
            wheelbase: 2.0 * fx,
            wheel_contact_points: vec![(fx, ly), (fx, -ly), (-fx, ly), (-fx, -ly)],
            max_climb_height: 0.15,
            rollover_limit: DEFAULT_ROLLOVER_LIMIT,
            max_steering: 0.6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.wheelbase > 0.0) {
            return Err(invalid("wheelbase", "must be > 0"));
        }
        if !(self.length > self.wheelbase) {
            return Err(invalid("length", "must exceed the wheelbase"));
        }
        if self.wheel_contact_points.len() < 4 {
            return Err(invalid("wheel_contact_points", "need at least 4"));
        }
        let front = self.wheel_contact_points.iter().any(|p| p.0 > 0.0);
        let rear = self.wheel_contact_points.iter().any(|p| p.0 < 0.0);
        if !(front && rear) {
            return Err(invalid("wheel_contact_points", "must span both axles"));
        }
        if !(self.rollover_limit > 0.0 && self.rollover_limit < std::f64::consts::FRAC_PI_2) {
            return Err(invalid("rollover_limit", "must lie in (0, pi/2)"));
        }
        if !(self.max_climb_height > 0.0) {
            return Err(invalid("max_climb_height", "must be > 0"));
        }
        if !(self.max_steering > 0.0) {
            return Err(invalid("max_steering", "must be > 0"));
        }
        Ok(())
    }
}

/// Settled chassis height and attitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attitude {
    pub z: f64,
    pub roll: f64,
    pub pitch: f64,
}

/// Fits `h = a + b * forward + c * left` through the terrain under the
/// contact points. Pitch is positive nose-up, roll positive left-side-up.
pub fn settle_pose(map: &ElevationMap, pose: Pose2, geometry: &VehicleGeometry) -> Result<Attitude> {
    // Normal equations of the 3-parameter least-squares fit.
    let mut ata = [[0.0f64; 3]; 3];
    let mut atb = [0.0f64; 3];
    for &(u, w) in &geometry.wheel_contact_points {
        let (x, y) = pose.transform(u, w);
        let h = map.elevation_at(x, y).ok_or(Error::OutOfBounds { x, y })?;
        let row = [1.0, u, w];
        for i in 0..3 {
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
            atb[i] += row[i] * h;
        }
    }
    let [a, b, c] = solve3(ata, atb)
        .ok_or_else(|| invalid("wheel_contact_points", "contact points are collinear"))?;
    Ok(Attitude {
        z: a,
        pitch: b.atan(),
        roll: c.atan2((1.0 + b * b).sqrt()),
    })
}

fn solve3(m: [[f64; 3]; 3], rhs: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    if d.abs() < 1e-12 {
        return None;
    }
    let mut out = [0.0; 3];
    for (k, slot) in out.iter_mut().enumerate() {
        let mut mk = m;
        for r in 0..3 {
            mk[r][k] = rhs[r];
        }
        *slot = det(&mk) / d;
    }
    Some(out)
}

/// Seeded multiplicative slip: commanded `v` and `omega` are each scaled by
/// `1 + std_fraction * N(0, 1)`.
#[derive(Debug, Clone)]
pub struct SlipNoise {
    pub std_fraction: f64,
    rng: ChaCha8Rng,
}

impl SlipNoise {
    pub fn new(std_fraction: f64, seed: u64) -> Self {
        Self {
            std_fraction,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn perturb(&mut self, input: ControlInput) -> ControlInput {
        let a: f64 = StandardNormal.sample(&mut self.rng);
        let b: f64 = StandardNormal.sample(&mut self.rng);
        ControlInput {
            v: input.v * (1.0 + self.std_fraction * a),
            omega: input.omega * (1.0 + self.std_fraction * b),
        }
    }
}

/// Result of one ground-truth step.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleStep {
    pub state: VehicleState,
    /// The terrain stopped the planar motion this step.
    pub blocked: bool,
    /// Roll or pitch exceeded the rollover limit.
    pub rolled_over: bool,
}

/// Highest terrain rise met by any contact point between two planar poses.
fn max_wheel_rise(map: &ElevationMap, from: Pose2, to: Pose2, geometry: &VehicleGeometry) -> f64 {
    let step = 0.5 * map.resolution();
    let mut worst = f64::NEG_INFINITY;
    for &(u, w) in &geometry.wheel_contact_points {
        let (x0, y0) = from.transform(u, w);
        let (x1, y1) = to.transform(u, w);
        let Some(h0) = map.elevation_at(x0, y0) else {
            continue;
        };
        let n = (((x1 - x0).hypot(y1 - y0)) / step).ceil().max(1.0) as usize;
        for k in 1..=n {
            let s = k as f64 / n as f64;
            if let Some(h) = map.elevation_at(x0 + s * (x1 - x0), y0 + s * (y1 - y0)) {
                worst = worst.max(h - h0);
            }
        }
    }
    worst
}

pub fn step_oracle(
    state: &VehicleState,
    input: ControlInput,
    map: &ElevationMap,
    geometry: &VehicleGeometry,
    dt: f64,
    slip: Option<&mut SlipNoise>,
) -> Result<OracleStep> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("dt", format!("must be > 0, got {dt}")));
    }
    let applied = match slip {
        Some(noise) => noise.perturb(input),
        None => input,
    };
    let from = state.pose();
    let candidate = ackermann_step(from, applied, dt, DEFAULT_OMEGA_EPSILON);
    let blocked = max_wheel_rise(map, from, candidate, geometry) > geometry.max_climb_height;
    let pose = if blocked { from } else { candidate };
    let att = settle_pose(map, pose, geometry)?;
    let next = VehicleState {
        x: pose.x,
        y: pose.y,
        z: att.z,
        roll: att.roll,
        pitch: att.pitch,
        yaw: pose.yaw,
        t: state.t + 1,
    };
    let rolled_over =
        att.roll.abs() > geometry.rollover_limit || att.pitch.abs() > geometry.rollover_limit;
    Ok(OracleStep {
        state: next,
        blocked,
        rolled_over,
    })
}

/// Anything that maps the current state to a command.
pub trait Policy {
    fn act(&mut self, state: &VehicleState, map: &ElevationMap, time: f64) -> Result<ControlInput>;
}

impl<F> Policy for F
where
    F: FnMut(&VehicleState, &ElevationMap, f64) -> Result<ControlInput>,
{
    fn act(&mut self, state: &VehicleState, map: &ElevationMap, time: f64) -> Result<ControlInput> {
        self(state, map, time)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    ReachedGoal,
    RolledOver,
    Immobilized,
    OutOfBounds,
    Timeout,
}

impl Outcome {
    pub const ALL: [Outcome; 5] = [
        Outcome::ReachedGoal,
        Outcome::RolledOver,
        Outcome::Immobilized,
        Outcome::OutOfBounds,
        Outcome::Timeout,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Outcome::ReachedGoal => "reached_goal",
            Outcome::RolledOver => "rolled_over",
            Outcome::Immobilized => "immobilized",
            Outcome::OutOfBounds => "out_of_bounds",
            Outcome::Timeout => "timeout",
        }
    }

    pub fn is_success(self) -> bool {
        self == Outcome::ReachedGoal
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Outcome {
    type Err = FormatError;

    fn from_str(s: &str) -> Result<Self, FormatError> {
        Outcome::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| FormatError::MalformedHeader(format!("unknown outcome {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub dt: f64,
    pub max_steps: usize,
    pub goal_radius: f64,
    pub slip_noise_std: f64,
    /// Consecutive blocked steps that end the episode as immobilized.
    pub immobilized_after: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            dt: 0.5,
            max_steps: 160,
            goal_radius: 0.2,
            slip_noise_std: 0.05,
            immobilized_after: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub outcome: Outcome,
    pub trajectory: Vec<VehicleState>,
    pub inputs: Vec<ControlInput>,
    pub dt: f64,
    pub traversal_time: f64,
    pub mean_abs_roll: f64,
    pub mean_abs_pitch: f64,
}

impl EpisodeResult {
    pub fn new(
        outcome: Outcome,
        trajectory: Vec<VehicleState>,
        inputs: Vec<ControlInput>,
        dt: f64,
    ) -> Self {
        assert!(!trajectory.is_empty(), "trajectory must hold the start state");
        let n = trajectory.len() as f64;
        let mean_abs_roll = trajectory.iter().map(|s| s.roll.abs()).sum::<f64>() / n;
        let mean_abs_pitch = trajectory.iter().map(|s| s.pitch.abs()).sum::<f64>() / n;
        Self {
            outcome,
            traversal_time: (trajectory.len() - 1) as f64 * dt,
            trajectory,
            inputs,
            dt,
            mean_abs_roll,
            mean_abs_pitch,
        }
    }

    /// Episode log: header, CSV rows (the last row has no input), outcome.
    pub fn to_log(&self) -> String {
        let mut out = format!("{LOG_MAGIC} dt={}\n{LOG_COLUMNS}\n", self.dt);
        for (i, s) in self.trajectory.iter().enumerate() {
            let (v, w) = match self.inputs.get(i) {
                Some(u) => (u.v.to_string(), u.omega.to_string()),
                None => (String::new(), String::new()),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                s.t, s.x, s.y, s.z, s.roll, s.pitch, s.yaw, v, w
            ));
        }
        out.push_str(&format!("outcome={}\n", self.outcome));
        out
    }

    pub fn from_log(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| FormatError::MalformedHeader("empty log".into()))?;
        let mut tokens = header.split(' ');
        let magic = format!(
            "{} {}",
            tokens.next().unwrap_or_default(),
            tokens.next().unwrap_or_default()
        );
        crate::codec::check_magic(&magic, "EPLOG", LOG_MAGIC)?;
        let dt: f64 = crate::codec::parse_keyed(tokens.next(), "dt")?;
        match lines.next() {
            Some((_, cols)) if cols == LOG_COLUMNS => {}
            _ => return Err(FormatError::MalformedHeader("missing column header".into()).into()),
        }
        let mut trajectory = Vec::new();
        let mut inputs = Vec::new();
        let mut outcome = None;
        let mut open_row = false;
        for (idx, line) in lines {
            let line_no = idx + 1;
            if let Some(name) = line.strip_prefix("outcome=") {
                outcome = Some(name.parse::<Outcome>()?);
                break;
            }
            if open_row {
                return Err(FormatError::MalformedRecord {
                    line: line_no,
                    reason: "row without input before the final row".into(),
                }
                .into());
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 9 {
                return Err(FormatError::MalformedRecord {
                    line: line_no,
                    reason: format!("expected 9 fields, found {}", fields.len()),
                }
                .into());
            }
            let num = |i: usize| -> Result<f64, FormatError> {
                fields[i].parse().map_err(|_| FormatError::MalformedRecord {
                    line: line_no,
                    reason: format!("bad number {:?}", fields[i]),
                })
            };
            let t: usize = fields[0].parse().map_err(|_| FormatError::MalformedRecord {
                line: line_no,
                reason: format!("bad step index {:?}", fields[0]),
            })?;
            trajectory.push(VehicleState {
                t,
                x: num(1)?,
                y: num(2)?,
                z: num(3)?,
                roll: num(4)?,
                pitch: num(5)?,
                yaw: num(6)?,
            });
            if fields[7].is_empty() && fields[8].is_empty() {
                open_row = true;
            } else {
                inputs.push(ControlInput {
                    v: num(7)?,
                    omega: num(8)?,
                });
            }
        }
        let outcome =
            outcome.ok_or_else(|| FormatError::MalformedHeader("missing outcome line".into()))?;
        if trajectory.is_empty() || inputs.len() + 1 != trajectory.len() {
            return Err(FormatError::SizeMismatch(format!(
                "{} states but {} inputs",
                trajectory.len(),
                inputs.len()
            ))
            .into());
        }
        Ok(Self::new(outcome, trajectory, inputs, dt))
    }

    pub fn save_log(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_log())?;
        Ok(())
    }

    pub fn load_log(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_log(&fs::read_to_string(path)?)
    }
}

const LOG_MAGIC: &str = "EPLOG v1";
const LOG_COLUMNS: &str = "t,x,y,z,roll,pitch,yaw,v,omega";

/// Drives `policy` on `map` from `start` until the goal, a failure, or the
/// step limit. Deterministic for a given `seed`.
pub fn run_episode(
    map: &ElevationMap,
    start: Pose2,
    goal: &GoalSpec,
    policy: &mut dyn Policy,
    geometry: &VehicleGeometry,
    config: &EpisodeConfig,
    seed: u64,
) -> Result<EpisodeResult> {
    geometry.validate()?;
    goal.validate()?;
    let att = settle_pose(map, start, geometry)?;
    let mut state = VehicleState {
        x: start.x,
        y: start.y,
        z: att.z,
        roll: att.roll,
        pitch: att.pitch,
        yaw: start.yaw,
        t: 0,
    };
    let mut noise = SlipNoise::new(config.slip_noise_std, seed);
    let mut trajectory = vec![state.clone()];
    let mut inputs = Vec::new();
    let mut blocked_run = 0;
    let mut outcome = Outcome::Timeout;

    for _ in 0..config.max_steps {
        let input = policy.act(&state, map, state.t as f64 * config.dt)?;
        if !input.v.is_finite() || !input.omega.is_finite() {
            return Err(Error::Policy(format!("non-finite input {input:?}")));
        }
        input.validate().map_err(|e| Error::Policy(e.to_string()))?;
        let step = match step_oracle(&state, input, map, geometry, config.dt, Some(&mut noise)) {
            Ok(step) => step,
            Err(Error::OutOfBounds { .. }) => {
                outcome = Outcome::OutOfBounds;
                break;
            }
            Err(e) => return Err(e),
        };
        inputs.push(input);
        trajectory.push(step.state.clone());
        state = step.state;
        if step.rolled_over {
            outcome = Outcome::RolledOver;
            break;
        }
        blocked_run = if step.blocked { blocked_run + 1 } else { 0 };
        if blocked_run >= config.immobilized_after {
            outcome = Outcome::Immobilized;
            break;
        }
        if state.planar_distance(goal.x, goal.y) <= goal.radius {
            outcome = Outcome::ReachedGoal;
            break;
        }
    }
    Ok(EpisodeResult::new(outcome, trajectory, inputs, config.dt))
}
