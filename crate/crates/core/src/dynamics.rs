//! Decomposed forward dynamics: analytic planar Ackermann motion, terrain
//! lookup for height, and a learned network for roll and pitch.

use serde::{Deserialize, Serialize};

use crate::dataset::assemble_model_input;
use crate::error::{invalid, Error, Result};
use crate::nn::MlpModel;
use crate::sim::VehicleState;
use crate::terrain::{extract_patch, ElevationMap, ElevationPatch, PatchSpec, Pose2};

/// Commanded linear (m/s) and angular (rad/s) velocity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub v: f64,
    pub omega: f64,
}

impl ControlInput {
    pub const MAX_V: f64 = 1.0;
    pub const MAX_OMEGA: f64 = 1.0;

    pub fn new(v: f64, omega: f64) -> Result<Self> {
        let input = Self { v, omega };
        input.validate()?;
        Ok(input)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.v.is_finite() || self.v.abs() > Self::MAX_V {
            return Err(invalid("v", format!("must be finite with |v| <= 1, got {}", self.v)));
        }
        if !self.omega.is_finite() || self.omega.abs() > Self::MAX_OMEGA {
            return Err(invalid(
                "omega",
                format!("must be finite with |omega| <= 1, got {}", self.omega),
            ));
        }
        Ok(())
    }
}

/// Wraps an angle to `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    if (-PI..PI).contains(&a) {
        return a;
    }
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Straight-line switch threshold for `ackermann_step`, rad/s.
pub const DEFAULT_OMEGA_EPSILON: f64 = 1e-4;

/// Advances a planar pose along the arc traced by a constant `(v, omega)`.
///
/// Below `omega_epsilon` the chord form is used: the pose moves `v * dt`
/// along the mid-step heading. That is exact for `omega == 0` and stays within
/// `v * dt * (omega * dt)^2 / 24` of the arc, so both branches meet at the
/// switch.
pub fn ackermann_step(pose: Pose2, input: ControlInput, dt: f64, omega_epsilon: f64) -> Pose2 {
    let ControlInput { v, omega } = input;
    if omega.abs() > omega_epsilon {
        let yaw1 = pose.yaw + omega * dt;
        let r = v / omega;
        Pose2 {
            x: pose.x + r * (yaw1.sin() - pose.yaw.sin()),
            y: pose.y - r * (yaw1.cos() - pose.yaw.cos()),
            yaw: wrap_angle(yaw1),
        }
    } else {
        let mid = pose.yaw + 0.5 * omega * dt;
        Pose2 {
            x: pose.x + v * dt * mid.cos(),
            y: pose.y + v * dt * mid.sin(),
            yaw: wrap_angle(pose.yaw + omega * dt),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsConfig {
    /// Model step, seconds.
    pub dt: f64,
    pub omega_epsilon: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            dt: 1.0,
            omega_epsilon: DEFAULT_OMEGA_EPSILON,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt", "must be > 0"));
        }
        if !(self.omega_epsilon > 0.0 && self.omega_epsilon.is_finite()) {
            return Err(invalid("omega_epsilon", "must be > 0"));
        }
        Ok(())
    }
}

/// One predicted step. `out_of_map` is set when the predicted planar
/// position has no terrain under it (height is then held).
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub state: VehicleState,
    pub out_of_map: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Rollout {
    pub states: Vec<VehicleState>,
    pub out_of_map: Vec<bool>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> Option<&VehicleState> {
        self.states.last()
    }
}

/// The learned forward model bound to a network and a step configuration.
#[derive(Debug, Clone, Copy)]
pub struct LearnedDynamics<'a> {
    pub model: &'a MlpModel,
    pub config: &'a DynamicsConfig,
}

impl<'a> LearnedDynamics<'a> {
    pub fn new(model: &'a MlpModel, config: &'a DynamicsConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { model, config })
    }

    pub fn predict_next(
        &self,
        state: &VehicleState,
        input: ControlInput,
        map: &ElevationMap,
    ) -> Result<Prediction> {
        let patch = extract_patch(map, state.pose(), PatchSpec::default());
        let mut scratch = Vec::new();
        self.predict_with_patch(state, &patch, input, map, &mut scratch)
            .map(|(p, _)| p)
    }

    /// `predict_next` with the current-pose patch supplied by the caller;
    /// also returns the next-pose patch for reuse on the following step.
    pub fn predict_with_patch(
        &self,
        state: &VehicleState,
        current_patch: &ElevationPatch,
        input: ControlInput,
        map: &ElevationMap,
        scratch: &mut Vec<f64>,
    ) -> Result<(Prediction, ElevationPatch)> {
        let next = ackermann_step(state.pose(), input, self.config.dt, self.config.omega_epsilon);
        let (z, out_of_map) = match map.elevation_at(next.x, next.y) {
            Some(z) => (z, false),
            None => (state.z, true),
        };
        let next_patch = extract_patch(map, next, PatchSpec::default());
        assemble_model_input(current_patch, &next_patch, state.z, scratch)?;
        let out = self.model.forward(scratch, &[state.roll, state.pitch])?;
        if out.len() != 2 {
            return Err(Error::Shape {
                what: "model output",
                expected: 2,
                got: out.len(),
            });
        }
        let clamp = |a: f64| a.clamp(-MAX_PREDICTED_ANGLE, MAX_PREDICTED_ANGLE);
        let predicted = VehicleState {
            x: next.x,
            y: next.y,
            z,
            roll: clamp(out[0]),
            pitch: clamp(out[1]),
            yaw: next.yaw,
            t: state.t + 1,
        };
        Ok((
            Prediction {
                state: predicted,
                out_of_map,
            },
            next_patch,
        ))
    }

    /// Applies `inputs` in sequence; the result starts with `state`.
    pub fn rollout(
        &self,
        state: &VehicleState,
        inputs: &[ControlInput],
        map: &ElevationMap,
    ) -> Result<Rollout> {
        if inputs.is_empty() {
            return Err(invalid("inputs", "rollout needs at least one input"));
        }
        let patch = extract_patch(map, state.pose(), PatchSpec::default());
        let start_flag = map.elevation_at(state.x, state.y).is_none();
        self.rollout_from_patch(state, start_flag, patch, inputs, map)
    }

    pub(crate) fn rollout_from_patch(
        &self,
        state: &VehicleState,
        start_out_of_map: bool,
        mut patch: ElevationPatch,
        inputs: &[ControlInput],
        map: &ElevationMap,
    ) -> Result<Rollout> {
        let mut states = Vec::with_capacity(inputs.len() + 1);
        let mut flags = Vec::with_capacity(inputs.len() + 1);
        states.push(state.clone());
        flags.push(start_out_of_map);
        let mut scratch = Vec::new();
        for &input in inputs {
            let current = states.last().expect("non-empty");
            let (pred, next_patch) =
                self.predict_with_patch(current, &patch, input, map, &mut scratch)?;
            states.push(pred.state);
            flags.push(pred.out_of_map);
            patch = next_patch;
        }
        Ok(Rollout {
            states,
            out_of_map: flags,
        })
    }
}

/// Predicted attitudes are kept inside the valid state range.
const MAX_PREDICTED_ANGLE: f64 = 1.5;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Architecture;
    use proptest::prelude::*;

    fn input(v: f64, omega: f64) -> ControlInput {
        ControlInput { v, omega }
    }

    #[test]
    fn straight_and_arc() {
        let p = ackermann_step(Pose2::default(), input(0.2, 0.0), 1.0, 1e-4);
        assert_eq!(p, Pose2::new(0.2, 0.0, 0.0));

        let p = ackermann_step(Pose2::default(), input(0.2, 0.78), 1.0, 1e-4);
        let r = 0.2 / 0.78;
        assert!((p.x - r * 0.78f64.sin()).abs() < 1e-12);
        assert!((p.y - r * (1.0 - 0.78f64.cos())).abs() < 1e-12);
        assert!((p.yaw - 0.78).abs() < 1e-15);
        assert!((p.x - 0.1803).abs() < 1e-4 && (p.y - 0.0741).abs() < 1e-4);
    }

    #[test]
    fn switch_is_continuous() {
        let eps = 1e-4;
        for yaw in [0.0, 0.7, -2.5, 3.1] {
            for sign in [1.0, -1.0] {
                let pose = Pose2::new(1.0, -2.0, yaw);
                let arc = ackermann_step(pose, input(0.2, sign * eps * (1.0 + 1e-9)), 1.0, eps);
                let straight = ackermann_step(pose, input(0.2, sign * eps), 1.0, eps);
                let gap = ((arc.x - straight.x).powi(2) + (arc.y - straight.y).powi(2)).sqrt();
                assert!(gap < 1e-9, "gap {gap}");
            }
        }
    }

    #[test]
    fn wrap_angle_range() {
        use std::f64::consts::PI;
        assert_eq!(wrap_angle(PI), -PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(wrap_angle(0.5), 0.5);
        assert!((wrap_angle(-PI - 0.1) - (PI - 0.1)).abs() < 1e-12);
    }

    #[test]
    fn zero_model_on_flat_ground() {
        let map = ElevationMap::flat(300, 200, 0.01, 0.0).unwrap();
        let model = MlpModel::zeros(&Architecture::default());
        let cfg = DynamicsConfig::default();
        let dynamics = LearnedDynamics::new(&model, &cfg).unwrap();
        let start = VehicleState::at(1.0, 1.0, 0.0);
        let next = dynamics.predict_next(&start, input(0.2, 0.0), &map).unwrap();
        assert!(!next.out_of_map);
        assert_eq!(next.state, VehicleState { x: 1.2, t: 1, ..start.clone() });

        let roll = dynamics.rollout(&start, &[input(0.2, 0.0); 5], &map).unwrap();
        assert_eq!(roll.len(), 6);
        assert!((roll.last().unwrap().x - 2.0).abs() < 1e-12);

        let still = dynamics.rollout(&start, &[input(0.0, 0.0); 4], &map).unwrap();
        assert!(still.states.iter().all(|s| s.pose() == start.pose()));
    }

    #[test]
    fn leaving_map_holds_height_and_flags() {
        let map = ElevationMap::flat(50, 50, 0.01, 0.2).unwrap();
        let model = MlpModel::zeros(&Architecture::default());
        let cfg = DynamicsConfig::default();
        let dynamics = LearnedDynamics::new(&model, &cfg).unwrap();
        let start = VehicleState {
            z: 0.2f32 as f64,
            ..VehicleState::at(0.2, 0.25, 0.0)
        };
        let r = dynamics.rollout(&start, &[input(0.2, 0.0); 3], &map).unwrap();
        assert_eq!(r.out_of_map, vec![false, false, true, true]);
        assert!(r.states.iter().all(|s| (s.z - 0.2f32 as f64).abs() < 1e-9));
    }

    proptest! {
        #[test]
        fn planar_step_is_se2_equivariant(
            x in -5.0f64..5.0, y in -5.0f64..5.0, yaw in -3.0f64..3.0,
            tx in -3.0f64..3.0, ty in -3.0f64..3.0, rot in -3.0f64..3.0,
            v in -1.0f64..1.0, omega in -1.0f64..1.0,
        ) {
            let u = input(v, omega);
            let moved = |p: Pose2| {
                let (s, c) = rot.sin_cos();
                Pose2::new(c * p.x - s * p.y + tx, s * p.x + c * p.y + ty, wrap_angle(p.yaw + rot))
            };
            let a = moved(ackermann_step(Pose2::new(x, y, yaw), u, 1.0, 1e-4));
            let b = ackermann_step(moved(Pose2::new(x, y, yaw)), u, 1.0, 1e-4);
            prop_assert!((a.x - b.x).abs() < 1e-12 * (1.0 + (v / omega).abs()));
            prop_assert!((a.y - b.y).abs() < 1e-12 * (1.0 + (v / omega).abs()));
            prop_assert!(wrap_angle(a.yaw - b.yaw).abs() < 1e-12);
        }

        #[test]
        fn rollout_composes(
            omegas in proptest::collection::vec(-0.78f64..0.78, 2..7), split in 1usize..6,
        ) {
            let map = crate::terrain::generate_rock_field(&crate::terrain::TerrainGenSpec {
                seed: 11, width: 2.0, length: 1.4, rock_count: 10, ..Default::default()
            }).unwrap();
            let model = MlpModel::new_random(&Architecture::default(), 5);
            let cfg = DynamicsConfig::default();
            let dynamics = LearnedDynamics::new(&model, &cfg).unwrap();
            let inputs: Vec<_> = omegas.iter().map(|&w| input(0.2, w)).collect();
            let split = split.min(inputs.len() - 1);
            let start = VehicleState::at(0.5, 0.7, 0.1);
            let whole = dynamics.rollout(&start, &inputs, &map).unwrap();
            let first = dynamics.rollout(&start, &inputs[..split], &map).unwrap();
            let second = dynamics.rollout(first.last().unwrap(), &inputs[split..], &map).unwrap();
            let glued: Vec<_> = first.states.iter().chain(second.states.iter().skip(1)).cloned().collect();
            prop_assert_eq!(&whole.states, &glued);
            for s in &whole.states {
                prop_assert!(s.x.is_finite() && s.z.is_finite() && s.roll.is_finite() && s.pitch.is_finite());
            }
        }
    }
}
