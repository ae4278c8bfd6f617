//! Supervised frames collected by driving the oracle, plus normalization,
//! splitting and the VDST file format.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::dynamics::{ackermann_step, ControlInput, DEFAULT_OMEGA_EPSILON};
use crate::error::{invalid, Error, FormatError, Result};
use crate::nn::SampleSource;
use crate::sim::{settle_pose, step_oracle, GeometryPreset, SlipNoise, VehicleGeometry, VehicleState};
use crate::terrain::{extract_patch, ElevationMap, ElevationPatch, PatchSpec, Pose2, PATCH_CELLS, PATCH_COLS, PATCH_ROWS};

const DATASET_MAGIC: &str = "VDST v1";
const STATE_FLOATS: usize = 12;
/// Values fed to the network head: both patches.
pub const HEAD_INPUT_LEN: usize = 2 * PATCH_CELLS;

/// One ⟨x_t, x_{t+1}, m_t, u_t⟩ tuple. `patch_t1` is anchored at the nominal
/// kinematic prediction from `state_t` and `input_t`, which is what a planner
/// has at hand.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingFrame {
    pub state_t: VehicleState,
    pub state_t1: VehicleState,
    pub patch_t: ElevationPatch,
    pub patch_t1: ElevationPatch,
    pub input_t: ControlInput,
}

/// How heights are referenced before entering the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeightOffsetMode {
    /// Heights minus the vehicle's current z.
    #[default]
    VehicleRelative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub height_offset_mode: HeightOffsetMode,
    /// Reciprocal RMS of the relative heights; becomes the model input scale.
    pub height_scale: f64,
}

impl Default for NormStats {
    fn default() -> Self {
        Self {
            height_offset_mode: HeightOffsetMode::VehicleRelative,
            height_scale: 1.0,
        }
    }
}

impl NormStats {
    pub fn from_frames(frames: &[TrainingFrame]) -> Self {
        let mut sum = 0.0;
        let mut count = 0usize;
        for f in frames {
            for c in f.patch_t.cells.iter().chain(&f.patch_t1.cells) {
                let r = *c as f64 - f.state_t.z;
                sum += r * r;
                count += 1;
            }
        }
        let rms = if count > 0 { (sum / count as f64).sqrt() } else { 0.0 };
        Self {
            height_offset_mode: HeightOffsetMode::VehicleRelative,
            height_scale: if rms > 1e-9 { 1.0 / rms } else { 1.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceMeta {
    pub seed: u64,
    /// Preset name, or "custom".
    pub geometry: String,
    pub dt: f64,
    pub map_count: usize,
}

impl Default for SourceMeta {
    fn default() -> Self {
        Self {
            seed: 0,
            geometry: "custom".into(),
            dt: 1.0,
            map_count: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub frames: Vec<TrainingFrame>,
    pub norm_stats: NormStats,
    pub source_meta: SourceMeta,
}

/// Random smooth steering at constant speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriverPolicy {
    pub v: f64,
    /// Standard deviation of the per-step change in omega.
    pub omega_step_std: f64,
    pub max_omega: f64,
}

impl Default for DriverPolicy {
    fn default() -> Self {
        Self {
            v: 0.2,
            omega_step_std: 0.2,
            max_omega: 0.78,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectConfig {
    pub n_frames: usize,
    pub dt: f64,
    pub seed: u64,
    pub driver: DriverPolicy,
    pub slip_noise_std: f64,
    pub max_episode_steps: usize,
    /// Consecutive blocked steps that end an episode; the blocked frames are
    /// kept.
    pub immobilized_after: usize,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            n_frames: 20_000,
            dt: 1.0,
            seed: 1,
            driver: DriverPolicy::default(),
            slip_noise_std: 0.05,
            max_episode_steps: 40,
            immobilized_after: 1,
        }
    }
}

impl CollectConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 {
            return Err(invalid("n_frames", "must be > 0"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt", "must be > 0"));
        }
        if self.max_episode_steps == 0 {
            return Err(invalid("max_episode_steps", "must be > 0"));
        }
        ControlInput::new(self.driver.v, self.driver.max_omega)?;
        if !(self.driver.omega_step_std >= 0.0) {
            return Err(invalid("omega_step_std", "must be >= 0"));
        }
        Ok(())
    }
}

fn preset_name(geometry: &VehicleGeometry) -> String {
    [GeometryPreset::V6w, GeometryPreset::V4w]
        .into_iter()
        .find(|p| p.geometry() == *geometry)
        .map(|p| p.name().to_string())
        .unwrap_or_else(|| "custom".into())
}

const START_ATTEMPTS: usize = 200;

fn random_start(
    map: &ElevationMap,
    geometry: &VehicleGeometry,
    rng: &mut ChaCha8Rng,
) -> Option<VehicleState> {
    let (x0, y0, x1, y1) = map.bounds();
    for _ in 0..START_ATTEMPTS {
        let pose = Pose2::new(
            rng.gen_range(x0..=x1),
            rng.gen_range(y0..=y1),
            rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
        );
        let Ok(att) = settle_pose(map, pose, geometry) else {
            continue;
        };
        if att.roll.abs() < geometry.rollover_limit && att.pitch.abs() < geometry.rollover_limit {
            return Some(VehicleState {
                x: pose.x,
                y: pose.y,
                z: att.z,
                roll: att.roll,
                pitch: att.pitch,
                yaw: pose.yaw,
                t: 0,
            });
        }
    }
    None
}

fn quantize_patch(mut patch: ElevationPatch) -> ElevationPatch {
    let q = |v: f64| v as f32 as f64;
    patch.anchor = Pose2::new(q(patch.anchor.x), q(patch.anchor.y), q(patch.anchor.yaw));
    patch
}

/// Drives randomized-start episodes until `n_frames` frames exist. Values are
/// rounded to f32 precision so that a saved dataset reloads bit-exactly.
pub fn collect(maps: &[ElevationMap], geometry: &VehicleGeometry, config: &CollectConfig) -> Result<Dataset> {
    config.validate()?;
    geometry.validate()?;
    if maps.is_empty() {
        return Err(invalid("maps", "need at least one map"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut usable = vec![true; maps.len()];
    let mut frames = Vec::with_capacity(config.n_frames);
    let mut episode = 0usize;
    let spec = PatchSpec::default();
    let driver = &config.driver;

    while frames.len() < config.n_frames {
        let map_index = episode % maps.len();
        episode += 1;
        if !usable[map_index] {
            if !usable.iter().any(|&u| u) {
                return Err(Error::Collection("no map admits a valid start pose".into()));
            }
            continue;
        }
        let map = &maps[map_index];
        let Some(mut state) = random_start(map, geometry, &mut rng) else {
            usable[map_index] = false;
            continue;
        };
        let mut slip = SlipNoise::new(config.slip_noise_std, rng.gen());
        let mut omega: f64 = rng.gen_range(-driver.max_omega..=driver.max_omega);
        let mut blocked_run = 0;
        for _ in 0..config.max_episode_steps {
            let step: f64 = rng.sample(StandardNormal);
            omega = (omega + driver.omega_step_std * step).clamp(-driver.max_omega, driver.max_omega);
            let input = ControlInput {
                v: driver.v as f32 as f64,
                omega: omega as f32 as f64,
            };
            let state_q = state.quantized();
            let out = match step_oracle(&state_q, input, map, geometry, config.dt, Some(&mut slip)) {
                Ok(out) => out,
                Err(Error::OutOfBounds { .. }) => break,
                Err(e) => return Err(e),
            };
            let predicted = ackermann_step(state_q.pose(), input, config.dt, DEFAULT_OMEGA_EPSILON);
            frames.push(TrainingFrame {
                patch_t: quantize_patch(extract_patch(map, state_q.pose(), spec)),
                patch_t1: quantize_patch(extract_patch(map, predicted, spec)),
                state_t: state_q,
                state_t1: out.state.quantized(),
                input_t: input,
            });
            if frames.len() == config.n_frames || out.rolled_over {
                break;
            }
            blocked_run = if out.blocked { blocked_run + 1 } else { 0 };
            if blocked_run >= config.immobilized_after {
                break;
            }
            state = out.state;
        }
    }
    let norm_stats = NormStats::from_frames(&frames);
    Ok(Dataset {
        frames,
        norm_stats,
        source_meta: SourceMeta {
            seed: config.seed,
            geometry: preset_name(geometry),
            dt: config.dt,
            map_count: maps.len(),
        },
    })
}

/// Writes the 8000 head inputs: both patches, shifted by `-z`.
pub fn assemble_model_input(
    patch_t: &ElevationPatch,
    patch_t1: &ElevationPatch,
    z: f64,
    out: &mut Vec<f64>,
) -> Result<()> {
    out.clear();
    out.resize(HEAD_INPUT_LEN, 0.0);
    write_head_input(patch_t, patch_t1, z, out)
}

fn write_head_input(patch_t: &ElevationPatch, patch_t1: &ElevationPatch, z: f64, out: &mut [f64]) -> Result<()> {
    for p in [patch_t, patch_t1] {
        if p.cells.len() != PATCH_CELLS {
            return Err(Error::Shape {
                what: "patch cells",
                expected: PATCH_CELLS,
                got: p.cells.len(),
            });
        }
    }
    if out.len() != HEAD_INPUT_LEN {
        return Err(Error::Shape {
            what: "head input",
            expected: HEAD_INPUT_LEN,
            got: out.len(),
        });
    }
    let (a, b) = out.split_at_mut(PATCH_CELLS);
    for (o, c) in a.iter_mut().zip(&patch_t.cells) {
        *o = *c as f64 - z;
    }
    for (o, c) in b.iter_mut().zip(&patch_t1.cells) {
        *o = *c as f64 - z;
    }
    Ok(())
}

/// Network input for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedFrame {
    pub head_input: Vec<f64>,
    /// Current roll and pitch.
    pub extra: [f64; 2],
    /// Next roll and pitch.
    pub target: [f64; 2],
}

pub fn normalize_frame(frame: &TrainingFrame, norm_stats: &NormStats) -> Result<NormalizedFrame> {
    let HeightOffsetMode::VehicleRelative = norm_stats.height_offset_mode;
    let mut head_input = Vec::new();
    assemble_model_input(&frame.patch_t, &frame.patch_t1, frame.state_t.z, &mut head_input)?;
    Ok(NormalizedFrame {
        head_input,
        extra: [frame.state_t.roll, frame.state_t.pitch],
        target: [frame.state_t1.roll, frame.state_t1.pitch],
    })
}

impl SampleSource for Dataset {
    fn len(&self) -> usize {
        self.frames.len()
    }

    fn fill(&self, index: usize, head: &mut [f64], extra: &mut [f64], target: &mut [f64]) -> Result<()> {
        let f = &self.frames[index];
        write_head_input(&f.patch_t, &f.patch_t1, f.state_t.z, head)?;
        extra.copy_from_slice(&[f.state_t.roll, f.state_t.pitch]);
        target.copy_from_slice(&[f.state_t1.roll, f.state_t1.pitch]);
        Ok(())
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Root-mean-square error of a per-frame (roll, pitch) predictor.
    pub fn attitude_rmse(&self, mut predict: impl FnMut(&TrainingFrame) -> Result<[f64; 2]>) -> Result<[f64; 2]> {
        if self.frames.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut sq = [0.0; 2];
        for f in &self.frames {
            let p = predict(f)?;
            sq[0] += (p[0] - f.state_t1.roll).powi(2);
            sq[1] += (p[1] - f.state_t1.pitch).powi(2);
        }
        let n = self.frames.len() as f64;
        Ok([(sq[0] / n).sqrt(), (sq[1] / n).sqrt()])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!(
            "{DATASET_MAGIC}\n{} patch_cells={} height_scale={} seed={} geometry={} dt={} maps={}\n",
            self.frames.len(),
            HEAD_INPUT_LEN,
            self.norm_stats.height_scale,
            self.source_meta.seed,
            self.source_meta.geometry,
            self.source_meta.dt,
            self.source_meta.map_count,
        )
        .into_bytes();
        out.reserve(self.frames.len() * FRAME_BYTES);
        for f in &self.frames {
            push_state(&mut out, &f.state_t, &f.patch_t);
            push_state(&mut out, &f.state_t1, &f.patch_t1);
            codec::push_f32(&mut out, f.input_t.v as f32);
            codec::push_f32(&mut out, f.input_t.omega as f32);
            for c in f.patch_t.cells.iter().chain(&f.patch_t1.cells) {
                codec::push_f32(&mut out, *c);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let rest = codec::read_magic(bytes, "VDST", DATASET_MAGIC)?;
        let (header, payload) = codec::take_line(rest)?;
        let mut tokens = header.split(' ');
        let n: usize = codec::parse_field(tokens.next(), "n_frames")?;
        let cells: usize = codec::parse_keyed(tokens.next(), "patch_cells")?;
        if cells != HEAD_INPUT_LEN {
            return Err(FormatError::SizeMismatch(format!(
                "patch_cells={cells}, this reader expects {HEAD_INPUT_LEN}"
            ))
            .into());
        }
        // Optional provenance fields.
        let mut norm_stats = NormStats::default();
        let mut meta = SourceMeta::default();
        for token in tokens {
            let (key, value) = token
                .split_once('=')
                .ok_or_else(|| FormatError::MalformedHeader(format!("bad token {token:?}")))?;
            let tok = Some(value);
            match key {
                "height_scale" => norm_stats.height_scale = codec::parse_field(tok, key)?,
                "seed" => meta.seed = codec::parse_field(tok, key)?,
                "geometry" => meta.geometry = value.to_string(),
                "dt" => meta.dt = codec::parse_field(tok, key)?,
                "maps" => meta.map_count = codec::parse_field(tok, key)?,
                _ => return Err(FormatError::MalformedHeader(format!("unknown key {key:?}")).into()),
            }
        }
        codec::ensure_len(payload, n * FRAME_BYTES)?;
        let mut frames = Vec::with_capacity(n);
        for k in 0..n {
            let base = k * FRAME_FLOATS;
            let at = |i: usize| codec::f32_at(payload, base + i);
            let (state_t, anchor_t, oob_t) = read_state(&at, 0);
            let (state_t1, anchor_t1, oob_t1) = read_state(&at, STATE_FLOATS);
            let input_t = ControlInput {
                v: at(2 * STATE_FLOATS) as f64,
                omega: at(2 * STATE_FLOATS + 1) as f64,
            };
            let cell0 = 2 * STATE_FLOATS + 2;
            let patch = |offset: usize, anchor, oob| ElevationPatch {
                rows: PATCH_ROWS,
                cols: PATCH_COLS,
                cells: (0..PATCH_CELLS).map(|i| at(cell0 + offset + i)).collect(),
                anchor,
                out_of_bounds_count: oob,
            };
            frames.push(TrainingFrame {
                patch_t: patch(0, anchor_t, oob_t),
                patch_t1: patch(PATCH_CELLS, anchor_t1, oob_t1),
                state_t,
                state_t1,
                input_t,
            });
        }
        Ok(Self {
            frames,
            norm_stats,
            source_meta: meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

const FRAME_FLOATS: usize = 2 * STATE_FLOATS + 2 + HEAD_INPUT_LEN;
const FRAME_BYTES: usize = 4 * FRAME_FLOATS;

// State block: x, y, z, roll, pitch, yaw, t, then the patch anchor (x, y,
// yaw), its out-of-bounds count, and one reserved zero.
fn push_state(out: &mut Vec<u8>, s: &VehicleState, patch: &ElevationPatch) {
    let a = patch.anchor;
    for v in [s.x, s.y, s.z, s.roll, s.pitch, s.yaw, s.t as f64, a.x, a.y, a.yaw] {
        codec::push_f32(out, v as f32);
    }
    codec::push_f32(out, patch.out_of_bounds_count as f32);
    codec::push_f32(out, 0.0);
}

fn read_state(at: &impl Fn(usize) -> f32, o: usize) -> (VehicleState, Pose2, usize) {
    let g = |i: usize| at(o + i) as f64;
    (
        VehicleState {
            x: g(0),
            y: g(1),
            z: g(2),
            roll: g(3),
            pitch: g(4),
            yaw: g(5),
            t: at(o + 6) as usize,
        },
        Pose2::new(g(7), g(8), g(9)),
        at(o + 10) as usize,
    )
}

/// Seeded disjoint split. Normalization statistics come from the training
/// part and are shared with the validation part.
pub fn split(dataset: Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(invalid("train_fraction", format!("must lie in (0, 1), got {train_fraction}")));
    }
    let n = dataset.frames.len();
    let n_train = (train_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_train = vec![false; n];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let mut slots: Vec<Option<TrainingFrame>> = dataset.frames.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<TrainingFrame> {
        let mut v: Vec<usize> = idx.to_vec();
        v.sort_unstable();
        v.into_iter().map(|i| slots[i].take().expect("each index once")).collect()
    };
    let train_frames = take(&order[..n_train]);
    let val_frames = take(&order[n_train..]);
    let norm_stats = NormStats::from_frames(&train_frames);
    Ok((
        Dataset {
            frames: train_frames,
            norm_stats,
            source_meta: dataset.source_meta.clone(),
        },
        Dataset {
            frames: val_frames,
            norm_stats,
            source_meta: dataset.source_meta,
        },
    ))
}
