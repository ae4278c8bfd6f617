//! Experiment driver: tiered terrain generation, data collection, training,
//! benchmark evaluation of navigation methods, and replay exports.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::controller::{actuation_to_input, steering_command, throttle_from_pitch, ActuationCommand, ControllerConfig, PlanTracker};
use crate::dataset::{collect, split, CollectConfig, Dataset};
use crate::dynamics::{ControlInput, DynamicsConfig, LearnedDynamics};
use crate::error::{invalid, Error, Result};
use crate::nn::{train, LossCurve, LossWeights, MlpModel, TrainConfig};
use crate::planner::{cost_goal_estimate, cost_rollover, plan, sample_actions, should_replan, CostWeights, GoalSpec, Plan, PlanError, PlannerConfig};
use crate::sim::{run_episode, EpisodeConfig, EpisodeResult, GeometryPreset, Outcome, Policy, VehicleState};
use crate::terrain::{generate_rock_field, ElevationMap, Pose2, TerrainGenSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierSpec {
    pub name: String,
    pub terrain: TerrainGenSpec,
}

impl TierSpec {
    fn rocks(name: &str, max_height: f64, rock_count: usize) -> Self {
        Self {
            name: name.into(),
            terrain: TerrainGenSpec {
                max_height,
                rock_count,
                rock_radius_mean: 0.3,
                rock_radius_std: 0.08,
                end_clearance: 0.75,
                ..TerrainGenSpec::default()
            },
        }
    }

    /// Easy, medium and difficult courses.
    pub fn default_tiers() -> Vec<Self> {
        vec![
            Self::rocks("easy", 0.25, 8),
            Self::rocks("medium", 0.4, 12),
            Self::rocks("difficult", 0.6, 16),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub geometry: GeometryPreset,
    pub trials: usize,
    pub seed: u64,
    /// Distance of start and goal from the map's x ends.
    pub start_margin: f64,
    pub train_fraction: f64,
    pub output_dir: PathBuf,
    pub tiers: Vec<TierSpec>,
    pub episode: EpisodeConfig,
    pub planner: PlannerConfig,
    pub weights: CostWeights,
    pub controller: ControllerConfig,
    pub dynamics: DynamicsConfig,
    pub collect: CollectConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            geometry: GeometryPreset::V6w,
            trials: 5,
            seed: 2023,
            start_margin: 0.45,
            train_fraction: 0.8,
            output_dir: PathBuf::from("runs"),
            tiers: TierSpec::default_tiers(),
            episode: EpisodeConfig::default(),
            planner: PlannerConfig::default(),
            weights: CostWeights::default(),
            controller: ControllerConfig::default(),
            dynamics: DynamicsConfig::default(),
            collect: CollectConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tiers.is_empty() {
            return Err(invalid("tiers", "need at least one tier"));
        }
        if self.trials == 0 {
            return Err(invalid("trials", "must be >= 1"));
        }
        for t in &self.tiers {
            if t.name.is_empty() || t.name.contains(['_', '/', ' ']) {
                return Err(invalid("tiers", format!("bad tier name {:?}", t.name)));
            }
            t.terrain.validate()?;
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(invalid("train_fraction", "must lie in (0, 1)"));
        }
        if !(self.start_margin >= 0.0) {
            return Err(invalid("start_margin", "must be >= 0"));
        }
        self.planner.validate()?;
        self.weights.validate()?;
        self.controller.validate()?;
        self.dynamics.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Start pose and goal on a map: centered laterally, `start_margin` in
    /// from each x end.
    pub fn start_and_goal(&self, map: &ElevationMap) -> Result<(Pose2, GoalSpec)> {
        let (x0, y0, x1, y1) = map.bounds();
        let y = 0.5 * (y0 + y1);
        let start = Pose2::new(x0 + self.start_margin, y, 0.0);
        let goal = GoalSpec::new(x1 - self.start_margin, y, self.episode.goal_radius)?;
        Ok((start, goal))
    }
}

/// Seed for (tier, trial); shared by every method so runs are paired.
pub fn trial_seed(base: u64, tier: usize, trial: usize) -> u64 {
    base.wrapping_mul(6364136223846793005)
        .wrapping_add((tier as u64) << 32 | trial as u64)
        .rotate_left(17)
        ^ 0x9E37_79B9_7F4A_7C15
}

pub fn map_name(tier: &str, trial: usize) -> String {
    format!("{tier}_{trial}")
}

/// `trials` maps per tier, named `<tier>_<k>`.
pub fn generate_tier_maps(config: &ExperimentConfig) -> Result<Vec<(String, ElevationMap)>> {
    config.validate()?;
    let mut out = Vec::new();
    for (ti, tier) in config.tiers.iter().enumerate() {
        for k in 0..config.trials {
            let spec = TerrainGenSpec {
                seed: trial_seed(config.seed, ti, k),
                ..tier.terrain.clone()
            };
            out.push((map_name(&tier.name, k), generate_rock_field(&spec)?));
        }
    }
    Ok(out)
}

pub fn write_maps(dir: impl AsRef<Path>, maps: &[(String, ElevationMap)]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(&dir)?;
    maps.iter()
        .map(|(name, map)| {
            let path = dir.as_ref().join(format!("{name}.emap"));
            map.save(&path)?;
            Ok(path)
        })
        .collect()
}

/// Every `*.emap` in `dir`, sorted by name.
pub fn load_maps(dir: impl AsRef<Path>) -> Result<Vec<(String, ElevationMap)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "emap"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(invalid("maps", format!("no .emap files in {}", dir.as_ref().display())));
    }
    paths
        .iter()
        .map(|p| {
            let name = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok((name, ElevationMap::load(p)?))
        })
        .collect()
}

/// Maps grouped by the tier prefix of their name (text before the first `_`).
pub fn group_by_tier(maps: Vec<(String, ElevationMap)>) -> BTreeMap<String, Vec<(String, ElevationMap)>> {
    let mut out: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for (name, map) in maps {
        let tier = name.split('_').next().unwrap_or(&name).to_string();
        out.entry(tier).or_default().push((name, map));
    }
    out
}

/// Training outcome with persistence/zero baselines on the validation split.
#[derive(Debug, Clone)]
pub struct TrainingReport {
    pub model: MlpModel,
    pub curve: LossCurve,
    /// Roll and pitch RMSE, radians.
    pub val_rmse: [f64; 2],
    pub persistence_rmse: [f64; 2],
    pub zero_rmse: [f64; 2],
}

/// Splits, trains from a seeded initialization, and scores on the validation
/// part.
pub fn train_on_dataset(dataset: Dataset, config: &ExperimentConfig) -> Result<TrainingReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (tr, va) = split(dataset, config.train_fraction, config.train.seed)?;
    let init = MlpModel::new_random(&Default::default(), config.train.seed).with_input_scale(tr.norm_stats.height_scale);
    let (model, curve) = train(init, &tr, &va, &config.train, &LossWeights::identity())?;
    let eval = if va.is_empty() { &tr } else { &va };
    let mut scratch = Vec::new();
    let val_rmse = eval.attitude_rmse(|f| {
        crate::dataset::assemble_model_input(&f.patch_t, &f.patch_t1, f.state_t.z, &mut scratch)?;
        let out = model.forward(&scratch, &[f.state_t.roll, f.state_t.pitch])?;
        Ok([out[0], out[1]])
    })?;
    let persistence_rmse = eval.attitude_rmse(|f| Ok([f.state_t.roll, f.state_t.pitch]))?;
    let zero_rmse = eval.attitude_rmse(|_| Ok([0.0, 0.0]))?;
    Ok(TrainingReport {
        model,
        curve,
        val_rmse,
        persistence_rmse,
        zero_rmse,
    })
}

/// Seed offset for training maps, kept clear of the benchmark seed range.
pub const TRAINING_SEED_BASE: u64 = 1000;

/// `count` maps drawn from the named tier with seeds disjoint from the benchmark.
pub fn training_maps(config: &ExperimentConfig, tier: &str, count: usize) -> Result<Vec<ElevationMap>> {
    let spec = config
        .tiers
        .iter()
        .find(|t| t.name == tier)
        .ok_or_else(|| invalid("tier", format!("unknown tier {tier:?}")))?;
    (0..count as u64)
        .map(|k| {
            generate_rock_field(&TerrainGenSpec {
                seed: TRAINING_SEED_BASE + k,
                ..spec.terrain.clone()
            })
        })
        .collect()
}

pub fn collect_on_maps(maps: &[ElevationMap], config: &ExperimentConfig) -> Result<Dataset> {
    collect(maps, &config.geometry.geometry(), &config.collect)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Wmvct,
    OpenLoop,
    Greedy,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Wmvct, Method::OpenLoop, Method::Greedy];

    pub fn name(self) -> &'static str {
        match self {
            Method::Wmvct => "wmvct",
            Method::OpenLoop => "open_loop",
            Method::Greedy => "greedy",
        }
    }

    pub fn needs_model(self) -> bool {
        !matches!(self, Method::OpenLoop)
    }

    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        s.split(',').map(|t| t.trim().parse()).collect()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid("methods", format!("unknown method {s:?}")))
    }
}

/// Steer straight at the goal with the pitch-gated throttle.
pub struct OpenLoopPolicy<'a> {
    pub goal: GoalSpec,
    pub controller: &'a ControllerConfig,
}

impl Policy for OpenLoopPolicy<'_> {
    fn act(&mut self, state: &VehicleState, _map: &ElevationMap, _time: f64) -> Result<ControlInput> {
        let cmd = ActuationCommand {
            throttle: throttle_from_pitch(state.pitch, self.controller),
            steering: steering_command(state, (self.goal.x, self.goal.y), self.controller.max_steering)?,
        };
        let d = state.planar_distance(self.goal.x, self.goal.y);
        Ok(actuation_to_input(cmd, d, self.controller))
    }
}

/// One-step lookahead over the sampled actions, scored by goal distance and
/// predicted attitude.
pub struct GreedyPolicy<'a> {
    pub goal: GoalSpec,
    pub dynamics: LearnedDynamics<'a>,
    pub weights: &'a CostWeights,
    pub actions: Vec<ControlInput>,
}

impl Policy for GreedyPolicy<'_> {
    fn act(&mut self, state: &VehicleState, map: &ElevationMap, _time: f64) -> Result<ControlInput> {
        let mut best: Option<(f64, ControlInput)> = None;
        for &u in &self.actions {
            let p = self.dynamics.predict_next(state, u, map)?;
            let s = std::slice::from_ref(&p.state);
            let cost = self.weights.w5 * cost_goal_estimate(&p.state, &self.goal) + self.weights.w1 * cost_rollover(s, self.weights);
            let better = match best {
                None => true,
                Some((c, b)) => cost
                    .total_cmp(&c)
                    .then(u.omega.abs().total_cmp(&b.omega.abs()))
                    .then(u.omega.total_cmp(&b.omega))
                    .is_lt(),
            };
            if better {
                best = Some((cost, u));
            }
        }
        Ok(best.expect("actions are non-empty").1)
    }
}

/// Planner plus tracking controller with time- and deviation-triggered
/// replanning. Every plan is kept for export.
pub struct WmvctPolicy<'a> {
    pub goal: GoalSpec,
    pub dynamics: LearnedDynamics<'a>,
    pub weights: &'a CostWeights,
    pub planner: &'a PlannerConfig,
    pub controller: &'a ControllerConfig,
    tracker: Option<PlanTracker>,
    planned_at: f64,
    pub plans: Vec<Plan>,
}

impl<'a> WmvctPolicy<'a> {
    pub fn new(
        goal: GoalSpec,
        dynamics: LearnedDynamics<'a>,
        weights: &'a CostWeights,
        planner: &'a PlannerConfig,
        controller: &'a ControllerConfig,
    ) -> Self {
        Self {
            goal,
            dynamics,
            weights,
            planner,
            controller,
            tracker: None,
            planned_at: 0.0,
            plans: Vec::new(),
        }
    }
}

impl Policy for WmvctPolicy<'_> {
    fn act(&mut self, state: &VehicleState, map: &ElevationMap, time: f64) -> Result<ControlInput> {
        let stale = match &self.tracker {
            None => true,
            Some(t) => should_replan(state, t.plan(), time - self.planned_at, self.planner),
        };
        if stale {
            let p = match plan(state, map, &self.goal, &self.dynamics, self.weights, self.planner) {
                Ok(p) => p,
                Err(PlanError::Unplannable(p)) => *p,
                Err(PlanError::Other(e)) => return Err(e),
            };
            self.plans.push(p.clone());
            match &mut self.tracker {
                Some(t) => t.replace(p),
                None => self.tracker = Some(PlanTracker::new(p)),
            }
            self.planned_at = time;
        }
        let tracker = self.tracker.as_mut().expect("plan exists");
        let (cmd, k) = tracker.step(state, self.controller)?;
        let wp = &tracker.plan().states[k];
        Ok(actuation_to_input(cmd, state.planar_distance(wp.x, wp.y), self.controller))
    }
}

/// One episode with its plans (only for the planner method).
#[derive(Debug, Clone)]
pub struct TrialRun {
    pub result: EpisodeResult,
    pub plans: Vec<Plan>,
    pub goal: GoalSpec,
}

pub fn run_trial(
    map: &ElevationMap,
    method: Method,
    model: Option<&MlpModel>,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<TrialRun> {
    let geometry = config.geometry.geometry();
    let (start, goal) = config.start_and_goal(map)?;
    let need_model = || model.ok_or_else(|| invalid("model", format!("method {method} needs a model")));
    let (result, plans) = match method {
        Method::OpenLoop => {
            let mut p = OpenLoopPolicy {
                goal,
                controller: &config.controller,
            };
            (run_episode(map, start, &goal, &mut p, &geometry, &config.episode, seed)?, Vec::new())
        }
        Method::Greedy => {
            let mut p = GreedyPolicy {
                goal,
                dynamics: LearnedDynamics::new(need_model()?, &config.dynamics)?,
                weights: &config.weights,
                actions: sample_actions(&config.planner)?,
            };
            (run_episode(map, start, &goal, &mut p, &geometry, &config.episode, seed)?, Vec::new())
        }
        Method::Wmvct => {
            let mut p = WmvctPolicy::new(
                goal,
                LearnedDynamics::new(need_model()?, &config.dynamics)?,
                &config.weights,
                &config.planner,
                &config.controller,
            );
            let r = run_episode(map, start, &goal, &mut p, &geometry, &config.episode, seed)?;
            (r, p.plans)
        }
    };
    Ok(TrialRun { result, plans, goal })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub tier: String,
    pub method: Method,
    pub trial: usize,
    pub map: String,
    pub seed: u64,
    pub outcome: Outcome,
    pub steps: usize,
    pub traversal_time: f64,
    pub mean_abs_roll_deg: f64,
    pub mean_abs_pitch_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub tier: String,
    pub method: Method,
    pub trials: usize,
    pub success_count: usize,
    /// Over successful trials; `None` without successes.
    pub mean_traversal_time: Option<f64>,
    /// Over all trials.
    pub mean_abs_roll_deg: f64,
    pub mean_abs_pitch_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchmarkReport {
    pub rows: Vec<TrialRow>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

const TRIALS_HEADER: &str = "tier,method,trial,map,seed,outcome,steps,traversal_time,mean_abs_roll_deg,mean_abs_pitch_deg";
const SUMMARY_HEADER: &str = "tier,method,trials,success_count,mean_traversal_time,mean_abs_roll_deg,mean_abs_pitch_deg";

impl BenchmarkReport {
    /// Aggregates per (tier, method) in order of first appearance.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut keys: Vec<(String, Method)> = Vec::new();
        for r in &self.rows {
            let k = (r.tier.clone(), r.method);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|(tier, method)| {
                let rows: Vec<&TrialRow> = self.rows.iter().filter(|r| r.tier == tier && r.method == method).collect();
                SummaryRow {
                    trials: rows.len(),
                    success_count: rows.iter().filter(|r| r.outcome.is_success()).count(),
                    mean_traversal_time: mean(rows.iter().filter(|r| r.outcome.is_success()).map(|r| r.traversal_time)),
                    mean_abs_roll_deg: mean(rows.iter().map(|r| r.mean_abs_roll_deg)).unwrap_or(0.0),
                    mean_abs_pitch_deg: mean(rows.iter().map(|r| r.mean_abs_pitch_deg)).unwrap_or(0.0),
                    tier,
                    method,
                }
            })
            .collect()
    }

    pub fn success_total(&self, method: Method) -> usize {
        self.rows.iter().filter(|r| r.method == method && r.outcome.is_success()).count()
    }

    /// Mean |roll| and |pitch| in degrees over every trial of `method`.
    pub fn mean_attitude_deg(&self, method: Method) -> Option<(f64, f64)> {
        let rows = || self.rows.iter().filter(move |r| r.method == method);
        Some((mean(rows().map(|r| r.mean_abs_roll_deg))?, mean(rows().map(|r| r.mean_abs_pitch_deg))?))
    }

    pub fn trials_csv(&self) -> String {
        let mut out = format!("{TRIALS_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.tier, r.method, r.trial, r.map, r.seed, r.outcome, r.steps, r.traversal_time, r.mean_abs_roll_deg, r.mean_abs_pitch_deg
            ));
        }
        out
    }

    pub fn from_trials_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == TRIALS_HEADER => {}
            _ => return Err(invalid("trials", "missing trials CSV header")),
        }
        let bad = |line: usize, reason: String| Error::Format(crate::error::FormatError::MalformedRecord { line: line + 1, reason });
        let mut rows = Vec::new();
        for (i, line) in lines {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 10 {
                return Err(bad(i, format!("expected 10 fields, got {}", f.len())));
            }
            let num = |k: usize| -> Result<f64> { f[k].parse().map_err(|_| bad(i, format!("bad number {:?}", f[k]))) };
            let int = |k: usize| -> Result<u64> { f[k].parse().map_err(|_| bad(i, format!("bad integer {:?}", f[k]))) };
            rows.push(TrialRow {
                tier: f[0].to_string(),
                method: f[1].parse()?,
                trial: int(2)? as usize,
                map: f[3].to_string(),
                seed: int(4)?,
                outcome: f[5].parse()?,
                steps: int(6)? as usize,
                traversal_time: num(7)?,
                mean_abs_roll_deg: num(8)?,
                mean_abs_pitch_deg: num(9)?,
            });
        }
        Ok(Self { rows })
    }

    pub fn summary_csv(&self) -> String {
        let mut out = format!("{SUMMARY_HEADER}\n");
        for s in self.summary() {
            let t = s.mean_traversal_time.map(|t| t.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.tier, s.method, s.trials, s.success_count, t, s.mean_abs_roll_deg, s.mean_abs_pitch_deg
            ));
        }
        out
    }

    /// Human-readable table. Traversal time is over successful trials; roll
    /// and pitch are over all trials.
    pub fn table(&self) -> String {
        let mut out = String::from("# time: mean over successful trials; roll/pitch: mean over all trials\n");
        out.push_str(&format!(
            "{:<10} {:<10} {:>7} {:>8} {:>9} {:>10}\n",
            "tier", "method", "success", "time[s]", "roll[deg]", "pitch[deg]"
        ));
        for s in self.summary() {
            let t = s.mean_traversal_time.map(|t| format!("{t:.1}")).unwrap_or_else(|| "-".into());
            out.push_str(&format!(
                "{:<10} {:<10} {:>4}/{:<2} {:>8} {:>9.2} {:>10.2}\n",
                s.tier, s.method, s.success_count, s.trials, t, s.mean_abs_roll_deg, s.mean_abs_pitch_deg
            ));
        }
        out
    }
}

/// Where `evaluate` writes its artifacts.
#[derive(Debug, Clone)]
pub struct EvaluateOutput {
    pub dir: PathBuf,
}

impl EvaluateOutput {
    pub fn trials_csv(&self) -> PathBuf {
        self.dir.join("trials.csv")
    }
    pub fn summary_csv(&self) -> PathBuf {
        self.dir.join("summary.csv")
    }
    pub fn summary_txt(&self) -> PathBuf {
        self.dir.join("summary.txt")
    }
    pub fn log(&self, map: &str, method: Method) -> PathBuf {
        self.dir.join("logs").join(format!("{map}_{method}.eplog"))
    }
    pub fn plans(&self, map: &str, method: Method) -> PathBuf {
        self.dir.join("plans").join(format!("{map}_{method}.plans.csv"))
    }
}

/// Runs every (tier, method, trial). Trial `k` of a tier uses the tier's
/// `k`-th map (cycling when there are fewer maps than trials). With `out`,
/// also writes the trials/summary files, episode logs and plan dumps.
pub fn evaluate(
    tiers: &BTreeMap<String, Vec<(String, ElevationMap)>>,
    tier_order: &[String],
    model: Option<&MlpModel>,
    methods: &[Method],
    config: &ExperimentConfig,
    out: Option<&EvaluateOutput>,
) -> Result<BenchmarkReport> {
    if methods.is_empty() {
        return Err(invalid("methods", "need at least one method"));
    }
    if model.is_none() {
        if let Some(m) = methods.iter().find(|m| m.needs_model()) {
            return Err(invalid("model", format!("method {m} needs a model file")));
        }
    }
    if let Some(o) = out {
        fs::create_dir_all(o.dir.join("logs"))?;
        fs::create_dir_all(o.dir.join("plans"))?;
    }
    let mut report = BenchmarkReport::default();
    for (ti, tier) in tier_order.iter().enumerate() {
        let maps = tiers
            .get(tier)
            .filter(|m| !m.is_empty())
            .ok_or_else(|| invalid("maps", format!("no maps for tier {tier:?}")))?;
        for &method in methods {
            for trial in 0..config.trials {
                let (name, map) = &maps[trial % maps.len()];
                let seed = trial_seed(config.seed, ti, trial);
                let run = run_trial(map, method, model, config, seed)?;
                let r = &run.result;
                if let Some(o) = out {
                    r.save_log(o.log(name, method))?;
                    if !run.plans.is_empty() {
                        let mut text = String::new();
                        for p in &run.plans {
                            text.push_str(&p.to_csv(&run.goal, &config.weights)?);
                        }
                        fs::write(o.plans(name, method), text)?;
                    }
                }
                report.rows.push(TrialRow {
                    tier: tier.clone(),
                    method,
                    trial,
                    map: name.clone(),
                    seed,
                    outcome: r.outcome,
                    steps: r.inputs.len(),
                    traversal_time: r.traversal_time,
                    mean_abs_roll_deg: r.mean_abs_roll.to_degrees(),
                    mean_abs_pitch_deg: r.mean_abs_pitch.to_degrees(),
                });
            }
        }
    }
    if let Some(o) = out {
        fs::write(o.trials_csv(), report.trials_csv())?;
        fs::write(o.summary_csv(), report.summary_csv())?;
        fs::write(o.summary_txt(), report.table())?;
    }
    Ok(report)
}

/// Files written by [`replay`].
#[derive(Debug, Clone)]
pub struct ReplayFiles {
    pub attitude: PathBuf,
    pub topview: PathBuf,
    pub plans: Option<PathBuf>,
    pub rows: usize,
}

/// Exports plot series from an episode log: time vs roll/pitch in degrees,
/// the driven x/y path, and optionally the planned paths from a plan dump.
pub fn replay(log: impl AsRef<Path>, plans: Option<&Path>, out_dir: impl AsRef<Path>) -> Result<ReplayFiles> {
    let episode = EpisodeResult::load_log(&log)?;
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut att = String::from("time_s,roll_deg,pitch_deg\n");
    let mut top = String::from("x,y\n");
    for s in &episode.trajectory {
        att.push_str(&format!("{},{},{}\n", s.t as f64 * episode.dt, s.roll.to_degrees(), s.pitch.to_degrees()));
        top.push_str(&format!("{},{}\n", s.x, s.y));
    }
    let files = ReplayFiles {
        attitude: dir.join("attitude.csv"),
        topview: dir.join("topview.csv"),
        plans: plans.map(|_| dir.join("plans_topview.csv")),
        rows: episode.trajectory.len(),
    };
    fs::write(&files.attitude, att)?;
    fs::write(&files.topview, top)?;
    if let (Some(src), Some(dst)) = (plans, &files.plans) {
        let text = fs::read_to_string(src)?;
        let mut out = String::from("plan,x,y\n");
        let mut index = 0usize;
        let mut started = false;
        for line in text.lines() {
            if line.starts_with("t,") {
                if started {
                    index += 1;
                }
                started = true;
                continue;
            }
            if line.starts_with('#') || line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() < 3 {
                return Err(invalid("plans", format!("bad plan row {line:?}")));
            }
            out.push_str(&format!("{index},{},{}\n", f[1], f[2]));
        }
        fs::write(dst, out)?;
    }
    Ok(files)
}
