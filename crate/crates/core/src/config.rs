//! Run configuration. Every section has defaults; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Width of every hidden feature (track, detection, GNN and recurrent states).
pub const FEATURE_DIM: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    Dsf,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Past frames fed to the track encoder (H).
    pub history: usize,
    /// Forecast horizon in frames (T).
    pub horizon: usize,
    /// Graph edge distance threshold in metres (C).
    pub edge_radius: f64,
    pub gnn_layers: usize,
    /// Forecast samples per agent (K).
    pub samples: usize,
    pub latent_dim: usize,
    /// Reconstruction variance in the evidence lower bound.
    pub alpha: f64,
    /// Similarity scale of the diversity kernel; estimated from data when absent.
    pub omega: Option<f64>,
    /// Latent-norm radius below which the kernel boosts sample quality.
    pub quality_radius: f64,
    pub sampler: Sampler,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            history: 10,
            horizon: 30,
            edge_radius: 10.0,
            gnn_layers: 2,
            samples: 20,
            latent_dim: 16,
            alpha: 1.0,
            omega: None,
            quality_radius: 2.0,
            sampler: Sampler::Dsf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Consecutive hits needed to confirm a track.
    pub min_hits: usize,
    /// Consecutive misses tolerated before a track dies.
    pub max_age: usize,
    pub accept_threshold: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            min_hits: 3,
            max_age: 2,
            accept_threshold: 0.5,
        }
    }
}

/// Relative frequency of each maneuver chosen at the decision frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManeuverMix {
    pub straight: f64,
    pub left: f64,
    pub right: f64,
    pub stop: f64,
}

impl Default for ManeuverMix {
    fn default() -> Self {
        Self {
            straight: 0.4,
            left: 0.2,
            right: 0.2,
            stop: 0.2,
        }
    }
}

impl ManeuverMix {
    pub fn weights(&self) -> [f64; 4] {
        [self.straight, self.left, self.right, self.stop]
    }
}

/// An explicitly placed agent, alive from frame 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpawn {
    pub x: f64,
    pub z: f64,
    pub heading: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub frames: usize,
    pub frame_rate: f64,
    pub agents_min: usize,
    pub agents_max: usize,
    /// Agents spawn in the square `[-area, area]²` of the ground plane.
    pub area: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    pub maneuvers: ManeuverMix,
    /// Frame at which initial agents pick their maneuver; mid-scene when absent.
    pub decision_frame: Option<usize>,
    /// Yaw rate of a turn, rad/s. A turn ends after a quarter revolution.
    pub turn_rate: f64,
    /// Deceleration of a stop maneuver, m/s².
    pub brake: f64,
    /// Per-frame probability that a new agent enters.
    pub birth_rate: f64,
    /// Per-frame probability that a live agent leaves.
    pub death_rate: f64,
    /// Minimum distance between spawn points.
    pub min_spacing: f64,
    /// Fixed agents; when non-empty no random agents are drawn.
    pub spawn: Vec<AgentSpawn>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            frames: 60,
            frame_rate: 10.0,
            agents_min: 3,
            agents_max: 8,
            area: 30.0,
            speed_min: 3.0,
            speed_max: 10.0,
            maneuvers: ManeuverMix::default(),
            decision_frame: None,
            turn_rate: 0.8,
            brake: 4.0,
            birth_rate: 0.02,
            death_rate: 0.005,
            min_spacing: 8.0,
            spawn: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub center_sigma: f64,
    pub heading_sigma: f64,
    pub miss_rate: f64,
    /// Probability, per ground-truth box, of one extra spurious detection.
    pub false_positive_rate: f64,
    /// Standard deviation of one ground-plane offset shared by every
    /// detection of a frame, as from ego-motion error.
    pub frame_jitter: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            center_sigma: 0.1,
            heading_sigma: 0.02,
            miss_rate: 0.02,
            false_positive_rate: 0.02,
            frame_jitter: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub dsf_epochs: usize,
    /// Use every n-th frame of each scene as a training step.
    pub frame_stride: usize,
    /// Half-open range of frames eligible for training.
    pub frame_window: Option<[usize; 2]>,
    pub affinity_weight: f64,
    pub forecast_weight: f64,
    /// Centre distance within which a detection may be matched to ground truth.
    pub match_gate: f64,
    /// Trajectories used to estimate the kernel scale when it is not set.
    pub warmup_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 20,
            dsf_epochs: 20,
            frame_stride: 1,
            frame_window: None,
            affinity_weight: 1.0,
            forecast_weight: 1.0,
            match_gate: 2.0,
            warmup_samples: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub recall_steps: usize,
    /// Centre distance for pairing a forecast agent with a ground-truth object.
    pub forecast_gate: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.25,
            recall_steps: 40,
            forecast_gate: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub num_scenes: usize,
    /// Directory of scene files; `<out>/data` when absent.
    pub scene_dir: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            num_scenes: 20,
            scene_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub tracker: TrackerConfig,
    pub scene: SceneConfig,
    pub noise: NoiseConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub data: DataConfig,
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(CoreError::Config(msg()))
    }
}

fn unit_rate(name: &str, v: f64) -> Result<()> {
    check((0.0..1.0).contains(&v), || format!("{name} must be in [0, 1), got {v}"))
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.frames > 0, || "scene.frames must be positive".into())?;
        check(self.frame_rate > 0.0, || "scene.frame_rate must be positive".into())?;
        if self.spawn.is_empty() {
            check(self.agents_max > 0, || "scene.agents_max must be positive".into())?;
            check(self.agents_min <= self.agents_max, || {
                "scene.agents_min exceeds scene.agents_max".into()
            })?;
        }
        check(self.area > 0.0, || "scene.area must be positive".into())?;
        check(
            self.speed_min >= 0.0 && self.speed_min <= self.speed_max,
            || "scene speed range is empty or negative".into(),
        )?;
        let w = self.maneuvers.weights();
        check(
            w.iter().all(|v| *v >= 0.0 && v.is_finite()) && w.iter().sum::<f64>() > 0.0,
            || "scene.maneuvers needs non-negative weights with a positive sum".into(),
        )?;
        check(self.turn_rate > 0.0 && self.brake > 0.0, || {
            "scene.turn_rate and scene.brake must be positive".into()
        })?;
        unit_rate("scene.birth_rate", self.birth_rate)?;
        unit_rate("scene.death_rate", self.death_rate)?;
        check(self.min_spacing >= 0.0, || "scene.min_spacing must be non-negative".into())
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        check(
            self.center_sigma >= 0.0 && self.heading_sigma >= 0.0 && self.frame_jitter >= 0.0,
            || "noise sigmas must be non-negative".into(),
        )?;
        unit_rate("noise.miss_rate", self.miss_rate)?;
        unit_rate("noise.false_positive_rate", self.false_positive_rate)
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        check(m.history > 0, || "model.history must be positive".into())?;
        check(m.horizon > 0, || "model.horizon must be positive".into())?;
        check(m.edge_radius > 0.0, || "model.edge_radius must be positive".into())?;
        check(m.samples > 0, || "model.samples must be positive".into())?;
        check(m.latent_dim > 0, || "model.latent_dim must be positive".into())?;
        check(m.alpha > 0.0, || "model.alpha must be positive".into())?;
        check(m.omega.is_none_or(|w| w > 0.0), || "model.omega must be positive".into())?;
        check(m.quality_radius > 0.0, || "model.quality_radius must be positive".into())?;
        let t = &self.tracker;
        check((0.0..=1.0).contains(&t.accept_threshold), || {
            "tracker.accept_threshold must be in [0, 1]".into()
        })?;
        self.scene.validate()?;
        self.noise.validate()?;
        check(self.scene.frames >= m.history + m.horizon, || {
            format!(
                "scene.frames ({}) must be at least model.history + model.horizon ({})",
                self.scene.frames,
                m.history + m.horizon
            )
        })?;
        let tr = &self.train;
        check(tr.learning_rate > 0.0, || "train.learning_rate must be positive".into())?;
        check(tr.frame_stride > 0, || "train.frame_stride must be positive".into())?;
        check(tr.affinity_weight >= 0.0 && tr.forecast_weight >= 0.0, || {
            "train loss weights must be non-negative".into()
        })?;
        check(tr.match_gate > 0.0, || "train.match_gate must be positive".into())?;
        check(self.eval.recall_steps >= 2, || "eval.recall_steps must be at least 2".into())?;
        check(self.eval.iou_threshold > 0.0 && self.eval.iou_threshold <= 1.0, || {
            "eval.iou_threshold must be in (0, 1]".into()
        })?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CoreError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Independent seed for stream `stream`, item `index` of a run seed.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    // splitmix64 finalizer over a mixed key.
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
