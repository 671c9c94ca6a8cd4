//! Synthetic driving scenes: ground truth, noisy detections and the JSONL
//! scene format.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::FRAC_PI_2;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use trackcast_eval::{wrap_angle, OrientedBox3D};

use crate::config::{derive_seed, NoiseConfig, SceneConfig};
use crate::error::{CoreError, Result};

pub const SCENE_FORMAT_VERSION: u32 = 1;

/// A ground-truth box with its identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub id: u64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

/// A detector output: a box with a confidence and no identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
    pub conf: f64,
}

/// The seven box parameters shared by states and detections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

impl BoxState {
    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn ground(&self) -> [f64; 2] {
        [self.x, self.z]
    }

    pub fn oriented(&self) -> OrientedBox3D {
        OrientedBox3D {
            x: self.x,
            y: self.y,
            z: self.z,
            l: self.l,
            w: self.w,
            h: self.h,
            theta: self.theta,
        }
    }

    fn is_valid(&self) -> bool {
        self.oriented().is_valid()
    }
}

impl ObjectState {
    pub fn state(&self) -> BoxState {
        BoxState {
            x: self.x,
            y: self.y,
            z: self.z,
            l: self.l,
            w: self.w,
            h: self.h,
            theta: self.theta,
        }
    }
}

impl Detection {
    pub fn state(&self) -> BoxState {
        BoxState {
            x: self.x,
            y: self.y,
            z: self.z,
            l: self.l,
            w: self.w,
            h: self.h,
            theta: self.theta,
        }
    }

    pub fn from_state(s: BoxState, conf: f64) -> Self {
        Detection {
            x: s.x,
            y: s.y,
            z: s.z,
            l: s.l,
            w: s.w,
            h: s.h,
            theta: s.theta,
            conf,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub gt: Vec<ObjectState>,
    #[serde(default)]
    pub det: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub frame_rate: f64,
    pub seed: u64,
    /// Generator settings, kept verbatim for provenance.
    pub config: serde_json::Value,
    pub frames: Vec<Frame>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Maneuver {
    Straight,
    Left,
    Right,
    Stop,
}

struct Agent {
    id: u64,
    x: f64,
    y: f64,
    z: f64,
    size: [f64; 3],
    heading: f64,
    speed: f64,
    decision_frame: usize,
    maneuver: Maneuver,
    turned: f64,
}

impl Agent {
    fn state(&self) -> ObjectState {
        ObjectState {
            id: self.id,
            x: self.x,
            y: self.y,
            z: self.z,
            l: self.size[0],
            w: self.size[1],
            h: self.size[2],
            theta: wrap_angle(self.heading),
        }
    }

    fn advance(&mut self, cfg: &SceneConfig, dt: f64) {
        let yaw = match self.maneuver {
            Maneuver::Left => 1.0,
            Maneuver::Right => -1.0,
            _ => 0.0,
        };
        if yaw != 0.0 && self.turned < FRAC_PI_2 {
            let step = (cfg.turn_rate * dt).min(FRAC_PI_2 - self.turned);
            self.turned += step;
            self.heading += yaw * step;
        }
        if self.maneuver == Maneuver::Stop {
            self.speed = (self.speed - cfg.brake * dt).max(0.0);
        }
        self.x += self.speed * self.heading.cos() * dt;
        self.z += self.speed * self.heading.sin() * dt;
    }
}

fn random_size(rng: &mut impl Rng) -> [f64; 3] {
    [
        rng.random_range(3.8..4.8),
        rng.random_range(1.6..2.0),
        rng.random_range(1.4..1.7),
    ]
}

fn spawn_point(cfg: &SceneConfig, alive: &[Agent], rng: &mut impl Rng) -> Option<(f64, f64)> {
    for _ in 0..100 {
        let (x, z) = (rng.random_range(-cfg.area..cfg.area), rng.random_range(-cfg.area..cfg.area));
        if alive.iter().all(|a| (a.x - x).hypot(a.z - z) >= cfg.min_spacing) {
            return Some((x, z));
        }
    }
    None
}

fn speed(cfg: &SceneConfig, rng: &mut impl Rng) -> f64 {
    if cfg.speed_max > cfg.speed_min {
        rng.random_range(cfg.speed_min..cfg.speed_max)
    } else {
        cfg.speed_min
    }
}

/// Simulates ground-truth motion. Detections are left empty; see
/// [`corrupt_to_detections`].
///
/// Agents drive straight until their decision frame, then keep going,
/// turn left or right by a quarter revolution, or brake to a stop. Initial
/// agents decide at the configured decision frame; agents born later decide
/// a random number of frames after birth.
pub fn generate_scene(cfg: &SceneConfig, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = 1.0 / cfg.frame_rate;
    let pick = WeightedIndex::new(cfg.maneuvers.weights()).map_err(|e| CoreError::Config(e.to_string()))?;
    let maneuvers = [Maneuver::Straight, Maneuver::Left, Maneuver::Right, Maneuver::Stop];
    let decision = cfg.decision_frame.unwrap_or(cfg.frames / 2);

    let mut next_id = 0u64;
    let mut alive: Vec<Agent> = Vec::new();
    let make = |id: u64, x: f64, z: f64, heading: f64, speed: f64, decision_frame: usize, rng: &mut ChaCha8Rng| {
        let size = random_size(rng);
        Agent {
            id,
            x,
            y: size[2] / 2.0,
            z,
            size,
            heading,
            speed,
            decision_frame,
            maneuver: Maneuver::Straight,
            turned: 0.0,
        }
    };

    if cfg.spawn.is_empty() {
        let count = rng.random_range(cfg.agents_min..=cfg.agents_max);
        for _ in 0..count {
            if let Some((x, z)) = spawn_point(cfg, &alive, &mut rng) {
                let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                let v = speed(cfg, &mut rng);
                alive.push(make(next_id, x, z, heading, v, decision, &mut rng));
                next_id += 1;
            }
        }
    } else {
        for s in &cfg.spawn {
            alive.push(make(next_id, s.x, s.z, s.heading, s.speed, decision, &mut rng));
            next_id += 1;
        }
    }

    let mut frames = Vec::with_capacity(cfg.frames);
    for f in 0..cfg.frames {
        if f > 0 {
            alive.retain(|_| rng.random::<f64>() >= cfg.death_rate);
            if alive.len() < cfg.agents_max.max(cfg.spawn.len()) && rng.random::<f64>() < cfg.birth_rate {
                if let Some((x, z)) = spawn_point(cfg, &alive, &mut rng) {
                    let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                    let v = speed(cfg, &mut rng);
                    let d = f + rng.random_range(5..20);
                    alive.push(make(next_id, x, z, heading, v, d, &mut rng));
                    next_id += 1;
                }
            }
        }
        for a in alive.iter_mut() {
            if a.decision_frame == f {
                a.maneuver = maneuvers[pick.sample(&mut rng)];
            }
        }
        frames.push(Frame {
            gt: alive.iter().map(Agent::state).collect(),
            det: Vec::new(),
        });
        for a in alive.iter_mut() {
            a.advance(cfg, dt);
        }
    }

    Ok(Scene {
        frame_rate: cfg.frame_rate,
        seed,
        config: serde_json::json!({ "scene": cfg }),
        frames,
    })
}

/// Fills every frame's detections from its ground truth: Gaussian centre and
/// heading noise, random misses and uniformly placed low-confidence false
/// positives. Confidence is `exp(-|centre noise| / σ)` (1 without noise).
/// With frame jitter, all true detections of a frame also share one random
/// ground-plane offset.
pub fn corrupt_to_detections(scene: &mut Scene, noise: &NoiseConfig, area: f64, seed: u64) -> Result<()> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    for frame in scene.frames.iter_mut() {
        let shift = if noise.frame_jitter > 0.0 {
            [noise.frame_jitter * unit.sample(&mut rng), noise.frame_jitter * unit.sample(&mut rng)]
        } else {
            [0.0, 0.0]
        };
        let mut det = Vec::with_capacity(frame.gt.len());
        for g in &frame.gt {
            if rng.random::<f64>() < noise.miss_rate {
                continue;
            }
            let n = [
                noise.center_sigma * unit.sample(&mut rng),
                noise.center_sigma * unit.sample(&mut rng),
                noise.center_sigma * unit.sample(&mut rng),
            ];
            let dtheta = noise.heading_sigma * unit.sample(&mut rng);
            let conf = if noise.center_sigma > 0.0 {
                let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                (-norm / noise.center_sigma).exp().clamp(0.0, 1.0)
            } else {
                1.0
            };
            let mut s = g.state();
            s.x += n[0] + shift[0];
            s.y += n[1];
            s.z += n[2] + shift[1];
            s.theta = wrap_angle(s.theta + dtheta);
            det.push(Detection::from_state(s, conf));
        }
        for _ in 0..frame.gt.len() {
            if rng.random::<f64>() < noise.false_positive_rate {
                let size = random_size(&mut rng);
                det.push(Detection {
                    x: rng.random_range(-area..area),
                    y: size[2] / 2.0,
                    z: rng.random_range(-area..area),
                    l: size[0],
                    w: size[1],
                    h: size[2],
                    theta: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                    conf: rng.random_range(0.0..0.4),
                });
            }
        }
        det.shuffle(&mut rng);
        frame.det = det;
    }
    if let serde_json::Value::Object(map) = &mut scene.config {
        map.insert("noise".into(), serde_json::to_value(noise).expect("noise config serializes"));
    }
    Ok(())
}

/// Ground truth plus detections, with independent seeds for both stages.
pub fn synthesize(scene_cfg: &SceneConfig, noise: &NoiseConfig, seed: u64) -> Result<Scene> {
    let mut scene = generate_scene(scene_cfg, derive_seed(seed, 1, 0))?;
    corrupt_to_detections(&mut scene, noise, scene_cfg.area, derive_seed(seed, 2, 0))?;
    scene.seed = seed;
    Ok(scene)
}

#[derive(Serialize, Deserialize)]
struct MetaLine {
    version: u32,
    frame_rate: f64,
    seed: u64,
    #[serde(default)]
    config: serde_json::Value,
}

#[derive(Serialize)]
struct FrameLineOut<'a> {
    frame: usize,
    gt: &'a [ObjectState],
    det: &'a [Detection],
}

#[derive(Deserialize)]
struct FrameLineIn {
    frame: usize,
    gt: Vec<ObjectState>,
    #[serde(default)]
    det: Vec<Detection>,
}

impl Scene {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    /// Checks identity uniqueness and contiguity, box validity and
    /// confidence range.
    pub fn validate(&self) -> Result<()> {
        let mut finished: HashSet<u64> = HashSet::new();
        let mut previous: HashSet<u64> = HashSet::new();
        for (f, frame) in self.frames.iter().enumerate() {
            let mut current = HashSet::new();
            for g in &frame.gt {
                if !g.state().is_valid() {
                    return Err(CoreError::Data(format!("frame {f}: invalid box for id {}", g.id)));
                }
                if !current.insert(g.id) {
                    return Err(CoreError::Data(format!("frame {f}: duplicate id {}", g.id)));
                }
                if finished.contains(&g.id) {
                    return Err(CoreError::Data(format!("frame {f}: id {} reappears", g.id)));
                }
            }
            for d in &frame.det {
                if !d.state().is_valid() || !(0.0..=1.0).contains(&d.conf) {
                    return Err(CoreError::Data(format!("frame {f}: invalid detection")));
                }
            }
            finished.extend(previous.difference(&current));
            previous = current;
        }
        Ok(())
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        let meta = MetaLine {
            version: SCENE_FORMAT_VERSION,
            frame_rate: self.frame_rate,
            seed: self.seed,
            config: self.config.clone(),
        };
        serde_json::to_writer(&mut out, &meta)?;
        out.write_all(b"\n")?;
        for (i, f) in self.frames.iter().enumerate() {
            serde_json::to_writer(
                &mut out,
                &FrameLineOut {
                    frame: i,
                    gt: &f.gt,
                    det: &f.det,
                },
            )?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    /// Parses a scene file. Errors carry the 1-based line number.
    pub fn read_jsonl(input: impl BufRead) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let parse_err = |line: usize, message: String| CoreError::Parse { line, message };
        let (_, first) = lines.next().ok_or_else(|| parse_err(1, "empty scene file".into()))?;
        let first = first.map_err(|e| parse_err(1, e.to_string()))?;
        let meta: MetaLine = serde_json::from_str(&first).map_err(|e| parse_err(1, e.to_string()))?;
        if meta.version != SCENE_FORMAT_VERSION {
            return Err(parse_err(1, format!("unsupported scene version {}", meta.version)));
        }
        if !(meta.frame_rate > 0.0) {
            return Err(parse_err(1, "frame_rate must be positive".into()));
        }
        let mut frames = Vec::new();
        for (i, line) in lines {
            let line_no = i + 1;
            let line = line.map_err(|e| parse_err(line_no, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FrameLineIn = serde_json::from_str(&line).map_err(|e| parse_err(line_no, e.to_string()))?;
            if rec.frame != frames.len() {
                return Err(parse_err(
                    line_no,
                    format!("expected frame {}, found {}", frames.len(), rec.frame),
                ));
            }
            frames.push(Frame {
                gt: rec.gt,
                det: rec.det,
            });
        }
        let scene = Scene {
            frame_rate: meta.frame_rate,
            seed: meta.seed,
            config: meta.config,
            frames,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        Self::read_jsonl(text.as_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_jsonl(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| CoreError::io(path, e))?;
        Self::read_jsonl(std::io::BufReader::new(file))
    }

    /// Per-id ground-truth tracks: first frame and consecutive states.
    pub fn tracks(&self) -> BTreeMap<u64, GtTrack> {
        let mut out: BTreeMap<u64, GtTrack> = BTreeMap::new();
        for (f, frame) in self.frames.iter().enumerate() {
            for g in &frame.gt {
                out.entry(g.id)
                    .or_insert_with(|| GtTrack {
                        start: f,
                        states: Vec::new(),
                    })
                    .states
                    .push(g.state());
            }
        }
        out
    }
}

/// One identity's ground truth over its lifetime.
#[derive(Debug, Clone, PartialEq)]
pub struct GtTrack {
    pub start: usize,
    pub states: Vec<BoxState>,
}

impl GtTrack {
    pub fn end(&self) -> usize {
        self.start + self.states.len()
    }

    pub fn at(&self, frame: usize) -> Option<&BoxState> {
        frame.checked_sub(self.start).and_then(|i| self.states.get(i))
    }

    /// Up to `h` states ending at frame `last` (inclusive), oldest first.
    pub fn history(&self, last: usize, h: usize) -> Option<Vec<BoxState>> {
        if last < self.start || last >= self.end() {
            return None;
        }
        let from = (last + 1).saturating_sub(h).max(self.start);
        Some(self.states[from - self.start..=last - self.start].to_vec())
    }

    /// Ground-plane positions for frames `first .. first + t`, if all exist.
    pub fn future(&self, first: usize, t: usize) -> Option<Vec<[f64; 2]>> {
        if first < self.start || first + t > self.end() {
            return None;
        }
        Some(
            self.states[first - self.start..first - self.start + t]
                .iter()
                .map(BoxState::ground)
                .collect(),
        )
    }
}
