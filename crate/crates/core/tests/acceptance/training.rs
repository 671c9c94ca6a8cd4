use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

use trackcast_autograd::Tape;
use trackcast_core::config::{AgentSpawn, ManeuverMix, RunConfig, Sampler};
use trackcast_core::evaluate::{association_accuracy, forecast_on_ground_truth};
use trackcast_core::gnn::build_graph;
use trackcast_core::infer::SceneRunner;
use trackcast_core::mot::{affinity_loss, Association};
use trackcast_core::pipeline;
use trackcast_core::records::TrackRecord;
use trackcast_core::scene::BoxState;
use trackcast_core::train::{match_to_detections, train_stage2, TrainingFrame};
use trackcast_core::{dataset_frames, evaluate_outputs, run_inference, EpochLog, Model, Scene};
use trackcast_eval::MotReport;

use crate::common::verdict;
use crate::Outcome;

#[derive(Debug, Default, Clone, Copy)]
struct Totals {
    fp: usize,
    misses: usize,
    ids: usize,
    num_gt: usize,
}

impl Totals {
    fn add(&mut self, r: &MotReport) {
        self.fp += r.fp;
        self.misses += r.fn_count;
        self.ids += r.ids;
        self.num_gt += r.num_gt;
    }

    fn mota(&self) -> f64 {
        1.0 - (self.fp + self.misses + self.ids) as f64 / self.num_gt as f64
    }
}

fn replay_totals(cfg: &RunConfig, scenes: &[Scene], tracks: impl Fn(&Scene) -> Vec<TrackRecord>) -> Totals {
    let mut t = Totals::default();
    for s in scenes {
        t.add(&evaluate_outputs(cfg, s, &tracks(s), None).unwrap().report.tracking);
    }
    t
}

/// Runs the tracker with associations read off the ground truth: each track
/// remembers the object its detections came from.
fn oracle_tracks(model: &Model, cfg: &RunConfig, scene: &Scene) -> Vec<TrackRecord> {
    let mut runner = SceneRunner::new(model, cfg, scene);
    let mut label: BTreeMap<u64, Option<u64>> = BTreeMap::new();
    let mut out = Vec::new();
    while !runner.is_done() {
        let plan = runner.prepare().unwrap();
        let frame = &scene.frames[plan.frame];
        let gt: Vec<Option<BoxState>> = frame.gt.iter().map(|g| Some(g.state())).collect();
        let dets: Vec<BoxState> = plan.detections.iter().map(|d| d.state()).collect();
        let mut source = vec![None; dets.len()];
        for (g, j) in match_to_detections(&gt, &dets, cfg.train.match_gate).into_iter().enumerate() {
            if let Some(j) = j {
                source[j] = Some(frame.gt[g].id);
            }
        }
        let matches: Vec<(usize, usize)> = plan
            .track_ids
            .iter()
            .enumerate()
            .filter_map(|(i, id)| {
                let object = label[id]?;
                source.iter().position(|s| *s == Some(object)).map(|j| (i, j))
            })
            .collect();
        let assoc = Association::from_matches(matches, plan.track_ids.len(), dets.len()).unwrap();
        out.extend(runner.commit(&plan, &assoc).unwrap());
        let born: Vec<u64> = runner.tracker().tracks().iter().map(|t| t.id).filter(|id| !label.contains_key(id)).collect();
        for (id, &j) in born.into_iter().zip(&assoc.unmatched_dets) {
            label.insert(id, source[j]);
        }
    }
    out
}

/// Mean affinity loss over supervised frames when the prediction equals
/// the target wherever an edge exists; no prediction can do better.
fn affinity_floor(cfg: &RunConfig, frames: &[TrainingFrame]) -> f64 {
    let (mut sum, mut n) = (0.0, 0);
    for f in frames {
        let tracks: Vec<[f64; 3]> = f.pasts.iter().map(|p| p.last().unwrap().position()).collect();
        let dets: Vec<[f64; 3]> = f.dets.iter().map(BoxState::position).collect();
        let graph = build_graph(&tracks, &dets, cfg.model.edge_radius).unwrap();
        if graph.track_det.is_empty() {
            continue;
        }
        let mut best = f.target.map(|_| 0.0);
        for &(i, j) in &graph.track_det {
            best.set(i, j, f.target.get(i, j));
        }
        let tape = Tape::new();
        sum += affinity_loss(tape.constant(best).unwrap(), &f.target).unwrap().value().item();
        n += 1;
    }
    sum / n as f64
}

fn scenes_from(cfg: &RunConfig, seed: u64, count: usize) -> Vec<Scene> {
    let mut c = cfg.clone();
    c.seed = seed;
    c.data.num_scenes = count;
    pipeline::generate_dataset(&c).unwrap()
}

pub fn overfit_tracking() -> Outcome {
    let mut cfg = RunConfig::default();
    cfg.seed = 7;
    cfg.model.horizon = 10;
    cfg.scene.frames = 20;
    cfg.scene.agents_max = 8;
    cfg.noise.center_sigma = 0.1;
    cfg.noise.miss_rate = 0.02;
    cfg.train.epochs = 200;
    cfg.data.num_scenes = 20;
    cfg.validate().unwrap();
    let scenes = pipeline::generate_dataset(&cfg).unwrap();
    let frames = dataset_frames(&scenes, &cfg).unwrap();
    let start = Instant::now();
    let mut model = Model::new(&cfg.model, cfg.seed).unwrap();
    let logs = trackcast_core::train_stage1(&mut model, &frames, &cfg, |_| {}).unwrap();
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    let (first, last): (&EpochLog, &EpochLog) = (logs.first().unwrap(), logs.last().unwrap());
    let floor = affinity_floor(&cfg, &frames);
    let aff_drop = 1.0 - (last.affinity - floor) / (first.affinity - floor);
    let fc_drop = 1.0 - last.forecast / first.forecast;

    let learned = replay_totals(&cfg, &scenes, |s| run_inference(&model, &cfg, s).unwrap().tracks);
    let oracle = replay_totals(&cfg, &scenes, |s| oracle_tracks(&model, &cfg, s));
    let ok = learned.mota() >= 0.9
        && learned.ids <= 2
        && oracle.ids == 0
        && aff_drop >= 0.9
        && fc_drop >= 0.9
        && minutes < 15.0;
    verdict(
        ok,
        format!(
            "{} frames x {} epochs in {minutes:.1} min; L_aff {:.4} -> {:.4} (floor {floor:.4}, excess down {:.1}%); \
             L_cvae {:.3} -> {:.3} (down {:.1}%); replay MOTA {:.4} IDS {}; oracle affinity MOTA {:.4} IDS {}",
            frames.len(),
            cfg.train.epochs,
            first.affinity,
            last.affinity,
            100.0 * aff_drop,
            first.forecast,
            last.forecast,
            100.0 * fc_drop,
            learned.mota(),
            learned.ids,
            oracle.mota(),
            oracle.ids
        ),
    )
}

/// Shared configuration for the graph-depth and joint-training ablations.
fn suite() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = 31;
    cfg.model.horizon = 10;
    cfg.scene.frames = 40;
    cfg.scene.area = 12.0;
    cfg.scene.min_spacing = 5.0;
    cfg.noise.frame_jitter = 2.5;
    cfg.train.match_gate = 7.0;
    cfg.train.epochs = 40;
    cfg.data.num_scenes = 10;
    cfg.validate().unwrap();
    cfg
}

const HELD_OUT_SEED: u64 = 1031;

struct SuiteData {
    train: Vec<TrainingFrame>,
    test_scenes: Vec<Scene>,
    test: Vec<TrainingFrame>,
}

fn suite_data() -> &'static SuiteData {
    static DATA: OnceLock<SuiteData> = OnceLock::new();
    DATA.get_or_init(|| {
        let cfg = suite();
        let train = dataset_frames(&pipeline::generate_dataset(&cfg).unwrap(), &cfg).unwrap();
        let test_scenes = scenes_from(&cfg, HELD_OUT_SEED, 20);
        let test = dataset_frames(&test_scenes, &cfg).unwrap();
        SuiteData { train, test_scenes, test }
    })
}

fn suite_model(cfg: &RunConfig) -> Model {
    let mut model = Model::new(&cfg.model, cfg.seed).unwrap();
    trackcast_core::train_stage1(&mut model, &suite_data().train, cfg, |_| {}).unwrap();
    model
}

/// The default-depth joint model, shared by both suite ablations.
fn joint_suite_model() -> &'static Model {
    static MODEL: OnceLock<Model> = OnceLock::new();
    MODEL.get_or_init(|| suite_model(&suite()))
}

pub fn graph_depth() -> Outcome {
    let cfg = suite();
    let data = suite_data();
    let mut flat = cfg.clone();
    flat.model.gnn_layers = 0;
    let shallow = suite_model(&flat);
    let deep = joint_suite_model();
    let acc_deep = association_accuracy(deep, &data.test, &cfg).unwrap();
    let acc_flat = association_accuracy(&shallow, &data.test, &flat).unwrap();
    let gain = 100.0 * (acc_deep - acc_flat);
    verdict(
        gain >= 5.0,
        format!(
            "held-out association accuracy L=2 {:.2}% vs L=0 {:.2}% ({gain:+.2} points)",
            100.0 * acc_deep,
            100.0 * acc_flat
        ),
    )
}

pub fn joint_training() -> Outcome {
    let cfg = suite();
    let data = suite_data();
    let mut mot_only = cfg.clone();
    mot_only.train.forecast_weight = 0.0;
    let tracking_only = suite_model(&mot_only);
    let joint = joint_suite_model();
    let score = |m: &Model| replay_totals(&cfg, &data.test_scenes, |s| run_inference(m, &cfg, s).unwrap().tracks);
    let (with, without) = (score(joint), score(&tracking_only));
    let delta = 100.0 * (with.mota() - without.mota());
    verdict(
        delta >= -1.0,
        format!(
            "held-out MOTA joint {:.2}% vs tracking-only {:.2}% ({delta:+.2} points; IDS {} vs {})",
            100.0 * with.mota(),
            100.0 * without.mota(),
            with.ids,
            without.ids
        ),
    )
}

/// Agents that drive straight and then, at a fixed frame, keep going or
/// turn left or right.
fn fork_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = 41;
    cfg.model.horizon = 10;
    cfg.scene.frames = 26;
    cfg.scene.decision_frame = Some(12);
    cfg.scene.birth_rate = 0.0;
    cfg.scene.death_rate = 0.0;
    cfg.scene.maneuvers = ManeuverMix {
        straight: 1.0,
        left: 1.0,
        right: 1.0,
        stop: 0.0,
    };
    cfg.scene.spawn = vec![
        AgentSpawn { x: -20.0, z: -15.0, heading: 0.0, speed: 8.0 },
        AgentSpawn { x: -20.0, z: 15.0, heading: 0.0, speed: 8.0 },
        AgentSpawn { x: 20.0, z: 0.0, heading: std::f64::consts::PI, speed: 8.0 },
    ];
    cfg.train.frame_window = Some([8, 14]);
    cfg.train.epochs = 40;
    cfg.train.dsf_epochs = 40;
    cfg.data.num_scenes = 30;
    cfg.validate().unwrap();
    cfg
}

pub fn diverse_sampling() -> Outcome {
    let cfg = fork_config();
    let train = dataset_frames(&pipeline::generate_dataset(&cfg).unwrap(), &cfg).unwrap();
    let test = dataset_frames(&scenes_from(&cfg, 1041, 30), &cfg).unwrap();
    let mut model = Model::new(&cfg.model, cfg.seed).unwrap();
    trackcast_core::train_stage1(&mut model, &train, &cfg, |_| {}).unwrap();
    train_stage2(&mut model, &train, &cfg, |_| {}).unwrap();
    let report = |sampler| forecast_on_ground_truth(&model, &test, sampler, cfg.seed).unwrap().report().unwrap();
    let (dsf, random) = (report(Sampler::Dsf), report(Sampler::Random));
    let (dsf_asd, dsf_fsd) = (dsf.asd.unwrap(), dsf.fsd.unwrap());
    let (rnd_asd, rnd_fsd) = (random.asd.unwrap(), random.fsd.unwrap());
    let ok = dsf_asd >= 1.2 * rnd_asd && dsf_fsd >= 1.2 * rnd_fsd && dsf.ade <= 1.1 * random.ade;
    verdict(
        ok,
        format!(
            "K={} over {} agents: ASD {dsf_asd:.3} vs {rnd_asd:.3} (x{:.2}), FSD {dsf_fsd:.3} vs {rnd_fsd:.3} (x{:.2}), \
             ADE {:.3} vs {:.3} (x{:.2})",
            cfg.model.samples,
            dsf.agents,
            dsf_asd / rnd_asd,
            dsf_fsd / rnd_fsd,
            dsf.ade,
            random.ade,
            dsf.ade / random.ade
        ),
    )
}
