use std::path::Path;

use trackcast_core::evaluate_outputs;
use trackcast_core::infer::SceneRunner;
use trackcast_core::mot::Association;
use trackcast_core::pipeline::{self, DSF_CHECKPOINT, STAGE1_CHECKPOINT, STAGE_DSF, STAGE_JOINT};
use trackcast_core::records::{forecasts_to_string, tracks_to_string, ForecastRecord, TrackRecord};
use trackcast_core::{Model, RunConfig};

use crate::common::verdict;
use crate::Outcome;

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = 21;
    cfg.model.horizon = 10;
    cfg.scene.frames = 30;
    cfg.data.num_scenes = 2;
    cfg.train.epochs = 2;
    cfg.train.dsf_epochs = 1;
    cfg.validate().unwrap();
    cfg
}

const ARTIFACTS: [&str; 6] = [
    STAGE1_CHECKPOINT,
    DSF_CHECKPOINT,
    pipeline::TRACKS_FILE,
    pipeline::FORECASTS_FILE,
    pipeline::REPORT_FILE,
    pipeline::CURVES_FILE,
];

/// Generate, train both stages, run and evaluate the first scene, all
/// through files under `dir`.
fn full_pipeline(cfg: &RunConfig, dir: &Path) {
    let data = dir.join(pipeline::DATA_DIR);
    pipeline::save_dataset(&data, &pipeline::generate_dataset(cfg).unwrap()).unwrap();
    let scenes = pipeline::load_dataset(&data).unwrap();
    let (model, _) = pipeline::train_joint(cfg, &scenes, |_| {}).unwrap();
    pipeline::save_joint(&model, &dir.join(STAGE1_CHECKPOINT)).unwrap();
    let (mut model, stage1) = pipeline::load_model(&dir.join(STAGE1_CHECKPOINT), Some(STAGE_JOINT), cfg).unwrap();
    pipeline::train_sampler(cfg, &mut model, &scenes, |_| {}).unwrap();
    pipeline::save_sampler(&model, &stage1, &dir.join(DSF_CHECKPOINT)).unwrap();
    let (model, _) = pipeline::load_model(&dir.join(DSF_CHECKPOINT), Some(STAGE_DSF), cfg).unwrap();
    let out = pipeline::run_scene(&model, cfg, &scenes[0]).unwrap();
    pipeline::write_outputs(dir, &out).unwrap();
    let eval = pipeline::evaluate_scene(cfg, &scenes[0], &out).unwrap();
    pipeline::write_evaluation(dir, &eval).unwrap();
}

pub fn determinism() -> Outcome {
    let cfg = small_config();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    full_pipeline(&cfg, a.path());
    full_pipeline(&cfg, b.path());
    let differing: Vec<&str> = ARTIFACTS
        .iter()
        .copied()
        .filter(|name| std::fs::read(a.path().join(name)).unwrap() != std::fs::read(b.path().join(name)).unwrap())
        .collect();
    let report = std::fs::read_to_string(a.path().join(pipeline::REPORT_FILE)).unwrap();
    verdict(
        differing.is_empty(),
        format!(
            "two seeded runs, {} artifacts compared, differing: {:?}; report {} bytes",
            ARTIFACTS.len(),
            differing,
            report.len()
        ),
    )
}

struct Replay {
    tracks: Vec<TrackRecord>,
    forecasts: Vec<ForecastRecord>,
}

/// Runs a scene, handing the association for `corrupt_frame` to `corrupt`.
fn replay(model: &Model, cfg: &RunConfig, scene: &trackcast_core::Scene, corrupt_frame: Option<usize>) -> Replay {
    let mut runner = SceneRunner::new(model, cfg, scene);
    let mut out = Replay {
        tracks: Vec::new(),
        forecasts: Vec::new(),
    };
    while !runner.is_done() {
        let plan = runner.prepare().unwrap();
        let assoc = if Some(plan.frame) == corrupt_frame {
            let m = &plan.proposed.matches;
            let rotated: Vec<(usize, usize)> = (0..m.len()).map(|k| (m[k].0, m[(k + 1) % m.len()].1)).collect();
            Association::from_matches(rotated, plan.track_ids.len(), plan.detections.len()).unwrap()
        } else {
            plan.proposed.clone()
        };
        out.tracks.extend(runner.commit(&plan, &assoc).unwrap());
        out.forecasts.extend(plan.forecasts);
    }
    out
}

pub fn parallel_forecasting() -> Outcome {
    let cfg = small_config();
    let scenes = pipeline::generate_dataset(&cfg).unwrap();
    let (model, _) = pipeline::train_joint(&cfg, &scenes, |_| {}).unwrap();
    let scene = &scenes[0];

    // First frame after warm-up where at least two confirmed tracks match.
    let clean = replay(&model, &cfg, scene, None);
    let frame = (cfg.tracker.min_hits + 2..scene.num_frames())
        .find(|&f| clean.tracks.iter().filter(|r| r.frame == f).count() >= 2)
        .ok_or("no frame with two reported tracks")?;
    let corrupted = replay(&model, &cfg, scene, Some(frame));

    let at = |fc: &[ForecastRecord]| {
        let rows: Vec<ForecastRecord> = fc.iter().filter(|r| r.frame == frame).cloned().collect();
        forecasts_to_string(&rows)
    };
    let tracks_at = |t: &[TrackRecord]| {
        let rows: Vec<TrackRecord> = t.iter().filter(|r| r.frame == frame).cloned().collect();
        tracks_to_string(&rows)
    };
    let same_forecasts = at(&clean.forecasts) == at(&corrupted.forecasts);
    let tracks_changed = tracks_at(&clean.tracks) != tracks_at(&corrupted.tracks);
    let score = |t: &[TrackRecord]| evaluate_outputs(&cfg, scene, t, None).unwrap().report.tracking;
    let (before, after) = (score(&clean.tracks), score(&corrupted.tracks));
    let metrics_changed = before != after;
    verdict(
        same_forecasts && tracks_changed && metrics_changed,
        format!(
            "frame {frame}: forecast bytes identical {same_forecasts}, track output changed {tracks_changed}, \
             MOTA {:.4} -> {:.4}, IDS {} -> {}",
            before.mota, after.mota, before.ids, after.ids
        ),
    )
}
