//! Scoring tracking and forecast outputs against a scene's ground truth,
//! plus teacher-forced probes of the trained model.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trackcast_autograd::Tape;
use trackcast_eval::{
    clear_metrics, integrated_metrics, CurvePoint, EvalReport, ForecastSums, MotReport, Sequence, TrackBox,
};

use crate::config::{derive_seed, RunConfig, Sampler};
use crate::error::{CoreError, Result};
use crate::infer::sample_forecasts;
use crate::model::{backbone, Model};
use crate::mot::associate;
use crate::records::{ForecastRecord, TrackRecord};
use crate::scene::Scene;
use crate::train::TrainingFrame;

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub curve: Vec<CurvePoint>,
}

pub fn gt_sequence(scene: &Scene) -> Sequence {
    scene
        .frames
        .iter()
        .map(|f| {
            f.gt.iter()
                .map(|g| TrackBox {
                    id: g.id,
                    bbox: g.state().oriented(),
                    score: 1.0,
                })
                .collect()
        })
        .collect()
}

fn check_frames<'a>(frames: impl Iterator<Item = usize>, n: usize, what: &str) -> Result<()> {
    let bad: BTreeSet<usize> = frames.filter(|&f| f >= n).collect();
    if bad.is_empty() {
        return Ok(());
    }
    let list: Vec<String> = bad.iter().map(usize::to_string).collect();
    Err(CoreError::Data(format!(
        "{what} refer to frames {} but the scene has {n} frames",
        list.join(", ")
    )))
}

/// Tracking metrics, and forecast metrics when forecasts are given.
///
/// A forecast made at frame `t` for track `id` is scored against the ground
/// truth object that the track's box at `t` lies closest to, within
/// `forecast_gate` metres, over frames `t .. t + T`. Forecasts that cannot be
/// paired, or whose ground truth ends too early, are skipped.
pub fn evaluate_outputs(
    cfg: &RunConfig,
    scene: &Scene,
    tracks: &[TrackRecord],
    forecasts: Option<&[ForecastRecord]>,
) -> Result<Evaluation> {
    let n = scene.num_frames();
    check_frames(tracks.iter().map(|r| r.frame), n, "track records")?;
    let mut pred: Sequence = vec![Vec::new(); n];
    let mut seen = BTreeSet::new();
    for r in tracks {
        if !seen.insert((r.frame, r.id)) {
            return Err(CoreError::Data(format!("track {} appears twice in frame {}", r.id, r.frame)));
        }
        pred[r.frame].push(r.track_box());
    }
    let gt = gt_sequence(scene);
    let counts = clear_metrics(&gt, &pred, cfg.eval.iou_threshold)?;
    let integrated = integrated_metrics(&[(&gt, &pred)], cfg.eval.iou_threshold, cfg.eval.recall_steps)?;
    let mut report = EvalReport {
        tracking: MotReport::new(&counts, &integrated),
        forecasting: None,
    };
    if let Some(fc) = forecasts {
        check_frames(fc.iter().map(|r| r.frame), n, "forecast records")?;
        report.forecasting = forecast_sums(cfg, scene, tracks, fc)?.report();
    }
    Ok(Evaluation {
        report,
        curve: integrated.curve,
    })
}

fn forecast_sums(cfg: &RunConfig, scene: &Scene, tracks: &[TrackRecord], fc: &[ForecastRecord]) -> Result<ForecastSums> {
    let boxes: BTreeMap<(usize, u64), &TrackRecord> = tracks.iter().map(|r| ((r.frame, r.id), r)).collect();
    let mut groups: BTreeMap<(usize, u64), Vec<&ForecastRecord>> = BTreeMap::new();
    for r in fc {
        groups.entry((r.frame, r.id)).or_default().push(r);
    }
    let gt_tracks = scene.tracks();
    let mut sums = ForecastSums::default();
    for ((frame, id), mut group) in groups {
        let Some(rec) = boxes.get(&(frame, id)) else { continue };
        let nearest = scene.frames[frame]
            .gt
            .iter()
            .map(|g| (g.id, (g.x - rec.x).hypot(g.z - rec.z)))
            .filter(|&(_, d)| d < cfg.eval.forecast_gate)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let Some((gt_id, _)) = nearest else { continue };
        group.sort_by_key(|r| r.sample_index);
        let horizon = group[0].trajectory.len();
        if group.iter().any(|r| r.trajectory.len() != horizon) {
            return Err(CoreError::Data(format!(
                "forecasts for track {id} at frame {frame} have different lengths"
            )));
        }
        let Some(future) = gt_tracks[&gt_id].future(frame, horizon) else { continue };
        let samples: Vec<Vec<[f64; 2]>> = group.iter().map(|r| r.trajectory.clone()).collect();
        sums.add(&samples, &future)?;
    }
    Ok(sums)
}

/// Fraction of ground-truth tracks whose predicted match (a detection or
/// none) equals the target, associating with the model's affinities.
pub fn association_accuracy(model: &Model, frames: &[TrainingFrame], cfg: &RunConfig) -> Result<f64> {
    let (mut right, mut total) = (0usize, 0usize);
    for f in frames {
        let m = f.pasts.len();
        if m == 0 {
            continue;
        }
        let tape = Tape::new();
        let bb = backbone(&tape, model, &f.pasts, &f.dets)?;
        let mut predicted = vec![None; m];
        if let Some(a) = bb.affinity {
            let assoc = associate(&a.value(), |i, j| bb.graph.has_edge(i, j), cfg.tracker.accept_threshold);
            for (i, j) in assoc.matches {
                predicted[i] = Some(j);
            }
        }
        for (i, p) in predicted.iter().enumerate() {
            let target = (0..f.dets.len()).find(|&j| f.target.get(i, j) == 1.0);
            right += usize::from(*p == target);
            total += 1;
        }
    }
    if total == 0 {
        return Err(CoreError::Data("no tracks to score association on".into()));
    }
    Ok(right as f64 / total as f64)
}

/// Forecast sums over every ground-truth track with a complete future,
/// conditioned on ground-truth histories.
pub fn forecast_on_ground_truth(model: &Model, frames: &[TrainingFrame], sampler: Sampler, seed: u64) -> Result<ForecastSums> {
    let mut sums = ForecastSums::default();
    let k = model.config.samples;
    for f in frames {
        let agents = f.forecast_agents();
        if agents.is_empty() {
            continue;
        }
        let tape = Tape::new();
        let bb = backbone(&tape, model, &f.pasts, &f.dets)?;
        let u = bb.track_features()?.expect("tracks present").gather_rows(&agents)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 21, (f.scene as u64) << 32 | f.frame as u64));
        let y = sample_forecasts(&tape, model, u, &f.past_refs(&agents), sampler, &mut rng)?;
        let y = y.value();
        for (a, &i) in agents.iter().enumerate() {
            let samples: Vec<Vec<[f64; 2]>> = (0..k)
                .map(|s| y.row_slice(a * k + s).chunks_exact(2).map(|c| [c[0], c[1]]).collect())
                .collect();
            sums.add(&samples, f.futures[i].as_ref().expect("complete future"))?;
        }
    }
    Ok(sums)
}
