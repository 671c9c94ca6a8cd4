//! Supervised training: the joint tracking/forecasting stage and the
//! sampler stage with everything else frozen.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use trackcast_autograd::{AdamConfig, NumArray, Tape};
use trackcast_eval::max_weight_assignment;

use crate::config::{derive_seed, RunConfig};
use crate::cvae::{self, Condition};
use crate::dsf;
use crate::error::{CoreError, Result};
use crate::model::{backbone, Model};
use crate::mot::{affinity_loss, gt_affinity};
use crate::scene::{BoxState, Scene};

/// One supervised frame: ground-truth tracks alive at the previous frame
/// with their histories, this frame's detections, the target affinity and
/// each track's future from this frame on.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingFrame {
    pub scene: usize,
    pub frame: usize,
    pub ids: Vec<u64>,
    pub pasts: Vec<Vec<BoxState>>,
    pub dets: Vec<BoxState>,
    pub target: NumArray,
    pub futures: Vec<Option<Vec<[f64; 2]>>>,
}

impl TrainingFrame {
    /// Indices of tracks with a complete future.
    pub fn forecast_agents(&self) -> Vec<usize> {
        (0..self.futures.len()).filter(|&i| self.futures[i].is_some()).collect()
    }

    /// Complete futures for `agents`, `[len, 2T]`.
    pub fn future_array(&self, agents: &[usize]) -> NumArray {
        let rows: Vec<Vec<f64>> = agents
            .iter()
            .map(|&i| self.futures[i].as_ref().expect("complete future").iter().flatten().copied().collect())
            .collect();
        NumArray::from_rows(&rows).expect("equal-length futures")
    }

    pub fn past_refs(&self, agents: &[usize]) -> Vec<&[BoxState]> {
        agents.iter().map(|&i| self.pasts[i].as_slice()).collect()
    }
}

/// Matches ground-truth states to detections by maximum total
/// `gate − distance` over pairs closer than `gate` on the ground plane.
pub fn match_to_detections(gt: &[Option<BoxState>], dets: &[BoxState], gate: f64) -> Vec<Option<usize>> {
    if gt.is_empty() || dets.is_empty() {
        return vec![None; gt.len()];
    }
    let dist = |a: &BoxState, b: &BoxState| (a.x - b.x).hypot(a.z - b.z);
    let weights: Vec<Vec<f64>> = gt
        .iter()
        .map(|g| {
            dets.iter()
                .map(|d| match g {
                    Some(g) if dist(g, d) < gate => gate - dist(g, d),
                    _ => 0.0,
                })
                .collect()
        })
        .collect();
    max_weight_assignment(&weights)
        .into_iter()
        .enumerate()
        .map(|(i, j)| j.filter(|&j| weights[i][j] > 0.0))
        .collect()
}

/// Supervised frames of one scene, honouring the configured window and
/// stride. Frame 0 has no previous frame and is never used.
pub fn training_frames(scene: &Scene, scene_index: usize, cfg: &RunConfig) -> Result<Vec<TrainingFrame>> {
    let (h, t) = (cfg.model.history, cfg.model.horizon);
    let n = scene.num_frames();
    let [lo, hi] = cfg.train.frame_window.unwrap_or([0, n]);
    if lo >= hi {
        return Err(CoreError::Config(format!("empty frame window [{lo}, {hi})")));
    }
    let gt_tracks = scene.tracks();
    let mut out = Vec::new();
    for frame in (lo.max(1)..hi.min(n)).step_by(cfg.train.frame_stride) {
        let mut ids = Vec::new();
        let mut pasts = Vec::new();
        let mut now = Vec::new();
        let mut futures = Vec::new();
        for (&id, track) in &gt_tracks {
            let Some(past) = track.history(frame - 1, h) else { continue };
            ids.push(id);
            pasts.push(past);
            now.push(track.at(frame).copied());
            futures.push(track.future(frame, t));
        }
        let dets: Vec<BoxState> = scene.frames[frame].det.iter().map(|d| d.state()).collect();
        let matched = match_to_detections(&now, &dets, cfg.train.match_gate);
        let target = gt_affinity(&matched, dets.len())?;
        out.push(TrainingFrame {
            scene: scene_index,
            frame,
            ids,
            pasts,
            dets,
            target,
            futures,
        });
    }
    Ok(out)
}

pub fn dataset_frames(scenes: &[Scene], cfg: &RunConfig) -> Result<Vec<TrainingFrame>> {
    let mut out = Vec::new();
    for (i, s) in scenes.iter().enumerate() {
        out.extend(training_frames(s, i, cfg)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub loss: f64,
    pub affinity: f64,
    pub forecast: f64,
    pub sampler: f64,
}

/// Joint loss of one frame, `None` when nothing in it is supervised.
pub struct Stage1Loss<'t> {
    pub total: trackcast_autograd::Var<'t>,
    pub affinity: Option<f64>,
    pub forecast: Option<f64>,
}

/// `affinity_weight · L_aff + forecast_weight · L_cvae` with the latent
/// noise drawn from `rng`.
pub fn stage1_loss<'t>(
    tape: &'t Tape,
    model: &Model,
    frame: &TrainingFrame,
    cfg: &RunConfig,
    rng: &mut impl Rng,
) -> Result<Option<Stage1Loss<'t>>> {
    let (wa, wf) = (cfg.train.affinity_weight, cfg.train.forecast_weight);
    let agents = frame.forecast_agents();
    let want_aff = wa > 0.0 && !frame.pasts.is_empty() && !frame.dets.is_empty();
    let want_fc = wf > 0.0 && !agents.is_empty();
    if !want_aff && !want_fc {
        return Ok(None);
    }
    let bb = backbone(tape, model, &frame.pasts, &frame.dets)?;
    let mut total = None;
    let mut out_aff = None;
    if want_aff && !bb.graph.track_det.is_empty() {
        let a = bb.affinity.expect("tracks and detections present");
        let l = affinity_loss(a, &frame.target)?;
        out_aff = Some(l.value().item());
        total = Some(l.scale(wa)?);
    }
    let mut out_fc = None;
    if want_fc {
        let u = bb.track_features()?.expect("tracks present").gather_rows(&agents)?;
        let cond = Condition::new(u, &frame.past_refs(&agents))?;
        let eps = cvae::standard_normal(agents.len(), model.config.latent_dim, rng);
        let l = cvae::elbo_loss(tape, &model.params, &frame.future_array(&agents), &cond, model.config.alpha, &eps)?;
        out_fc = Some(l.value().item());
        let l = l.scale(wf)?;
        total = Some(match total {
            Some(t) => t.add(l)?,
            None => l,
        });
    }
    Ok(total.map(|total| Stage1Loss {
        total,
        affinity: out_aff,
        forecast: out_fc,
    }))
}

/// Sampler loss of one frame over tracks with a complete future. The tape
/// should only treat sampler weights as trainable.
pub fn stage2_loss<'t>(tape: &'t Tape, model: &Model, frame: &TrainingFrame, omega: f64) -> Result<Option<trackcast_autograd::Var<'t>>> {
    let agents = frame.forecast_agents();
    if agents.is_empty() {
        return Ok(None);
    }
    let cfg = &model.config;
    let bb = backbone(tape, model, &frame.pasts, &frame.dets)?;
    let u = bb.track_features()?.expect("tracks present").gather_rows(&agents)?;
    let cond = Condition::new(u, &frame.past_refs(&agents))?.repeat(cfg.samples)?;
    let z = dsf::latent_codes(tape, &model.params, u, cfg.samples, cfg.latent_dim)?;
    let traj = cvae::decode(tape, &model.params, z, &cond, cfg.horizon)?;
    let gt = frame.future_array(&agents);
    Ok(Some(dsf::dsf_loss(traj, z, &gt, cfg.samples, omega, cfg.quality_radius)?))
}

fn adam(cfg: &RunConfig) -> AdamConfig {
    AdamConfig {
        learning_rate: cfg.train.learning_rate,
        ..AdamConfig::default()
    }
}

fn diverged(epoch: usize, e: CoreError) -> CoreError {
    if e.is_numeric() {
        CoreError::Diverged {
            epoch,
            detail: e.to_string(),
        }
    } else {
        e
    }
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Trains encoders, graph, tracking head and forecaster; one Adam step per
/// frame, frames shuffled each epoch. On a numerical failure the model keeps
/// the parameters of the last successful step.
pub fn train_stage1(
    model: &mut Model,
    frames: &[TrainingFrame],
    cfg: &RunConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    let opt = adam(cfg);
    let mut order: Vec<usize> = (0..frames.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 10, 0));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 11, 0));
    let mut logs = Vec::new();
    for epoch in 0..cfg.train.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut log = EpochLog {
            epoch,
            ..EpochLog::default()
        };
        let (mut n_aff, mut n_fc) = (0, 0);
        for &i in &order {
            let mut step = || -> Result<Option<(f64, Option<f64>, Option<f64>)>> {
                let tape = Tape::new();
                let Some(l) = stage1_loss(&tape, model, &frames[i], cfg, &mut noise_rng)? else {
                    return Ok(None);
                };
                let value = l.total.value().item();
                let grads = tape.backward(l.total)?.collect(&model.params, |n| !n.starts_with("dsf."));
                model.params.adam_step(&grads, &opt)?;
                Ok(Some((value, l.affinity, l.forecast)))
            };
            let Some((value, aff, fc)) = step().map_err(|e| diverged(epoch, e))? else { continue };
            log.steps += 1;
            log.loss += value;
            if let Some(a) = aff {
                log.affinity += a;
                n_aff += 1;
            }
            if let Some(f) = fc {
                log.forecast += f;
                n_fc += 1;
            }
        }
        log.loss = mean(log.loss, log.steps);
        log.affinity = mean(log.affinity, n_aff);
        log.forecast = mean(log.forecast, n_fc);
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}

/// Kernel scale from prior samples of the trained forecaster on up to
/// `warmup_samples` agents.
pub fn estimate_omega(model: &Model, frames: &[TrainingFrame], cfg: &RunConfig) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 12, 0));
    let mut groups = Vec::new();
    let k = model.config.samples.max(2);
    for f in frames {
        if groups.len() >= cfg.train.warmup_samples {
            break;
        }
        let agents = f.forecast_agents();
        if agents.is_empty() {
            continue;
        }
        let take = &agents[..agents.len().min(cfg.train.warmup_samples - groups.len())];
        let tape = Tape::new();
        let bb = backbone(&tape, model, &f.pasts, &f.dets)?;
        let u = bb.track_features()?.expect("tracks present").gather_rows(take)?;
        let cond = Condition::new(u, &f.past_refs(take))?;
        let y = cvae::sample_random(&tape, &model.params, &cond, k, model.config.latent_dim, model.config.horizon, &mut rng)?;
        let y = y.value();
        for a in 0..take.len() {
            groups.push((a * k..(a + 1) * k).map(|r| y.row_slice(r).to_vec()).collect());
        }
    }
    dsf::omega_from_samples(&groups)
}

/// Trains only the sampler; every other weight is left bit-identical.
/// Sets `model.omega` from a warm-up batch unless a scale is configured.
pub fn train_stage2(
    model: &mut Model,
    frames: &[TrainingFrame],
    cfg: &RunConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    let omega = match model.config.omega {
        Some(w) => w,
        None => estimate_omega(model, frames, cfg)?,
    };
    model.omega = Some(omega);
    let frozen: Vec<(String, NumArray)> = model
        .params
        .iter()
        .filter(|(n, _)| !n.starts_with("dsf."))
        .map(|(n, v)| (n.to_string(), v.clone()))
        .collect();
    let opt = adam(cfg);
    let mut order: Vec<usize> = (0..frames.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 13, 0));
    let mut logs = Vec::new();
    for epoch in 0..cfg.train.dsf_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut log = EpochLog {
            epoch,
            ..EpochLog::default()
        };
        for &i in &order {
            let mut step = || -> Result<Option<f64>> {
                let tape = Tape::with_trainable(|n| n.starts_with("dsf."));
                let Some(l) = stage2_loss(&tape, model, &frames[i], omega)? else {
                    return Ok(None);
                };
                let value = l.value().item();
                let grads = tape.backward(l)?.collect(&model.params, |n| n.starts_with("dsf."));
                model.params.adam_step(&grads, &opt)?;
                Ok(Some(value))
            };
            if let Some(v) = step().map_err(|e| diverged(epoch, e))? {
                log.steps += 1;
                log.sampler += v;
            }
        }
        log.sampler = mean(log.sampler, log.steps);
        log.loss = log.sampler;
        on_epoch(&log);
        logs.push(log);
    }
    for (name, value) in &frozen {
        if model.params.get(name) != Some(value) {
            return Err(trackcast_autograd::Error::Contract(format!("frozen parameter `{name}` changed")).into());
        }
    }
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bs(x: f64, z: f64) -> BoxState {
        BoxState {
            x,
            y: 0.8,
            z,
            l: 4.0,
            w: 1.8,
            h: 1.6,
            theta: 0.0,
        }
    }

    #[test]
    fn matching_respects_gate() {
        let gt = [Some(bs(0.0, 0.0)), Some(bs(10.0, 0.0)), None];
        let dets = [bs(10.5, 0.0), bs(0.2, 0.1), bs(50.0, 0.0)];
        assert_eq!(match_to_detections(&gt, &dets, 2.0), vec![Some(1), Some(0), None]);
        assert_eq!(match_to_detections(&gt, &dets, 0.1), vec![None, None, None]);
    }
}
