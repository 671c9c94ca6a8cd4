//! Online inference over a scene: per frame, forecast every live track,
//! score track–detection pairs, associate and update the tracker.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trackcast_autograd::{NumArray, Tape, Var};

use crate::config::{derive_seed, RunConfig, Sampler};
use crate::cvae::{self, Condition};
use crate::dsf;
use crate::error::{CoreError, Result};
use crate::gnn::InteractionGraph;
use crate::model::{backbone, Model};
use crate::mot::{associate, Association, Tracker};
use crate::records::{ForecastRecord, TrackRecord};
use crate::scene::{BoxState, Detection, Scene};

/// `K` trajectories per agent from the configured sampler, `[B·K, 2T]`.
pub fn sample_forecasts<'t>(
    tape: &'t Tape,
    model: &Model,
    u: Var<'t>,
    pasts: &[&[BoxState]],
    sampler: Sampler,
    rng: &mut ChaCha8Rng,
) -> Result<Var<'t>> {
    let c = &model.config;
    let cond = Condition::new(u, pasts)?;
    match sampler {
        Sampler::Random => cvae::sample_random(tape, &model.params, &cond, c.samples, c.latent_dim, c.horizon, rng),
        Sampler::Dsf => {
            let z = dsf::latent_codes(tape, &model.params, u, c.samples, c.latent_dim)?;
            cvae::decode(tape, &model.params, z, &cond.repeat(c.samples)?, c.horizon)
        }
    }
}

/// Everything computed for one frame before the tracker is updated.
#[derive(Debug, Clone)]
pub struct FramePlan {
    pub frame: usize,
    /// Ids of the tracker's live tracks, in affinity row order.
    pub track_ids: Vec<u64>,
    pub detections: Vec<Detection>,
    /// `[M, N]`; empty when there are no tracks or no detections.
    pub affinity: NumArray,
    pub graph: InteractionGraph,
    pub proposed: Association,
    pub forecasts: Vec<ForecastRecord>,
}

pub struct SceneRunner<'a> {
    model: &'a Model,
    cfg: &'a RunConfig,
    scene: &'a Scene,
    tracker: Tracker,
}

impl<'a> SceneRunner<'a> {
    pub fn new(model: &'a Model, cfg: &'a RunConfig, scene: &'a Scene) -> Self {
        SceneRunner {
            model,
            cfg,
            scene,
            tracker: Tracker::new(cfg.tracker.clone(), model.config.history),
        }
    }

    pub fn is_done(&self) -> bool {
        self.tracker.frame() >= self.scene.num_frames()
    }

    pub fn tracker(&self) -> &Tracker {
        &self.tracker
    }

    /// Runs the network on the next frame without touching tracker state.
    pub fn prepare(&self) -> Result<FramePlan> {
        let frame = self.tracker.frame();
        let dets = self
            .scene
            .frames
            .get(frame)
            .ok_or_else(|| CoreError::Data(format!("scene has no frame {frame}")))?
            .det
            .clone();
        let tracks = self.tracker.tracks();
        let pasts: Vec<Vec<BoxState>> = tracks.iter().map(|t| t.history.clone()).collect();
        let det_states: Vec<BoxState> = dets.iter().map(Detection::state).collect();
        let tape = Tape::new();
        let bb = backbone(&tape, self.model, &pasts, &det_states)?;
        let affinity = match bb.affinity {
            Some(a) => a.value().clone(),
            None => NumArray::zeros(0, 0),
        };
        let proposed = if affinity.is_empty() {
            Association::from_matches(Vec::new(), pasts.len(), dets.len())?
        } else {
            associate(&affinity, |i, j| bb.graph.has_edge(i, j), self.cfg.tracker.accept_threshold)
        };
        let mut forecasts = Vec::new();
        if let Some(u) = bb.track_features()? {
            let seed = derive_seed(self.cfg.seed ^ self.scene.seed, 20, frame as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let refs: Vec<&[BoxState]> = pasts.iter().map(Vec::as_slice).collect();
            let y = sample_forecasts(&tape, self.model, u, &refs, self.model.config.sampler, &mut rng)?;
            let y = y.value();
            let k = self.model.config.samples;
            for (a, t) in tracks.iter().enumerate() {
                for s in 0..k {
                    let row = y.row_slice(a * k + s);
                    forecasts.push(ForecastRecord {
                        frame,
                        id: t.id,
                        sample_index: s,
                        trajectory: row.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
                    });
                }
            }
        }
        Ok(FramePlan {
            frame,
            track_ids: tracks.iter().map(|t| t.id).collect(),
            detections: dets,
            affinity,
            graph: bb.graph,
            proposed,
            forecasts,
        })
    }

    /// Applies an association for the prepared frame.
    pub fn commit(&mut self, plan: &FramePlan, assoc: &Association) -> Result<Vec<TrackRecord>> {
        if plan.frame != self.tracker.frame() {
            return Err(CoreError::Data(format!(
                "plan is for frame {} but the tracker is at frame {}",
                plan.frame,
                self.tracker.frame()
            )));
        }
        self.tracker.step(&plan.detections, assoc)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneOutput {
    pub tracks: Vec<TrackRecord>,
    pub forecasts: Vec<ForecastRecord>,
}

pub fn run_inference(model: &Model, cfg: &RunConfig, scene: &Scene) -> Result<SceneOutput> {
    let mut runner = SceneRunner::new(model, cfg, scene);
    let mut out = SceneOutput::default();
    while !runner.is_done() {
        let plan = runner.prepare()?;
        out.tracks.extend(runner.commit(&plan, &plan.proposed)?);
        out.forecasts.extend(plan.forecasts);
    }
    Ok(out)
}
