//! Full network: encoders, graph propagation, tracking head, forecaster
//! and sampler, plus checkpoint conversion.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trackcast_autograd::{Axis, Checkpoint, ParamStore, Tape, Var};

use crate::config::{derive_seed, ModelConfig};
use crate::error::{CoreError, Result};
use crate::gnn::{build_graph, edge_features, propagate, InteractionGraph};
use crate::scene::BoxState;
use crate::{cvae, dsf, encoders, gnn, mot};

pub const META_CONFIG: &str = "model_config";
pub const META_STAGE: &str = "stage";
pub const META_OMEGA: &str = "omega";
pub const META_STAGE1_DIGEST: &str = "stage1_digest";

/// Encoder inputs are taken relative to this point.
const REFERENCE: [f64; 3] = [0.0; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    /// Kernel scale learned at the start of sampler training.
    pub omega: Option<f64>,
}

impl Model {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3, 0));
        let mut p = ParamStore::new();
        encoders::init(&mut p, &mut rng)?;
        gnn::init(&mut p, config.gnn_layers, &mut rng)?;
        mot::init(&mut p, &mut rng)?;
        cvae::init(&mut p, config.latent_dim, &mut rng)?;
        dsf::init(&mut p, config.samples, config.latent_dim, &mut rng)?;
        Ok(Model {
            config: config.clone(),
            params: p,
            omega: config.omega,
        })
    }

    /// Kernel scale: the configured value wins over the learned one.
    pub fn kernel_scale(&self) -> Option<f64> {
        self.config.omega.or(self.omega)
    }

    pub fn to_checkpoint(&self, stage: &str) -> Checkpoint {
        let mut ck = Checkpoint::from_params(&self.params);
        ck.meta.insert(
            META_CONFIG.into(),
            serde_json::to_string(&self.config).expect("config serializes"),
        );
        ck.meta.insert(META_STAGE.into(), stage.into());
        if let Some(w) = self.omega {
            ck.meta.insert(META_OMEGA.into(), format!("{w:e}"));
        }
        ck
    }

    /// Rebuilds a model, checking that every expected parameter is present
    /// with the expected shape and nothing else is.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let bad = |m: String| CoreError::Autograd(trackcast_autograd::Error::Checkpoint(m));
        let text = ck
            .meta
            .get(META_CONFIG)
            .ok_or_else(|| bad("missing model configuration".into()))?;
        let config: ModelConfig = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        let params = ck.to_params()?;
        let fresh = Model::new(&config, 0)?;
        if params.len() != fresh.params.len() {
            return Err(bad(format!(
                "checkpoint has {} tensors, the model has {}",
                params.len(),
                fresh.params.len()
            )));
        }
        for (name, value) in fresh.params.iter() {
            match params.get(name) {
                Some(v) if v.shape() == value.shape() => {}
                Some(v) => {
                    return Err(bad(format!(
                        "`{name}` has shape {:?}, expected {:?}",
                        v.shape(),
                        value.shape()
                    )))
                }
                None => return Err(bad(format!("missing tensor `{name}`"))),
            }
        }
        let omega = match ck.meta.get(META_OMEGA) {
            Some(s) => Some(s.parse::<f64>().map_err(|e| bad(format!("omega: {e}")))?),
            None => None,
        };
        Ok(Model { config, params, omega })
    }

    pub fn save(&self, path: &Path, stage: &str, extra: &[(&str, String)]) -> Result<Checkpoint> {
        let mut ck = self.to_checkpoint(stage);
        for (k, v) in extra {
            ck.meta.insert((*k).into(), v.clone());
        }
        ck.save(path).map_err(|e| match e {
            trackcast_autograd::Error::Io(io) => CoreError::io(path, io),
            other => other.into(),
        })?;
        Ok(ck)
    }

    pub fn load(path: &Path) -> Result<(Self, Checkpoint)> {
        let ck = Checkpoint::load(path).map_err(|e| match e {
            trackcast_autograd::Error::Io(io) => CoreError::io(path, io),
            other => other.into(),
        })?;
        Ok((Self::from_checkpoint(&ck)?, ck))
    }
}

/// Per-frame network outputs before any forecasting.
pub struct Backbone<'t> {
    pub graph: InteractionGraph,
    /// Propagated features, tracks first; `None` for an empty frame.
    pub nodes: Option<Var<'t>>,
    /// `[M, N]` affinities, `None` without tracks or detections.
    pub affinity: Option<Var<'t>>,
}

impl<'t> Backbone<'t> {
    pub fn track_features(&self) -> Result<Option<Var<'t>>> {
        match self.nodes {
            Some(x) if self.graph.num_tracks > 0 => Ok(Some(x.slice(Axis::Rows, 0, self.graph.num_tracks)?)),
            _ => Ok(None),
        }
    }
}

/// Encodes tracks and detections, builds the interaction graph, propagates
/// and scores track–detection edges.
pub fn backbone<'t>(tape: &'t Tape, model: &Model, pasts: &[Vec<BoxState>], dets: &[BoxState]) -> Result<Backbone<'t>> {
    let p = &model.params;
    let track_pos: Vec<[f64; 3]> = pasts
        .iter()
        .map(|h| h.last().map(BoxState::position).ok_or_else(|| CoreError::Data("empty track history".into())))
        .collect::<Result<_>>()?;
    let det_pos: Vec<[f64; 3]> = dets.iter().map(BoxState::position).collect();
    let graph = build_graph(&track_pos, &det_pos, model.config.edge_radius)?;
    let mut parts = Vec::new();
    if !pasts.is_empty() {
        parts.push(encoders::encode_tracks(tape, p, pasts, REFERENCE)?);
    }
    if !dets.is_empty() {
        parts.push(encoders::encode_detections(tape, p, dets, REFERENCE)?);
    }
    if parts.is_empty() {
        return Ok(Backbone {
            graph,
            nodes: None,
            affinity: None,
        });
    }
    let x0 = if parts.len() == 1 { parts[0] } else { Var::concat(&parts, Axis::Rows)? };
    let x = propagate(tape, p, &graph, x0, model.config.gnn_layers)?;
    let affinity = mot::affinity(tape, p, edge_features(x, &graph)?, &graph)?;
    Ok(Backbone {
        graph,
        nodes: Some(x),
        affinity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            samples: 3,
            latent_dim: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut m = Model::new(&small(), 5).unwrap();
        m.omega = Some(0.123456789);
        let back = Model::from_checkpoint(&m.to_checkpoint("forecast")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn mismatched_checkpoint_rejected() {
        let m = Model::new(&small(), 5).unwrap();
        let mut ck = m.to_checkpoint("forecast");
        ck.tensors.pop();
        assert!(Model::from_checkpoint(&ck).is_err());
        let mut ck = m.to_checkpoint("forecast");
        let other = ModelConfig {
            samples: 4,
            ..small()
        };
        ck.meta.insert(META_CONFIG.into(), serde_json::to_string(&other).unwrap());
        assert!(Model::from_checkpoint(&ck).is_err());
    }

    #[test]
    fn empty_frame_has_no_outputs() {
        let m = Model::new(&small(), 1).unwrap();
        let tape = Tape::new();
        let b = backbone(&tape, &m, &[], &[]).unwrap();
        assert!(b.nodes.is_none() && b.affinity.is_none());
    }
}
