//! Joint 3D multi-object tracking and diverse trajectory forecasting.
//!
//! A frame's tracked objects (LSTM over their past boxes) and detections
//! (MLP) become nodes of a distance-gated interaction graph. After a few
//! rounds of message passing, track–detection edge features give the
//! affinities used for Hungarian association, and each track's feature
//! conditions a CVAE forecaster. A learned sampler maps a feature to `K`
//! latent codes whose decoded futures are spread out under a DPP kernel.

pub mod config;
pub mod cvae;
pub mod dsf;
pub mod encoders;
pub mod error;
pub mod evaluate;
pub mod gnn;
pub mod infer;
pub mod model;
pub mod mot;
mod nn;
pub mod pipeline;
pub mod records;
pub mod scene;
pub mod train;

pub use config::{derive_seed, RunConfig, Sampler};
pub use error::{CoreError, Result};
pub use evaluate::{evaluate_outputs, Evaluation};
pub use infer::{run_inference, SceneOutput, SceneRunner};
pub use model::Model;
pub use records::{ForecastRecord, TrackRecord};
pub use scene::{synthesize, Scene};
pub use train::{dataset_frames, train_stage1, train_stage2, EpochLog, TrainingFrame};
