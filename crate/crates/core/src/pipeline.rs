//! End-to-end steps shared by the command-line tool and tests: dataset
//! generation and storage, the two training stages with their checkpoints,
//! inference and evaluation.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use trackcast_autograd::Checkpoint;
use trackcast_eval::curves_csv;

use crate::config::{derive_seed, ModelConfig, RunConfig};
use crate::error::{CoreError, Result};
use crate::evaluate::{evaluate_outputs, Evaluation};
use crate::infer::{run_inference, SceneOutput};
use crate::model::{Model, META_STAGE, META_STAGE1_DIGEST};
use crate::records::{forecasts_to_string, save_text, tracks_to_string};
use crate::scene::{synthesize, Scene};
use crate::train::{dataset_frames, train_stage1, train_stage2, EpochLog};

pub const DATA_DIR: &str = "data";
pub const STAGE1_CHECKPOINT: &str = "ckpt_stage1.bin";
pub const DSF_CHECKPOINT: &str = "ckpt_dsf.bin";
pub const TRACKS_FILE: &str = "tracks.jsonl";
pub const FORECASTS_FILE: &str = "forecasts.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const CURVES_FILE: &str = "curves.csv";
pub const STAGE1_LOG: &str = "train_stage1.jsonl";
pub const DSF_LOG: &str = "train_dsf.jsonl";

pub const STAGE_JOINT: &str = "joint";
pub const STAGE_DSF: &str = "dsf";

pub fn scene_seed(cfg: &RunConfig, index: usize) -> u64 {
    derive_seed(cfg.seed, 1, index as u64)
}

/// `num_scenes` independently seeded scenes, generated in parallel.
pub fn generate_dataset(cfg: &RunConfig) -> Result<Vec<Scene>> {
    (0..cfg.data.num_scenes)
        .into_par_iter()
        .map(|i| synthesize(&cfg.scene, &cfg.noise, scene_seed(cfg, i)))
        .collect()
}

pub fn scene_file_name(index: usize) -> String {
    format!("scene_{index:04}.jsonl")
}

pub fn save_dataset(dir: &Path, scenes: &[Scene]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    for (i, s) in scenes.iter().enumerate() {
        s.save(&dir.join(scene_file_name(i)))?;
    }
    Ok(())
}

/// Every `scene_*.jsonl` in `dir`, in file-name order.
pub fn load_dataset(dir: &Path) -> Result<Vec<Scene>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CoreError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("scene_") && n.ends_with(".jsonl"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CoreError::Data(format!("no scene files in {}", dir.display())));
    }
    paths.iter().map(|p| Scene::load(p)).collect()
}

/// Fresh model trained jointly on every scene.
pub fn train_joint(cfg: &RunConfig, scenes: &[Scene], on_epoch: impl FnMut(&EpochLog)) -> Result<(Model, Vec<EpochLog>)> {
    let frames = dataset_frames(scenes, cfg)?;
    let mut model = Model::new(&cfg.model, cfg.seed)?;
    let logs = train_stage1(&mut model, &frames, cfg, on_epoch)?;
    Ok((model, logs))
}

pub fn train_sampler(cfg: &RunConfig, model: &mut Model, scenes: &[Scene], on_epoch: impl FnMut(&EpochLog)) -> Result<Vec<EpochLog>> {
    let frames = dataset_frames(scenes, cfg)?;
    train_stage2(model, &frames, cfg, on_epoch)
}

/// Architecture fields must agree between a checkpoint and a run config;
/// the sampler choice may differ.
pub fn check_compatible(saved: &ModelConfig, wanted: &ModelConfig) -> Result<()> {
    let same = ModelConfig {
        sampler: saved.sampler,
        omega: saved.omega,
        ..wanted.clone()
    };
    if &same != saved {
        return Err(CoreError::Config(
            "the checkpoint was trained with a different model configuration".into(),
        ));
    }
    Ok(())
}

/// Loads a checkpoint, of the given stage when one is named, and applies
/// the run's sampler.
pub fn load_model(path: &Path, stage: Option<&str>, cfg: &RunConfig) -> Result<(Model, Checkpoint)> {
    if !path.exists() {
        return Err(CoreError::Config(format!("checkpoint {} does not exist", path.display())));
    }
    let (mut model, ck) = Model::load(path)?;
    let found = ck.meta.get(META_STAGE).map(String::as_str);
    let known = matches!(found, Some(STAGE_JOINT | STAGE_DSF));
    if !known || stage.is_some_and(|s| found != Some(s)) {
        return Err(CoreError::Config(format!(
            "{} holds stage {}, expected {}",
            path.display(),
            found.unwrap_or("unknown"),
            stage.unwrap_or("joint or dsf")
        )));
    }
    check_compatible(&model.config, &cfg.model)?;
    model.config.sampler = cfg.model.sampler;
    Ok((model, ck))
}

pub fn save_joint(model: &Model, path: &Path) -> Result<Checkpoint> {
    model.save(path, STAGE_JOINT, &[])
}

/// Saves a sampler-stage model after checking that every non-sampler
/// tensor is bit-identical to the stage-one checkpoint it came from.
pub fn save_sampler(model: &Model, stage1: &Checkpoint, path: &Path) -> Result<Checkpoint> {
    for (name, value) in &stage1.tensors {
        if name.starts_with("dsf.") {
            continue;
        }
        let now = model.params.get(name);
        let same = now.is_some_and(|v| {
            v.shape() == value.shape() && v.data().iter().zip(value.data()).all(|(a, b)| a.to_bits() == b.to_bits())
        });
        if !same {
            return Err(trackcast_autograd::Error::Contract(format!("frozen parameter `{name}` changed")).into());
        }
    }
    model.save(path, STAGE_DSF, &[(META_STAGE1_DIGEST, stage1.digest())])
}

pub fn run_scene(model: &Model, cfg: &RunConfig, scene: &Scene) -> Result<SceneOutput> {
    run_inference(model, cfg, scene)
}

pub fn evaluate_scene(cfg: &RunConfig, scene: &Scene, out: &SceneOutput) -> Result<Evaluation> {
    evaluate_outputs(cfg, scene, &out.tracks, Some(&out.forecasts))
}

pub fn report_json(eval: &Evaluation) -> String {
    let mut s = serde_json::to_string_pretty(&eval.report).expect("report serializes");
    s.push('\n');
    s
}

/// Writes `tracks.jsonl` and `forecasts.jsonl` into `dir`.
pub fn write_outputs(dir: &Path, out: &SceneOutput) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    save_text(&dir.join(TRACKS_FILE), &tracks_to_string(&out.tracks))?;
    save_text(&dir.join(FORECASTS_FILE), &forecasts_to_string(&out.forecasts))
}

/// Writes `report.json` and `curves.csv` into `dir`.
pub fn write_evaluation(dir: &Path, eval: &Evaluation) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    save_text(&dir.join(REPORT_FILE), &report_json(eval))?;
    save_text(&dir.join(CURVES_FILE), &curves_csv(&eval.curve))
}
