//! `trackcast`: generate synthetic scenes, train the joint tracker and
//! forecaster, run it and score the results. Every artifact is written
//! under `--out` with a fixed name.

mod plot;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use trackcast_core::pipeline::{self, DSF_CHECKPOINT, STAGE1_CHECKPOINT, STAGE_DSF, STAGE_JOINT};
use trackcast_core::records::{load_forecasts, load_tracks};
use trackcast_core::{CoreError, EpochLog, RunConfig, Sampler, Scene};

#[derive(Parser)]
#[command(name = "trackcast", version, about = "Joint 3D tracking and diverse trajectory forecasting")]
struct Cli {
    /// JSON run configuration; defaults apply to every missing field.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Directory for all artifacts.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize `data.num_scenes` scenes into `<out>/data`.
    GenData,
    /// Joint training of tracking and forecasting.
    Train,
    /// Trains the diversity sampler on top of the stage-one checkpoint.
    TrainDsf,
    /// Tracks and forecasts one scene.
    Run {
        #[arg(long, default_value_t = 0)]
        scene: usize,
        /// Defaults to the sampler checkpoint, or the stage-one checkpoint
        /// when sampling at random without one.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Scores tracks (and forecasts, if present) against a scene.
    Evaluate {
        #[arg(long, default_value_t = 0)]
        scene: usize,
        #[arg(long, value_name = "PATH")]
        tracks: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        forecasts: Option<PathBuf>,
    },
    /// Bird's-eye SVG of a scene with tracks and one frame's forecasts.
    ExportPlot {
        #[arg(long, default_value_t = 0)]
        scene: usize,
        /// Frame whose forecasts are drawn; the middle frame by default.
        #[arg(long)]
        frame: Option<usize>,
    },
}

fn exit_code(e: &CoreError) -> u8 {
    if e.is_numeric() {
        3
    } else if matches!(e, CoreError::Config(_)) {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CoreError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| match e {
            CoreError::Io { path, source } => CoreError::Config(format!("{}: {source}", path.display())),
            other => other,
        })?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn data_dir(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    cfg.data.scene_dir.clone().unwrap_or_else(|| cli.out.join(pipeline::DATA_DIR))
}

fn load_scenes(cli: &Cli, cfg: &RunConfig) -> Result<Vec<Scene>, CoreError> {
    let dir = data_dir(cli, cfg);
    if !dir.is_dir() {
        return Err(CoreError::Config(format!(
            "no dataset at {}; run gen-data first",
            dir.display()
        )));
    }
    pipeline::load_dataset(&dir)
}

fn load_scene(cli: &Cli, cfg: &RunConfig, index: usize) -> Result<Scene, CoreError> {
    let mut scenes = load_scenes(cli, cfg)?;
    if index >= scenes.len() {
        return Err(CoreError::Config(format!("scene {index} requested but the dataset has {}", scenes.len())));
    }
    Ok(scenes.swap_remove(index))
}

/// Appends one JSON line per epoch to `path` and echoes a summary.
fn epoch_logger(path: &Path, label: &'static str) -> Result<impl FnMut(&EpochLog), CoreError> {
    let mut file = std::fs::File::create(path).map_err(|e| CoreError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(move |log: &EpochLog| {
        let _ = writeln!(file, "{}", serde_json::to_string(log).expect("log serializes"));
        eprintln!("{label} epoch {} loss {:.5}", log.epoch + 1, log.loss);
    })
}

fn create_out(cli: &Cli) -> Result<(), CoreError> {
    std::fs::create_dir_all(&cli.out).map_err(|e| CoreError::Io {
        path: cli.out.clone(),
        source: e,
    })
}

fn run(cli: &Cli) -> Result<(), CoreError> {
    let cfg = load_config(cli)?;
    create_out(cli)?;
    match &cli.command {
        Command::GenData => {
            let scenes = pipeline::generate_dataset(&cfg)?;
            let dir = data_dir(cli, &cfg);
            pipeline::save_dataset(&dir, &scenes)?;
            eprintln!("wrote {} scenes to {}", scenes.len(), dir.display());
        }
        Command::Train => {
            let scenes = load_scenes(cli, &cfg)?;
            let log = epoch_logger(&cli.out.join(pipeline::STAGE1_LOG), "joint")?;
            let (model, _) = pipeline::train_joint(&cfg, &scenes, log)?;
            pipeline::save_joint(&model, &cli.out.join(STAGE1_CHECKPOINT))?;
        }
        Command::TrainDsf => {
            let (mut model, stage1) = pipeline::load_model(&cli.out.join(STAGE1_CHECKPOINT), Some(STAGE_JOINT), &cfg)?;
            let scenes = load_scenes(cli, &cfg)?;
            let log = epoch_logger(&cli.out.join(pipeline::DSF_LOG), "sampler")?;
            pipeline::train_sampler(&cfg, &mut model, &scenes, log)?;
            pipeline::save_sampler(&model, &stage1, &cli.out.join(DSF_CHECKPOINT))?;
        }
        Command::Run { scene, checkpoint } => {
            let (path, stage) = match checkpoint {
                Some(p) => (p.clone(), None),
                None => {
                    let dsf = cli.out.join(DSF_CHECKPOINT);
                    if dsf.exists() || cfg.model.sampler == Sampler::Dsf {
                        (dsf, Some(STAGE_DSF))
                    } else {
                        (cli.out.join(STAGE1_CHECKPOINT), Some(STAGE_JOINT))
                    }
                }
            };
            let (model, _) = pipeline::load_model(&path, stage, &cfg)?;
            let scene = load_scene(cli, &cfg, *scene)?;
            let out = pipeline::run_scene(&model, &cfg, &scene)?;
            pipeline::write_outputs(&cli.out, &out)?;
            eprintln!("{} track records, {} forecast records", out.tracks.len(), out.forecasts.len());
        }
        Command::Evaluate { scene, tracks, forecasts } => {
            let scene = load_scene(cli, &cfg, *scene)?;
            let tracks_path = tracks.clone().unwrap_or_else(|| cli.out.join(pipeline::TRACKS_FILE));
            let tracks = load_tracks(&tracks_path)?;
            let forecasts_path = forecasts.clone().unwrap_or_else(|| cli.out.join(pipeline::FORECASTS_FILE));
            let forecasts = if forecasts_path.exists() {
                Some(load_forecasts(&forecasts_path)?)
            } else {
                None
            };
            let eval = trackcast_core::evaluate_outputs(&cfg, &scene, &tracks, forecasts.as_deref())?;
            pipeline::write_evaluation(&cli.out, &eval)?;
            print!("{}", pipeline::report_json(&eval));
        }
        Command::ExportPlot { scene, frame } => {
            let scene = load_scene(cli, &cfg, *scene)?;
            let tracks = optional(&cli.out.join(pipeline::TRACKS_FILE), load_tracks)?;
            let forecasts = optional(&cli.out.join(pipeline::FORECASTS_FILE), load_forecasts)?;
            let frame = frame.unwrap_or(scene.num_frames() / 2);
            let svg = plot::scene_svg(&scene, &tracks, &forecasts, frame);
            let path = cli.out.join(plot::PLOT_FILE);
            trackcast_core::records::save_text(&path, &svg)?;
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn optional<T>(path: &Path, load: impl Fn(&Path) -> Result<Vec<T>, CoreError>) -> Result<Vec<T>, CoreError> {
    if path.exists() {
        load(path)
    } else {
        Ok(Vec::new())
    }
}
