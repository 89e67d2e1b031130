//! Subcommand implementations. Each writes its artifacts into a run directory
//! named by the manifest hash and returns a JSON summary.

use crate::bc::{run_pipeline, BcConfig};
use crate::config::{load_scenario, to_toml};
use crate::dataset::{generate, training_scenarios, Dataset, GenConfig};
use crate::error::{HarnessError, Result};
use crate::manifest::{create_run_dir, sha256_hex, write_file, write_json, RunManifest};
use cogdrive_core::evalkit::{parse_trajectory_csv, samples, trajectory_metrics, TrajectoryMetrics};
use cogdrive_core::neuro::{
    grad_check, mean_squared_error, read_checkpoint, train, write_checkpoint, FlatMap, GradCheckReport, LstmParams,
    Normalization, TrainConfig, INPUT_DIM, SEQ_LEN,
};
use cogdrive_core::simworld::{
    run_scenario, trajectory_csv, ControllerKind, ControllerSpec, LstmController, Road, ScenarioConfig,
    SteeringController, TeacherController,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};

/// Largest relative gradient error accepted by `gradcheck`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub struct BuiltController {
    pub controller: Box<dyn SteeringController + Send>,
    pub id: String,
    /// Digest of everything that parameterizes the controller.
    pub checksum: String,
}

/// Builds the controller named by `spec`. Checkpoint paths are taken relative
/// to the working directory.
pub fn build_controller(cfg: &ScenarioConfig, spec: &ControllerSpec) -> Result<BuiltController> {
    match spec.kind {
        ControllerKind::Teacher => Ok(BuiltController {
            controller: Box::new(TeacherController::new(cfg.teacher)),
            id: "teacher".into(),
            checksum: sha256_hex(serde_json::to_string(&cfg.teacher).expect("gains serialize").as_bytes()),
        }),
        ControllerKind::Lstm => {
            let path = spec
                .checkpoint
                .as_deref()
                .ok_or_else(|| HarnessError::Usage("the lstm controller needs a checkpoint path".into()))?;
            let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
            let (params, norm) = read_checkpoint(&text)?;
            Ok(BuiltController {
                controller: Box::new(LstmController::new(params, norm, "lstm")),
                id: "lstm".into(),
                checksum: sha256_hex(text.as_bytes()),
            })
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub metrics: TrajectoryMetrics,
    pub ticks: usize,
}

/// `run`: scenario to `trajectory.csv`, `metrics.json`, `config.toml` and
/// `manifest.json`.
pub fn run(cfg: &ScenarioConfig, runs_root: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut built = build_controller(cfg, &cfg.controller)?;
    let manifest = RunManifest::for_scenario("run", cfg, &built.id, &built.checksum);
    let traj = run_scenario(cfg, &mut built.controller)?;
    let metrics = trajectory_metrics(&samples(&traj), &traj.road)?;
    let dir = create_run_dir(runs_root, &manifest)?;
    write_file(&dir.join("trajectory.csv"), trajectory_csv(&traj).as_bytes())?;
    write_file(&dir.join("config.toml"), to_toml(cfg).as_bytes())?;
    write_json(
        &dir.join("metrics.json"),
        &json!({ "config_hash": manifest.config_hash, "scenario": cfg.name, "metrics": metrics }),
    )?;
    Ok(RunOutcome {
        dir,
        manifest,
        metrics,
        ticks: traj.ticks.len(),
    })
}

/// Loads a scenario file and applies command-line controller overrides.
pub fn load_with_overrides(
    path: &Path,
    controller: Option<ControllerKind>,
    checkpoint: Option<&Path>,
    seed: Option<u64>,
) -> Result<ScenarioConfig> {
    let mut cfg = load_scenario(path)?;
    if let Some(kind) = controller {
        cfg.controller.kind = kind;
    }
    if let Some(p) = checkpoint {
        cfg.controller.checkpoint = Some(p.display().to_string());
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

#[derive(Debug, Clone, Serialize)]
struct GenInputs {
    scenarios: usize,
    scenario_seed: u64,
    gen: GenConfig,
}

/// `gen-data`: procedural teacher scenarios to `dataset.json`.
pub fn gen_data(scenarios: usize, scenario_seed: u64, gen: &GenConfig, runs_root: &Path) -> Result<(PathBuf, Value)> {
    let set = training_scenarios(scenarios, scenario_seed);
    let data = generate(&set, gen)?;
    let inputs = GenInputs {
        scenarios,
        scenario_seed,
        gen: *gen,
    };
    let manifest = RunManifest::new("gen-data", &inputs, gen.seed, "teacher", "");
    let dir = create_run_dir(runs_root, &manifest)?;
    let path = dir.join("dataset.json");
    write_file(&path, data.to_json().as_bytes())?;
    let summary = json!({
        "dir": dir,
        "dataset": path,
        "episodes": data.episodes.len(),
        "windows": data.num_windows(),
        "train_windows": data.train().len(),
        "held_out_windows": data.held_out().len(),
    });
    Ok((path, summary))
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainOutcome {
    pub dir: PathBuf,
    pub checkpoint: PathBuf,
    pub final_train_mse: f64,
    pub held_out_mse: Option<f64>,
    pub epochs: usize,
}

fn write_training_artifacts(dir: &Path, params: &LstmParams, norm: &Normalization, curve: &[f64]) -> Result<PathBuf> {
    let ckpt = dir.join("checkpoint.json");
    write_file(&ckpt, write_checkpoint(params, norm).as_bytes())?;
    let mut csv = String::from("epoch,mse\n");
    for (i, l) in curve.iter().enumerate() {
        csv.push_str(&format!("{i},{l}\n"));
    }
    write_file(&dir.join("loss_curve.csv"), csv.as_bytes())?;
    Ok(ckpt)
}

/// `train --dataset`: supervised fit on the dataset's training split.
pub fn train_on_dataset(dataset_path: &Path, cfg: &TrainConfig, runs_root: &Path) -> Result<TrainOutcome> {
    let text = std::fs::read_to_string(dataset_path).map_err(|e| HarnessError::io(dataset_path, e))?;
    let data = Dataset::from_json(&text, dataset_path)?;
    let manifest = RunManifest::new("train", cfg, cfg.seed, "lstm", &sha256_hex(text.as_bytes()));
    let train_set = data.train();
    let (params, curve) = train(&train_set, cfg)?;
    let held = data.held_out();
    let held_out_mse = if held.is_empty() {
        None
    } else {
        Some(mean_squared_error(&params, &held)?)
    };
    let dir = create_run_dir(runs_root, &manifest)?;
    let checkpoint = write_training_artifacts(&dir, &params, &data.normalization, &curve)?;
    let out = TrainOutcome {
        dir,
        checkpoint,
        final_train_mse: *curve.last().expect("at least one epoch"),
        held_out_mse,
        epochs: curve.len(),
    };
    write_json(&out.dir.join("train.json"), &out)?;
    Ok(out)
}

/// `train` without a dataset: the full behavior-cloning pipeline.
pub fn train_pipeline(cfg: &BcConfig, runs_root: &Path, progress: impl FnMut(&str)) -> Result<TrainOutcome> {
    let manifest = RunManifest::new("train", cfg, cfg.train.seed, "lstm", "pipeline");
    let out = run_pipeline(cfg, progress)?;
    let dir = create_run_dir(runs_root, &manifest)?;
    let checkpoint = write_training_artifacts(&dir, &out.params, &out.normalization, &out.loss_curve)?;
    let res = TrainOutcome {
        dir,
        checkpoint,
        final_train_mse: *out.loss_curve.last().expect("at least one epoch"),
        held_out_mse: Some(out.held_out_mse),
        epochs: out.loss_curve.len(),
    };
    write_json(&res.dir.join("train.json"), &res)?;
    Ok(res)
}

/// Random parameters and a random input sequence for gradient checking.
pub fn gradcheck_draw(seed: u64) -> (LstmParams, Vec<FlatMap>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164);
    let seq = (0..SEQ_LEN)
        .map(|_| {
            let mut v = [0.0; INPUT_DIM];
            v.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
            FlatMap(v)
        })
        .collect();
    (LstmParams::init(seed), seq, rng.random_range(-0.5..0.5))
}

/// `gradcheck`: fails when the error reaches [`GRADCHECK_TOLERANCE`].
pub fn gradcheck(seed: u64, eps: f64) -> Result<GradCheckReport> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(HarnessError::Usage(format!("eps must be positive, got {eps}")));
    }
    let (p, s, y) = gradcheck_draw(seed);
    let report = grad_check(&p, &s, y, eps)?;
    if report.max_rel_error >= GRADCHECK_TOLERANCE {
        return Err(HarnessError::CheckFailed(format!(
            "max_rel_error {:.3e} in {}[{}]",
            report.max_rel_error, report.worst.0, report.worst.1
        )));
    }
    Ok(report)
}

/// `eval`: metrics of an exported trajectory. The road comes from `config`, or
/// from `config.toml` beside the trajectory.
pub fn eval(trajectory: &Path, config: Option<&Path>) -> Result<TrajectoryMetrics> {
    let text = std::fs::read_to_string(trajectory).map_err(|e| HarnessError::io(trajectory, e))?;
    let default_cfg;
    let cfg_path = match config {
        Some(p) => p,
        None => {
            default_cfg = trajectory.with_file_name("config.toml");
            &default_cfg
        }
    };
    let cfg = load_scenario(cfg_path)?;
    let road = Road {
        num_lanes: cfg.road.num_lanes,
        lane_width: cfg.road.lane_width,
        length: cfg.road.length,
    };
    let rows = parse_trajectory_csv(&text)?;
    Ok(trajectory_metrics(&rows, &road)?)
}
