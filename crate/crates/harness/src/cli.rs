use crate::bc::BcConfig;
use crate::commands;
use crate::dataset::GenConfig;
use crate::error::{HarnessError, Result};
use crate::manifest::{runs_root, write_json, RunManifest};
use crate::serve::{self, ServeOptions};
use crate::suite;
use clap::{Parser, Subcommand, ValueEnum};
use cogdrive_core::neuro::{Optimizer, TrainConfig};
use cogdrive_core::simworld::ControllerKind;
use serde_json::json;
use std::net::SocketAddr;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "cogdrive",
    version,
    about = "Cognitive-map lane-change driving: simulation, training and evaluation"
)]
pub struct Cli {
    /// Root directory for run outputs; overrides $COGDRIVE_RUNS.
    #[arg(long, global = true)]
    pub runs_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ControllerArg {
    Teacher,
    Lstm,
}

impl From<ControllerArg> for ControllerKind {
    fn from(c: ControllerArg) -> Self {
        match c {
            ControllerArg::Teacher => ControllerKind::Teacher,
            ControllerArg::Lstm => ControllerKind::Lstm,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario; writes trajectory.csv and metrics.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        controller: Option<ControllerArg>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Record teacher rollouts on procedural scenarios as a windowed dataset.
    GenData {
        /// Base scenarios; each is recorded together with its mirror.
        #[arg(long, default_value_t = 24)]
        scenarios: usize,
        #[arg(long, default_value_t = 1)]
        scenario_seed: u64,
        #[arg(long, default_value_t = 5)]
        stride: usize,
        /// Std of the steering perturbation while recording (rad).
        #[arg(long, default_value_t = 0.0)]
        steer_noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a checkpoint, on a dataset file or through the full cloning
    /// pipeline with on-policy aggregation.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "adam")]
        optimizer: OptimizerArg,
        /// Aggregation rounds (pipeline mode only).
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Compare backpropagated gradients with central differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
    },
    /// Metrics of an exported trajectory.
    Eval {
        #[arg(long)]
        trajectory: PathBuf,
        /// Scenario file for the road; defaults to config.toml beside the
        /// trajectory.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Serve live telemetry over WebSocket at /ws, with /healthz.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, value_enum)]
        controller: Option<ControllerArg>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Simulated seconds per wall-clock second.
        #[arg(long, default_value_t = 1.0)]
        speed_factor: f64,
    },
    /// Run the acceptance criteria and print a pass/fail table.
    PaperSuite {
        /// Comma-separated criterion numbers; all when absent.
        #[arg(long)]
        only: Option<String>,
    },
}

/// Executes a parsed command line; JSON summaries go to stdout.
pub fn execute(cli: Cli) -> Result<()> {
    let root = cli.runs_dir.clone().unwrap_or_else(runs_root);
    match cli.command {
        Command::Run {
            config,
            controller,
            checkpoint,
            seed,
        } => {
            let cfg = commands::load_with_overrides(&config, controller.map(Into::into), checkpoint.as_deref(), seed)?;
            let out = commands::run(&cfg, &root)?;
            print_json(&json!({
                "dir": out.dir,
                "config_hash": out.manifest.config_hash,
                "ticks": out.ticks,
                "metrics": out.metrics,
            }));
        }
        Command::GenData {
            scenarios,
            scenario_seed,
            stride,
            steer_noise,
            seed,
        } => {
            if stride == 0 {
                return Err(HarnessError::Usage("stride must be at least 1".into()));
            }
            let gen = GenConfig {
                stride,
                steer_noise,
                seed,
                ..GenConfig::default()
            };
            let (_, summary) = commands::gen_data(scenarios, scenario_seed, &gen, &root)?;
            print_json(&summary);
        }
        Command::Train {
            dataset,
            epochs,
            lr,
            batch,
            seed,
            optimizer,
            rounds,
        } => {
            let mut bc = BcConfig::default();
            let tc = TrainConfig {
                epochs: epochs.unwrap_or(bc.train.epochs),
                lr: lr.unwrap_or(bc.train.lr),
                batch: batch.unwrap_or(bc.train.batch),
                seed,
                optimizer: match optimizer {
                    OptimizerArg::Sgd => Optimizer::Sgd,
                    OptimizerArg::Adam => Optimizer::ADAM,
                },
                ..bc.train
            };
            let out = match dataset {
                Some(path) => {
                    if rounds.is_some() {
                        return Err(HarnessError::Usage("--rounds applies only without --dataset".into()));
                    }
                    commands::train_on_dataset(&path, &tc, &root)?
                }
                None => {
                    bc.train = tc;
                    bc.aggregation_rounds = rounds.unwrap_or(bc.aggregation_rounds);
                    commands::train_pipeline(&bc, &root, |m| tracing::info!("{m}"))?
                }
            };
            print_json(&serde_json::to_value(&out).expect("outcome serializes"));
        }
        Command::Gradcheck { seed, eps } => {
            let r = commands::gradcheck(seed, eps)?;
            print_json(&json!({
                "seed": seed,
                "eps": eps,
                "max_rel_error": r.max_rel_error,
                "coords_checked": r.coords_checked,
                "worst_tensor": r.worst.0,
                "worst_index": r.worst.1,
            }));
        }
        Command::Eval { trajectory, config } => {
            let m = commands::eval(&trajectory, config.as_deref())?;
            print_json(&serde_json::to_value(m).expect("metrics serialize"));
        }
        Command::Serve {
            config,
            addr,
            controller,
            checkpoint,
            speed_factor,
        } => {
            let cfg = commands::load_with_overrides(&config, controller.map(Into::into), checkpoint.as_deref(), None)?;
            let built = commands::build_controller(&cfg, &cfg.controller)?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| HarnessError::Serve(e.to_string()))?;
            rt.block_on(async move {
                let opts = ServeOptions {
                    speed_factor,
                    ..ServeOptions::default()
                };
                let handle = serve::start(cfg, built.controller, addr, opts).await?;
                print_json(&json!({ "listening": handle.addr.to_string(), "ws": "/ws", "health": "/healthz" }));
                let stop = handle.shutdown_sender();
                tokio::spawn(async move {
                    let _ = tokio::signal::ctrl_c().await;
                    let _ = stop.send(true);
                });
                handle.wait().await
            })?;
        }
        Command::PaperSuite { only } => {
            let ids = match only {
                Some(list) => suite::parse_ids(&list)?,
                None => (1..=8).collect(),
            };
            let bc = BcConfig::default();
            let manifest = RunManifest::new("paper-suite", &(ids.clone(), bc), 0, "suite", "");
            let dir = crate::manifest::create_run_dir(&root, &manifest)?;
            let results = suite::run_suite(&ids, &dir, &bc, |r| println!("{}", r.line()));
            let passed = results.iter().filter(|r| r.passed).count();
            println!("{passed}/{} criteria passed", results.len());
            write_json(&dir.join("suite.json"), &results)?;
            if !suite::all_passed(&results) {
                return Err(HarnessError::CheckFailed(format!(
                    "{} of {} criteria failed",
                    results.len() - passed,
                    results.len()
                )));
            }
        }
    }
    Ok(())
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string(v).expect("value serializes"));
}
