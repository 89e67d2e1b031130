//! Behavior-cloning pipeline: teacher rollouts, supervised training, then
//! rounds of on-policy aggregation where the network drives and the teacher
//! labels the states it reaches.

use crate::dataset::{generate, training_scenarios, Dataset, Episode, GenConfig};
use crate::error::Result;
use cogdrive_core::neuro::{
    flatten, mean_squared_error, train_from, LstmParams, Normalization, Optimizer, TrainConfig,
};
use cogdrive_core::simworld::{run_scenario, ControlContext, LstmController, ScenarioConfig, SteeringController};
use cogdrive_core::teacher::Teacher;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcConfig {
    /// Base scenarios; each also contributes its mirror.
    pub scenarios: usize,
    pub scenario_seed: u64,
    pub gen: GenConfig,
    pub train: TrainConfig,
    pub aggregation_rounds: usize,
    /// Epochs of fine-tuning after each aggregation round.
    pub round_epochs: usize,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            scenarios: 24,
            scenario_seed: 1,
            gen: GenConfig {
                stride: 5,
                ..GenConfig::default()
            },
            train: TrainConfig {
                lr: 1e-3,
                epochs: 12,
                batch: 32,
                seed: 0,
                clip_norm: Some(1.0),
                optimizer: Optimizer::ADAM,
                divergence_threshold: 1e4,
            },
            aggregation_rounds: 2,
            round_epochs: 6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BcOutcome {
    pub params: LstmParams,
    pub normalization: Normalization,
    /// Per-epoch training MSE across all phases.
    pub loss_curve: Vec<f64>,
    pub held_out_mse: f64,
    pub dataset: Dataset,
}

/// Network in the loop; the teacher, restarted from the applied steering of
/// the previous tick, supplies the label.
pub struct TeacherLabelled {
    pub student: LstmController,
    pub teacher: Teacher,
    pub labels: Vec<f64>,
}

impl SteeringController for TeacherLabelled {
    fn steer(&mut self, ctx: &ControlContext) -> f64 {
        self.teacher.reset(ctx.map.vstate.prev_steering);
        self.labels
            .push(self.teacher.command(ctx.d_o, ctx.v_a, ctx.speed, ctx.dt));
        self.student.steer(ctx)
    }
    fn reset(&mut self) {
        self.student.reset();
        self.teacher.reset(0.0);
        self.labels.clear();
    }
    fn id(&self) -> String {
        self.student.id()
    }
}

pub fn aggregate_episode(
    cfg: &ScenarioConfig,
    params: &LstmParams,
    norm: &Normalization,
    group: usize,
    round: usize,
) -> Result<Episode> {
    let mut ctl = TeacherLabelled {
        student: LstmController::new(params.clone(), *norm, "student"),
        teacher: Teacher::new(cfg.teacher),
        labels: Vec::new(),
    };
    let traj = run_scenario(cfg, &mut ctl)?;
    Ok(Episode {
        name: format!("{}_round{round}", cfg.name),
        group,
        held_out: false,
        maps: traj.ticks.iter().map(|t| flatten(&t.map, norm)).collect(),
        targets: ctl.labels,
    })
}

pub fn run_pipeline(cfg: &BcConfig, mut progress: impl FnMut(&str)) -> Result<BcOutcome> {
    let scenarios = training_scenarios(cfg.scenarios, cfg.scenario_seed);
    let mut dataset = generate(&scenarios, &cfg.gen)?;
    let held_out = dataset.held_out();
    let norm = dataset.normalization;
    progress(&format!(
        "dataset: {} episodes, {} windows ({} held out)",
        dataset.episodes.len(),
        dataset.num_windows(),
        held_out.len()
    ));

    let (mut params, mut curve) = train_from(LstmParams::init(cfg.train.seed), &dataset.train(), &cfg.train)?;
    progress(&format!(
        "initial fit: train mse {:.3e}",
        curve.last().copied().unwrap_or(f64::NAN)
    ));

    let train_groups: Vec<&(usize, ScenarioConfig)> = scenarios
        .iter()
        .filter(|(g, _)| !dataset.episodes.iter().any(|e| e.group == *g && e.held_out))
        .collect();
    for round in 1..=cfg.aggregation_rounds {
        for (g, sc) in &train_groups {
            dataset.episodes.push(aggregate_episode(sc, &params, &norm, *g, round)?);
        }
        let tc = TrainConfig {
            epochs: cfg.round_epochs,
            seed: cfg.train.seed.wrapping_add(round as u64),
            ..cfg.train
        };
        let (p, c) = train_from(params, &dataset.train(), &tc)?;
        params = p;
        curve.extend(c);
        progress(&format!(
            "round {round}: {} windows, train mse {:.3e}",
            dataset.num_windows(),
            curve.last().copied().unwrap_or(f64::NAN)
        ));
    }
    let held_out_mse = mean_squared_error(&params, &held_out)?;
    Ok(BcOutcome {
        params,
        normalization: norm,
        loss_curve: curve,
        held_out_mse,
        dataset,
    })
}
