//! Behavior-cloning data: teacher rollouts cut into sliding windows.
//!
//! Episodes store one flattened map and one label per tick; windows are cut
//! on demand. A window ending at tick `k` covers ticks `k-19 ..= k` and is
//! labelled with the clean teacher command at `k`.

use crate::error::{HarnessError, Result};
use cogdrive_core::cogmap::NavigationCommand;
use cogdrive_core::neuro::{flatten, FlatMap, NeuroError, Normalization, Sequence, SEQ_LEN};
use cogdrive_core::simworld::{
    run_scenario, ControlContext, NaviEntry, NaviSchedule, ObstacleSpec, RoadSpec, ScenarioConfig, StartSpec,
    SteeringController,
};
use cogdrive_core::teacher::Teacher;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const DATASET_FORMAT: &str = "cogdrive-dataset";
pub const DATASET_VERSION: u32 = 1;

/// Every `HELD_OUT_EVERY`-th scenario pair goes to the held-out split.
pub const HELD_OUT_EVERY: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub stride: usize,
    /// Stationary std of the steering perturbation added to the teacher
    /// while recording (rad). Labels are always the unperturbed command.
    pub steer_noise: f64,
    /// Correlation time of the perturbation (s).
    pub noise_tau: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            stride: 1,
            steer_noise: 0.0,
            noise_tau: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub name: String,
    /// Index of the scenario pair; a scenario and its mirror share it.
    pub group: usize,
    pub held_out: bool,
    pub maps: Vec<FlatMap>,
    pub targets: Vec<f64>,
}

impl Episode {
    /// Window end ticks: `SEQ_LEN-1, SEQ_LEN-1+stride, ...`.
    pub fn window_ends(&self, stride: usize) -> impl Iterator<Item = usize> {
        (SEQ_LEN - 1..self.maps.len()).step_by(stride.max(1))
    }

    pub fn windows(&self, stride: usize) -> impl Iterator<Item = Sequence> + '_ {
        self.window_ends(stride).map(|k| Sequence {
            maps: self.maps[k + 1 - SEQ_LEN..=k].to_vec(),
            target: self.targets[k],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    pub format: String,
    pub version: u32,
    pub normalization: Normalization,
    pub gen: GenConfig,
    pub episodes: Vec<Episode>,
}

impl Dataset {
    pub fn train(&self) -> Vec<Sequence> {
        self.split(false)
    }

    pub fn held_out(&self) -> Vec<Sequence> {
        self.split(true)
    }

    fn split(&self, held_out: bool) -> Vec<Sequence> {
        self.episodes
            .iter()
            .filter(|e| e.held_out == held_out)
            .flat_map(|e| e.windows(self.gen.stride))
            .collect()
    }

    pub fn num_windows(&self) -> usize {
        self.episodes
            .iter()
            .map(|e| e.window_ends(self.gen.stride).count())
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("dataset serializes")
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let d: Dataset = serde_json::from_str(text).map_err(|e| HarnessError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        if d.format != DATASET_FORMAT || d.version != DATASET_VERSION {
            return Err(HarnessError::Parse {
                path: origin.to_path_buf(),
                message: format!("unsupported dataset {} v{}", d.format, d.version),
            });
        }
        Ok(d)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text, path)
    }
}

/// Teacher whose applied command carries an Ornstein-Uhlenbeck perturbation.
/// The clean command of every tick is kept as the label.
pub struct NoisyTeacher {
    teacher: Teacher,
    sigma: f64,
    tau: f64,
    seed: u64,
    rng: ChaCha8Rng,
    state: f64,
    pub labels: Vec<f64>,
}

impl NoisyTeacher {
    pub fn new(teacher: Teacher, sigma: f64, tau: f64, seed: u64) -> Self {
        Self {
            teacher,
            sigma,
            tau,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: 0.0,
            labels: Vec::new(),
        }
    }
}

impl SteeringController for NoisyTeacher {
    fn steer(&mut self, ctx: &ControlContext) -> f64 {
        let clean = self.teacher.command(ctx.d_o, ctx.v_a, ctx.speed, ctx.dt);
        self.labels.push(clean);
        if self.sigma == 0.0 {
            return clean;
        }
        let a = (-ctx.dt / self.tau).exp();
        let n: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(&mut self.rng);
        self.state = a * self.state + self.sigma * (1.0 - a * a).sqrt() * n;
        let limit = self.teacher.gains.steer_limit;
        // The rate limiter keeps tracking the clean command; feeding the
        // perturbed value back would integrate the noise.
        (clean + self.state).clamp(-limit, limit)
    }

    fn reset(&mut self) {
        self.teacher.reset(0.0);
        self.rng = ChaCha8Rng::seed_from_u64(self.seed);
        self.state = 0.0;
        self.labels.clear();
    }

    fn id(&self) -> String {
        "teacher".into()
    }
}

/// Records one teacher episode.
pub fn record_episode(cfg: &ScenarioConfig, gen: &GenConfig, norm: &Normalization, group: usize) -> Result<Episode> {
    let seed = gen.seed ^ cfg.seed.rotate_left(17) ^ (group as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut ctl = NoisyTeacher::new(Teacher::new(cfg.teacher), gen.steer_noise, gen.noise_tau, seed);
    let traj = run_scenario(cfg, &mut ctl)?;
    Ok(Episode {
        name: cfg.name.clone(),
        group,
        held_out: group % HELD_OUT_EVERY == HELD_OUT_EVERY - 1,
        maps: traj.ticks.iter().map(|t| flatten(&t.map, norm)).collect(),
        targets: ctl.labels,
    })
}

/// Rolls out every `(group, config)` pair. Configs sharing a group land in the
/// same split.
pub fn generate(configs: &[(usize, ScenarioConfig)], gen: &GenConfig) -> Result<Dataset> {
    if configs.is_empty() {
        return Err(NeuroError::EmptyDataset.into());
    }
    let norm = Normalization::default();
    let episodes = configs
        .iter()
        .map(|(g, c)| record_episode(c, gen, &norm, *g))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        normalization: norm,
        gen: *gen,
        episodes,
    })
}

/// Procedural teacher scenarios: `n` base scenarios, each followed by its
/// mirror under the same group index.
pub fn training_scenarios(n: usize, seed: u64) -> Vec<(usize, ScenarioConfig)> {
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64).wrapping_mul(0x2545_f491_4f6c_dd1d));
        let base = procedural(i, &mut rng);
        let mirror = ScenarioConfig {
            name: format!("{}_mirror", base.name),
            ..base.mirrored()
        };
        out.push((i, base));
        out.push((i, mirror));
    }
    out
}

fn procedural(i: usize, rng: &mut ChaCha8Rng) -> ScenarioConfig {
    let width = rng.random_range(3.5..4.0);
    let offset = rng.random_range(-0.6..0.6);
    let psi = rng.random_range(-0.04..0.04);
    let obstacle = |lane: usize, x: f64| ObstacleSpec {
        lane,
        x,
        appear_time: 0.0,
        appear_jitter: 0.0,
        length: 4.5,
        width: 1.8,
    };
    let navi = |t: f64, command| NaviEntry { t, command };
    let (kind, lanes, start_lane, obstacles, navigation) = match i % 5 {
        0 => ("avoid", 2, 1, vec![obstacle(1, rng.random_range(40.0..220.0))], vec![]),
        1 => ("avoid3", 3, 1, vec![obstacle(1, rng.random_range(40.0..220.0))], vec![]),
        2 => {
            let t0 = rng.random_range(1.0..8.0);
            let t1 = t0 + rng.random_range(6.0..12.0);
            let back = vec![
                navi(t0, NavigationCommand::ChangeToLeft),
                navi(t1, NavigationCommand::ChangeToRight),
            ];
            ("navi", 3, 1, vec![], back)
        }
        3 => {
            let offset_obstacle = if rng.random_bool(0.5) {
                vec![obstacle(0, rng.random_range(60.0..200.0))]
            } else {
                vec![]
            };
            ("keep", 2, 1, offset_obstacle, vec![])
        }
        _ => {
            let x = rng.random_range(80.0..200.0);
            // The neighbour obstacle is no farther than the ego one, so both
            // lanes are blocked when the ego lane drops below safety.
            let other = x - rng.random_range(0.0..15.0);
            ("brake", 2, 1, vec![obstacle(1, x), obstacle(0, other)], vec![])
        }
    };
    // Lane-keeping episodes start further off-center to cover recovery.
    let offset = if kind == "keep" { offset * 1.8 } else { offset };
    ScenarioConfig {
        name: format!("train_{i:03}_{kind}"),
        seed: i as u64,
        horizon: 25.0,
        road: RoadSpec {
            num_lanes: lanes,
            lane_width: width,
            length: 600.0,
        },
        start: StartSpec {
            lane: start_lane,
            offset,
            psi,
            ..StartSpec::default()
        },
        obstacles,
        navigation: NaviSchedule(navigation),
        ..ScenarioConfig::default()
    }
}
