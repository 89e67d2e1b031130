//! The acceptance battery. Each criterion returns a result with its runtime;
//! a criterion with a runtime budget fails when it overruns.

use crate::bc::{run_pipeline, BcConfig, BcOutcome};
use crate::commands::{gradcheck_draw, run as run_command};
use crate::error::Result;
use cogdrive_core::camgeom::{
    ground_line_angle, ground_line_distance, ground_to_pixel, lane_distance, obstacle_distance, pixel_to_ground,
    vehicle_lane_angle, viewpoint_transform, CameraModel, GroundPoint, PixelPoint, RigidTransform,
};
use cogdrive_core::cogmap::{derive_intention, DrivingIntention, NavigationCommand};
use cogdrive_core::evalkit::{
    distance_error_stats, pixel_metrics, samples, trajectory_metrics, BitMask, TrajectoryMetrics, DEFAULT_BIN_WIDTH,
};
use cogdrive_core::neuro::{backward, grad_check, grad_check_with, train, write_checkpoint, Optimizer, TrainConfig};
use cogdrive_core::percept::{perceive, CameraSlot};
use cogdrive_core::simworld::{
    obstacle_scenario, render_lane_mask, run_scenario, LstmController, Obstacle, Road, ScenarioConfig,
    TeacherController, Trajectory, VehicleBody, VehicleState, WorldState,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::path::Path;
use std::time::Instant;

pub const BATTERY_DISTANCES: [f64; 4] = [50.0, 80.0, 100.0, 200.0];
pub const BATTERY_WIDTHS: [f64; 2] = [3.5, 4.0];

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
    pub budget_seconds: Option<f64>,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "[{}] {}. {} ({:.2}s{}) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.seconds,
            self.budget_seconds.map(|b| format!(" of {b}s")).unwrap_or_default(),
            self.detail
        )
    }
}

pub const NAMES: [&str; 8] = [
    "geometry round trip",
    "intention truth table",
    "teacher scenario battery",
    "gradient check",
    "behavior cloning",
    "metrics oracle",
    "determinism",
    "viewpoint transform",
];

pub const BUDGETS: [Option<f64>; 8] = [
    Some(1.0),
    Some(1.0),
    Some(10.0),
    Some(30.0),
    Some(900.0),
    Some(5.0),
    None,
    None,
];

/// Runs one criterion. `workdir` receives run directories and checkpoints.
pub fn run_criterion(id: u8, workdir: &Path, bc: &BcConfig) -> CriterionResult {
    let idx = usize::from(id - 1);
    let start = Instant::now();
    let outcome = match id {
        1 => geometry(),
        2 => truth_table(),
        3 => teacher_battery(),
        4 => gradients(),
        5 => behavior_cloning(bc, workdir),
        6 => metrics_oracle(),
        7 => determinism(workdir),
        8 => viewpoint(),
        _ => Err(format!("no criterion {id}")),
    };
    let seconds = start.elapsed().as_secs_f64();
    let budget = BUDGETS.get(idx).copied().flatten();
    let over = budget.is_some_and(|b| seconds > b);
    let (passed, mut detail) = match outcome {
        Ok(d) => (!over, d),
        Err(d) => (false, d),
    };
    if over {
        detail.push_str("; over time budget");
    }
    CriterionResult {
        id,
        name: NAMES.get(idx).copied().unwrap_or("unknown"),
        passed,
        detail,
        seconds,
        budget_seconds: budget,
    }
}

pub fn run_suite(
    ids: &[u8],
    workdir: &Path,
    bc: &BcConfig,
    mut on_result: impl FnMut(&CriterionResult),
) -> Vec<CriterionResult> {
    ids.iter()
        .map(|&id| {
            let r = run_criterion(id, workdir, bc);
            on_result(&r);
            r
        })
        .collect()
}

type Outcome = std::result::Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Distance from the origin to the foot of the perpendicular on line `mb`.
fn foot_distance(m: GroundPoint, b: GroundPoint) -> f64 {
    let (dx, dz) = (b.x - m.x, b.z - m.z);
    let t = -(m.x * dx + m.z * dz) / (dx * dx + dz * dz);
    (m.x + t * dx).hypot(m.z + t * dz)
}

fn geometry() -> Outcome {
    let cam = CameraModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut point = || GroundPoint::new(rng.random_range(-8.0..=8.0), rng.random_range(4.0..=80.0));
    let (mut rt, mut dist, mut ang, mut pix) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let g = point();
        let back =
            pixel_to_ground(ground_to_pixel(g, &cam).map_err(|e| e.to_string())?, &cam).map_err(|e| e.to_string())?;
        rt = rt.max((back.x - g.x).hypot(back.z - g.z));
        let b = point();
        if (g.z - b.z).abs() < 0.1 {
            continue;
        }
        let d = ground_line_distance(g, b).map_err(|e| e.to_string())?;
        dist = dist.max((d - foot_distance(g, b)).abs());
        let (near, far) = if g.z < b.z { (g, b) } else { (b, g) };
        let oracle = (far.x - near.x).atan2(far.z - near.z);
        ang = ang.max((ground_line_angle(g, b).map_err(|e| e.to_string())? - oracle).abs());
        let (pg, pb) = (ground_to_pixel(g, &cam).unwrap(), ground_to_pixel(b, &cam).unwrap());
        pix = pix.max((lane_distance(pg, pb, &cam).map_err(|e| e.to_string())? - foot_distance(g, b)).abs());
        pix = pix.max((vehicle_lane_angle(pg, pb, &cam).map_err(|e| e.to_string())? - oracle).abs());
    }
    let detail = format!("round trip {rt:.1e} m, distance {dist:.1e} m, angle {ang:.1e} rad, pixel-level {pix:.1e}");
    ensure(rt < 1e-9 && dist < 1e-12 && ang < 1e-12, || detail.clone())?;
    Ok(detail)
}

/// `(guidance, center free, left free, right free) -> intention`, written out
/// by hand for every combination.
#[rustfmt::skip]
const TABLE: [(NavigationCommand, bool, bool, bool, DrivingIntention); 24] = {
    use DrivingIntention::{BrakeAndStayInLane as B, ChangeToLeft as L, ChangeToRight as R, StayInLane as S};
    use NavigationCommand::{ChangeToLeft as GL, ChangeToRight as GR, StayInLane as K};
    [
        (K,  true,  true,  true,  S), (K,  true,  true,  false, S),
        (K,  true,  false, true,  S), (K,  true,  false, false, S),
        (K,  false, true,  true,  L), (K,  false, true,  false, L),
        (K,  false, false, true,  R), (K,  false, false, false, B),
        (GL, true,  true,  true,  L), (GL, true,  true,  false, L),
        (GL, true,  false, true,  B), (GL, true,  false, false, B),
        (GL, false, true,  true,  L), (GL, false, true,  false, L),
        (GL, false, false, true,  B), (GL, false, false, false, B),
        (GR, true,  true,  true,  R), (GR, true,  true,  false, B),
        (GR, true,  false, true,  R), (GR, true,  false, false, B),
        (GR, false, true,  true,  R), (GR, false, true,  false, B),
        (GR, false, false, true,  R), (GR, false, false, false, B),
    ]
};

fn truth_table() -> Outcome {
    let mut checked = 0;
    // Free lanes sit exactly at the safety distance, then at the extremes.
    for (safety, free, blocked) in [(30.0, 30.0, 29.999_999), (22.2, f64::INFINITY, 0.0)] {
        let o = |f: bool| if f { free } else { blocked };
        for (g, c, l, r, expected) in TABLE {
            let got = derive_intention(g, o(c), o(l), o(r), safety);
            ensure(got == expected, || {
                format!("{g} C={c} L={l} R={r}: got {got}, expected {expected}")
            })?;
            checked += 1;
        }
    }
    Ok(format!("{checked} cases match"))
}

fn teacher_run(cfg: &ScenarioConfig) -> std::result::Result<Trajectory, String> {
    run_scenario(cfg, &mut TeacherController::new(cfg.teacher)).map_err(|e| e.to_string())
}

fn metrics_of(traj: &Trajectory) -> std::result::Result<TrajectoryMetrics, String> {
    trajectory_metrics(&samples(traj), &traj.road).map_err(|e| e.to_string())
}

/// Largest deviation of `b` from the reflection of `a` about the road axis.
fn mirror_error(a: &Trajectory, b: &Trajectory) -> f64 {
    if a.ticks.len() != b.ticks.len() {
        return f64::INFINITY;
    }
    let w = a.road.width();
    a.ticks.iter().zip(&b.ticks).fold(0.0, |worst, (p, q)| {
        let (vp, vq) = (&p.world.vehicle, &q.world.vehicle);
        worst
            .max((vp.x - vq.x).abs())
            .max((vp.y - (w - vq.y)).abs())
            .max((vp.psi + vq.psi).abs())
    })
}

fn teacher_battery() -> Outcome {
    let (mut settle, mut lat, mut mirror) = (0.0f64, 0.0f64, 0.0f64);
    for w in BATTERY_WIDTHS {
        for x in BATTERY_DISTANCES {
            let cfg = obstacle_scenario(w, x);
            let a = teacher_run(&cfg)?;
            let b = teacher_run(&cfg.mirrored())?;
            for traj in [&a, &b] {
                let m = metrics_of(traj)?;
                ensure(!m.collided && m.changes_completed >= 1, || {
                    format!("{}: collided={} changes={}", cfg.name, m.collided, m.changes_completed)
                })?;
                settle = settle.max(m.settle_offset);
                lat = lat.max(m.max_abs_lat_accel);
            }
            mirror = mirror.max(mirror_error(&a, &b));
        }
    }
    let detail =
        format!("16 runs; final offset ≤ {settle:.3} m, |lat accel| ≤ {lat:.2} m/s², mirror error {mirror:.1e} m");
    ensure(settle < 0.2 && lat < 3.0 && mirror < 1e-6, || detail.clone())?;
    Ok(detail)
}

fn gradients() -> Outcome {
    let mut worst = 0.0f64;
    let mut coords = usize::MAX;
    for seed in 0..10 {
        let (p, s, y) = gradcheck_draw(seed);
        let r = grad_check(&p, &s, y, 1e-5).map_err(|e| e.to_string())?;
        worst = worst.max(r.max_rel_error);
        coords = coords.min(r.coords_checked);
    }
    let (p, s, y) = gradcheck_draw(99);
    let faulty = grad_check_with(&p, &s, y, 1e-5, |p, s, y| {
        let (_, mut g) = backward(p, s, y)?;
        g.dense_in.w[0] = 0.0;
        Ok(g)
    })
    .map_err(|e| e.to_string())?;
    let detail = format!(
        "10 draws, ≥{coords} coords each: max rel error {worst:.2e}; zeroed gradient flagged at {:.2e}",
        faulty.max_rel_error
    );
    ensure(worst < 1e-4 && faulty.max_rel_error > 0.1, || detail.clone())?;
    Ok(detail)
}

/// Teacher and network metrics for every battery scenario and its mirror.
pub fn lstm_battery(
    out: &BcOutcome,
) -> std::result::Result<Vec<(String, TrajectoryMetrics, TrajectoryMetrics)>, String> {
    let mut rows = Vec::new();
    for w in BATTERY_WIDTHS {
        for x in BATTERY_DISTANCES {
            let base = obstacle_scenario(w, x);
            for cfg in [base.clone(), base.mirrored()] {
                let teacher = metrics_of(&teacher_run(&cfg)?)?;
                let mut ctl = LstmController::new(out.params.clone(), out.normalization, "lstm");
                let traj = run_scenario(&cfg, &mut ctl).map_err(|e| e.to_string())?;
                let name = if rows.len() % 2 == 1 {
                    format!("{}_mirror", cfg.name)
                } else {
                    cfg.name.clone()
                };
                rows.push((name, teacher, metrics_of(&traj)?));
            }
        }
    }
    Ok(rows)
}

fn behavior_cloning(bc: &BcConfig, workdir: &Path) -> Outcome {
    ensure(bc.scenarios >= 10, || {
        format!(
            "{} base scenarios; at least 20 teacher scenarios needed",
            2 * bc.scenarios
        )
    })?;
    let out = run_pipeline(bc, |_| {}).map_err(|e| e.to_string())?;
    std::fs::create_dir_all(workdir).map_err(|e| e.to_string())?;
    std::fs::write(
        workdir.join("bc_checkpoint.json"),
        write_checkpoint(&out.params, &out.normalization),
    )
    .map_err(|e| e.to_string())?;
    let teacher_scenarios = out
        .dataset
        .episodes
        .iter()
        .filter(|e| !e.name.contains("_round"))
        .count();
    let mut worst_ratio = 0.0f64;
    let mut failures = Vec::new();
    for (name, teacher, student) in lstm_battery(&out)? {
        let bound = (2.0 * teacher.rms_center_offset).max(0.3);
        worst_ratio = worst_ratio.max(student.rms_center_offset / bound);
        if student.collided || student.changes_completed < 1 || student.rms_center_offset > bound {
            failures.push(format!(
                "{name}: collided={} changes={} rms={:.3} bound={bound:.3}",
                student.collided, student.changes_completed, student.rms_center_offset
            ));
        }
    }
    let detail = format!(
        "{teacher_scenarios} teacher scenarios, held-out MSE {:.2e} rad², 16 closed-loop runs, worst RMS/bound {worst_ratio:.2}",
        out.held_out_mse
    );
    ensure(
        teacher_scenarios >= 20 && out.held_out_mse < 0.01 && failures.is_empty(),
        || format!("{detail}; {}", failures.join("; ")),
    )?;
    Ok(detail)
}

fn mask_world(obstacle_x: f64, dy: f64, psi: f64) -> WorldState {
    WorldState {
        t: 0.0,
        vehicle: VehicleState {
            x: 0.0,
            y: 5.25 + dy,
            psi,
            v: 0.0,
            steering: 0.0,
        },
        road: Road {
            num_lanes: 3,
            lane_width: 3.5,
            length: 500.0,
        },
        obstacles: vec![Obstacle {
            lane: 1,
            x: obstacle_x,
            appear_time: 0.0,
            length: 4.5,
            width: 1.8,
            is_static: true,
        }],
        body: VehicleBody::default(),
    }
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for pair in 0..50 {
        let (da, db): (f64, f64) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let bits_a: Vec<bool> = (0..320 * 240).map(|_| rng.random_bool(da)).collect();
        let bits_b: Vec<bool> = (0..320 * 240).map(|_| rng.random_bool(db)).collect();
        let a = BitMask::from_fn(320, 240, |x, y| bits_a[y * 320 + x]);
        let b = BitMask::from_fn(320, 240, |x, y| bits_b[y * 320 + x]);
        let m = pixel_metrics(&a, &b).map_err(|e| e.to_string())?;
        let mut counts = (0, 0, 0);
        for (p, g) in bits_a.iter().zip(&bits_b) {
            match (p, g) {
                (true, true) => counts.0 += 1,
                (true, false) => counts.1 += 1,
                (false, true) => counts.2 += 1,
                _ => {}
            }
        }
        ensure((m.n_tp, m.n_fp, m.n_fn) == counts, || {
            format!("pair {pair}: {m:?} vs {counts:?}")
        })?;
    }

    let cam = CameraModel::default();
    let mut worst_row = 0.0f64;
    for x in [6.0, 10.0, 17.3, 25.0, 40.0, 80.0, 150.0] {
        for (dy, psi) in [(0.0, 0.0), (0.4, 0.02), (-0.3, -0.03)] {
            let w = mask_world(x, dy, psi);
            let mask = render_lane_mask(&w, &cam, CameraSlot::Middle);
            let top = (0..mask.height())
                .find(|&r| (0..mask.width()).any(|c| mask.get(c, r)))
                .ok_or_else(|| format!("empty mask at {x} m"))?;
            let row = perceive(&w, &cam, CameraSlot::Middle, 0.0, 0)
                .p_o
                .ok_or("obstacle not perceived")?;
            worst_row = worst_row.max((top as f64 - row).abs());
        }
    }
    ensure(worst_row <= 1.0, || {
        format!("mask top differs from obstacle row by {worst_row} px")
    })?;

    let w = mask_world(10.0, 0.0, 0.0);
    let pairs = (0..2000)
        .map(|k| {
            let row = perceive(&w, &cam, CameraSlot::Middle, 1.0, k)
                .p_o
                .ok_or("obstacle not perceived")?;
            Ok((obstacle_distance(row, &cam).map_err(|e| e.to_string())?, 10.0))
        })
        .collect::<std::result::Result<Vec<_>, String>>()?;
    let stats = distance_error_stats(&pairs, DEFAULT_BIN_WIDTH).map_err(|e| e.to_string())?;
    let detail = format!(
        "50 mask pairs exact; mask rows within {worst_row} px; distance bias {:.3} m over 2000 samples",
        stats.mean
    );
    ensure(stats.mean.abs() < 0.1, || detail.clone())?;
    Ok(detail)
}

fn determinism(workdir: &Path) -> Outcome {
    let mut cfg = obstacle_scenario(3.5, 80.0);
    cfg.noise_sigma = 1.0;
    cfg.seed = 11;
    cfg.obstacles[0].appear_jitter = 2.0;
    let read = |root: &Path| -> std::result::Result<(String, Vec<u8>), String> {
        let out = run_command(&cfg, root).map_err(|e| e.to_string())?;
        let csv = std::fs::read(out.dir.join("trajectory.csv")).map_err(|e| e.to_string())?;
        Ok((out.manifest.config_hash, csv))
    };
    let (h1, c1) = read(&workdir.join("determinism_a"))?;
    let (h2, c2) = read(&workdir.join("determinism_b"))?;
    ensure(h1 == h2 && c1 == c2, || "repeated run differs".into())?;

    let data = crate::dataset::generate(
        &crate::dataset::training_scenarios(1, 4),
        &crate::dataset::GenConfig {
            stride: 25,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?
    .train();
    let tc = TrainConfig {
        epochs: 2,
        batch: 8,
        lr: 1e-3,
        seed: 3,
        optimizer: Optimizer::ADAM,
        ..TrainConfig::default()
    };
    let ckpt = || -> std::result::Result<String, String> {
        let (p, _) = train(&data, &tc).map_err(|e| e.to_string())?;
        Ok(write_checkpoint(&p, &Default::default()))
    };
    let (k1, k2) = (ckpt()?, ckpt()?);
    ensure(k1 == k2, || "repeated training produced different checkpoints".into())?;
    Ok(format!(
        "trajectory CSV identical ({} bytes, noise and jitter on); checkpoints identical ({} bytes)",
        c1.len(),
        k1.len()
    ))
}

fn viewpoint() -> Outcome {
    let cam = CameraModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut ident, mut yaw, mut comp) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let p = PixelPoint::new(rng.random_range(0.0..320.0), rng.random_range(121.0..240.0));
        let out = viewpoint_transform(p, &cam, &RigidTransform::IDENTITY).map_err(|e| e.to_string())?;
        ident = ident.max((out.x - p.x).abs()).max((out.y - p.y).abs());

        let g = GroundPoint::new(rng.random_range(-8.0..8.0), rng.random_range(4.0..80.0));
        let a: f64 = rng.random_range(-0.3..0.3);
        let (s, c) = a.sin_cos();
        let rotated = GroundPoint::new(c * g.x + s * g.z, -s * g.x + c * g.z);
        let pg = ground_to_pixel(g, &cam).map_err(|e| e.to_string())?;
        if rotated.z > 0.5 {
            let oracle = ground_to_pixel(rotated, &cam).map_err(|e| e.to_string())?;
            let out = viewpoint_transform(pg, &cam, &RigidTransform::yaw(a)).map_err(|e| e.to_string())?;
            yaw = yaw.max((out.x - oracle.x).abs()).max((out.y - oracle.y).abs());
        }

        let mut planar = || {
            RigidTransform::yaw(rng.random_range(-0.3..0.3)).then(&RigidTransform::translation([
                rng.random_range(-2.0..2.0),
                0.0,
                rng.random_range(-3.0..3.0),
            ]))
        };
        let (t1, t2) = (planar(), planar());
        if let Ok(step) = viewpoint_transform(pg, &cam, &t1) {
            if let Ok(chained) = viewpoint_transform(step, &cam, &t2) {
                let direct = viewpoint_transform(pg, &cam, &t1.then(&t2)).map_err(|e| e.to_string())?;
                comp = comp.max((chained.x - direct.x).abs()).max((chained.y - direct.y).abs());
            }
        }
    }
    let p = ground_to_pixel(GroundPoint::new(1.75, 10.0), &cam).map_err(|e| e.to_string())?;
    let shifted =
        viewpoint_transform(p, &cam, &RigidTransform::translation([-1.75, 0.0, 0.0])).map_err(|e| e.to_string())?;
    let shift = (shifted.x - cam.v0).abs().max((shifted.y - 144.0).abs());
    let detail =
        format!("identity {ident:.1e} px, lateral shift {shift:.1e} px, yaw {yaw:.1e} px, composition {comp:.1e} px");
    ensure(ident < 1e-9 && shift < 1e-9 && yaw < 1e-9 && comp < 1e-9, || {
        detail.clone()
    })?;
    Ok(detail)
}

/// Text table of results.
pub fn table(results: &[CriterionResult]) -> String {
    let mut s = String::new();
    for r in results {
        s.push_str(&r.line());
        s.push('\n');
    }
    let passed = results.iter().filter(|r| r.passed).count();
    s.push_str(&format!("{passed}/{} criteria passed\n", results.len()));
    s
}

pub fn all_passed(results: &[CriterionResult]) -> bool {
    results.iter().all(|r| r.passed)
}

pub fn parse_ids(list: &str) -> Result<Vec<u8>> {
    list.split(',')
        .map(|t| match t.trim().parse::<u8>() {
            Ok(id @ 1..=8) => Ok(id),
            _ => Err(crate::error::HarnessError::Usage(format!(
                "unknown criterion {t:?}; expected 1-8"
            ))),
        })
        .collect()
}
