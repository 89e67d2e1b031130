use cogdrive_core::cogmap::DrivingIntention;
use cogdrive_core::evalkit::{samples, trajectory_metrics};
use cogdrive_core::simworld::{
    obstacle_scenario, run_scenario, trajectory_csv, ScenarioConfig, TeacherController, Trajectory,
};

const DISTANCES: [f64; 4] = [50.0, 80.0, 100.0, 200.0];
const WIDTHS: [f64; 2] = [3.5, 4.0];

fn teacher_run(cfg: &ScenarioConfig) -> Trajectory {
    run_scenario(cfg, &mut TeacherController::new(cfg.teacher)).unwrap()
}

#[test]
fn obstacle_battery_with_teacher() {
    for w in WIDTHS {
        for x in DISTANCES {
            let cfg = obstacle_scenario(w, x);
            let traj = teacher_run(&cfg);
            let m = trajectory_metrics(&samples(&traj), &traj.road).unwrap();
            eprintln!("{}: {m:?}", cfg.name);
            assert!(!m.collided, "{}", cfg.name);
            assert_eq!(m.changes_completed, 1, "{}", cfg.name);
            assert!(m.settle_offset < 0.2, "{}: {}", cfg.name, m.settle_offset);
            assert!(m.max_abs_lat_accel < 3.0, "{}: {}", cfg.name, m.max_abs_lat_accel);
            let end = traj.last_world().unwrap();
            assert_eq!(end.road.lane_of(end.vehicle.y), Some(0));
        }
    }
}

#[test]
fn mirrored_scenarios_are_symmetric() {
    for w in WIDTHS {
        for x in DISTANCES {
            let cfg = obstacle_scenario(w, x);
            let a = teacher_run(&cfg);
            let b = teacher_run(&cfg.mirrored());
            assert_eq!(a.ticks.len(), b.ticks.len());
            let road_w = a.road.width();
            let mut worst: f64 = 0.0;
            for (p, q) in a.ticks.iter().zip(&b.ticks) {
                let (vp, vq) = (&p.world.vehicle, &q.world.vehicle);
                worst = worst
                    .max((vp.x - vq.x).abs())
                    .max((vp.y - (road_w - vq.y)).abs())
                    .max((vp.psi + vq.psi).abs());
            }
            assert!(worst < 1e-6, "{}: {worst}", cfg.name);
            assert!(b.ticks.iter().any(|t| t.intention == DrivingIntention::ChangeToRight));
        }
    }
}

#[test]
fn runs_are_byte_identical() {
    let mut cfg = obstacle_scenario(3.5, 80.0);
    cfg.noise_sigma = 1.0;
    cfg.seed = 11;
    cfg.obstacles[0].appear_jitter = 2.0;
    assert_eq!(trajectory_csv(&teacher_run(&cfg)), trajectory_csv(&teacher_run(&cfg)));
}

#[test]
fn accel_free_speed_is_constant() {
    let cfg = ScenarioConfig::default();
    let traj = teacher_run(&cfg);
    for t in &traj.ticks {
        assert_eq!(t.accel, 0.0);
        assert_eq!(t.world.vehicle.v, cfg.speed.cruise_speed);
    }
}
