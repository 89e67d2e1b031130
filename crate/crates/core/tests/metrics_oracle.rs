use cogdrive_core::camgeom::{obstacle_distance, CameraModel};
use cogdrive_core::evalkit::{distance_error_stats, pixel_metrics, BitMask, PixelMetrics, DEFAULT_BIN_WIDTH};
use cogdrive_core::percept::{perceive, CameraSlot};
use cogdrive_core::simworld::{render_lane_mask, Obstacle, Road, VehicleBody, VehicleState, WorldState};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_force(pred: &BitMask, gt: &BitMask) -> (usize, usize, usize) {
    let mut counts = (0, 0, 0);
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            match (pred.get(x, y), gt.get(x, y)) {
                (true, true) => counts.0 += 1,
                (true, false) => counts.1 += 1,
                (false, true) => counts.2 += 1,
                _ => {}
            }
        }
    }
    counts
}

#[test]
fn pixel_metrics_equal_brute_force_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let density_a: f64 = rng.random_range(0.0..1.0);
        let density_b: f64 = rng.random_range(0.0..1.0);
        let bits_a: Vec<bool> = (0..320 * 240).map(|_| rng.random_bool(density_a)).collect();
        let bits_b: Vec<bool> = (0..320 * 240).map(|_| rng.random_bool(density_b)).collect();
        let a = BitMask::from_fn(320, 240, |x, y| bits_a[y * 320 + x]);
        let b = BitMask::from_fn(320, 240, |x, y| bits_b[y * 320 + x]);
        let m = pixel_metrics(&a, &b).unwrap();
        let (tp, fp, fn_) = brute_force(&a, &b);
        assert_eq!((m.n_tp, m.n_fp, m.n_fn), (tp, fp, fn_));
        assert_eq!(m.precision, tp as f64 / (tp + fp) as f64);
        assert_eq!(m.recall, tp as f64 / (tp + fn_) as f64);
        assert_eq!(m.f1, 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64);
    }
}

proptest! {
    #[test]
    fn f1_matches_counts_and_is_symmetric(tp in 0usize..1000, fp in 0usize..1000, fn_ in 0usize..1000) {
        let a = PixelMetrics::from_counts(tp, fp, fn_);
        let b = PixelMetrics::from_counts(tp, fn_, fp);
        prop_assert_eq!(a.f1, b.f1);
        if 2 * tp + fp + fn_ > 0 {
            prop_assert_eq!(a.f1, 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64);
        }
        prop_assert!((0.0..=1.0).contains(&a.precision) && (0.0..=1.0).contains(&a.recall));
    }
}

fn world(obstacle_x: f64, y_offset: f64, psi: f64) -> WorldState {
    WorldState {
        t: 0.0,
        vehicle: VehicleState {
            x: 0.0,
            y: 5.25 + y_offset,
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

#[test]
fn free_space_rows_agree_with_obstacle_row_inversion() {
    let cam = CameraModel::default();
    for obstacle_x in [3.0, 6.0, 10.0, 17.3, 25.0, 40.0, 80.0, 150.0] {
        for (dy, psi) in [(0.0, 0.0), (0.4, 0.02), (-0.3, -0.03)] {
            let w = world(obstacle_x, dy, psi);
            let mask = render_lane_mask(&w, &cam, CameraSlot::Middle);
            let top = (0..mask.height())
                .find(|&r| (0..mask.width()).any(|c| mask.get(c, r)))
                .unwrap();
            let pv = perceive(&w, &cam, CameraSlot::Middle, 0.0, 0);
            let row = pv.p_o.unwrap();
            assert!(
                (top as f64 - row).abs() <= 1.0,
                "x={obstacle_x}: mask top {top}, p_o {row}"
            );
            let depth = obstacle_distance(row, &cam).unwrap();
            let top_depth = obstacle_distance(top as f64, &cam).unwrap();
            assert!(top_depth < depth, "free space must end before the obstacle");
        }
    }
}

#[test]
fn obstacle_distance_bias_under_pixel_noise() {
    let cam = CameraModel::default();
    let w = world(10.0, 0.0, 0.0);
    let pairs: Vec<(f64, f64)> = (0..2000)
        .map(|k| {
            let pv = perceive(&w, &cam, CameraSlot::Middle, 1.0, k);
            (obstacle_distance(pv.p_o.unwrap(), &cam).unwrap(), 10.0)
        })
        .collect();
    let stats = distance_error_stats(&pairs, DEFAULT_BIN_WIDTH).unwrap();
    assert!(stats.mean.abs() < 0.1, "{stats:?}");
    assert_eq!(stats.histogram.iter().map(|b| b.count).sum::<usize>(), 2000);
}
