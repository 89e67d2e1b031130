use cogdrive_core::camgeom::{
    ground_line_angle, ground_line_distance, ground_to_pixel, lane_distance, pixel_to_ground, vehicle_lane_angle,
    viewpoint_transform, CameraModel, GroundPoint, PixelPoint, RigidTransform,
};
use proptest::prelude::*;

fn cam() -> CameraModel {
    CameraModel::default()
}

/// Distance from the origin to the foot of the perpendicular on the line.
fn foot_distance(m: GroundPoint, b: GroundPoint) -> f64 {
    let (dx, dz) = (b.x - m.x, b.z - m.z);
    let t = -(m.x * dx + m.z * dz) / (dx * dx + dz * dz);
    (m.x + t * dx).hypot(m.z + t * dz)
}

fn ground() -> impl Strategy<Value = GroundPoint> {
    (-8.0..8.0f64, 4.0..80.0f64).prop_map(|(x, z)| GroundPoint::new(x, z))
}

/// Transforms that keep the road plane at camera height: a yaw followed by a
/// horizontal shift.
fn planar_transform() -> impl Strategy<Value = RigidTransform> {
    (-0.3..0.3f64, -2.0..2.0f64, -3.0..3.0f64)
        .prop_map(|(a, tx, tz)| RigidTransform::yaw(a).then(&RigidTransform::translation([tx, 0.0, tz])))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn project_then_invert(g in ground()) {
        let p = ground_to_pixel(g, &cam()).unwrap();
        let back = pixel_to_ground(p, &cam()).unwrap();
        prop_assert!((back.x - g.x).abs() < 1e-9 && (back.z - g.z).abs() < 1e-9);
    }

    #[test]
    fn distance_matches_foot_of_perpendicular(m in ground(), b in ground()) {
        prop_assume!((m.z - b.z).abs() > 0.1);
        let d = ground_line_distance(m, b).unwrap();
        prop_assert!((d - foot_distance(m, b)).abs() < 1e-12, "{} vs {}", d, foot_distance(m, b));
    }

    #[test]
    fn angle_matches_direction_oracle(m in ground(), b in ground()) {
        prop_assume!((m.z - b.z).abs() > 0.1);
        let (near, far) = if m.z < b.z { (m, b) } else { (b, m) };
        let oracle = (far.x - near.x).atan2(far.z - near.z);
        prop_assert!((ground_line_angle(m, b).unwrap() - oracle).abs() < 1e-12);
        prop_assert_eq!(ground_line_angle(m, b).unwrap(), ground_line_angle(b, m).unwrap());
    }

    #[test]
    fn angle_depends_only_on_direction(m in ground(), b in ground(), k in 0.2..3.0f64) {
        prop_assume!((m.z - b.z).abs() > 0.1);
        let b2 = GroundPoint::new(m.x + k * (b.x - m.x), m.z + k * (b.z - m.z));
        let a = ground_line_angle(m, b).unwrap();
        prop_assert!((a - ground_line_angle(m, b2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn pixel_level_formulas_agree(m in ground(), b in ground()) {
        prop_assume!((m.z - b.z).abs() > 0.5);
        let c = cam();
        let (pm, pb) = (ground_to_pixel(m, &c).unwrap(), ground_to_pixel(b, &c).unwrap());
        prop_assert!((lane_distance(pm, pb, &c).unwrap() - foot_distance(m, b)).abs() < 1e-8);
        let (near, far) = if m.z < b.z { (m, b) } else { (b, m) };
        let oracle = (far.x - near.x).atan2(far.z - near.z);
        prop_assert!((vehicle_lane_angle(pm, pb, &c).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn composition_law(g in ground(), t1 in planar_transform(), t2 in planar_transform()) {
        let c = cam();
        let p = ground_to_pixel(g, &c).unwrap();
        let Ok(step1) = viewpoint_transform(p, &c, &t1) else { return Ok(()); };
        let Ok(chained) = viewpoint_transform(step1, &c, &t2) else { return Ok(()); };
        let direct = viewpoint_transform(p, &c, &t1.then(&t2)).unwrap();
        prop_assert!((chained.x - direct.x).abs() < 1e-9 && (chained.y - direct.y).abs() < 1e-9);
    }

    #[test]
    fn yaw_matches_rotate_then_project(g in ground(), a in -0.3..0.3f64) {
        let c = cam();
        let p = ground_to_pixel(g, &c).unwrap();
        let (s, co) = a.sin_cos();
        let rotated = GroundPoint::new(co * g.x + s * g.z, -s * g.x + co * g.z);
        prop_assume!(rotated.z > 0.5);
        let oracle = ground_to_pixel(rotated, &c).unwrap();
        let out = viewpoint_transform(p, &c, &RigidTransform::yaw(a)).unwrap();
        prop_assert!((out.x - oracle.x).abs() < 1e-9 && (out.y - oracle.y).abs() < 1e-9);
    }

    #[test]
    fn identity_is_a_no_op(x in 0.0..320.0f64, y in 121.0..240.0f64) {
        let p = PixelPoint::new(x, y);
        let out = viewpoint_transform(p, &cam(), &RigidTransform::IDENTITY).unwrap();
        prop_assert!((out.x - x).abs() < 1e-9 && (out.y - y).abs() < 1e-9);
    }
}

#[test]
fn lateral_shift_centers_the_boundary() {
    let c = cam();
    let p = ground_to_pixel(GroundPoint::new(1.75, 10.0), &c).unwrap();
    let out = viewpoint_transform(p, &c, &RigidTransform::translation([-1.75, 0.0, 0.0])).unwrap();
    assert!((out.x - c.v0).abs() < 1e-9);
    assert!((out.y - 144.0).abs() < 1e-9);
}
