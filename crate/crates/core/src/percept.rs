//! Synthetic perception: renders the five-point perception vector of each
//! camera from world ground truth and turns vectors back into metric lane
//! measurements.
//!
//! Lane designation: the left and right cameras watch the lanes adjacent to
//! the lane containing the vehicle reference point. The middle camera watches
//! every lane the vehicle body spans at the camera position, so while the body
//! straddles a boundary its apparent lane covers both lanes.

use crate::camgeom::{
    self, ground_line_angle, ground_line_distance, ground_to_pixel, obstacle_distance, pixel_to_ground, CameraModel,
    GroundPoint, PixelPoint,
};
use crate::simworld::WorldState;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Obstacles farther than this (camera depth, m) are not reported.
pub const OBSTACLE_MAX_RANGE: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraSlot {
    Left,
    Middle,
    Right,
}

impl CameraSlot {
    pub const ALL: [CameraSlot; 3] = [CameraSlot::Left, CameraSlot::Middle, CameraSlot::Right];

    fn index(self) -> u64 {
        match self {
            CameraSlot::Left => 0,
            CameraSlot::Middle => 1,
            CameraSlot::Right => 2,
        }
    }
}

/// The three road cameras. All share intrinsics and height; the side cameras
/// are yawed outward so each one sees its neighbouring lane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub left: CameraModel,
    pub middle: CameraModel,
    pub right: CameraModel,
}

impl CameraRig {
    pub const DEFAULT_SIDE_YAW_DEG: f64 = 25.0;

    pub fn symmetric(base: CameraModel, side_yaw: f64) -> Self {
        Self {
            left: base.with_yaw(-side_yaw),
            middle: base.with_yaw(0.0),
            right: base.with_yaw(side_yaw),
        }
    }

    pub fn camera(&self, slot: CameraSlot) -> &CameraModel {
        match slot {
            CameraSlot::Left => &self.left,
            CameraSlot::Middle => &self.middle,
            CameraSlot::Right => &self.right,
        }
    }
}

impl Default for CameraRig {
    fn default() -> Self {
        Self::symmetric(CameraModel::default(), Self::DEFAULT_SIDE_YAW_DEG.to_radians())
    }
}

/// Boundary intersections with the top (row 0) and bottom (last row) image
/// edges, plus the obstacle row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerceptionVector {
    /// `false` when the designated lane does not exist; the other fields are
    /// then zero and meaningless.
    pub lane_present: bool,
    pub p_l_t: f64,
    pub p_l_b: f64,
    pub p_r_t: f64,
    pub p_r_b: f64,
    /// Row of the nearest in-lane obstacle, `None` when the lane is clear.
    pub p_o: Option<f64>,
}

impl PerceptionVector {
    pub const ABSENT: Self = Self {
        lane_present: false,
        p_l_t: 0.0,
        p_l_b: 0.0,
        p_r_t: 0.0,
        p_r_b: 0.0,
        p_o: None,
    };
}

/// Metric quantities recovered from the three perception vectors.
///
/// Lateral distances are unsigned and `None` when the lane is absent or the
/// boundary could not be inverted. Obstacle distances are `+inf` for a clear
/// lane and `0` for a missing lane, so a missing lane always reads as blocked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneMeasurements {
    pub d_m_left: Option<f64>,
    pub d_m_right: Option<f64>,
    pub d_l_left: Option<f64>,
    pub d_l_right: Option<f64>,
    pub d_r_left: Option<f64>,
    pub d_r_right: Option<f64>,
    /// Angle of the ego lane's left boundary against the vehicle axis. Negative
    /// when the nose points to the right of the lane direction.
    pub v_a: Option<f64>,
    pub o_c: f64,
    pub o_l: f64,
    pub o_r: f64,
}

/// Source of perception vectors. The oracle below is the only implementation
/// here; a learned regressor would plug in behind the same trait.
pub trait Perception {
    fn perceive(&mut self, world: &WorldState, rig: &CameraRig, slot: CameraSlot, tick: u64) -> PerceptionVector;
}

/// Ground-truth perception with optional Gaussian pixel noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OraclePerception {
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Perception for OraclePerception {
    fn perceive(&mut self, world: &WorldState, rig: &CameraRig, slot: CameraSlot, tick: u64) -> PerceptionVector {
        let seed = mix_seed(self.seed, tick, slot.index());
        perceive(world, rig.camera(slot), slot, self.noise_sigma, seed)
    }
}

/// splitmix64 over the three inputs.
pub fn mix_seed(seed: u64, tick: u64, stream: u64) -> u64 {
    let mut z = seed ^ tick.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED69);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Inclusive range of lanes the camera in `slot` is watching, or `None` when
/// that lane does not exist.
pub fn designated_lanes(world: &WorldState, slot: CameraSlot) -> Option<(usize, usize)> {
    let road = &world.road;
    let y = world.vehicle.y;
    let center = road.lane_of(y)?;
    match slot {
        CameraSlot::Middle => {
            let hw = world.body.width / 2.0;
            let lo = road.lane_of(y - hw).unwrap_or(0);
            let hi = road.lane_of(y + hw).unwrap_or(road.num_lanes - 1);
            Some((lo.min(center), hi.max(center)))
        }
        CameraSlot::Left => center.checked_sub(1).map(|l| (l, l)),
        CameraSlot::Right => (center + 1 < road.num_lanes).then_some((center + 1, center + 1)),
    }
}

/// Image line of the road boundary at world lateral position `boundary_y`,
/// as x-coordinates at the top and bottom rows.
fn boundary_edges(world: &WorldState, cam: &CameraModel, boundary_y: f64) -> Option<(f64, f64)> {
    let vx = world.vehicle.x;
    let p0 = cam.vehicle_to_camera(world.to_vehicle_frame(vx, boundary_y));
    let p1 = cam.vehicle_to_camera(world.to_vehicle_frame(vx + 1.0, boundary_y));
    let (dx, dz) = (p1.x - p0.x, p1.z - p0.z);
    if dz.abs() < 1e-9 {
        return None;
    }
    // Two points on the line in front of the camera.
    let at_depth = |z: f64| {
        let s = (z - p0.z) / dz;
        GroundPoint::new(p0.x + s * dx, z)
    };
    let a = ground_to_pixel(at_depth(10.0), cam).ok()?;
    let b = ground_to_pixel(at_depth(40.0), cam).ok()?;
    let x_at = |row: f64| a.x + (row - a.y) * (b.x - a.x) / (b.y - a.y);
    Some((x_at(0.0), x_at(cam.bottom_row())))
}

/// Camera depth of the nearest obstacle in the designated lanes, clamped to
/// the bottom image row when the obstacle reaches alongside the camera.
fn nearest_obstacle_row(world: &WorldState, cam: &CameraModel, lanes: (usize, usize)) -> Option<f64> {
    let bottom_depth = cam.bottom_row_depth();
    world
        .active_obstacles()
        .filter(|o| (lanes.0..=lanes.1).contains(&o.lane))
        .filter_map(|o| {
            let c = world.road.lane_center(o.lane);
            let rear = cam.vehicle_to_camera(world.to_vehicle_frame(o.x, c)).z;
            let front = cam.vehicle_to_camera(world.to_vehicle_frame(o.x + o.length, c)).z;
            if front <= 0.0 || rear > OBSTACLE_MAX_RANGE {
                return None;
            }
            Some(if rear >= bottom_depth {
                cam.u0 + cam.focal * cam.height / rear
            } else {
                cam.bottom_row()
            })
        })
        .max_by(|a, b| a.total_cmp(b))
}

/// Renders one camera's perception vector.
///
/// Noise is i.i.d. Gaussian with standard deviation `noise_sigma` pixels on
/// each of the five values and is fully determined by `seed`.
pub fn perceive(
    world: &WorldState,
    cam: &CameraModel,
    slot: CameraSlot,
    noise_sigma: f64,
    seed: u64,
) -> PerceptionVector {
    let Some(lanes) = designated_lanes(world, slot) else {
        return PerceptionVector::ABSENT;
    };
    let road = &world.road;
    let (Some(left), Some(right)) = (
        boundary_edges(world, cam, road.boundary(lanes.0)),
        boundary_edges(world, cam, road.boundary(lanes.1 + 1)),
    ) else {
        return PerceptionVector::ABSENT;
    };
    let mut v = PerceptionVector {
        lane_present: true,
        p_l_t: left.0,
        p_l_b: left.1,
        p_r_t: right.0,
        p_r_b: right.1,
        p_o: nearest_obstacle_row(world, cam, lanes),
    };
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_sigma).expect("finite positive sigma");
        let mut draws = [0.0; 5];
        for d in &mut draws {
            *d = normal.sample(&mut rng);
        }
        v.p_l_t += draws[0];
        v.p_l_b += draws[1];
        v.p_r_t += draws[2];
        v.p_r_b += draws[3];
        v.p_o = v.p_o.map(|row| (row + draws[4]).clamp(cam.u0 + 0.05, cam.bottom_row()));
    }
    v
}

/// Rows used to invert an image boundary line: the bottom row and a row a
/// quarter of the way from the horizon to the bottom.
fn inversion_rows(cam: &CameraModel) -> (f64, f64) {
    let bottom = cam.bottom_row();
    (bottom, cam.u0 + (bottom - cam.u0) / 4.0)
}

/// Boundary line in the vehicle frame from its top/bottom edge intersections.
fn boundary_ground_points(top: f64, bottom: f64, cam: &CameraModel) -> camgeom::Result<(GroundPoint, GroundPoint)> {
    let (near_row, far_row) = inversion_rows(cam);
    let x_at = |row: f64| top + (bottom - top) * row / cam.bottom_row();
    let near = pixel_to_ground(PixelPoint::new(x_at(near_row), near_row), cam)?;
    let far = pixel_to_ground(PixelPoint::new(x_at(far_row), far_row), cam)?;
    Ok((cam.camera_to_vehicle(near), cam.camera_to_vehicle(far)))
}

fn boundary_distance(top: f64, bottom: f64, cam: &CameraModel) -> Option<f64> {
    let (m, b) = boundary_ground_points(top, bottom, cam).ok()?;
    ground_line_distance(m, b).ok()
}

fn lane_obstacle(v: &PerceptionVector, cam: &CameraModel) -> f64 {
    if !v.lane_present {
        return 0.0;
    }
    v.p_o
        .and_then(|row| obstacle_distance(row, cam).ok())
        .unwrap_or(f64::INFINITY)
}

/// Converts the three vectors to metric measurements. Never fails as a whole:
/// fields whose geometry cannot be inverted are reported absent.
pub fn measurements_from(
    xm: &PerceptionVector,
    xl: &PerceptionVector,
    xr: &PerceptionVector,
    rig: &CameraRig,
) -> LaneMeasurements {
    let pair = |v: &PerceptionVector, cam: &CameraModel| {
        if !v.lane_present {
            return (None, None);
        }
        (
            boundary_distance(v.p_l_t, v.p_l_b, cam),
            boundary_distance(v.p_r_t, v.p_r_b, cam),
        )
    };
    let (d_m_left, d_m_right) = pair(xm, &rig.middle);
    let (d_l_left, d_l_right) = pair(xl, &rig.left);
    let (d_r_left, d_r_right) = pair(xr, &rig.right);
    let v_a = if xm.lane_present {
        boundary_ground_points(xm.p_l_t, xm.p_l_b, &rig.middle)
            .ok()
            .and_then(|(m, b)| ground_line_angle(m, b).ok())
    } else {
        None
    };
    LaneMeasurements {
        d_m_left,
        d_m_right,
        d_l_left,
        d_l_right,
        d_r_left,
        d_r_right,
        v_a,
        o_c: lane_obstacle(xm, &rig.middle),
        o_l: lane_obstacle(xl, &rig.left),
        o_r: lane_obstacle(xr, &rig.right),
    }
}

/// Convenience: all three vectors in `[left, middle, right]` order.
pub fn perceive_all(
    perception: &mut dyn Perception,
    world: &WorldState,
    rig: &CameraRig,
    tick: u64,
) -> [PerceptionVector; 3] {
    CameraSlot::ALL.map(|slot| perception.perceive(world, rig, slot, tick))
}
