//! Ground-truth world: straight multi-lane road, kinematic bicycle vehicle
//! and static obstacles.
//!
//! World frame: `x` along the road, `y` lateral and positive to the right,
//! heading `psi` positive when the nose turns right. Lane `0` is the leftmost
//! lane and spans `y` in `[0, lane_width)`.

mod export;
mod mask;
mod scenario;

pub use export::{trajectory_csv, write_pgm, TRAJECTORY_COLUMNS};
pub use mask::render_lane_mask;
pub use scenario::{
    obstacle_scenario, run_scenario, CameraSpec, ControlContext, ControllerKind, ControllerSpec, LstmController,
    NaviEntry, NaviSchedule, ObstacleSpec, RoadSpec, ScenarioConfig, ScenarioError, Simulation, StartSpec,
    SteeringController, TeacherController, Tick, TickEvent, Trajectory, SCHEMA_VERSION,
};

use crate::camgeom::GroundPoint;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Along-road position of the reference point (m).
    pub x: f64,
    /// Lateral position of the reference point (m).
    pub y: f64,
    pub psi: f64,
    pub v: f64,
    /// Last applied road-wheel angle, positive right (rad).
    pub steering: f64,
}

/// Vehicle dimensions. The reference point is where the cameras sit; the
/// body extends `front_overhang` ahead of it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleBody {
    pub wheelbase: f64,
    pub length: f64,
    pub width: f64,
    pub front_overhang: f64,
}

impl Default for VehicleBody {
    fn default() -> Self {
        Self {
            wheelbase: 2.6,
            length: 4.3,
            width: 1.8,
            front_overhang: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Road {
    pub num_lanes: usize,
    pub lane_width: f64,
    pub length: f64,
}

impl Road {
    pub fn width(&self) -> f64 {
        self.num_lanes as f64 * self.lane_width
    }

    pub fn lane_center(&self, lane: usize) -> f64 {
        (lane as f64 + 0.5) * self.lane_width
    }

    /// Lateral position of boundary `k` (`0` is the left road edge).
    pub fn boundary(&self, k: usize) -> f64 {
        k as f64 * self.lane_width
    }

    pub fn lane_of(&self, y: f64) -> Option<usize> {
        if !(0.0..self.width()).contains(&y) {
            return None;
        }
        Some(((y / self.lane_width).floor() as usize).min(self.num_lanes - 1))
    }
}

/// Point in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
}

impl WorldPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub lane: usize,
    /// Along-road position of the obstacle's rear face (m).
    pub x: f64,
    /// Time at which the obstacle becomes present (s).
    pub appear_time: f64,
    pub length: f64,
    pub width: f64,
    pub is_static: bool,
}

impl Obstacle {
    pub fn is_active(&self, t: f64) -> bool {
        t >= self.appear_time
    }

    pub fn footprint(&self, road: &Road) -> [WorldPoint; 4] {
        let c = road.lane_center(self.lane);
        let hw = self.width / 2.0;
        [
            WorldPoint::new(self.x, c - hw),
            WorldPoint::new(self.x + self.length, c - hw),
            WorldPoint::new(self.x + self.length, c + hw),
            WorldPoint::new(self.x, c + hw),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub t: f64,
    pub vehicle: VehicleState,
    pub road: Road,
    pub obstacles: Vec<Obstacle>,
    pub body: VehicleBody,
}

impl WorldState {
    pub fn active_obstacles(&self) -> impl Iterator<Item = &Obstacle> {
        self.obstacles.iter().filter(move |o| o.is_active(self.t))
    }

    /// World point expressed in the vehicle frame (x right, z forward).
    pub fn to_vehicle_frame(&self, wx: f64, wy: f64) -> GroundPoint {
        let (s, c) = self.vehicle.psi.sin_cos();
        let dx = wx - self.vehicle.x;
        let dy = wy - self.vehicle.y;
        GroundPoint::new(-dx * s + dy * c, dx * c + dy * s)
    }

    /// Vehicle-frame point expressed in world coordinates `(x, y)`.
    pub fn to_world_frame(&self, g: GroundPoint) -> (f64, f64) {
        let (s, c) = self.vehicle.psi.sin_cos();
        (self.vehicle.x + g.z * c - g.x * s, self.vehicle.y + g.z * s + g.x * c)
    }

    /// Body corners in world coordinates, in perimeter order.
    pub fn vehicle_footprint(&self) -> [WorldPoint; 4] {
        let b = &self.body;
        let hw = b.width / 2.0;
        let front = b.front_overhang;
        let rear = b.front_overhang - b.length;
        [(front, -hw), (front, hw), (rear, hw), (rear, -hw)].map(|(lon, lat)| {
            let (x, y) = self.to_world_frame(GroundPoint::new(lat, lon));
            WorldPoint::new(x, y)
        })
    }

    /// First active obstacle overlapping the vehicle body.
    pub fn collision(&self) -> Option<usize> {
        let ego = self.vehicle_footprint();
        self.obstacles
            .iter()
            .enumerate()
            .filter(|(_, o)| o.is_active(self.t))
            .find(|(_, o)| polygons_overlap(&ego, &o.footprint(&self.road)))
            .map(|(i, _)| i)
    }

    /// Whether every body corner is on the road surface.
    pub fn on_road(&self) -> bool {
        let w = self.road.width();
        self.vehicle_footprint().iter().all(|p| (0.0..=w).contains(&p.y))
    }
}

/// Separating-axis test for two convex quadrilaterals.
pub fn polygons_overlap(a: &[WorldPoint; 4], b: &[WorldPoint; 4]) -> bool {
    let separated_on = |poly: &[WorldPoint; 4]| {
        (0..4).any(|i| {
            let p = poly[i];
            let q = poly[(i + 1) % 4];
            let axis = (-(q.y - p.y), q.x - p.x);
            let project = |pts: &[WorldPoint; 4]| {
                pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                    let d = r.x * axis.0 + r.y * axis.1;
                    (lo.min(d), hi.max(d))
                })
            };
            let (a_lo, a_hi) = project(a);
            let (b_lo, b_hi) = project(b);
            a_hi < b_lo || b_hi < a_lo
        })
    };
    !(separated_on(a) || separated_on(b))
}

/// One explicit-Euler step of the kinematic bicycle model.
pub fn step(w: &WorldState, steering: f64, accel: f64, dt: f64) -> WorldState {
    let mut next = w.clone();
    let v = w.vehicle.v;
    let (s, c) = w.vehicle.psi.sin_cos();
    next.vehicle.x += v * c * dt;
    next.vehicle.y += v * s * dt;
    next.vehicle.psi += v / w.body.wheelbase * steering.tan() * dt;
    next.vehicle.v = (v + accel * dt).max(0.0);
    next.vehicle.steering = steering;
    next.t = w.t + dt;
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn world(v: f64) -> WorldState {
        WorldState {
            t: 0.0,
            vehicle: VehicleState {
                x: 0.0,
                y: 5.25,
                psi: 0.0,
                v,
                steering: 0.0,
            },
            road: Road {
                num_lanes: 3,
                lane_width: 3.5,
                length: 500.0,
            },
            obstacles: vec![],
            body: VehicleBody::default(),
        }
    }

    #[test]
    fn straight_advance() {
        let w = step(&world(10.0), 0.0, 0.0, 0.05);
        assert_abs_diff_eq!(w.vehicle.x, 0.5, epsilon = 1e-12);
        assert_eq!(w.vehicle.y, 5.25);
        assert_eq!(w.vehicle.v, 10.0);
    }

    #[test]
    fn standing_vehicle_does_not_move() {
        let w0 = world(0.0);
        let w = step(&w0, 0.4, 0.0, 0.05);
        assert_eq!(w.vehicle.x, w0.vehicle.x);
        assert_eq!(w.vehicle.y, w0.vehicle.y);
        assert_eq!(w.vehicle.psi, w0.vehicle.psi);
    }

    #[test]
    fn constant_steering_traces_circle() {
        let delta: f64 = 0.1;
        let mut w = world(10.0);
        let dt = 0.05;
        let steps = 100;
        for _ in 0..steps {
            w = step(&w, delta, 0.0, dt);
        }
        let t = steps as f64 * dt;
        let expected = 10.0 * t * delta.tan() / w.body.wheelbase;
        assert!((w.vehicle.psi - expected).abs() < 1e-3);
        // Positions stay on the circle of radius L / tan(delta).
        let r = w.body.wheelbase / delta.tan();
        let (cx, cy) = (0.0, 5.25 + r);
        let dist = (w.vehicle.x - cx).hypot(w.vehicle.y - cy);
        assert!((dist - r).abs() / r < 0.01);
    }

    #[test]
    fn speed_never_negative() {
        let w = step(&world(0.1), 0.0, -10.0, 0.05);
        assert_eq!(w.vehicle.v, 0.0);
    }

    #[test]
    fn frames_round_trip() {
        let mut w = world(10.0);
        w.vehicle.psi = 0.2;
        w.vehicle.x = 12.0;
        let g = w.to_vehicle_frame(40.0, 2.0);
        let (x, y) = w.to_world_frame(g);
        assert_abs_diff_eq!(x, 40.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn collision_against_obstacle_ahead() {
        let mut w = world(10.0);
        w.obstacles.push(Obstacle {
            lane: 1,
            x: 0.3,
            appear_time: 0.0,
            length: 4.3,
            width: 1.8,
            is_static: true,
        });
        assert_eq!(w.collision(), Some(0));
        w.obstacles[0].x = 0.6;
        assert_eq!(w.collision(), None);
        w.obstacles[0].x = 0.3;
        w.obstacles[0].lane = 0;
        assert_eq!(w.collision(), None);
        w.obstacles[0].lane = 1;
        w.obstacles[0].appear_time = 1.0;
        assert_eq!(w.collision(), None);
    }

    #[test]
    fn lane_lookup() {
        let r = world(0.0).road;
        assert_eq!(r.lane_of(0.0), Some(0));
        assert_eq!(r.lane_of(3.6), Some(1));
        assert_eq!(r.lane_of(10.49), Some(2));
        assert_eq!(r.lane_of(-0.1), None);
        assert_eq!(r.lane_of(10.5), None);
        assert_eq!(r.lane_center(1), 5.25);
    }
}
