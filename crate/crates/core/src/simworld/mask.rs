use super::WorldState;
use crate::camgeom::{pixel_to_ground, CameraModel, PixelPoint};
use crate::evalkit::BitMask;
use crate::percept::{designated_lanes, CameraSlot};

/// Camera depth of the nearest active obstacle in `lanes` that has not been
/// passed, measured at its rear-center point.
fn nearest_obstacle_depth(world: &WorldState, cam: &CameraModel, lanes: (usize, usize)) -> Option<f64> {
    world
        .active_obstacles()
        .filter(|o| (lanes.0..=lanes.1).contains(&o.lane))
        .filter_map(|o| {
            let c = world.road.lane_center(o.lane);
            let front = cam.vehicle_to_camera(world.to_vehicle_frame(o.x + o.length, c)).z;
            (front > 0.0).then(|| cam.vehicle_to_camera(world.to_vehicle_frame(o.x, c)).z)
        })
        .min_by(|a, b| a.total_cmp(b))
}

/// Ground-truth free space for the camera in `slot`: pixels strictly below
/// the horizon whose ground point lies between the designated lane's
/// boundaries and nearer than the first obstacle in that lane.
pub fn render_lane_mask(world: &WorldState, cam: &CameraModel, slot: CameraSlot) -> BitMask {
    let mut mask = BitMask::new(cam.image_w as usize, cam.image_h as usize);
    let Some(lanes) = designated_lanes(world, slot) else {
        return mask;
    };
    let left = world.road.boundary(lanes.0);
    let right = world.road.boundary(lanes.1 + 1);
    let limit = nearest_obstacle_depth(world, cam, lanes).unwrap_or(f64::INFINITY);
    for row in 0..cam.image_h as usize {
        if row as f64 <= cam.u0 {
            continue;
        }
        for col in 0..cam.image_w as usize {
            let Ok(g) = pixel_to_ground(PixelPoint::new(col as f64, row as f64), cam) else {
                continue;
            };
            if g.z >= limit {
                continue;
            }
            let (_, wy) = world.to_world_frame(cam.camera_to_vehicle(g));
            if (left..right).contains(&wy) {
                mask.set(col, row, true);
            }
        }
    }
    mask
}
