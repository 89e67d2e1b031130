//! Flat-ground pinhole geometry.
//!
//! Axis convention: `u0` is the principal-point *row* and pairs with pixel
//! `y`; `v0` is the principal-point *column* and pairs with pixel `x`. Ground
//! points use `x` lateral (positive right) and `z` forward, both in meters.
//! The camera pitch is zero, so the horizon sits exactly on row `u0` and a
//! pixel below it intersects the road plane at depth `f * H / (y - u0)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Two ground points closer than this are treated as the same point.
pub const DEGENERATE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeomError {
    #[error("pixel row {row} is at or above the horizon row {horizon}")]
    HorizonViolation { row: f64, horizon: f64 },
    #[error("point depth {depth} m is not in front of the camera")]
    NonPositiveDepth { depth: f64 },
    #[error("boundary points coincide on the ground plane")]
    DegenerateBoundary,
    #[error("invalid camera: {0}")]
    InvalidCamera(&'static str),
}

pub type Result<T, E = GeomError> = std::result::Result<T, E>;

/// Intrinsics and mounting of one road-facing camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    /// Focal length in pixels.
    pub focal: f64,
    /// Principal-point row (pixels).
    pub u0: f64,
    /// Principal-point column (pixels).
    pub v0: f64,
    /// Mounting height above the road (m).
    pub height: f64,
    /// Mounting yaw relative to the vehicle axis, positive to the right (rad).
    pub yaw: f64,
    /// Lateral mounting offset, positive to the right (m).
    pub lateral_offset: f64,
    pub image_w: u32,
    pub image_h: u32,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            focal: 160.0,
            u0: 120.0,
            v0: 160.0,
            height: 1.5,
            yaw: 0.0,
            lateral_offset: 0.0,
            image_w: 320,
            image_h: 240,
        }
    }
}

impl CameraModel {
    pub fn with_yaw(mut self, yaw: f64) -> Self {
        self.yaw = yaw;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal.is_finite() && self.focal > 0.0) {
            return Err(GeomError::InvalidCamera("focal length must be positive"));
        }
        if !(self.height.is_finite() && self.height > 0.0) {
            return Err(GeomError::InvalidCamera("mounting height must be positive"));
        }
        if !(self.u0 >= 0.0 && self.u0 < f64::from(self.image_h)) {
            return Err(GeomError::InvalidCamera("u0 must lie inside the image rows"));
        }
        if !(self.v0 >= 0.0 && self.v0 < f64::from(self.image_w)) {
            return Err(GeomError::InvalidCamera("v0 must lie inside the image columns"));
        }
        if !(self.yaw.is_finite() && self.lateral_offset.is_finite()) {
            return Err(GeomError::InvalidCamera("mounting pose must be finite"));
        }
        Ok(())
    }

    /// Last image row index.
    pub fn bottom_row(&self) -> f64 {
        f64::from(self.image_h) - 1.0
    }

    /// Ground depth seen by the bottom image row.
    pub fn bottom_row_depth(&self) -> f64 {
        self.focal * self.height / (self.bottom_row() - self.u0)
    }

    /// Vehicle-frame ground point to this camera's ground frame.
    pub fn vehicle_to_camera(&self, g: GroundPoint) -> GroundPoint {
        let (s, c) = self.yaw.sin_cos();
        let x = g.x - self.lateral_offset;
        GroundPoint {
            x: x * c - g.z * s,
            z: g.z * c + x * s,
        }
    }

    /// Inverse of [`CameraModel::vehicle_to_camera`].
    pub fn camera_to_vehicle(&self, g: GroundPoint) -> GroundPoint {
        let (s, c) = self.yaw.sin_cos();
        GroundPoint {
            x: g.x * c + g.z * s + self.lateral_offset,
            z: g.z * c - g.x * s,
        }
    }
}

/// A point on the road plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundPoint {
    /// Lateral, positive right (m).
    pub x: f64,
    /// Forward (m).
    pub z: f64,
}

impl GroundPoint {
    pub const fn new(x: f64, z: f64) -> Self {
        Self { x, z }
    }
}

/// Sub-pixel image location; may fall outside the frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    /// Column.
    pub x: f64,
    /// Row.
    pub y: f64,
}

impl PixelPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

pub fn pixel_to_ground(p: PixelPoint, cam: &CameraModel) -> Result<GroundPoint> {
    let dy = p.y - cam.u0;
    if !(dy > 0.0) {
        return Err(GeomError::HorizonViolation {
            row: p.y,
            horizon: cam.u0,
        });
    }
    Ok(GroundPoint {
        x: (p.x - cam.v0) * cam.height / dy,
        z: cam.focal * cam.height / dy,
    })
}

pub fn ground_to_pixel(g: GroundPoint, cam: &CameraModel) -> Result<PixelPoint> {
    if !(g.z > 0.0) {
        return Err(GeomError::NonPositiveDepth { depth: g.z });
    }
    Ok(PixelPoint {
        x: cam.v0 + cam.focal * g.x / g.z,
        y: cam.u0 + cam.focal * cam.height / g.z,
    })
}

/// Orders two boundary points so the second one is the far point.
fn near_far(a: GroundPoint, b: GroundPoint) -> Result<(GroundPoint, GroundPoint)> {
    if (b.x - a.x).hypot(b.z - a.z) <= DEGENERATE_TOLERANCE {
        return Err(GeomError::DegenerateBoundary);
    }
    Ok(if b.z >= a.z { (a, b) } else { (b, a) })
}

/// Perpendicular distance from the frame origin to the line through `m` and `b`.
pub fn ground_line_distance(m: GroundPoint, b: GroundPoint) -> Result<f64> {
    let (m, b) = near_far(m, b)?;
    let num = (m.x * b.z - b.x * m.z).abs();
    Ok(num / ((b.x - m.x).powi(2) + (b.z - m.z).powi(2)).sqrt())
}

/// Angle of the line through `m` and `b` against the forward axis.
pub fn ground_line_angle(m: GroundPoint, b: GroundPoint) -> Result<f64> {
    let (m, b) = near_far(m, b)?;
    if b.z == m.z {
        // Boundary perpendicular to the heading.
        return Ok(if b.x >= m.x {
            std::f64::consts::FRAC_PI_2
        } else {
            -std::f64::consts::FRAC_PI_2
        });
    }
    Ok(((b.x - m.x) / (b.z - m.z)).atan())
}

pub fn lane_distance(pm: PixelPoint, pb: PixelPoint, cam: &CameraModel) -> Result<f64> {
    ground_line_distance(pixel_to_ground(pm, cam)?, pixel_to_ground(pb, cam)?)
}

/// Angle between the vehicle axis and the boundary through `pm` and `pb`.
///
/// The far point is always taken as the second point, so the sign does not
/// depend on argument order.
pub fn vehicle_lane_angle(pm: PixelPoint, pb: PixelPoint, cam: &CameraModel) -> Result<f64> {
    ground_line_angle(pixel_to_ground(pm, cam)?, pixel_to_ground(pb, cam)?)
}

pub fn obstacle_distance(o_y: f64, cam: &CameraModel) -> Result<f64> {
    let dy = o_y - cam.u0;
    if !(dy > 0.0) {
        return Err(GeomError::HorizonViolation {
            row: o_y,
            horizon: cam.u0,
        });
    }
    Ok(cam.focal * cam.height / dy)
}

/// Rigid transform `P' = R * P + T` in camera coordinates (x right, y down,
/// z forward).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl RigidTransform {
    pub const IDENTITY: Self = Self {
        rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        translation: [0.0; 3],
    };

    /// Rotation about the vertical axis; a point straight ahead moves to
    /// `(d sin a, d cos a)`.
    pub fn yaw(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            rotation: [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
            translation: [0.0; 3],
        }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        Self {
            translation: t,
            ..Self::IDENTITY
        }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let mut out = self.translation;
        for (i, row) in r.iter().enumerate() {
            out[i] += row[0] * p[0] + row[1] * p[1] + row[2] * p[2];
        }
        out
    }

    /// `self` applied first, then `next`.
    pub fn then(&self, next: &RigidTransform) -> RigidTransform {
        let mut rotation = [[0.0; 3]; 3];
        for (i, row) in rotation.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| next.rotation[i][k] * self.rotation[k][j]).sum();
            }
        }
        RigidTransform {
            rotation,
            translation: next.apply(self.translation),
        }
    }
}

/// Moves an image point to a virtual viewpoint, assuming it lies on the road.
///
/// The pixel is lifted with `Z = f H / (y - u0)`, `X = Z (x - v0) / f`,
/// `Y = H`, moved rigidly and projected back through the same intrinsics.
/// Chained calls compose exactly when the transforms keep the road plane at
/// height `H` (yaw rotations and horizontal translations).
pub fn viewpoint_transform(p: PixelPoint, cam: &CameraModel, transform: &RigidTransform) -> Result<PixelPoint> {
    let g = pixel_to_ground(p, cam)?;
    let [x, y, z] = transform.apply([g.x, cam.height, g.z]);
    if !(z > 0.0) {
        return Err(GeomError::NonPositiveDepth { depth: z });
    }
    Ok(PixelPoint {
        x: cam.v0 + cam.focal * x / z,
        y: cam.u0 + cam.focal * y / z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cam() -> CameraModel {
        CameraModel::default()
    }

    #[test]
    fn pixel_to_ground_reference_point() {
        let g = pixel_to_ground(PixelPoint::new(188.0, 144.0), &cam()).unwrap();
        assert_abs_diff_eq!(g.x, 1.75, epsilon = 1e-12);
        assert_abs_diff_eq!(g.z, 10.0, epsilon = 1e-12);
    }

    #[test]
    fn principal_column_is_on_axis() {
        let c = cam();
        for z in [4.0, 10.0, 37.5, 80.0] {
            let g = pixel_to_ground(PixelPoint::new(c.v0, c.u0 + c.focal * c.height / z), &c).unwrap();
            assert_eq!(g.x, 0.0);
            assert_abs_diff_eq!(g.z, z, epsilon = 1e-12);
        }
    }

    #[test]
    fn horizon_row_has_no_ground() {
        let err = pixel_to_ground(PixelPoint::new(160.0, 120.0), &cam()).unwrap_err();
        assert!(matches!(err, GeomError::HorizonViolation { .. }));
    }

    #[test]
    fn ground_to_pixel_reference_point() {
        let p = ground_to_pixel(GroundPoint::new(1.75, 10.0), &cam()).unwrap();
        assert_abs_diff_eq!(p.x, 188.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.y, 144.0, epsilon = 1e-12);
        assert_eq!(ground_to_pixel(GroundPoint::new(0.0, 33.0), &cam()).unwrap().x, 160.0);
        assert!(matches!(
            ground_to_pixel(GroundPoint::new(1.75, -5.0), &cam()),
            Err(GeomError::NonPositiveDepth { .. })
        ));
    }

    #[test]
    fn lane_distance_examples() {
        let c = cam();
        let px = |x, z| ground_to_pixel(GroundPoint::new(x, z), &c).unwrap();
        assert_abs_diff_eq!(
            lane_distance(px(1.75, 5.0), px(1.75, 20.0), &c).unwrap(),
            1.75,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            lane_distance(px(0.0, 5.0), px(0.0, 20.0), &c).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        // Line at 0.1 rad through (2, 0): its distance from the origin is
        // 2 cos(0.1).
        let tilted = |z: f64| px(2.0 + 0.1f64.tan() * z, z);
        assert_abs_diff_eq!(
            lane_distance(tilted(10.0), tilted(20.0), &c).unwrap(),
            2.0 * 0.1f64.cos(),
            epsilon = 1e-12
        );
        // The parallel line through (2, 10) sits 10 sin(0.1) closer.
        let far = px(2.0 + 0.1f64.tan() * 10.0, 20.0);
        assert_abs_diff_eq!(
            lane_distance(px(2.0, 10.0), far, &c).unwrap(),
            2.0 * 0.1f64.cos() - 10.0 * 0.1f64.sin(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn degenerate_boundary() {
        let p = PixelPoint::new(170.0, 150.0);
        assert_eq!(lane_distance(p, p, &cam()), Err(GeomError::DegenerateBoundary));
        assert_eq!(vehicle_lane_angle(p, p, &cam()), Err(GeomError::DegenerateBoundary));
    }

    #[test]
    fn lane_angle_examples() {
        let c = cam();
        let px = |x, z| ground_to_pixel(GroundPoint::new(x, z), &c).unwrap();
        assert_abs_diff_eq!(
            vehicle_lane_angle(px(1.75, 5.0), px(1.75, 20.0), &c).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        let a = vehicle_lane_angle(px(0.0, 10.0), px(1.0, 11.0), &c).unwrap();
        assert_abs_diff_eq!(a, std::f64::consts::FRAC_PI_4, epsilon = 1e-12);
        let swapped = vehicle_lane_angle(px(1.0, 11.0), px(0.0, 10.0), &c).unwrap();
        assert_eq!(a, swapped);
    }

    #[test]
    fn obstacle_distance_examples() {
        let c = cam();
        assert_abs_diff_eq!(obstacle_distance(144.0, &c).unwrap(), 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            obstacle_distance(c.u0 + c.focal * c.height, &c).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert!(matches!(
            obstacle_distance(110.0, &c),
            Err(GeomError::HorizonViolation { .. })
        ));
    }

    #[test]
    fn viewpoint_identity_and_shift() {
        let c = cam();
        let p = PixelPoint::new(201.3, 171.9);
        assert_eq!(viewpoint_transform(p, &c, &RigidTransform::IDENTITY).unwrap(), p);

        let src = ground_to_pixel(GroundPoint::new(1.75, 10.0), &c).unwrap();
        let shifted = viewpoint_transform(src, &c, &RigidTransform::translation([-1.75, 0.0, 0.0])).unwrap();
        assert_abs_diff_eq!(shifted.x, c.v0, epsilon = 1e-9);
        assert_abs_diff_eq!(shifted.y, src.y, epsilon = 1e-9);
    }

    #[test]
    fn viewpoint_behind_camera_rejected() {
        let c = cam();
        let src = ground_to_pixel(GroundPoint::new(0.0, 10.0), &c).unwrap();
        let err = viewpoint_transform(src, &c, &RigidTransform::translation([0.0, 0.0, -12.0]));
        assert!(matches!(err, Err(GeomError::NonPositiveDepth { .. })));
    }

    #[test]
    fn camera_validation() {
        assert!(cam().validate().is_ok());
        let mut bad = cam();
        bad.focal = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = cam();
        bad.u0 = 240.0;
        assert!(bad.validate().is_err());
        let mut bad = cam();
        bad.height = -1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn mounting_frames_are_inverse() {
        let c = CameraModel {
            yaw: 0.43,
            lateral_offset: -0.3,
            ..cam()
        };
        let g = GroundPoint::new(2.5, 17.0);
        let back = c.camera_to_vehicle(c.vehicle_to_camera(g));
        assert_abs_diff_eq!(back.x, g.x, epsilon = 1e-12);
        assert_abs_diff_eq!(back.z, g.z, epsilon = 1e-12);
    }
}
