//! Analytic driver model: proportional steering on the target offset and the
//! lane angle, proportional speed tracking, constant-deceleration braking.
//!
//! Steering is positive to the right, matching the sign of `D_o`. Since
//! `V_a` is negative when the nose points right of the lane, heading is
//! corrected with `+k_h * V_a`.

use crate::cogmap::DrivingIntention;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherGains {
    /// rad per meter of target offset
    pub k_p: f64,
    /// rad per rad of lane angle
    pub k_h: f64,
    /// 1/s, speed tracking
    pub k_v: f64,
    pub steer_limit: f64,
    /// rad/s
    pub steer_rate_limit: f64,
    /// The offset term saturates at this many meters.
    pub offset_clip: f64,
    /// m/s^2
    pub accel_limit: f64,
}

impl Default for TeacherGains {
    fn default() -> Self {
        Self {
            k_p: 0.05,
            k_h: 0.3,
            k_v: 0.5,
            steer_limit: 0.5,
            steer_rate_limit: 1.0,
            offset_clip: 1.0,
            accel_limit: 2.0,
        }
    }
}

impl TeacherGains {
    pub fn validate(&self) -> Result<(), &'static str> {
        let all = [
            self.k_p,
            self.k_h,
            self.k_v,
            self.steer_limit,
            self.steer_rate_limit,
            self.offset_clip,
            self.accel_limit,
        ];
        if all.iter().all(|g| g.is_finite() && *g > 0.0) {
            Ok(())
        } else {
            Err("teacher gains must be finite and positive")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpeedRule {
    pub cruise_speed: f64,
    pub brake_decel: f64,
}

impl Default for SpeedRule {
    fn default() -> Self {
        Self {
            cruise_speed: 40.0 / 3.6,
            brake_decel: 3.0,
        }
    }
}

/// Unlimited-rate steering law, clamped to the magnitude limit.
pub fn steer(g: &TeacherGains, d_o: f64, v_a: f64, _speed: f64) -> f64 {
    let offset = d_o.clamp(-g.offset_clip, g.offset_clip);
    (g.k_p * offset + g.k_h * v_a).clamp(-g.steer_limit, g.steer_limit)
}

pub fn speed_command(rule: &SpeedRule, g: &TeacherGains, intent: DrivingIntention, speed: f64) -> f64 {
    if intent == DrivingIntention::BrakeAndStayInLane {
        return if speed > 0.0 { -rule.brake_decel } else { 0.0 };
    }
    (g.k_v * (rule.cruise_speed - speed)).clamp(-g.accel_limit, g.accel_limit)
}

/// Steering law plus the rate limiter state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Teacher {
    pub gains: TeacherGains,
    prev: f64,
}

impl Teacher {
    pub fn new(gains: TeacherGains) -> Self {
        Self { gains, prev: 0.0 }
    }

    pub fn reset(&mut self, steering: f64) {
        self.prev = steering;
    }

    pub fn command(&mut self, d_o: f64, v_a: f64, speed: f64, dt: f64) -> f64 {
        let raw = steer(&self.gains, d_o, v_a, speed);
        let max_delta = self.gains.steer_rate_limit * dt;
        let cmd = raw.clamp(self.prev - max_delta, self.prev + max_delta);
        self.prev = cmd;
        cmd
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn gains() -> TeacherGains {
        TeacherGains {
            k_p: 0.2,
            k_h: 1.0,
            offset_clip: 10.0,
            ..TeacherGains::default()
        }
    }

    #[test]
    fn equilibrium_is_zero() {
        assert_eq!(steer(&gains(), 0.0, 0.0, 11.0), 0.0);
    }

    #[test]
    fn offset_and_heading_terms() {
        assert_abs_diff_eq!(steer(&gains(), 0.5, 0.0, 11.0), 0.1, epsilon = 1e-15);
        // Nose 0.05 rad left of the lane (V_a > 0) steers right.
        assert_abs_diff_eq!(steer(&gains(), 0.0, 0.05, 11.0), 0.05, epsilon = 1e-15);
    }

    #[test]
    fn offset_clip_and_magnitude_limit() {
        let g = TeacherGains::default();
        assert_abs_diff_eq!(steer(&g, 3.5, 0.0, 11.0), g.k_p * g.offset_clip);
        let g = gains();
        assert_eq!(steer(&g, 9.0, 0.0, 11.0), g.steer_limit);
        assert_eq!(steer(&g, -9.0, 0.0, 11.0), -g.steer_limit);
    }

    #[test]
    fn rate_limit_holds_every_tick() {
        let mut t = Teacher::new(gains());
        let dt = 0.05;
        let mut prev = 0.0;
        for k in 0..40 {
            let d_o = if k < 20 { 5.0 } else { -5.0 };
            let cmd = t.command(d_o, 0.0, 11.0, dt);
            assert!((cmd - prev).abs() <= 1.0 * dt + 1e-15);
            assert!(cmd.abs() <= 0.5);
            prev = cmd;
        }
    }

    #[test]
    fn speed_law() {
        let rule = SpeedRule::default();
        let g = TeacherGains::default();
        assert_eq!(
            speed_command(&rule, &g, DrivingIntention::StayInLane, rule.cruise_speed),
            0.0
        );
        assert_eq!(
            speed_command(&rule, &g, DrivingIntention::BrakeAndStayInLane, 7.0),
            -3.0
        );
        assert_eq!(speed_command(&rule, &g, DrivingIntention::BrakeAndStayInLane, 0.0), 0.0);
        // 5 m/s below cruise: 2.5 requested, capped at the 2.0 default limit.
        assert_eq!(
            speed_command(&rule, &g, DrivingIntention::StayInLane, rule.cruise_speed - 5.0),
            2.0
        );
        let loose = TeacherGains { accel_limit: 3.0, ..g };
        assert_abs_diff_eq!(
            speed_command(&rule, &loose, DrivingIntention::ChangeToLeft, rule.cruise_speed - 5.0),
            2.5,
            epsilon = 1e-12
        );
    }
}
