//! Cognitive map assembly and intention generation from navigation guidance
//! and per-lane obstacle distances.

use crate::percept::PerceptionVector;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NavigationCommand {
    StayInLane,
    ChangeToLeft,
    ChangeToRight,
}

impl NavigationCommand {
    pub const ALL: [NavigationCommand; 3] = [
        NavigationCommand::StayInLane,
        NavigationCommand::ChangeToLeft,
        NavigationCommand::ChangeToRight,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NavigationCommand::StayInLane => "stay_in_lane",
            NavigationCommand::ChangeToLeft => "change_to_left",
            NavigationCommand::ChangeToRight => "change_to_right",
        }
    }

    pub fn is_lane_change(self) -> bool {
        self != NavigationCommand::StayInLane
    }
}

impl fmt::Display for NavigationCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NavigationCommand {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown navigation command `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrivingIntention {
    StayInLane,
    ChangeToLeft,
    ChangeToRight,
    BrakeAndStayInLane,
}

impl DrivingIntention {
    pub const ALL: [DrivingIntention; 4] = [
        DrivingIntention::StayInLane,
        DrivingIntention::ChangeToLeft,
        DrivingIntention::ChangeToRight,
        DrivingIntention::BrakeAndStayInLane,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DrivingIntention::StayInLane => "stay_in_lane",
            DrivingIntention::ChangeToLeft => "change_to_left",
            DrivingIntention::ChangeToRight => "change_to_right",
            DrivingIntention::BrakeAndStayInLane => "brake_and_stay_in_lane",
        }
    }

    pub fn one_hot(self) -> [f64; 4] {
        let mut v = [0.0; 4];
        v[self as usize] = 1.0;
        v
    }
}

impl fmt::Display for DrivingIntention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DrivingIntention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown driving intention `{s}`"))
    }
}

/// Safety distance as `max(min_distance, headway * speed)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SafetyParams {
    pub min_distance: f64,
    pub headway: f64,
}

impl Default for SafetyParams {
    fn default() -> Self {
        Self {
            min_distance: 15.0,
            headway: 2.0,
        }
    }
}

impl SafetyParams {
    pub fn distance(&self, speed: f64) -> f64 {
        self.min_distance.max(self.headway * speed)
    }
}

/// Vehicle states fed into the map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleStateRecord {
    /// m/s
    pub speed: f64,
    /// rad/s
    pub yaw_rate: f64,
    /// rad
    pub prev_steering: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CognitiveMap {
    pub xm: PerceptionVector,
    pub xl: PerceptionVector,
    pub xr: PerceptionVector,
    pub intention: DrivingIntention,
    pub vstate: VehicleStateRecord,
    /// Signed lateral distance to the target centerline, positive when the
    /// target is to the right (m).
    pub d_o: f64,
}

/// Turns guidance and obstacle distances into a driving intention.
///
/// Every comparison against the safety distance is `>=`, so a lane whose
/// obstacle sits exactly at the safety distance counts as free.
pub fn derive_intention(g: NavigationCommand, o_c: f64, o_l: f64, o_r: f64, safety: f64) -> DrivingIntention {
    use DrivingIntention::*;
    match g {
        NavigationCommand::StayInLane if o_c >= safety => StayInLane,
        NavigationCommand::StayInLane => {
            if o_l >= safety {
                ChangeToLeft
            } else if o_r >= safety {
                ChangeToRight
            } else {
                BrakeAndStayInLane
            }
        }
        NavigationCommand::ChangeToLeft if o_l >= safety => ChangeToLeft,
        NavigationCommand::ChangeToRight if o_r >= safety => ChangeToRight,
        _ => BrakeAndStayInLane,
    }
}

pub fn build_map(
    xm: PerceptionVector,
    xl: PerceptionVector,
    xr: PerceptionVector,
    intention: DrivingIntention,
    vstate: VehicleStateRecord,
    d_o: f64,
) -> CognitiveMap {
    CognitiveMap {
        xm,
        xl,
        xr,
        intention,
        vstate,
        d_o,
    }
}
