//! Lane-change state machine producing the target lateral offset `D_o`.
//!
//! Right changes are implemented directly; left changes run the same logic on
//! mirrored measurements and negate the result.

use crate::cogmap::DrivingIntention;
use crate::percept::LaneMeasurements;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManeuverPhase {
    Lanekeep,
    ChangingInLane,
    ChangingOnBoundary,
}

impl ManeuverPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            ManeuverPhase::Lanekeep => "lanekeep",
            ManeuverPhase::ChangingInLane => "changing_in_lane",
            ManeuverPhase::ChangingOnBoundary => "changing_on_boundary",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            ManeuverPhase::Lanekeep,
            ManeuverPhase::ChangingInLane,
            ManeuverPhase::ChangingOnBoundary,
        ]
        .into_iter()
        .find(|p| p.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Left,
    Right,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManeuverState {
    pub phase: ManeuverPhase,
    pub direction: Direction,
    /// Target-lane width captured when the change started (m).
    pub d: f64,
}

impl ManeuverState {
    pub const LANEKEEP: Self = Self {
        phase: ManeuverPhase::Lanekeep,
        direction: Direction::None,
        d: 0.0,
    };

    pub fn is_changing(&self) -> bool {
        self.phase != ManeuverPhase::Lanekeep
    }

    /// The intention a running maneuver keeps until it completes.
    pub fn latched_intention(&self) -> Option<DrivingIntention> {
        match (self.phase, self.direction) {
            (ManeuverPhase::Lanekeep, _) | (_, Direction::None) => None,
            (_, Direction::Left) => Some(DrivingIntention::ChangeToLeft),
            (_, Direction::Right) => Some(DrivingIntention::ChangeToRight),
        }
    }
}

impl Default for ManeuverState {
    fn default() -> Self {
        Self::LANEKEEP
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerParams {
    /// Middle-camera apparent width above `boundary_ratio * d` means the
    /// vehicle straddles the boundary.
    pub boundary_ratio: f64,
    /// Tolerance for `D_m_right == D_r_right` (m).
    pub boundary_tolerance: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            boundary_ratio: 1.5,
            boundary_tolerance: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanEvent {
    ManeuverStarted,
    ReachedBoundary,
    ManeuverCompleted,
    /// A change was requested or running but the lane measurements it needs
    /// are absent; the planner fell back to keeping the current lane.
    MissingLane,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanOutput {
    pub d_o: f64,
    pub next: ManeuverState,
    pub completed: bool,
    pub event: Option<PlanEvent>,
}

/// Swaps left and right so that right-change logic can serve left changes.
pub fn mirror(m: &LaneMeasurements) -> LaneMeasurements {
    LaneMeasurements {
        d_m_left: m.d_m_right,
        d_m_right: m.d_m_left,
        d_l_left: m.d_r_right,
        d_l_right: m.d_r_left,
        d_r_left: m.d_l_right,
        d_r_right: m.d_l_left,
        v_a: m.v_a.map(|a| -a),
        o_c: m.o_c,
        o_l: m.o_r,
        o_r: m.o_l,
    }
}

/// Signed offset to the center of the lane seen by the middle camera.
fn lanekeep_offset(m: &LaneMeasurements) -> Option<f64> {
    Some((m.d_m_right? - m.d_m_left?) / 2.0)
}

fn hold_lane(m: &LaneMeasurements, event: Option<PlanEvent>) -> PlanOutput {
    PlanOutput {
        d_o: lanekeep_offset(m).unwrap_or(0.0),
        next: ManeuverState::LANEKEEP,
        completed: false,
        event,
    }
}

/// Right-change step on (possibly mirrored) measurements. Returns the offset
/// in the same frame.
fn change_right(state: &ManeuverState, m: &LaneMeasurements, p: &PlannerParams) -> PlanOutput {
    let d = state.d;
    let (Some(m_left), Some(m_right)) = (m.d_m_left, m.d_m_right) else {
        return hold_lane(m, Some(PlanEvent::MissingLane));
    };
    let width = m_left + m_right;
    let straddling = width > p.boundary_ratio * d;
    match state.phase {
        ManeuverPhase::ChangingInLane => {
            let meets_target = matches!(m.d_r_right, Some(r) if (m_right - r).abs() <= p.boundary_tolerance);
            if meets_target || straddling {
                PlanOutput {
                    d_o: m_right - d / 2.0,
                    next: ManeuverState {
                        phase: ManeuverPhase::ChangingOnBoundary,
                        ..*state
                    },
                    completed: false,
                    event: Some(PlanEvent::ReachedBoundary),
                }
            } else if let Some(r_right) = m.d_r_right {
                PlanOutput {
                    d_o: r_right - d / 2.0,
                    next: *state,
                    completed: false,
                    event: None,
                }
            } else {
                hold_lane(m, Some(PlanEvent::MissingLane))
            }
        }
        ManeuverPhase::ChangingOnBoundary if straddling => PlanOutput {
            d_o: m_right - d / 2.0,
            next: *state,
            completed: false,
            event: None,
        },
        _ => PlanOutput {
            d_o: (m_right - m_left) / 2.0,
            next: ManeuverState::LANEKEEP,
            completed: true,
            event: Some(PlanEvent::ManeuverCompleted),
        },
    }
}

fn start_right(m: &LaneMeasurements, direction: Direction) -> PlanOutput {
    match (m.d_r_left, m.d_r_right) {
        (Some(r_left), Some(r_right)) if r_right > r_left => {
            let d = r_right - r_left;
            PlanOutput {
                d_o: r_right - d / 2.0,
                next: ManeuverState {
                    phase: ManeuverPhase::ChangingInLane,
                    direction,
                    d,
                },
                completed: false,
                event: Some(PlanEvent::ManeuverStarted),
            }
        }
        _ => hold_lane(m, Some(PlanEvent::MissingLane)),
    }
}

fn unmirror(mut out: PlanOutput) -> PlanOutput {
    out.d_o = -out.d_o;
    out
}

/// One planning step.
///
/// In lanekeep the intention decides whether a change starts. While a change
/// is running the intention argument is ignored; the maneuver runs until the
/// vehicle has fully entered the target lane.
pub fn plan(
    state: &ManeuverState,
    intent: DrivingIntention,
    m: &LaneMeasurements,
    params: &PlannerParams,
) -> PlanOutput {
    match (state.phase, state.direction) {
        (ManeuverPhase::Lanekeep, _) | (_, Direction::None) => match intent {
            DrivingIntention::ChangeToRight => start_right(m, Direction::Right),
            DrivingIntention::ChangeToLeft => unmirror(start_right(&mirror(m), Direction::Left)),
            _ => hold_lane(m, None),
        },
        (_, Direction::Right) => change_right(state, m, params),
        (_, Direction::Left) => unmirror(change_right(state, &mirror(m), params)),
    }
}
