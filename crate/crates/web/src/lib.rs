//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each export is a thin wrapper over a plain function so the logic is
//! testable natively. Scenarios cross the boundary as JSON text.

use cogdrive_core::camgeom::CameraModel;
use cogdrive_core::cogmap::{derive_intention, NavigationCommand, SafetyParams};
use cogdrive_core::percept::CameraSlot;
use cogdrive_core::simworld::{
    obstacle_scenario, render_lane_mask, run_scenario, NaviEntry, NaviSchedule, ScenarioConfig, TeacherController,
    Trajectory,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct Frame {
    t: f64,
    x: f64,
    y: f64,
    psi: f64,
    steering: f64,
    intention: &'static str,
    phase: &'static str,
}

#[derive(Serialize)]
struct ObstacleView {
    lane: usize,
    x: f64,
    length: f64,
    width: f64,
}

#[derive(Serialize)]
struct SimulationView {
    num_lanes: usize,
    lane_width: f64,
    obstacles: Vec<ObstacleView>,
    frames: Vec<Frame>,
    collided: bool,
    changes_completed: usize,
    outcome: String,
}

/// Two-lane obstacle scenario, optionally with a scripted command at `nav_t`.
pub fn preset(lane_width: f64, obstacle_x: f64, nav: &str, nav_t: f64) -> Result<String, String> {
    let mut cfg = obstacle_scenario(lane_width, obstacle_x);
    if !nav.is_empty() {
        let command: NavigationCommand = nav.parse()?;
        cfg.navigation = NaviSchedule(vec![NaviEntry { t: nav_t, command }]);
    }
    cfg.validate().map_err(|e| e.to_string())?;
    serde_json::to_string(&cfg).map_err(|e| e.to_string())
}

fn parse(config_json: &str) -> Result<ScenarioConfig, String> {
    let cfg: ScenarioConfig = serde_json::from_str(config_json).map_err(|e| format!("invalid scenario: {e}"))?;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn drive(cfg: &ScenarioConfig) -> Result<Trajectory, String> {
    run_scenario(cfg, &mut TeacherController::new(cfg.teacher)).map_err(|e| e.to_string())
}

/// Closed-loop teacher run, reduced to what the page draws.
pub fn simulate_json(config_json: &str) -> Result<String, String> {
    let cfg = parse(config_json)?;
    let traj = drive(&cfg)?;
    let first = traj.ticks.first().ok_or("scenario produced no ticks")?;
    let view = SimulationView {
        num_lanes: traj.road.num_lanes,
        lane_width: traj.road.lane_width,
        obstacles: first
            .world
            .obstacles
            .iter()
            .map(|o| ObstacleView {
                lane: o.lane,
                x: o.x,
                length: o.length,
                width: o.width,
            })
            .collect(),
        frames: traj
            .ticks
            .iter()
            .map(|t| Frame {
                t: t.t,
                x: t.world.vehicle.x,
                y: t.world.vehicle.y,
                psi: t.world.vehicle.psi,
                steering: t.steering,
                intention: t.intention.as_str(),
                phase: t.phase.as_str(),
            })
            .collect(),
        collided: traj.collided(),
        changes_completed: traj.changes_completed(),
        outcome: traj.ticks.last().map(|t| t.event_label()).unwrap_or_default(),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

fn slot(name: &str) -> Result<CameraSlot, String> {
    match name {
        "left" => Ok(CameraSlot::Left),
        "middle" => Ok(CameraSlot::Middle),
        "right" => Ok(CameraSlot::Right),
        other => Err(format!("unknown camera {other:?}")),
    }
}

/// Free-space mask seen by one camera at tick `index` (clamped to the last
/// tick), row-major, one byte per pixel.
pub fn camera_mask(config_json: &str, index: usize, camera: &str) -> Result<Vec<u8>, String> {
    let cfg = parse(config_json)?;
    let slot = slot(camera)?;
    let traj = drive(&cfg)?;
    let tick = traj
        .ticks
        .get(index)
        .or(traj.ticks.last())
        .ok_or("scenario produced no ticks")?;
    let cam: CameraModel = *cfg.camera.rig().camera(slot);
    let mask = render_lane_mask(&tick.world, &cam, slot);
    Ok(mask.pixels().iter().map(|&b| u8::from(b)).collect())
}

/// Intention for a guidance command and three obstacle distances (m) at
/// `speed` (m/s) under the default safety rule. Negative distances mean a
/// clear lane.
pub fn intention_for(nav: &str, o_c: f64, o_l: f64, o_r: f64, speed: f64) -> Result<String, String> {
    let g: NavigationCommand = nav.parse()?;
    let clear = |d: f64| if d < 0.0 { f64::INFINITY } else { d };
    let safety = SafetyParams::default().distance(speed);
    Ok(derive_intention(g, clear(o_c), clear(o_l), clear(o_r), safety)
        .as_str()
        .to_string())
}

#[wasm_bindgen(js_name = presetScenario)]
pub fn preset_scenario(lane_width: f64, obstacle_x: f64, nav: &str, nav_t: f64) -> Result<String, JsError> {
    preset(lane_width, obstacle_x, nav, nav_t).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn simulate(config_json: &str) -> Result<String, JsError> {
    simulate_json(config_json).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = cameraMask)]
pub fn camera_mask_js(config_json: &str, index: usize, camera: &str) -> Result<Vec<u8>, JsError> {
    camera_mask(config_json, index, camera).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = deriveIntention)]
pub fn derive_intention_js(nav: &str, o_c: f64, o_l: f64, o_r: f64, speed: f64) -> Result<String, JsError> {
    intention_for(nav, o_c, o_l, o_r, speed).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn preset_round_trips_and_changes_lane() {
        let cfg = preset(3.5, 80.0, "", 0.0).unwrap();
        let v: Value = serde_json::from_str(&simulate_json(&cfg).unwrap()).unwrap();
        assert_eq!(v["collided"], false);
        assert_eq!(v["changes_completed"], 1);
        let frames = v["frames"].as_array().unwrap();
        assert!(frames.iter().any(|f| f["intention"] == "change_to_left"));
        // Ends centered in the left lane.
        let y = frames.last().unwrap()["y"].as_f64().unwrap();
        assert!((y - 1.75).abs() < 0.1, "{y}");
    }

    #[test]
    fn middle_mask_matches_image_size() {
        let cfg = preset(3.5, 80.0, "", 0.0).unwrap();
        let m = camera_mask(&cfg, 0, "middle").unwrap();
        assert_eq!(m.len(), 320 * 240);
        // Nothing at or above the horizon row.
        assert!(m[..121 * 320].iter().all(|&b| b == 0));
        assert!(m[121 * 320..].contains(&1));
        // The right camera of a vehicle in the rightmost lane sees no lane.
        assert!(camera_mask(&cfg, 0, "right").unwrap().iter().all(|&b| b == 0));
    }

    #[test]
    fn intention_follows_the_safety_rule() {
        // 10 m/s: safety distance is max(15, 20) = 20 m.
        assert_eq!(
            intention_for("stay_in_lane", 25.0, -1.0, -1.0, 10.0).unwrap(),
            "stay_in_lane"
        );
        assert_eq!(
            intention_for("stay_in_lane", 19.0, -1.0, -1.0, 10.0).unwrap(),
            "change_to_left"
        );
        assert_eq!(
            intention_for("stay_in_lane", 19.0, 5.0, -1.0, 10.0).unwrap(),
            "change_to_right"
        );
        assert_eq!(
            intention_for("change_to_left", -1.0, 20.0, -1.0, 10.0).unwrap(),
            "change_to_left"
        );
        assert_eq!(
            intention_for("change_to_right", -1.0, -1.0, 5.0, 10.0).unwrap(),
            "brake_and_stay_in_lane"
        );
    }

    #[test]
    fn bad_inputs_are_reported() {
        assert!(preset(3.5, 80.0, "u_turn", 0.0).is_err());
        assert!(simulate_json("{}").unwrap_err().starts_with("invalid scenario"));
        let cfg = preset(3.5, 80.0, "", 0.0).unwrap();
        assert!(camera_mask(&cfg, 0, "rear").is_err());
    }
}
