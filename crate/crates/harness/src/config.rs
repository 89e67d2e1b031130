//! Scenario files: TOML with a versioned schema. Unknown keys are rejected.

use crate::error::{HarnessError, Result};
use cogdrive_core::simworld::ScenarioConfig;
use std::path::Path;

pub fn parse_scenario(text: &str, origin: &Path) -> Result<ScenarioConfig> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| HarnessError::Parse {
        path: origin.to_path_buf(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_scenario(&text, path)
}

pub fn to_toml(cfg: &ScenarioConfig) -> String {
    toml::to_string(cfg).expect("scenario config serializes to TOML")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
horizon = 20.0

[road]
num_lanes = 2
lane_width = 3.5
"#;

    #[test]
    fn minimal_file_uses_defaults() {
        let cfg = parse_scenario(MINIMAL, Path::new("mem")).unwrap();
        assert_eq!(cfg.dt, 0.05);
        assert_eq!(cfg.road.num_lanes, 2);
        assert_eq!(cfg.start.lane, 1);
        assert!(cfg.obstacles.is_empty());
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{MINIMAL}\n[camera]\nfocal = 160.0\nzoom = 2.0\n");
        let err = parse_scenario(&text, Path::new("mem")).unwrap_err();
        assert_eq!(err.kind(), "parse");
        assert!(err.to_string().contains("zoom"), "{err}");
    }

    #[test]
    fn schema_violations_rejected() {
        let text = MINIMAL.replace("lane_width = 3.5", "lane_width = 2.0");
        assert_eq!(
            parse_scenario(&text, Path::new("mem")).unwrap_err().kind(),
            "config_invalid"
        );
        let text = MINIMAL.replace("schema_version = 1", "schema_version = 2");
        assert_eq!(
            parse_scenario(&text, Path::new("mem")).unwrap_err().kind(),
            "config_invalid"
        );
    }

    #[test]
    fn toml_round_trip() {
        let cfg = cogdrive_core::simworld::obstacle_scenario(4.0, 80.0);
        let back = parse_scenario(&to_toml(&cfg), Path::new("mem")).unwrap();
        assert_eq!(back, cfg);
    }
}
