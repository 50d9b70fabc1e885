//! Versioned scenario file format ("v1"): a self-describing JSON document,
//! one scenario per file, with the units recorded in the header. Floats
//! round-trip exactly (shortest-representation encoding).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Scenario, SceneError};

pub const SCENARIO_FORMAT_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum ScenarioIoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("not a scenario file (format field is {0:?})")]
    WrongFormat(String),
    #[error("unsupported scenario version {found:?} (expected {expected:?})")]
    Version { found: String, expected: String },
    #[error("invalid scenario: {0}")]
    Invalid(#[from] SceneError),
}

#[derive(Serialize, Deserialize)]
struct Units {
    length: String,
    angle: String,
    time: String,
}

impl Default for Units {
    fn default() -> Self {
        Self {
            length: "meters".into(),
            angle: "radians".into(),
            time: "seconds".into(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: String,
    #[serde(default)]
    units: Units,
    scenario: serde_json::Value,
}

pub fn save_scenario(scenario: &Scenario, path: &Path) -> Result<(), ScenarioIoError> {
    let env = Envelope {
        format: "scenario".into(),
        version: SCENARIO_FORMAT_VERSION.into(),
        units: Units::default(),
        scenario: serde_json::to_value(scenario)?,
    };
    let body = serde_json::to_string_pretty(&env)?;
    fs::write(path, body).map_err(|source| ScenarioIoError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioIoError> {
    let body = fs::read_to_string(path).map_err(|source| ScenarioIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let env: Envelope = serde_json::from_str(&body)?;
    if env.format != "scenario" {
        return Err(ScenarioIoError::WrongFormat(env.format));
    }
    if env.version != SCENARIO_FORMAT_VERSION {
        return Err(ScenarioIoError::Version {
            found: env.version,
            expected: SCENARIO_FORMAT_VERSION.into(),
        });
    }
    let scenario: Scenario = serde_json::from_value(env.scenario)?;
    scenario.validate()?;
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scenario, GeneratorConfig};

    fn sample() -> Scenario {
        let cfg = GeneratorConfig { n_frames: 20, actor_count: (2, 2), ..Default::default() };
        generate_scenario(&cfg, 42).unwrap().0
    }

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let s = sample();
        save_scenario(&s, &path).unwrap();
        let back = load_scenario(&path).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let s = sample();
        save_scenario(&s, &path).unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &body[..body.len() / 2]).unwrap();
        assert!(matches!(load_scenario(&path), Err(ScenarioIoError::Parse(_))));
    }

    #[test]
    fn unknown_action_label_names_the_offender() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let s = sample();
        save_scenario(&s, &path).unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        assert!(body.contains("\"keep_lane\"") || body.contains("\"parked\""));
        let body = body
            .replace("\"keep_lane\"", "\"warp_drive\"")
            .replace("\"parked\"", "\"warp_drive\"");
        std::fs::write(&path, body).unwrap();
        match load_scenario(&path) {
            Err(ScenarioIoError::Parse(e)) => {
                assert!(e.to_string().contains("warp_drive"), "{e}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let s = sample();
        save_scenario(&s, &path).unwrap();
        let body = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"version\": \"v1\"", "\"version\": \"v999\"");
        std::fs::write(&path, body).unwrap();
        assert!(matches!(load_scenario(&path), Err(ScenarioIoError::Version { .. })));
    }
}
