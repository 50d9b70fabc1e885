//! Per-frame prediction dump: world-frame detections with scores, intent
//! distributions, waypoints and tracklet ids. Consumed by the metrics suite
//! and the visualizer.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::OrientedBox2D;

use super::Detection;

pub const PREDICTIONS_FORMAT_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum PredictionIoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported predictions version {0:?}")]
    Version(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedDetection {
    pub bbox: OrientedBox2D,
    pub score: f64,
    pub intent: Vec<f64>,
    pub waypoints: Vec<OrientedBox2D>,
    pub tracklet_id: Option<u64>,
    #[serde(default)]
    pub coasted: bool,
}

impl LoggedDetection {
    pub fn to_detection(&self) -> Detection {
        Detection {
            bbox: self.bbox,
            score: self.score,
            intent: self.intent.clone(),
            waypoints: self.waypoints.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePredictions {
    pub frame: usize,
    pub detections: Vec<LoggedDetection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionLog {
    pub version: String,
    pub frames: Vec<FramePredictions>,
}

impl PredictionLog {
    pub fn new() -> Self {
        Self { version: PREDICTIONS_FORMAT_VERSION.into(), frames: Vec::new() }
    }
}

impl Default for PredictionLog {
    fn default() -> Self {
        Self::new()
    }
}

pub fn save_predictions(log: &PredictionLog, path: &Path) -> Result<(), PredictionIoError> {
    let body = serde_json::to_string_pretty(log)?;
    std::fs::write(path, body)
        .map_err(|source| PredictionIoError::Io { path: path.display().to_string(), source })
}

pub fn load_predictions(path: &Path) -> Result<PredictionLog, PredictionIoError> {
    let body = std::fs::read_to_string(path)
        .map_err(|source| PredictionIoError::Io { path: path.display().to_string(), source })?;
    let log: PredictionLog = serde_json::from_str(&body)?;
    if log.version != PREDICTIONS_FORMAT_VERSION {
        return Err(PredictionIoError::Version(log.version));
    }
    Ok(log)
}
