//! Run configuration: one TOML document covering every module, fully
//! defaulted except the master seed, validated fail-fast before any work.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::anchors::AnchorSpec;
use crate::encoder::VoxelConfig;
use crate::infer::TrackerConfig;
use crate::loss::LossConfig;
use crate::metrics::EvalFilter;
use crate::net::{AdamConfig, NetworkConfig};
use crate::scene::GeneratorConfig;

use super::PipelineError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub steps: u64,
    pub batch_size: usize,
    pub checkpoint_every: u64,
    pub adam: AdamConfig,
    /// Zero out the map tensor before every forward pass (map ablation).
    pub zero_map: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 2,
            checkpoint_every: 500,
            adam: AdamConfig::default(),
            zero_map: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub filter: EvalFilter,
    /// Forecast horizons in seconds.
    pub horizons_s: Vec<f64>,
    /// Evaluate every n-th eligible frame.
    pub frame_stride: usize,
    pub iou_thresholds: Vec<f64>,
    /// Classification score threshold for a detection to be considered.
    pub detect_threshold: f64,
    pub nms_iou: f64,
    /// IoU threshold for the TP sets feeding regression/intention tables.
    pub tp_iou: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            filter: EvalFilter::default(),
            horizons_s: vec![0.0, 1.0, 2.0, 3.0],
            frame_stride: 5,
            iou_thresholds: vec![0.5, 0.6, 0.7, 0.8, 0.9],
            detect_threshold: 0.1,
            nms_iou: 0.1,
            tp_iou: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub master_seed: Option<u64>,
    pub voxel: VoxelConfig,
    pub anchors: AnchorSpec,
    pub network: NetworkConfig,
    pub loss: LossConfig,
    pub tracker: TrackerConfig,
    pub eval: EvalSettings,
    pub train: TrainSettings,
    pub generator: GeneratorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            master_seed: None,
            voxel: VoxelConfig::default(),
            anchors: AnchorSpec::default(),
            network: NetworkConfig::default(),
            loss: LossConfig::default(),
            tracker: TrackerConfig::default(),
            eval: EvalSettings::default(),
            train: TrainSettings::default(),
            generator: GeneratorConfig::default(),
        }
    }
}

impl RunConfig {
    /// Desk-scale profile: a 51.2 m square window at 0.4 m resolution, short
    /// sweep history and narrow network. Trains end-to-end on a CPU in
    /// minutes while keeping every architectural constraint (two streams,
    /// residuals, stride 8, three heads).
    pub fn desk_profile(master_seed: u64) -> Self {
        let voxel = VoxelConfig {
            length: 51.2,
            width: 51.2,
            height: 5.8,
            resolution: 0.4,
            height_resolution: 1.45,
            t_past: 4,
        };
        let network = NetworkConfig {
            lidar_channels: voxel.lidar_channels(),
            map_channels: 17,
            stream_widths: [16, 24, 32],
            downsample_schedule: [2, 2, 2],
            fusion_width: 64,
            fusion_blocks: 2,
            head_width: 32,
            intent_embed_width: 8,
            anchors_per_cell: 5,
            t_future: 6,
            num_actions: 8,
        };
        let generator = GeneratorConfig {
            n_frames: 150,
            actor_count: (4, 6),
            lidar_range: 45.0,
            ego_speed: 2.0,
            ego_start: -18.0,
            cruise_speed: (3.5, 6.0),
            clutter_points: 250,
            light_green_frames: 60,
            light_yellow_frames: 15,
            ..Default::default()
        };
        Self {
            master_seed: Some(master_seed),
            voxel,
            network,
            train: TrainSettings {
                steps: 2000,
                batch_size: 1,
                checkpoint_every: 500,
                adam: AdamConfig { lr: 1e-3, weight_decay: 1e-4, ..Default::default() },
                zero_map: false,
            },
            generator,
            ..Default::default()
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let body = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let cfg: RunConfig =
            toml::from_str(&body).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn seed(&self) -> Result<u64, PipelineError> {
        self.master_seed
            .ok_or_else(|| PipelineError::Config("master_seed is required (set it in the config or pass --seed)".into()))
    }

    /// Validate every numeric field against its module's invariants before
    /// any work begins.
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.voxel.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.network.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.loss.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.network.lidar_channels != self.voxel.lidar_channels() {
            return Err(PipelineError::Config(format!(
                "network.lidar_channels = {} but the voxel config produces {}",
                self.network.lidar_channels,
                self.voxel.lidar_channels()
            )));
        }
        if self.network.map_channels != crate::encoder::map_channels::COUNT {
            return Err(PipelineError::Config(format!(
                "network.map_channels = {} but the map tensor has {}",
                self.network.map_channels,
                crate::encoder::map_channels::COUNT
            )));
        }
        if self.network.anchors_per_cell != self.anchors.aspect_ratios.len() {
            return Err(PipelineError::Config(format!(
                "network.anchors_per_cell = {} but the anchor spec has {} ratios",
                self.network.anchors_per_cell,
                self.anchors.aspect_ratios.len()
            )));
        }
        if self.voxel.rows() % crate::anchors::STRIDE != 0
            || self.voxel.cols() % crate::anchors::STRIDE != 0
        {
            return Err(PipelineError::Config(format!(
                "BEV dims {}x{} are not divisible by the stride {}",
                self.voxel.rows(),
                self.voxel.cols(),
                crate::anchors::STRIDE
            )));
        }
        if self.train.batch_size == 0 || self.train.steps == 0 {
            return Err(PipelineError::Config("train.steps and train.batch_size must be positive".into()));
        }
        if !(self.eval.detect_threshold > 0.0 && self.eval.detect_threshold < 1.0) {
            return Err(PipelineError::Config("eval.detect_threshold must be in (0, 1)".into()));
        }
        if self.eval.frame_stride == 0 {
            return Err(PipelineError::Config("eval.frame_stride must be >= 1".into()));
        }
        for thr in self.eval.iou_thresholds.iter().chain([&self.eval.nms_iou, &self.eval.tp_iou]) {
            if !(*thr > 0.0 && *thr <= 1.0) {
                return Err(PipelineError::Config(format!("IoU threshold {thr} outside (0, 1]")));
            }
        }
        if !(self.tracker.gate > 0.0) || !(self.tracker.frame_dt > 0.0) || !(self.tracker.waypoint_dt > 0.0) {
            return Err(PipelineError::Config("tracker gate/frame_dt/waypoint_dt must be positive".into()));
        }
        // Waypoints must cover the requested horizons.
        if let Some(max_h) = self.eval.horizons_s.iter().cloned().fold(None::<f64>, |a, b| {
            Some(a.map_or(b, |x| x.max(b)))
        }) {
            let covered = self.network.t_future as f64 * self.tracker.waypoint_dt;
            if max_h > covered + 1e-9 {
                return Err(PipelineError::Config(format!(
                    "horizon {max_h} s exceeds forecast coverage {covered} s"
                )));
            }
        }
        Ok(())
    }
}
