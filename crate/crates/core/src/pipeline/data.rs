//! Dataset manifest and per-frame sample extraction: network inputs plus
//! the supervision (assignment, regression targets, intention labels) for
//! one scenario frame.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::anchors::{assign_targets, encode_targets, AnchorGrid};
use crate::encoder::{rasterize_map, voxelize_sweeps, VoxelConfig};
use crate::geom::{OrientedBox2D, RigidPose};
use crate::loss::LossInputs;
use crate::scene::{ActionLabel, Scenario};
use crate::tensor::Tensor;

use super::PipelineError;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the manifest's directory.
    pub path: String,
    pub seed: u64,
    pub n_frames: usize,
    pub maneuver_counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub master_seed: u64,
    pub entries: Vec<ManifestEntry>,
}

pub fn save_manifest(manifest: &Manifest, dir: &Path) -> Result<(), PipelineError> {
    let path = dir.join(MANIFEST_NAME);
    let body = serde_json::to_string_pretty(manifest)
        .map_err(|e| PipelineError::Other(e.to_string()))?;
    std::fs::write(&path, body).map_err(|e| PipelineError::io(&path, e))
}

pub fn load_manifest(dir: &Path) -> Result<Manifest, PipelineError> {
    let path = dir.join(MANIFEST_NAME);
    let body = std::fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
    serde_json::from_str(&body).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

/// Inputs and ground truth of one training frame, in the frame's ego BEV
/// coordinates.
#[derive(Debug, Clone)]
pub struct FrameSample {
    pub lidar: Tensor,
    pub map: Tensor,
    /// Per supervised actor: boxes at steps 0..=t_future (0.5 s apart).
    pub gt_tracks: Vec<Vec<OrientedBox2D>>,
    /// Per supervised actor: action labels at the same steps.
    pub actions: Vec<Vec<Option<ActionLabel>>>,
    pub point_counts: Vec<u32>,
}

/// Frames with a full sweep history behind them and a full forecast horizon
/// ahead of them.
pub fn eligible_frames(
    scenario: &Scenario,
    voxel: &VoxelConfig,
    t_future: usize,
    waypoint_stride: usize,
) -> std::ops::Range<usize> {
    let lo = voxel.t_past.saturating_sub(1);
    let hi = scenario.n_frames().saturating_sub(t_future * waypoint_stride);
    lo..hi.max(lo)
}

/// Encode the two input tensors for one frame.
pub fn encode_frame(
    scenario: &Scenario,
    frame: usize,
    voxel: &VoxelConfig,
    zero_map: bool,
) -> Result<(Tensor, Tensor), PipelineError> {
    let start = (frame + 1).saturating_sub(voxel.t_past);
    let sweeps = &scenario.sweeps[start..=frame];
    let ego = scenario.sweeps[frame].ego_pose;
    let lidar = voxelize_sweeps(sweeps, &ego, voxel);
    let map = if zero_map {
        Tensor::zeros(&[crate::encoder::map_channels::COUNT, voxel.rows(), voxel.cols()])
    } else {
        rasterize_map(&scenario.map, frame, voxel, &ego)?
    };
    Ok((lidar, map))
}

/// Encode one frame and collect the actors eligible for supervision: box
/// present now and at every future step, center inside the BEV window, and
/// at least one LiDAR point this frame.
pub fn extract_frame_sample(
    scenario: &Scenario,
    frame: usize,
    voxel: &VoxelConfig,
    t_future: usize,
    waypoint_stride: usize,
    zero_map: bool,
) -> Result<FrameSample, PipelineError> {
    let (lidar, map) = encode_frame(scenario, frame, voxel, zero_map)?;
    let ego = scenario.sweeps[frame].ego_pose;

    let world = RigidPose::identity();
    let half_l = voxel.length / 2.0;
    let half_w = voxel.width / 2.0;
    let mut gt_tracks = Vec::new();
    let mut actions = Vec::new();
    let mut point_counts = Vec::new();
    for track in &scenario.tracks {
        let Some(cur) = &track.frames[frame] else { continue };
        if cur.lidar_point_count == 0 {
            continue;
        }
        let ego_box = cur.bbox.to_frame(&world, &ego);
        if ego_box.cx < -half_l || ego_box.cx >= half_l || ego_box.cy < -half_w || ego_box.cy >= half_w
        {
            continue;
        }
        let mut boxes = vec![ego_box];
        let mut labels = vec![Some(cur.action)];
        let mut complete = true;
        for t in 1..=t_future {
            let idx = frame + t * waypoint_stride;
            match track.frames.get(idx).and_then(|f| f.as_ref()) {
                Some(tf) => {
                    boxes.push(tf.bbox.to_frame(&world, &ego));
                    labels.push(Some(tf.action));
                }
                None => {
                    complete = false;
                    break;
                }
            }
        }
        if !complete {
            continue;
        }
        gt_tracks.push(boxes);
        actions.push(labels);
        point_counts.push(cur.lidar_point_count);
    }
    Ok(FrameSample { lidar, map, gt_tracks, actions, point_counts })
}

/// Assignment, regression targets and per-cell intention labels for a
/// sample. Cells with several positive anchors take the label of the lowest
/// (i, j, k) anchor.
pub fn build_loss_inputs(sample: &FrameSample, grid: &AnchorGrid, t_future: usize) -> LossInputs {
    let current: Vec<OrientedBox2D> = sample.gt_tracks.iter().map(|t| t[0]).collect();
    let assignment = assign_targets(grid, &current);
    let mut reg_targets = Vec::new();
    let mut intent_labels: Vec<Vec<(usize, usize)>> = vec![Vec::new(); t_future + 1];
    let mut cell_taken: Vec<BTreeMap<usize, ()>> = vec![BTreeMap::new(); t_future + 1];
    for (a, g) in assignment.positives() {
        let targets = encode_targets(&sample.gt_tracks[g], grid.anchor(a));
        reg_targets.push((a, targets.flatten()));
        let cell = a / grid.anchors_per_cell;
        for t in 0..=t_future {
            if let Some(Some(label)) = sample.actions[g].get(t) {
                if !cell_taken[t].contains_key(&cell) {
                    cell_taken[t].insert(cell, ());
                    intent_labels[t].push((cell, label.index()));
                }
            }
        }
    }
    LossInputs { assignment, reg_targets, intent_labels }
}
