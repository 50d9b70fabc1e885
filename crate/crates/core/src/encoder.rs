//! Builds the two network input tensors: the stacked height-and-time LiDAR
//! occupancy tensor and the 17-channel rasterized dynamic map.
//!
//! Conventions frozen here and relied on by fixtures elsewhere:
//! - rows index the longitudinal (x) axis, cols the transversal (y) axis;
//! - half-open binning `[lo, hi)` on all three axes, points exactly at the
//!   upper extent are dropped;
//! - LiDAR channel index is `t_index * height_bins + h_index` with
//!   `t_index` 0 the oldest sweep;
//! - LiDAR voxels hold {0, 1} occupancy, map channels hold {-1, +1}.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::geom::{GridSpec, Polygon, RigidPose};
use crate::geom::{rasterize_polygon, rasterize_polyline};
use crate::scene::{
    BoundaryKind, GoverningControl, LaneClass, LightId, LightState, MapDocument, SignKind, Sweep,
    TurnType,
};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("extent {name} = {value} is not an integer multiple of resolution {resolution}")]
    NonIntegralExtent { name: &'static str, value: f64, resolution: f64 },
    #[error("t_past must be >= 1")]
    NoSweeps,
    #[error("frame {frame} outside light timeline of length {len}")]
    FrameOutOfRange { frame: usize, len: usize },
}

/// Fixed channel order of the map tensor.
pub mod map_channels {
    pub const ROAD: usize = 0;
    pub const INTERSECTION: usize = 1;
    pub const CROSSING: usize = 2;
    pub const BOUNDARY_CROSSABLE: usize = 3;
    pub const BOUNDARY_NON_CROSSABLE: usize = 4;
    pub const BOUNDARY_CONDITIONAL: usize = 5;
    pub const LANE_STRAIGHT: usize = 6;
    pub const LANE_LEFT: usize = 7;
    pub const LANE_RIGHT: usize = 8;
    pub const BIKE: usize = 9;
    pub const BUS: usize = 10;
    pub const LIGHT_GREEN: usize = 11;
    pub const LIGHT_YELLOW: usize = 12;
    pub const LIGHT_RED: usize = 13;
    pub const PROTECTED: usize = 14;
    pub const YIELD: usize = 15;
    pub const STOP: usize = 16;
    pub const COUNT: usize = 17;
}

/// BEV discretization. The frame is anchored to the current ego pose with x
/// in `[-length/2, length/2)` and y in `[-width/2, width/2)`; heights span
/// `[0, height)` above the ego ground plane.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct VoxelConfig {
    pub length: f64,
    pub width: f64,
    pub height: f64,
    /// BEV cell size (applies to both x and y).
    pub resolution: f64,
    /// Height bin size.
    pub height_resolution: f64,
    pub t_past: usize,
}

impl Default for VoxelConfig {
    fn default() -> Self {
        Self {
            length: 144.0,
            width: 80.0,
            height: 5.8,
            resolution: 0.2,
            height_resolution: 0.2,
            t_past: 10,
        }
    }
}

impl VoxelConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.t_past == 0 {
            return Err(EncoderError::NoSweeps);
        }
        for (name, value, res) in [
            ("length", self.length, self.resolution),
            ("width", self.width, self.resolution),
            ("height", self.height, self.height_resolution),
        ] {
            let bins = value / res;
            if (bins - bins.round()).abs() > 1e-9 || bins.round() < 1.0 {
                return Err(EncoderError::NonIntegralExtent { name, value, resolution: res });
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        (self.length / self.resolution).round() as usize
    }

    pub fn cols(&self) -> usize {
        (self.width / self.resolution).round() as usize
    }

    pub fn height_bins(&self) -> usize {
        (self.height / self.height_resolution).round() as usize
    }

    pub fn lidar_channels(&self) -> usize {
        self.height_bins() * self.t_past
    }

    /// BEV grid in the ego frame.
    pub fn grid(&self) -> GridSpec {
        GridSpec::new(
            [-self.length / 2.0, -self.width / 2.0],
            self.resolution,
            self.rows(),
            self.cols(),
        )
        .expect("validated config")
    }
}

/// Voxelize the last `t_past` sweeps into the current ego frame. Missing
/// older sweeps leave zero slabs at the low time indices.
pub fn voxelize_sweeps(sweeps: &[Sweep], current_ego: &RigidPose, cfg: &VoxelConfig) -> Tensor {
    let bins = cfg.height_bins();
    let rows = cfg.rows();
    let cols = cfg.cols();
    let mut out = Tensor::zeros(&[cfg.lidar_channels(), rows, cols]);
    let n = sweeps.len().min(cfg.t_past);
    let taken = &sweeps[sweeps.len() - n..];
    let x0 = -cfg.length / 2.0;
    let y0 = -cfg.width / 2.0;
    for (i, sweep) in taken.iter().enumerate() {
        let t_index = cfg.t_past - n + i;
        for p in &sweep.points {
            let q = current_ego.from_world(sweep.ego_pose.to_world(*p));
            let rx = (q[0] - x0) / cfg.resolution;
            let cy = (q[1] - y0) / cfg.resolution;
            let hz = q[2] / cfg.height_resolution;
            if rx < 0.0 || cy < 0.0 || hz < 0.0 {
                continue;
            }
            let (r, c, h) = (rx.floor() as usize, cy.floor() as usize, hz.floor() as usize);
            if r >= rows || c >= cols || h >= bins {
                continue;
            }
            out.set3(t_index * bins + h, r, c, 1.0);
        }
    }
    out
}

/// Resolve traffic-light states for one frame: a straight lane with an
/// unknown light that conflicts (surfaces overlap inside an intersection)
/// with a protected turn showing green is inferred red. Applied to a fixed
/// point; all other unknowns stay unknown.
pub fn infer_unobserved_lights(
    map: &MapDocument,
    frame: usize,
) -> Result<BTreeMap<LightId, LightState>, EncoderError> {
    let mut states = BTreeMap::new();
    for (id, timeline) in &map.traffic_lights {
        let state = timeline
            .get(frame)
            .copied()
            .ok_or(EncoderError::FrameOutOfRange { frame, len: timeline.len() })?;
        states.insert(*id, state);
    }
    loop {
        let mut changed = false;
        for lane in &map.lanes {
            let Some(GoverningControl::TrafficLight(unknown_id)) = lane.governing_control else {
                continue;
            };
            if lane.turn_type != TurnType::Straight
                || states.get(&unknown_id) != Some(&LightState::Unknown)
            {
                continue;
            }
            for turn in &map.lanes {
                if !turn.protected || turn.turn_type == TurnType::Straight {
                    continue;
                }
                let Some(GoverningControl::TrafficLight(green_id)) = turn.governing_control else {
                    continue;
                };
                if states.get(&green_id) != Some(&LightState::Green) {
                    continue;
                }
                if surfaces_conflict(&lane.surface, &turn.surface, &map.intersection_polygons) {
                    states.insert(unknown_id, LightState::Red);
                    changed = true;
                    break;
                }
            }
        }
        if !changed {
            return Ok(states);
        }
    }
}

/// Overlap test on a 0.5 m probe grid: both surfaces cover a common probe
/// point that lies inside an intersection polygon.
fn surfaces_conflict(a: &Polygon, b: &Polygon, intersections: &[Polygon]) -> bool {
    const STEP: f64 = 0.5;
    let (alo, ahi) = a.bbox();
    let (blo, bhi) = b.bbox();
    let lo = [alo[0].max(blo[0]), alo[1].max(blo[1])];
    let hi = [ahi[0].min(bhi[0]), ahi[1].min(bhi[1])];
    if lo[0] > hi[0] || lo[1] > hi[1] {
        return false;
    }
    let nx = ((hi[0] - lo[0]) / STEP).ceil() as usize + 1;
    let ny = ((hi[1] - lo[1]) / STEP).ceil() as usize + 1;
    for i in 0..=nx {
        for j in 0..=ny {
            let p = [lo[0] + i as f64 * STEP, lo[1] + j as f64 * STEP];
            if p[0] > hi[0] || p[1] > hi[1] {
                continue;
            }
            if a.contains(p) && b.contains(p) && intersections.iter().any(|poly| poly.contains(p)) {
                return true;
            }
        }
    }
    false
}

/// Rasterize the 17-channel map tensor for one frame in the given ego frame.
pub fn rasterize_map(
    map: &MapDocument,
    frame: usize,
    cfg: &VoxelConfig,
    ego: &RigidPose,
) -> Result<Tensor, EncoderError> {
    use map_channels as ch;
    let grid = cfg.grid();
    let mut out = Tensor::full(&[ch::COUNT, cfg.rows(), cfg.cols()], -1.0);
    let world = RigidPose::identity();
    let lights = infer_unobserved_lights(map, frame)?;

    let paint_polygon = |t: &mut Tensor, channel: usize, poly: &Polygon| {
        let local = poly.to_frame(&world, ego);
        for (r, c) in rasterize_polygon(&local, &grid) {
            t.set3(channel, r, c, 1.0);
        }
    };

    for poly in &map.road_polygons {
        paint_polygon(&mut out, ch::ROAD, poly);
    }
    for poly in &map.intersection_polygons {
        paint_polygon(&mut out, ch::INTERSECTION, poly);
    }
    for poly in &map.crossing_polygons {
        paint_polygon(&mut out, ch::CROSSING, poly);
    }

    for lane in &map.lanes {
        for boundary in [&lane.left_boundary, &lane.right_boundary] {
            let channel = match boundary.kind {
                BoundaryKind::Crossable => ch::BOUNDARY_CROSSABLE,
                BoundaryKind::NonCrossable => ch::BOUNDARY_NON_CROSSABLE,
                BoundaryKind::ConditionallyCrossable => ch::BOUNDARY_CONDITIONAL,
            };
            let local = boundary.line.to_frame(&world, ego);
            for (r, c) in rasterize_polyline(&local, &grid) {
                out.set3(channel, r, c, 1.0);
            }
        }
        let surface_channel = match lane.lane_class {
            LaneClass::Bike => ch::BIKE,
            LaneClass::Bus => ch::BUS,
            LaneClass::Vehicle => match lane.turn_type {
                TurnType::Straight => ch::LANE_STRAIGHT,
                TurnType::Left => ch::LANE_LEFT,
                TurnType::Right => ch::LANE_RIGHT,
            },
        };
        paint_polygon(&mut out, surface_channel, &lane.surface);
    }

    // Light-state channels are mutually exclusive per cell; red wins over
    // yellow over green where governed surfaces overlap.
    let mut state_cells: BTreeMap<(usize, usize), LightState> = BTreeMap::new();
    for lane in &map.lanes {
        let Some(GoverningControl::TrafficLight(id)) = lane.governing_control else {
            continue;
        };
        let state = lights[&id];
        if state == LightState::Unknown {
            continue;
        }
        let local = &lane.surface.to_frame(&world, ego);
        for cell in rasterize_polygon(&local, &grid) {
            let slot = state_cells.entry(cell).or_insert(state);
            *slot = max_priority(*slot, state);
        }
        // Protection (a lit turn arrow) is drawn while the arrow is green.
        if lane.protected && state == LightState::Green {
            for (r, c) in rasterize_polygon(&local, &grid) {
                out.set3(ch::PROTECTED, r, c, 1.0);
            }
        }
    }
    for ((r, c), state) in state_cells {
        let channel = match state {
            LightState::Green => ch::LIGHT_GREEN,
            LightState::Yellow => ch::LIGHT_YELLOW,
            LightState::Red => ch::LIGHT_RED,
            LightState::Unknown => unreachable!("unknowns filtered above"),
        };
        out.set3(channel, r, c, 1.0);
    }

    for lane in &map.lanes {
        let Some(GoverningControl::Sign(kind)) = lane.governing_control else {
            continue;
        };
        let channel = match kind {
            SignKind::Yield => ch::YIELD,
            SignKind::Stop => ch::STOP,
        };
        paint_polygon(&mut out, channel, &lane.surface);
    }

    Ok(out)
}

fn max_priority(a: LightState, b: LightState) -> LightState {
    fn rank(s: LightState) -> u8 {
        match s {
            LightState::Red => 3,
            LightState::Yellow => 2,
            LightState::Green => 1,
            LightState::Unknown => 0,
        }
    }
    if rank(b) > rank(a) {
        b
    } else {
        a
    }
}
