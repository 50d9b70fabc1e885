//! Scenario data model: HD map document, LiDAR sweeps, ground-truth actor
//! tracks with per-frame action labels, plus the seeded synthetic generator
//! that stands in for a recorded dataset.

mod generator;
mod io;
mod labeler;

pub use generator::{generate_scenario, GenStats, GeneratorConfig, Maneuver, ManeuverMix};
pub use io::{load_scenario, save_scenario, ScenarioIoError, SCENARIO_FORMAT_VERSION};
pub use labeler::label_actions;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{normalize_angle, OrientedBox2D, Polygon, Polyline, RigidPose};

pub type LaneId = u32;
pub type LightId = u32;
pub type ActorId = u32;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("scenario has no sweeps")]
    Empty,
    #[error("sweep timestamps must be strictly increasing (sweep {0})")]
    NonMonotonicTime(usize),
    #[error("track {actor} has {got} frames, scenario has {want}")]
    TrackLength { actor: ActorId, got: usize, want: usize },
    #[error("traffic light {light} timeline has {got} frames, scenario has {want}")]
    LightTimeline { light: LightId, got: usize, want: usize },
    #[error("lane {lane} references unknown traffic light {light}")]
    UnknownLight { lane: LaneId, light: LightId },
    #[error("lane {lane} references a {kind:?} sign missing from the sign list")]
    UnknownSign { lane: LaneId, kind: SignKind },
    #[error("track {actor} frame {frame}: invalid box (w={w}, h={h})")]
    InvalidBox { actor: ActorId, frame: usize, w: f64, h: f64 },
    #[error("generation infeasible: {0}")]
    Infeasible(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    Crossable,
    NonCrossable,
    ConditionallyCrossable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnType {
    Straight,
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneClass {
    Vehicle,
    Bike,
    Bus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignKind {
    Yield,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoverningControl {
    TrafficLight(LightId),
    Sign(SignKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightState {
    Green,
    Yellow,
    Red,
    Unknown,
}

/// The 8 high-level driver actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionLabel {
    KeepLane,
    TurnLeft,
    TurnRight,
    LaneChangeLeft,
    LaneChangeRight,
    StoppingStopped,
    Parked,
    Other,
}

impl ActionLabel {
    pub const ALL: [ActionLabel; 8] = [
        ActionLabel::KeepLane,
        ActionLabel::TurnLeft,
        ActionLabel::TurnRight,
        ActionLabel::LaneChangeLeft,
        ActionLabel::LaneChangeRight,
        ActionLabel::StoppingStopped,
        ActionLabel::Parked,
        ActionLabel::Other,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|a| *a == self).unwrap()
    }

    pub fn from_index(i: usize) -> Option<ActionLabel> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionLabel::KeepLane => "keep_lane",
            ActionLabel::TurnLeft => "turn_left",
            ActionLabel::TurnRight => "turn_right",
            ActionLabel::LaneChangeLeft => "lane_change_left",
            ActionLabel::LaneChangeRight => "lane_change_right",
            ActionLabel::StoppingStopped => "stopping_stopped",
            ActionLabel::Parked => "parked",
            ActionLabel::Other => "other",
        }
    }

    /// Dominant classes that the intention loss downsamples.
    pub fn is_dominant(self) -> bool {
        matches!(
            self,
            ActionLabel::KeepLane | ActionLabel::StoppingStopped | ActionLabel::Parked
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub line: Polyline,
    pub kind: BoundaryKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneSegment {
    pub id: LaneId,
    pub centerline: Polyline,
    pub left_boundary: Boundary,
    pub right_boundary: Boundary,
    pub surface: Polygon,
    pub turn_type: TurnType,
    pub lane_class: LaneClass,
    pub successors: Vec<LaneId>,
    pub governing_control: Option<GoverningControl>,
    pub protected: bool,
}

impl LaneSegment {
    /// Heading of the centerline segment nearest to a point.
    pub fn heading_at(&self, p: [f64; 2]) -> f64 {
        let verts = self.centerline.vertices();
        let mut best = (f64::INFINITY, 0.0);
        for s in verts.windows(2) {
            let d = crate::geom::point_segment_distance(p, s[0], s[1]);
            if d < best.0 {
                best = (d, (s[1][1] - s[0][1]).atan2(s[1][0] - s[0][0]));
            }
        }
        best.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapDocument {
    pub road_polygons: Vec<Polygon>,
    pub intersection_polygons: Vec<Polygon>,
    pub crossing_polygons: Vec<Polygon>,
    pub lanes: Vec<LaneSegment>,
    /// Per-frame state timeline for each light; timelines cover every
    /// scenario frame.
    pub traffic_lights: BTreeMap<LightId, Vec<LightState>>,
    pub signs: Vec<(LaneId, SignKind)>,
}

impl MapDocument {
    pub fn lane(&self, id: LaneId) -> Option<&LaneSegment> {
        self.lanes.iter().find(|l| l.id == id)
    }

    pub fn light_state(&self, id: LightId, frame: usize) -> Option<LightState> {
        self.traffic_lights.get(&id).and_then(|t| t.get(frame).copied())
    }

    pub fn in_intersection(&self, p: [f64; 2]) -> bool {
        self.intersection_polygons.iter().any(|poly| poly.contains(p))
    }

    /// Lanes of the given class whose surface contains the point, in id order.
    pub fn lanes_at(&self, p: [f64; 2], class: LaneClass) -> Vec<&LaneSegment> {
        self.lanes
            .iter()
            .filter(|l| l.lane_class == class && l.surface.contains(p))
            .collect()
    }

    /// The vehicle lane under a point whose local direction best matches the
    /// given heading. Lanes overlap inside intersections, so heading
    /// agreement decides; ties fall to the lowest id.
    pub fn vehicle_lane_at(&self, p: [f64; 2], heading: f64) -> Option<&LaneSegment> {
        let mut best: Option<(f64, &LaneSegment)> = None;
        for lane in self.lanes_at(p, LaneClass::Vehicle) {
            let diff = normalize_angle(lane.heading_at(p) - heading).abs();
            match best {
                Some((d, _)) if d <= diff => {}
                _ => best = Some((diff, lane)),
            }
        }
        best.map(|(_, l)| l)
    }

    /// Left/right adjacency derived from shared boundaries: B is left of A
    /// when A's left boundary coincides with B's right boundary.
    pub fn topology(&self) -> MapTopology {
        let mut left_of = BTreeMap::new();
        let mut right_of = BTreeMap::new();
        for a in &self.lanes {
            for b in &self.lanes {
                if a.id == b.id || a.lane_class != b.lane_class {
                    continue;
                }
                if polylines_coincide(&a.left_boundary.line, &b.right_boundary.line) {
                    left_of.insert(a.id, b.id);
                    right_of.insert(b.id, a.id);
                }
            }
        }
        MapTopology { left_of, right_of }
    }
}

/// Derived lane adjacency.
#[derive(Debug, Clone, Default)]
pub struct MapTopology {
    pub left_of: BTreeMap<LaneId, LaneId>,
    pub right_of: BTreeMap<LaneId, LaneId>,
}

fn polylines_coincide(a: &Polyline, b: &Polyline) -> bool {
    const TOL: f64 = 1e-6;
    let av = a.vertices();
    let bv = b.vertices();
    if av.len() != bv.len() {
        return false;
    }
    let fwd = av
        .iter()
        .zip(bv.iter())
        .all(|(p, q)| (p[0] - q[0]).abs() < TOL && (p[1] - q[1]).abs() < TOL);
    let rev = av
        .iter()
        .zip(bv.iter().rev())
        .all(|(p, q)| (p[0] - q[0]).abs() < TOL && (p[1] - q[1]).abs() < TOL);
    fwd || rev
}

/// One LiDAR scan: capture-time ego pose and points in the ego frame at
/// capture time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub timestamp: f64,
    pub ego_pose: RigidPose,
    pub points: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackFrame {
    /// World-frame box.
    pub bbox: OrientedBox2D,
    pub action: ActionLabel,
    pub lidar_point_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorTrack {
    pub id: ActorId,
    /// One entry per scenario frame; None where the actor is absent.
    pub frames: Vec<Option<TrackFrame>>,
}

impl ActorTrack {
    pub fn boxes(&self) -> Vec<Option<OrientedBox2D>> {
        self.frames.iter().map(|f| f.as_ref().map(|tf| tf.bbox)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub map: MapDocument,
    pub sweeps: Vec<Sweep>,
    pub tracks: Vec<ActorTrack>,
    pub seed: u64,
}

impl Scenario {
    pub fn n_frames(&self) -> usize {
        self.sweeps.len()
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let n = self.sweeps.len();
        if n == 0 {
            return Err(SceneError::Empty);
        }
        for i in 1..n {
            if self.sweeps[i].timestamp <= self.sweeps[i - 1].timestamp {
                return Err(SceneError::NonMonotonicTime(i));
            }
        }
        for (light, timeline) in &self.map.traffic_lights {
            if timeline.len() != n {
                return Err(SceneError::LightTimeline { light: *light, got: timeline.len(), want: n });
            }
        }
        for lane in &self.map.lanes {
            match lane.governing_control {
                Some(GoverningControl::TrafficLight(id)) => {
                    if !self.map.traffic_lights.contains_key(&id) {
                        return Err(SceneError::UnknownLight { lane: lane.id, light: id });
                    }
                }
                Some(GoverningControl::Sign(kind)) => {
                    if !self.map.signs.iter().any(|(l, k)| *l == lane.id && *k == kind) {
                        return Err(SceneError::UnknownSign { lane: lane.id, kind });
                    }
                }
                None => {}
            }
        }
        for track in &self.tracks {
            if track.frames.len() != n {
                return Err(SceneError::TrackLength { actor: track.id, got: track.frames.len(), want: n });
            }
            for (i, frame) in track.frames.iter().enumerate() {
                if let Some(tf) = frame {
                    if !(tf.bbox.w > 0.0 && tf.bbox.h > 0.0) {
                        return Err(SceneError::InvalidBox {
                            actor: track.id,
                            frame: i,
                            w: tf.bbox.w,
                            h: tf.bbox.h,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}
