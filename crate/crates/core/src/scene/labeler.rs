//! Per-frame action labeling from track geometry and the map.
//!
//! The rules are deterministic and map-grounded. Labels look 3 s into the
//! future (the forecasting horizon), so a lane change is labeled on the
//! frames leading up to the boundary crossing.

use crate::geom::{normalize_angle, OrientedBox2D};

use super::{ActionLabel, LaneClass, MapDocument, MapTopology, TurnType};

const STOP_SPEED: f64 = 0.5; // m/s
const TURN_HEADING_CHANGE: f64 = 45.0 * std::f64::consts::PI / 180.0;
const LANE_CHANGE_HEADING_TOL: f64 = 15.0 * std::f64::consts::PI / 180.0;

/// Label every frame of a track. `boxes` has one entry per scenario frame
/// (None where the actor is absent); `horizon_frames` is the look-ahead /
/// look-behind window (3 s at 10 Hz = 30); `dt` the frame period in seconds.
pub fn label_actions(
    boxes: &[Option<OrientedBox2D>],
    map: &MapDocument,
    horizon_frames: usize,
    dt: f64,
) -> Vec<Option<ActionLabel>> {
    let topo = map.topology();
    let n = boxes.len();
    let speeds: Vec<Option<f64>> = (0..n).map(|t| speed_at(boxes, t, dt)).collect();
    (0..n)
        .map(|t| boxes[t].map(|_| label_frame(boxes, &speeds, map, &topo, t, horizon_frames)))
        .collect()
}

fn label_frame(
    boxes: &[Option<OrientedBox2D>],
    speeds: &[Option<f64>],
    map: &MapDocument,
    topo: &MapTopology,
    t: usize,
    horizon: usize,
) -> ActionLabel {
    let bx = boxes[t].expect("caller checked presence");
    let center = bx.center();
    let speed = speeds[t].unwrap_or(0.0);
    let on_vehicle_lane = !map.lanes_at(center, LaneClass::Vehicle).is_empty();

    if speed < STOP_SPEED {
        let lo = t.saturating_sub(horizon);
        let hi = (t + horizon).min(boxes.len() - 1);
        let all_slow = (lo..=hi)
            .filter_map(|k| speeds[k])
            .all(|s| s < STOP_SPEED);
        if all_slow && !on_vehicle_lane {
            return ActionLabel::Parked;
        }
        if on_vehicle_lane {
            return ActionLabel::StoppingStopped;
        }
        return ActionLabel::Other;
    }

    // Moving. Reversing (motion opposite heading) is 'other'.
    if let Some(v) = velocity_at(boxes, t) {
        let h = bx.heading();
        if v[0] * h[0] + v[1] * h[1] < 0.0 {
            return ActionLabel::Other;
        }
    }

    let lane = map.vehicle_lane_at(center, bx.phi);
    let Some(lane) = lane else {
        // Off every known surface and moving.
        return ActionLabel::Other;
    };

    match lane.turn_type {
        TurnType::Left => return ActionLabel::TurnLeft,
        TurnType::Right => return ActionLabel::TurnRight,
        TurnType::Straight => {}
    }

    // Heading-change fallback inside intersections (covers maps whose turn
    // lanes are not tagged).
    if map.in_intersection(center) {
        if let Some(change) = net_heading_change(boxes, t, horizon) {
            if change >= TURN_HEADING_CHANGE {
                return ActionLabel::TurnLeft;
            }
            if change <= -TURN_HEADING_CHANGE {
                return ActionLabel::TurnRight;
            }
        }
    }

    // Lane change: the centroid ends up on the adjacent lane within the
    // horizon while the heading stays near the lane direction.
    let left_id = topo.left_of.get(&lane.id).copied();
    let right_id = topo.right_of.get(&lane.id).copied();
    if left_id.is_some() || right_id.is_some() {
        for k in (t + 1)..=(t + horizon).min(boxes.len() - 1) {
            let Some(fut) = boxes[k] else { continue };
            if normalize_angle(fut.phi - bx.phi).abs() >= LANE_CHANGE_HEADING_TOL {
                break;
            }
            let fut_lane = map.vehicle_lane_at(fut.center(), fut.phi).map(|l| l.id);
            match fut_lane {
                Some(id) if Some(id) == left_id => return ActionLabel::LaneChangeLeft,
                Some(id) if Some(id) == right_id => return ActionLabel::LaneChangeRight,
                _ => {}
            }
        }
    }

    ActionLabel::KeepLane
}

/// Central-difference speed, one-sided at track ends.
fn speed_at(boxes: &[Option<OrientedBox2D>], t: usize, dt: f64) -> Option<f64> {
    boxes[t]?;
    let prev = if t > 0 { boxes[t - 1] } else { None };
    let next = if t + 1 < boxes.len() { boxes[t + 1] } else { None };
    let (a, b, span) = match (prev, next) {
        (Some(p), Some(n)) => (p, n, 2.0 * dt),
        (Some(p), None) => (p, boxes[t].unwrap(), dt),
        (None, Some(n)) => (boxes[t].unwrap(), n, dt),
        (None, None) => return Some(0.0),
    };
    let dx = b.cx - a.cx;
    let dy = b.cy - a.cy;
    Some((dx * dx + dy * dy).sqrt() / span)
}

fn velocity_at(boxes: &[Option<OrientedBox2D>], t: usize) -> Option<[f64; 2]> {
    let cur = boxes[t]?;
    if let Some(next) = boxes.get(t + 1).copied().flatten() {
        return Some([next.cx - cur.cx, next.cy - cur.cy]);
    }
    if t > 0 {
        if let Some(prev) = boxes[t - 1] {
            return Some([cur.cx - prev.cx, cur.cy - prev.cy]);
        }
    }
    None
}

/// Accumulated signed heading change over [t, t + horizon] (positive = left).
fn net_heading_change(boxes: &[Option<OrientedBox2D>], t: usize, horizon: usize) -> Option<f64> {
    let mut acc = 0.0;
    let mut prev = boxes[t]?.phi;
    let mut seen = false;
    for k in (t + 1)..=(t + horizon).min(boxes.len() - 1) {
        if let Some(b) = boxes[k] {
            acc += normalize_angle(b.phi - prev);
            prev = b.phi;
            seen = true;
        }
    }
    seen.then_some(acc)
}
