//! Tracklet decoding: current detections are associated against positions
//! that earlier frames predicted for *now*, so the network's own forecasts
//! carry identity. Scores fuse by EMA; briefly missed tracklets coast along
//! their predicted waypoints with a decayed score before retiring.

use serde::{Deserialize, Serialize};

use crate::geom::OrientedBox2D;

use super::Detection;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Association gate on center distance, meters.
    pub gate: f64,
    /// Weight of the incoming detection score in the EMA fuse.
    pub ema_weight: f64,
    /// Frames a tracklet may coast unmatched before retiring.
    pub coast_frames: usize,
    /// Score multiplier per coasted frame.
    pub score_decay: f64,
    /// Seconds between waypoints.
    pub waypoint_dt: f64,
    /// Seconds between tracker frames.
    pub frame_dt: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            gate: 2.0,
            ema_weight: 0.5,
            coast_frames: 2,
            score_decay: 0.5,
            waypoint_dt: 0.5,
            frame_dt: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Tracklet {
    pub id: u64,
    /// Real (non-coasted) detections, newest last.
    pub history: Vec<(usize, Detection)>,
    pub fused_score: f64,
    pub misses: usize,
}

impl Tracklet {
    fn last(&self) -> &(usize, Detection) {
        self.history.last().expect("tracklet never empty")
    }

    /// Interpolate the last real detection's forecast at the given frame.
    fn predicted_box(&self, frame: usize, cfg: &TrackerConfig) -> OrientedBox2D {
        let (f0, det) = self.last();
        let tau = (frame - f0) as f64 * cfg.frame_dt;
        if det.waypoints.is_empty() || tau <= 0.0 {
            return det.bbox;
        }
        // Piecewise-linear through (0, bbox), (dt, wp1), (2 dt, wp2), ...
        let seg = (tau / cfg.waypoint_dt).floor() as usize;
        let total = det.waypoints.len();
        if seg >= total {
            return det.waypoints[total - 1];
        }
        let a = if seg == 0 { det.bbox } else { det.waypoints[seg - 1] };
        let b = det.waypoints[seg];
        let u = (tau - seg as f64 * cfg.waypoint_dt) / cfg.waypoint_dt;
        OrientedBox2D {
            cx: a.cx + u * (b.cx - a.cx),
            cy: a.cy + u * (b.cy - a.cy),
            w: a.w,
            h: a.h,
            phi: crate::geom::normalize_angle(a.phi + u * crate::geom::normalize_angle(b.phi - a.phi)),
        }
    }
}

/// Per-frame tracker output: the detection (real or coasted) with its
/// identity and fused score.
#[derive(Debug, Clone)]
pub struct TrackedDetection {
    pub tracklet_id: u64,
    pub detection: Detection,
    pub fused_score: f64,
    pub coasted: bool,
}

#[derive(Debug, Default)]
pub struct Tracker {
    pub cfg: TrackerConfig,
    tracklets: Vec<Tracklet>,
    next_id: u64,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Self {
        Self { cfg, tracklets: Vec::new(), next_id: 0 }
    }

    pub fn tracklets(&self) -> &[Tracklet] {
        &self.tracklets
    }

    /// Associate this frame's post-NMS detections, then coast or retire the
    /// unmatched tracklets. Must be called with strictly increasing frames.
    pub fn update(&mut self, dets: Vec<Detection>, frame: usize) -> Vec<TrackedDetection> {
        // Predictions of the live tracklets for this frame.
        let predictions: Vec<OrientedBox2D> =
            self.tracklets.iter().map(|t| t.predicted_box(frame, &self.cfg)).collect();
        let mut claimed = vec![false; self.tracklets.len()];

        // Greedy in score order (ties keep input order).
        let mut order: Vec<usize> = (0..dets.len()).collect();
        order.sort_by(|a, b| dets[*b].score.total_cmp(&dets[*a].score).then(a.cmp(b)));

        let mut out: Vec<TrackedDetection> = Vec::with_capacity(dets.len());
        let mut matched_det = vec![false; dets.len()];
        for &di in &order {
            let det = &dets[di];
            let mut best: Option<(f64, usize)> = None;
            for (ti, pred) in predictions.iter().enumerate() {
                if claimed[ti] {
                    continue;
                }
                let dist = (det.bbox.cx - pred.cx).hypot(det.bbox.cy - pred.cy);
                if dist > self.cfg.gate {
                    continue;
                }
                match best {
                    Some((bd, _)) if bd <= dist => {}
                    _ => best = Some((dist, ti)),
                }
            }
            if let Some((_, ti)) = best {
                claimed[ti] = true;
                matched_det[di] = true;
                let t = &mut self.tracklets[ti];
                t.fused_score =
                    (1.0 - self.cfg.ema_weight) * t.fused_score + self.cfg.ema_weight * det.score;
                t.misses = 0;
                t.history.push((frame, det.clone()));
                out.push(TrackedDetection {
                    tracklet_id: t.id,
                    detection: det.clone(),
                    fused_score: t.fused_score,
                    coasted: false,
                });
            }
        }

        // Unmatched detections found new tracklets.
        for (di, det) in dets.iter().enumerate() {
            if matched_det[di] {
                continue;
            }
            let id = self.next_id;
            self.next_id += 1;
            self.tracklets.push(Tracklet {
                id,
                history: vec![(frame, det.clone())],
                fused_score: det.score,
                misses: 0,
            });
            out.push(TrackedDetection {
                tracklet_id: id,
                detection: det.clone(),
                fused_score: det.score,
                coasted: false,
            });
        }

        // Unmatched tracklets coast on their own forecast, then retire.
        let cfg = self.cfg;
        let mut retired: Vec<usize> = Vec::new();
        for (ti, t) in self.tracklets.iter_mut().enumerate() {
            let was_matched = claimed.get(ti).copied().unwrap_or(true);
            if was_matched || t.last().0 == frame {
                continue;
            }
            t.misses += 1;
            if t.misses > cfg.coast_frames {
                retired.push(ti);
                continue;
            }
            t.fused_score *= cfg.score_decay;
            let predicted = t.predicted_box(frame, &cfg);
            let last_det = &t.last().1;
            out.push(TrackedDetection {
                tracklet_id: t.id,
                detection: Detection {
                    bbox: predicted,
                    score: t.fused_score,
                    intent: last_det.intent.clone(),
                    waypoints: last_det.waypoints.clone(),
                },
                fused_score: t.fused_score,
                coasted: true,
            });
        }
        for ti in retired.into_iter().rev() {
            self.tracklets.remove(ti);
        }
        out
    }
}
