//! Inference: score thresholding and decoding of head outputs, greedy
//! rotated-IoU NMS, and prediction-based tracklet decoding.

mod dump;
mod track;

pub use dump::{load_predictions, save_predictions, FramePredictions, LoggedDetection, PredictionLog};
pub use track::{Tracker, TrackerConfig, Tracklet};

use serde::{Deserialize, Serialize};

use crate::anchors::{decode_targets, AnchorGrid, RegressionTargets};
use crate::geom::{rotated_iou, OrientedBox2D};
use crate::net::HeadOutputs;

/// One decoded vehicle hypothesis: current box, vehicle probability, 8-way
/// intention distribution and future waypoints (0.5 s apart).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: OrientedBox2D,
    pub score: f64,
    pub intent: Vec<f64>,
    pub waypoints: Vec<OrientedBox2D>,
}

impl Detection {
    pub fn intent_argmax(&self) -> usize {
        self.intent
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

/// Decode every anchor whose vehicle probability reaches the threshold.
/// Candidates with a degenerate (sin, cos) pair are dropped and counted.
pub fn decode_detections(
    outputs: &HeadOutputs,
    grid: &AnchorGrid,
    threshold: f64,
) -> (Vec<Detection>, usize) {
    let mut out = Vec::new();
    let mut dropped = 0;
    debug_assert_eq!(outputs.rows(), grid.rows);
    debug_assert_eq!(outputs.cols(), grid.cols);
    for i in 0..grid.rows {
        for j in 0..grid.cols {
            for k in 0..grid.anchors_per_cell {
                let p = outputs.vehicle_prob(i, j, k);
                if p < threshold {
                    continue;
                }
                let flat = outputs.reg_values(i, j, k);
                let targets = RegressionTargets::from_flat(&flat, outputs.t_future);
                let anchor = grid.anchor(grid.flat(i, j, k));
                match decode_targets(&targets, anchor) {
                    Ok(boxes) => out.push(Detection {
                        bbox: boxes[0],
                        score: p,
                        intent: outputs.intent_dist(i, j),
                        waypoints: boxes[1..].to_vec(),
                    }),
                    Err(_) => dropped += 1,
                }
            }
        }
    }
    (out, dropped)
}

/// Greedy NMS: sort by score descending (ties keep decode order), keep a
/// detection iff its rotated IoU with every kept detection stays below the
/// threshold.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|a, b| dets[*b].score.total_cmp(&dets[*a].score).then(a.cmp(b)));
    let mut kept: Vec<usize> = Vec::new();
    for cand in order {
        if kept
            .iter()
            .all(|k| rotated_iou(&dets[*k].bbox, &dets[cand].bbox) < iou_threshold)
        {
            kept.push(cand);
        }
    }
    kept.into_iter().map(|i| dets[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchors::{assign_targets, build_anchor_grid, encode_targets, AnchorSpec};
    use crate::encoder::VoxelConfig;
    use crate::net::HeadOutputs;
    use crate::tensor::Tensor;

    fn toy_cfg() -> VoxelConfig {
        VoxelConfig {
            length: 51.2,
            width: 51.2,
            height: 5.8,
            resolution: 0.4,
            height_resolution: 1.45,
            t_past: 2,
        }
    }

    /// HeadOutputs where everything is background except explicit entries.
    fn synth_outputs(
        grid: &AnchorGrid,
        t_future: usize,
        entries: &[(usize, f64, Vec<f64>)],
    ) -> HeadOutputs {
        let (rows, cols, k) = (grid.rows, grid.cols, grid.anchors_per_cell);
        let width = RegressionTargets::width(t_future);
        let mut det = Tensor::zeros(&[k * 2, rows, cols]);
        // Strong background everywhere.
        for kk in 0..k {
            for r in 0..rows {
                for c in 0..cols {
                    det.set3(kk * 2 + 1, r, c, 12.0);
                }
            }
        }
        let mut reg = Tensor::zeros(&[k * width, rows, cols]);
        // Identity heading so zero targets stay decodable.
        for kk in 0..k {
            for r in 0..rows {
                for c in 0..cols {
                    reg.set3(kk * width + 3, r, c, 1.0);
                }
            }
        }
        let intent = Tensor::zeros(&[8, rows, cols]);
        for (anchor_flat, score_logit, flat) in entries {
            let (i, j, kk) = grid.unflatten(*anchor_flat);
            det.set3(kk * 2, i, j, *score_logit);
            det.set3(kk * 2 + 1, i, j, 0.0);
            for (r, v) in flat.iter().enumerate() {
                reg.set3(kk * width + r, i, j, *v);
            }
        }
        HeadOutputs { det_logits: det, intent_logits: intent, reg, anchors_per_cell: k, t_future }
    }

    #[test]
    fn all_background_decodes_to_nothing() {
        let grid = build_anchor_grid(&toy_cfg(), &AnchorSpec::default()).unwrap();
        let outputs = synth_outputs(&grid, 2, &[]);
        let (dets, dropped) = decode_detections(&outputs, &grid, 0.1);
        assert!(dets.is_empty());
        assert_eq!(dropped, 0);
    }

    #[test]
    fn anchor_with_identity_regression_decodes_to_itself() {
        let grid = build_anchor_grid(&toy_cfg(), &AnchorSpec::default()).unwrap();
        let a = grid.flat(4, 5, 2);
        let mut flat = vec![0.0; RegressionTargets::width(2)];
        flat[3] = 1.0;
        for t in 0..2 {
            flat[6 + 4 * t + 3] = 1.0;
        }
        let outputs = synth_outputs(&grid, 2, &[(a, 4.0, flat)]);
        let (dets, _) = decode_detections(&outputs, &grid, 0.1);
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].bbox, *grid.anchor(a));
        assert!(dets[0].score > 0.9);
    }

    #[test]
    fn degenerate_heading_is_dropped_and_counted() {
        let grid = build_anchor_grid(&toy_cfg(), &AnchorSpec::default()).unwrap();
        let a = grid.flat(1, 1, 0);
        let flat = vec![0.0; RegressionTargets::width(2)]; // sin = cos = 0
        let outputs = synth_outputs(&grid, 2, &[(a, 4.0, flat)]);
        let (dets, dropped) = decode_detections(&outputs, &grid, 0.1);
        assert!(dets.is_empty());
        assert_eq!(dropped, 1);
    }

    #[test]
    fn encode_decode_roundtrip_recovers_scene() {
        let grid = build_anchor_grid(&toy_cfg(), &AnchorSpec::default()).unwrap();
        let t_future = 2;
        let gt: Vec<Vec<OrientedBox2D>> = vec![
            (0..=t_future)
                .map(|t| OrientedBox2D::new(-10.0 + t as f64, 4.0, 4.6, 2.0, 0.2).unwrap())
                .collect(),
            (0..=t_future)
                .map(|t| OrientedBox2D::new(8.0, -6.0 + 2.0 * t as f64, 4.4, 1.9, 1.4).unwrap())
                .collect(),
        ];
        let current: Vec<OrientedBox2D> = gt.iter().map(|track| track[0]).collect();
        let assignment = assign_targets(&grid, &current);
        let entries: Vec<(usize, f64, Vec<f64>)> = assignment
            .positives()
            .map(|(a, g)| (a, 6.0, encode_targets(&gt[g], grid.anchor(a)).flatten()))
            .collect();
        assert!(!entries.is_empty());
        let outputs = synth_outputs(&grid, t_future, &entries);
        let (dets, dropped) = decode_detections(&outputs, &grid, 0.1);
        assert_eq!(dropped, 0);
        let kept = nms(&dets, 0.1);
        assert_eq!(kept.len(), 2);
        for track in &gt {
            let best = kept
                .iter()
                .map(|d| {
                    (d, (d.bbox.cx - track[0].cx).hypot(d.bbox.cy - track[0].cy))
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0;
            assert!((best.bbox.cx - track[0].cx).abs() < 1e-9);
            assert!((best.bbox.cy - track[0].cy).abs() < 1e-9);
            assert!((best.bbox.w - track[0].w).abs() < 1e-9);
            for (wp, gt_b) in best.waypoints.iter().zip(&track[1..]) {
                assert!((wp.cx - gt_b.cx).abs() < 1e-9);
                assert!((wp.cy - gt_b.cy).abs() < 1e-9);
            }
        }
    }

    fn det_at(x: f64, y: f64, score: f64) -> Detection {
        Detection {
            bbox: OrientedBox2D::new(x, y, 4.0, 2.0, 0.0).unwrap(),
            score,
            intent: vec![0.125; 8],
            waypoints: vec![],
        }
    }

    #[test]
    fn nms_single_detection_survives() {
        let d = vec![det_at(0.0, 0.0, 0.7)];
        assert_eq!(nms(&d, 0.1).len(), 1);
    }

    #[test]
    fn nms_keeps_higher_score_of_identical_pair() {
        let d = vec![det_at(0.0, 0.0, 0.8), det_at(0.0, 0.0, 0.9)];
        let kept = nms(&d, 0.1);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
    }

    #[test]
    fn nms_matches_reference_on_random_sets() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let dets: Vec<Detection> = (0..50)
                .map(|_| {
                    let mut d = det_at(
                        rng.gen_range(-20.0..20.0),
                        rng.gen_range(-20.0..20.0),
                        rng.gen_range(0.1..1.0),
                    );
                    d.bbox.phi = rng.gen_range(-3.1..3.1);
                    d
                })
                .collect();
            let kept = nms(&dets, 0.1);
            // Reference: explicit pairwise suppression table.
            let mut order: Vec<usize> = (0..dets.len()).collect();
            order.sort_by(|a, b| dets[*b].score.total_cmp(&dets[*a].score).then(a.cmp(b)));
            let mut suppressed = vec![false; dets.len()];
            let mut reference = Vec::new();
            for &i in &order {
                if suppressed[i] {
                    continue;
                }
                reference.push(dets[i].clone());
                for &j in &order {
                    if !suppressed[j]
                        && j != i
                        && rotated_iou(&dets[i].bbox, &dets[j].bbox) >= 0.1
                    {
                        suppressed[j] = true;
                    }
                }
            }
            assert_eq!(kept, reference);
            // Pairwise IoU among kept stays below the threshold.
            for a in 0..kept.len() {
                for b in (a + 1)..kept.len() {
                    assert!(rotated_iou(&kept[a].bbox, &kept[b].bbox) < 0.1);
                }
            }
        }
    }
}
