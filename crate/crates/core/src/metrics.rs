//! Evaluation: rotated-IoU average precision with a LiDAR point filter,
//! along/across-track and heading errors over true positives, and per-class
//! intention accuracy / F1.

use serde::{Deserialize, Serialize};

use crate::geom::{normalize_angle, rotated_iou, OrientedBox2D};
use crate::infer::Detection;
use crate::scene::ActionLabel;

/// Ground-truth boxes below `min_points` LiDAR points are ignored: they are
/// neither TP nor FN, and detections matching them are discarded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalFilter {
    pub min_points: u32,
}

impl Default for EvalFilter {
    fn default() -> Self {
        Self { min_points: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct GtBox {
    pub bbox: OrientedBox2D,
    pub point_count: u32,
    pub action: ActionLabel,
    /// Index of the source actor track (for future-horizon lookups).
    pub actor: usize,
}

/// Outcome of one pooled detection, in descending score order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetOutcome {
    /// Matched a valid ground truth: (frame, det index, gt index).
    Tp(usize, usize, usize),
    /// Matched only an ignored (filtered-out) ground truth.
    Ignored(usize, usize),
    Fp(usize, usize),
}

/// Pooled greedy matching: detections across all frames are sorted by score
/// (ties: frame then decode order) and each takes the highest-IoU unmatched
/// valid ground truth of its frame when the IoU reaches the threshold.
pub fn greedy_match(
    dets: &[Vec<Detection>],
    gt: &[Vec<GtBox>],
    iou_threshold: f64,
    filter: &EvalFilter,
) -> (Vec<(f64, DetOutcome)>, usize) {
    assert_eq!(dets.len(), gt.len(), "frame counts must align");
    let mut pooled: Vec<(usize, usize)> = Vec::new();
    for (f, frame_dets) in dets.iter().enumerate() {
        for d in 0..frame_dets.len() {
            pooled.push((f, d));
        }
    }
    pooled.sort_by(|a, b| {
        dets[b.0][b.1]
            .score
            .total_cmp(&dets[a.0][a.1].score)
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });

    let mut gt_matched: Vec<Vec<bool>> = gt.iter().map(|g| vec![false; g.len()]).collect();
    let n_valid: usize = gt
        .iter()
        .flat_map(|g| g.iter())
        .filter(|g| g.point_count >= filter.min_points)
        .count();

    let mut outcomes = Vec::with_capacity(pooled.len());
    for (f, d) in pooled {
        let det = &dets[f][d];
        let mut best_valid: Option<(f64, usize)> = None;
        let mut best_ignored: Option<f64> = None;
        for (gi, g) in gt[f].iter().enumerate() {
            let iou = rotated_iou(&det.bbox, &g.bbox);
            if iou < iou_threshold {
                continue;
            }
            if g.point_count >= filter.min_points {
                if !gt_matched[f][gi] {
                    match best_valid {
                        Some((bi, _)) if bi >= iou => {}
                        _ => best_valid = Some((iou, gi)),
                    }
                }
            } else {
                best_ignored = Some(best_ignored.unwrap_or(0.0).max(iou));
            }
        }
        let outcome = match (best_valid, best_ignored) {
            (Some((_, gi)), _) => {
                gt_matched[f][gi] = true;
                DetOutcome::Tp(f, d, gi)
            }
            (None, Some(_)) => DetOutcome::Ignored(f, d),
            (None, None) => DetOutcome::Fp(f, d),
        };
        outcomes.push((det.score, outcome));
    }
    (outcomes, n_valid)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApResult {
    pub ap: f64,
    pub recall: f64,
    /// Set when both ground truth and detections were empty (AP defined 1).
    pub degenerate_empty: bool,
}

/// Average precision with all-point interpolation over the pooled
/// precision-recall sweep.
pub fn detection_ap(
    dets: &[Vec<Detection>],
    gt: &[Vec<GtBox>],
    iou_threshold: f64,
    filter: &EvalFilter,
) -> ApResult {
    let (outcomes, n_valid) = greedy_match(dets, gt, iou_threshold, filter);
    let scored: Vec<&DetOutcome> = outcomes
        .iter()
        .map(|(_, o)| o)
        .filter(|o| !matches!(o, DetOutcome::Ignored(..)))
        .collect();
    if n_valid == 0 {
        return ApResult { ap: if scored.is_empty() { 1.0 } else { 0.0 }, recall: 0.0, degenerate_empty: scored.is_empty() };
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut curve: Vec<(f64, f64)> = Vec::with_capacity(scored.len());
    for o in &scored {
        match o {
            DetOutcome::Tp(..) => tp += 1,
            DetOutcome::Fp(..) => fp += 1,
            DetOutcome::Ignored(..) => unreachable!(),
        }
        curve.push((tp as f64 / n_valid as f64, tp as f64 / (tp + fp) as f64));
    }
    let recall = tp as f64 / n_valid as f64;
    // Precision envelope integrated over recall.
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..curve.len() {
        let (r, _) = curve[i];
        if r > prev_recall {
            let envelope = curve[i..]
                .iter()
                .map(|(_, p)| *p)
                .fold(0.0_f64, f64::max);
            ap += (r - prev_recall) * envelope;
            prev_recall = r;
        }
    }
    ApResult { ap, recall, degenerate_empty: false }
}

/// One matched true positive carried to the regression / intention tables:
/// predicted and ground-truth boxes per requested horizon (None when the
/// ground truth ends before the horizon).
#[derive(Debug, Clone)]
pub struct MatchedPair {
    pub pred: Vec<Option<OrientedBox2D>>,
    pub gt: Vec<Option<OrientedBox2D>>,
    pub gt_action: ActionLabel,
    pub pred_intent: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionErrorTable {
    pub horizons_s: Vec<f64>,
    pub along: Vec<f64>,
    pub across: Vec<f64>,
    pub l2: Vec<f64>,
    pub heading_deg: Vec<f64>,
    pub count: Vec<usize>,
    pub skipped: usize,
}

/// Displacement error decomposed along / across the ground-truth heading,
/// plus L2 and heading error (orientation wrapped to [0, 180) degrees, so
/// the maximum angular error is 90).
pub fn regression_errors(pairs: &[MatchedPair], horizons_s: &[f64]) -> RegressionErrorTable {
    let nh = horizons_s.len();
    let mut table = RegressionErrorTable {
        horizons_s: horizons_s.to_vec(),
        along: vec![0.0; nh],
        across: vec![0.0; nh],
        l2: vec![0.0; nh],
        heading_deg: vec![0.0; nh],
        count: vec![0; nh],
        skipped: 0,
    };
    for pair in pairs {
        for h in 0..nh {
            let (Some(p), Some(g)) = (
                pair.pred.get(h).copied().flatten(),
                pair.gt.get(h).copied().flatten(),
            ) else {
                table.skipped += 1;
                continue;
            };
            let d = [p.cx - g.cx, p.cy - g.cy];
            let u = g.heading();
            let along = (d[0] * u[0] + d[1] * u[1]).abs();
            let across = (d[0] * (-u[1]) + d[1] * u[0]).abs();
            table.along[h] += along;
            table.across[h] += across;
            table.l2[h] += (d[0] * d[0] + d[1] * d[1]).sqrt();
            table.heading_deg[h] += heading_error_deg(p.phi, g.phi);
            table.count[h] += 1;
        }
    }
    for h in 0..nh {
        if table.count[h] > 0 {
            let n = table.count[h] as f64;
            table.along[h] /= n;
            table.across[h] /= n;
            table.l2[h] /= n;
            table.heading_deg[h] /= n;
        }
    }
    table
}

/// Orientation difference wrapped to [0, 180) then folded (boxes are
/// symmetric under a half turn), in degrees.
pub fn heading_error_deg(pred: f64, gt: f64) -> f64 {
    let mut e = normalize_angle(pred - gt).abs();
    if e > std::f64::consts::FRAC_PI_2 {
        e = std::f64::consts::PI - e;
    }
    e.to_degrees()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Ground-truth occurrences.
    pub support: usize,
}

#[derive(Debug, Clone)]
pub struct IntentionReport {
    /// Indexed by [`ActionLabel::index`]; None for classes absent from both
    /// predictions and ground truth (excluded from the means).
    pub per_class: Vec<Option<ClassMetrics>>,
    pub mean_accuracy: f64,
    pub mean_f1: f64,
    pub absent: Vec<ActionLabel>,
}

/// One-vs-rest accuracy and F1 per class over (predicted argmax, gt label)
/// pairs.
pub fn intention_metrics(pairs: &[(usize, ActionLabel)]) -> IntentionReport {
    let n_classes = ActionLabel::ALL.len();
    let n = pairs.len();
    let mut per_class: Vec<Option<ClassMetrics>> = Vec::with_capacity(n_classes);
    let mut absent = Vec::new();
    let mut acc_sum = 0.0;
    let mut f1_sum = 0.0;
    let mut present = 0usize;
    for c in 0..n_classes {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        let mut tn = 0usize;
        for (pred, gt) in pairs {
            let p = *pred == c;
            let g = gt.index() == c;
            match (p, g) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        if tp + fp + fn_ == 0 {
            per_class.push(None);
            absent.push(ActionLabel::ALL[c]);
            continue;
        }
        let accuracy = if n > 0 { (tp + tn) as f64 / n as f64 } else { 0.0 };
        let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
        let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        acc_sum += accuracy;
        f1_sum += f1;
        present += 1;
        per_class.push(Some(ClassMetrics { accuracy, precision, recall, f1, support: tp + fn_ }));
    }
    IntentionReport {
        per_class,
        mean_accuracy: if present > 0 { acc_sum / present as f64 } else { 0.0 },
        mean_f1: if present > 0 { f1_sum / present as f64 } else { 0.0 },
        absent,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(x: f64, y: f64, score: f64) -> Detection {
        Detection {
            bbox: OrientedBox2D::new(x, y, 4.0, 2.0, 0.0).unwrap(),
            score,
            intent: vec![0.125; 8],
            waypoints: vec![],
        }
    }

    fn gtb(x: f64, y: f64, points: u32) -> GtBox {
        GtBox {
            bbox: OrientedBox2D::new(x, y, 4.0, 2.0, 0.0).unwrap(),
            point_count: points,
            action: ActionLabel::KeepLane,
            actor: 0,
        }
    }

    #[test]
    fn perfect_predictions_have_unit_ap_at_any_threshold() {
        let gt = vec![vec![gtb(0.0, 0.0, 10), gtb(10.0, 0.0, 3)]];
        let dets = vec![vec![det(0.0, 0.0, 0.9), det(10.0, 0.0, 0.8)]];
        for thr in [0.5, 0.7, 0.9] {
            let r = detection_ap(&dets, &gt, thr, &EvalFilter::default());
            assert_eq!(r.ap, 1.0, "thr {thr}");
            assert_eq!(r.recall, 1.0);
        }
    }

    #[test]
    fn no_detections_give_zero_ap() {
        let gt = vec![vec![gtb(0.0, 0.0, 10)]];
        let dets = vec![vec![]];
        let r = detection_ap(&dets, &gt, 0.5, &EvalFilter::default());
        assert_eq!(r.ap, 0.0);
    }

    #[test]
    fn empty_everything_is_flagged_unit_ap() {
        let r = detection_ap(&[vec![]], &[vec![]], 0.5, &EvalFilter::default());
        assert_eq!(r.ap, 1.0);
        assert!(r.degenerate_empty);
        let r = detection_ap(&[vec![det(0.0, 0.0, 0.9)]], &[vec![]], 0.5, &EvalFilter::default());
        assert_eq!(r.ap, 0.0);
    }

    #[test]
    fn hand_fixture_matches_manual_pr_integration() {
        // 3 valid gts; 4 detections: two hit gt0 (duplicate), one hits gt1,
        // one is a pure false positive. Scores order them as
        // tp(0.9), dup->fp(0.8), fp(0.7), tp(0.6).
        let gt = vec![vec![gtb(0.0, 0.0, 5), gtb(10.0, 0.0, 5), gtb(20.0, 0.0, 5)]];
        let dets = vec![vec![
            det(0.0, 0.0, 0.9),
            det(0.2, 0.0, 0.8),
            det(40.0, 0.0, 0.7),
            det(10.0, 0.0, 0.6),
        ]];
        let r = detection_ap(&dets, &gt, 0.5, &EvalFilter::default());
        // PR points: (1/3, 1), (1/3, 1/2), (1/3, 1/3), (2/3, 1/2).
        // Envelope: [0, 1/3] -> 1; (1/3, 2/3] -> 1/2; beyond 2/3 recall 0.
        let expect = (1.0 / 3.0) * 1.0 + (1.0 / 3.0) * 0.5;
        assert!((r.ap - expect).abs() < 1e-12, "{}", r.ap);
        assert!((r.recall - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn filtered_gt_is_ignored_and_matching_detections_discarded() {
        // gt0 has 0 points -> ignored; a detection on it must not count as FP.
        let gt = vec![vec![gtb(0.0, 0.0, 0), gtb(10.0, 0.0, 5)]];
        let dets = vec![vec![det(0.0, 0.0, 0.95), det(10.0, 0.0, 0.9)]];
        let r = detection_ap(&dets, &gt, 0.5, &EvalFilter::default());
        assert_eq!(r.ap, 1.0);
        assert_eq!(r.recall, 1.0);
        // With the filter off both count.
        let r = detection_ap(&dets, &gt, 0.5, &EvalFilter { min_points: 0 });
        assert_eq!(r.ap, 1.0);
    }

    #[test]
    fn ap_is_monotone_in_iou_threshold() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let gt: Vec<Vec<GtBox>> = (0..5)
            .map(|_| (0..4).map(|k| gtb(10.0 * k as f64, rng.gen_range(-2.0..2.0), 5)).collect())
            .collect();
        let dets: Vec<Vec<Detection>> = gt
            .iter()
            .map(|frame| {
                frame
                    .iter()
                    .map(|g| {
                        det(
                            g.bbox.cx + rng.gen_range(-1.0..1.0),
                            g.bbox.cy + rng.gen_range(-1.0..1.0),
                            rng.gen_range(0.2..1.0),
                        )
                    })
                    .collect()
            })
            .collect();
        let mut prev = f64::INFINITY;
        for thr in [0.5, 0.6, 0.7, 0.8, 0.9] {
            let r = detection_ap(&dets, &gt, thr, &EvalFilter::default());
            assert!(r.ap <= prev + 1e-12);
            prev = r.ap;
        }
    }

    fn pair_at(
        pred: (f64, f64, f64),
        gt: (f64, f64, f64),
    ) -> MatchedPair {
        MatchedPair {
            pred: vec![Some(OrientedBox2D::new(pred.0, pred.1, 4.0, 2.0, pred.2).unwrap())],
            gt: vec![Some(OrientedBox2D::new(gt.0, gt.1, 4.0, 2.0, gt.2).unwrap())],
            gt_action: ActionLabel::KeepLane,
            pred_intent: vec![0.125; 8],
        }
    }

    #[test]
    fn perfect_prediction_has_zero_errors() {
        let t = regression_errors(&[pair_at((1.0, 2.0, 0.5), (1.0, 2.0, 0.5))], &[0.0]);
        assert_eq!(t.along[0], 0.0);
        assert_eq!(t.across[0], 0.0);
        assert_eq!(t.l2[0], 0.0);
        assert_eq!(t.heading_deg[0], 0.0);
    }

    #[test]
    fn unit_x_displacement_with_zero_heading() {
        let t = regression_errors(&[pair_at((1.0, 0.0, 0.0), (0.0, 0.0, 0.0))], &[0.0]);
        assert!((t.along[0] - 1.0).abs() < 1e-12);
        assert!(t.across[0].abs() < 1e-12);
        assert!((t.l2[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_displacement_along_45_degree_heading() {
        let phi = std::f64::consts::FRAC_PI_4;
        let t = regression_errors(&[pair_at((1.0, 1.0, phi), (0.0, 0.0, phi))], &[0.0]);
        assert!((t.along[0] - 2.0_f64.sqrt()).abs() < 1e-12);
        assert!(t.across[0].abs() < 1e-12);
    }

    #[test]
    fn along_across_decomposition_is_pythagorean() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let pair = pair_at(
                (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-3.0..3.0)),
                (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-3.0..3.0)),
            );
            let t = regression_errors(&[pair], &[0.0]);
            assert!((t.along[0].powi(2) + t.across[0].powi(2) - t.l2[0].powi(2)).abs() < 1e-9);
        }
    }

    #[test]
    fn missing_horizon_is_skipped_and_counted() {
        let mut pair = pair_at((0.0, 0.0, 0.0), (0.0, 0.0, 0.0));
        pair.pred.push(Some(OrientedBox2D::new(1.0, 0.0, 4.0, 2.0, 0.0).unwrap()));
        pair.gt.push(None);
        let t = regression_errors(&[pair], &[0.0, 1.0]);
        assert_eq!(t.count, vec![1, 0]);
        assert_eq!(t.skipped, 1);
    }

    #[test]
    fn heading_error_folds_half_turn() {
        assert!(heading_error_deg(0.0, std::f64::consts::PI) < 1e-9);
        assert!((heading_error_deg(0.0, std::f64::consts::FRAC_PI_2) - 90.0).abs() < 1e-9);
        assert!((heading_error_deg(0.1, 0.0) - 0.1_f64.to_degrees()).abs() < 1e-9);
    }

    #[test]
    fn perfect_intention_classification() {
        let pairs: Vec<(usize, ActionLabel)> = ActionLabel::ALL
            .iter()
            .map(|a| (a.index(), *a))
            .collect();
        let r = intention_metrics(&pairs);
        assert_eq!(r.mean_accuracy, 1.0);
        assert_eq!(r.mean_f1, 1.0);
        assert!(r.absent.is_empty());
    }

    #[test]
    fn never_predicted_class_has_zero_f1() {
        // Class turn_left present in gt but never predicted.
        let pairs = vec![
            (ActionLabel::KeepLane.index(), ActionLabel::TurnLeft),
            (ActionLabel::KeepLane.index(), ActionLabel::KeepLane),
        ];
        let r = intention_metrics(&pairs);
        let tl = r.per_class[ActionLabel::TurnLeft.index()].unwrap();
        assert_eq!(tl.recall, 0.0);
        assert_eq!(tl.f1, 0.0);
    }

    #[test]
    fn absent_class_is_excluded_and_flagged() {
        let pairs = vec![(ActionLabel::KeepLane.index(), ActionLabel::KeepLane)];
        let r = intention_metrics(&pairs);
        assert!(r.absent.contains(&ActionLabel::Parked));
        assert!(r.per_class[ActionLabel::Parked.index()].is_none());
        assert_eq!(r.mean_f1, 1.0);
    }

    #[test]
    fn confusion_fixture_matches_hand_arithmetic() {
        use ActionLabel::*;
        // 10 samples, two confusions: one TurnLeft -> KeepLane, one
        // KeepLane -> TurnRight.
        let pairs = vec![
            (KeepLane.index(), KeepLane),
            (KeepLane.index(), KeepLane),
            (KeepLane.index(), KeepLane),
            (TurnRight.index(), KeepLane),
            (KeepLane.index(), TurnLeft),
            (TurnLeft.index(), TurnLeft),
            (TurnRight.index(), TurnRight),
            (TurnRight.index(), TurnRight),
            (Parked.index(), Parked),
            (Parked.index(), Parked),
        ];
        let r = intention_metrics(&pairs);
        // keep_lane: tp=3 fp=1 fn=1 tn=5 -> P=3/4 R=3/4 F1=3/4, acc=8/10.
        let kl = r.per_class[KeepLane.index()].unwrap();
        assert!((kl.f1 - 0.75).abs() < 1e-12);
        assert!((kl.accuracy - 0.8).abs() < 1e-12);
        // turn_left: tp=1 fp=0 fn=1 -> P=1 R=1/2 F1=2/3.
        let tl = r.per_class[TurnLeft.index()].unwrap();
        assert!((tl.f1 - 2.0 / 3.0).abs() < 1e-12);
        // turn_right: tp=2 fp=1 fn=0 -> P=2/3 R=1 F1=4/5.
        let tr = r.per_class[TurnRight.index()].unwrap();
        assert!((tr.f1 - 0.8).abs() < 1e-12);
        // parked: perfect.
        let p = r.per_class[Parked.index()].unwrap();
        assert_eq!(p.f1, 1.0);
    }
}
