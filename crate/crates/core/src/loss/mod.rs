//! The multi-task objective: binary focal detection loss over hard-mined
//! anchors, weighted smooth-L1 trajectory regression over positives with a
//! temporal discount, and intention cross-entropy with dominant-class
//! downsampling.
//!
//! The arithmetic lives in pure functions here; [`tape_ops`] wraps the same
//! kernels as differentiable tape ops with analytic gradients.

mod tape_ops;

pub use tape_ops::{attach_losses, LossInputs};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("loss config invalid: {0}")]
    Config(String),
    #[error("targets provided for anchor {0} which is not positive")]
    TargetWithoutPositive(usize),
}

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Intention stream weight.
    pub alpha: f64,
    /// Regression stream weight.
    pub beta: f64,
    /// Temporal discount.
    pub lambda: f64,
    /// Per-target smooth-L1 weights [cx, cy, sin, cos, w, h]; future steps
    /// reuse the first four.
    pub chi: [f64; 6],
    /// Hard-negative mining ratio (negatives per positive).
    pub neg_pos_ratio: usize,
    /// Exponent on (1 - p_bar).
    pub focal_gamma: f64,
    /// Keep probability for dominant-class intention cells.
    pub downsample_keep: f64,
    /// Top-K negatives used when a batch has no positives.
    pub zero_positive_negatives: usize,
    /// Normalize each term by its sample count (raw sums when false).
    pub normalized: bool,
    /// Supervise intention at future steps too (labels from future frames).
    pub future_intent_supervision: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            lambda: 0.97,
            chi: [1.0; 6],
            neg_pos_ratio: 3,
            focal_gamma: 1.0,
            downsample_keep: 0.05,
            zero_positive_negatives: 64,
            normalized: true,
            future_intent_supervision: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(LossError::Config(format!("lambda {} outside (0, 1]", self.lambda)));
        }
        if self.chi.iter().any(|c| *c <= 0.0) {
            return Err(LossError::Config("chi weights must be positive".into()));
        }
        if self.neg_pos_ratio == 0 {
            return Err(LossError::Config("neg_pos_ratio must be positive".into()));
        }
        if !(self.downsample_keep > 0.0 && self.downsample_keep <= 1.0) {
            return Err(LossError::Config(format!(
                "downsample_keep {} outside (0, 1]",
                self.downsample_keep
            )));
        }
        if self.focal_gamma < 0.0 {
            return Err(LossError::Config("focal_gamma must be >= 0".into()));
        }
        Ok(())
    }

    /// Smooth-L1 weight of flat regression component r.
    pub fn chi_for(&self, r: usize) -> f64 {
        if r < 6 {
            self.chi[r]
        } else {
            self.chi[(r - 6) % 4]
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DetCounts {
    pub positives: usize,
    pub mined_negatives: usize,
    pub clamped: usize,
}

/// Per-batch loss values; `total` combines the streams with the temporal
/// discount.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub cla: f64,
    /// Intention term per time step (index 0 = current frame).
    pub int: Vec<f64>,
    /// Regression term per time step.
    pub reg: Vec<f64>,
    pub total: f64,
    pub n_positive: usize,
    pub n_mined_negative: usize,
    pub n_intent_cells: usize,
    pub clamped: usize,
}

impl LossBreakdown {
    pub fn csv_header(t_future: usize) -> String {
        let mut cols = vec!["step".to_string(), "cla".to_string()];
        for t in 0..=t_future {
            cols.push(format!("int{t}"));
        }
        for t in 0..=t_future {
            cols.push(format!("reg{t}"));
        }
        cols.extend(
            ["total", "n_pos", "n_neg", "n_int", "n_clamped"].iter().map(|s| s.to_string()),
        );
        cols.join(",")
    }

    pub fn csv_row(&self, step: u64) -> String {
        let mut cols = vec![step.to_string(), format_f64(self.cla)];
        cols.extend(self.int.iter().map(|v| format_f64(*v)));
        cols.extend(self.reg.iter().map(|v| format_f64(*v)));
        cols.push(format_f64(self.total));
        cols.push(self.n_positive.to_string());
        cols.push(self.n_mined_negative.to_string());
        cols.push(self.n_intent_cells.to_string());
        cols.push(self.clamped.to_string());
        cols.join(",")
    }
}

fn format_f64(v: f64) -> String {
    // Shortest round-trip representation; bitwise stable across runs.
    format!("{v}")
}

/// Smooth L1: quadratic inside the unit error, linear outside; continuous
/// and once-differentiable at |x - y| = 1.
pub fn smooth_l1(x: f64, y: f64) -> f64 {
    let d = (x - y).abs();
    if d < 1.0 {
        0.5 * d * d
    } else {
        d - 0.5
    }
}

/// d smooth_l1 / dx.
pub fn smooth_l1_grad(x: f64, y: f64) -> f64 {
    let d = x - y;
    if d.abs() < 1.0 {
        d
    } else {
        d.signum()
    }
}

/// Hard-negative mining: indices of the top negatives ranked by predicted
/// vehicle probability (ties to the lower index), 3:1 against positives, or
/// the fixed top-K when the batch has no positives.
pub fn mine_negatives(p: &[f64], q: &[bool], cfg: &LossConfig) -> Vec<usize> {
    let n_pos = q.iter().filter(|v| **v).count();
    let want = if n_pos > 0 {
        cfg.neg_pos_ratio * n_pos
    } else {
        cfg.zero_positive_negatives
    };
    let mut negatives: Vec<usize> = (0..p.len()).filter(|i| !q[*i]).collect();
    negatives.sort_unstable_by(|a, b| p[*b].total_cmp(&p[*a]).then(a.cmp(b)));
    negatives.truncate(want);
    negatives
}

fn focal_term(p_bar: f64, gamma: f64) -> (f64, bool) {
    let clamped = !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p_bar);
    let s = p_bar.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    ((1.0 - s).powf(gamma) * (-s.ln()), clamped)
}

/// Binary focal loss over all positives plus the mined negatives. `p` holds
/// the predicted vehicle probability per anchor, `q` the assignment labels.
pub fn focal_detection_loss(p: &[f64], q: &[bool], cfg: &LossConfig) -> (f64, DetCounts) {
    assert_eq!(p.len(), q.len());
    let mined = mine_negatives(p, q, cfg);
    let mut counts = DetCounts::default();
    let mut sum = 0.0;
    for (i, is_pos) in q.iter().enumerate() {
        if *is_pos {
            let (term, clamped) = focal_term(p[i], cfg.focal_gamma);
            sum += term;
            counts.positives += 1;
            counts.clamped += clamped as usize;
        }
    }
    for i in &mined {
        let (term, clamped) = focal_term(1.0 - p[*i], cfg.focal_gamma);
        sum += term;
        counts.clamped += clamped as usize;
    }
    counts.mined_negatives = mined.len();
    let denom = counts.positives + counts.mined_negatives;
    if cfg.normalized && denom > 0 {
        sum /= denom as f64;
    }
    (sum, counts)
}

/// Weighted smooth-L1 over positive anchors, one scalar per time step.
/// `preds` and `targets` hold the flat regression vectors (layout from
/// [`crate::anchors::RegressionTargets::flatten`]) of each positive anchor.
pub fn regression_loss(
    preds: &[Vec<f64>],
    targets: &[Vec<f64>],
    cfg: &LossConfig,
    t_future: usize,
) -> Vec<f64> {
    assert_eq!(preds.len(), targets.len());
    let mut per_t = vec![0.0; t_future + 1];
    for (x, y) in preds.iter().zip(targets) {
        for r in 0..y.len() {
            let t = if r < 6 { 0 } else { 1 + (r - 6) / 4 };
            per_t[t] += cfg.chi_for(r) * smooth_l1(x[r], y[r]);
        }
    }
    if cfg.normalized && !preds.is_empty() {
        let n = preds.len() as f64;
        per_t.iter_mut().for_each(|v| *v /= n);
    }
    per_t
}

/// Dominant-class downsampling: cells labeled keep-lane / stopped / parked
/// survive with `downsample_keep` probability, everything else always
/// survives. Indices into `labels` are returned in order.
pub fn sample_intent_cells<R: Rng>(
    labels: &[(usize, usize)],
    cfg: &LossConfig,
    rng: &mut R,
) -> Vec<usize> {
    use crate::scene::ActionLabel;
    labels
        .iter()
        .enumerate()
        .filter_map(|(idx, (_, label))| {
            let dominant = ActionLabel::from_index(*label).map(|a| a.is_dominant()).unwrap_or(false);
            if !dominant || rng.gen_bool(cfg.downsample_keep) {
                Some(idx)
            } else {
                None
            }
        })
        .collect()
}

/// Cross entropy over the surviving cells; `logits` holds one row of
/// `num_actions` values per surviving cell.
pub fn intention_loss(logits: &[Vec<f64>], labels: &[usize], cfg: &LossConfig) -> f64 {
    assert_eq!(logits.len(), labels.len());
    if logits.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for (row, label) in logits.iter().zip(labels) {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        sum += z.ln() - (row[*label] - m);
    }
    if cfg.normalized {
        sum /= logits.len() as f64;
    }
    sum
}

/// Combine the per-stream terms: cla + alpha * sum_t lambda^t * int_t +
/// beta * sum_t lambda^t * reg_t.
pub fn total_loss(
    cla: f64,
    int: Vec<f64>,
    reg: Vec<f64>,
    counts: DetCounts,
    n_intent_cells: usize,
    cfg: &LossConfig,
) -> LossBreakdown {
    let discounted = |terms: &[f64]| -> f64 {
        terms
            .iter()
            .enumerate()
            .map(|(t, v)| cfg.lambda.powi(t as i32) * v)
            .sum()
    };
    let total = cla + cfg.alpha * discounted(&int) + cfg.beta * discounted(&reg);
    LossBreakdown {
        cla,
        int,
        reg,
        total,
        n_positive: counts.positives,
        n_mined_negative: counts.mined_negatives,
        n_intent_cells,
        clamped: counts.clamped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn smooth_l1_fixture_values() {
        assert_eq!(smooth_l1(0.0, 0.0), 0.0);
        assert_eq!(smooth_l1(0.5, 0.0), 0.125);
        assert_eq!(smooth_l1(2.0, 0.0), 1.5);
        assert_eq!(smooth_l1(-2.0, 0.0), 1.5);
    }

    #[test]
    fn smooth_l1_derivative_is_continuous_at_one() {
        let eps = 1e-9;
        let below = smooth_l1_grad(1.0 - eps, 0.0);
        let above = smooth_l1_grad(1.0 + eps, 0.0);
        assert!((below - above).abs() <= 2.0 * eps + 1e-12);
    }

    #[test]
    fn focal_single_negative_fixture() {
        let cfg = LossConfig::default();
        let (loss, counts) = focal_detection_loss(&[0.5], &[false], &cfg);
        assert!((loss - 0.34657).abs() < 1e-5);
        assert_eq!(counts.positives, 0);
        assert_eq!(counts.mined_negatives, 1);
    }

    #[test]
    fn perfect_predictions_drive_loss_to_zero() {
        let cfg = LossConfig::default();
        let p = vec![1.0 - 1e-9, 1e-9, 1e-9];
        let q = vec![true, false, false];
        let (loss, _) = focal_detection_loss(&p, &q, &cfg);
        assert!(loss < 1e-6);
    }

    #[test]
    fn mining_selects_three_to_one_by_score() {
        let cfg = LossConfig::default();
        // 2 positives, 100 negatives with distinct scores.
        let mut p = vec![0.9, 0.8];
        let mut q = vec![true, true];
        for i in 0..100 {
            p.push(i as f64 / 1000.0);
            q.push(false);
        }
        let mined = mine_negatives(&p, &q, &cfg);
        assert_eq!(mined.len(), 6);
        // Full-sort oracle.
        let mut oracle: Vec<usize> = (2..102).collect();
        oracle.sort_by(|a, b| p[*b].total_cmp(&p[*a]).then(a.cmp(b)));
        oracle.truncate(6);
        assert_eq!(mined, oracle);
    }

    #[test]
    fn zero_positives_take_fixed_k() {
        let cfg = LossConfig { zero_positive_negatives: 5, ..Default::default() };
        let p: Vec<f64> = (0..20).map(|i| i as f64 / 20.0).collect();
        let q = vec![false; 20];
        assert_eq!(mine_negatives(&p, &q, &cfg).len(), 5);
    }

    #[test]
    fn regression_fixtures() {
        let cfg = LossConfig::default();
        let t_future = 2;
        let width = 6 + 4 * t_future;
        let target = vec![0.0; width];
        let mut pred = vec![0.0; width];
        assert!(regression_loss(&[pred.clone()], &[target.clone()], &cfg, t_future)
            .iter()
            .all(|v| *v == 0.0));
        pred[0] = 0.5; // current-step cx off by 0.5
        let per_t = regression_loss(&[pred.clone()], &[target.clone()], &cfg, t_future);
        assert!((per_t[0] - 0.125).abs() < 1e-12);
        assert_eq!(per_t[1], 0.0);
        // chi scaling on cx.
        let cfg2 = LossConfig { chi: [2.0, 1.0, 1.0, 1.0, 1.0, 1.0], ..Default::default() };
        let per_t = regression_loss(&[pred], &[target], &cfg2, t_future);
        assert!((per_t[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn uniform_intent_logits_cost_log8() {
        let cfg = LossConfig::default();
        let loss = intention_loss(&[vec![0.3; 8]], &[4], &cfg);
        assert!((loss - 8.0_f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn confident_correct_intent_is_near_zero() {
        let cfg = LossConfig::default();
        let mut row = vec![0.0; 8];
        row[2] = 50.0;
        assert!(intention_loss(&[row], &[2], &cfg) < 1e-9);
    }

    #[test]
    fn downsampling_keeps_minority_and_samples_dominant() {
        let cfg = LossConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let keep_lane = crate::scene::ActionLabel::KeepLane.index();
        let turn = crate::scene::ActionLabel::TurnLeft.index();
        let labels: Vec<(usize, usize)> =
            (0..1000).map(|i| (i, keep_lane)).chain((1000..1010).map(|i| (i, turn))).collect();
        let kept = sample_intent_cells(&labels, &cfg, &mut rng);
        let kept_dominant = kept.iter().filter(|i| **i < 1000).count();
        assert!((30..=70).contains(&kept_dominant), "{kept_dominant}");
        // Minority cells always survive.
        assert_eq!(kept.iter().filter(|i| **i >= 1000).count(), 10);
    }

    #[test]
    fn total_combines_with_discount() {
        let cfg = LossConfig::default();
        let b = total_loss(
            1.0,
            vec![0.5, 0.5],
            vec![0.25, 0.25],
            DetCounts::default(),
            0,
            &cfg,
        );
        let expect = 1.0 + (0.5 + 0.97 * 0.5) + (0.25 + 0.97 * 0.25);
        assert!((b.total - expect).abs() < 1e-12);
        // Weight at t=6.
        assert!((cfg.lambda.powi(6) - 0.83297).abs() < 1e-5);
        // alpha = beta = 0 leaves only the detection term.
        let cfg0 = LossConfig { alpha: 0.0, beta: 0.0, ..Default::default() };
        let b = total_loss(1.25, vec![9.0], vec![9.0], DetCounts::default(), 0, &cfg0);
        assert_eq!(b.total, 1.25);
        // lambda = 1 is the plain sum.
        let cfg1 = LossConfig { lambda: 1.0, ..Default::default() };
        let b = total_loss(0.0, vec![1.0, 1.0, 1.0], vec![0.0], DetCounts::default(), 0, &cfg1);
        assert_eq!(b.total, 3.0);
    }

    #[test]
    fn breakdown_total_identity_holds() {
        let cfg = LossConfig::default();
        let b = total_loss(
            0.7,
            vec![0.1, 0.2, 0.3],
            vec![0.05, 0.0, 0.4],
            DetCounts { positives: 3, mined_negatives: 9, clamped: 0 },
            5,
            &cfg,
        );
        let recomputed: f64 = b.cla
            + cfg.alpha
                * b.int.iter().enumerate().map(|(t, v)| cfg.lambda.powi(t as i32) * v).sum::<f64>()
            + cfg.beta
                * b.reg.iter().enumerate().map(|(t, v)| cfg.lambda.powi(t as i32) * v).sum::<f64>();
        assert!((b.total - recomputed).abs() < 1e-9);
    }
}
