//! Anchor grid construction, ground-truth assignment and regression target
//! encoding / decoding.
//!
//! Anchors are axis-aligned (heading 0) boxes of a fixed area placed at
//! every feature-map cell; the aspect-ratio set covers both orientations of
//! each shape. One anchor stride is 8 BEV cells (the backbone stride).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::VoxelConfig;
use crate::geom::{normalize_angle, rotated_iou, OrientedBox2D};

/// Backbone downsampling factor; feature cells cover 8x8 BEV cells.
pub const STRIDE: usize = 8;

#[derive(Debug, Error)]
pub enum AnchorError {
    #[error("grid dims {rows}x{cols} are not divisible by the stride {STRIDE}")]
    NonDivisibleDims { rows: usize, cols: usize },
    #[error("aspect ratios must be positive, got {0}:{1}")]
    BadRatio(f64, f64),
    #[error("heading is undefined: sin and cos targets are both within 1e-12 of zero")]
    DegenerateHeading,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AnchorSpec {
    /// Square-root of the anchor area in meters.
    pub size: f64,
    /// Width:height ratios; each yields an anchor of area `size^2`.
    pub aspect_ratios: Vec<(f64, f64)>,
}

impl Default for AnchorSpec {
    fn default() -> Self {
        Self {
            size: 3.2,
            aspect_ratios: vec![(1.0, 1.0), (1.0, 2.0), (2.0, 1.0), (1.0, 6.0), (6.0, 1.0)],
        }
    }
}

impl AnchorSpec {
    /// Anchor dimensions for ratio r:s, preserving area = size^2.
    pub fn dims(&self, k: usize) -> (f64, f64) {
        let (r, s) = self.aspect_ratios[k];
        (self.size * (r / s).sqrt(), self.size * (s / r).sqrt())
    }
}

#[derive(Debug, Clone)]
pub struct AnchorGrid {
    pub rows: usize,
    pub cols: usize,
    pub anchors_per_cell: usize,
    /// Flat layout: index = (i * cols + j) * anchors_per_cell + k.
    boxes: Vec<OrientedBox2D>,
    /// BEV coordinates of feature cell (0,0)'s center and the cell pitch.
    origin: [f64; 2],
    pitch: f64,
}

impl AnchorGrid {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    #[inline]
    pub fn flat(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.cols + j) * self.anchors_per_cell + k
    }

    /// (i, j, k) of a flat index.
    #[inline]
    pub fn unflatten(&self, a: usize) -> (usize, usize, usize) {
        let k = a % self.anchors_per_cell;
        let cell = a / self.anchors_per_cell;
        (cell / self.cols, cell % self.cols, k)
    }

    #[inline]
    pub fn anchor(&self, a: usize) -> &OrientedBox2D {
        &self.boxes[a]
    }

    pub fn anchors(&self) -> &[OrientedBox2D] {
        &self.boxes
    }

    /// Flat indices of anchors whose cell center lies within `radius` of a
    /// point. Overlap (and hence nonzero IoU) is impossible outside the
    /// half-diagonal sum, so assignment only needs to inspect this window.
    fn window(&self, center: [f64; 2], radius: f64) -> Vec<usize> {
        let lo_i_f = ((center[0] - radius - self.origin[0]) / self.pitch).floor();
        let hi_i_f = ((center[0] + radius - self.origin[0]) / self.pitch).ceil();
        let lo_j_f = ((center[1] - radius - self.origin[1]) / self.pitch).floor();
        let hi_j_f = ((center[1] + radius - self.origin[1]) / self.pitch).ceil();
        if hi_i_f < 0.0 || hi_j_f < 0.0 {
            return Vec::new();
        }
        if lo_i_f > (self.rows - 1) as f64 || lo_j_f > (self.cols - 1) as f64 {
            return Vec::new();
        }
        let lo_i = lo_i_f.max(0.0) as usize;
        let hi_i = (hi_i_f as usize).min(self.rows - 1);
        let lo_j = lo_j_f.max(0.0) as usize;
        let hi_j = (hi_j_f as usize).min(self.cols - 1);
        let mut out = Vec::with_capacity((hi_i - lo_i + 1) * (hi_j - lo_j + 1) * self.anchors_per_cell);
        for i in lo_i..=hi_i {
            for j in lo_j..=hi_j {
                for k in 0..self.anchors_per_cell {
                    out.push((i * self.cols + j) * self.anchors_per_cell + k);
                }
            }
        }
        out
    }

    /// Largest anchor half-diagonal, used to bound the assignment window.
    fn max_half_diag(&self) -> f64 {
        self.boxes
            .iter()
            .take(self.anchors_per_cell)
            .map(|b| 0.5 * (b.w * b.w + b.h * b.h).sqrt())
            .fold(0.0, f64::max)
    }
}

/// Build the anchor grid for a BEV config: one set of anchors per feature
/// cell, heading 0, centered at the cell's BEV center.
pub fn build_anchor_grid(cfg: &VoxelConfig, spec: &AnchorSpec) -> Result<AnchorGrid, AnchorError> {
    let (rows, cols) = (cfg.rows(), cfg.cols());
    if rows % STRIDE != 0 || cols % STRIDE != 0 {
        return Err(AnchorError::NonDivisibleDims { rows, cols });
    }
    for (r, s) in &spec.aspect_ratios {
        if !(*r > 0.0 && *s > 0.0) {
            return Err(AnchorError::BadRatio(*r, *s));
        }
    }
    let frows = rows / STRIDE;
    let fcols = cols / STRIDE;
    let pitch = cfg.resolution * STRIDE as f64;
    let origin = [
        -cfg.length / 2.0 + pitch / 2.0,
        -cfg.width / 2.0 + pitch / 2.0,
    ];
    let mut boxes = Vec::with_capacity(frows * fcols * spec.aspect_ratios.len());
    for i in 0..frows {
        for j in 0..fcols {
            let cx = origin[0] + i as f64 * pitch;
            let cy = origin[1] + j as f64 * pitch;
            for k in 0..spec.aspect_ratios.len() {
                let (w, h) = spec.dims(k);
                boxes.push(OrientedBox2D::new(cx, cy, w, h, 0.0).expect("positive dims"));
            }
        }
    }
    Ok(AnchorGrid {
        rows: frows,
        cols: fcols,
        anchors_per_cell: spec.aspect_ratios.len(),
        boxes,
        origin,
        pitch,
    })
}

/// Per-anchor assignment: `matched[a]` holds the ground-truth index when the
/// anchor is positive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub matched: Vec<Option<usize>>,
}

impl Assignment {
    pub fn positives(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.matched.iter().enumerate().filter_map(|(a, m)| m.map(|g| (a, g)))
    }

    pub fn n_positive(&self) -> usize {
        self.matched.iter().filter(|m| m.is_some()).count()
    }

    pub fn is_positive(&self, a: usize) -> bool {
        self.matched[a].is_some()
    }
}

pub const MATCH_IOU: f64 = 0.5;

/// IoU matching with force-match: every anchor takes its best-overlapping
/// ground truth when the IoU reaches 0.5 (ties to the lowest gt index);
/// afterwards every still-unmatched ground truth is force-assigned to its
/// highest-IoU anchor among the anchors that are not already positive (ties
/// to the lowest (i, j, k)). The exclusion keeps the force pass from
/// un-matching another ground truth, so every gt ends with >= 1 anchor.
pub fn assign_targets(grid: &AnchorGrid, gt: &[OrientedBox2D]) -> Assignment {
    let mut best_iou = vec![0.0f64; grid.len()];
    let mut matched: Vec<Option<usize>> = vec![None; grid.len()];
    let max_half = grid.max_half_diag();

    for (g, bx) in gt.iter().enumerate() {
        let radius = max_half + 0.5 * (bx.w * bx.w + bx.h * bx.h).sqrt();
        for a in grid.window(bx.center(), radius) {
            let iou = rotated_iou(grid.anchor(a), bx);
            if iou > best_iou[a] {
                best_iou[a] = iou;
                if iou >= MATCH_IOU {
                    matched[a] = Some(g);
                } else {
                    matched[a] = None;
                }
            }
        }
    }
    // A positive can never be overwritten by a sub-threshold gt: replacement
    // requires a strictly greater IoU, which is then itself >= 0.5.

    let mut gt_has_anchor = vec![false; gt.len()];
    for m in matched.iter().flatten() {
        gt_has_anchor[*m] = true;
    }
    for (g, bx) in gt.iter().enumerate() {
        if gt_has_anchor[g] {
            continue;
        }
        let radius = max_half + 0.5 * (bx.w * bx.w + bx.h * bx.h).sqrt();
        let mut best: Option<(f64, usize)> = None;
        for a in grid.window(bx.center(), radius) {
            if matched[a].is_some() {
                continue;
            }
            let iou = rotated_iou(grid.anchor(a), bx);
            match best {
                Some((bi, ba)) if iou < bi || (iou == bi && a >= ba) => {}
                _ => best = Some((iou, a)),
            }
        }
        // A gt overlapping nothing in its window (or fully off-grid) falls
        // back to the first free anchor, matching the brute-force tie rule
        // for all-zero IoU rows.
        let chosen = best
            .filter(|(iou, _)| *iou > 0.0)
            .map(|(_, a)| a)
            .or_else(|| (0..grid.len()).find(|a| matched[*a].is_none()));
        if let Some(a) = chosen {
            matched[a] = Some(g);
        }
    }
    Assignment { matched }
}

/// Encoded regression targets for one (gt track, anchor) pair. Sizes are
/// predicted only at the current step; future boxes reuse them.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTargets {
    /// [cx, cy, sin phi, cos phi, log w ratio, log h ratio] at t = 0.
    pub current: [f64; 6],
    /// [cx, cy, sin phi, cos phi] per future step.
    pub future: Vec<[f64; 4]>,
}

impl RegressionTargets {
    pub fn width(t_future: usize) -> usize {
        6 + 4 * t_future
    }

    /// Flat layout: current 6 values then 4 per future step.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::width(self.future.len()));
        out.extend_from_slice(&self.current);
        for f in &self.future {
            out.extend_from_slice(f);
        }
        out
    }

    pub fn from_flat(values: &[f64], t_future: usize) -> Self {
        assert_eq!(values.len(), Self::width(t_future));
        let mut current = [0.0; 6];
        current.copy_from_slice(&values[..6]);
        let future = (0..t_future)
            .map(|t| {
                let o = 6 + 4 * t;
                [values[o], values[o + 1], values[o + 2], values[o + 3]]
            })
            .collect();
        Self { current, future }
    }
}

/// Encode a ground-truth box sequence (current box first, then future
/// steps) relative to its assigned anchor.
pub fn encode_targets(gt_track: &[OrientedBox2D], anchor: &OrientedBox2D) -> RegressionTargets {
    let enc_center = |b: &OrientedBox2D| {
        [
            (b.cx - anchor.cx) / anchor.w,
            (b.cy - anchor.cy) / anchor.h,
            b.phi.sin(),
            b.phi.cos(),
        ]
    };
    let cur = &gt_track[0];
    let c = enc_center(cur);
    RegressionTargets {
        current: [
            c[0],
            c[1],
            c[2],
            c[3],
            (cur.w / anchor.w).ln(),
            (cur.h / anchor.h).ln(),
        ],
        future: gt_track[1..].iter().map(|b| enc_center(b)).collect(),
    }
}

/// Exact inverse of [`encode_targets`]; the (sin, cos) pair is renormalized
/// before the two-argument arctangent, and future boxes inherit the current
/// size.
pub fn decode_targets(
    targets: &RegressionTargets,
    anchor: &OrientedBox2D,
) -> Result<Vec<OrientedBox2D>, AnchorError> {
    let heading = |s: f64, c: f64| -> Result<f64, AnchorError> {
        if s.abs() < 1e-12 && c.abs() < 1e-12 {
            return Err(AnchorError::DegenerateHeading);
        }
        let norm = (s * s + c * c).sqrt();
        Ok(normalize_angle((s / norm).atan2(c / norm)))
    };
    let t = &targets.current;
    let w = anchor.w * t[4].exp();
    let h = anchor.h * t[5].exp();
    let mut out = Vec::with_capacity(1 + targets.future.len());
    out.push(OrientedBox2D {
        cx: anchor.cx + t[0] * anchor.w,
        cy: anchor.cy + t[1] * anchor.h,
        w,
        h,
        phi: heading(t[2], t[3])?,
    });
    for f in &targets.future {
        out.push(OrientedBox2D {
            cx: anchor.cx + f[0] * anchor.w,
            cy: anchor.cy + f[1] * anchor.h,
            w,
            h,
            phi: heading(f[2], f[3])?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

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

    #[test]
    fn default_grid_has_22500_anchors() {
        let grid = build_anchor_grid(&VoxelConfig::default(), &AnchorSpec::default()).unwrap();
        assert_eq!(grid.rows, 90);
        assert_eq!(grid.cols, 50);
        assert_eq!(grid.len(), 22_500);
    }

    #[test]
    fn ratios_preserve_area() {
        let spec = AnchorSpec::default();
        for k in 0..spec.aspect_ratios.len() {
            let (w, h) = spec.dims(k);
            assert!((w * h - spec.size * spec.size).abs() < 1e-9);
        }
        let (w, h) = spec.dims(4); // 6:1
        assert!((w - 3.2 * 6.0_f64.sqrt()).abs() < 1e-9);
        assert!((h - 3.2 / 6.0_f64.sqrt()).abs() < 1e-9);
        let (w, h) = spec.dims(0);
        assert_eq!((w, h), (3.2, 3.2));
    }

    #[test]
    fn non_divisible_dims_error() {
        let cfg = VoxelConfig { length: 14.8, resolution: 0.2, width: 8.0, height: 5.8, height_resolution: 0.2, t_past: 1 };
        assert!(build_anchor_grid(&cfg, &AnchorSpec::default()).is_err());
    }

    #[test]
    fn empty_gt_gives_all_negative() {
        let grid = build_anchor_grid(&toy_cfg(), &AnchorSpec::default()).unwrap();
        let a = assign_targets(&grid, &[]);
        assert_eq!(a.n_positive(), 0);
    }

    #[test]
    fn anchor_identical_gt_is_positive_with_unit_iou() {
        let grid = build_anchor_grid(&toy_cfg(), &AnchorSpec::default()).unwrap();
        let gt = vec![*grid.anchor(grid.flat(3, 4, 2))];
        let a = assign_targets(&grid, &gt);
        assert!(a.is_positive(grid.flat(3, 4, 2)));
        assert_eq!(a.matched[grid.flat(3, 4, 2)], Some(0));
    }

    #[test]
    fn tiny_gt_is_force_matched_to_argmax_anchor() {
        let grid = build_anchor_grid(&toy_cfg(), &AnchorSpec::default()).unwrap();
        let gt = vec![OrientedBox2D::new(5.0, -3.0, 1.0, 1.0, 0.3).unwrap()];
        let a = assign_targets(&grid, &gt);
        let positives: Vec<usize> = a.positives().map(|(i, _)| i).collect();
        assert_eq!(positives.len(), 1);
        // Brute-force argmax over every anchor.
        let mut best = (0.0, 0usize);
        for i in 0..grid.len() {
            let iou = rotated_iou(grid.anchor(i), &gt[0]);
            if iou > best.0 {
                best = (iou, i);
            }
        }
        assert!(best.0 < MATCH_IOU);
        assert_eq!(positives[0], best.1);
    }

    #[test]
    fn every_gt_keeps_an_anchor_when_argmaxes_collide() {
        let grid = build_anchor_grid(&toy_cfg(), &AnchorSpec::default()).unwrap();
        // Two nearly identical small boxes competing for the same anchor.
        let gt = vec![
            OrientedBox2D::new(5.0, -3.0, 1.0, 1.0, 0.0).unwrap(),
            OrientedBox2D::new(5.05, -3.0, 1.0, 1.0, 0.0).unwrap(),
        ];
        let a = assign_targets(&grid, &gt);
        let mut seen = [false; 2];
        for (_, g) in a.positives() {
            seen[g] = true;
        }
        assert!(seen[0] && seen[1]);
    }

    #[test]
    fn encode_identity_is_zero_with_unit_cos() {
        let anchor = OrientedBox2D::new(1.0, 2.0, 3.2, 1.6, 0.0).unwrap();
        let t = encode_targets(&[anchor, anchor, anchor], &anchor);
        assert_eq!(t.current, [0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        for f in &t.future {
            assert_eq!(*f, [0.0, 0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn encode_matches_hand_computation() {
        let anchor = OrientedBox2D::new(0.0, 0.0, 3.2, 3.2, 0.0).unwrap();
        let gt = OrientedBox2D::new(1.6, 0.8, 6.4, 1.6, FRAC_PI_2).unwrap();
        let t = encode_targets(&[gt], &anchor);
        assert!((t.current[0] - 0.5).abs() < 1e-12);
        assert!((t.current[1] - 0.25).abs() < 1e-12);
        assert!((t.current[2] - 1.0).abs() < 1e-12);
        assert!(t.current[3].abs() < 1e-12);
        assert!((t.current[4] - 2.0_f64.ln()).abs() < 1e-12);
        assert!((t.current[5] - 0.5_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn future_steps_have_no_size_targets() {
        let anchor = OrientedBox2D::new(0.0, 0.0, 3.2, 3.2, 0.0).unwrap();
        let cur = OrientedBox2D::new(0.0, 0.0, 3.2, 3.2, 0.0).unwrap();
        let fut = OrientedBox2D::new(1.0, 0.0, 3.2, 3.2, 0.0).unwrap();
        let t = encode_targets(&[cur, fut], &anchor);
        assert_eq!(t.future.len(), 1);
        assert!((t.future[0][0] - 0.3125).abs() < 1e-12);
        assert_eq!(t.flatten().len(), RegressionTargets::width(1));
    }

    #[test]
    fn decode_zero_targets_returns_anchor() {
        let anchor = OrientedBox2D::new(-2.0, 4.0, 3.2, 1.6, 0.0).unwrap();
        let t = RegressionTargets { current: [0.0, 0.0, 0.0, 1.0, 0.0, 0.0], future: vec![] };
        let out = decode_targets(&t, &anchor).unwrap();
        assert_eq!(out[0], anchor);
    }

    #[test]
    fn decode_renormalizes_sin_cos() {
        let anchor = OrientedBox2D::new(0.0, 0.0, 3.2, 3.2, 0.0).unwrap();
        let a = RegressionTargets { current: [0.0, 0.0, 0.6, 0.8, 0.0, 0.0], future: vec![] };
        let b = RegressionTargets { current: [0.0, 0.0, 1.8, 2.4, 0.0, 0.0], future: vec![] };
        let pa = decode_targets(&a, &anchor).unwrap()[0].phi;
        let pb = decode_targets(&b, &anchor).unwrap()[0].phi;
        assert!((pa - pb).abs() < 1e-12);
    }

    #[test]
    fn decode_rejects_degenerate_heading() {
        let anchor = OrientedBox2D::new(0.0, 0.0, 3.2, 3.2, 0.0).unwrap();
        let t = RegressionTargets { current: [0.0, 0.0, 0.0, 0.0, 0.0, 0.0], future: vec![] };
        assert!(matches!(decode_targets(&t, &anchor), Err(AnchorError::DegenerateHeading)));
    }

    #[test]
    fn roundtrip_random_boxes() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let anchor = OrientedBox2D::new(0.4, -0.7, 3.2, 1.6, 0.0).unwrap();
        for _ in 0..200 {
            let track: Vec<OrientedBox2D> = (0..7)
                .map(|_| {
                    OrientedBox2D::new(
                        rng.gen_range(-5.0..5.0),
                        rng.gen_range(-5.0..5.0),
                        rng.gen_range(0.5..8.0),
                        rng.gen_range(0.5..4.0),
                        rng.gen_range(-3.14..3.14),
                    )
                    .unwrap()
                })
                .collect();
            // Future boxes share the current size by construction.
            let track: Vec<OrientedBox2D> = track
                .iter()
                .map(|b| OrientedBox2D { w: track[0].w, h: track[0].h, ..*b })
                .collect();
            let enc = encode_targets(&track, &anchor);
            let dec = decode_targets(&enc, &anchor).unwrap();
            for (orig, back) in track.iter().zip(dec.iter()) {
                assert!((orig.cx - back.cx).abs() < 1e-9);
                assert!((orig.cy - back.cy).abs() < 1e-9);
                assert!((orig.w - back.w).abs() < 1e-9);
                assert!((orig.h - back.h).abs() < 1e-9);
                assert!(normalize_angle(orig.phi - back.phi).abs() < 1e-9);
            }
        }
    }
}
