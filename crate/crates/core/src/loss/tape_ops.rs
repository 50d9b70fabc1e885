//! Differentiable wrappers around the loss kernels. Sample selection (hard
//! negatives, intention downsampling) happens before the ops are built and
//! is frozen as data, so the backward pass treats selection as constant and
//! the sampled set never depends on anything but the logits and the seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::anchors::{Assignment, RegressionTargets};
use crate::net::{NetError, Op, Tape, VarId};
use crate::tensor::Tensor;

use super::{
    focal_detection_loss, intention_loss, mine_negatives, regression_loss, sample_intent_cells,
    total_loss, LossBreakdown, LossConfig, LossError, PROB_CLAMP,
};

/// Mapping helpers for the head tensor layouts.
#[derive(Debug, Clone, Copy)]
struct HeadLayout {
    anchors_per_cell: usize,
    hw: usize,
}

impl HeadLayout {
    fn det_offsets(&self, anchor_flat: usize) -> (usize, usize) {
        let k = anchor_flat % self.anchors_per_cell;
        let cell = anchor_flat / self.anchors_per_cell;
        ((k * 2) * self.hw + cell, (k * 2 + 1) * self.hw + cell)
    }

    fn reg_offset(&self, anchor_flat: usize, r: usize, width: usize) -> usize {
        let k = anchor_flat % self.anchors_per_cell;
        let cell = anchor_flat / self.anchors_per_cell;
        (k * width + r) * self.hw + cell
    }
}

fn vehicle_probs(det_logits: &Tensor, layout: HeadLayout, n_anchors: usize) -> Vec<f64> {
    let d = det_logits.data();
    (0..n_anchors)
        .map(|a| {
            let (ov, ob) = layout.det_offsets(a);
            let (zv, zb) = (d[ov], d[ob]);
            let m = zv.max(zb);
            let ev = (zv - m).exp();
            ev / (ev + (zb - m).exp())
        })
        .collect()
}

/// Focal detection loss over a frozen sample set.
struct FocalDetOp {
    layout: HeadLayout,
    /// (anchor flat index, is_positive).
    samples: Vec<(usize, bool)>,
    gamma: f64,
    norm: f64,
}

impl Op for FocalDetOp {
    fn name(&self) -> &'static str {
        "focal_detection_loss"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, NetError> {
        let d = inputs[0].data();
        let mut sum = 0.0;
        for (a, is_pos) in &self.samples {
            let (ov, ob) = self.layout.det_offsets(*a);
            let (zv, zb) = (d[ov], d[ob]);
            let m = zv.max(zb);
            let ev = (zv - m).exp();
            let pv = ev / (ev + (zb - m).exp());
            let p_bar = if *is_pos { pv } else { 1.0 - pv };
            let s = p_bar.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            sum += (1.0 - s).powf(self.gamma) * (-s.ln());
        }
        Ok(Tensor::scalar(sum * self.norm))
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad_out: &Tensor) -> Vec<Option<Tensor>> {
        let d = inputs[0].data();
        let g = grad_out.item() * self.norm;
        let mut gx = Tensor::zeros(inputs[0].shape());
        let gd = gx.data_mut();
        for (a, is_pos) in &self.samples {
            let (ov, ob) = self.layout.det_offsets(*a);
            let (zv, zb) = (d[ov], d[ob]);
            let m = zv.max(zb);
            let ev = (zv - m).exp();
            let pv = ev / (ev + (zb - m).exp());
            let p_bar = if *is_pos { pv } else { 1.0 - pv };
            let s = p_bar.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            // dL/ds for L = (1-s)^gamma * (-ln s).
            let dl_ds = if self.gamma == 0.0 {
                -1.0 / s
            } else {
                self.gamma * (1.0 - s).powf(self.gamma - 1.0) * s.ln() - (1.0 - s).powf(self.gamma) / s
            };
            // ds/dz_correct = s(1-s); the pair is antisymmetric.
            let dz = dl_ds * s * (1.0 - s) * g;
            if *is_pos {
                gd[ov] += dz;
                gd[ob] -= dz;
            } else {
                gd[ob] += dz;
                gd[ov] -= dz;
            }
        }
        vec![Some(gx)]
    }
}

/// Discounted smooth-L1 over the positive anchors; emits
/// `beta * sum_t lambda^t L_t` as one scalar.
struct RegLossOp {
    layout: HeadLayout,
    /// (anchor flat index, flat target vector).
    positives: Vec<(usize, Vec<f64>)>,
    cfg: LossConfig,
    t_future: usize,
    norm: f64,
}

impl RegLossOp {
    fn width(&self) -> usize {
        RegressionTargets::width(self.t_future)
    }

    fn t_of(r: usize) -> usize {
        if r < 6 {
            0
        } else {
            1 + (r - 6) / 4
        }
    }
}

impl Op for RegLossOp {
    fn name(&self) -> &'static str {
        "regression_loss"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, NetError> {
        let d = inputs[0].data();
        let width = self.width();
        let mut sum = 0.0;
        for (a, target) in &self.positives {
            for r in 0..width {
                let x = d[self.layout.reg_offset(*a, r, width)];
                let w = self.cfg.chi_for(r) * self.cfg.lambda.powi(Self::t_of(r) as i32);
                sum += w * super::smooth_l1(x, target[r]);
            }
        }
        Ok(Tensor::scalar(sum * self.norm * self.cfg.beta))
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad_out: &Tensor) -> Vec<Option<Tensor>> {
        let d = inputs[0].data();
        let width = self.width();
        let g = grad_out.item() * self.norm * self.cfg.beta;
        let mut gx = Tensor::zeros(inputs[0].shape());
        let gd = gx.data_mut();
        for (a, target) in &self.positives {
            for r in 0..width {
                let off = self.layout.reg_offset(*a, r, width);
                let w = self.cfg.chi_for(r) * self.cfg.lambda.powi(Self::t_of(r) as i32);
                gd[off] += g * w * super::smooth_l1_grad(d[off], target[r]);
            }
        }
        vec![Some(gx)]
    }
}

/// Cross entropy over frozen surviving cells, one op per time step; emits
/// `alpha * lambda^t * L_int^t`.
struct IntentLossOp {
    hw: usize,
    /// (cell flat index, label index).
    cells: Vec<(usize, usize)>,
    weight: f64,
    norm: f64,
    num_actions: usize,
}

impl Op for IntentLossOp {
    fn name(&self) -> &'static str {
        "intention_loss"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, NetError> {
        let d = inputs[0].data();
        let mut sum = 0.0;
        for (cell, label) in &self.cells {
            let mut m = f64::NEG_INFINITY;
            for c in 0..self.num_actions {
                m = m.max(d[c * self.hw + cell]);
            }
            let z: f64 = (0..self.num_actions).map(|c| (d[c * self.hw + cell] - m).exp()).sum();
            sum += z.ln() - (d[label * self.hw + cell] - m);
        }
        Ok(Tensor::scalar(sum * self.norm * self.weight))
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad_out: &Tensor) -> Vec<Option<Tensor>> {
        let d = inputs[0].data();
        let g = grad_out.item() * self.norm * self.weight;
        let mut gx = Tensor::zeros(inputs[0].shape());
        let gd = gx.data_mut();
        for (cell, label) in &self.cells {
            let mut m = f64::NEG_INFINITY;
            for c in 0..self.num_actions {
                m = m.max(d[c * self.hw + cell]);
            }
            let z: f64 = (0..self.num_actions).map(|c| (d[c * self.hw + cell] - m).exp()).sum();
            for c in 0..self.num_actions {
                let softmax = (d[c * self.hw + cell] - m).exp() / z;
                let indicator = if c == *label { 1.0 } else { 0.0 };
                gd[c * self.hw + cell] += g * (softmax - indicator);
            }
        }
        vec![Some(gx)]
    }
}

/// Weighted sum of scalars (assembles the total objective).
struct WeightedSum {
    weights: Vec<f64>,
}

impl Op for WeightedSum {
    fn name(&self) -> &'static str {
        "weighted_sum"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, NetError> {
        let s = inputs.iter().zip(&self.weights).map(|(t, w)| t.item() * w).sum();
        Ok(Tensor::scalar(s))
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad_out: &Tensor) -> Vec<Option<Tensor>> {
        let g = grad_out.item();
        inputs
            .iter()
            .zip(&self.weights)
            .map(|(t, w)| Some(Tensor::full(t.shape(), g * w)))
            .collect()
    }
}

/// Supervision of one frame.
pub struct LossInputs {
    pub assignment: Assignment,
    /// Flat regression target vector per positive anchor, in anchor order.
    pub reg_targets: Vec<(usize, Vec<f64>)>,
    /// Intention labels per time step: `[t] -> (cell flat index, label)`.
    /// Index 0 (the current frame) is required; future steps are used only
    /// when the config enables future supervision.
    pub intent_labels: Vec<Vec<(usize, usize)>>,
}

/// Build the full objective on the tape. Returns the scalar total plus the
/// numeric breakdown (computed with the same kernels on the same values).
#[allow(clippy::too_many_arguments)]
pub fn attach_losses(
    tape: &mut Tape,
    det_logits: VarId,
    intent_logits: VarId,
    reg: VarId,
    inputs: &LossInputs,
    cfg: &LossConfig,
    t_future: usize,
    sample_seed: u64,
) -> Result<(VarId, LossBreakdown), NetError> {
    cfg.validate().map_err(|e| NetError::Config(e.to_string()))?;
    let det_shape = tape.value(det_logits).shape().to_vec();
    let (rows, cols) = (det_shape[1], det_shape[2]);
    let anchors_per_cell = det_shape[0] / 2;
    let layout = HeadLayout { anchors_per_cell, hw: rows * cols };
    let n_anchors = rows * cols * anchors_per_cell;
    if inputs.assignment.matched.len() != n_anchors {
        return Err(NetError::Shape {
            op: "attach_losses",
            detail: format!(
                "assignment covers {} anchors, head has {n_anchors}",
                inputs.assignment.matched.len()
            ),
        });
    }
    for (a, _) in &inputs.reg_targets {
        if !inputs.assignment.is_positive(*a) {
            return Err(NetError::Config(
                LossError::TargetWithoutPositive(*a).to_string(),
            ));
        }
    }

    // Detection: mine negatives on the current probabilities, freeze the set.
    let q: Vec<bool> = inputs.assignment.matched.iter().map(|m| m.is_some()).collect();
    let probs = vehicle_probs(tape.value(det_logits), layout, n_anchors);
    let mined = mine_negatives(&probs, &q, cfg);
    let mut samples: Vec<(usize, bool)> =
        (0..n_anchors).filter(|a| q[*a]).map(|a| (a, true)).collect();
    samples.extend(mined.iter().map(|a| (*a, false)));
    let n_pos = q.iter().filter(|v| **v).count();
    let det_norm = if cfg.normalized && !samples.is_empty() {
        1.0 / samples.len() as f64
    } else {
        1.0
    };
    let det_id = tape.apply(
        Box::new(FocalDetOp { layout, samples, gamma: cfg.focal_gamma, norm: det_norm }),
        &[det_logits],
    )?;

    // Regression over positives.
    let reg_norm = if cfg.normalized && n_pos > 0 { 1.0 / n_pos as f64 } else { 1.0 };
    let reg_id = tape.apply(
        Box::new(RegLossOp {
            layout,
            positives: inputs.reg_targets.clone(),
            cfg: cfg.clone(),
            t_future,
            norm: reg_norm,
        }),
        &[reg],
    )?;

    // Intention: sample per step with a step-salted seed.
    let steps = if cfg.future_intent_supervision {
        inputs.intent_labels.len().min(t_future + 1)
    } else {
        1.min(inputs.intent_labels.len())
    };
    let num_actions = tape.value(intent_logits).shape()[0];
    let mut int_ids: Vec<VarId> = Vec::new();
    let mut int_values = vec![0.0; t_future + 1];
    let mut n_intent_cells = 0;
    for t in 0..steps {
        let labels = &inputs.intent_labels[t];
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed.wrapping_add(t as u64));
        let kept_idx = sample_intent_cells(labels, cfg, &mut rng);
        let cells: Vec<(usize, usize)> = kept_idx.iter().map(|i| labels[*i]).collect();
        if cells.is_empty() {
            continue;
        }
        n_intent_cells += cells.len();
        let norm = if cfg.normalized { 1.0 / cells.len() as f64 } else { 1.0 };
        let weight = cfg.alpha * cfg.lambda.powi(t as i32);
        // Numeric value for the breakdown, via the pure kernel.
        let logits_rows: Vec<Vec<f64>> = cells
            .iter()
            .map(|(cell, _)| {
                (0..num_actions)
                    .map(|c| tape.value(intent_logits).data()[c * layout.hw + cell])
                    .collect()
            })
            .collect();
        let label_rows: Vec<usize> = cells.iter().map(|(_, l)| *l).collect();
        int_values[t] = intention_loss(&logits_rows, &label_rows, cfg);
        let id = tape.apply(
            Box::new(IntentLossOp { hw: layout.hw, cells, weight, norm, num_actions }),
            &[intent_logits],
        )?;
        int_ids.push(id);
    }

    // Numeric breakdown from the same kernels.
    let (cla_value, counts) = focal_detection_loss(&probs, &q, cfg);
    let preds: Vec<Vec<f64>> = inputs
        .reg_targets
        .iter()
        .map(|(a, t)| {
            (0..t.len())
                .map(|r| tape.value(reg).data()[layout.reg_offset(*a, r, t.len())])
                .collect()
        })
        .collect();
    let targets: Vec<Vec<f64>> = inputs.reg_targets.iter().map(|(_, t)| t.clone()).collect();
    let reg_values = regression_loss(&preds, &targets, cfg, t_future);
    let breakdown = total_loss(cla_value, int_values, reg_values, counts, n_intent_cells, cfg);

    // Total on the tape: det + reg ops already carry their stream weights;
    // intent ops likewise.
    let mut terms = vec![det_id, reg_id];
    terms.extend(int_ids);
    let weights = vec![1.0; terms.len()];
    let total_id = tape.apply(Box::new(WeightedSum { weights }), &terms)?;
    debug_assert!(
        (tape.value(total_id).item() - breakdown.total).abs()
            <= 1e-9 * (1.0 + breakdown.total.abs()),
        "tape total {} != breakdown total {}",
        tape.value(total_id).item(),
        breakdown.total
    );
    Ok((total_id, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::check_gradients;
    use rand::prelude::*;

    /// Build a random miniature head and targets; returns leaves
    /// [det, intent, reg] plus the supervision.
    fn mini_problem(seed: u64) -> (Vec<Tensor>, LossInputs, usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rows, cols, k, t_future) = (3usize, 4usize, 2usize, 2usize);
        let width = RegressionTargets::width(t_future);
        let n_anchors = rows * cols * k;
        let rand_tensor = |shape: &[usize], rng: &mut ChaCha8Rng| {
            let n: usize = shape.iter().product();
            Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
        };
        let det = rand_tensor(&[k * 2, rows, cols], &mut rng);
        let intent = rand_tensor(&[8, rows, cols], &mut rng);
        let reg = rand_tensor(&[k * width, rows, cols], &mut rng);
        let mut matched = vec![None; n_anchors];
        matched[5] = Some(0);
        matched[11] = Some(1);
        let reg_targets = vec![
            (5usize, (0..width).map(|_| rng.gen_range(-0.5..0.5)).collect::<Vec<f64>>()),
            (11usize, (0..width).map(|_| rng.gen_range(-0.5..0.5)).collect::<Vec<f64>>()),
        ];
        let intent_labels = vec![vec![(2usize, 1usize), (7usize, 6usize)]];
        (
            vec![det, intent, reg],
            LossInputs {
                assignment: Assignment { matched },
                reg_targets,
                intent_labels,
            },
            t_future,
        )
    }

    #[test]
    fn full_objective_matches_finite_differences() {
        let (leaves, inputs, t_future) = mini_problem(3);
        let cfg = LossConfig::default();
        let report = check_gradients(
            |tape, ids| {
                let (total, _) =
                    attach_losses(tape, ids[0], ids[1], ids[2], &inputs, &cfg, t_future, 42)?;
                Ok(total)
            },
            &leaves,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn gamma_two_also_matches_finite_differences() {
        let (leaves, inputs, t_future) = mini_problem(4);
        let cfg = LossConfig { focal_gamma: 2.0, ..Default::default() };
        let report = check_gradients(
            |tape, ids| {
                let (total, _) =
                    attach_losses(tape, ids[0], ids[1], ids[2], &inputs, &cfg, t_future, 7)?;
                Ok(total)
            },
            &leaves,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn breakdown_matches_tape_total() {
        let (leaves, inputs, t_future) = mini_problem(5);
        let cfg = LossConfig::default();
        let mut tape = Tape::new();
        let ids: Vec<VarId> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
        let (total, breakdown) =
            attach_losses(&mut tape, ids[0], ids[1], ids[2], &inputs, &cfg, t_future, 42).unwrap();
        assert!((tape.value(total).item() - breakdown.total).abs() < 1e-9);
        assert_eq!(breakdown.n_positive, 2);
        assert_eq!(breakdown.n_mined_negative, 6);
    }

    #[test]
    fn downsampling_touches_only_the_intent_term() {
        let (leaves, mut inputs, t_future) = mini_problem(6);
        // Dominant labels so sampling has something to drop.
        inputs.intent_labels = vec![(0..12).map(|c| (c, 0usize)).collect()];
        let run = |keep: f64, seed: u64| {
            let cfg = LossConfig { downsample_keep: keep, ..Default::default() };
            let mut tape = Tape::new();
            let ids: Vec<VarId> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
            let (_, b) =
                attach_losses(&mut tape, ids[0], ids[1], ids[2], &inputs, &cfg, t_future, seed)
                    .unwrap();
            b
        };
        let sampled = run(0.5, 1);
        let full = run(1.0, 1);
        assert_eq!(sampled.cla, full.cla);
        assert_eq!(sampled.reg, full.reg);
        assert_ne!(sampled.n_intent_cells, full.n_intent_cells);
    }

    #[test]
    fn rejects_targets_on_negative_anchors() {
        let (leaves, mut inputs, t_future) = mini_problem(7);
        inputs.reg_targets.push((0, vec![0.0; RegressionTargets::width(t_future)]));
        let cfg = LossConfig::default();
        let mut tape = Tape::new();
        let ids: Vec<VarId> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
        assert!(attach_losses(&mut tape, ids[0], ids[1], ids[2], &inputs, &cfg, t_future, 0).is_err());
    }
}
