//! Central finite-difference verification of tape gradients. The check is
//! independent of the analytic backward path: it only re-runs forwards on
//! perturbed leaves.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

use super::{NetError, Tape, VarId};

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped_tiny: usize,
}

const TINY: f64 = 1e-8;

/// Compare analytic gradients against central differences for every element
/// of every leaf. `build` must construct the same scalar graph each call.
pub fn check_gradients<F>(build: F, leaves: &[Tensor], eps: f64) -> Result<GradCheckReport, NetError>
where
    F: Fn(&mut Tape, &[VarId]) -> Result<VarId, NetError>,
{
    let element_plan: Vec<(usize, usize)> = leaves
        .iter()
        .enumerate()
        .flat_map(|(li, t)| (0..t.numel()).map(move |e| (li, e)))
        .collect();
    check_elements(build, leaves, eps, &element_plan)
}

/// Same as [`check_gradients`] but on a random sample of `k` elements
/// (full-model objectives would otherwise need two forwards per parameter).
pub fn check_gradients_sampled<F>(
    build: F,
    leaves: &[Tensor],
    eps: f64,
    k: usize,
    seed: u64,
) -> Result<GradCheckReport, NetError>
where
    F: Fn(&mut Tape, &[VarId]) -> Result<VarId, NetError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<(usize, usize)> = leaves
        .iter()
        .enumerate()
        .flat_map(|(li, t)| (0..t.numel()).map(move |e| (li, e)))
        .collect();
    let plan: Vec<(usize, usize)> = all.choose_multiple(&mut rng, k.min(all.len())).copied().collect();
    check_elements(build, leaves, eps, &plan)
}

fn check_elements<F>(
    build: F,
    leaves: &[Tensor],
    eps: f64,
    plan: &[(usize, usize)],
) -> Result<GradCheckReport, NetError>
where
    F: Fn(&mut Tape, &[VarId]) -> Result<VarId, NetError>,
{
    // Analytic pass.
    let mut tape = Tape::new();
    let ids: Vec<VarId> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = build(&mut tape, &ids)?;
    let grads = tape.backward(root)?;

    let eval = |vals: &[Tensor]| -> Result<f64, NetError> {
        let mut t = Tape::new();
        let ids: Vec<VarId> = vals.iter().map(|v| t.leaf(v.clone())).collect();
        let r = build(&mut t, &ids)?;
        Ok(t.value(r).item())
    };

    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor> = leaves.to_vec();
    for &(li, e) in plan {
        let orig = work[li].data()[e];
        work[li].data_mut()[e] = orig + eps;
        let fp = eval(&work)?;
        work[li].data_mut()[e] = orig - eps;
        let fm = eval(&work)?;
        work[li].data_mut()[e] = orig;

        let fd = (fp - fm) / (2.0 * eps);
        let an = grads.get(ids[li]).map(|g| g.data()[e]).unwrap_or(0.0);
        if an.abs() < TINY && fd.abs() < TINY {
            report.skipped_tiny += 1;
            continue;
        }
        let rel = (an - fd).abs() / an.abs().max(fd.abs());
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ops::{Add, ConcatChannels, Conv2d, ReLU, SoftmaxChannels, SumAll};

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn conv2d_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(stride, padding) in &[(1usize, 0usize), (1, 1), (2, 1)] {
            let x = random_tensor(&[2, 6, 5], &mut rng);
            let w = random_tensor(&[3, 2, 3, 3], &mut rng);
            let b = random_tensor(&[3], &mut rng);
            let report = check_gradients(
                |tape, ids| {
                    let y = tape.apply(Box::new(Conv2d { stride, padding }), &[ids[0], ids[1], ids[2]])?;
                    tape.apply(Box::new(SumAll), &[y])
                },
                &[x, w, b],
                1e-5,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "stride {stride} pad {padding}: {report:?}");
        }
    }

    #[test]
    fn relu_add_concat_softmax_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_tensor(&[3, 4, 4], &mut rng);
        let b = random_tensor(&[3, 4, 4], &mut rng);
        let c = random_tensor(&[2, 4, 4], &mut rng);
        let report = check_gradients(
            |tape, ids| {
                let r = tape.apply(Box::new(ReLU), &[ids[0]])?;
                let s = tape.apply(Box::new(Add), &[r, ids[1]])?;
                let cat = tape.apply(Box::new(ConcatChannels), &[s, ids[2]])?;
                let sm = tape.apply(Box::new(SoftmaxChannels), &[cat])?;
                // Break softmax symmetry so gradients are non-trivial.
                let boost = tape.apply(Box::new(Add), &[sm, cat])?;
                let sq = tape.apply(Box::new(ReLU), &[boost])?;
                tape.apply(Box::new(SumAll), &[sq])
            },
            &[a, b, c],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
