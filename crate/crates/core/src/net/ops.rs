//! Differentiable ops over (C, H, W) tensors: 2D cross-correlation, ReLU,
//! residual add, depth concatenation, per-pixel channel softmax and a
//! full-sum reduction.
//!
//! Conv kernels parallelize over independent channel slabs (rayon); each
//! slab is written by exactly one worker and inner sums run in a fixed
//! order, so results do not depend on the thread count.

use rayon::prelude::*;

use crate::tensor::Tensor;

use super::{NetError, Op};

fn shape3(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize), NetError> {
    match t.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        other => Err(NetError::Shape { op, detail: format!("expected rank-3 tensor, got {other:?}") }),
    }
}

/// 2D cross-correlation with zero padding.
/// Inputs: x (Cin, H, W), weights (Cout, Cin, kh, kw), bias (Cout).
pub struct Conv2d {
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    fn dims(
        &self,
        x: &Tensor,
        w: &Tensor,
        b: &Tensor,
    ) -> Result<(usize, usize, usize, usize, usize, usize, usize, usize), NetError> {
        let (cin, h, wid) = shape3(x, "conv2d")?;
        let (cout, wcin, kh, kw) = match w.shape() {
            [a, b2, c, d] => (*a, *b2, *c, *d),
            other => {
                return Err(NetError::Shape {
                    op: "conv2d",
                    detail: format!("weights must be rank 4, got {other:?}"),
                })
            }
        };
        if wcin != cin {
            return Err(NetError::Shape {
                op: "conv2d",
                detail: format!("input has {cin} channels, weights expect {wcin}"),
            });
        }
        if b.shape() != [cout] {
            return Err(NetError::Shape {
                op: "conv2d",
                detail: format!("bias shape {:?} does not match {cout} output channels", b.shape()),
            });
        }
        let oh = (h + 2 * self.padding).checked_sub(kh).map(|v| v / self.stride + 1);
        let ow = (wid + 2 * self.padding).checked_sub(kw).map(|v| v / self.stride + 1);
        match (oh, ow) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok((cin, h, wid, cout, kh, kw, oh, ow)),
            _ => Err(NetError::Shape {
                op: "conv2d",
                detail: format!(
                    "kernel {kh}x{kw} with stride {} and padding {} does not fit input {h}x{wid}",
                    self.stride, self.padding
                ),
            }),
        }
    }

    /// Valid output-column range for a kernel column, i.e. all ox with
    /// 0 <= ox*s + kx - p < W.
    #[inline]
    fn ox_range(&self, kx: usize, w: usize, ow: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let shift = kx as isize - self.padding as isize;
        let lo = if shift >= 0 { 0 } else { ((-shift) + s - 1) / s };
        let hi = ((w as isize - 1 - shift) / s).min(ow as isize - 1);
        if hi < lo {
            (1, 0) // empty
        } else {
            (lo as usize, hi as usize)
        }
    }
}

impl Op for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, NetError> {
        let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
        let (cin, h, wid, cout, kh, kw, oh, ow) = self.dims(x, w, b)?;
        let mut out = Tensor::zeros(&[cout, oh, ow]);
        let xd = x.data();
        let wd = w.data();
        let bd = b.data();
        let s = self.stride;
        let p = self.padding as isize;
        out.data_mut()
            .par_chunks_mut(oh * ow)
            .enumerate()
            .for_each(|(co, slab)| {
                slab.fill(bd[co]);
                for ci in 0..cin {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wv = wd[((co * cin + ci) * kh + ky) * kw + kx];
                            if wv == 0.0 {
                                continue;
                            }
                            let (lo, hi) = self.ox_range(kx, wid, ow);
                            if lo > hi {
                                continue;
                            }
                            let shift_x = kx as isize - p;
                            for oy in 0..oh {
                                let yin = (oy * s) as isize + ky as isize - p;
                                if yin < 0 || yin >= h as isize {
                                    continue;
                                }
                                let in_row = &xd[(ci * h + yin as usize) * wid..][..wid];
                                let out_row = &mut slab[oy * ow..][..ow];
                                for ox in lo..=hi {
                                    let xin = (ox * s) as isize + shift_x;
                                    out_row[ox] += wv * in_row[xin as usize];
                                }
                            }
                        }
                    }
                }
            });
        Ok(out)
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad_out: &Tensor,
    ) -> Vec<Option<Tensor>> {
        let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
        let (cin, h, wid, cout, kh, kw, oh, ow) = self.dims(x, w, b).expect("checked in forward");
        let xd = x.data();
        let wd = w.data();
        let gd = grad_out.data();
        let s = self.stride;
        let p = self.padding as isize;

        // d/d bias
        let mut gb = Tensor::zeros(&[cout]);
        gb.data_mut().par_iter_mut().enumerate().for_each(|(co, v)| {
            *v = gd[co * oh * ow..(co + 1) * oh * ow].iter().sum();
        });

        // d/d weights: one output-channel slab per worker.
        let mut gw = Tensor::zeros(&[cout, cin, kh, kw]);
        gw.data_mut()
            .par_chunks_mut(cin * kh * kw)
            .enumerate()
            .for_each(|(co, wslab)| {
                let gslab = &gd[co * oh * ow..(co + 1) * oh * ow];
                for ci in 0..cin {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let (lo, hi) = self.ox_range(kx, wid, ow);
                            if lo > hi {
                                continue;
                            }
                            let shift_x = kx as isize - p;
                            let mut acc = 0.0;
                            for oy in 0..oh {
                                let yin = (oy * s) as isize + ky as isize - p;
                                if yin < 0 || yin >= h as isize {
                                    continue;
                                }
                                let in_row = &xd[(ci * h + yin as usize) * wid..][..wid];
                                let g_row = &gslab[oy * ow..][..ow];
                                for ox in lo..=hi {
                                    let xin = (ox * s) as isize + shift_x;
                                    acc += g_row[ox] * in_row[xin as usize];
                                }
                            }
                            wslab[(ci * kh + ky) * kw + kx] = acc;
                        }
                    }
                }
            });

        // d/d input: one input-channel slab per worker.
        let mut gx = Tensor::zeros(&[cin, h, wid]);
        gx.data_mut()
            .par_chunks_mut(h * wid)
            .enumerate()
            .for_each(|(ci, xslab)| {
                for co in 0..cout {
                    let gslab = &gd[co * oh * ow..(co + 1) * oh * ow];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wv = wd[((co * cin + ci) * kh + ky) * kw + kx];
                            if wv == 0.0 {
                                continue;
                            }
                            let (lo, hi) = self.ox_range(kx, wid, ow);
                            if lo > hi {
                                continue;
                            }
                            let shift_x = kx as isize - p;
                            for oy in 0..oh {
                                let yin = (oy * s) as isize + ky as isize - p;
                                if yin < 0 || yin >= h as isize {
                                    continue;
                                }
                                let x_row = &mut xslab[yin as usize * wid..][..wid];
                                let g_row = &gslab[oy * ow..][..ow];
                                for ox in lo..=hi {
                                    let xin = (ox * s) as isize + shift_x;
                                    x_row[xin as usize] += wv * g_row[ox];
                                }
                            }
                        }
                    }
                }
            });

        vec![Some(gx), Some(gw), Some(gb)]
    }
}

pub struct ReLU;

impl Op for ReLU {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, NetError> {
        let x = inputs[0];
        let data = x.data().iter().map(|v| v.max(0.0)).collect();
        Ok(Tensor::from_vec(x.shape(), data).expect("same shape"))
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad_out: &Tensor) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let data = x
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(v, g)| if *v > 0.0 { *g } else { 0.0 })
            .collect();
        vec![Some(Tensor::from_vec(x.shape(), data).expect("same shape"))]
    }
}

/// Elementwise sum of two same-shape tensors (residual connections).
pub struct Add;

impl Op for Add {
    fn name(&self) -> &'static str {
        "add"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, NetError> {
        let (a, b) = (inputs[0], inputs[1]);
        if a.shape() != b.shape() {
            return Err(NetError::Shape {
                op: "add",
                detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
            });
        }
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        Ok(Tensor::from_vec(a.shape(), data).expect("same shape"))
    }

    fn backward(&self, _inputs: &[&Tensor], _out: &Tensor, grad_out: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(grad_out.clone()), Some(grad_out.clone())]
    }
}

/// Concatenate two (C, H, W) tensors along the channel axis.
pub struct ConcatChannels;

impl Op for ConcatChannels {
    fn name(&self) -> &'static str {
        "concat_channels"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, NetError> {
        let (a, b) = (inputs[0], inputs[1]);
        let (ca, ha, wa) = shape3(a, "concat_channels")?;
        let (cb, hb, wb) = shape3(b, "concat_channels")?;
        if (ha, wa) != (hb, wb) {
            return Err(NetError::Shape {
                op: "concat_channels",
                detail: format!("spatial dims differ: {ha}x{wa} vs {hb}x{wb}"),
            });
        }
        let mut data = Vec::with_capacity((ca + cb) * ha * wa);
        data.extend_from_slice(a.data());
        data.extend_from_slice(b.data());
        Ok(Tensor::from_vec(&[ca + cb, ha, wa], data).expect("sized"))
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad_out: &Tensor) -> Vec<Option<Tensor>> {
        let a = inputs[0];
        let na = a.numel();
        let ga = Tensor::from_vec(a.shape(), grad_out.data()[..na].to_vec()).expect("split");
        let gb =
            Tensor::from_vec(inputs[1].shape(), grad_out.data()[na..].to_vec()).expect("split");
        vec![Some(ga), Some(gb)]
    }
}

/// Softmax over the channel axis, independently per (h, w) location.
pub struct SoftmaxChannels;

impl SoftmaxChannels {
    fn softmax_into(x: &Tensor) -> Result<Tensor, NetError> {
        let (c, h, w) = shape3(x, "softmax_channels")?;
        let mut out = Tensor::zeros(&[c, h, w]);
        let xd = x.data();
        let od = out.data_mut();
        let hw = h * w;
        for pix in 0..hw {
            let mut maxv = f64::NEG_INFINITY;
            for ch in 0..c {
                maxv = maxv.max(xd[ch * hw + pix]);
            }
            let mut denom = 0.0;
            for ch in 0..c {
                let e = (xd[ch * hw + pix] - maxv).exp();
                od[ch * hw + pix] = e;
                denom += e;
            }
            for ch in 0..c {
                od[ch * hw + pix] /= denom;
            }
        }
        Ok(out)
    }
}

impl Op for SoftmaxChannels {
    fn name(&self) -> &'static str {
        "softmax_channels"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, NetError> {
        Self::softmax_into(inputs[0])
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let (c, h, w) = shape3(x, "softmax_channels").expect("checked in forward");
        let hw = h * w;
        let sd = output.data();
        let gd = grad_out.data();
        let mut gx = Tensor::zeros(&[c, h, w]);
        let gxd = gx.data_mut();
        for pix in 0..hw {
            let mut dot = 0.0;
            for ch in 0..c {
                dot += gd[ch * hw + pix] * sd[ch * hw + pix];
            }
            for ch in 0..c {
                let s = sd[ch * hw + pix];
                gxd[ch * hw + pix] = s * (gd[ch * hw + pix] - dot);
            }
        }
        vec![Some(gx)]
    }
}

/// Sum of all elements, producing a scalar.
pub struct SumAll;

impl Op for SumAll {
    fn name(&self) -> &'static str {
        "sum_all"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, NetError> {
        Ok(Tensor::scalar(inputs[0].data().iter().sum()))
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad_out: &Tensor) -> Vec<Option<Tensor>> {
        let g = grad_out.item();
        vec![Some(Tensor::full(inputs[0].shape(), g))]
    }
}
