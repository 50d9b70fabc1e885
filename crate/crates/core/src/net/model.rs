//! Network topology: two independent convolutional streams (LiDAR, map)
//! with residual blocks and a total stride of 8, depth-concatenated and
//! fused, then three task heads. The post-softmax intention scores pass
//! through an embedding convolution whose output is concatenated with the
//! shared features before the regression head, so trajectory estimation is
//! conditioned on the predicted behavior.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::anchors::RegressionTargets;
use crate::tensor::Tensor;

use super::ops::{Add, ConcatChannels, Conv2d, ReLU, SoftmaxChannels};
use super::{NetError, Tape, VarId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub lidar_channels: usize,
    pub map_channels: usize,
    /// Channel widths of the three downsampling stages (shared by both
    /// streams).
    pub stream_widths: [usize; 3],
    /// Per-stage strides; must multiply to 8.
    pub downsample_schedule: [usize; 3],
    pub fusion_width: usize,
    pub fusion_blocks: usize,
    pub head_width: usize,
    pub intent_embed_width: usize,
    pub anchors_per_cell: usize,
    pub t_future: usize,
    pub num_actions: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            lidar_channels: 290,
            map_channels: 17,
            stream_widths: [32, 64, 128],
            downsample_schedule: [2, 2, 2],
            fusion_width: 256,
            fusion_blocks: 2,
            head_width: 64,
            intent_embed_width: 8,
            anchors_per_cell: 5,
            t_future: 6,
            num_actions: 8,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let stride: usize = self.downsample_schedule.iter().product();
        if stride != 8 {
            return Err(NetError::Config(format!(
                "downsample schedule {:?} multiplies to {stride}, expected 8",
                self.downsample_schedule
            )));
        }
        for (name, v) in [
            ("lidar_channels", self.lidar_channels),
            ("map_channels", self.map_channels),
            ("fusion_width", self.fusion_width),
            ("head_width", self.head_width),
            ("intent_embed_width", self.intent_embed_width),
            ("anchors_per_cell", self.anchors_per_cell),
            ("num_actions", self.num_actions),
            ("t_future", self.t_future),
        ] {
            if v == 0 {
                return Err(NetError::Config(format!("{name} must be >= 1")));
            }
        }
        if self.stream_widths.iter().any(|w| *w == 0) {
            return Err(NetError::Config("stream widths must be >= 1".into()));
        }
        Ok(())
    }

    pub fn reg_width(&self) -> usize {
        RegressionTargets::width(self.t_future)
    }

    pub fn det_channels(&self) -> usize {
        self.anchors_per_cell * 2
    }

    pub fn reg_channels(&self) -> usize {
        self.anchors_per_cell * self.reg_width()
    }
}

/// Named parameter tensors in insertion order (the order fixes checkpoint
/// layout and Adam state indexing).
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn add(&mut self, name: &str, tensor: Tensor) {
        assert!(
            self.index.insert(name.to_string(), self.entries.len()).is_none(),
            "duplicate parameter {name}"
        );
        self.entries.push((name.to_string(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|i| &self.entries[*i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).copied().map(move |i| &mut self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }
}

pub struct Model {
    pub cfg: NetworkConfig,
    pub params: ParamStore,
}

/// Tape handles of one forward pass.
pub struct ForwardOutputs {
    pub det_logits: VarId,
    pub intent_logits: VarId,
    pub reg: VarId,
    /// Pre-fusion stream features (for probes and tests).
    pub lidar_features: VarId,
    pub map_features: VarId,
    pub fused: VarId,
    /// Leaf id of every parameter in this tape.
    pub param_ids: BTreeMap<String, VarId>,
}

/// Plain-value head outputs with the (rows, cols, k, ...) accessors used by
/// inference; channel layouts: det k*2+s (s=0 vehicle, s=1 background),
/// regression k*reg_width+r.
#[derive(Debug, Clone)]
pub struct HeadOutputs {
    pub det_logits: Tensor,
    pub intent_logits: Tensor,
    pub reg: Tensor,
    pub anchors_per_cell: usize,
    pub t_future: usize,
}

impl HeadOutputs {
    pub fn rows(&self) -> usize {
        self.det_logits.shape()[1]
    }

    pub fn cols(&self) -> usize {
        self.det_logits.shape()[2]
    }

    pub fn det_logit(&self, i: usize, j: usize, k: usize, s: usize) -> f64 {
        self.det_logits.at3(k * 2 + s, i, j)
    }

    /// Vehicle probability: softmax over the two per-anchor scores.
    pub fn vehicle_prob(&self, i: usize, j: usize, k: usize) -> f64 {
        let v = self.det_logit(i, j, k, 0);
        let b = self.det_logit(i, j, k, 1);
        let m = v.max(b);
        let ev = (v - m).exp();
        ev / (ev + (b - m).exp())
    }

    /// Softmax intention distribution at a cell.
    pub fn intent_dist(&self, i: usize, j: usize) -> Vec<f64> {
        let c = self.intent_logits.shape()[0];
        let mut m = f64::NEG_INFINITY;
        for ch in 0..c {
            m = m.max(self.intent_logits.at3(ch, i, j));
        }
        let mut out: Vec<f64> = (0..c)
            .map(|ch| (self.intent_logits.at3(ch, i, j) - m).exp())
            .collect();
        let z: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= z);
        out
    }

    pub fn reg_values(&self, i: usize, j: usize, k: usize) -> Vec<f64> {
        let width = RegressionTargets::width(self.t_future);
        (0..width).map(|r| self.reg.at3(k * width + r, i, j)).collect()
    }
}

impl Model {
    /// He fan-in initialization from a seeded generator; the final detection
    /// bias starts strongly in favor of background so early training is not
    /// swamped by easy negatives.
    pub fn init(cfg: NetworkConfig, seed: u64) -> Result<Model, NetError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::default();

        let conv_param = |params: &mut ParamStore,
                              name: &str,
                              cout: usize,
                              cin: usize,
                              k: usize,
                              rng: &mut ChaCha8Rng| {
            let fan_in = (cin * k * k) as f64;
            let std = (2.0 / fan_in).sqrt();
            let normal = Normal::new(0.0, std).expect("std > 0");
            let n = cout * cin * k * k;
            let w = Tensor::from_vec(
                &[cout, cin, k, k],
                (0..n).map(|_| normal.sample(rng)).collect(),
            )
            .expect("sized");
            params.add(&format!("{name}.w"), w);
            params.add(&format!("{name}.b"), Tensor::zeros(&[cout]));
        };

        for (stream, in_ch) in [("lidar", cfg.lidar_channels), ("map", cfg.map_channels)] {
            conv_param(&mut params, &format!("{stream}.stem"), cfg.stream_widths[0], in_ch, 3, &mut rng);
            let mut prev = cfg.stream_widths[0];
            for (si, width) in cfg.stream_widths.iter().enumerate() {
                conv_param(&mut params, &format!("{stream}.s{si}.down"), *width, prev, 3, &mut rng);
                conv_param(&mut params, &format!("{stream}.s{si}.res.c1"), *width, *width, 3, &mut rng);
                conv_param(&mut params, &format!("{stream}.s{si}.res.c2"), *width, *width, 3, &mut rng);
                prev = *width;
            }
        }

        let concat_width = 2 * cfg.stream_widths[2];
        conv_param(&mut params, "fusion.proj", cfg.fusion_width, concat_width, 1, &mut rng);
        for b in 0..cfg.fusion_blocks {
            conv_param(&mut params, &format!("fusion.b{b}.c1"), cfg.fusion_width, cfg.fusion_width, 3, &mut rng);
            conv_param(&mut params, &format!("fusion.b{b}.c2"), cfg.fusion_width, cfg.fusion_width, 3, &mut rng);
        }

        conv_param(&mut params, "head.det.c1", cfg.head_width, cfg.fusion_width, 3, &mut rng);
        conv_param(&mut params, "head.det.out", cfg.det_channels(), cfg.head_width, 3, &mut rng);
        conv_param(&mut params, "head.int.c1", cfg.head_width, cfg.fusion_width, 3, &mut rng);
        conv_param(&mut params, "head.int.out", cfg.num_actions, cfg.head_width, 3, &mut rng);
        conv_param(&mut params, "head.embed", cfg.intent_embed_width, cfg.num_actions, 3, &mut rng);
        conv_param(
            &mut params,
            "head.reg.c1",
            cfg.head_width,
            cfg.fusion_width + cfg.intent_embed_width,
            3,
            &mut rng,
        );
        conv_param(&mut params, "head.reg.out", cfg.reg_channels(), cfg.head_width, 3, &mut rng);

        // Background prior ~0.98 at init.
        let det_bias = params.get_mut("head.det.out.b").expect("just added");
        for k in 0..cfg.anchors_per_cell {
            det_bias.data_mut()[k * 2] = -4.0;
        }

        Ok(Model { cfg, params })
    }

    fn conv(
        &self,
        tape: &mut Tape,
        ids: &BTreeMap<String, VarId>,
        name: &str,
        x: VarId,
        stride: usize,
        padding: usize,
    ) -> Result<VarId, NetError> {
        let w = ids[&format!("{name}.w")];
        let b = ids[&format!("{name}.b")];
        tape.apply(Box::new(Conv2d { stride, padding }), &[x, w, b])
    }

    fn conv_relu(
        &self,
        tape: &mut Tape,
        ids: &BTreeMap<String, VarId>,
        name: &str,
        x: VarId,
        stride: usize,
        padding: usize,
    ) -> Result<VarId, NetError> {
        let y = self.conv(tape, ids, name, x, stride, padding)?;
        tape.apply(Box::new(ReLU), &[y])
    }

    fn res_block(
        &self,
        tape: &mut Tape,
        ids: &BTreeMap<String, VarId>,
        name: &str,
        x: VarId,
    ) -> Result<VarId, NetError> {
        let h = self.conv_relu(tape, ids, &format!("{name}.c1"), x, 1, 1)?;
        let h = self.conv(tape, ids, &format!("{name}.c2"), h, 1, 1)?;
        let s = tape.apply(Box::new(Add), &[x, h])?;
        tape.apply(Box::new(ReLU), &[s])
    }

    fn stream(
        &self,
        tape: &mut Tape,
        ids: &BTreeMap<String, VarId>,
        prefix: &str,
        input: VarId,
    ) -> Result<VarId, NetError> {
        let mut x = self.conv_relu(tape, ids, &format!("{prefix}.stem"), input, 1, 1)?;
        for (si, stride) in self.cfg.downsample_schedule.iter().enumerate() {
            x = self.conv_relu(tape, ids, &format!("{prefix}.s{si}.down"), x, *stride, 1)?;
            x = self.res_block(tape, ids, &format!("{prefix}.s{si}.res"), x)?;
        }
        Ok(x)
    }

    /// Run the full network; inputs are (C, H, W) tensors whose channel
    /// counts must match the config.
    pub fn forward(
        &self,
        tape: &mut Tape,
        lidar: Tensor,
        map: Tensor,
    ) -> Result<ForwardOutputs, NetError> {
        if lidar.shape().first() != Some(&self.cfg.lidar_channels) {
            return Err(NetError::Shape {
                op: "forward",
                detail: format!(
                    "lidar tensor has {:?} channels, config expects {}",
                    lidar.shape().first(),
                    self.cfg.lidar_channels
                ),
            });
        }
        if map.shape().first() != Some(&self.cfg.map_channels) {
            return Err(NetError::Shape {
                op: "forward",
                detail: format!(
                    "map tensor has {:?} channels, config expects {}",
                    map.shape().first(),
                    self.cfg.map_channels
                ),
            });
        }
        let mut param_ids = BTreeMap::new();
        for (name, tensor) in self.params.iter() {
            param_ids.insert(name.to_string(), tape.leaf(tensor.clone()));
        }
        let lidar_in = tape.leaf(lidar);
        let map_in = tape.leaf(map);

        let lidar_features = self.stream(tape, &param_ids, "lidar", lidar_in)?;
        let map_features = self.stream(tape, &param_ids, "map", map_in)?;
        let cat = tape.apply(Box::new(ConcatChannels), &[lidar_features, map_features])?;
        let mut fused = self.conv_relu(tape, &param_ids, "fusion.proj", cat, 1, 0)?;
        for b in 0..self.cfg.fusion_blocks {
            fused = self.res_block(tape, &param_ids, &format!("fusion.b{b}"), fused)?;
        }

        let det_h = self.conv_relu(tape, &param_ids, "head.det.c1", fused, 1, 1)?;
        let det_logits = self.conv(tape, &param_ids, "head.det.out", det_h, 1, 1)?;

        let int_h = self.conv_relu(tape, &param_ids, "head.int.c1", fused, 1, 1)?;
        let intent_logits = self.conv(tape, &param_ids, "head.int.out", int_h, 1, 1)?;

        let intent_scores = tape.apply(Box::new(SoftmaxChannels), &[intent_logits])?;
        let embed = self.conv(tape, &param_ids, "head.embed", intent_scores, 1, 1)?;
        let reg_in = tape.apply(Box::new(ConcatChannels), &[fused, embed])?;
        let reg_h = self.conv_relu(tape, &param_ids, "head.reg.c1", reg_in, 1, 1)?;
        let reg = self.conv(tape, &param_ids, "head.reg.out", reg_h, 1, 1)?;

        Ok(ForwardOutputs {
            det_logits,
            intent_logits,
            reg,
            lidar_features,
            map_features,
            fused,
            param_ids,
        })
    }

    /// Forward pass returning plain head values (inference path).
    pub fn infer(&self, lidar: Tensor, map: Tensor) -> Result<HeadOutputs, NetError> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, lidar, map)?;
        Ok(HeadOutputs {
            det_logits: tape.value(out.det_logits).clone(),
            intent_logits: tape.value(out.intent_logits).clone(),
            reg: tape.value(out.reg).clone(),
            anchors_per_cell: self.cfg.anchors_per_cell,
            t_future: self.cfg.t_future,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_cfg() -> NetworkConfig {
        NetworkConfig {
            lidar_channels: 4,
            map_channels: 3,
            stream_widths: [4, 6, 8],
            downsample_schedule: [2, 2, 2],
            fusion_width: 16,
            fusion_blocks: 1,
            head_width: 8,
            intent_embed_width: 4,
            anchors_per_cell: 2,
            t_future: 2,
            num_actions: 8,
            ..Default::default()
        }
    }

    fn rand_input(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn output_stride_is_eight_and_shapes_match() {
        let cfg = tiny_cfg();
        let model = Model::init(cfg.clone(), 0).unwrap();
        let out = model
            .infer(rand_input(&[4, 32, 24], 1), rand_input(&[3, 32, 24], 2))
            .unwrap();
        assert_eq!(out.det_logits.shape(), &[cfg.det_channels(), 4, 3]);
        assert_eq!(out.intent_logits.shape(), &[8, 4, 3]);
        assert_eq!(out.reg.shape(), &[cfg.reg_channels(), 4, 3]);
    }

    #[test]
    fn bad_schedule_is_rejected() {
        let cfg = NetworkConfig { downsample_schedule: [2, 2, 3], ..tiny_cfg() };
        assert!(Model::init(cfg, 0).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let model = Model::init(tiny_cfg(), 3).unwrap();
        let a = model.infer(rand_input(&[4, 16, 16], 5), rand_input(&[3, 16, 16], 6)).unwrap();
        let b = model.infer(rand_input(&[4, 16, 16], 5), rand_input(&[3, 16, 16], 6)).unwrap();
        assert_eq!(a.det_logits.data(), b.det_logits.data());
        assert_eq!(a.reg.data(), b.reg.data());
    }

    #[test]
    fn intent_distribution_sums_to_one_and_probs_in_range() {
        let model = Model::init(tiny_cfg(), 4).unwrap();
        let out = model.infer(rand_input(&[4, 16, 16], 7), rand_input(&[3, 16, 16], 8)).unwrap();
        for i in 0..out.rows() {
            for j in 0..out.cols() {
                let d = out.intent_dist(i, j);
                let s: f64 = d.iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
                for k in 0..2 {
                    let p = out.vehicle_prob(i, j, k);
                    assert!(p > 0.0 && p < 1.0);
                }
            }
        }
    }

    #[test]
    fn map_stream_parameters_do_not_touch_lidar_features() {
        let mut model = Model::init(tiny_cfg(), 9).unwrap();
        let lidar = rand_input(&[4, 16, 16], 10);
        let map = rand_input(&[3, 16, 16], 11);

        let mut tape = Tape::new();
        let out = model.forward(&mut tape, lidar.clone(), map.clone()).unwrap();
        let lidar_before = tape.value(out.lidar_features).clone();
        let fused_before = tape.value(out.fused).clone();

        model.params.get_mut("map.s1.res.c1.w").unwrap().data_mut()[0] += 0.5;
        let mut tape2 = Tape::new();
        let out2 = model.forward(&mut tape2, lidar, map).unwrap();
        assert_eq!(tape2.value(out2.lidar_features).data(), lidar_before.data());
        assert_ne!(tape2.value(out2.fused).data(), fused_before.data());
    }

    #[test]
    fn zero_final_params_give_zero_features() {
        let mut model = Model::init(tiny_cfg(), 12).unwrap();
        for name in ["fusion.b0.c2.w", "fusion.b0.c2.b", "fusion.proj.w", "fusion.proj.b"] {
            let t = model.params.get_mut(name).unwrap();
            t.data_mut().fill(0.0);
        }
        let mut tape = Tape::new();
        let out = model
            .forward(&mut tape, Tensor::zeros(&[4, 16, 16]), Tensor::zeros(&[3, 16, 16]))
            .unwrap();
        assert!(tape.value(out.fused).data().iter().all(|v| *v == 0.0));
    }
}
