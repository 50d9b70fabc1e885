//! Adam with classic (coupled) weight decay: the decay term joins the raw
//! gradient before the moment updates.

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

use super::{NetError, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    /// First/second moment per parameter, in ParamStore order.
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ParamStore) -> Self {
        let m = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        let v = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self { cfg, m, v, t: 0 }
    }

    /// One update over all parameters; `grads` must provide one tensor per
    /// parameter, in store order (None means zero gradient this step).
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &[Option<Tensor>],
    ) -> Result<(), NetError> {
        self.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bias1 = 1.0 - b1.powi(self.t as i32);
        let bias2 = 1.0 - b2.powi(self.t as i32);
        for (idx, (name, theta)) in params.iter_mut().enumerate() {
            let Some(grad) = grads[idx].as_ref() else {
                continue;
            };
            let m = self.m[idx].data_mut();
            let v = self.v[idx].data_mut();
            let td = theta.data_mut();
            for e in 0..td.len() {
                let g = grad.data()[e] + self.cfg.weight_decay * td[e];
                if !g.is_finite() {
                    return Err(NetError::NonFinite { what: "gradient", name: name.to_string() });
                }
                m[e] = b1 * m[e] + (1.0 - b1) * g;
                v[e] = b2 * v[e] + (1.0 - b2) * g * g;
                let m_hat = m[e] / bias1;
                let v_hat = v[e] / bias2;
                td[e] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param_store(value: f64) -> ParamStore {
        let mut p = ParamStore::default();
        p.add("theta", Tensor::from_vec(&[1], vec![value]).unwrap());
        p
    }

    #[test]
    fn zero_gradient_zero_decay_leaves_parameters() {
        let mut params = single_param_store(1.5);
        let cfg = AdamConfig { weight_decay: 0.0, ..Default::default() };
        let mut adam = Adam::new(cfg, &params);
        adam.step(&mut params, &[Some(Tensor::zeros(&[1]))]).unwrap();
        assert_eq!(params.get("theta").unwrap().data()[0], 1.5);
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_lr() {
        let mut params = single_param_store(0.0);
        let cfg = AdamConfig { lr: 0.1, weight_decay: 0.0, ..Default::default() };
        let mut adam = Adam::new(cfg, &params);
        adam.step(&mut params, &[Some(Tensor::from_vec(&[1], vec![1.0]).unwrap())]).unwrap();
        let got = params.get("theta").unwrap().data()[0];
        assert!((got + 0.1).abs() < 1e-6, "{got}");
    }

    #[test]
    fn deterministic_trajectories() {
        let run = || {
            let mut params = single_param_store(0.3);
            let mut adam = Adam::new(AdamConfig::default(), &params);
            for k in 0..50 {
                let g = Tensor::from_vec(&[1], vec![(k as f64 * 0.1).sin()]).unwrap();
                adam.step(&mut params, &[Some(g)]).unwrap();
            }
            params.get("theta").unwrap().data()[0].to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut params = single_param_store(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &params);
        let err = adam
            .step(&mut params, &[Some(Tensor::from_vec(&[1], vec![f64::NAN]).unwrap())])
            .unwrap_err();
        assert!(err.to_string().contains("theta"));
    }
}
