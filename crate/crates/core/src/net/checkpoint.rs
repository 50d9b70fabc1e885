//! Versioned checkpoint format: JSON with a config snapshot, every parameter
//! as (name, shape, values), the Adam state and the step counter.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

use super::{Adam, AdamConfig, Model, NetError, NetworkConfig, ParamStore};

pub const CHECKPOINT_FORMAT_VERSION: &str = "v1";

#[derive(Serialize, Deserialize)]
struct TensorDump {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct AdamDump {
    cfg: AdamConfig,
    m: Vec<TensorDump>,
    v: Vec<TensorDump>,
    t: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: String,
    step: u64,
    net_config: NetworkConfig,
    params: Vec<TensorDump>,
    adam: Option<AdamDump>,
}

/// A loaded checkpoint: the model plus optional optimizer state for resume.
pub struct Checkpoint {
    pub model: Model,
    pub adam: Option<Adam>,
    pub step: u64,
}

fn dump(name: &str, t: &Tensor) -> TensorDump {
    TensorDump { name: name.to_string(), shape: t.shape().to_vec(), data: t.data().to_vec() }
}

pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    adam: Option<&Adam>,
    step: u64,
) -> Result<(), NetError> {
    let file = CheckpointFile {
        format: "checkpoint".into(),
        version: CHECKPOINT_FORMAT_VERSION.into(),
        step,
        net_config: model.cfg.clone(),
        params: model.params.iter().map(|(n, t)| dump(n, t)).collect(),
        adam: adam.map(|a| AdamDump {
            cfg: a.cfg,
            m: a.m.iter().enumerate().map(|(i, t)| dump(&format!("m{i}"), t)).collect(),
            v: a.v.iter().enumerate().map(|(i, t)| dump(&format!("v{i}"), t)).collect(),
            t: a.t,
        }),
    };
    let body = serde_json::to_string(&file).map_err(|e| NetError::CheckpointParse(e.to_string()))?;
    std::fs::write(path, body)
        .map_err(|e| NetError::CheckpointIo(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, NetError> {
    let body = std::fs::read_to_string(path)
        .map_err(|e| NetError::CheckpointIo(format!("{}: {e}", path.display())))?;
    let file: CheckpointFile =
        serde_json::from_str(&body).map_err(|e| NetError::CheckpointParse(e.to_string()))?;
    if file.format != "checkpoint" || file.version != CHECKPOINT_FORMAT_VERSION {
        return Err(NetError::CheckpointParse(format!(
            "unsupported checkpoint format/version: {}/{}",
            file.format, file.version
        )));
    }
    // Build a reference model to know the expected parameter shapes, then
    // overwrite its values.
    let reference = Model::init(file.net_config.clone(), 0)?;
    let mut params = ParamStore::default();
    let mut expected: std::collections::BTreeMap<&str, &Tensor> = reference.params.iter().collect();
    for p in &file.params {
        let Some(want) = expected.remove(p.name.as_str()) else {
            return Err(NetError::CheckpointParse(format!("unexpected tensor {}", p.name)));
        };
        if want.shape() != p.shape.as_slice() {
            return Err(NetError::CheckpointShape {
                name: p.name.clone(),
                expected: want.shape().to_vec(),
                found: p.shape.clone(),
            });
        }
        let t = Tensor::from_vec(&p.shape, p.data.clone()).map_err(|_| {
            NetError::CheckpointShape {
                name: p.name.clone(),
                expected: p.shape.clone(),
                found: vec![p.data.len()],
            }
        })?;
        params.add(&p.name, t);
    }
    if let Some((missing, _)) = expected.into_iter().next() {
        return Err(NetError::CheckpointParse(format!("missing tensor {missing}")));
    }
    let model = Model { cfg: file.net_config, params };
    let adam = match file.adam {
        Some(a) => {
            let mut adam = Adam::new(a.cfg, &model.params);
            if a.m.len() != adam.m.len() || a.v.len() != adam.v.len() {
                return Err(NetError::CheckpointParse("optimizer state size mismatch".into()));
            }
            for (slot, d) in adam.m.iter_mut().zip(&a.m) {
                *slot = Tensor::from_vec(&d.shape, d.data.clone())
                    .map_err(|_| NetError::CheckpointParse(format!("bad tensor {}", d.name)))?;
            }
            for (slot, d) in adam.v.iter_mut().zip(&a.v) {
                *slot = Tensor::from_vec(&d.shape, d.data.clone())
                    .map_err(|_| NetError::CheckpointParse(format!("bad tensor {}", d.name)))?;
            }
            adam.t = a.t;
            Some(adam)
        }
        None => None,
    };
    Ok(Checkpoint { model, adam, step: file.step })
}
