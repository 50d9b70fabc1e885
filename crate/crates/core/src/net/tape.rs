//! Reverse-mode tape. Nodes are appended in execution order; the backward
//! pass visits them strictly in reverse and accumulates gradients with
//! sequential adds, so the reduction order (and therefore every bit of the
//! result) is fixed.

use crate::tensor::Tensor;

use super::NetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(pub(crate) usize);

/// A differentiable operation. `backward` returns one gradient per input
/// (None for inputs the op does not differentiate through).
pub trait Op: Send + Sync {
    fn name(&self) -> &'static str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, NetError>;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor)
        -> Vec<Option<Tensor>>;
}

struct Node {
    value: Tensor,
    op: Option<Box<dyn Op>>,
    inputs: Vec<VarId>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor) -> VarId {
        self.nodes.push(Node { value, op: None, inputs: vec![] });
        VarId(self.nodes.len() - 1)
    }

    pub fn apply(&mut self, op: Box<dyn Op>, inputs: &[VarId]) -> Result<VarId, NetError> {
        let tensors: Vec<&Tensor> = inputs.iter().map(|id| &self.nodes[id.0].value).collect();
        let value = op.forward(&tensors)?;
        self.nodes.push(Node { value, op: Some(op), inputs: inputs.to_vec() });
        Ok(VarId(self.nodes.len() - 1))
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: VarId) -> Result<Gradients, NetError> {
        let root_value = &self.nodes[root.0].value;
        if root_value.numel() != 1 {
            return Err(NetError::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::from_vec(root_value.shape(), vec![1.0]).expect("scalar"));
        for idx in (0..=root.0).rev() {
            let Some(grad_out) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if let Some(op) = &node.op {
                let inputs: Vec<&Tensor> =
                    node.inputs.iter().map(|id| &self.nodes[id.0].value).collect();
                let input_grads = op.backward(&inputs, &node.value, &grad_out);
                debug_assert_eq!(input_grads.len(), node.inputs.len());
                for (slot, g) in node.inputs.iter().zip(input_grads) {
                    if let Some(g) = g {
                        debug_assert_eq!(g.shape(), self.nodes[slot.0].value.shape());
                        match &mut grads[slot.0] {
                            Some(acc) => {
                                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                                    *a += b;
                                }
                            }
                            none => *none = Some(g),
                        }
                    }
                }
            }
            // Leaf gradients stay for the caller; interior grads were taken.
            if node.op.is_none() {
                grads[idx] = Some(grad_out);
            }
        }
        Ok(Gradients { grads })
    }
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: VarId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: VarId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}
