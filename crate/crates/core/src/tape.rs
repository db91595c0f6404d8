//! Reverse-mode gradient recording.
//!
//! A `GradTape` owns every tensor of one forward pass: leaves (inputs and
//! parameters) plus one node per recorded primitive. `backward` walks the
//! node list in exact reverse execution order, accumulating gradients, and
//! returns one gradient tensor per parameter (zeros when the loss does not
//! depend on it).
//!
//! Loss heads (triplet losses, cross-entropy) are recorded as fused nodes:
//! the forward pass computes the scalar plus mining statistics, the
//! backward pass applies the matching analytic gradient to the embeddings
//! or logits.

use crate::classifier::{cross_entropy_impl, cross_entropy_input_grad};
use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::Tensor;
use crate::triplet::{
    batch_all_grad, batch_all_loss, batch_hard_grad, batch_hard_loss, MiningStats, TripletConfig,
};

/// Handle to a tensor recorded on a `GradTape`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

enum Op {
    Leaf,
    Dense {
        x: TensorId,
        w: TensorId,
        b: TensorId,
    },
    Conv2d {
        x: TensorId,
        k: TensorId,
        b: TensorId,
    },
    Relu {
        x: TensorId,
    },
    MaxPool2 {
        x: TensorId,
        argmax: Vec<u32>,
    },
    L2Normalize {
        x: TensorId,
        norms: Vec<f32>,
    },
    Reshape {
        x: TensorId,
    },
    Sum {
        x: TensorId,
    },
    WeightedSum {
        x: TensorId,
        weights: Vec<f32>,
    },
    BatchAllLoss {
        e: TensorId,
        labels: Vec<usize>,
        margin: f32,
    },
    BatchHardLoss {
        e: TensorId,
        labels: Vec<usize>,
        margin: f32,
    },
    CrossEntropy {
        logits: TensorId,
        labels: Vec<usize>,
    },
}

struct Node {
    value: Tensor,
    param: bool,
    op: Op,
}

#[derive(Default)]
pub struct GradTape {
    nodes: Vec<Node>,
}

/// Gradient per tape node, filled by `GradTape::backward`.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a node; `None` when the loss does not reach it and it
    /// was not registered as a parameter.
    pub fn get(&self, id: TensorId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn take(&mut self, id: TensorId) -> Option<Tensor> {
        self.grads[id.0].take()
    }
}

impl GradTape {
    pub fn new() -> Self {
        GradTape::default()
    }

    /// Records an input tensor that does not receive a gradient by default.
    pub fn leaf(&mut self, value: Tensor) -> TensorId {
        self.push(value, false, Op::Leaf)
    }

    /// Records a trainable parameter; `backward` always reports a gradient
    /// for it, zero-filled when the loss is independent of it.
    pub fn param(&mut self, value: Tensor) -> TensorId {
        self.push(value, true, Op::Leaf)
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, param: bool, op: Op) -> TensorId {
        self.nodes.push(Node { value, param, op });
        TensorId(self.nodes.len() - 1)
    }

    pub fn dense(&mut self, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
        let y = ops::dense(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(y, false, Op::Dense { x, w, b }))
    }

    pub fn conv2d(&mut self, x: TensorId, k: TensorId, b: TensorId) -> Result<TensorId> {
        let y = ops::conv2d(self.value(x), self.value(k), self.value(b))?;
        Ok(self.push(y, false, Op::Conv2d { x, k, b }))
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let y = ops::relu(self.value(x));
        self.push(y, false, Op::Relu { x })
    }

    pub fn maxpool2(&mut self, x: TensorId) -> Result<TensorId> {
        let (y, argmax) = ops::maxpool2(self.value(x))?;
        Ok(self.push(y, false, Op::MaxPool2 { x, argmax }))
    }

    pub fn l2_normalize(&mut self, x: TensorId) -> Result<TensorId> {
        let (y, norms) = ops::l2_normalize(self.value(x))?;
        Ok(self.push(y, false, Op::L2Normalize { x, norms }))
    }

    pub fn reshape(&mut self, x: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        let y = self.value(x).reshaped(shape)?;
        Ok(self.push(y, false, Op::Reshape { x }))
    }

    /// Scalar sum of all elements.
    pub fn sum(&mut self, x: TensorId) -> TensorId {
        let s: f32 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), false, Op::Sum { x })
    }

    /// Scalar dot product with a fixed coefficient vector (handy for
    /// driving gradient checks through non-scalar outputs).
    pub fn weighted_sum(&mut self, x: TensorId, weights: Vec<f32>) -> Result<TensorId> {
        let v = self.value(x);
        if v.numel() != weights.len() {
            return Err(Error::Dimension(format!(
                "weighted_sum: {} elements vs {} weights",
                v.numel(),
                weights.len()
            )));
        }
        let s: f32 = v.data().iter().zip(&weights).map(|(a, w)| a * w).sum();
        Ok(self.push(Tensor::scalar(s), false, Op::WeightedSum { x, weights }))
    }

    pub fn batch_all_loss(
        &mut self,
        e: TensorId,
        labels: &[usize],
        cfg: &TripletConfig,
    ) -> Result<(TensorId, MiningStats)> {
        let (loss, stats) = batch_all_loss(self.value(e), labels, cfg)?;
        let id = self.push(
            Tensor::scalar(loss),
            false,
            Op::BatchAllLoss {
                e,
                labels: labels.to_vec(),
                margin: cfg.margin,
            },
        );
        Ok((id, stats))
    }

    pub fn batch_hard_loss(
        &mut self,
        e: TensorId,
        labels: &[usize],
        cfg: &TripletConfig,
    ) -> Result<(TensorId, MiningStats)> {
        let (loss, stats) = batch_hard_loss(self.value(e), labels, cfg)?;
        let id = self.push(
            Tensor::scalar(loss),
            false,
            Op::BatchHardLoss {
                e,
                labels: labels.to_vec(),
                margin: cfg.margin,
            },
        );
        Ok((id, stats))
    }

    pub fn cross_entropy(&mut self, logits: TensorId, labels: &[usize]) -> Result<TensorId> {
        let loss = cross_entropy_impl(self.value(logits), labels)?;
        Ok(self.push(
            Tensor::scalar(loss),
            false,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Reverse sweep from a scalar loss. Returns gradients for every node
    /// the loss reaches; parameters always get a tensor (zeros if unused).
    pub fn backward(&mut self, loss: TensorId) -> Result<Gradients> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].clone() else {
                continue;
            };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Dense { x, w, b } => {
                    let (dx, dw, db) =
                        ops::dense_backward(self.value(*x), self.value(*w), &dy)?;
                    let (x, w, b) = (*x, *w, *b);
                    accumulate(&mut grads, x, dx);
                    accumulate(&mut grads, w, dw);
                    accumulate(&mut grads, b, db);
                }
                Op::Conv2d { x, k, b } => {
                    let (dx, dk, db) =
                        ops::conv2d_backward(self.value(*x), self.value(*k), &dy)?;
                    let (x, k, b) = (*x, *k, *b);
                    accumulate(&mut grads, x, dx);
                    accumulate(&mut grads, k, dk);
                    accumulate(&mut grads, b, db);
                }
                Op::Relu { x } => {
                    let dx = ops::relu_backward(self.value(*x), &dy);
                    let x = *x;
                    accumulate(&mut grads, x, dx);
                }
                Op::MaxPool2 { x, argmax } => {
                    let dx = ops::maxpool2_backward(self.value(*x).shape(), argmax, &dy);
                    let x = *x;
                    accumulate(&mut grads, x, dx);
                }
                Op::L2Normalize { x, norms } => {
                    let dx = ops::l2_normalize_backward(&self.nodes[idx].value, norms, &dy);
                    let x = *x;
                    accumulate(&mut grads, x, dx);
                }
                Op::Reshape { x } => {
                    let x = *x;
                    let dx = dy.reshaped(self.value(x).shape().to_vec())?;
                    accumulate(&mut grads, x, dx);
                }
                Op::Sum { x } => {
                    let g = dy.item()?;
                    let x = *x;
                    let shape = self.value(x).shape().to_vec();
                    let n = self.value(x).numel();
                    accumulate(&mut grads, x, Tensor::new(shape, vec![g; n])?);
                }
                Op::WeightedSum { x, weights } => {
                    let g = dy.item()?;
                    let dx = Tensor::new(
                        self.value(*x).shape().to_vec(),
                        weights.iter().map(|w| w * g).collect(),
                    )?;
                    let x = *x;
                    accumulate(&mut grads, x, dx);
                }
                Op::BatchAllLoss { e, labels, margin } => {
                    let g = dy.item()?;
                    let mut de = batch_all_grad(self.value(*e), labels, *margin)?;
                    scale_in_place(&mut de, g);
                    let e = *e;
                    accumulate(&mut grads, e, de);
                }
                Op::BatchHardLoss { e, labels, margin } => {
                    let g = dy.item()?;
                    let mut de = batch_hard_grad(self.value(*e), labels, *margin)?;
                    scale_in_place(&mut de, g);
                    let e = *e;
                    accumulate(&mut grads, e, de);
                }
                Op::CrossEntropy { logits, labels } => {
                    let g = dy.item()?;
                    let mut dz = cross_entropy_input_grad(self.value(*logits), labels)?;
                    scale_in_place(&mut dz, g);
                    let logits = *logits;
                    accumulate(&mut grads, logits, dz);
                }
            }
        }

        // every parameter reports a gradient, zero when unused
        for (i, node) in self.nodes.iter().enumerate() {
            if node.param && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: TensorId, delta: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(delta.data()) {
                *a += b;
            }
        }
        slot => *slot = Some(delta),
    }
}

fn scale_in_place(t: &mut Tensor, s: f32) {
    for v in t.data_mut() {
        *v *= s;
    }
}
