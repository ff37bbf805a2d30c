//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! Values are `f64` throughout, row-major, NCHW for image tensors. A
//! [`Graph`] is an append-only tape of [`Node`]s; node indices are already
//! a topological order, so [`Graph::backward`] is a single reverse sweep.
//! A graph instance is single-owner during forward/backward; independent
//! graphs may run on independent threads.

mod conv;
mod gradcheck;
mod layers;
mod snapshot;

pub use gradcheck::grad_check;
pub use layers::BnMode;
pub use snapshot::{read_snapshot, write_snapshot, NamedTensor};

pub(crate) use conv::conv_out_dim;

use crate::archspec::ActivationKind;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("activation parameter error: {0}")]
    Param(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("snapshot format error: {0}")]
    Snapshot(String),
}

pub(crate) fn shape_err(msg: impl Into<String>) -> TensorError {
    TensorError::Shape(msg.into())
}

/// A dense host tensor: shape plus row-major values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(shape_err(format!(
                "shape {shape:?} implies {numel} values, got {}",
                values.len()
            )));
        }
        Ok(Tensor { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; numel],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            values: vec![v],
        }
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }
}

/// Handle to a node inside one particular [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        input: NodeId,
        /// Flat input index each output element took its value from.
        argmax: Vec<usize>,
    },
    /// Batch normalization; `mean`/`inv_std` are the statistics actually
    /// used (batch stats in train mode, running stats in eval mode).
    BatchNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Activation {
        input: NodeId,
        kind: ActivationKind,
        params: Option<NodeId>,
    },
    Sigmoid {
        input: NodeId,
    },
    Reshape {
        input: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    MulElem {
        a: NodeId,
        b: NodeId,
    },
    /// `ca * a + cb * b`, elementwise over equal shapes.
    AffineCombine {
        a: NodeId,
        b: NodeId,
        ca: f64,
        cb: f64,
    },
    Sum {
        input: NodeId,
    },
    GlobalAvgPool {
        input: NodeId,
    },
    /// NCHW input scaled per (n, c) by a gate of shape [N, C].
    ChannelScale {
        input: NodeId,
        gate: NodeId,
    },
    Linear {
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<f64>,
        per_sample: Vec<f64>,
        reduction: Reduction,
    },
    /// KL(softmax(adv) || softmax(clean)); differentiable in both inputs.
    KlDivergence {
        adv: NodeId,
        clean: NodeId,
        adv_probs: Vec<f64>,
        clean_probs: Vec<f64>,
        per_sample: Vec<f64>,
        reduction: Reduction,
    },
}

pub(crate) struct Node {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Option<Vec<f64>>,
    pub needs_grad: bool,
    pub op: Op,
}

/// Append-only reverse-mode differentiation tape.
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    recording: bool,
    backward_done: bool,
}

impl Graph {
    /// `recording = false` builds a value-only graph: no operation is
    /// remembered and [`Graph::backward`] has nothing to differentiate.
    pub fn new(recording: bool) -> Self {
        Graph {
            nodes: Vec::new(),
            recording,
            backward_done: false,
        }
    }

    pub fn recording(&self) -> bool {
        self.recording
    }

    pub fn leaf(&mut self, tensor: Tensor, requires_grad: bool) -> NodeId {
        let needs = requires_grad && self.recording;
        self.push(tensor.shape, tensor.values, Op::Leaf, needs)
    }

    pub fn constant(&mut self, tensor: Tensor) -> NodeId {
        self.leaf(tensor, false)
    }

    pub(crate) fn push(
        &mut self,
        shape: Vec<usize>,
        values: Vec<f64>,
        op: Op,
        needs_grad: bool,
    ) -> NodeId {
        let needs_grad = needs_grad && self.recording;
        let op = if self.recording { op } else { Op::Leaf };
        let grad = needs_grad.then(|| vec![0.0; values.len()]);
        self.nodes.push(Node {
            shape,
            values,
            grad,
            needs_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub(crate) fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn values(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].values
    }

    /// Accumulated gradient of the last [`Graph::backward`] target with
    /// respect to this node, if one was tracked.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Per-sample losses recorded by a loss node (cross entropy or KL).
    pub fn per_sample_losses(&self, id: NodeId) -> Option<&[f64]> {
        match &self.nodes[id.0].op {
            Op::SoftmaxCrossEntropy { per_sample, .. } => Some(per_sample),
            Op::KlDivergence { per_sample, .. } => Some(per_sample),
            _ => None,
        }
    }

    /// Reverse accumulation from a scalar loss. Every tracked node ends up
    /// holding d(loss)/d(node). A graph can only be swept once; repeated
    /// calls are rejected.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TensorError> {
        if self.nodes[loss.0].values.len() != 1 {
            return Err(shape_err(format!(
                "backward target must be scalar, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        if self.backward_done {
            return Err(TensorError::Unsupported(
                "backward already ran on this graph; rebuild the graph to differentiate again"
                    .into(),
            ));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].needs_grad {
            // Nothing upstream is tracked; the sweep would be a no-op.
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            self.backprop_node(i);
        }
        Ok(())
    }

    pub(crate) fn add_grad(&mut self, id: NodeId, delta: &[f64]) {
        let node = &mut self.nodes[id.0];
        if !node.needs_grad {
            return;
        }
        let grad = node.grad.get_or_insert_with(|| vec![0.0; node.values.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }
}

/// Numerically stable softmax over the trailing dimension of an [N, K]
/// matrix, written into `out`.
pub(crate) fn softmax_rows(values: &[f64], n: usize, k: usize, out: &mut [f64]) {
    for row in 0..n {
        let src = &values[row * k..(row + 1) * k];
        let dst = &mut out[row * k..(row + 1) * k];
        let max = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            denom += *d;
        }
        for d in dst.iter_mut() {
            *d /= denom;
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Activation forward/derivative math shared by the graph op and tests.
pub mod act {
    use super::sigmoid;
    use crate::archspec::ActivationKind;

    const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    const GELU_A: f64 = 0.044_715;

    /// PSSiLU's learnable subtraction is kept inside [0, 0.99] so the
    /// 1 - a denominator stays away from zero.
    pub fn clamp_pssilu_a(a: f64) -> f64 {
        a.clamp(0.0, 0.99)
    }

    /// y(x) for the given activation; `p` carries the learnable scalars.
    pub fn forward(kind: ActivationKind, x: f64, p: &[f64]) -> f64 {
        match kind {
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Gelu => {
                let inner = GELU_C * (x + GELU_A * x * x * x);
                0.5 * x * (1.0 + inner.tanh())
            }
            ActivationKind::Silu => x * sigmoid(x),
            ActivationKind::PRelu => {
                if x >= 0.0 {
                    x
                } else {
                    p[0] * x
                }
            }
            ActivationKind::PSilu => x * sigmoid(p[0] * x),
            ActivationKind::PsSilu => {
                let a = clamp_pssilu_a(p[1]);
                x * (sigmoid(p[0] * x) - a) / (1.0 - a)
            }
        }
    }

    /// dy/dx.
    pub fn dx(kind: ActivationKind, x: f64, p: &[f64]) -> f64 {
        match kind {
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Gelu => {
                let inner = GELU_C * (x + GELU_A * x * x * x);
                let t = inner.tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
            }
            ActivationKind::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            ActivationKind::PRelu => {
                if x >= 0.0 {
                    1.0
                } else {
                    p[0]
                }
            }
            ActivationKind::PSilu => {
                let s = sigmoid(p[0] * x);
                s + x * p[0] * s * (1.0 - s)
            }
            ActivationKind::PsSilu => {
                let a = clamp_pssilu_a(p[1]);
                let s = sigmoid(p[0] * x);
                (s - a + x * p[0] * s * (1.0 - s)) / (1.0 - a)
            }
        }
    }

    /// dy/d(param_i), for each learnable scalar of the activation.
    pub fn dparams(kind: ActivationKind, x: f64, p: &[f64], out: &mut [f64]) {
        match kind {
            ActivationKind::PRelu => {
                out[0] = x.min(0.0);
            }
            ActivationKind::PSilu => {
                let s = sigmoid(p[0] * x);
                out[0] = x * x * s * (1.0 - s);
            }
            ActivationKind::PsSilu => {
                let raw = p[1];
                let a = clamp_pssilu_a(raw);
                let s = sigmoid(p[0] * x);
                out[0] = x * x * s * (1.0 - s) / (1.0 - a);
                // Zero subgradient once the clamp is active.
                out[1] = if (0.0..=0.99).contains(&raw) {
                    x * (s - 1.0) / ((1.0 - a) * (1.0 - a))
                } else {
                    0.0
                };
            }
            _ => {}
        }
    }
}
