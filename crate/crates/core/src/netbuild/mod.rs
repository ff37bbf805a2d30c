//! Realizes an [`ArchitectureSpec`] into an executable [`Network`].
//!
//! A network is a parameter store plus a wiring plan (stem, stages of
//! residual blocks, classifier head). Forward passes build nodes in a
//! [`Graph`]; train mode tracks parameter gradients and refreshes the
//! batch-norm running statistics, eval mode normalizes by the frozen
//! statistics and is deterministic per sample.
//!
//! Structural conventions (shared with `archspec::count_params`, which
//! must agree with [`Network::describe`] exactly):
//! - bottleneck = 1x1 / 3x3 / 1x1 convolutions, basic = two 3x3;
//! - stride-2 sits in the first convolution of the first block of stages
//!   2..n, and of stage 1 when the stem defers downsampling;
//! - projection shortcut (1x1 conv + norm) whenever channels or stride
//!   change, identity otherwise;
//! - SE gate directly after the 3x3 convolution's norm/activation;
//! - activation-mask flags before the last select per-conv activations,
//!   the last flag selects the post-add activation.

use crate::archspec::{self, ActivationKind, ArchitectureSpec, BlockKind, SpecError, StemKind};
use crate::tensor::{
    read_snapshot, write_snapshot, BnMode, Graph, NamedTensor, NodeId, Tensor, TensorError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// What a parameter tensor is, for optimizer policy (weight decay skips
/// normalization affine pairs and activation scalars).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    NormAffine,
    ActParam,
    LinearWeight,
    Bias,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor,
}

pub type ParamId = usize;

#[derive(Debug, Clone)]
pub struct BnState {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone)]
struct NormPlan {
    gamma: ParamId,
    beta: ParamId,
    state: usize,
}

#[derive(Debug, Clone)]
struct ActPlan {
    kind: ActivationKind,
    params: Option<ParamId>,
}

#[derive(Debug, Clone)]
struct ConvPlan {
    weight: ParamId,
    stride: usize,
    padding: usize,
    norm: Option<NormPlan>,
    act: Option<ActPlan>,
}

#[derive(Debug, Clone)]
struct SePlan {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
struct BlockPlan {
    convs: Vec<ConvPlan>,
    /// Index of the convolution the SE gate follows.
    se_after: usize,
    se: Option<SePlan>,
    shortcut: Option<ConvPlan>,
    post_act: Option<ActPlan>,
}

#[derive(Debug, Clone)]
struct Plan {
    stem: ConvPlan,
    stem_maxpool: bool,
    stages: Vec<Vec<BlockPlan>>,
    head_weight: ParamId,
    head_bias: ParamId,
}

#[derive(Debug)]
pub struct Network {
    pub spec: ArchitectureSpec,
    /// (channels, height, width) contract for input batches.
    pub input_shape: (usize, usize, usize),
    params: Vec<Param>,
    bn_states: Vec<BnState>,
    plan: Plan,
}

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

struct Builder {
    params: Vec<Param>,
    bn_states: Vec<BnState>,
    rng: ChaCha20Rng,
    activation: ActivationKind,
}

impl Builder {
    fn randn(&mut self, n: usize, std: f64) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let u1: f64 = self.rng.random::<f64>().max(1e-12);
                let u2: f64 = self.rng.random::<f64>();
                std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect()
    }

    fn add(&mut self, name: String, kind: ParamKind, tensor: Tensor) -> ParamId {
        self.params.push(Param { name, kind, tensor });
        self.params.len() - 1
    }

    fn conv_weight(&mut self, name: &str, out_c: usize, in_c: usize, k: usize) -> ParamId {
        let fan_in = in_c * k * k;
        let values = self.randn(out_c * in_c * k * k, (2.0 / fan_in as f64).sqrt());
        self.add(
            format!("{name}.weight"),
            ParamKind::ConvWeight,
            Tensor::new(vec![out_c, in_c, k, k], values).expect("conv weight shape"),
        )
    }

    fn norm(&mut self, name: &str, channels: usize) -> NormPlan {
        let gamma = self.add(
            format!("{name}.gamma"),
            ParamKind::NormAffine,
            Tensor::new(vec![channels], vec![1.0; channels]).expect("gamma"),
        );
        let beta = self.add(
            format!("{name}.beta"),
            ParamKind::NormAffine,
            Tensor::zeros(vec![channels]),
        );
        self.bn_states.push(BnState {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        });
        NormPlan {
            gamma,
            beta,
            state: self.bn_states.len() - 1,
        }
    }

    fn act(&mut self, name: &str) -> ActPlan {
        let kind = self.activation;
        let init = match kind {
            ActivationKind::PRelu => Some(vec![0.25]),
            ActivationKind::PSilu => Some(vec![1.0]),
            ActivationKind::PsSilu => Some(vec![1.0, 0.1]),
            _ => None,
        };
        let params = init.map(|init| {
            let len = init.len();
            self.add(
                format!("{name}.params"),
                ParamKind::ActParam,
                Tensor::new(vec![len], init).expect("act params"),
            )
        });
        ActPlan { kind, params }
    }

    fn linear(&mut self, name: &str, out: usize, inp: usize) -> (ParamId, ParamId) {
        let values = self.randn(out * inp, (2.0 / inp as f64).sqrt());
        let w = self.add(
            format!("{name}.weight"),
            ParamKind::LinearWeight,
            Tensor::new(vec![out, inp], values).expect("linear weight"),
        );
        let b = self.add(
            format!("{name}.bias"),
            ParamKind::Bias,
            Tensor::zeros(vec![out]),
        );
        (w, b)
    }
}

fn invalid(spec: &ArchitectureSpec) -> Option<SpecError> {
    let violations = archspec::validate(spec);
    if violations.is_empty() {
        None
    } else {
        let joined: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        Some(SpecError::Invalid(joined.join("; ")))
    }
}

/// Per-convolution (kernel, padding) template for a block.
fn block_conv_geometry(kind: BlockKind) -> &'static [(usize, usize)] {
    match kind {
        BlockKind::Basic => &[(3, 1), (3, 1)],
        BlockKind::Bottleneck => &[(1, 0), (3, 1), (1, 0)],
    }
}

fn conv_channels(kind: BlockKind, ci: usize, c_in: usize, w: usize, out: usize) -> (usize, usize) {
    match (kind, ci) {
        (BlockKind::Basic, 0) => (c_in, w),
        (BlockKind::Basic, _) => (w, out),
        (BlockKind::Bottleneck, 0) => (c_in, w),
        (BlockKind::Bottleneck, 1) => (w, w),
        (BlockKind::Bottleneck, _) => (w, out),
    }
}

fn stem_geometry(stem: &crate::archspec::StemSpec) -> (usize, usize, usize) {
    match stem.kind {
        StemKind::ResNet | StemKind::Postponed => (7, 2, 3),
        StemKind::Cifar => (3, 1, 1),
        StemKind::Patchify { patch, stride } => (patch, stride, (patch - stride) / 2),
    }
}

/// Product of the declared stem and stage strides. Only meaningful for
/// stems whose padding preserves exact division (all but overlapping
/// patchify stems with odd patch-stride gaps).
pub fn total_downsampling(spec: &ArchitectureSpec) -> usize {
    let stem = match spec.stem.kind {
        StemKind::ResNet => 4,
        StemKind::Postponed => 2,
        StemKind::Cifar => 1,
        StemKind::Patchify { stride, .. } => stride,
    };
    let deferred = spec.stem.defers_downsampling() as u32;
    stem * 2usize.pow(spec.stages.len() as u32 - 1 + deferred)
}

fn check_input_size(spec: &ArchitectureSpec, input: (usize, usize, usize)) -> Result<(), NetError> {
    let (c, h, w) = input;
    if c == 0 || h == 0 || w == 0 {
        return Err(TensorError::Shape(format!("degenerate input shape {input:?}")).into());
    }
    let exact = match spec.stem.kind {
        StemKind::Patchify { patch, stride } => (patch - stride) % 2 == 0,
        _ => true,
    };
    if exact {
        let divisor = total_downsampling(spec);
        if h % divisor != 0 || w % divisor != 0 {
            return Err(TensorError::Shape(format!(
                "input {h}x{w} is not divisible by the total downsampling factor {divisor}"
            ))
            .into());
        }
    } else if h < spec.stem.kernel() || w < spec.stem.kernel() {
        return Err(TensorError::Shape(format!(
            "input {h}x{w} is smaller than the {0}x{0} stem patch",
            spec.stem.kernel()
        ))
        .into());
    }
    Ok(())
}

/// Builds a runnable network from a valid spec. Initialization is
/// He-style for convolution and linear weights, (1, 0) for norm affine
/// pairs, and deterministic for a fixed seed.
pub fn build_network(
    spec: &ArchitectureSpec,
    input: (usize, usize, usize),
    seed: u64,
) -> Result<Network, NetError> {
    if let Some(err) = invalid(spec) {
        return Err(err.into());
    }
    check_input_size(spec, input)?;

    let mut b = Builder {
        params: Vec::new(),
        bn_states: Vec::new(),
        rng: ChaCha20Rng::seed_from_u64(seed),
        activation: spec.activation,
    };

    let (stem_k, stem_stride, stem_pad) = stem_geometry(&spec.stem);
    let stem = ConvPlan {
        weight: b.conv_weight("stem.conv", spec.stem.out_width, input.0, stem_k),
        stride: stem_stride,
        padding: stem_pad,
        norm: Some(b.norm("stem.bn", spec.stem.out_width)),
        act: Some(b.act("stem.act")),
    };

    let geometry = block_conv_geometry(spec.block.kind);
    let nconv = geometry.len();
    let se_after = 1; // the 3x3 conv in both block kinds
    let mut c_in = spec.stem.out_width;
    let mut stages = Vec::with_capacity(spec.stages.len());
    for (si, stage) in spec.stages.iter().enumerate() {
        let w = stage.width;
        let out = spec.block.out_channels(w);
        let mut blocks = Vec::with_capacity(stage.depth);
        for bi in 0..stage.depth {
            let prefix = format!("s{}.b{}", si + 1, bi);
            let strided = bi == 0 && (si > 0 || spec.stem.defers_downsampling());
            let mut convs = Vec::with_capacity(nconv);
            let mut se = None;
            for (ci, &(k, pad)) in geometry.iter().enumerate() {
                let (in_c, out_c) = conv_channels(spec.block.kind, ci, c_in, w, out);
                let weight = b.conv_weight(&format!("{prefix}.conv{}", ci + 1), out_c, in_c, k);
                let norm = spec.block.norm_mask[ci]
                    .then(|| b.norm(&format!("{prefix}.bn{}", ci + 1), out_c));
                // the final mask flag belongs to the post-add activation
                let act = (ci < nconv - 1 && spec.block.act_mask[ci])
                    .then(|| b.act(&format!("{prefix}.act{}", ci + 1)));
                convs.push(ConvPlan {
                    weight,
                    stride: if ci == 0 && strided { 2 } else { 1 },
                    padding: pad,
                    norm,
                    act,
                });
                if ci == se_after {
                    if let Some(r) = spec.block.se_ratio {
                        let hidden = w.div_ceil(r);
                        let (w1, b1) = b.linear(&format!("{prefix}.se.fc1"), hidden, w);
                        let (w2, b2) = b.linear(&format!("{prefix}.se.fc2"), w, hidden);
                        se = Some(SePlan { w1, b1, w2, b2 });
                    }
                }
            }
            let shortcut = (bi == 0 && (strided || c_in != out)).then(|| ConvPlan {
                weight: b.conv_weight(&format!("{prefix}.shortcut.conv"), out, c_in, 1),
                stride: if strided { 2 } else { 1 },
                padding: 0,
                norm: Some(b.norm(&format!("{prefix}.shortcut.bn"), out)),
                act: None,
            });
            let post_act =
                spec.block.act_mask[nconv - 1].then(|| b.act(&format!("{prefix}.postact")));
            blocks.push(BlockPlan {
                convs,
                se_after,
                se,
                shortcut,
                post_act,
            });
            c_in = out;
        }
        stages.push(blocks);
    }

    let (head_weight, head_bias) = b.linear("head.fc", spec.num_classes, c_in);

    Ok(Network {
        spec: spec.clone(),
        input_shape: input,
        params: b.params,
        bn_states: b.bn_states,
        plan: Plan {
            stem,
            stem_maxpool: spec.stem.kind == StemKind::ResNet,
            stages,
            head_weight,
            head_bias,
        },
    })
}

enum BnCtx<'a> {
    Train(&'a mut [BnState]),
    Eval(&'a [BnState]),
}

impl Plan {
    fn wire_conv(
        &self,
        g: &mut Graph,
        x: NodeId,
        conv: &ConvPlan,
        pn: &[NodeId],
        bn: &mut BnCtx,
    ) -> Result<NodeId, TensorError> {
        let mut out = g.conv2d(x, pn[conv.weight], conv.stride, conv.padding)?;
        if let Some(norm) = &conv.norm {
            let mode = match bn {
                BnCtx::Train(states) => {
                    let state = &mut states[norm.state];
                    BnMode::Train {
                        running_mean: &mut state.mean,
                        running_var: &mut state.var,
                        momentum: BN_MOMENTUM,
                    }
                }
                BnCtx::Eval(states) => BnMode::Eval {
                    running_mean: &states[norm.state].mean,
                    running_var: &states[norm.state].var,
                },
            };
            out = g.batchnorm(out, pn[norm.gamma], pn[norm.beta], BN_EPS, mode)?;
        }
        if let Some(act) = &conv.act {
            out = g.activation(out, act.kind, act.params.map(|p| pn[p]))?;
        }
        Ok(out)
    }

    fn wire(
        &self,
        g: &mut Graph,
        input: NodeId,
        pn: &[NodeId],
        mut bn: BnCtx,
    ) -> Result<NodeId, TensorError> {
        let mut x = self.wire_conv(g, input, &self.stem, pn, &mut bn)?;
        if self.stem_maxpool {
            x = g.maxpool2d(x, 3, 2, 1)?;
        }
        for stage in &self.stages {
            for block in stage {
                let entry = x;
                let mut branch = entry;
                for (ci, conv) in block.convs.iter().enumerate() {
                    branch = self.wire_conv(g, branch, conv, pn, &mut bn)?;
                    if ci == block.se_after {
                        if let Some(se) = &block.se {
                            branch =
                                g.se_gate(branch, pn[se.w1], pn[se.b1], pn[se.w2], pn[se.b2])?;
                        }
                    }
                }
                let shortcut = match &block.shortcut {
                    Some(conv) => self.wire_conv(g, entry, conv, pn, &mut bn)?,
                    None => entry,
                };
                x = g.add(branch, shortcut)?;
                if let Some(act) = &block.post_act {
                    x = g.activation(x, act.kind, act.params.map(|p| pn[p]))?;
                }
            }
        }
        let pooled = g.global_avg_pool(x)?;
        g.linear(pooled, pn[self.head_weight], Some(pn[self.head_bias]))
    }
}

/// A forward pass: the graph, the logits node, and the graph nodes
/// holding each parameter (indexed by [`ParamId`]).
pub struct ForwardPass {
    pub graph: Graph,
    pub input: NodeId,
    pub logits: NodeId,
    pub param_nodes: Vec<NodeId>,
}

impl Network {
    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn class_count(&self) -> usize {
        self.spec.num_classes
    }

    fn check_batch(&self, batch: &Tensor) -> Result<(), TensorError> {
        let (c, h, w) = self.input_shape;
        if batch.shape.len() != 4 || batch.shape[1..] != [c, h, w] {
            return Err(TensorError::Shape(format!(
                "batch shape {:?} does not match the network contract [N, {c}, {h}, {w}]",
                batch.shape
            )));
        }
        Ok(())
    }

    /// Inserts every parameter into `g` as a leaf, in [`ParamId`] order.
    pub fn insert_params(&self, g: &mut Graph, requires_grad: bool) -> Vec<NodeId> {
        self.params
            .iter()
            .map(|p| g.leaf(p.tensor.clone(), requires_grad))
            .collect()
    }

    /// Wires a forward pass from an existing input node through existing
    /// parameter nodes (eval-mode normalization, statistics untouched).
    pub fn wire_eval(
        &self,
        g: &mut Graph,
        input: NodeId,
        param_nodes: &[NodeId],
    ) -> Result<NodeId, TensorError> {
        self.plan
            .wire(g, input, param_nodes, BnCtx::Eval(&self.bn_states))
    }

    /// Train-mode wiring: normalizes by batch statistics and folds them
    /// into the running estimates.
    pub fn wire_train(
        &mut self,
        g: &mut Graph,
        input: NodeId,
        param_nodes: &[NodeId],
    ) -> Result<NodeId, TensorError> {
        let Network {
            plan, bn_states, ..
        } = self;
        plan.wire(g, input, param_nodes, BnCtx::Train(bn_states))
    }

    /// Records a train-mode forward pass with parameter gradients tracked.
    pub fn train_forward(&mut self, batch: &Tensor) -> Result<ForwardPass, TensorError> {
        self.check_batch(batch)?;
        let mut graph = Graph::new(true);
        let input = graph.constant(batch.clone());
        let param_nodes = self.insert_params(&mut graph, true);
        let logits = self.wire_train(&mut graph, input, &param_nodes)?;
        Ok(ForwardPass {
            graph,
            input,
            logits,
            param_nodes,
        })
    }

    /// Records an eval-mode forward pass; set `input_requires_grad` to
    /// differentiate with respect to the image batch (attack gradients).
    pub fn eval_forward(
        &self,
        batch: &Tensor,
        input_requires_grad: bool,
    ) -> Result<ForwardPass, TensorError> {
        self.check_batch(batch)?;
        let mut graph = Graph::new(input_requires_grad);
        let input = graph.leaf(batch.clone(), input_requires_grad);
        let param_nodes = self.insert_params(&mut graph, false);
        let logits = self.wire_eval(&mut graph, input, &param_nodes)?;
        Ok(ForwardPass {
            graph,
            input,
            logits,
            param_nodes,
        })
    }

    /// Eval-mode logits as a plain tensor.
    pub fn logits(&self, batch: &Tensor) -> Result<Tensor, TensorError> {
        let pass = self.eval_forward(batch, false)?;
        Tensor::new(
            pass.graph.shape(pass.logits).to_vec(),
            pass.graph.values(pass.logits).to_vec(),
        )
    }

    /// Eval-mode argmax predictions.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>, TensorError> {
        let logits = self.logits(batch)?;
        let k = self.spec.num_classes;
        Ok(logits
            .values
            .chunks(k)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                    .map(|(i, _)| i)
                    .unwrap_or(0)
            })
            .collect())
    }

    /// One row per parameter tensor plus the grand total; the total must
    /// equal `archspec::count_params` for the same spec.
    pub fn describe(&self) -> LayerTable {
        LayerTable {
            rows: self
                .params
                .iter()
                .map(|p| DescribeRow {
                    name: p.name.clone(),
                    shape: p.tensor.shape.clone(),
                    count: p.tensor.numel() as u64,
                })
                .collect(),
        }
    }

    /// Structural layer names in wiring order, for mask-fidelity scans.
    pub fn layer_scan(&self) -> Vec<String> {
        let mut out = vec!["stem.conv".to_string()];
        if self.plan.stem.norm.is_some() {
            out.push("stem.bn".into());
        }
        if self.plan.stem.act.is_some() {
            out.push("stem.act".into());
        }
        if self.plan.stem_maxpool {
            out.push("stem.maxpool".into());
        }
        for (si, stage) in self.plan.stages.iter().enumerate() {
            for (bi, block) in stage.iter().enumerate() {
                let prefix = format!("s{}.b{}", si + 1, bi);
                for (ci, conv) in block.convs.iter().enumerate() {
                    out.push(format!("{prefix}.conv{}", ci + 1));
                    if conv.norm.is_some() {
                        out.push(format!("{prefix}.bn{}", ci + 1));
                    }
                    if conv.act.is_some() {
                        out.push(format!("{prefix}.act{}", ci + 1));
                    }
                    if ci == block.se_after && block.se.is_some() {
                        out.push(format!("{prefix}.se"));
                    }
                }
                if block.shortcut.is_some() {
                    out.push(format!("{prefix}.shortcut"));
                }
                out.push(format!("{prefix}.add"));
                if block.post_act.is_some() {
                    out.push(format!("{prefix}.postact"));
                }
            }
        }
        out.push("head.pool".into());
        out.push("head.fc".into());
        out
    }

    /// Spatial size after the stem and after each stage, computed from
    /// the wiring plan without running any data.
    pub fn spatial_trace(
        &self,
        h: usize,
        w: usize,
    ) -> Result<Vec<(String, usize, usize)>, NetError> {
        let conv_dim = crate::tensor::conv_out_dim;
        let mut out = Vec::new();
        let stem = &self.plan.stem;
        let k = self.spec.stem.kernel();
        let mut ch = conv_dim(h, k, stem.stride, stem.padding)?;
        let mut cw = conv_dim(w, k, stem.stride, stem.padding)?;
        if self.plan.stem_maxpool {
            ch = conv_dim(ch, 3, 2, 1)?;
            cw = conv_dim(cw, 3, 2, 1)?;
        }
        out.push(("stem".to_string(), ch, cw));
        for (si, stage) in self.plan.stages.iter().enumerate() {
            for block in stage {
                for conv in &block.convs {
                    let kk = self.params[conv.weight].tensor.shape[2];
                    ch = conv_dim(ch, kk, conv.stride, conv.padding)?;
                    cw = conv_dim(cw, kk, conv.stride, conv.padding)?;
                }
            }
            out.push((format!("stage{}", si + 1), ch, cw));
        }
        Ok(out)
    }

    /// FNV-1a hash over every parameter payload, in store order.
    pub fn param_hash(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for p in &self.params {
            for v in &p.tensor.values {
                for byte in v.to_le_bytes() {
                    hash ^= byte as u64;
                    hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        hash
    }

    fn snapshot_tensors(&self) -> Vec<NamedTensor> {
        let mut out: Vec<NamedTensor> = self
            .params
            .iter()
            .map(|p| NamedTensor {
                name: p.name.clone(),
                tensor: p.tensor.clone(),
            })
            .collect();
        // Running statistics ride along so eval mode reloads bit-exact.
        for (i, state) in self.bn_states.iter().enumerate() {
            out.push(NamedTensor {
                name: format!("bn_state.{i}.running_mean"),
                tensor: Tensor::new(vec![state.mean.len()], state.mean.clone()).expect("bn state"),
            });
            out.push(NamedTensor {
                name: format!("bn_state.{i}.running_var"),
                tensor: Tensor::new(vec![state.var.len()], state.var.clone()).expect("bn state"),
            });
        }
        out
    }

    pub fn save_weights<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        write_snapshot(w, &self.snapshot_tensors())
    }

    pub fn load_weights<R: Read>(&mut self, r: &mut R) -> Result<(), TensorError> {
        let tensors = read_snapshot(r)?;
        let expected = self.snapshot_tensors();
        if tensors.len() != expected.len() {
            return Err(TensorError::Snapshot(format!(
                "snapshot holds {} tensors, network needs {}",
                tensors.len(),
                expected.len()
            )));
        }
        for (got, want) in tensors.iter().zip(&expected) {
            if got.name != want.name || got.tensor.shape != want.tensor.shape {
                return Err(TensorError::Snapshot(format!(
                    "tensor mismatch: snapshot has `{}` {:?}, network needs `{}` {:?}",
                    got.name, got.tensor.shape, want.name, want.tensor.shape
                )));
            }
        }
        let n_params = self.params.len();
        for (i, t) in tensors.into_iter().enumerate() {
            if i < n_params {
                self.params[i].tensor = t.tensor;
            } else {
                let j = (i - n_params) / 2;
                if (i - n_params) % 2 == 0 {
                    self.bn_states[j].mean = t.tensor.values;
                } else {
                    self.bn_states[j].var = t.tensor.values;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DescribeRow {
    pub name: String,
    pub shape: Vec<usize>,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerTable {
    pub rows: Vec<DescribeRow>,
}

impl LayerTable {
    pub fn total(&self) -> u64 {
        self.rows.iter().map(|r| r.count).sum()
    }

    pub fn to_text(&self) -> String {
        let name_width = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .max()
            .unwrap_or(0)
            .max("name".len());
        let mut out = format!("{:<name_width$}  {:>12}  shape\n", "name", "params");
        for r in &self.rows {
            let shape = r
                .shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("x");
            out.push_str(&format!(
                "{:<name_width$}  {:>12}  {}\n",
                r.name, r.count, shape
            ));
        }
        out.push_str(&format!("{:<name_width$}  {:>12}\n", "total", self.total()));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,shape,params\n");
        for r in &self.rows {
            let shape = r
                .shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(" ");
            out.push_str(&format!("{},{},{}\n", r.name, shape, r.count));
        }
        out.push_str(&format!("total,,{}\n", self.total()));
        out
    }
}
