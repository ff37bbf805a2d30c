//! Graph operations beyond convolution, and the backward dispatch.

use super::{act, shape_err, sigmoid, softmax_rows, Graph, NodeId, Op, Reduction, TensorError};
use crate::archspec::ActivationKind;

/// Where batch normalization takes its statistics from.
pub enum BnMode<'a> {
    /// Normalize by batch statistics and fold them into the running
    /// estimates with the given momentum.
    Train {
        running_mean: &'a mut [f64],
        running_var: &'a mut [f64],
        momentum: f64,
    },
    /// Normalize by the frozen running estimates.
    Eval {
        running_mean: &'a [f64],
        running_var: &'a [f64],
    },
}

impl Graph {
    /// Per-channel batch normalization with affine weights over NCHW input.
    pub fn batchnorm(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
        mode: BnMode,
    ) -> Result<NodeId, TensorError> {
        let shape = self.shape(input).to_vec();
        if shape.len() != 4 {
            return Err(shape_err(format!("batchnorm expects NCHW, got {shape:?}")));
        }
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let m = n * h * w;
        if m == 0 {
            return Err(shape_err("batchnorm over an empty batch"));
        }
        if self.values(gamma).len() != c || self.values(beta).len() != c {
            return Err(shape_err(format!(
                "batchnorm affine length must be {c}, got gamma {} / beta {}",
                self.values(gamma).len(),
                self.values(beta).len()
            )));
        }
        if eps <= 0.0 {
            return Err(shape_err("batchnorm eps must be positive"));
        }

        let x = self.values(input);
        let (mean, var, train) = match &mode {
            BnMode::Train { .. } => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ci in 0..c {
                    let mut sum = 0.0;
                    let mut sq = 0.0;
                    for ni in 0..n {
                        let plane = &x[(ni * c + ci) * h * w..][..h * w];
                        for &v in plane {
                            sum += v;
                            sq += v * v;
                        }
                    }
                    let mu = sum / m as f64;
                    mean[ci] = mu;
                    var[ci] = (sq / m as f64 - mu * mu).max(0.0);
                }
                (mean, var, true)
            }
            BnMode::Eval {
                running_mean,
                running_var,
            } => (running_mean.to_vec(), running_var.to_vec(), false),
        };

        if let BnMode::Train {
            running_mean,
            running_var,
            momentum,
        } = mode
        {
            for ci in 0..c {
                running_mean[ci] = (1.0 - momentum) * running_mean[ci] + momentum * mean[ci];
                running_var[ci] = (1.0 - momentum) * running_var[ci] + momentum * var[ci];
            }
        }

        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.values(gamma);
        let b = self.values(beta);
        let x = self.values(input);
        let mut out = vec![0.0; x.len()];
        for ni in 0..n {
            for ci in 0..c {
                let scale = g[ci] * inv_std[ci];
                let shift = b[ci] - mean[ci] * scale;
                let base = (ni * c + ci) * h * w;
                for (y, &v) in out[base..base + h * w].iter_mut().zip(&x[base..base + h * w]) {
                    *y = v * scale + shift;
                }
            }
        }

        let needs = self.needs(input) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            shape,
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                inv_std,
                train,
            },
            needs,
        ))
    }

    /// Elementwise activation; parametric kinds read their scalars from
    /// the `params` node ([beta] for PSiLU, [beta, a] for PSSiLU).
    pub fn activation(
        &mut self,
        input: NodeId,
        kind: ActivationKind,
        params: Option<NodeId>,
    ) -> Result<NodeId, TensorError> {
        let expected = kind.param_count();
        let got = params.map(|p| self.values(p).len()).unwrap_or(0);
        if got != expected {
            return Err(TensorError::Param(format!(
                "{} takes {expected} parameter(s), got {got}",
                kind.name()
            )));
        }
        let p: Vec<f64> = params.map(|p| self.values(p).to_vec()).unwrap_or_default();
        let out: Vec<f64> = self
            .values(input)
            .iter()
            .map(|&x| act::forward(kind, x, &p))
            .collect();
        let needs = self.needs(input) || params.map(|p| self.needs(p)).unwrap_or(false);
        Ok(self.push(
            self.shape(input).to_vec(),
            out,
            Op::Activation {
                input,
                kind,
                params,
            },
            needs,
        ))
    }

    pub fn sigmoid_op(&mut self, input: NodeId) -> NodeId {
        let out: Vec<f64> = self.values(input).iter().map(|&x| sigmoid(x)).collect();
        let needs = self.needs(input);
        self.push(self.shape(input).to_vec(), out, Op::Sigmoid { input }, needs)
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<Vec<usize>, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!(
                "{what} needs equal shapes, got {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(self.shape(a).to_vec())
    }

    /// Reinterprets the value buffer under a new shape of equal size.
    pub fn reshape(&mut self, input: NodeId, shape: Vec<usize>) -> Result<NodeId, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != self.values(input).len() {
            return Err(shape_err(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape(input)
            )));
        }
        let values = self.values(input).to_vec();
        let needs = self.needs(input);
        Ok(self.push(shape, values, Op::Reshape { input }, needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let shape = self.same_shape(a, b, "add")?;
        let out: Vec<f64> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(shape, out, Op::Add { a, b }, needs))
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let shape = self.same_shape(a, b, "mul")?;
        let out: Vec<f64> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(shape, out, Op::MulElem { a, b }, needs))
    }

    /// `ca * a + cb * b`, elementwise over equal shapes.
    pub fn affine_combine(
        &mut self,
        a: NodeId,
        b: NodeId,
        ca: f64,
        cb: f64,
    ) -> Result<NodeId, TensorError> {
        let shape = self.same_shape(a, b, "affine combine")?;
        let out: Vec<f64> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(&x, &y)| ca * x + cb * y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(shape, out, Op::AffineCombine { a, b, ca, cb }, needs))
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let total: f64 = self.values(input).iter().sum();
        let needs = self.needs(input);
        self.push(vec![1], vec![total], Op::Sum { input }, needs)
    }

    /// NCHW -> [N, C] spatial mean.
    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId, TensorError> {
        let shape = self.shape(input).to_vec();
        if shape.len() != 4 || shape[2] * shape[3] == 0 {
            return Err(shape_err(format!(
                "global average pool expects nonempty NCHW, got {shape:?}"
            )));
        }
        let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
        let x = self.values(input);
        let mut out = vec![0.0; n * c];
        for (i, o) in out.iter_mut().enumerate() {
            *o = x[i * hw..(i + 1) * hw].iter().sum::<f64>() / hw as f64;
        }
        let needs = self.needs(input);
        Ok(self.push(vec![n, c], out, Op::GlobalAvgPool { input }, needs))
    }

    /// Multiplies every spatial position of channel (n, c) by gate[n, c].
    pub fn channel_scale(&mut self, input: NodeId, gate: NodeId) -> Result<NodeId, TensorError> {
        let shape = self.shape(input).to_vec();
        if shape.len() != 4 {
            return Err(shape_err(format!(
                "channel scale expects NCHW input, got {shape:?}"
            )));
        }
        if self.shape(gate) != [shape[0], shape[1]] {
            return Err(shape_err(format!(
                "gate shape {:?} does not match input {:?}",
                self.shape(gate),
                shape
            )));
        }
        let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
        let x = self.values(input);
        let g = self.values(gate);
        let mut out = vec![0.0; x.len()];
        for nc in 0..n * c {
            let scale = g[nc];
            for (o, &v) in out[nc * hw..(nc + 1) * hw].iter_mut().zip(&x[nc * hw..(nc + 1) * hw]) {
                *o = v * scale;
            }
        }
        let needs = self.needs(input) || self.needs(gate);
        Ok(self.push(shape, out, Op::ChannelScale { input, gate }, needs))
    }

    /// Fully connected layer: input [N, I] x weight [O, I] (+ bias [O]).
    pub fn linear(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
    ) -> Result<NodeId, TensorError> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(shape_err(format!(
                "linear expects [N, I] x [O, I], got {xs:?} x {ws:?}"
            )));
        }
        let (n, i, o) = (xs[0], xs[1], ws[0]);
        if let Some(b) = bias {
            if self.values(b).len() != o {
                return Err(shape_err(format!(
                    "bias length {} does not match {o} outputs",
                    self.values(b).len()
                )));
            }
        }
        let x = self.values(input);
        let w = self.values(weight);
        let mut out = vec![0.0; n * o];
        for ni in 0..n {
            let x_row = &x[ni * i..(ni + 1) * i];
            for oi in 0..o {
                let w_row = &w[oi * i..(oi + 1) * i];
                out[ni * o + oi] = x_row.iter().zip(w_row).map(|(&a, &b)| a * b).sum();
            }
        }
        if let Some(b) = bias {
            let bv = self.values(b).to_vec();
            for ni in 0..n {
                for oi in 0..o {
                    out[ni * o + oi] += bv[oi];
                }
            }
        }
        let needs = self.needs(input)
            || self.needs(weight)
            || bias.map(|b| self.needs(b)).unwrap_or(false);
        Ok(self.push(
            vec![n, o],
            out,
            Op::Linear {
                input,
                weight,
                bias,
            },
            needs,
        ))
    }

    /// Mean or summed softmax cross entropy of [N, K] logits against
    /// integer labels.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        labels: &[usize],
        reduction: Reduction,
    ) -> Result<NodeId, TensorError> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(shape_err(format!(
                "cross entropy expects [N, K] logits with N = {} labels, got {shape:?}",
                labels.len()
            )));
        }
        let (n, k) = (shape[0], shape[1]);
        if n == 0 {
            return Err(shape_err("cross entropy over an empty batch"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(shape_err(format!("label {bad} out of range for {k} classes")));
        }
        let mut probs = vec![0.0; n * k];
        softmax_rows(self.values(logits), n, k, &mut probs);
        let per_sample: Vec<f64> = (0..n)
            .map(|ni| -probs[ni * k + labels[ni]].ln())
            .collect();
        let total: f64 = per_sample.iter().sum();
        let value = match reduction {
            Reduction::Mean => total / n as f64,
            Reduction::Sum => total,
        };
        let needs = self.needs(logits);
        Ok(self.push(
            vec![1],
            vec![value],
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
                per_sample,
                reduction,
            },
            needs,
        ))
    }

    /// KL(softmax(adv) || softmax(clean)), differentiable in both logit
    /// sets; pass the clean side as a constant to freeze it.
    pub fn kl_divergence(
        &mut self,
        adv: NodeId,
        clean: NodeId,
        reduction: Reduction,
    ) -> Result<NodeId, TensorError> {
        let shape = self.shape(adv).to_vec();
        if shape.len() != 2 || self.shape(clean) != shape.as_slice() {
            return Err(shape_err(format!(
                "kl divergence expects matching [N, K] logits, got {:?} and {:?}",
                shape,
                self.shape(clean)
            )));
        }
        let (n, k) = (shape[0], shape[1]);
        if n == 0 {
            return Err(shape_err("kl divergence over an empty batch"));
        }
        let mut adv_probs = vec![0.0; n * k];
        let mut clean_probs = vec![0.0; n * k];
        softmax_rows(self.values(adv), n, k, &mut adv_probs);
        softmax_rows(self.values(clean), n, k, &mut clean_probs);
        let per_sample: Vec<f64> = (0..n)
            .map(|ni| {
                let q = &adv_probs[ni * k..(ni + 1) * k];
                let p = &clean_probs[ni * k..(ni + 1) * k];
                q.iter()
                    .zip(p)
                    .map(|(&qv, &pv)| qv * (qv.ln() - pv.ln()))
                    .sum()
            })
            .collect();
        let total: f64 = per_sample.iter().sum();
        let value = match reduction {
            Reduction::Mean => total / n as f64,
            Reduction::Sum => total,
        };
        let needs = self.needs(adv) || self.needs(clean);
        Ok(self.push(
            vec![1],
            vec![value],
            Op::KlDivergence {
                adv,
                clean,
                adv_probs,
                clean_probs,
                per_sample,
                reduction,
            },
            needs,
        ))
    }

    /// Squeeze-and-excitation gate: global average pool, bottleneck FC
    /// pair (ReLU inside, sigmoid out), per-channel rescale of `input`.
    /// `w1` is [H, C], `w2` is [C, H] with H = ceil(C / r).
    pub fn se_gate(
        &mut self,
        input: NodeId,
        w1: NodeId,
        b1: NodeId,
        w2: NodeId,
        b2: NodeId,
    ) -> Result<NodeId, TensorError> {
        let pooled = self.global_avg_pool(input)?;
        let squeezed = self.linear(pooled, w1, Some(b1))?;
        let hidden = self.activation(squeezed, ActivationKind::Relu, None)?;
        let excited = self.linear(hidden, w2, Some(b2))?;
        let gate = self.sigmoid_op(excited);
        self.channel_scale(input, gate)
    }

    /// Forward-only softmax probabilities of an [N, K] logits node.
    pub fn softmax_values(&self, logits: NodeId) -> Vec<f64> {
        let shape = self.shape(logits);
        let (n, k) = (shape[0], shape[1]);
        let mut out = vec![0.0; n * k];
        softmax_rows(self.values(logits), n, k, &mut out);
        out
    }

    pub(crate) fn backprop_node(&mut self, i: usize) {
        let deltas: Vec<(NodeId, Vec<f64>)> = {
            let node = &self.nodes[i];
            let g = node.grad.as_ref().expect("grad present");
            match &node.op {
                Op::Leaf => Vec::new(),
                Op::Conv2d {
                    input,
                    kernel,
                    stride,
                    padding,
                } => {
                    let x_dims = [
                        self.shape(*input)[0],
                        self.shape(*input)[1],
                        self.shape(*input)[2],
                        self.shape(*input)[3],
                    ];
                    let k_dims = [
                        self.shape(*kernel)[0],
                        self.shape(*kernel)[1],
                        self.shape(*kernel)[2],
                        self.shape(*kernel)[3],
                    ];
                    let (ho, wo) = (node.shape[2], node.shape[3]);
                    let mut out = Vec::new();
                    if self.needs(*input) {
                        out.push((
                            *input,
                            super::conv::conv2d_grad_input(
                                g,
                                x_dims,
                                self.values(*kernel),
                                k_dims,
                                *stride,
                                *padding,
                                ho,
                                wo,
                            ),
                        ));
                    }
                    if self.needs(*kernel) {
                        out.push((
                            *kernel,
                            super::conv::conv2d_grad_kernel(
                                g,
                                self.values(*input),
                                x_dims,
                                k_dims,
                                *stride,
                                *padding,
                                ho,
                                wo,
                            ),
                        ));
                    }
                    out
                }
                Op::MaxPool2d { input, argmax, .. } => {
                    let mut dx = vec![0.0; self.values(*input).len()];
                    for (flat, &src) in argmax.iter().enumerate() {
                        if src != usize::MAX {
                            dx[src] += g[flat];
                        }
                    }
                    vec![(*input, dx)]
                }
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    mean,
                    inv_std,
                    train,
                } => {
                    let shape = &node.shape;
                    let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
                    let m = (n * hw) as f64;
                    let x = self.values(*input);
                    let gv = self.values(*gamma);
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    let mut sums = vec![(0.0, 0.0); c]; // (sum_dy, sum_dy_xhat)
                    for ni in 0..n {
                        for ci in 0..c {
                            let base = (ni * c + ci) * hw;
                            let (mut s, mut sx) = sums[ci];
                            for idx in base..base + hw {
                                let xhat = (x[idx] - mean[ci]) * inv_std[ci];
                                s += g[idx];
                                sx += g[idx] * xhat;
                            }
                            sums[ci] = (s, sx);
                        }
                    }
                    for ci in 0..c {
                        dbeta[ci] = sums[ci].0;
                        dgamma[ci] = sums[ci].1;
                    }
                    let mut out = Vec::new();
                    if self.needs(*input) {
                        let mut dx = vec![0.0; x.len()];
                        for ni in 0..n {
                            for ci in 0..c {
                                let base = (ni * c + ci) * hw;
                                let scale = gv[ci] * inv_std[ci];
                                if *train {
                                    let (s, sx) = sums[ci];
                                    for idx in base..base + hw {
                                        let xhat = (x[idx] - mean[ci]) * inv_std[ci];
                                        dx[idx] = scale * (g[idx] - s / m - xhat * sx / m);
                                    }
                                } else {
                                    for idx in base..base + hw {
                                        dx[idx] = scale * g[idx];
                                    }
                                }
                            }
                        }
                        out.push((*input, dx));
                    }
                    if self.needs(*gamma) {
                        out.push((*gamma, dgamma));
                    }
                    if self.needs(*beta) {
                        out.push((*beta, dbeta));
                    }
                    out
                }
                Op::Activation {
                    input,
                    kind,
                    params,
                } => {
                    let p: Vec<f64> = params.map(|p| self.values(p).to_vec()).unwrap_or_default();
                    let x = self.values(*input);
                    let mut out = Vec::new();
                    if self.needs(*input) {
                        let dx: Vec<f64> = x
                            .iter()
                            .zip(g)
                            .map(|(&xv, &gv)| gv * act::dx(*kind, xv, &p))
                            .collect();
                        out.push((*input, dx));
                    }
                    if let Some(pid) = params {
                        if self.needs(*pid) {
                            let mut dp = vec![0.0; p.len()];
                            let mut buf = vec![0.0; p.len()];
                            for (&xv, &gv) in x.iter().zip(g) {
                                act::dparams(*kind, xv, &p, &mut buf);
                                for (acc, &d) in dp.iter_mut().zip(&buf) {
                                    *acc += gv * d;
                                }
                            }
                            out.push((*pid, dp));
                        }
                    }
                    out
                }
                Op::Sigmoid { input } => {
                    let dx: Vec<f64> = node
                        .values
                        .iter()
                        .zip(g)
                        .map(|(&s, &gv)| gv * s * (1.0 - s))
                        .collect();
                    vec![(*input, dx)]
                }
                Op::Reshape { input } => {
                    vec![(*input, g.clone())]
                }
                Op::Add { a, b } => {
                    vec![(*a, g.clone()), (*b, g.clone())]
                }
                Op::MulElem { a, b } => {
                    let av = self.values(*a);
                    let bv = self.values(*b);
                    let da: Vec<f64> = g.iter().zip(bv).map(|(&gv, &x)| gv * x).collect();
                    let db: Vec<f64> = g.iter().zip(av).map(|(&gv, &x)| gv * x).collect();
                    vec![(*a, da), (*b, db)]
                }
                Op::AffineCombine { a, b, ca, cb } => {
                    let da: Vec<f64> = g.iter().map(|&gv| gv * ca).collect();
                    let db: Vec<f64> = g.iter().map(|&gv| gv * cb).collect();
                    vec![(*a, da), (*b, db)]
                }
                Op::Sum { input } => {
                    let dx = vec![g[0]; self.values(*input).len()];
                    vec![(*input, dx)]
                }
                Op::GlobalAvgPool { input } => {
                    let shape = self.shape(*input);
                    let hw = shape[2] * shape[3];
                    let mut dx = vec![0.0; self.values(*input).len()];
                    for (nc, &gv) in g.iter().enumerate() {
                        let d = gv / hw as f64;
                        for slot in &mut dx[nc * hw..(nc + 1) * hw] {
                            *slot = d;
                        }
                    }
                    vec![(*input, dx)]
                }
                Op::ChannelScale { input, gate } => {
                    let shape = &node.shape;
                    let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
                    let x = self.values(*input);
                    let gate_v = self.values(*gate);
                    let mut out = Vec::new();
                    if self.needs(*input) {
                        let mut dx = vec![0.0; x.len()];
                        for nc in 0..n * c {
                            let s = gate_v[nc];
                            for (slot, &gv) in
                                dx[nc * hw..(nc + 1) * hw].iter_mut().zip(&g[nc * hw..(nc + 1) * hw])
                            {
                                *slot = gv * s;
                            }
                        }
                        out.push((*input, dx));
                    }
                    if self.needs(*gate) {
                        let mut dg = vec![0.0; gate_v.len()];
                        for nc in 0..n * c {
                            dg[nc] = g[nc * hw..(nc + 1) * hw]
                                .iter()
                                .zip(&x[nc * hw..(nc + 1) * hw])
                                .map(|(&gv, &xv)| gv * xv)
                                .sum();
                        }
                        out.push((*gate, dg));
                    }
                    out
                }
                Op::Linear {
                    input,
                    weight,
                    bias,
                } => {
                    let (n, i) = (self.shape(*input)[0], self.shape(*input)[1]);
                    let o = self.shape(*weight)[0];
                    let x = self.values(*input);
                    let w = self.values(*weight);
                    let mut out = Vec::new();
                    if self.needs(*input) {
                        let mut dx = vec![0.0; n * i];
                        for ni in 0..n {
                            for oi in 0..o {
                                let gv = g[ni * o + oi];
                                let w_row = &w[oi * i..(oi + 1) * i];
                                for (slot, &wv) in dx[ni * i..(ni + 1) * i].iter_mut().zip(w_row) {
                                    *slot += gv * wv;
                                }
                            }
                        }
                        out.push((*input, dx));
                    }
                    if self.needs(*weight) {
                        let mut dw = vec![0.0; o * i];
                        for ni in 0..n {
                            let x_row = &x[ni * i..(ni + 1) * i];
                            for oi in 0..o {
                                let gv = g[ni * o + oi];
                                for (slot, &xv) in dw[oi * i..(oi + 1) * i].iter_mut().zip(x_row) {
                                    *slot += gv * xv;
                                }
                            }
                        }
                        out.push((*weight, dw));
                    }
                    if let Some(bid) = bias {
                        if self.needs(*bid) {
                            let mut db = vec![0.0; o];
                            for ni in 0..n {
                                for oi in 0..o {
                                    db[oi] += g[ni * o + oi];
                                }
                            }
                            out.push((*bid, db));
                        }
                    }
                    out
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    probs,
                    reduction,
                    ..
                } => {
                    let (n, k) = (labels.len(), self.shape(*logits)[1]);
                    let scale = g[0]
                        * match reduction {
                            Reduction::Mean => 1.0 / n as f64,
                            Reduction::Sum => 1.0,
                        };
                    let mut dl = vec![0.0; n * k];
                    for ni in 0..n {
                        for ki in 0..k {
                            let one_hot = if ki == labels[ni] { 1.0 } else { 0.0 };
                            dl[ni * k + ki] = scale * (probs[ni * k + ki] - one_hot);
                        }
                    }
                    vec![(*logits, dl)]
                }
                Op::KlDivergence {
                    adv,
                    clean,
                    adv_probs,
                    clean_probs,
                    per_sample,
                    reduction,
                } => {
                    let (n, k) = (per_sample.len(), self.shape(*adv)[1]);
                    let scale = g[0]
                        * match reduction {
                            Reduction::Mean => 1.0 / n as f64,
                            Reduction::Sum => 1.0,
                        };
                    let mut out = Vec::new();
                    if self.needs(*adv) {
                        let mut da = vec![0.0; n * k];
                        for ni in 0..n {
                            for ki in 0..k {
                                let q = adv_probs[ni * k + ki];
                                let p = clean_probs[ni * k + ki];
                                da[ni * k + ki] =
                                    scale * q * ((q.ln() - p.ln()) - per_sample[ni]);
                            }
                        }
                        out.push((*adv, da));
                    }
                    if self.needs(*clean) {
                        let mut dc = vec![0.0; n * k];
                        for ni in 0..n {
                            for ki in 0..k {
                                dc[ni * k + ki] = scale
                                    * (clean_probs[ni * k + ki] - adv_probs[ni * k + ki]);
                            }
                        }
                        out.push((*clean, dc));
                    }
                    out
                }
            }
        };
        for (id, delta) in deltas {
            self.add_grad(id, &delta);
        }
    }
}
