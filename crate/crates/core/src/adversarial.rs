//! l-infinity attacks (FGSM, PGD) and adversarial training loops.
//!
//! Attack gradients are taken against eval-mode normalization so every
//! perturbation depends only on its own sample; training forwards use
//! train-mode statistics. All stochastic choices run on seeded ChaCha
//! streams, so identical configurations reproduce identical runs.

use crate::archspec::SpecError;
use crate::dataset::Dataset;
use crate::netbuild::{NetError, Network, ParamKind};
use crate::tensor::{Graph, NodeId, Reduction, Tensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdvError {
    #[error("invalid attack config: {0}")]
    BadConfig(String),
    #[error("schedule position {t} outside [0, {total}]")]
    Range { t: f64, total: f64 },
    #[error("non-finite loss at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// l-infinity attack budget and schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    /// Perturbation budget on the [0, 1] pixel scale.
    pub eps: f64,
    /// Signed-gradient step size.
    pub alpha: f64,
    pub steps: usize,
    pub random_start: bool,
    /// Return the iterate with the highest loss instead of the last one.
    pub best_iterate: bool,
}

impl AttackConfig {
    /// PGD with the alpha = 2.5 eps / steps convention, random start and
    /// best-iterate tracking.
    pub fn pgd(eps: f64, steps: usize) -> Self {
        AttackConfig {
            eps,
            alpha: 2.5 * eps / steps.max(1) as f64,
            steps,
            random_start: true,
            best_iterate: true,
        }
    }

    pub fn validate(&self) -> Result<(), AdvError> {
        if self.eps < 0.0 || !self.eps.is_finite() {
            return Err(AdvError::BadConfig(format!("eps {} must be >= 0", self.eps)));
        }
        if self.steps >= 1 && !(self.alpha > 0.0) {
            return Err(AdvError::BadConfig(format!(
                "alpha {} must be positive when steps >= 1",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Anything attacks can differentiate through: builds eval-mode logits
/// from a pixel batch with the input tracked for gradients.
pub trait AttackModel {
    fn class_count(&self) -> usize;
    /// Returns (graph, input node, logits node) with `requires_grad` set
    /// on the input.
    fn attack_graph(&self, batch: &Tensor) -> Result<(Graph, NodeId, NodeId), TensorError>;

    /// Eval-mode logits as plain values.
    fn logits_value(&self, batch: &Tensor) -> Result<Tensor, TensorError> {
        let (graph, _, logits) = self.attack_graph(batch)?;
        Tensor::new(
            graph.shape(logits).to_vec(),
            graph.values(logits).to_vec(),
        )
    }
}

impl AttackModel for Network {
    fn class_count(&self) -> usize {
        self.spec.num_classes
    }

    fn attack_graph(&self, batch: &Tensor) -> Result<(Graph, NodeId, NodeId), TensorError> {
        let pass = self.eval_forward(batch, true)?;
        Ok((pass.graph, pass.input, pass.logits))
    }
}

/// Sign with sign(0) = 0, so zero-gradient pixels stay put.
fn sign(g: f64) -> f64 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn uniform_start(x: &Tensor, eps: f64, rng: &mut ChaCha20Rng) -> Tensor {
    let values = x
        .values
        .iter()
        .map(|&v| (v + (rng.random::<f64>() * 2.0 - 1.0) * eps).clamp(0.0, 1.0))
        .collect();
    Tensor {
        shape: x.shape.clone(),
        values,
    }
}

/// Clamp `candidate` into the eps-ball around `origin` intersected with
/// the [0, 1] pixel box.
fn project(origin: &Tensor, candidate: &mut Tensor, eps: f64) {
    for (c, &o) in candidate.values.iter_mut().zip(&origin.values) {
        *c = (*c).clamp(o - eps, o + eps).clamp(0.0, 1.0);
    }
}

/// What the inner maximization climbs.
enum AttackLoss<'a> {
    CrossEntropy(&'a [usize]),
    /// KL(softmax(adv) || softmax(clean)) against frozen clean logits.
    KlFromClean(&'a Tensor),
}

impl AttackLoss<'_> {
    fn build(&self, g: &mut Graph, logits: NodeId) -> Result<NodeId, TensorError> {
        match self {
            AttackLoss::CrossEntropy(labels) => {
                g.softmax_cross_entropy(logits, labels, Reduction::Sum)
            }
            AttackLoss::KlFromClean(clean) => {
                let clean_node = g.constant((*clean).clone());
                g.kl_divergence(logits, clean_node, Reduction::Sum)
            }
        }
    }
}

/// Per-sample running maxima of the attack loss, one snapshot per
/// scored iterate (start, after each step).
#[derive(Debug, Clone)]
pub struct PgdTrace {
    pub best_loss: Vec<Vec<f64>>,
}

/// Single-step signed-gradient attack, optionally from a uniform random
/// start inside the eps-ball (the Fast-AT inner step).
pub fn fgsm(
    model: &impl AttackModel,
    x: &Tensor,
    labels: &[usize],
    eps: f64,
    alpha: f64,
    random_start: bool,
    rng: &mut ChaCha20Rng,
) -> Result<Tensor, AdvError> {
    AttackConfig {
        eps,
        alpha,
        steps: 1,
        random_start,
        best_iterate: false,
    }
    .validate()?;
    if eps == 0.0 {
        return Ok(x.clone());
    }
    let mut cur = if random_start {
        uniform_start(x, eps, rng)
    } else {
        x.clone()
    };
    let (mut graph, input, logits) = model.attack_graph(&cur)?;
    let loss = graph.softmax_cross_entropy(logits, labels, Reduction::Sum)?;
    graph.backward(loss)?;
    let grad = graph
        .grad(input)
        .ok_or_else(|| TensorError::Shape("input gradient missing".into()))?;
    for (v, g) in cur.values.iter_mut().zip(grad) {
        *v += alpha * sign(*g);
    }
    project(x, &mut cur, eps);
    Ok(cur)
}

fn pgd_core(
    model: &impl AttackModel,
    x: &Tensor,
    cfg: &AttackConfig,
    loss: AttackLoss,
    rng: &mut ChaCha20Rng,
) -> Result<(Tensor, PgdTrace), AdvError> {
    cfg.validate()?;
    let n = x.shape[0];
    let per = x.numel() / n.max(1);

    let eval_losses = |point: &Tensor| -> Result<Vec<f64>, AdvError> {
        let (mut graph, _, logits) = model.attack_graph(point)?;
        let l = loss.build(&mut graph, logits)?;
        Ok(graph
            .per_sample_losses(l)
            .expect("loss nodes record per-sample values")
            .to_vec())
    };

    if cfg.eps == 0.0 {
        let start_losses = eval_losses(x)?;
        return Ok((
            x.clone(),
            PgdTrace {
                best_loss: vec![start_losses],
            },
        ));
    }

    let mut cur = if cfg.random_start {
        uniform_start(x, cfg.eps, rng)
    } else {
        x.clone()
    };
    let mut best = cur.clone();
    let mut best_loss = vec![f64::NEG_INFINITY; n];
    let mut trace = PgdTrace {
        best_loss: Vec::with_capacity(cfg.steps + 1),
    };

    let absorb =
        |point: &Tensor, losses: &[f64], best: &mut Tensor, best_loss: &mut Vec<f64>| {
            for (i, &l) in losses.iter().enumerate() {
                if l > best_loss[i] {
                    best_loss[i] = l;
                    best.values[i * per..(i + 1) * per]
                        .copy_from_slice(&point.values[i * per..(i + 1) * per]);
                }
            }
        };

    for _ in 0..cfg.steps {
        let (mut graph, input, logits) = model.attack_graph(&cur)?;
        let l = loss.build(&mut graph, logits)?;
        let losses = graph
            .per_sample_losses(l)
            .expect("loss nodes record per-sample values")
            .to_vec();
        absorb(&cur, &losses, &mut best, &mut best_loss);
        trace.best_loss.push(best_loss.clone());
        graph.backward(l)?;
        let grad = graph
            .grad(input)
            .ok_or_else(|| TensorError::Shape("input gradient missing".into()))?;
        for (v, g) in cur.values.iter_mut().zip(grad) {
            *v += cfg.alpha * sign(*g);
        }
        project(x, &mut cur, cfg.eps);
    }

    let final_losses = eval_losses(&cur)?;
    absorb(&cur, &final_losses, &mut best, &mut best_loss);
    trace.best_loss.push(best_loss);

    let out = if cfg.best_iterate { best } else { cur };
    Ok((out, trace))
}

/// Iterated signed-gradient ascent on cross entropy with projection onto
/// the eps-ball and pixel box after every step.
pub fn pgd(
    model: &impl AttackModel,
    x: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
    rng: &mut ChaCha20Rng,
) -> Result<Tensor, AdvError> {
    Ok(pgd_with_trace(model, x, labels, cfg, rng)?.0)
}

pub fn pgd_with_trace(
    model: &impl AttackModel,
    x: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
    rng: &mut ChaCha20Rng,
) -> Result<(Tensor, PgdTrace), AdvError> {
    pgd_core(model, x, cfg, AttackLoss::CrossEntropy(labels), rng)
}

/// Triangular one-cycle learning rate: ramps 0 -> lr_max over the first
/// half of [0, total], back to 0 over the second half.
pub fn cyclic_lr(t: f64, total: f64, lr_max: f64) -> Result<f64, AdvError> {
    if !(total > 0.0) || t < 0.0 || t > total {
        return Err(AdvError::Range { t, total });
    }
    let frac = t / total;
    Ok(if frac <= 0.5 {
        lr_max * 2.0 * frac
    } else {
        lr_max * 2.0 * (1.0 - frac)
    })
}

/// TRADES objective value on a batch: clean cross entropy plus beta
/// times KL(softmax(f(x_adv)) || softmax(f(x))), with x_adv produced by
/// KL-maximizing PGD around x. Eval-mode statistics throughout.
pub fn trades_loss(
    model: &impl AttackModel,
    x: &Tensor,
    labels: &[usize],
    beta: f64,
    attack: &AttackConfig,
    rng: &mut ChaCha20Rng,
) -> Result<f64, AdvError> {
    if beta < 0.0 {
        return Err(AdvError::BadConfig(format!("beta {beta} must be >= 0")));
    }
    let clean_logits = model.logits_value(x)?;
    let x_adv = if beta == 0.0 {
        x.clone()
    } else {
        pgd_core(model, x, attack, AttackLoss::KlFromClean(&clean_logits), rng)?.0
    };
    let mut g = Graph::new(false);
    let clean = g.constant(clean_logits);
    let ce = g.softmax_cross_entropy(clean, labels, Reduction::Mean)?;
    let adv_logits = model.logits_value(&x_adv)?;
    let adv = g.constant(adv_logits);
    let kl = g.kl_divergence(adv, clean, Reduction::Mean)?;
    let total = g.affine_combine(ce, kl, 1.0, beta)?;
    Ok(g.values(total)[0])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainMethod {
    Standard,
    FastAt,
    Sat,
    Trades { beta: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: TrainMethod,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Inner-maximization budget (and the budget of per-epoch robust
    /// accuracy reporting).
    pub attack: AttackConfig,
}

pub const SGD_MOMENTUM: f64 = 0.9;

/// Fast-AT takes a single randomized FGSM step of 1.25 eps.
pub const FAST_AT_ALPHA_FACTOR: f64 = 1.25;

/// Per-epoch robust accuracy in the report is scored on at most this
/// many samples to keep epoch turnaround proportional to training cost.
const REPORT_EVAL_CAP: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub lr: f64,
    pub clean_loss: f64,
    pub clean_acc: f64,
    pub robust_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,clean_loss,clean_acc,robust_acc\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch, e.lr, e.clean_loss, e.clean_acc, e.robust_acc
            ));
        }
        out
    }
}

fn validate_train(cfg: &TrainConfig, data: &Dataset) -> Result<(), AdvError> {
    cfg.attack.validate()?;
    if let TrainMethod::Trades { beta } = cfg.method {
        if beta < 0.0 {
            return Err(AdvError::BadConfig(format!("beta {beta} must be >= 0")));
        }
    }
    if !(cfg.lr_max > 0.0) {
        return Err(AdvError::BadConfig(format!(
            "lr_max {} must be positive",
            cfg.lr_max
        )));
    }
    if cfg.batch_size == 0 {
        return Err(AdvError::BadConfig("batch_size must be >= 1".into()));
    }
    if data.is_empty() {
        return Err(AdvError::BadConfig("dataset is empty".into()));
    }
    Ok(())
}

/// SGD with momentum 0.9, weight decay, and a cyclic learning rate over
/// the whole run. Normalization affine pairs and activation scalars are
/// excluded from weight decay. The inner example generation follows the
/// configured method; attacks run against eval-mode statistics.
pub fn train(
    net: &mut Network,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport, AdvError> {
    validate_train(cfg, data)?;
    let mut report = TrainReport::default();
    if cfg.epochs == 0 {
        return Ok(report);
    }

    let n = data.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * batches_per_epoch) as f64;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut velocity: Vec<Vec<f64>> = net
        .params()
        .iter()
        .map(|p| vec![0.0; p.tensor.numel()])
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0usize;
    let mut last_lr = 0.0;

    for epoch in 0..cfg.epochs {
        // Fisher-Yates on the shared stream keeps runs reproducible.
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(cfg.batch_size) {
            let (x, labels) = data.batch(chunk);
            // the schedule is sampled at step midpoints so no step runs at lr 0
            let lr = cyclic_lr(step as f64 + 0.5, total_steps, cfg.lr_max)?;
            last_lr = lr;
            step += 1;

            let loss_value = match cfg.method {
                TrainMethod::Trades { beta } => {
                    let clean_logits = net.logits(&x)?;
                    let x_adv = if cfg.attack.eps == 0.0 || beta == 0.0 {
                        x.clone()
                    } else {
                        pgd_core(
                            &*net,
                            &x,
                            &cfg.attack,
                            AttackLoss::KlFromClean(&clean_logits),
                            &mut rng,
                        )?
                        .0
                    };
                    let mut graph = Graph::new(true);
                    let param_nodes = net.insert_params(&mut graph, true);
                    let clean_in = graph.constant(x.clone());
                    let clean_out = net.wire_train(&mut graph, clean_in, &param_nodes)?;
                    let adv_in = graph.constant(x_adv);
                    let adv_out = net.wire_train(&mut graph, adv_in, &param_nodes)?;
                    let ce = graph.softmax_cross_entropy(clean_out, &labels, Reduction::Mean)?;
                    let kl = graph.kl_divergence(adv_out, clean_out, Reduction::Mean)?;
                    let loss = graph.affine_combine(ce, kl, 1.0, beta)?;
                    graph.backward(loss)?;
                    apply_sgd(net, &graph, &param_nodes, &mut velocity, lr, cfg.weight_decay);
                    graph.values(loss)[0]
                }
                method => {
                    let x_train = match method {
                        TrainMethod::Standard => x.clone(),
                        TrainMethod::FastAt => fgsm(
                            &*net,
                            &x,
                            &labels,
                            cfg.attack.eps,
                            FAST_AT_ALPHA_FACTOR * cfg.attack.eps,
                            true,
                            &mut rng,
                        )?,
                        TrainMethod::Sat => pgd(&*net, &x, &labels, &cfg.attack, &mut rng)?,
                        TrainMethod::Trades { .. } => unreachable!(),
                    };
                    let mut pass = net.train_forward(&x_train)?;
                    let loss =
                        pass.graph
                            .softmax_cross_entropy(pass.logits, &labels, Reduction::Mean)?;
                    pass.graph.backward(loss)?;
                    apply_sgd(
                        net,
                        &pass.graph,
                        &pass.param_nodes,
                        &mut velocity,
                        lr,
                        cfg.weight_decay,
                    );
                    pass.graph.values(loss)[0]
                }
            };
            if !loss_value.is_finite() {
                return Err(AdvError::Divergence { epoch });
            }
        }

        let (clean_loss, clean_acc) = evaluate_clean(net, data)?;
        if !clean_loss.is_finite() {
            return Err(AdvError::Divergence { epoch });
        }
        let eval_n = data.len().min(REPORT_EVAL_CAP);
        let subset: Vec<usize> = (0..eval_n).collect();
        let robust_acc = evaluate_robust_subset(net, data, &subset, &cfg.attack, cfg.seed ^ 0x5eed)?;
        report.epochs.push(EpochReport {
            epoch,
            lr: last_lr,
            clean_loss,
            clean_acc,
            robust_acc,
        });
    }
    Ok(report)
}

fn apply_sgd(
    net: &mut Network,
    graph: &Graph,
    param_nodes: &[NodeId],
    velocity: &mut [Vec<f64>],
    lr: f64,
    weight_decay: f64,
) {
    for (pid, node) in param_nodes.iter().enumerate() {
        let grad = graph.grad(*node);
        let param = &mut net.params_mut()[pid];
        let wd = match param.kind {
            ParamKind::NormAffine | ParamKind::ActParam => 0.0,
            _ => weight_decay,
        };
        let vel = &mut velocity[pid];
        for (i, w) in param.tensor.values.iter_mut().enumerate() {
            let g = grad.map(|g| g[i]).unwrap_or(0.0) + wd * *w;
            vel[i] = SGD_MOMENTUM * vel[i] + g;
            *w -= lr * vel[i];
        }
    }
}

const EVAL_BATCH: usize = 64;

/// Mean cross entropy and accuracy of eval-mode predictions.
pub fn evaluate_clean(net: &Network, data: &Dataset) -> Result<(f64, f64), AdvError> {
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(EVAL_BATCH) {
        let (x, labels) = data.batch(chunk);
        let pass = net.eval_forward(&x, false)?;
        let mut g = Graph::new(false);
        let logits = g.constant(Tensor::new(
            pass.graph.shape(pass.logits).to_vec(),
            pass.graph.values(pass.logits).to_vec(),
        )?);
        let ce = g.softmax_cross_entropy(logits, &labels, Reduction::Sum)?;
        loss_sum += g.values(ce)[0];
        let k = net.class_count();
        for (row, &label) in pass.graph.values(pass.logits).chunks(k).zip(&labels) {
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                .map(|(i, _)| i)
                .unwrap_or(0);
            correct += usize::from(pred == label);
        }
    }
    Ok((
        loss_sum / data.len() as f64,
        correct as f64 / data.len() as f64,
    ))
}

fn evaluate_robust_subset(
    net: &Network,
    data: &Dataset,
    indices: &[usize],
    attack: &AttackConfig,
    seed: u64,
) -> Result<f64, AdvError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut correct = 0usize;
    for chunk in indices.chunks(EVAL_BATCH) {
        let (x, labels) = data.batch(chunk);
        let x_adv = pgd(net, &x, &labels, attack, &mut rng)?;
        let preds = net.predict(&x_adv)?;
        correct += preds
            .iter()
            .zip(&labels)
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(correct as f64 / indices.len().max(1) as f64)
}

/// Fraction of samples still classified correctly under a PGD attack of
/// the given budget. `eps = 0` reduces to clean accuracy exactly.
pub fn evaluate_robust(
    net: &Network,
    data: &Dataset,
    attack: &AttackConfig,
    seed: u64,
) -> Result<f64, AdvError> {
    let indices: Vec<usize> = (0..data.len()).collect();
    evaluate_robust_subset(net, data, &indices, attack, seed)
}

#[cfg(test)]
mod tests;
