use super::*;
use crate::archspec::{ActivationKind, ArchitectureSpec, BlockSpec, StageSpec, StemKind, StemSpec};
use crate::dataset::{gen_synthetic_with, Dataset};
use crate::netbuild::build_network;

fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Logits = W x + b over the flattened image; the analytic workhorse for
/// attack oracles.
pub(crate) struct LinearModel {
    pub weight: Tensor, // [K, D]
    pub bias: Tensor,   // [K]
    pub input_shape: (usize, usize, usize),
}

impl AttackModel for LinearModel {
    fn class_count(&self) -> usize {
        self.weight.shape[0]
    }

    fn attack_graph(&self, batch: &Tensor) -> Result<(Graph, NodeId, NodeId), TensorError> {
        let n = batch.shape[0];
        let d = self.weight.shape[1];
        let mut g = Graph::new(true);
        let input = g.leaf(batch.clone(), true);
        let flat = g.reshape(input, vec![n, d])?;
        let w = g.constant(self.weight.clone());
        let b = g.constant(self.bias.clone());
        let logits = g.linear(flat, w, Some(b))?;
        Ok((g, input, logits))
    }
}

fn binary_model(w: &[f64]) -> LinearModel {
    let d = w.len();
    let mut weight = vec![0.0; 2 * d];
    weight[d..].copy_from_slice(w); // class-1 score is w . x, class-0 is 0
    LinearModel {
        weight: Tensor::new(vec![2, d], weight).unwrap(),
        bias: Tensor::zeros(vec![2]),
        input_shape: (d, 1, 1),
    }
}

fn image(values: Vec<f64>, c: usize) -> Tensor {
    let n = values.len() / c;
    Tensor::new(vec![n, c, 1, 1], values).unwrap()
}

fn toy_spec(width: usize) -> ArchitectureSpec {
    ArchitectureSpec {
        name: "toy".into(),
        stem: StemSpec {
            kind: StemKind::Cifar,
            out_width: width,
        },
        stages: vec![StageSpec::new(1, width), StageSpec::new(1, width * 2)],
        block: BlockSpec::basic(),
        activation: ActivationKind::Silu,
        num_classes: 2,
    }
}

fn toy_data(seed: u64, n: usize) -> Dataset {
    gen_synthetic_with(seed, n, 8, 2, 0.1, 0.02).unwrap()
}

#[test]
fn fgsm_with_zero_budget_returns_input_exactly() {
    let model = binary_model(&[0.5, -2.0, 1.0]);
    let x = image(vec![0.2, 0.8, 0.5], 3);
    let out = fgsm(&model, &x, &[1], 0.0, 1.0, true, &mut rng(0)).unwrap();
    assert_eq!(out, x);
}

#[test]
fn fgsm_on_linear_binary_model_matches_sign_formula() {
    let w = [0.7, -1.3, 0.4, 2.0];
    let model = binary_model(&w);
    let x = image(vec![0.5, 0.5, 0.01, 0.99], 4);
    let eps = 0.1;
    // label 1: ascent moves against the class-1 score, x - eps * sign(w)
    let adv = fgsm(&model, &x, &[1], eps, eps, false, &mut rng(0)).unwrap();
    for ((a, &xv), &wv) in adv.values.iter().zip(&x.values).zip(&w) {
        let expect = (xv - eps * wv.signum()).clamp(0.0, 1.0);
        assert!((a - expect).abs() < 1e-12);
    }
    // label 0: ascent moves toward class 1, x + eps * sign(w)
    let adv = fgsm(&model, &x, &[0], eps, eps, false, &mut rng(0)).unwrap();
    for ((a, &xv), &wv) in adv.values.iter().zip(&x.values).zip(&w) {
        let expect = (xv + eps * wv.signum()).clamp(0.0, 1.0);
        assert!((a - expect).abs() < 1e-12);
    }
}

#[test]
fn fgsm_random_starts_differ_but_stay_in_the_ball() {
    let model = binary_model(&[1.0, 1.0, -1.0, 0.5, 2.0]);
    let x = image(vec![0.4, 0.6, 0.5, 0.3, 0.7], 5);
    let eps = 0.05;
    let a = fgsm(&model, &x, &[0], eps, 0.02, true, &mut rng(1)).unwrap();
    let b = fgsm(&model, &x, &[0], eps, 0.02, true, &mut rng(2)).unwrap();
    assert_ne!(a.values, b.values);
    for out in [&a, &b] {
        for (o, &xv) in out.values.iter().zip(&x.values) {
            assert!((o - xv).abs() <= eps + 1e-12);
            assert!((0.0..=1.0).contains(o));
        }
    }
}

#[test]
fn single_step_pgd_reduces_to_fgsm() {
    let model = binary_model(&[0.3, -0.9, 1.7]);
    let x = image(vec![0.25, 0.5, 0.75, 0.1, 0.9, 0.5], 3);
    let labels = [1, 0];
    for eps in [0.03, 0.1] {
        let cfg = AttackConfig {
            eps,
            alpha: eps * 1.5, // alpha >= eps: one step saturates the ball
            steps: 1,
            random_start: false,
            best_iterate: false,
        };
        let via_pgd = pgd(&model, &x, &labels, &cfg, &mut rng(0)).unwrap();
        let via_fgsm = fgsm(&model, &x, &labels, eps, eps * 1.5, false, &mut rng(0)).unwrap();
        assert_eq!(via_pgd.values, via_fgsm.values);
    }
}

#[test]
fn pgd_with_zero_budget_is_identity_for_any_steps() {
    let model = binary_model(&[2.0, -1.0]);
    let x = image(vec![0.3, 0.6], 2);
    let cfg = AttackConfig {
        eps: 0.0,
        alpha: 0.1,
        steps: 25,
        random_start: true,
        best_iterate: true,
    };
    let out = pgd(&model, &x, &[0], &cfg, &mut rng(3)).unwrap();
    assert_eq!(out, x);
}

fn ce_loss_of(model: &LinearModel, x: &Tensor, labels: &[usize]) -> f64 {
    let (mut g, _, logits) = model.attack_graph(x).unwrap();
    let l = g
        .softmax_cross_entropy(logits, labels, Reduction::Sum)
        .unwrap();
    g.values(l)[0]
}

#[test]
fn pgd_on_linear_model_reaches_the_best_corner() {
    // For a linear score the l-infinity CE maximizer sits at one of the
    // 2^d corners x +- eps; enumerate them as the oracle.
    let w = [1.4, -0.8];
    let model = binary_model(&w);
    let x = image(vec![0.5, 0.4], 2);
    let eps = 0.1;
    let cfg = AttackConfig {
        eps,
        alpha: 2.5 * eps / 20.0,
        steps: 20,
        random_start: false,
        best_iterate: true,
    };
    let adv = pgd(&model, &x, &[1], &cfg, &mut rng(0)).unwrap();
    let achieved = ce_loss_of(&model, &adv, &[1]);

    let mut best_corner = f64::NEG_INFINITY;
    for mask in 0..4u32 {
        let corner: Vec<f64> = x
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| v + if mask & (1 << i) != 0 { eps } else { -eps })
            .collect();
        let corner = image(corner, 2);
        best_corner = best_corner.max(ce_loss_of(&model, &corner, &[1]));
    }
    assert!(
        (achieved - best_corner).abs() < 1e-6,
        "pgd {achieved} vs corner max {best_corner}"
    );
}

#[test]
fn pgd_best_iterate_trace_is_monotone_and_dominates_the_start() {
    let model = binary_model(&[0.9, -1.1, 0.3]);
    let x = image(vec![0.5, 0.5, 0.5, 0.2, 0.8, 0.4], 3);
    let labels = [0, 1];
    let cfg = AttackConfig {
        eps: 0.08,
        alpha: 0.02,
        steps: 8,
        random_start: false,
        best_iterate: true,
    };
    let (adv, trace) = pgd_with_trace(&model, &x, &labels, &cfg, &mut rng(5)).unwrap();
    for sample in 0..2 {
        for step in 1..trace.best_loss.len() {
            assert!(trace.best_loss[step][sample] >= trace.best_loss[step - 1][sample]);
        }
    }
    // without a random start the zero perturbation is the first iterate,
    // so the returned best is at least as lossy as the clean point
    let clean = ce_loss_of(&model, &x, &labels);
    let best = ce_loss_of(&model, &adv, &labels);
    assert!(best >= clean - 1e-12);
}

#[test]
fn cyclic_lr_triangle() {
    assert_eq!(cyclic_lr(0.0, 10.0, 0.4).unwrap(), 0.0);
    assert!((cyclic_lr(5.0, 10.0, 0.4).unwrap() - 0.4).abs() < 1e-15);
    assert_eq!(cyclic_lr(10.0, 10.0, 0.4).unwrap(), 0.0);
    assert!((cyclic_lr(2.5, 10.0, 0.4).unwrap() - 0.2).abs() < 1e-15);
    assert!(matches!(
        cyclic_lr(-0.1, 10.0, 0.4),
        Err(AdvError::Range { .. })
    ));
    assert!(matches!(
        cyclic_lr(10.1, 10.0, 0.4),
        Err(AdvError::Range { .. })
    ));
}

#[test]
fn trades_loss_with_zero_beta_is_plain_cross_entropy() {
    let model = binary_model(&[0.8, -0.5]);
    let x = image(vec![0.3, 0.7, 0.6, 0.2], 2);
    let labels = [0, 1];
    let attack = AttackConfig::pgd(0.1, 5);
    let got = trades_loss(&model, &x, &labels, 0.0, &attack, &mut rng(0)).unwrap();
    let expect = ce_loss_of(&model, &x, &labels) / 2.0; // mean over the batch
    assert!((got - expect).abs() < 1e-12);
}

#[test]
fn trades_loss_with_zero_budget_has_no_kl_term() {
    let model = binary_model(&[0.8, -0.5]);
    let x = image(vec![0.3, 0.7], 2);
    let attack = AttackConfig {
        eps: 0.0,
        alpha: 0.1,
        steps: 5,
        random_start: true,
        best_iterate: true,
    };
    let got = trades_loss(&model, &x, &[1], 6.0, &attack, &mut rng(0)).unwrap();
    let expect = ce_loss_of(&model, &x, &[1]);
    assert!((got - expect).abs() < 1e-12);
}

#[test]
fn trades_loss_matches_direct_arithmetic() {
    let model = binary_model(&[1.2, -0.4, 0.9]);
    let x = image(vec![0.45, 0.55, 0.5], 3);
    let labels = [1];
    let beta = 3.0;
    let attack = AttackConfig::pgd(0.05, 4);
    let got = trades_loss(&model, &x, &labels, beta, &attack, &mut rng(9)).unwrap();

    // replay the same inner maximization, then combine CE and KL by hand
    let clean_logits = model.logits_value(&x).unwrap();
    let (x_adv, _) = pgd_core(
        &model,
        &x,
        &attack,
        AttackLoss::KlFromClean(&clean_logits),
        &mut rng(9),
    )
    .unwrap();
    let adv_logits = model.logits_value(&x_adv).unwrap();
    let softmax = |z: &[f64]| {
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect::<Vec<f64>>()
    };
    let p = softmax(&clean_logits.values);
    let q = softmax(&adv_logits.values);
    let ce = -p[labels[0]].ln();
    let kl: f64 = q
        .iter()
        .zip(&p)
        .map(|(&qv, &pv)| qv * (qv.ln() - pv.ln()))
        .sum();
    assert!((got - (ce + beta * kl)).abs() < 1e-12, "{got}");
}

#[test]
fn standard_training_fits_a_separable_toy_set() {
    let data = toy_data(11, 120);
    let mut net = build_network(&toy_spec(6), (3, 8, 8), 1).unwrap();
    let cfg = TrainConfig {
        method: TrainMethod::Standard,
        epochs: 5,
        batch_size: 30,
        lr_max: 0.08,
        weight_decay: 5e-4,
        seed: 3,
        attack: AttackConfig {
            eps: 0.0,
            alpha: 0.1,
            steps: 0,
            random_start: false,
            best_iterate: false,
        },
    };
    let report = train(&mut net, &data, &cfg).unwrap();
    let last = report.epochs.last().unwrap();
    assert_eq!(report.epochs.len(), 5);
    assert!(
        last.clean_acc == 1.0,
        "expected perfect fit, got {}",
        last.clean_acc
    );
}

#[test]
fn zero_epochs_leaves_the_network_untouched() {
    let data = toy_data(1, 12);
    let mut net = build_network(&toy_spec(4), (3, 8, 8), 2).unwrap();
    let before = net.param_hash();
    let cfg = TrainConfig {
        method: TrainMethod::Standard,
        epochs: 0,
        batch_size: 4,
        lr_max: 0.1,
        weight_decay: 0.0,
        seed: 0,
        attack: AttackConfig::pgd(0.01, 2),
    };
    let report = train(&mut net, &data, &cfg).unwrap();
    assert!(report.epochs.is_empty());
    assert_eq!(net.param_hash(), before);
}

#[test]
fn weight_decay_skips_norm_affine_and_activation_params() {
    let mut spec = toy_spec(4);
    spec.activation = ActivationKind::PSilu; // gives the net ActParam tensors
    let mut net = build_network(&spec, (3, 8, 8), 5).unwrap();
    let before: Vec<(ParamKind, Vec<f64>)> = net
        .params()
        .iter()
        .map(|p| (p.kind, p.tensor.values.clone()))
        .collect();

    // zero-gradient step: momentum picks up only the decay term
    let mut graph = Graph::new(true);
    let param_nodes = net.insert_params(&mut graph, true);
    let mut velocity: Vec<Vec<f64>> = net
        .params()
        .iter()
        .map(|p| vec![0.0; p.tensor.numel()])
        .collect();
    let (lr, wd) = (0.1, 0.01);
    apply_sgd(&mut net, &graph, &param_nodes, &mut velocity, lr, wd);

    for (param, (kind, old)) in net.params().iter().zip(&before) {
        match kind {
            ParamKind::NormAffine | ParamKind::ActParam => {
                assert_eq!(
                    param.tensor.values, *old,
                    "{} should be bit-unchanged",
                    param.name
                );
            }
            ParamKind::ConvWeight => {
                for (new, &o) in param.tensor.values.iter().zip(old) {
                    assert!(
                        (new - o * (1.0 - lr * wd)).abs() < 1e-15,
                        "{} should shrink by the decay factor",
                        param.name
                    );
                }
            }
            _ => {}
        }
    }
}

#[test]
fn training_is_deterministic_for_a_fixed_seed() {
    let data = toy_data(21, 48);
    let cfg = TrainConfig {
        method: TrainMethod::FastAt,
        epochs: 2,
        batch_size: 16,
        lr_max: 0.05,
        weight_decay: 5e-4,
        seed: 77,
        attack: AttackConfig {
            eps: 0.03,
            alpha: 0.03,
            steps: 1,
            random_start: true,
            best_iterate: false,
        },
    };
    let mut run = || {
        let mut net = build_network(&toy_spec(4), (3, 8, 8), 9).unwrap();
        let report = train(&mut net, &data, &cfg).unwrap();
        (net.param_hash(), report.to_csv())
    };
    let (h1, csv1) = run();
    let (h2, csv2) = run();
    assert_eq!(h1, h2);
    assert_eq!(csv1, csv2);
}

#[test]
fn exploding_learning_rate_reports_divergence_with_epoch() {
    let data = toy_data(2, 24);
    let mut net = build_network(&toy_spec(4), (3, 8, 8), 1).unwrap();
    let cfg = TrainConfig {
        method: TrainMethod::Standard,
        epochs: 3,
        batch_size: 8,
        lr_max: 1e18,
        weight_decay: 0.0,
        seed: 1,
        attack: AttackConfig {
            eps: 0.0,
            alpha: 0.1,
            steps: 0,
            random_start: false,
            best_iterate: false,
        },
    };
    match train(&mut net, &data, &cfg) {
        Err(AdvError::Divergence { epoch }) => assert!(epoch < 3),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn robust_accuracy_at_zero_eps_equals_clean_accuracy() {
    let data = toy_data(31, 40);
    let net = build_network(&toy_spec(4), (3, 8, 8), 3).unwrap();
    let (_, clean_acc) = evaluate_clean(&net, &data).unwrap();
    let attack = AttackConfig {
        eps: 0.0,
        alpha: 0.1,
        steps: 10,
        random_start: true,
        best_iterate: true,
    };
    let robust = evaluate_robust(&net, &data, &attack, 0).unwrap();
    assert_eq!(robust, clean_acc);
}

#[test]
fn robust_accuracy_is_monotone_in_eps() {
    let data = toy_data(41, 64);
    let mut net = build_network(&toy_spec(6), (3, 8, 8), 4).unwrap();
    // briefly train so accuracy has room to degrade
    let cfg = TrainConfig {
        method: TrainMethod::Standard,
        epochs: 3,
        batch_size: 16,
        lr_max: 0.08,
        weight_decay: 5e-4,
        seed: 5,
        attack: AttackConfig {
            eps: 0.0,
            alpha: 0.1,
            steps: 0,
            random_start: false,
            best_iterate: false,
        },
    };
    train(&mut net, &data, &cfg).unwrap();
    let mut last = f64::INFINITY;
    for eps in [0.0, 2.0 / 255.0, 4.0 / 255.0, 8.0 / 255.0] {
        let attack = AttackConfig {
            eps,
            alpha: if eps > 0.0 { 2.5 * eps / 10.0 } else { 0.1 },
            steps: 10,
            random_start: true,
            best_iterate: true,
        };
        let acc = evaluate_robust(&net, &data, &attack, 99).unwrap();
        assert!(
            acc <= last + 1e-12,
            "accuracy rose from {last} to {acc} at eps {eps}"
        );
        last = acc;
    }
}

#[test]
fn untrained_network_sits_at_chance_level() {
    let data = toy_data(51, 200);
    let net = build_network(&toy_spec(4), (3, 8, 8), 123).unwrap();
    let (_, acc) = evaluate_clean(&net, &data).unwrap();
    assert!((0.3..=0.7).contains(&acc), "chance-level check: {acc}");
}

#[test]
fn attack_outputs_always_satisfy_ball_and_box_membership() {
    let model = binary_model(&[0.9, -1.4, 0.2, 0.6]);
    let mut r = rng(7);
    for trial in 0..50 {
        let x = image(
            (0..8).map(|_| r.random::<f64>()).collect::<Vec<f64>>(),
            4,
        );
        let eps = r.random::<f64>() * 0.3;
        let cfg = AttackConfig {
            eps,
            alpha: (r.random::<f64>() * 0.2).max(1e-3),
            steps: (trial % 5) + 1,
            random_start: trial % 2 == 0,
            best_iterate: trial % 3 == 0,
        };
        let labels = [trial % 2, (trial + 1) % 2];
        let adv = pgd(&model, &x, &labels, &cfg, &mut r).unwrap();
        for (a, &xv) in adv.values.iter().zip(&x.values) {
            assert!((a - xv).abs() <= eps + 1e-12);
            assert!((0.0..=1.0).contains(a));
        }
    }
}
