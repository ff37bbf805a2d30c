//! Temporary calibration harness (not part of the suite).

use rarch::adversarial::{evaluate_clean, evaluate_robust, train, AttackConfig, TrainConfig, TrainMethod};
use rarch::archspec::{ActivationKind, ArchitectureSpec, BlockSpec, StageSpec, StemKind, StemSpec};
use rarch::dataset::gen_synthetic;
use rarch::netbuild::build_network;
use std::time::Instant;

fn toy_spec() -> ArchitectureSpec {
    ArchitectureSpec {
        name: "toy-at".into(),
        stem: StemSpec { kind: StemKind::Cifar, out_width: 8 },
        stages: vec![StageSpec::new(1, 8), StageSpec::new(1, 16)],
        block: BlockSpec::basic(),
        activation: ActivationKind::Silu,
        num_classes: 2,
    }
}

#[test]
#[ignore]
fn calibrate_criterion6() {
    let data = gen_synthetic(1234, 2000, 16, 2).unwrap();
    let eval_attack = AttackConfig::pgd(0.05, 10);
    for seed in [0u64, 1, 2] {
        let t0 = Instant::now();
        let mut results = Vec::new();
        for method in [TrainMethod::Standard, TrainMethod::FastAt] {
            let mut net = build_network(&toy_spec(), (3, 16, 16), seed).unwrap();
            let cfg = TrainConfig {
                method,
                epochs: 6,
                batch_size: 64,
                lr_max: 0.1,
                weight_decay: 5e-4,
                seed: seed + 100,
                attack: AttackConfig {
                    eps: 0.05,
                    alpha: 0.0625,
                    steps: 1,
                    random_start: true,
                    best_iterate: false,
                },
            };
            let t1 = Instant::now();
            let report = train(&mut net, &data, &cfg).unwrap();
            let train_time = t1.elapsed();
            let (_, clean) = evaluate_clean(&net, &data).unwrap();
            let t2 = Instant::now();
            let robust = evaluate_robust(&net, &data, &eval_attack, 999).unwrap();
            println!(
                "seed {seed} {method:?}: clean {clean:.3} robust {robust:.3} (train {:.1?}, eval {:.1?}, last epoch {:?})",
                train_time,
                t2.elapsed(),
                report.epochs.last().map(|e| (e.clean_acc, e.robust_acc))
            );
            results.push(robust);
        }
        println!(
            "seed {seed}: gap = {:.3}  total {:.1?}",
            results[1] - results[0],
            t0.elapsed()
        );
    }
}
