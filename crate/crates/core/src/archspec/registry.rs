//! Named stage tables and builtin baseline/robustified specs.
//!
//! The robustified stage tables are the published per-model depth/width
//! lists; `DepthWidth` robustify steps resolve them by name so the full
//! roadmap is reproducible from a baseline spec alone.

use super::{
    ActivationKind, ArchitectureSpec, BlockSpec, StageSpec, StemKind, StemSpec,
};

/// Lowercase alphanumeric form of a model name, with an optional leading
/// `ra` stripped, so `RaResNet-50`, `resnet50` and `ResNet-50` all resolve
/// to the same table.
fn normalize(name: &str) -> String {
    let squashed: String = name
        .chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect();
    match squashed.strip_prefix("ra") {
        Some(rest) if !rest.is_empty() => rest.to_string(),
        _ => squashed,
    }
}

fn stages(table: &[(usize, usize)]) -> Vec<StageSpec> {
    table.iter().map(|&(d, w)| StageSpec::new(d, w)).collect()
}

/// Robustified depth/width table for a known model name, if registered.
pub fn stage_table_for(name: &str) -> Option<Vec<StageSpec>> {
    let table: &[(usize, usize)] = match normalize(name).as_str() {
        "resnet50" => &[(5, 36), (8, 72), (13, 140), (1, 270)],
        "resnet101" => &[(7, 42), (11, 84), (18, 166), (1, 328)],
        "wrn2210" => &[(13, 120), (15, 240), (2, 480)],
        "wrn2810" => &[(14, 128), (16, 256), (3, 512)],
        "wrn3412" => &[(18, 144), (20, 288), (5, 576)],
        "wrn1012" => &[(7, 64), (11, 128), (18, 252), (1, 504)],
        "wrn7016" => &[(30, 216), (31, 432), (10, 864)],
        _ => return None,
    };
    Some(stages(table))
}

fn imagenet_baseline(name: &str, table: &[(usize, usize)]) -> ArchitectureSpec {
    ArchitectureSpec {
        name: name.to_string(),
        stem: StemSpec {
            kind: StemKind::ResNet,
            out_width: 64,
        },
        stages: stages(table),
        block: BlockSpec::bottleneck(4),
        activation: ActivationKind::Relu,
        num_classes: 1000,
    }
}

fn cifar_wrn_baseline(name: &str, per_stage_depth: usize, widths: &[usize]) -> ArchitectureSpec {
    ArchitectureSpec {
        name: name.to_string(),
        stem: StemSpec {
            kind: StemKind::Cifar,
            out_width: 16,
        },
        stages: widths
            .iter()
            .map(|&w| StageSpec::new(per_stage_depth, w))
            .collect(),
        block: BlockSpec::basic(),
        activation: ActivationKind::Relu,
        num_classes: 10,
    }
}

fn robustified(base: &ArchitectureSpec) -> ArchitectureSpec {
    let mut spec = base.clone();
    spec.name = format!("Ra{}", base.name);
    spec.stages = stage_table_for(&base.name).expect("registered table");
    spec.stem = StemSpec {
        kind: match base.stem.kind {
            StemKind::Cifar => StemKind::Cifar,
            _ => StemKind::Postponed,
        },
        out_width: 96,
    };
    spec.block.se_ratio = Some(4);
    spec.activation = ActivationKind::Silu;
    spec
}

/// Builds a builtin spec by name (baselines and their Ra variants).
pub fn builtin_spec(name: &str) -> Option<ArchitectureSpec> {
    let squashed: String = name
        .chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect();
    let ra = squashed.starts_with("ra");
    let base = match squashed.strip_prefix("ra").unwrap_or(&squashed) {
        "resnet50" => imagenet_baseline("ResNet-50", &[(3, 64), (4, 128), (6, 256), (3, 512)]),
        "resnet101" => imagenet_baseline("ResNet-101", &[(3, 64), (4, 128), (23, 256), (3, 512)]),
        // WRN-d-k on CIFAR: (d - 4) / 6 basic blocks per stage, widths 16k/32k/64k.
        "wrn2210" => cifar_wrn_baseline("WRN-22-10", 3, &[160, 320, 640]),
        "wrn2810" => cifar_wrn_baseline("WRN-28-10", 4, &[160, 320, 640]),
        "wrn3412" => cifar_wrn_baseline("WRN-34-12", 5, &[192, 384, 768]),
        "wrn7016" => cifar_wrn_baseline("WRN-70-16", 11, &[256, 512, 1024]),
        // WRN-101-2 widens the bottleneck 3x3 to 2x the ResNet width; its
        // output multiplier relative to that width is 2, not 4.
        "wrn1012" => {
            let mut spec = imagenet_baseline(
                "WRN-101-2",
                &[(3, 128), (4, 256), (23, 512), (3, 1024)],
            );
            spec.block = BlockSpec::bottleneck(2);
            spec
        }
        _ => return None,
    };
    Some(if ra { robustified(&base) } else { base })
}

/// Names accepted by [`builtin_spec`], baselines first.
pub fn builtin_spec_names() -> Vec<&'static str> {
    vec![
        "ResNet-50",
        "ResNet-101",
        "WRN-22-10",
        "WRN-28-10",
        "WRN-34-12",
        "WRN-101-2",
        "WRN-70-16",
        "RaResNet-50",
        "RaResNet-101",
        "RaWRN-22-10",
        "RaWRN-28-10",
        "RaWRN-34-12",
        "RaWRN-101-2",
        "RaWRN-70-16",
    ]
}
