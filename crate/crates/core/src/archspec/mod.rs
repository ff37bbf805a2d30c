//! Declarative architecture descriptions and the analytics defined on them.
//!
//! An [`ArchitectureSpec`] is a value describing a residual network: the
//! stem that ingests raw images, a list of body stages (depth = residual
//! blocks, width = channels of the 3x3 convolution), the block template
//! (basic or bottleneck, SE ratio, activation/normalization placement
//! masks), the activation function, and the classifier head. Everything
//! in this module is pure arithmetic on those values; realizing a spec
//! into a runnable network lives in [`crate::netbuild`].

mod format;
mod registry;

pub use format::{emit_spec, parse_spec, parse_spec_lenient};
pub use registry::{builtin_spec, builtin_spec_names, stage_table_for};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("wd ratio is undefined for {0} stage(s); at least 2 are required")]
    TooFewStages(usize),
    #[error("invalid spec: {0}")]
    Invalid(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing required field `{0}`")]
    MissingField(String),
    #[error("no registered stage table for `{0}`; supply explicit stages")]
    NeedsExplicitStages(String),
    #[error("invalid wd range: lo {lo} > hi {hi}")]
    BadRange { lo: f64, hi: f64 },
}

/// One body stage: `depth` residual blocks whose 3x3 convolutions carry
/// `width` channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSpec {
    pub depth: usize,
    pub width: usize,
}

impl StageSpec {
    pub fn new(depth: usize, width: usize) -> Self {
        StageSpec { depth, width }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StemKind {
    /// 7x7 stride-2 convolution followed by a 3x3 stride-2 max-pool.
    ResNet,
    /// 7x7 stride-2 convolution; the max-pool is removed and its stride-2
    /// moves into the first block of stage 1 (shortcut included).
    Postponed,
    /// `patch` x `patch` convolution with the given stride. A stride below
    /// `patch` overlaps neighboring patches and defers a stride-2 into the
    /// first block of stage 1.
    Patchify { patch: usize, stride: usize },
    /// 3x3 stride-1 convolution, no downsampling (CIFAR-family nets).
    Cifar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StemSpec {
    pub kind: StemKind,
    pub out_width: usize,
}

impl StemSpec {
    /// Kernel size of the stem convolution.
    pub fn kernel(&self) -> usize {
        match self.kind {
            StemKind::ResNet | StemKind::Postponed => 7,
            StemKind::Patchify { patch, .. } => patch,
            StemKind::Cifar => 3,
        }
    }

    /// True when the stem leaves part of the downsampling to the first
    /// block of stage 1.
    pub fn defers_downsampling(&self) -> bool {
        match self.kind {
            StemKind::Postponed => true,
            StemKind::Patchify { patch, stride } => stride < patch,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Basic,
    Bottleneck,
}

impl BlockKind {
    /// Number of convolutions inside one residual block.
    pub fn conv_count(&self) -> usize {
        match self {
            BlockKind::Basic => 2,
            BlockKind::Bottleneck => 3,
        }
    }
}

/// Residual block template shared by every stage.
///
/// `act_mask`/`norm_mask` carry one flag per convolution. Activation flags
/// follow the placement-mask convention: flags before the last select the
/// activation after that convolution's normalization, and the last flag
/// selects the activation after the residual add.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    /// Output-channel multiplier; 1 for basic blocks.
    pub expansion: usize,
    /// SE reduction ratio r; `None` disables the SE gate.
    pub se_ratio: Option<usize>,
    pub act_mask: Vec<bool>,
    pub norm_mask: Vec<bool>,
}

impl BlockSpec {
    pub fn basic() -> Self {
        BlockSpec {
            kind: BlockKind::Basic,
            expansion: 1,
            se_ratio: None,
            act_mask: vec![true; 2],
            norm_mask: vec![true; 2],
        }
    }

    pub fn bottleneck(expansion: usize) -> Self {
        BlockSpec {
            kind: BlockKind::Bottleneck,
            expansion,
            se_ratio: None,
            act_mask: vec![true; 3],
            norm_mask: vec![true; 3],
        }
    }

    /// Block output channels for a stage of the given width.
    pub fn out_channels(&self, width: usize) -> usize {
        width * self.expansion
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActivationKind {
    Relu,
    Gelu,
    Silu,
    PRelu,
    PSilu,
    PsSilu,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 6] = [
        ActivationKind::Relu,
        ActivationKind::Gelu,
        ActivationKind::Silu,
        ActivationKind::PRelu,
        ActivationKind::PSilu,
        ActivationKind::PsSilu,
    ];

    /// Learnable scalars per activation instance (2 for PSSiLU's beta and a).
    pub fn param_count(&self) -> usize {
        match self {
            ActivationKind::PRelu | ActivationKind::PSilu => 1,
            ActivationKind::PsSilu => 2,
            _ => 0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::Gelu => "gelu",
            ActivationKind::Silu => "silu",
            ActivationKind::PRelu => "prelu",
            ActivationKind::PSilu => "psilu",
            ActivationKind::PsSilu => "pssilu",
        }
    }
}

/// Full declarative description of a network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchitectureSpec {
    pub name: String,
    pub stem: StemSpec,
    pub stages: Vec<StageSpec>,
    pub block: BlockSpec,
    pub activation: ActivationKind,
    pub num_classes: usize,
}

impl ArchitectureSpec {
    pub fn depths(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.depth).collect()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.width).collect()
    }
}

/// Inclusive WD-ratio interval; the recommended range is [7.5, 13.5].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WdRange {
    pub lo: f64,
    pub hi: f64,
}

impl WdRange {
    pub const OPTIMAL: WdRange = WdRange { lo: 7.5, hi: 13.5 };

    pub fn new(lo: f64, hi: f64) -> Result<Self, SpecError> {
        if lo > hi {
            return Err(SpecError::BadRange { lo, hi });
        }
        Ok(WdRange { lo, hi })
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lo <= value && value <= self.hi
    }
}

/// A single invariant violation found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Width-to-depth ratio: the mean of `W_i / D_i` over all stages except
/// the last. The last stage is never included.
pub fn wd_ratio(spec: &ArchitectureSpec) -> Result<f64, SpecError> {
    let n = spec.stages.len();
    if n < 2 {
        return Err(SpecError::TooFewStages(n));
    }
    let sum: f64 = spec.stages[..n - 1]
        .iter()
        .map(|s| s.width as f64 / s.depth as f64)
        .sum();
    Ok(sum / (n - 1) as f64)
}

/// True iff the spec's WD ratio lies inside `range`.
pub fn in_optimal_range(spec: &ArchitectureSpec, range: WdRange) -> Result<bool, SpecError> {
    Ok(range.contains(wd_ratio(spec)?))
}

/// Checks every type invariant; an empty list means the spec is valid.
pub fn validate(spec: &ArchitectureSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut bad = |field: &str, rule: &str| {
        out.push(Violation {
            field: field.to_string(),
            rule: rule.to_string(),
        })
    };

    if spec.stem.out_width < 1 || spec.stem.out_width > 1024 {
        bad("stem.out_width", "must be in [1, 1024]");
    }
    if let StemKind::Patchify { patch, stride } = spec.stem.kind {
        if patch < 1 {
            bad("stem.patch", "must be >= 1");
        }
        if stride < 1 || stride > patch {
            bad("stem.stride", "must satisfy 1 <= stride <= patch");
        }
    }
    if spec.stages.len() < 2 {
        bad("stages", "at least 2 stages are required");
    }
    for (i, st) in spec.stages.iter().enumerate() {
        if st.depth < 1 {
            bad(&format!("stages[{i}].depth"), "must be >= 1");
        }
        if st.width < 1 {
            bad(&format!("stages[{i}].width"), "must be >= 1");
        }
    }
    if spec.block.expansion < 1 {
        bad("block.expansion", "must be >= 1");
    }
    if spec.block.kind == BlockKind::Basic && spec.block.expansion != 1 {
        bad("block.expansion", "must be 1 for basic blocks");
    }
    if let Some(r) = spec.block.se_ratio {
        if r < 1 {
            bad("block.se_ratio", "must be >= 1");
        }
    }
    let nconv = spec.block.kind.conv_count();
    if spec.block.act_mask.len() != nconv {
        bad(
            "block.act_mask",
            &format!("length must equal the block's convolution count ({nconv})"),
        );
    }
    if spec.block.norm_mask.len() != nconv {
        bad(
            "block.norm_mask",
            &format!("length must equal the block's convolution count ({nconv})"),
        );
    }
    if spec.num_classes < 1 {
        bad("head.classes", "must be >= 1");
    }
    if spec.name.is_empty() {
        bad("name", "must be nonempty");
    }
    out
}

fn require_valid(spec: &ArchitectureSpec) -> Result<(), SpecError> {
    let violations = validate(spec);
    if violations.is_empty() {
        Ok(())
    } else {
        let joined: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        Err(SpecError::Invalid(joined.join("; ")))
    }
}

/// Exact analytic parameter total of the network a spec realizes to.
///
/// Counts conv weights (convs carry no bias), affine pairs for every
/// unmasked normalization, SE gate weights and biases with hidden width
/// ceil(W/r), one learnable scalar per parametric activation instance
/// (two for PSSiLU), projection shortcuts, and the classifier head. The
/// result must agree exactly with the tensor enumeration of a built
/// network ([`crate::netbuild::Network::describe`]).
pub fn count_params(spec: &ArchitectureSpec, input_channels: usize) -> Result<u64, SpecError> {
    require_valid(spec)?;
    let act_pp = spec.activation.param_count() as u64;
    let mut total: u64 = 0;

    // stem: conv + norm + activation
    let k = spec.stem.kernel() as u64;
    let sw = spec.stem.out_width as u64;
    total += input_channels as u64 * sw * k * k + 2 * sw + act_pp;

    let mut c_in = spec.stem.out_width as u64;
    for (i, st) in spec.stages.iter().enumerate() {
        let w = st.width as u64;
        let out = spec.block.out_channels(st.width) as u64;
        for j in 0..st.depth {
            let convs: Vec<(u64, u64)> = match spec.block.kind {
                BlockKind::Bottleneck => vec![(c_in * w, w), (9 * w * w, w), (w * out, out)],
                BlockKind::Basic => vec![(9 * c_in * w, w), (9 * w * out, out)],
            };
            for (ci, (weights, och)) in convs.iter().enumerate() {
                total += weights;
                if spec.block.norm_mask[ci] {
                    total += 2 * och;
                }
            }
            if let Some(r) = spec.block.se_ratio {
                let h = st.width.div_ceil(r) as u64;
                total += w * h + h + h * w + w;
            }
            total += act_pp * spec.block.act_mask.iter().filter(|&&f| f).count() as u64;
            let strided = j == 0 && (i > 0 || spec.stem.defers_downsampling());
            if j == 0 && (strided || c_in != out) {
                total += c_in * out + 2 * out;
            }
            c_in = out;
        }
    }

    total += c_in * spec.num_classes as u64 + spec.num_classes as u64;
    Ok(total)
}

/// The four roadmap transforms that robustify an architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Principle {
    DepthWidth,
    ConvStem,
    SqueezeExcite,
    SmoothAct,
}

impl Principle {
    pub const ALL: [Principle; 4] = [
        Principle::DepthWidth,
        Principle::ConvStem,
        Principle::SqueezeExcite,
        Principle::SmoothAct,
    ];
}

/// Applies one robustify principle, returning a new spec.
///
/// `DepthWidth` looks the replacement stage table up by the spec's name;
/// pass explicit stages through [`robustify_step_with`] for unregistered
/// names. The other three steps are idempotent.
pub fn robustify_step(
    spec: &ArchitectureSpec,
    principle: Principle,
) -> Result<ArchitectureSpec, SpecError> {
    robustify_step_with(spec, principle, None)
}

/// Like [`robustify_step`], with an explicit stage table overriding the
/// registry for the `DepthWidth` step.
pub fn robustify_step_with(
    spec: &ArchitectureSpec,
    principle: Principle,
    stages: Option<&[StageSpec]>,
) -> Result<ArchitectureSpec, SpecError> {
    require_valid(spec)?;
    let mut next = spec.clone();
    match principle {
        Principle::DepthWidth => {
            let table = match stages {
                Some(t) => t.to_vec(),
                None => stage_table_for(&spec.name)
                    .ok_or_else(|| SpecError::NeedsExplicitStages(spec.name.clone()))?,
            };
            next.stages = table;
        }
        Principle::ConvStem => {
            // CIFAR-family stems keep their 3x3 stride-1 topology and only
            // widen; downsampling stems become postponed downsampling.
            next.stem = StemSpec {
                kind: match spec.stem.kind {
                    StemKind::Cifar => StemKind::Cifar,
                    _ => StemKind::Postponed,
                },
                out_width: 96,
            };
        }
        Principle::SqueezeExcite => {
            next.block.se_ratio = Some(4);
        }
        Principle::SmoothAct => {
            next.activation = ActivationKind::Silu;
        }
    }
    Ok(next)
}

/// Applies all four principles in roadmap order and prefixes the name
/// with `Ra` (robustified architecture).
pub fn robustify_all(spec: &ArchitectureSpec) -> Result<ArchitectureSpec, SpecError> {
    let mut out = spec.clone();
    for p in Principle::ALL {
        out = robustify_step(&out, p)?;
    }
    if !out.name.starts_with("Ra") {
        out.name = format!("Ra{}", out.name);
    }
    Ok(out)
}
