//! Command-line surface tying the modules into reproducible runs.
//!
//! Exit codes: 0 success, 1 domain error (bad spec, unreadable file,
//! diverged run), 2 usage error. Commands that draw randomness take a
//! mandatory `--seed`; outputs are byte-stable for a fixed seed.

use crate::adversarial::{
    self, evaluate_clean, evaluate_robust, AttackConfig, TrainConfig, TrainMethod,
};
use crate::archspec::{
    self, count_params, emit_spec, in_optimal_range, parse_spec, parse_spec_lenient,
    robustify_all, robustify_step_with, wd_ratio, ArchitectureSpec, Principle, StageSpec, WdRange,
};
use crate::dataset::{self, Dataset};
use crate::designspace::{
    compute_edf, derive_range, edf_to_csv, sample_config, samples_to_csv, DesignSample,
    SampleBounds,
};
use crate::netbuild::{build_network, Network};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "rarch",
    about = "Robust CNN architecture workbench: spec analytics, design-space sampling, toy-scale adversarial training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the width-depth ratio of a spec (last stage excluded)
    WdRatio {
        spec: PathBuf,
        /// Also report membership in a lo:hi range
        #[arg(long, value_parser = parse_range)]
        range: Option<WdRange>,
    },
    /// Print the exact analytic parameter count of a spec
    Params {
        spec: PathBuf,
        #[arg(long, default_value_t = 3)]
        input_channels: usize,
    },
    /// List invariant violations (exit 1 if any)
    Validate { spec: PathBuf },
    /// Apply robustify transforms to a spec and emit the result
    Robustify {
        spec: PathBuf,
        /// Apply all four principles and prefix the name with Ra
        #[arg(long, conflicts_with = "step")]
        all: bool,
        /// Apply selected principles in order (repeatable)
        #[arg(long, value_enum)]
        step: Vec<StepArg>,
        /// Explicit stage table `d:w,d:w,...` for the depth-width step
        #[arg(long, value_parser = parse_stages)]
        stages: Option<StageList>,
        /// Write to a file instead of stdout
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Draw random configurations and emit a CSV table
    Sample {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Template spec providing stem/block/activation/head
        #[arg(long)]
        template: Option<PathBuf>,
        /// Comma-separated stage-count choices
        #[arg(long, value_delimiter = ',', default_values_t = vec![3, 4, 5, 6])]
        n_choices: Vec<usize>,
        #[arg(long, default_value_t = 60)]
        max_depth: usize,
        #[arg(long, default_value_t = 1000)]
        max_width: usize,
        /// Inclusive parameter budget `lo:hi`; draws outside are rejected
        #[arg(long, value_parser = parse_budget)]
        budget: Option<(u64, u64)>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Build empirical distribution functions over errors
    Edf {
        /// File with one error value in [0,1] per line
        #[arg(long, conflicts_with = "samples")]
        errors: Option<PathBuf>,
        /// Sample CSV (as written by `sample`) with the error column filled
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Split the samples by WD range lo:hi and emit one curve per side
        #[arg(long, value_parser = parse_range)]
        range: Option<WdRange>,
        /// Report the [min,max] WD interval of the lowest-error fraction
        #[arg(long)]
        derive_range: bool,
        #[arg(long, default_value_t = 0.1)]
        top_frac: f64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Realize a spec and print its parameter table
    BuildDescribe {
        spec: PathBuf,
        /// Input shape CxHxW
        #[arg(long, default_value = "3x32x32", value_parser = parse_shape)]
        input: (usize, usize, usize),
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Emit CSV instead of an aligned table
        #[arg(long)]
        csv: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Generate a deterministic synthetic dataset file
    GenData {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 16)]
        size: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = dataset::SYNTH_SIGNAL)]
        signal: f64,
        #[arg(long, default_value_t = dataset::SYNTH_NOISE)]
        noise: f64,
        /// Write CIFAR-10 binary records (requires 3x32x32, <= 10 classes)
        #[arg(long)]
        cifar_format: bool,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Train a network on a dataset and report per-epoch curves
    Train(TrainArgs),
    /// Attack a trained network and report adversarial accuracy
    Attack(AttackArgs),
    /// Report clean and robust accuracy of a trained network
    Evaluate(EvaluateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum StepArg {
    DepthWidth,
    ConvStem,
    SqueezeExcite,
    SmoothAct,
}

impl From<StepArg> for Principle {
    fn from(s: StepArg) -> Principle {
        match s {
            StepArg::DepthWidth => Principle::DepthWidth,
            StepArg::ConvStem => Principle::ConvStem,
            StepArg::SqueezeExcite => Principle::SqueezeExcite,
            StepArg::SmoothAct => Principle::SmoothAct,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Standard,
    FastAt,
    Sat,
    Trades,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackKind {
    Fgsm,
    Pgd,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset file (rarch container or CIFAR-10 binary)
    #[arg(long, required_unless_present = "synthetic")]
    data: Option<PathBuf>,
    /// Generate a synthetic dataset in memory instead
    #[arg(long)]
    synthetic: bool,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 16)]
    size: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = dataset::SYNTH_SIGNAL)]
    signal: f64,
    #[arg(long, default_value_t = dataset::SYNTH_NOISE)]
    noise: f64,
    /// Keep at most this many samples
    #[arg(long)]
    limit: Option<usize>,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset, CliError> {
        let mut data = if self.synthetic {
            dataset::gen_synthetic_with(
                self.data_seed,
                self.n,
                self.size,
                self.classes,
                self.signal,
                self.noise,
            )
            .map_err(domain)?
        } else {
            let path = self.data.as_ref().expect("clap enforces data|synthetic");
            dataset::load_auto(path, self.limit).map_err(domain)?
        };
        if self.synthetic {
            if let Some(limit) = self.limit {
                let per = data.channels * data.height * data.width;
                let keep = limit.min(data.len());
                data.images.truncate(keep * per);
                data.labels.truncate(keep);
            }
        }
        Ok(data)
    }
}

#[derive(Args)]
struct AttackOpts {
    /// l-infinity budget on the [0,1] pixel scale
    #[arg(long, default_value_t = 0.0)]
    eps: f64,
    /// Step size; defaults to 2.5 * eps / steps
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 10)]
    steps: usize,
    #[arg(long)]
    random_start: bool,
    #[arg(long)]
    best_iterate: bool,
}

impl AttackOpts {
    fn config(&self) -> AttackConfig {
        AttackConfig {
            eps: self.eps,
            alpha: self
                .alpha
                .unwrap_or(2.5 * self.eps / self.steps.max(1) as f64),
            steps: self.steps,
            random_start: self.random_start,
            best_iterate: self.best_iterate,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    spec: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    lr_max: f64,
    #[arg(long, default_value_t = 5e-4)]
    weight_decay: f64,
    /// TRADES trade-off coefficient
    #[arg(long, default_value_t = 6.0)]
    beta: f64,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    attack: AttackOpts,
    /// Write the per-epoch CSV report here
    #[arg(long)]
    report: Option<PathBuf>,
    /// Save final weights (rarch snapshot format)
    #[arg(long)]
    save_weights: Option<PathBuf>,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Weights snapshot produced by `train --save-weights`
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Seed for He initialization when no weights are given
    #[arg(long, default_value_t = 0)]
    init_seed: u64,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "pgd")]
    method: AttackKind,
    #[command(flatten)]
    attack: AttackOpts,
    #[arg(long)]
    seed: u64,
    /// Per-sample CSV (index,label,prediction,correct)
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    init_seed: u64,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    attack: AttackOpts,
    #[arg(long)]
    seed: u64,
}

/// A domain failure mapped to exit code 1.
#[derive(Debug)]
struct CliError(String);

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

fn domain(err: impl Display) -> CliError {
    CliError(err.to_string())
}

fn parse_range(s: &str) -> Result<WdRange, String> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| "expected lo:hi".to_string())?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad number `{lo}`"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad number `{hi}`"))?;
    WdRange::new(lo, hi).map_err(|e| e.to_string())
}

fn parse_budget(s: &str) -> Result<(u64, u64), String> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| "expected lo:hi".to_string())?;
    let lo: u64 = lo.trim().parse().map_err(|_| format!("bad number `{lo}`"))?;
    let hi: u64 = hi.trim().parse().map_err(|_| format!("bad number `{hi}`"))?;
    if lo > hi {
        return Err(format!("budget lo {lo} > hi {hi}"));
    }
    Ok((lo, hi))
}

fn parse_shape(s: &str) -> Result<(usize, usize, usize), String> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != 3 {
        return Err("expected CxHxW, e.g. 3x32x32".to_string());
    }
    let mut dims = [0usize; 3];
    for (d, p) in dims.iter_mut().zip(&parts) {
        *d = p.trim().parse().map_err(|_| format!("bad dimension `{p}`"))?;
    }
    Ok((dims[0], dims[1], dims[2]))
}

#[derive(Clone)]
struct StageList(Vec<StageSpec>);

fn parse_stages(s: &str) -> Result<StageList, String> {
    let stages = s
        .split(',')
        .map(|pair| {
            let (d, w) = pair
                .split_once(':')
                .ok_or_else(|| format!("expected d:w, got `{pair}`"))?;
            let d: usize = d.trim().parse().map_err(|_| format!("bad depth `{d}`"))?;
            let w: usize = w.trim().parse().map_err(|_| format!("bad width `{w}`"))?;
            Ok(StageSpec::new(d, w))
        })
        .collect::<Result<Vec<_>, String>>()?;
    Ok(StageList(stages))
}

fn load_spec(path: &Path) -> Result<ArchitectureSpec, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError(format!("cannot read {}: {e}", path.display())))?;
    parse_spec(&text).map_err(|e| CliError(format!("{}: {e}", path.display())))
}

fn write_artifact(path: &Option<PathBuf>, content: &str, out: &mut dyn Write) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, content)
            .map_err(|e| CliError(format!("cannot write {}: {e}", p.display()))),
        None => {
            out.write_all(content.as_bytes()).map_err(domain)?;
            Ok(())
        }
    }
}

fn load_network(
    spec_path: &Path,
    weights: &Option<PathBuf>,
    init_seed: u64,
    input: (usize, usize, usize),
) -> Result<Network, CliError> {
    let spec = load_spec(spec_path)?;
    let mut net = build_network(&spec, input, init_seed).map_err(domain)?;
    if let Some(wp) = weights {
        let bytes =
            fs::read(wp).map_err(|e| CliError(format!("cannot read {}: {e}", wp.display())))?;
        net.load_weights(&mut bytes.as_slice()).map_err(domain)?;
    }
    Ok(net)
}

/// Runs the CLI against the given argv, writing results to `out`.
pub fn run_with_output<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            let code = err.exit_code();
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            1
        }
    }
}

/// Entry point used by the binary: argv from the process environment,
/// output on stdout.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut stdout = std::io::stdout();
    run_with_output(argv, &mut stdout)
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::WdRatio { spec, range } => {
            let spec = load_spec(&spec)?;
            let ratio = wd_ratio(&spec).map_err(domain)?;
            writeln!(out, "{ratio:.2}").map_err(domain)?;
            if let Some(range) = range {
                let inside = in_optimal_range(&spec, range).map_err(domain)?;
                writeln!(
                    out,
                    "{} [{}, {}]",
                    if inside { "inside" } else { "outside" },
                    range.lo,
                    range.hi
                )
                .map_err(domain)?;
            }
            Ok(())
        }
        Command::Params {
            spec,
            input_channels,
        } => {
            let spec = load_spec(&spec)?;
            let total = count_params(&spec, input_channels).map_err(domain)?;
            writeln!(out, "{total}").map_err(domain)?;
            Ok(())
        }
        Command::Validate { spec } => {
            let text = fs::read_to_string(&spec)
                .map_err(|e| CliError(format!("cannot read {}: {e}", spec.display())))?;
            let parsed = parse_spec_lenient(&text).map_err(domain)?;
            let violations = archspec::validate(&parsed);
            if violations.is_empty() {
                writeln!(out, "ok").map_err(domain)?;
                Ok(())
            } else {
                for v in &violations {
                    writeln!(out, "violation: {v}").map_err(domain)?;
                }
                Err(CliError(format!("{} violation(s)", violations.len())))
            }
        }
        Command::Robustify {
            spec,
            all,
            step,
            stages,
            output,
        } => {
            let parsed = load_spec(&spec)?;
            let result = if all {
                robustify_all(&parsed).map_err(domain)?
            } else if step.is_empty() {
                return Err(CliError("pass --all or at least one --step".into()));
            } else {
                let mut cur = parsed;
                for s in step {
                    cur = robustify_step_with(
                        &cur,
                        s.into(),
                        stages.as_ref().map(|s| s.0.as_slice()),
                    )
                    .map_err(domain)?;
                }
                cur
            };
            write_artifact(&output, &emit_spec(&result), out)
        }
        Command::Sample {
            seed,
            count,
            template,
            n_choices,
            max_depth,
            max_width,
            budget,
            output,
        } => {
            let template = match template {
                Some(path) => load_spec(&path)?,
                None => archspec::builtin_spec("ResNet-50").expect("builtin"),
            };
            let bounds = SampleBounds {
                n_choices,
                max_depth,
                max_width,
                param_budget: budget,
            };
            let mut samples = Vec::with_capacity(count);
            for i in 0..count {
                samples.push(
                    sample_config(seed.wrapping_add(i as u64), &bounds, &template)
                        .map_err(domain)?,
                );
            }
            write_artifact(&output, &samples_to_csv(&samples), out)
        }
        Command::Edf {
            errors,
            samples,
            range,
            derive_range: derive,
            top_frac,
            output,
        } => {
            if let Some(path) = errors {
                let text = fs::read_to_string(&path)
                    .map_err(|e| CliError(format!("cannot read {}: {e}", path.display())))?;
                let values: Vec<f64> = text
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(|l| l.trim().parse::<f64>().map_err(|_| format!("bad error value `{l}`")))
                    .collect::<Result<_, _>>()
                    .map_err(CliError)?;
                let curve = compute_edf(&values).map_err(domain)?;
                return write_artifact(&output, &edf_to_csv(&curve), out);
            }
            let path = samples.ok_or_else(|| CliError("pass --errors or --samples".into()))?;
            let table = read_samples_csv(&path)?;
            if derive {
                let range = derive_range(&table, top_frac)
                    .ok_or_else(|| CliError("no samples carry errors".into()))?;
                writeln!(out, "{} {}", range.lo, range.hi).map_err(domain)?;
                return Ok(());
            }
            let errors_of = |rows: &[DesignSample]| -> Vec<f64> {
                rows.iter().filter_map(|s| s.error).collect()
            };
            match range {
                None => {
                    let curve = compute_edf(&errors_of(&table)).map_err(domain)?;
                    write_artifact(&output, &edf_to_csv(&curve), out)
                }
                Some(range) => {
                    let (inside, outside) =
                        crate::designspace::partition_by_range(table, range);
                    let mut csv = String::from("x,y,group\n");
                    for (rows, tag) in [(&inside, "inside"), (&outside, "outside")] {
                        let curve = compute_edf(&errors_of(rows)).map_err(domain)?;
                        for (x, y) in curve.xs.iter().zip(&curve.ys) {
                            csv.push_str(&format!("{x},{y},{tag}\n"));
                        }
                    }
                    write_artifact(&output, &csv, out)
                }
            }
        }
        Command::BuildDescribe {
            spec,
            input,
            seed,
            csv,
            output,
        } => {
            let parsed = load_spec(&spec)?;
            let net = build_network(&parsed, input, seed).map_err(domain)?;
            let table = net.describe();
            let text = if csv { table.to_csv() } else { table.to_text() };
            write_artifact(&output, &text, out)
        }
        Command::GenData {
            seed,
            n,
            size,
            classes,
            signal,
            noise,
            cifar_format,
            output,
        } => {
            let data = dataset::gen_synthetic_with(seed, n, size, classes, signal, noise)
                .map_err(domain)?;
            let mut buf = Vec::new();
            if cifar_format {
                dataset::write_cifar10_bin(&mut buf, &data).map_err(domain)?;
            } else {
                dataset::write_dataset(&mut buf, &data).map_err(domain)?;
            }
            fs::write(&output, buf)
                .map_err(|e| CliError(format!("cannot write {}: {e}", output.display())))?;
            writeln!(out, "wrote {} samples to {}", data.len(), output.display())
                .map_err(domain)?;
            Ok(())
        }
        Command::Train(args) => run_train(args, out),
        Command::Attack(args) => run_attack(args, out),
        Command::Evaluate(args) => run_evaluate(args, out),
    }
}

fn read_samples_csv(path: &Path) -> Result<Vec<DesignSample>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != "name,n,depths,widths,wd,params,error" {
        return Err(CliError(format!(
            "{}: unexpected header `{header}`",
            path.display()
        )));
    }
    let template = archspec::builtin_spec("ResNet-50").expect("builtin");
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(CliError(format!("row {}: expected 7 columns", i + 2)));
        }
        let ints = |s: &str| -> Result<Vec<usize>, CliError> {
            s.split_whitespace()
                .map(|v| v.parse().map_err(|_| CliError(format!("bad integer `{v}`"))))
                .collect()
        };
        let depths = ints(cols[2])?;
        let widths = ints(cols[3])?;
        let mut spec = template.clone();
        spec.name = cols[0].to_string();
        spec.stages = depths
            .into_iter()
            .zip(widths)
            .map(|(d, w)| StageSpec::new(d, w))
            .collect();
        let wd: f64 = cols[4]
            .parse()
            .map_err(|_| CliError(format!("bad wd `{}`", cols[4])))?;
        let params: u64 = cols[5]
            .parse()
            .map_err(|_| CliError(format!("bad params `{}`", cols[5])))?;
        let error = if cols[6].is_empty() {
            None
        } else {
            Some(
                cols[6]
                    .parse()
                    .map_err(|_| CliError(format!("bad error `{}`", cols[6])))?,
            )
        };
        out.push(DesignSample {
            spec,
            wd,
            params,
            error,
        });
    }
    Ok(out)
}

fn run_train(args: TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let data = args.data.load()?;
    let spec = load_spec(&args.spec)?;
    let mut net = build_network(&spec, data.image_shape(), args.seed).map_err(domain)?;
    let method = match args.method {
        MethodArg::Standard => TrainMethod::Standard,
        MethodArg::FastAt => TrainMethod::FastAt,
        MethodArg::Sat => TrainMethod::Sat,
        MethodArg::Trades => TrainMethod::Trades { beta: args.beta },
    };
    let cfg = TrainConfig {
        method,
        epochs: args.epochs,
        batch_size: args.batch_size,
        lr_max: args.lr_max,
        weight_decay: args.weight_decay,
        seed: args.seed,
        attack: args.attack.config(),
    };
    let report = adversarial::train(&mut net, &data, &cfg).map_err(domain)?;
    if let Some(path) = &args.report {
        fs::write(path, report.to_csv())
            .map_err(|e| CliError(format!("cannot write {}: {e}", path.display())))?;
    }
    if let Some(path) = &args.save_weights {
        let mut buf = Vec::new();
        net.save_weights(&mut buf).map_err(domain)?;
        fs::write(path, buf)
            .map_err(|e| CliError(format!("cannot write {}: {e}", path.display())))?;
    }
    if let Some(last) = report.epochs.last() {
        writeln!(
            out,
            "epoch {}: clean_loss {:.6} clean_acc {:.4} robust_acc {:.4}",
            last.epoch, last.clean_loss, last.clean_acc, last.robust_acc
        )
        .map_err(domain)?;
    }
    writeln!(out, "param_hash {:016x}", net.param_hash()).map_err(domain)?;
    Ok(())
}

fn run_attack(args: AttackArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let data = args.data.load()?;
    let net = load_network(&args.spec, &args.weights, args.init_seed, data.image_shape())?;
    let cfg = args.attack.config();
    let mut rng = ChaCha20Rng::seed_from_u64(args.seed);
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut correct = 0usize;
    let mut rows = String::from("index,label,prediction,correct\n");
    for chunk in indices.chunks(64) {
        let (x, labels) = data.batch(chunk);
        let adv = match args.method {
            AttackKind::Pgd => {
                adversarial::pgd(&net, &x, &labels, &cfg, &mut rng).map_err(domain)?
            }
            AttackKind::Fgsm => adversarial::fgsm(
                &net,
                &x,
                &labels,
                cfg.eps,
                cfg.alpha,
                cfg.random_start,
                &mut rng,
            )
            .map_err(domain)?,
        };
        let preds = net.predict(&adv).map_err(domain)?;
        for ((i, label), pred) in chunk.iter().zip(&labels).zip(&preds) {
            let ok = pred == label;
            correct += usize::from(ok);
            rows.push_str(&format!("{i},{label},{pred},{}\n", u8::from(ok)));
        }
    }
    if let Some(path) = &args.output {
        fs::write(path, rows)
            .map_err(|e| CliError(format!("cannot write {}: {e}", path.display())))?;
    }
    writeln!(
        out,
        "adversarial_accuracy {:.4}",
        correct as f64 / data.len().max(1) as f64
    )
    .map_err(domain)?;
    Ok(())
}

fn run_evaluate(args: EvaluateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let data = args.data.load()?;
    let net = load_network(&args.spec, &args.weights, args.init_seed, data.image_shape())?;
    let (clean_loss, clean_acc) = evaluate_clean(&net, &data).map_err(domain)?;
    let robust = evaluate_robust(&net, &data, &args.attack.config(), args.seed).map_err(domain)?;
    writeln!(out, "clean_loss {clean_loss:.6}").map_err(domain)?;
    writeln!(out, "clean_accuracy {clean_acc:.4}").map_err(domain)?;
    writeln!(out, "robust_accuracy {robust:.4}").map_err(domain)?;
    Ok(())
}
