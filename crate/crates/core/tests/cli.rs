//! End-to-end runs of the command-line surface.

use rarch::cli::run_with_output;
use std::path::{Path, PathBuf};

fn specs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../specs")
}

fn run(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let argv = std::iter::once("rarch").chain(args.iter().copied());
    let code = run_with_output(argv, &mut out);
    (code, String::from_utf8(out).expect("utf8 output"))
}

fn spec_arg(name: &str) -> String {
    specs_dir().join(name).to_string_lossy().into_owned()
}

#[test]
fn wd_ratio_prints_published_value() {
    let (code, out) = run(&["wd-ratio", &spec_arg("ra-resnet50.spec")]);
    assert_eq!(code, 0);
    assert_eq!(out, "8.99\n");

    let (code, out) = run(&["wd-ratio", &spec_arg("resnet50.spec"), "--range", "7.5:13.5"]);
    assert_eq!(code, 0);
    assert!(out.starts_with("32.00\n"));
    assert!(out.contains("outside"));
}

#[test]
fn params_of_the_baseline_lands_near_the_printed_total() {
    let (code, out) = run(&["params", &spec_arg("resnet50.spec")]);
    assert_eq!(code, 0);
    let total: f64 = out.trim().parse().unwrap();
    assert!((total - 25.7e6).abs() / 25.7e6 <= 0.02, "{total}");
}

#[test]
fn robustify_all_reproduces_the_fixture_byte_for_byte() {
    let (code, out) = run(&["robustify", &spec_arg("resnet50.spec"), "--all"]);
    assert_eq!(code, 0);
    let fixture = std::fs::read_to_string(specs_dir().join("ra-resnet50.spec")).unwrap();
    assert_eq!(out, fixture);
}

#[test]
fn robustify_single_step_with_explicit_stages() {
    let (code, out) = run(&[
        "robustify",
        &spec_arg("resnet50.spec"),
        "--step",
        "depth-width",
        "--stages",
        "4:32,4:64",
    ]);
    assert_eq!(code, 0);
    assert!(out.contains("depths = 4, 4"));
    assert!(out.contains("widths = 32, 64"));
}

#[test]
fn unknown_command_is_a_usage_error() {
    let (code, _) = run(&["frobnicate"]);
    assert_eq!(code, 2);
}

#[test]
fn validate_reports_violations_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.spec");
    let text = std::fs::read_to_string(specs_dir().join("wrn-22-10.spec"))
        .unwrap()
        .replace("widths = 160, 320, 640", "widths = 160, 0, 640");
    std::fs::write(&bad, text).unwrap();
    let (code, out) = run(&["validate", bad.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(out.contains("violation: stages[1].width"), "{out}");

    let (code, out) = run(&["validate", &spec_arg("wrn-22-10.spec")]);
    assert_eq!(code, 0);
    assert_eq!(out, "ok\n");
}

#[test]
fn sample_output_is_byte_reproducible() {
    let (code, a) = run(&["sample", "--seed", "5", "--count", "8"]);
    assert_eq!(code, 0);
    let (_, b) = run(&["sample", "--seed", "5", "--count", "8"]);
    assert_eq!(a, b);
    let (_, c) = run(&["sample", "--seed", "6", "--count", "8"]);
    assert_ne!(a, c);
    assert!(a.starts_with("name,n,depths,widths,wd,params,error\n"));
    assert_eq!(a.lines().count(), 9);
}

#[test]
fn edf_from_error_file() {
    let dir = tempfile::tempdir().unwrap();
    let errs = dir.path().join("errors.txt");
    std::fs::write(&errs, "0.3\n0.1\n0.2\n").unwrap();
    let (code, out) = run(&["edf", "--errors", errs.to_str().unwrap()]);
    assert_eq!(code, 0);
    let expected = "x,y\n0.1,0.3333333333333333\n0.2,0.6666666666666666\n0.3,1\n";
    assert_eq!(out, expected);
}

#[test]
fn edf_derive_range_from_sample_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("samples.csv");
    let mut rows = String::from("name,n,depths,widths,wd,params,error\n");
    for i in 1..=10 {
        rows.push_str(&format!("s{i},2,1 1,{i} {i},{i},100,{}\n", i as f64 / 20.0));
    }
    std::fs::write(&csv, rows).unwrap();
    let (code, out) = run(&[
        "edf",
        "--samples",
        csv.to_str().unwrap(),
        "--derive-range",
        "--top-frac",
        "0.2",
    ]);
    assert_eq!(code, 0);
    assert_eq!(out, "1 2\n");
}

#[test]
fn build_describe_total_matches_params_command() {
    let (code, table) = run(&[
        "build-describe",
        &spec_arg("wrn-22-10.spec"),
        "--csv",
    ]);
    assert_eq!(code, 0);
    let total_row = table.lines().last().unwrap();
    let (_, params) = run(&["params", &spec_arg("wrn-22-10.spec")]);
    assert_eq!(total_row, format!("total,,{}", params.trim()));
}

#[test]
fn gen_data_train_evaluate_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy.bin");
    let (code, _) = run(&[
        "gen-data",
        "--seed",
        "3",
        "--n",
        "48",
        "--size",
        "8",
        "--classes",
        "2",
        "-o",
        data.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);

    // a tiny spec fixture for the run
    let spec = dir.path().join("tiny.spec");
    std::fs::write(
        &spec,
        "name = Tiny\n\n[stem]\nkind = cifar\nout_width = 4\n\n[stages]\ndepths = 1, 1\nwidths = 4, 8\n\n[block]\nkind = basic\n\n[activation]\nkind = silu\n\n[head]\nclasses = 2\n",
    )
    .unwrap();

    let report = dir.path().join("report.csv");
    let weights = dir.path().join("weights.bin");
    let train_args = [
        "train",
        "--spec",
        spec.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--method",
        "standard",
        "--epochs",
        "2",
        "--batch-size",
        "16",
        "--lr-max",
        "0.05",
        "--seed",
        "9",
        "--eps",
        "0.03",
        "--steps",
        "2",
        "--report",
        report.to_str().unwrap(),
        "--save-weights",
        weights.to_str().unwrap(),
    ];
    let (code, out) = run(&train_args);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("param_hash"));
    let report_bytes = std::fs::read(&report).unwrap();
    assert!(report_bytes.starts_with(b"epoch,lr,clean_loss,clean_acc,robust_acc\n"));

    // identical seeds reproduce identical hashes and CSV bytes
    let (_, out2) = run(&train_args);
    assert_eq!(out, out2);
    assert_eq!(report_bytes, std::fs::read(&report).unwrap());

    let (code, eval_out) = run(&[
        "evaluate",
        "--spec",
        spec.to_str().unwrap(),
        "--weights",
        weights.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--eps",
        "0.03",
        "--steps",
        "5",
        "--random-start",
        "--best-iterate",
        "--seed",
        "1",
    ]);
    assert_eq!(code, 0, "{eval_out}");
    assert!(eval_out.contains("clean_accuracy"));
    assert!(eval_out.contains("robust_accuracy"));

    let (code, attack_out) = run(&[
        "attack",
        "--spec",
        spec.to_str().unwrap(),
        "--weights",
        weights.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--method",
        "fgsm",
        "--eps",
        "0.05",
        "--alpha",
        "0.05",
        "--seed",
        "2",
    ]);
    assert_eq!(code, 0, "{attack_out}");
    assert!(attack_out.starts_with("adversarial_accuracy"));
}

#[test]
fn missing_file_is_a_domain_error() {
    let (code, _) = run(&["wd-ratio", "/nonexistent/x.spec"]);
    assert_eq!(code, 1);
}
