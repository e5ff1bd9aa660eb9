mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybrid-ebm")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn field(o: &Output, key: &str) -> String {
    let text = stdout(o);
    let line = text.lines().find(|l| l.starts_with(key)).unwrap_or_else(|| panic!("no `{key}` in {text}"));
    line[key.len()..].trim().to_string()
}

fn p(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    fs::write(dir.path().join(name), text).unwrap();
    p(dir, name)
}

#[test]
fn quantize_reports_lower_msqe_with_more_levels() {
    let dir = tempfile::tempdir().unwrap();
    let data: String = std::iter::once("value\n".to_string())
        .chain((0..200).map(|i| format!("{}\n", (i as f64 * 0.37).sin() * 10.0)))
        .collect();
    let input = write(&dir, "values.csv", &data);
    let run = |levels: &str, out: &str| {
        cli(&["quantize", "--input", &input, "--min", "-10", "--max", "10", "--levels", levels, "--out", &p(&dir, out)])
    };
    let q3 = run("3", "q3.csv");
    let q9 = run("9", "q9.csv");
    assert!(q3.status.success() && q9.status.success());
    let m3: f64 = field(&q3, "msqe:").parse().unwrap();
    let m9: f64 = field(&q9, "msqe:").parse().unwrap();
    assert!(m9 < m3, "{m9} vs {m3}");
    assert_eq!(field(&q3, "thresholds:"), format!("{},{}", -10.0 + 20.0 / 3.0, -10.0 + 40.0 / 3.0));
    let series = fs::read_to_string(dir.path().join("q9.csv")).unwrap();
    assert!(series.starts_with("step,level\n0,4\n"));
    assert_eq!(series.lines().count(), 201);
}

#[test]
fn quantize_rejects_empty_range() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(&dir, "values.csv", "value\n1\n");
    let o =
        cli(&["quantize", "--input", &input, "--min", "2", "--max", "2", "--levels", "3", "--out", &p(&dir, "q.csv")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("q.csv").exists());
}

#[test]
fn quantize_rejects_non_numeric_data() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(&dir, "values.csv", "value\n1\nn/a\n");
    let o =
        cli(&["quantize", "--input", &input, "--min", "0", "--max", "2", "--levels", "3", "--out", &p(&dir, "q.csv")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("n/a"));
}

fn seven_input_args(dir: &TempDir, data: &str, policy: &str) -> Vec<String> {
    let inputs = common::INPUTS.iter().map(|n| format!("{n}:0:2:3")).collect::<Vec<_>>().join(",");
    [
        "build-lut",
        "--data",
        data,
        "--inputs",
        &inputs,
        "--output",
        "maize:0:8:9",
        "--out",
        &p(dir, "t.lut"),
        "--policy",
        policy,
    ]
    .map(String::from)
    .to_vec()
}

#[test]
fn build_lut_counts_seven_input_combinations() {
    let dir = tempfile::tempdir().unwrap();
    let header = format!("{},maize\n", common::INPUTS.join(","));
    let data = write(&dir, "sparse.csv", &format!("{header}0,0,0,0,0,0,0,1\n2,2,2,2,2,2,2,8\n"));
    let args = seven_input_args(&dir, &data, "hold");
    let o = cli(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(field(&o, "total combinations:"), "2187");
    assert_eq!(field(&o, "filled:"), "2");

    // every combination present once: the table is complete
    let mut rows = header;
    for i in 0..2187u32 {
        let mut key = Vec::new();
        let mut rest = i;
        for _ in 0..7 {
            key.push((rest % 3) as f64 * 0.9 + 0.05);
            rest /= 3;
        }
        let line: Vec<String> = key.iter().map(f64::to_string).collect();
        rows.push_str(&format!("{},{}\n", line.join(","), i % 9));
    }
    let full = write(&dir, "full.csv", &rows);
    let args = seven_input_args(&dir, &full, "error");
    let o = cli(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(o.status.success());
    assert_eq!(field(&o, "filled:"), "2187");
    assert!(fs::read_to_string(dir.path().join("t.lut")).unwrap().contains("policy error"));
}

#[test]
fn build_lut_merges_conflicting_duplicates_by_median() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(&dir, "d.csv", "a,y\n0.1,0\n0.2,3\n0.3,4\n0.9,8\n");
    let o =
        cli(&["build-lut", "--data", &data, "--inputs", "a:0:1:2", "--output", "y:0:8:9", "--out", &p(&dir, "t.lut")]);
    assert!(o.status.success());
    assert_eq!(field(&o, "duplicates merged:"), "1");
    assert_eq!(field(&o, "max spread:"), "4");
    let table = hybrid_ebm::format::read_lut_path(&dir.path().join("t.lut")).unwrap();
    assert_eq!(table.get(&[0]), Some(3));
    assert_eq!(table.get(&[1]), Some(8));
}

#[test]
fn build_lut_rejects_bad_variable_spec() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(&dir, "d.csv", "a,y\n0.1,0\n");
    let o = cli(&["build-lut", "--data", &data, "--inputs", "a:1:0:2", "--output", "y:3", "--out", &p(&dir, "t.lut")]);
    assert_eq!(o.status.code(), Some(1));
}

fn emulator_model(dir: &TempDir) -> String {
    let case = common::emulator_case(3, 50, 1, true);
    common::write_model_files(dir.path(), &case.model, &case.scenario).to_string_lossy().into_owned()
}

#[test]
fn simulate_is_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let model = emulator_model(&dir);
    let outputs: Vec<Vec<u8>> = ["1", "2", "5"]
        .iter()
        .map(|t| {
            let out = p(&dir, &format!("out{t}"));
            let o =
                cli(&["simulate", "--model", &model, "--runs", "300", "--seed", "5", "--threads", t, "--out", &out]);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            fs::read(Path::new(&out).join("aggregate.csv")).unwrap()
        })
        .collect();
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
    let text = String::from_utf8(outputs[0].clone()).unwrap();
    assert!(text.starts_with("step,element,levels,mean,std\n"));
    // yield starts at level 0 in every run
    assert!(text.lines().any(|l| l == "0,Yield,3,0,0"));
}

#[test]
fn simulate_zero_steps_writes_initial_state_only() {
    let dir = tempfile::tempdir().unwrap();
    let model = emulator_model(&dir);
    let out = p(&dir, "out");
    let o = cli(&["simulate", "--model", &model, "--steps", "0", "--runs", "3", "--keep-runs", "--out", &out]);
    assert!(o.status.success());
    let text = fs::read_to_string(Path::new(&out).join("aggregate.csv")).unwrap();
    assert!(text.lines().skip(1).all(|l| l.starts_with("0,")));
    assert_eq!(text.lines().count(), 1 + 9);
    let runs: Vec<_> = fs::read_dir(Path::new(&out).join("runs")).unwrap().collect();
    assert_eq!(runs.len(), 3);
    assert!(Path::new(&out).join("runs/run_0000.csv").exists());
}

#[test]
fn simulate_missing_entry_under_error_policy_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir, "t.lut", "input A levels=2\noutput Z levels=2\npolicy error\nentries\n0,1\n");
    let model = write(
        &dir,
        "m.ebm",
        "[elements]\nA levels=2 initial=1\nZ levels=2 initial=0\n[influences]\nA -> Z\n[rules]\nZ lookup table=\"t.lut\"\n[scenario]\nsteps = 3\nruns = 2\n",
    );
    let o = cli(&["simulate", "--model", &model, "--out", &p(&dir, "out")]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_rejects_unknown_rule_reference() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(
        &dir,
        "m.ebm",
        "[elements]\nA levels=2 initial=1\nZ levels=2 initial=0\n[influences]\nA -> Z\n[rules]\nZ incremental pos=\"B\"\n",
    );
    let o = cli(&["simulate", "--model", &model, "--out", &p(&dir, "out")]);
    assert_eq!(o.status.code(), Some(2));
}

fn aggregate_with_mean(dir: &TempDir, means: &[f64], levels: u32) -> String {
    let mut text = String::from("step,element,levels,mean,std\n");
    for (t, m) in means.iter().enumerate() {
        text.push_str(&format!("{t},Y,{levels},{m},0\n"));
    }
    write(dir, "aggregate.csv", &text)
}

#[test]
fn validate_identity_passes_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let sim = aggregate_with_mean(&dir, &[0.0, 0.5, 1.0, 0.5], 3);
    let reference = write(&dir, "ref.csv", "step,level\n0,0\n1,1\n2,2\n3,1\n");
    let o = cli(&[
        "validate",
        "--simulated",
        &sim,
        "--element",
        "Y",
        "--reference",
        &reference,
        "--min-spearman",
        "0.99",
        "--max-mae",
        "0",
    ]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(field(&o, "spearman:"), "1");
    assert_eq!(field(&o, "mae_normalized:"), "0");
    assert_eq!(field(&o, "level_match_fraction:"), "1");
}

#[test]
fn validate_fails_below_min_spearman() {
    let dir = tempfile::tempdir().unwrap();
    let sim = aggregate_with_mean(&dir, &[1.0, 0.5, 0.0], 3);
    let reference = write(&dir, "ref.csv", "step,level\n0,0\n1,1\n2,2\n");
    let o =
        cli(&["validate", "--simulated", &sim, "--element", "Y", "--reference", &reference, "--min-spearman", "0.5"]);
    assert_ne!(o.status.code(), Some(0));
    assert_eq!(field(&o, "spearman:"), "-1");
}

#[test]
fn validate_reports_mae_for_quantized_values() {
    let dir = tempfile::tempdir().unwrap();
    // levels 1,1,2,2 in 5 levels -> 0.25,0.25,0.5,0.5; simulated off by 0.125 throughout
    let sim = aggregate_with_mean(&dir, &[0.375, 0.125, 0.625, 0.375], 5);
    let reference = write(&dir, "ref.csv", "step,value\n0,0.3\n1,0.3\n2,0.5\n3,0.5\n");
    let o =
        cli(&["validate", "--simulated", &sim, "--element", "Y", "--reference", &reference, "--quantizer", "0:1:5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mae: f64 = field(&o, "mae_normalized:").parse().unwrap();
    assert!((mae - 0.125).abs() < 1e-12);
}

#[test]
fn validate_constant_reference_has_no_spearman() {
    let dir = tempfile::tempdir().unwrap();
    let sim = aggregate_with_mean(&dir, &[0.0, 0.5, 1.0], 3);
    let reference = write(&dir, "ref.csv", "step,level\n0,1\n1,1\n2,1\n");
    let o = cli(&["validate", "--simulated", &sim, "--element", "Y", "--reference", &reference]);
    assert!(o.status.success());
    assert_eq!(field(&o, "spearman:"), "absent (constant series)");
    let o = cli(&["validate", "--simulated", &sim, "--element", "Y", "--reference", &reference, "--min-spearman", "0"]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn validate_rejects_reference_past_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let sim = aggregate_with_mean(&dir, &[0.0, 0.5], 3);
    let reference = write(&dir, "ref.csv", "step,level\n0,0\n1,1\n2,2\n");
    let o = cli(&["validate", "--simulated", &sim, "--element", "Y", "--reference", &reference]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn aggregate_weekly_sum() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("date,value\n");
    for d in 1..=14 {
        text.push_str(&format!("2014-01-{d:02},{d}\n"));
    }
    let input = write(&dir, "daily.csv", &text);
    let out = p(&dir, "weekly.csv");
    let o = cli(&[
        "aggregate",
        "--input",
        &input,
        "--mode",
        "temporal",
        "--window",
        "weekly",
        "--op",
        "sum",
        "--out",
        &out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        fs::read_to_string(&out).unwrap(),
        "index,start,value,partial\n0,2014-01-01,28,false\n1,2014-01-08,77,false\n"
    );
}

#[test]
fn aggregate_spatial_mean() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(&dir, "cells.csv", "year,cell,value\n1971,a,1\n1971,b,3\n1972,a,2\n1972,b,2\n1972,c,5\n");
    let out = p(&dir, "mean.csv");
    let o = cli(&["aggregate", "--input", &input, "--mode", "spatial", "--time-column", "year", "--out", &out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&out).unwrap(), "year,value\n1971,2\n1972,3\n");
}

#[test]
fn aggregate_rejects_unknown_window() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(&dir, "daily.csv", "date,value\n2014-01-01,1\n");
    let o = cli(&[
        "aggregate",
        "--input",
        &input,
        "--mode",
        "temporal",
        "--window",
        "fortnightly",
        "--out",
        &p(&dir, "o.csv"),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    assert_eq!(cli(&["--help"]).status.code(), Some(0));
    assert_eq!(cli(&[]).status.code(), Some(1));
}
