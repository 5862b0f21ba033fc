//! End-to-end runs of the `biliseg` binary.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use biliseg::cli::RunConfig;
use biliseg::io;
use biliseg::metrics::MetricsReport;
use biliseg::phantom::PhantomParams;
use biliseg::preprocess::PreprocessParams;
use biliseg::Spacing;
use common::*;
use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_biliseg"));
    c.env_remove("BILISEG_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("terminated by signal")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write_json(dir: &TempDir, name: &str, v: &Value) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn phantom_params_64() -> PhantomParams {
    let mut p = phantom_params(dims(64, 64, 32), 0.0, 7);
    p.segment_length = 12.0;
    p
}

/// Clean phantom written to `dir`; returns (volume, truth, params).
fn make_phantom(dir: &TempDir) -> (PathBuf, PathBuf, PhantomParams) {
    let p = phantom_params_64();
    let cfg = write_json(dir, "phantom.json", &serde_json::to_value(&p).unwrap());
    let vol = dir.path().join("phantom.nii");
    let truth = dir.path().join("truth.nii");
    let o = run(&["phantom", "--config", s(&cfg), "--out", s(&vol), "--truth", s(&truth)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    (vol, truth, p)
}

fn evaluate(dir: &TempDir, pred: &Path, truth: &Path, name: &str) -> (i32, Option<Value>) {
    let out = dir.path().join(name);
    let o = run(&["evaluate", "--in", s(pred), "--truth", s(truth), "--out", s(&out)]);
    let report = fs::read_to_string(&out).ok().map(|t| serde_json::from_str(&t).unwrap());
    (code(&o), report)
}

#[test]
fn shipped_configs_parse() {
    let c = configs();
    let p: PhantomParams = serde_json::from_str(&fs::read_to_string(c.join("phantom.json")).unwrap()).unwrap();
    p.validate().unwrap();
    let pre: PreprocessParams = serde_json::from_str(&fs::read_to_string(c.join("preprocess.json")).unwrap()).unwrap();
    pre.validate().unwrap();
    for name in ["segment-threshold.json", "segment-floodfill.json", "segment-regiongrow.json"] {
        let rc: RunConfig = serde_json::from_str(&fs::read_to_string(c.join(name)).unwrap()).unwrap();
        rc.segmentation.validate(p.dims).unwrap();
    }
    let _: std::collections::BTreeMap<String, Vec<PathBuf>> =
        serde_json::from_str(&fs::read_to_string(c.join("compare.json")).unwrap()).unwrap();
}

#[test]
fn phantom_writes_volume_and_truth() {
    let dir = TempDir::new().unwrap();
    let (vol, truth, p) = make_phantom(&dir);
    let v = io::read_volume(&vol).unwrap();
    let t = io::read_mask(&truth).unwrap();
    assert_eq!(v.dims(), p.dims);
    assert_eq!(t.spacing(), Spacing::new(1.0, 1.0, 1.5).unwrap());
    assert!(t.count() > 0);
}

#[test]
fn phantom_rejects_malformed_json_without_outputs() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, "{ \"dims\": [64, 64").unwrap();
    let vol = dir.path().join("v.nii");
    let truth = dir.path().join("t.nii");
    let o = run(&["phantom", "--config", s(&cfg), "--out", s(&vol), "--truth", s(&truth)]);
    assert_eq!(code(&o), 2);
    assert!(!vol.exists() && !truth.exists());
}

#[test]
fn phantom_reports_io_failure() {
    let dir = TempDir::new().unwrap();
    let cfg = write_json(&dir, "p.json", &serde_json::to_value(phantom_params_64()).unwrap());
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let vol = blocker.join("v.nii");
    let truth = blocker.join("t.nii");
    let o = run(&["phantom", "--config", s(&cfg), "--out", s(&vol), "--truth", s(&truth)]);
    assert_eq!(code(&o), 3);
    // truth write failing must not leave the volume behind either
    let ok_vol = dir.path().join("v.nii");
    let o = run(&["phantom", "--config", s(&cfg), "--out", s(&ok_vol), "--truth", s(&truth)]);
    assert_eq!(code(&o), 3);
    assert!(!ok_vol.exists());
}

#[test]
fn oracle_thresholds_reproduce_truth() {
    let dir = TempDir::new().unwrap();
    let (vol, truth, p) = make_phantom(&dir);
    let mid = (p.fg_mean + p.bg_mean) / 2.0;
    let cfg = write_json(&dir, "seg.json", &json!({
        "segmentation": { "method": "threshold", "t_min": mid, "t_max": 255.0 }
    }));
    let mask = dir.path().join("mask.nii");
    let o = run(&["segment", "--in", s(&vol), "--out", s(&mask), "--config", s(&cfg), "--method", "threshold"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (c, report) = evaluate(&dir, &mask, &truth, "r.json");
    assert_eq!(c, 0);
    let r = report.unwrap();
    assert_eq!(r["dsc"], 1.0);
    assert_eq!(r["hd_mm"], 0.0);
    assert_eq!(r["rvd"], 0.0);
}

#[test]
fn method_flag_must_agree_with_config() {
    let dir = TempDir::new().unwrap();
    let (vol, _, _) = make_phantom(&dir);
    let cfg = write_json(&dir, "seg.json", &json!({
        "segmentation": { "method": "threshold", "t_min": 100.0, "t_max": 255.0 }
    }));
    let mask = dir.path().join("mask.nii");
    let o = run(&["segment", "--in", s(&vol), "--out", s(&mask), "--config", s(&cfg), "--method", "floodfill"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn regiongrow_sidecar_records_defaults_and_replays() {
    let dir = TempDir::new().unwrap();
    let (vol, _, p) = make_phantom(&dir);
    let seed = root_voxel(&p);
    let cfg = write_json(&dir, "seg.json", &json!({
        "segmentation": { "method": "regiongrow", "seed": seed }
    }));
    let mask = dir.path().join("rg.nii");
    let o = run(&["segment", "--in", s(&vol), "--out", s(&mask), "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let sidecar_path = dir.path().join("rg.nii.json");
    let sidecar: Value = serde_json::from_str(&fs::read_to_string(&sidecar_path).unwrap()).unwrap();
    let seg = &sidecar["segmentation"];
    assert_eq!(seg["k"], 0.3);
    assert_eq!(seg["R"], 100.0);
    assert_eq!(seg["window"], 3);
    assert_eq!(seg["propagate_slices"], true);
    assert_eq!(sidecar["input"], s(&vol));

    // the sidecar alone replays the run
    let first_mask = fs::read(&mask).unwrap();
    let first_sidecar = fs::read(&sidecar_path).unwrap();
    let replay_cfg = dir.path().join("replay.json");
    fs::copy(&sidecar_path, &replay_cfg).unwrap();
    let o = run(&["segment", "--config", s(&replay_cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(&mask).unwrap(), first_mask);
    assert_eq!(fs::read(&sidecar_path).unwrap(), first_sidecar);
}

#[test]
fn seed_outside_volume_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let mut p = phantom_params(dims(64, 64, 64), 0.0, 1);
    p.segment_length = 12.0;
    let pc = write_json(&dir, "p.json", &serde_json::to_value(&p).unwrap());
    let vol = dir.path().join("v.nii");
    let truth = dir.path().join("t.nii");
    assert_eq!(code(&run(&["phantom", "--config", s(&pc), "--out", s(&vol), "--truth", s(&truth)])), 0);
    for seg in [
        json!({ "method": "floodfill", "seed": [999, 0, 0], "tolerance": 10.0 }),
        json!({ "method": "regiongrow", "seed": [999, 0, 0] }),
    ] {
        let method = seg["method"].clone();
        let cfg = write_json(&dir, "seg.json", &json!({ "segmentation": seg }));
        let out = dir.path().join("m.nii");
        let o = run(&["segment", "--in", s(&vol), "--out", s(&out), "--config", s(&cfg)]);
        assert_eq!(code(&o), 2, "{method}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!out.exists());
    }
}

#[test]
fn empty_segmentation_exits_4_but_writes_mask() {
    let dir = TempDir::new().unwrap();
    let (vol, _, _) = make_phantom(&dir);
    let cfg = write_json(&dir, "seg.json", &json!({
        "segmentation": { "method": "threshold", "t_min": 250.0, "t_max": 255.0 }
    }));
    let mask = dir.path().join("empty.nii");
    let o = run(&["segment", "--in", s(&vol), "--out", s(&mask), "--config", s(&cfg)]);
    assert_eq!(code(&o), 4);
    assert!(io::read_mask(&mask).unwrap().is_empty());
}

#[test]
fn preprocess_command_crops_and_stretches() {
    let dir = TempDir::new().unwrap();
    // noise keeps the 1st and 99th percentiles apart on a sparse tree
    let mut p = phantom_params_64();
    p.noise_std = 10.0;
    let cfg = write_json(&dir, "p.json", &serde_json::to_value(&p).unwrap());
    let vol = dir.path().join("v.nii");
    let truth = dir.path().join("t.nii");
    assert_eq!(code(&run(&["phantom", "--config", s(&cfg), "--out", s(&vol), "--truth", s(&truth)])), 0);
    let out = dir.path().join("pre.nii");
    let o = run(&["preprocess", "--in", s(&vol), "--out", s(&out), "--config", s(&configs().join("preprocess.json"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = io::read_volume(&out).unwrap();
    let (lo, hi) = v.min_max();
    assert_eq!((lo, hi), (0.0, 255.0));
    assert!(v.dims().len() < 64 * 64 * 32);
}

#[test]
fn evaluate_reports_identity_and_geometry_errors() {
    let dir = TempDir::new().unwrap();
    let (_, truth, _) = make_phantom(&dir);
    let (c, r) = evaluate(&dir, &truth, &truth, "self.json");
    assert_eq!(c, 0);
    let r = r.unwrap();
    for k in ["outliers", "missed_components", "false_communicating", "false_non_communicating"] {
        assert_eq!(r[k], 0, "{k}");
    }
    assert_eq!((r["dsc"].as_f64(), r["hd_mm"].as_f64(), r["rvd"].as_f64()), (Some(1.0), Some(0.0), Some(0.0)));

    let other = dir.path().join("small.nii");
    io::write_mask(&biliseg::Mask::from_indices(dims(8, 8, 8), Spacing::default(), &[[1, 1, 1]]).unwrap(), &other).unwrap();
    let (c, _) = evaluate(&dir, &other, &truth, "mismatch.json");
    assert_eq!(c, 2);

    let empty = dir.path().join("empty.nii");
    io::write_mask(&biliseg::Mask::empty(dims(8, 8, 8), Spacing::default()), &empty).unwrap();
    let (c, _) = evaluate(&dir, &other, &empty, "empty.json");
    assert_eq!(c, 4);
}

#[test]
fn evaluate_counts_a_split_duct() {
    let dir = TempDir::new().unwrap();
    let d = dims(12, 5, 5);
    let bar: Vec<[usize; 3]> = (1..11).map(|x| [x, 2, 2]).collect();
    let mut pieces: Vec<[usize; 3]> = bar.iter().copied().filter(|c| c[0] != 5).collect();
    pieces.push([10, 0, 0]);
    let gt = dir.path().join("gt.nii");
    let pred = dir.path().join("pred.nii");
    io::write_mask(&biliseg::Mask::from_indices(d, Spacing::default(), &bar).unwrap(), &gt).unwrap();
    io::write_mask(&biliseg::Mask::from_indices(d, Spacing::default(), &pieces).unwrap(), &pred).unwrap();
    let out = dir.path().join("split.csv");
    let o = run(&["evaluate", "--in", s(&pred), "--truth", s(&gt), "--out", s(&out), "--format", "csv", "--connectivity", "6"]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(&out).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[4..], ["1", "0", "1"]);
    let o = run(&["evaluate", "--in", s(&pred), "--truth", s(&gt), "--out", s(&out), "--connectivity", "8"]);
    assert_eq!(code(&o), 2);
}

fn mock_report(dsc: f64) -> MetricsReport {
    MetricsReport {
        dsc,
        hd_mm: 1.0 + dsc,
        hd_directed_pred_to_gt: 1.0,
        hd_directed_gt_to_pred: 1.0 + dsc,
        rvd: 0.2,
        outliers: 2,
        missed_components: 0,
        false_communicating: 1,
        false_non_communicating: 0,
    }
}

fn write_reports(dir: &TempDir, method: &str, dscs: &[f64]) -> Vec<String> {
    dscs.iter()
        .enumerate()
        .map(|(i, &d)| {
            let p = write_json(dir, &format!("{method}-{i}.json"), &serde_json::to_value(mock_report(d)).unwrap());
            format!("{method}={}", s(&p))
        })
        .collect()
}

fn compare(inputs: &[String], out: &Path, format: &str) -> Output {
    let mut args = vec!["compare".to_string()];
    for i in inputs {
        args.push("--in".into());
        args.push(i.clone());
    }
    args.extend(["--out".into(), s(out).into(), "--format".into(), format.into()]);
    bin().args(&args).output().unwrap()
}

#[test]
fn compare_identical_methods_is_not_significant() {
    let dir = TempDir::new().unwrap();
    let dscs = [0.7, 0.8, 0.9];
    let mut inputs = write_reports(&dir, "a", &dscs);
    inputs.extend(write_reports(&dir, "b", &dscs));
    let out = dir.path().join("table.json");
    let o = compare(&inputs, &out, "json");
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let t: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let dsc = &t["anova"][0];
    assert_eq!(dsc["metric"], "DSC");
    assert_eq!(dsc["result"]["f_stat"], 0.0);
    assert_eq!(dsc["result"]["p_value"], 1.0);
    assert_eq!(dsc["result"]["significant"], false);
    // counts are constant per case: test undefined, reported as such
    assert!(t["anova"][3]["result"].is_null());

    let md = dir.path().join("table.md");
    assert_eq!(code(&compare(&inputs, &md, "markdown")), 0);
    let text = fs::read_to_string(&md).unwrap();
    assert!(!text.contains('*'), "{text}");
    assert!(text.contains("p=1.0000"));
}

#[test]
fn compare_renders_mean_spread_cells() {
    let dir = TempDir::new().unwrap();
    // two values with mean 0.819 and sample std 0.057
    let h = 0.057 / 2f64.sqrt();
    let mut inputs = write_reports(&dir, "threshold", &[0.819 - h, 0.819 + h]);
    inputs.extend(write_reports(&dir, "floodfill", &[0.70, 0.72]));
    let out = dir.path().join("t.csv");
    assert_eq!(code(&compare(&inputs, &out, "csv")), 0);
    let csv = fs::read_to_string(&out).unwrap();
    assert!(csv.contains("threshold,0.819 ±0.057,"), "{csv}");
    assert!(csv.lines().last().unwrap().starts_with("ANOVA,p="));
}

#[test]
fn compare_needs_two_balanced_methods() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("t.json");
    let one = write_reports(&dir, "a", &[0.5, 0.6]);
    assert_eq!(code(&compare(&one, &out, "json")), 2);
    let mut unbalanced = one.clone();
    unbalanced.extend(write_reports(&dir, "b", &[0.5, 0.6, 0.7]));
    assert_eq!(code(&compare(&unbalanced, &out, "json")), 2);
    assert_eq!(code(&compare(&["nonsense".to_string()], &out, "json")), 2);
    assert!(!out.exists());
}

#[test]
fn mesh_command_writes_binary_stl() {
    let dir = TempDir::new().unwrap();
    let (_, truth, _) = make_phantom(&dir);
    let out = dir.path().join("truth.stl");
    let o = run(&["mesh", "--in", s(&truth), "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let bytes = fs::read(&out).unwrap();
    let n = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    assert!(n > 0);
    assert_eq!(bytes.len(), 84 + 50 * n);
}

#[test]
fn commands_are_idempotent_and_thread_count_independent() {
    let dir = TempDir::new().unwrap();
    let mut p = phantom_params_64();
    p.noise_std = 20.0;
    let cfg = write_json(&dir, "p.json", &serde_json::to_value(&p).unwrap());
    let seg = write_json(&dir, "seg.json", &json!({
        "segmentation": { "method": "regiongrow", "seed": root_voxel(&p) },
        "preprocess": { "crop_enabled": true }
    }));

    let pipeline = |tag: &str, threads: Option<&str>| -> Vec<Vec<u8>> {
        let f = |n: &str| dir.path().join(format!("{tag}-{n}"));
        let go = |args: &[&str]| {
            let mut c = bin();
            if let Some(t) = threads {
                c.env("BILISEG_THREADS", t);
            }
            let o = c.args(args).output().unwrap();
            assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        };
        go(&["phantom", "--config", s(&cfg), "--out", s(&f("v.nii")), "--truth", s(&f("t.nii"))]);
        go(&["segment", "--in", s(&f("v.nii")), "--out", s(&f("m.nii")), "--config", s(&seg)]);
        go(&["evaluate", "--in", s(&f("m.nii")), "--truth", s(&f("t.nii")), "--out", s(&f("r.json"))]);
        go(&["mesh", "--in", s(&f("m.nii")), "--out", s(&f("m.stl"))]);
        ["v.nii", "t.nii", "m.nii", "r.json", "m.stl"].iter().map(|n| fs::read(f(n)).unwrap()).collect()
    };
    let a = pipeline("a", None);
    let b = pipeline("a", None);
    let c = pipeline("c", Some("1"));
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&run(&["frobnicate"])), 2);
    assert_eq!(code(&run(&["evaluate", "--in", "x.nii"])), 2);
    let o = bin().env("BILISEG_THREADS", "many").args(["mesh", "--in", "a", "--out", "b"]).output().unwrap();
    assert_eq!(code(&o), 2);
    assert_eq!(code(&run(&["mesh", "--in", "/nonexistent/in.nii", "--out", "/tmp/x.stl"])), 3);
}
