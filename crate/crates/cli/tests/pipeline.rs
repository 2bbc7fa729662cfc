use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use voxelpaint_core::volume::write_nifti;
use voxelpaint_core::{MaskRole, MaskVolume, Volume};

fn voxelpaint(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voxelpaint"))
        .args(args)
        .current_dir(cwd)
        .env("VOXELPAINT_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn succeed(cwd: &Path, args: &[&str]) -> Output {
    let out = voxelpaint(cwd, args);
    assert!(
        out.status.success(),
        "voxelpaint {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_config(cwd: &Path, name: &str, value: &Value) {
    fs::write(cwd.join(name), value.to_string()).unwrap();
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn prepare_config() -> Value {
    json!({"seed": 11, "prepare": {"input": "raw", "masks": {"margin": 2}}})
}

#[test]
fn three_cases_give_fifteen_samples_in_case_dirs() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    succeed(cwd, &["synth", "--out", "raw", "--cases", "3", "--dims", "24,24,24"]);
    write_config(cwd, "run.json", &prepare_config());
    succeed(cwd, &["prepare", "--config", "run.json", "--out", "prepared"]);

    let m = manifest(&cwd.join("prepared"));
    assert_eq!(m["samples"].as_array().unwrap().len(), 15);
    assert_eq!(m["cases"].as_array().unwrap().len(), 3);
    assert!(m["skipped"].as_array().unwrap().is_empty());
    for case in ["case-000", "case-001", "case-002"] {
        let variants = fs::read_dir(cwd.join("prepared").join(case)).unwrap().count();
        assert_eq!(variants, 5, "{case}");
        let sample = cwd.join("prepared").join(case).join(format!("{case}-v0"));
        for suffix in ["-t1n", "-t1n-voided", "-mask-healthy", "-mask-unhealthy", "-mask"] {
            assert!(sample.join(format!("{case}-v0{suffix}.nii.gz")).is_file(), "{suffix}");
        }
    }
    assert!(cwd.join("prepared/prepare-config.json").is_file());
}

#[test]
fn rerun_with_same_seed_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    succeed(cwd, &["synth", "--out", "raw", "--cases", "2", "--dims", "24,24,24"]);
    write_config(cwd, "run.json", &prepare_config());
    succeed(cwd, &["prepare", "--config", "run.json", "--out", "prepared"]);
    let first = snapshot(&cwd.join("prepared"));
    fs::remove_dir_all(cwd.join("prepared")).unwrap();
    succeed(cwd, &["prepare", "--config", "run.json", "--out", "prepared"]);
    assert_eq!(first, snapshot(&cwd.join("prepared")));

    succeed(cwd, &["prepare", "--config", "run.json", "--out", "other", "--seed", "12"]);
    let other = snapshot(&cwd.join("other"));
    let key = PathBuf::from("case-000/case-000-v0/case-000-v0-mask-healthy.nii.gz");
    assert_ne!(first[&key], other[&key]);
}

#[test]
fn infeasible_case_is_skipped_with_success() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    succeed(cwd, &["synth", "--out", "raw", "--cases", "1", "--dims", "24,24,24"]);
    let dims = [12, 12, 12];
    write_nifti(&Volume::filled(dims, 100.0).unwrap(), cwd.join("raw/full-t1n.nii.gz")).unwrap();
    let tumor = MaskVolume::from_fn(dims, MaskRole::Unhealthy, |x, _, _| x >= 2).unwrap();
    write_nifti(&tumor.to_volume(), cwd.join("raw/full-mask-unhealthy.nii.gz")).unwrap();
    write_config(cwd, "run.json", &prepare_config());

    let out = succeed(cwd, &["prepare", "--config", "run.json", "--out", "prepared"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning: skipping case full"));
    let m = manifest(&cwd.join("prepared"));
    assert_eq!(m["samples"].as_array().unwrap().len(), 5);
    assert_eq!(m["skipped"][0]["case_id"], "full");
}

#[test]
fn smoke_dataset_trains_five_folds() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    succeed(cwd, &["synth", "--out", "raw", "--cases", "10", "--dims", "16,16,16"]);
    let config = json!({
        "prepare": {"input": "raw", "masks": {"margin": 1}},
        "train": {"data": "prepared", "epochs": 1, "crop": [16, 16, 16], "model": {"base_channels": 8}}
    });
    write_config(cwd, "run.json", &config);
    succeed(cwd, &["prepare", "--config", "run.json", "--out", "prepared"]);
    succeed(cwd, &["train", "--config", "run.json", "--out", "model"]);
    for k in 0..5 {
        assert!(cwd.join(format!("model/fold{k}.vxpt")).is_file(), "fold {k}");
    }
    let log = fs::read_to_string(cwd.join("model/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 5);
    let result: Value = serde_json::from_str(&fs::read_to_string(cwd.join("model/train_result.json")).unwrap()).unwrap();
    assert_eq!(result["folds"].as_array().unwrap().len(), 5);
}

#[test]
fn missing_inputs_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    let out = voxelpaint(cwd, &["prepare", "--config", "absent.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.json"));

    let out = voxelpaint(cwd, &["train", "--out", "model"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("manifest.json"));

    let out = voxelpaint(cwd, &["report", "--out", "out"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_or_data_exit_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    write_config(cwd, "typo.json", &json!({"prepare": {"inptu": "raw"}}));
    assert_eq!(voxelpaint(cwd, &["prepare", "--config", "typo.json"]).status.code(), Some(3));

    write_config(cwd, "zero.json", &json!({"train": {"epochs": 0}}));
    assert_eq!(voxelpaint(cwd, &["train", "--config", "zero.json"]).status.code(), Some(3));

    fs::write(cwd.join("summary.json"), "{\"mse\": 1}").unwrap();
    write_config(cwd, "bad.json", &json!({"report": {"summary": "summary.json"}}));
    assert_eq!(voxelpaint(cwd, &["report", "--config", "bad.json"]).status.code(), Some(3));

    assert_eq!(voxelpaint(cwd, &["infer", "--out", "x"]).status.code(), Some(3));
    assert_eq!(voxelpaint(cwd, &["bogus"]).status.code(), Some(3));
}
