use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bfa(args: &[&str], config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bfa"))
        .args(args)
        .arg("--config")
        .arg(config)
        .env("BF_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn base_config(out: &Path) -> Value {
    json!({
        "seed": 5,
        "output_dir": out,
        "dataset": {"kind": "moons", "n_per_class": 60, "noise": 0.1},
        "models": [
            {"id": "sub", "hidden": [16, 16], "seed": 1, "train": {"epochs": 30}},
            {"id": "vic", "hidden": [16, 16], "seed": 2, "train": {"epochs": 30}}
        ],
        "pairs": [{"id": "p0", "substitute": "sub", "victim": "vic"}],
        "attack": {"inputs": {"start": 0, "end": 12}, "boundary": {"n_points": 5}},
        "studies": {"robustness": {"n_directions": 3}}
    })
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

/// File contents with the wall-time provenance field blanked.
fn snapshot(root: &Path) -> Vec<(PathBuf, String)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let text = fs::read_to_string(&path).unwrap();
                let text = text
                    .lines()
                    .map(|l| if l.trim_start().starts_with("\"wall_time_seconds\"") { "<wall time>" } else { l })
                    .collect::<Vec<_>>()
                    .join("\n");
                files.push((path.strip_prefix(root).unwrap().to_path_buf(), text));
            }
        }
    }
    files.sort();
    files
}

const COMMANDS: [&[&str]; 9] = [
    &["train"],
    &["attack"],
    &["study", "--kind", "transfer"],
    &["study", "--kind", "cosine"],
    &["study", "--kind", "distance"],
    &["study", "--kind", "robustness"],
    &["study", "--kind", "ablation"],
    &["ablate", "--kind", "n_points"],
    &["plot"],
];

#[test]
fn every_command_reruns_to_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), "c.json", &base_config(&out));
    for args in COMMANDS {
        assert!(bfa(args, &config).status.success(), "{args:?}");
    }
    let first = snapshot(&out);
    for args in COMMANDS {
        assert!(bfa(args, &config).status.success(), "{args:?}");
    }
    let second = snapshot(&out);
    assert_eq!(first.len(), 17);
    assert_eq!(first, second);
}

#[test]
fn missing_dataset_is_rejected_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut v = base_config(&out);
    v.as_object_mut().unwrap().remove("dataset");
    let config = write_config(dir.path(), "c.json", &v);
    let run = bfa(&["train"], &config);
    assert_eq!(run.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&run.stderr).contains("dataset"));
    assert!(!out.exists());
}

#[test]
fn invalid_settings_exit_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "c.json", &base_config(&dir.path().join("out")));
    assert_eq!(bfa(&["attack", "--eps", "-0.5"], &config).status.code(), Some(1));
    assert_eq!(bfa(&["attack", "--gamma", "1.5"], &config).status.code(), Some(1));
    assert_eq!(bfa(&["study", "--kind", "nonsense"], &config).status.code(), Some(1));
    assert_eq!(bfa(&["attack", "--kind", "pgd"], &config).status.code(), Some(1));

    let mut v = base_config(&dir.path().join("out"));
    v["attack"]["inputs"] = json!({"start": 0, "end": 100000});
    let config = write_config(dir.path(), "range.json", &v);
    assert_eq!(bfa(&["attack"], &config).status.code(), Some(1));
}

#[test]
fn zero_budget_leaves_inputs_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), "c.json", &base_config(&out));
    assert!(bfa(&["attack", "--eps", "0"], &config).status.success());
    let rows = csv_rows(&out.join("attack.csv"));
    assert_eq!(rows.len(), 12 * 4);
    assert!(rows.iter().all(|r| r[5] == "0"));
}

#[test]
fn attack_rows_respect_budget_and_count_queries() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), "c.json", &base_config(&out));
    assert!(bfa(&["attack", "--eps", "0.1", "--iters", "5"], &config).status.success());
    let rows = csv_rows(&out.join("attack.csv"));
    for r in &rows {
        assert!(r[5].parse::<f64>().unwrap() <= 0.1);
    }
    for chunk in rows.chunks(4) {
        let q = |i: usize| chunk[i][6].parse::<usize>().unwrap();
        assert_eq!((q(0), q(1)), (5, 5));
        assert!(q(2) > q(0) && q(3) > q(1));
    }
}

#[test]
fn self_pair_cosine_is_exactly_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut v = base_config(&out);
    v["pairs"] = json!([{"id": "self", "substitute": "sub", "victim": "sub"}]);
    let config = write_config(dir.path(), "c.json", &v);
    assert!(bfa(&["study", "--kind", "cosine"], &config).status.success());
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("cosine.json")).unwrap()).unwrap();
    for entry in report["payload"]["per_pair"].as_array().unwrap() {
        assert_eq!(entry["mean_original"]["mean"].as_f64(), Some(1.0));
    }
    let prov = &report["provenance"];
    assert_eq!(prov["seed"], 5);
    assert_eq!(prov["config_hash"].as_str().unwrap().len(), 64);
    assert!(prov["tool_version"].is_string() && prov["wall_time_seconds"].is_number());
}

#[test]
fn fully_censored_study_exits_with_empty_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = base_config(&dir.path().join("out"));
    v["studies"]["distance"] = json!({"search": {"cap": 1e-9, "tol": 1e-10}});
    let config = write_config(dir.path(), "c.json", &v);
    let run = bfa(&["study", "--kind", "distance"], &config);
    assert_eq!(run.status.code(), Some(3), "{}", String::from_utf8_lossy(&run.stderr));
}

#[test]
fn trained_models_reload_with_the_same_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), "c.json", &base_config(&out));
    assert!(bfa(&["train"], &config).status.success());
    let trained: Value = serde_json::from_str(&fs::read_to_string(out.join("train.json")).unwrap()).unwrap();

    let out2 = dir.path().join("out2");
    let mut v = base_config(&out2);
    for m in v["models"].as_array_mut().unwrap() {
        let id = m["id"].as_str().unwrap().to_string();
        m["path"] = json!(out.join(format!("models/{id}.json")));
    }
    let config = write_config(dir.path(), "reload.json", &v);
    assert!(bfa(&["train"], &config).status.success());
    let reloaded: Value = serde_json::from_str(&fs::read_to_string(out2.join("train.json")).unwrap()).unwrap();
    assert_eq!(trained["payload"], reloaded["payload"]);
    assert_eq!(fs::read(out.join("models/sub.json")).unwrap(), fs::read(out2.join("models/sub.json")).unwrap());
}

#[test]
fn config_hash_ignores_formatting_but_tracks_values() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let v = base_config(&out);
    let hash_of = |name: &str, text: String, extra: &[&str]| {
        let path = dir.path().join(name);
        fs::write(&path, text).unwrap();
        let mut args = vec!["study", "--kind", "cosine"];
        args.extend_from_slice(extra);
        assert!(bfa(&args, &path).status.success());
        let r: Value = serde_json::from_str(&fs::read_to_string(out.join("cosine.json")).unwrap()).unwrap();
        r["provenance"]["config_hash"].as_str().unwrap().to_string()
    };
    let compact = hash_of("a.json", serde_json::to_string(&v).unwrap(), &[]);
    let pretty = hash_of("b.json", serde_json::to_string_pretty(&v).unwrap(), &[]);
    let changed = hash_of("c.json", serde_json::to_string(&v).unwrap(), &["--gamma", "0.5"]);
    assert_eq!(compact, pretty);
    assert_ne!(compact, changed);
}

#[test]
fn plot_of_higher_dimensional_data_needs_a_slice() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut v = base_config(&out);
    v["dataset"] = json!({"kind": "blobs", "classes": 3, "dim": 4, "n_per_class": 30, "spread": 0.2});
    let config = write_config(dir.path(), "c.json", &v);
    assert_eq!(bfa(&["plot"], &config).status.code(), Some(1));
    v["plot"] = json!({"slice_dims": [0, 2]});
    let config = write_config(dir.path(), "s.json", &v);
    assert!(bfa(&["plot"], &config).status.success());
    assert!(fs::read_to_string(out.join("plot.svg")).unwrap().contains("victim-boundary"));
}
