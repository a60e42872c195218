use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bridgerec::checkpoint::hash_dir;

const TINY: &str = r#"
seed = 3

[dataset]
name = "tiny"
format = "synthetic"
min_user = 3
min_item = 1

[dataset.synthetic]
n_users = 24
n_items = 30
min_interactions = 5
max_interactions = 6

[drs]
kind = "gmf"
dim = 8

[drs.train]
epochs = 2

[lm]
n_layers = 1
n_heads = 2
d_model = 8
ffn_width = 16
context_limit = 256

[training]
eta1 = 1e-3
eta2 = 1e-3
max_epochs = 1

[eval]
history_cap = 2
candidate_mix = 0.0
popularity_alpha = 0.0
seeds = [1]
gammas = [0.0, 0.1]

[output]
dir = "out"
"#;

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        fs::write(root.join("run.toml"), config).unwrap();
        Self { _dir: dir, root }
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_bridgerec"))
            .current_dir(&self.root)
            .env_remove("BRIDGEREC_OUT")
            .env("BRIDGEREC_THREADS", "1")
            .args(["--config", "run.toml"])
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn out(&self, rel: &str) -> PathBuf {
        self.root.join("out").join(rel)
    }
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn missing_raw_file_fails_naming_the_path() {
    let config = TINY.replace(
        "format = \"synthetic\"",
        "format = \"tsv\"\npath = \"nowhere/ratings.tsv\"",
    );
    let ws = Workspace::new(&config);
    let out = ws.run(&["prepare"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nowhere/ratings.tsv"), "{err}");
}

#[test]
fn width_mismatch_is_rejected() {
    let ws = Workspace::new(TINY);
    let out = ws.run(&["--set", "lm.d_model=16", "prepare"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("drs.dim = 8") && err.contains("lm.d_model = 16"),
        "{err}"
    );
}

#[test]
fn later_stages_require_earlier_artifacts() {
    let ws = Workspace::new(TINY);
    let out = ws.run(&["train-drs"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bridgerec prepare"));
    ws.ok(&["prepare"]);
    let out = ws.run(&["train-joint"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bridgerec train-drs"));
}

#[test]
fn prepare_writes_identical_datasets_and_table_statistics() {
    let ws = Workspace::new(TINY);
    let stdout = ws.ok(&["prepare"]);
    assert!(stdout.contains("| tiny | 24 | 30 |"), "{stdout}");
    let first = hash_dir(&ws.out("dataset")).unwrap();
    ws.ok(&["prepare"]);
    assert_eq!(hash_dir(&ws.out("dataset")).unwrap(), first);
    let stats = read_json(&ws.out("dataset/stats.json"));
    for key in ["dataset", "users", "items", "interactions", "sparsity"] {
        assert!(stats.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn pipeline_is_reproducible_and_resumable() {
    let a = Workspace::new(TINY);
    let b = Workspace::new(TINY);
    for ws in [&a, &b] {
        ws.ok(&["prepare"]);
        ws.ok(&["train-drs"]);
        ws.ok(&["train-joint"]);
    }
    for rel in ["drs/checkpoint", "drs/snapshot", "joint/full_g0.1"] {
        assert_eq!(
            hash_dir(&a.out(rel)).unwrap(),
            hash_dir(&b.out(rel)).unwrap(),
            "{rel}"
        );
    }

    let history = fs::read_to_string(a.out("joint/full_g0.1/history.jsonl")).unwrap();
    assert!(!history.is_empty());
    for line in history.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["step", "L_llm", "L_drs", "L_m1", "L_m2", "L", "gamma"] {
            assert!(v.get(key).is_some(), "step record lacks {key}: {line}");
        }
    }
    assert!(!fs::read_to_string(a.out("drs/history.jsonl"))
        .unwrap()
        .is_empty());

    // resuming a finished run reproduces it
    let before = hash_dir(&a.out("joint/full_g0.1")).unwrap();
    a.ok(&["train-joint", "--resume"]);
    assert_eq!(hash_dir(&a.out("joint/full_g0.1")).unwrap(), before);

    let stdout = a.ok(&["eval"]);
    let rows = read_json(&a.out("eval/full_g0.1/report.json"));
    let tags: Vec<&str> = rows
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["model_tag"].as_str().unwrap())
        .collect();
    assert_eq!(tags, ["bdlm-llm", "bdlm-drs", "drs-only"]);
    assert!(stdout.contains("bdlm-drs"));
    assert!(a.out("eval/full_g0.1/report.csv").exists());
}

#[test]
fn ablate_and_sweep_emit_every_requested_row_and_plot() {
    let ws = Workspace::new(TINY);
    ws.ok(&["prepare"]);
    ws.ok(&["ablate", "--variants", "full,wo_JL,wo_PE,wo_ET"]);
    let rows = read_json(&ws.out("ablation/summary.json"));
    let variants: Vec<&str> = rows
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["variant"].as_str().unwrap())
        .collect();
    for v in ["full", "wo_JL", "wo_PE", "wo_ET", "drs-only"] {
        assert!(variants.contains(&v), "{v} missing from {variants:?}");
    }
    assert!(fs::read_to_string(ws.out("ablation/ablation.svg"))
        .unwrap()
        .contains("class=\"bar\""));

    ws.ok(&["sweep"]);
    let svg = fs::read_to_string(ws.out("sweep/sweep.svg")).unwrap();
    assert_eq!(svg.matches("class=\"series\"").count(), 2);
    let data = fs::read_to_string(ws.out("sweep/sweep.data.csv")).unwrap();
    assert!(data.starts_with("series,x,mean,sd"));
    assert_eq!(data.lines().count(), 1 + 2 * 2);

    let report = ws.ok(&["report"]);
    assert!(report.contains("## Gamma sweep: tiny"));
    let svg = fs::read_to_string(ws.out("report/gamma.svg")).unwrap();
    assert_eq!(svg.matches("class=\"series\"").count(), 1);
}

#[test]
fn output_directory_can_come_from_the_environment() {
    let ws = Workspace::new(TINY);
    let status = Command::new(env!("CARGO_BIN_EXE_bridgerec"))
        .current_dir(&ws.root)
        .env("BRIDGEREC_OUT", "elsewhere")
        .args(["--config", "run.toml", "prepare"])
        .output()
        .unwrap();
    assert!(status.status.success());
    assert!(ws.root.join("elsewhere/dataset/meta.json").exists());
    assert!(!ws.out("dataset").exists());
}
