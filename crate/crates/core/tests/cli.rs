//! End-to-end checks of the `hgmp` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hgmp::checkpoint::Checkpoint;
use hgmp::config::RunConfig;
use hgmp::encoder::init_encoder;
use hgmp::rng::derive_seed;

const CONFIG: &str = r#"
seeds = [0, 1, 2, 3, 4]
tau = 1
k = 3
shots = [1, 3]

[synthetic]
target = "paper"
num_classes = 3
signal = 0.8
seed = 2
node_types = [
  { name = "paper", count = 60, dim = 6 },
  { name = "author", count = 40, dim = 3 },
]
edges = [{ name = "paper-author", src = "paper", dst = "author", density = 1.5 }]

[encoder]
hidden = 12
latent = 6

[pretrain]
epochs = 2
batch_size = 16

[tune]
steps = 20
"#;

const SPEC: &str = r#"{
  "node_types": [{"name": "paper", "count": 40, "dim": 4}, {"name": "term", "count": 10, "dim": 2}],
  "edges": [{"name": "paper-term", "src": "paper", "dst": "term", "density": 1.0}],
  "target": "paper",
  "num_classes": 3,
  "signal": SIGNAL,
  "seed": 1
}"#;

fn hgmp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hgmp"))
        .args(args)
        .env_remove("HGMP_OUT")
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = hgmp(args);
    assert!(
        out.status.success(),
        "hgmp {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn synth_is_reproducible_and_labels_in_range() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("spec.json");
    fs::write(&spec, SPEC.replace("SIGNAL", "0.7")).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["synth", "--spec", s(&spec), "--seed", "9", "--out", s(&a)]);
    ok(&["synth", "--spec", s(&spec), "--seed", "9", "--out", s(&b)]);
    assert_eq!(dir_bytes(&a), dir_bytes(&b));

    let rows = csv_rows(&a.join("labels.csv"));
    assert_eq!(rows.len(), 40);
    assert!(rows.iter().all(|r| ["0", "1", "2"].contains(&r[1].as_str())));
}

#[test]
fn synth_warns_on_null_signal() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("spec.json");
    fs::write(&spec, SPEC.replace("SIGNAL", "0.0")).unwrap();
    let out = ok(&["synth", "--spec", s(&spec), "--out", s(&tmp.path().join("d"))]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("null signal"));
}

#[test]
fn missing_dataset_exits_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "dataset = \"does/not/exist\"\n");
    let out = hgmp(&["pretrain", "--config", s(&cfg), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_epochs_checkpoint_equals_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), &CONFIG.replace("epochs = 2", "epochs = 0"));
    ok(&["pretrain", "--config", s(&cfg_path), "--out", s(tmp.path())]);

    let cfg = RunConfig::load(&cfg_path).unwrap();
    let g = cfg.load_graph().unwrap();
    let init = init_encoder(g.schema(), &cfg.pipeline.encoder, derive_seed(cfg.pipeline.pretrain.seed, &[0xE4C])).unwrap();
    let written = fs::read(tmp.path().join("encoder.json")).unwrap();
    assert_eq!(written, init.freeze().to_checkpoint().to_bytes());
    assert_eq!(fs::read_to_string(tmp.path().join("pretrain_trace.csv")).unwrap().trim(), "epoch,mean_loss");
}

#[test]
fn unfrozen_checkpoint_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), CONFIG);
    let cfg = RunConfig::load(&cfg_path).unwrap();
    let g = cfg.load_graph().unwrap();
    let ck = tmp.path().join("raw.json");
    init_encoder(g.schema(), &cfg.pipeline.encoder, 0).unwrap().to_checkpoint().save(&ck).unwrap();
    let out = hgmp(&["tune-eval", "--config", s(&cfg_path), "--out", s(tmp.path()), "--checkpoint", s(&ck)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("frozen"));
    assert!(!tmp.path().join("results.csv").exists());
}

#[test]
fn tune_eval_writes_one_row_and_prompt_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    ok(&["pretrain", "--config", s(&cfg), "--out", s(tmp.path())]);
    let ck = tmp.path().join("encoder.json");
    ok(&["tune-eval", "--config", s(&cfg), "--out", s(tmp.path()), "--task", "node", "--checkpoint", s(&ck)]);

    let rows = csv_rows(&tmp.path().join("results.csv"));
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r[0] == "HGMP" && r[1] == "node" && r[2] == "3"));
    let prompts = fs::read_dir(tmp.path().join("prompts")).unwrap().count();
    assert_eq!(prompts, 5);
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.as_array().unwrap().len(), 1);
}

#[test]
fn seed_flag_shifts_evaluation_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    ok(&["pretrain", "--config", s(&cfg), "--out", s(tmp.path())]);
    let ck = tmp.path().join("encoder.json");
    ok(&["tune-eval", "--config", s(&cfg), "--out", s(tmp.path()), "--checkpoint", s(&ck), "--seed", "40"]);
    let seeds: Vec<String> = csv_rows(&tmp.path().join("results.csv")).into_iter().map(|r| r[3].clone()).collect();
    assert_eq!(seeds, ["40", "41", "42", "43", "44"]);
}

#[test]
fn ablate_rows_are_the_four_variants_and_rerun_is_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["ablate", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["ablate", "--config", s(&cfg), "--out", s(&b)]);
    assert_eq!(dir_bytes(&a), dir_bytes(&b));

    let summary: serde_json::Value = serde_json::from_slice(&fs::read(a.join("summary.json")).unwrap()).unwrap();
    let names: Vec<&str> = summary.as_array().unwrap().iter().map(|r| r["variant"].as_str().unwrap()).collect();
    assert_eq!(names, ["VARIANT 1", "VARIANT 2", "VARIANT 3", "HGMP"]);
    assert!(a.join("encoder.json").exists() && a.join("encoder_uniform.json").exists());
}

#[test]
fn ablate_with_empty_task_list_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("tasks = []\n{CONFIG}"));
    let out = hgmp(&["ablate", "--config", s(&cfg), "--out", s(tmp.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no task kinds"));
}

#[test]
fn sweep_plot_flag_controls_image_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let (plain, plotted) = (tmp.path().join("plain"), tmp.path().join("plotted"));
    ok(&["sweep", "--config", s(&cfg), "--out", s(&plain), "--shots", "1,3"]);
    ok(&["sweep", "--config", s(&cfg), "--out", s(&plotted), "--shots", "1,3", "--plot"]);

    assert!(!plain.join("sweep.svg").exists());
    assert!(fs::read_to_string(plotted.join("sweep.svg")).unwrap().starts_with("<svg"));
    let ks: Vec<String> = csv_rows(&plain.join("results.csv")).into_iter().map(|r| r[2].clone()).collect();
    assert_eq!(ks.len(), 10);
    assert!(ks[..5].iter().all(|k| k == "1") && ks[5..].iter().all(|k| k == "3"));
}

#[test]
fn malformed_shots_is_a_usage_error() {
    let out = hgmp(&["sweep", "--config", "x.toml", "--shots", "1,x"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn out_dir_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let target = tmp.path().join("from_env");
    let out = Command::new(env!("CARGO_BIN_EXE_hgmp"))
        .args(["pretrain", "--config", s(&cfg)])
        .env("HGMP_OUT", &target)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(target.join("encoder.json").exists());
    assert!(Checkpoint::load(target.join("encoder.json")).is_ok());
}
