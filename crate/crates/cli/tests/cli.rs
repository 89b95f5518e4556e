use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "seed = 5
[render]
width = 32
height = 32
[dataset]
batches = 3
test_batches = 1
frames = 16
[model.static_schema]
image_size = 32
seed_channels = 8
min_channels = 4
[train]
epochs = 2
batch_size = 8
[analysis]
lags = [0, 2]
permutation_draws = 10
";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_softschema"))
        .arg("--quiet")
        .args(args)
        .output()
        .expect("binary runs")
}

fn summary(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().count(), 1, "stdout: {text}");
    serde_json::from_str(text.trim()).unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn gen_writes_a_dataset_whose_header_echoes_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("gen");
    let o = run(&["--config", arg(&cfg), "gen", "--out", arg(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&o);
    assert_eq!(s["command"], "gen");
    let ds = softschema::datagen::Dataset::load(&out.join("dataset.sbsd")).unwrap();
    let echoed = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(echoed.contains("[dataset]") && echoed.contains("[analysis]"));
    assert_eq!(ds.header.config.batches, 3);
    assert_eq!(ds.header.config.episode.frames, 16);
    assert_eq!(ds.header.config.scene_seed, 5);
    assert_eq!(ds.header.width, 32);
    assert!(out.join("run.log").exists());
}

#[test]
fn train_then_eval_emits_csv_and_png() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (g, t, e) = (dir.path().join("g"), dir.path().join("t"), dir.path().join("e"));
    assert!(run(&["--config", arg(&cfg), "gen", "--out", arg(&g)]).status.success());
    let ds = g.join("dataset.sbsd");
    let before = std::fs::read(&ds).unwrap();
    let o = run(&["--config", arg(&cfg), "train", "--dataset", arg(&ds), "--out", arg(&t)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ck = t.join("model.sbsm");
    let o = run(&["--config", arg(&cfg), "eval", "--checkpoint", arg(&ck), "--dataset", arg(&ds), "--out", arg(&e)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&o);
    assert!(s["mean"].as_f64().unwrap() > 0.0);
    let csv = std::fs::read_to_string(e.join("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 16);
    let png = std::fs::read(e.join("eval.png")).unwrap();
    assert_eq!(&png[1..4], b"PNG");
    assert_eq!(std::fs::read(&ds).unwrap(), before, "inputs are never modified");

    for cmd in ["ablate", "lagscan", "latent"] {
        let out = dir.path().join(cmd);
        let o = run(&["--config", arg(&cfg), cmd, "--checkpoint", arg(&ck), "--dataset", arg(&ds), "--out", arg(&out)]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(summary(&o)["command"], cmd);
    }
}

#[test]
fn same_config_and_seed_reproduce_bytes_and_loss() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let mut results = Vec::new();
    for k in 0..2 {
        let g = dir.path().join(format!("g{k}"));
        let t = dir.path().join(format!("t{k}"));
        assert!(run(&["--config", arg(&cfg), "--seed", "9", "gen", "--out", arg(&g)]).status.success());
        let ds = g.join("dataset.sbsd");
        let o = run(&["--config", arg(&cfg), "--seed", "9", "train", "--dataset", arg(&ds), "--out", arg(&t)]);
        assert!(o.status.success());
        results.push((std::fs::read(&ds).unwrap(), summary(&o)["final_loss"].as_f64().unwrap()));
    }
    assert!(results[0].0 == results[1].0);
    assert_eq!(results[0].1.to_bits(), results[1].1.to_bits());
}

#[test]
fn unknown_config_key_exits_with_config_class() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[sim]\nstifness = 2.0\n");
    let o = run(&["--config", arg(&cfg), "gen", "--out", arg(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(summary(&o)["error"], "config");
    assert_eq!(String::from_utf8_lossy(&o.stderr).lines().count(), 1);
}

#[test]
fn missing_input_file_exits_with_io_class() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.sbsd");
    let o = run(&["train", "--dataset", arg(&missing), "--out", arg(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(summary(&o)["error"], "io");
}

#[test]
fn corrupted_dataset_exits_with_format_class() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.sbsd");
    std::fs::write(&bad, b"not a dataset").unwrap();
    let o = run(&["train", "--dataset", arg(&bad), "--out", arg(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(summary(&o)["error"], "format");
}
