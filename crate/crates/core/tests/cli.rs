use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_wsnloc");

const SMALL_CONFIG: &str = r#"{
  "sim": {"node_count": 12, "window": 3, "radio_range": 45.0},
  "train": {"epochs": 2, "batch_size": 4, "hidden_temporal": 6, "hidden_spatial": 6, "heads": 2,
            "cross_validate": false},
  "dataset": {"topologies": 3, "draws": 2}
}"#;

/// Runs the binary with whitespace-separated `args`.
fn run(dir: &Path, args: &str) -> Output {
    Command::new(BIN).current_dir(dir).args(args.split_whitespace()).output().expect("binary runs")
}

fn ok(dir: &Path, args: &str) -> Output {
    let out = run(dir, args);
    assert!(out.status.success(), "{args} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), SMALL_CONFIG).unwrap();
    dir
}

fn gen(dir: &Path, out: &str, seed: u64) {
    ok(dir, &format!("gen --config cfg.json --topologies 3 --draws 2 --seed {seed} --out {out}"));
}

#[test]
fn gen_is_byte_reproducible_and_seed_sensitive() {
    let dir = setup();
    gen(dir.path(), "a.ndjson", 9);
    gen(dir.path(), "b.ndjson", 9);
    gen(dir.path(), "c.ndjson", 10);
    let read = |f: &str| fs::read(dir.path().join(f)).unwrap();
    assert_eq!(read("a.ndjson"), read("b.ndjson"));
    assert_ne!(read("a.ndjson"), read("c.ndjson"));
    assert_eq!(String::from_utf8(read("a.ndjson")).unwrap().lines().count(), 6);
}

#[test]
fn train_eval_round_trip() {
    let dir = setup();
    gen(dir.path(), "d.ndjson", 3);
    for model in ["ubigtloc", "baseline1", "baseline2"] {
        ok(
            dir.path(),
            &format!("train --dataset d.ndjson --model {model} --config cfg.json --seed 1 --out {model}.json"),
        );
        let history = fs::read_to_string(dir.path().join(format!("{model}.json.history.csv"))).unwrap();
        assert_eq!(history.lines().next(), Some("epoch,mean_train_loss,mean_val_loss"));
        assert_eq!(history.lines().count(), 3);

        let out = ok(dir.path(), &format!("eval --ckpt {model}.json --dataset d.ndjson --out m.csv --cdf cdf.csv"));
        assert!(String::from_utf8_lossy(&out.stdout).contains("masked mse"));
        let metrics = fs::read_to_string(dir.path().join("m.csv")).unwrap();
        assert!(metrics.lines().any(|l| l.starts_with("mean,")));
        let cdf = fs::read_to_string(dir.path().join("cdf.csv")).unwrap();
        let last: f64 = cdf.lines().last().unwrap().split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(last, 1.0);
    }
}

#[test]
fn training_history_is_reproducible() {
    let dir = setup();
    gen(dir.path(), "d.ndjson", 4);
    for out in ["x.json", "y.json"] {
        ok(dir.path(), &format!("train --dataset d.ndjson --model ubigtloc --config cfg.json --seed 7 --out {out}"));
    }
    let read = |f: &str| fs::read(dir.path().join(f)).unwrap();
    assert_eq!(read("x.json.history.csv"), read("y.json.history.csv"));
    assert_eq!(read("x.json"), read("y.json"));
}

#[test]
fn sweep_writes_rows_and_aggregates() {
    let dir = setup();
    ok(dir.path(), "sweep --param kappa --values 0,1 --models baseline1 --seeds 1,2 --config cfg.json --out s.csv");
    let csv = fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.starts_with("run,")).count(), 4);
    assert_eq!(csv.lines().filter(|l| l.starts_with("aggregate,")).count(), 2);
}

#[test]
fn gradcheck_passes_on_default_config() {
    let dir = setup();
    let out = ok(dir.path(), "gradcheck");
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 3);
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = setup();
    let out = run(dir.path(), "train --dataset missing.ndjson --model ubigtloc --seed 1 --out m.json");
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    fs::write(dir.path().join("bad.json"), r#"{"sim": {"node_count": 10, "bogus": 1}}"#).unwrap();
    let out = run(dir.path(), "gen --config bad.json --topologies 1 --draws 1 --seed 1 --out o");
    assert!(!out.status.success());

    let out = run(dir.path(), "train --dataset d --model gcn --seed 1 --out m");
    assert!(!out.status.success());
}
