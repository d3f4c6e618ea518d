//! Command-line behaviour: artifacts, manifests and error exits.

use std::path::{Path, PathBuf};

use d4::cli;
use d4::io::{Checkpoint, Manifest};

fn run(args: &[&str]) -> d4::Result<()> {
    cli::run(std::iter::once("d4").chain(args.iter().copied()))
}

fn dir(root: &Path, name: &str) -> PathBuf {
    let p = root.join(name);
    std::fs::create_dir_all(&p).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (dir(tmp.path(), "a"), dir(tmp.path(), "b"));
    for out in [&a, &b] {
        run(&["simulate", "--kind", "placecells", "--seed", "5", "--duration", "20", "--out", s(out)]).unwrap();
    }
    for f in ["observations.csv", "states.csv", "spec.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let ma: Manifest = d4::io::read_json(&a.join(cli::MANIFEST_FILE)).unwrap();
    let mb: Manifest = d4::io::read_json(&b.join(cli::MANIFEST_FILE)).unwrap();
    assert_eq!(ma.outputs.values().collect::<Vec<_>>(), mb.outputs.values().collect::<Vec<_>>());
    assert_eq!(ma.seed, 5);
}

#[test]
fn missing_output_directory_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope");
    assert!(run(&["simulate", "--kind", "sim20", "--out", s(&missing)]).is_err());
    assert!(!missing.exists());
}

#[test]
fn pipeline_writes_artifacts_and_compare_needs_two_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dir(tmp.path(), "data");
    run(&["simulate", "--kind", "sim20", "--seed", "2", "--steps", "240", "--out", s(&data)]).unwrap();

    let config = tmp.path().join("train.json");
    std::fs::write(&config, r#"{"max_lag": 1, "em_iterations": 2, "model": "d4", "hidden": [8]}"#).unwrap();
    let d4_dir = dir(tmp.path(), "d4");
    run(&["train", "--data", s(&data), "--out", s(&d4_dir), "--config", s(&config), "--range", "0:160"]).unwrap();
    let ddd_dir = dir(tmp.path(), "ddd");
    run(&[
        "train", "--data", s(&data), "--out", s(&ddd_dir), "--config", s(&config), "--model", "ddd", "--algo",
        "regularized", "--lag", "2", "--lambda", "0.5", "--range", "0:160",
    ])
    .unwrap();
    for f in ["checkpoint.json", "q_trace.csv", "train_log.ndjson", "manifest.json"] {
        assert!(d4_dir.join(f).exists(), "{f}");
    }
    assert!(d4_dir.join("q_curve.csv").exists());
    assert!(!ddd_dir.join("q_curve.csv").exists());

    let ck = Checkpoint::load(&ddd_dir.join(cli::CHECKPOINT_FILE)).unwrap();
    assert_eq!(ck.config.lambda, 0.5);
    assert_eq!(ck.config.hidden, vec![8]);
    let manifest: Manifest = d4::io::read_json(&d4_dir.join(cli::MANIFEST_FILE)).unwrap();
    assert!(manifest.volatile.iter().any(|v| v.ends_with(cli::LOG_FILE)));
    assert!(!manifest.outputs.keys().any(|k| k.ends_with(cli::LOG_FILE)));

    let dec = dir(tmp.path(), "decode");
    let d4_ck = d4_dir.join(cli::CHECKPOINT_FILE);
    run(&["decode", "--checkpoint", s(&d4_ck), "--data", s(&data), "--range", "160:240", "--out", s(&dec)]).unwrap();
    let text = std::fs::read_to_string(dec.join("decode.csv")).unwrap();
    assert!(text.starts_with("step,true_x,mean_x,std_x,hpd_lo_x,hpd_hi_x"));
    assert_eq!(text.lines().count(), 81);

    let cmp = dir(tmp.path(), "compare");
    let ddd_ck = ddd_dir.join(cli::CHECKPOINT_FILE);
    let one = run(&["compare", "--checkpoint", s(&d4_ck), "--data", s(&data), "--out", s(&cmp)]);
    assert!(matches!(one, Err(d4::Error::InvalidConfig(_))));
    run(&[
        "compare", "--checkpoint", s(&d4_ck), "--checkpoint", s(&ddd_ck), "--data", s(&data), "--range", "160:240",
        "--out", s(&cmp),
    ])
    .unwrap();
    let csv = std::fs::read_to_string(cmp.join("comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(2).unwrap().starts_with("ddd-l2,regularized,test,x,"));
}

#[test]
fn bad_inputs_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dir(tmp.path(), "data");
    run(&["simulate", "--kind", "sim20", "--steps", "60", "--out", s(&data)]).unwrap();
    let out = dir(tmp.path(), "out");
    let config = tmp.path().join("bad.json");
    std::fs::write(&config, r#"{"lamda": 1.0}"#).unwrap();
    assert!(run(&["train", "--data", s(&data), "--out", s(&out), "--config", s(&config)]).is_err());
    assert!(run(&["train", "--data", s(&data), "--out", s(&out), "--model", "gru"]).is_err());
    assert!(run(&["train", "--data", s(&data), "--out", s(&out), "--range", "50:500"]).is_err());
    assert!(run(&["decode", "--checkpoint", s(&out.join("none.json")), "--data", s(&data), "--out", s(&out)]).is_err());
}

#[test]
fn sweep_rows_follow_value_order() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dir(tmp.path(), "data");
    run(&["simulate", "--kind", "sim20", "--seed", "4", "--steps", "150", "--out", s(&data)]).unwrap();
    let out = dir(tmp.path(), "sweep");
    run(&[
        "sweep", "--data", s(&data), "--out", s(&out), "--param", "lag", "--values", "2,0,1", "--model", "ddd",
        "--em-iterations", "2", "--train-range", "0:100", "--test-range", "100:150",
    ])
    .unwrap();
    let (header, table) = d4::io::read_csv(&out.join("sweep.csv")).unwrap();
    assert_eq!(header[0], "value");
    assert_eq!(table.column_values(0), vec![2.0, 0.0, 1.0]);
}
