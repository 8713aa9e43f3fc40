use std::process::{Command, Output};

fn hst(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hst")).args(args).output().expect("run hst")
}

#[test]
fn bench_writes_one_row_per_size() {
    let out = hst(&["bench", "--sizes", "1000,4000", "--methods", "hst", "--d-model", "16", "--heads", "2", "--layers", "1", "--reps", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "n,method,time_ms,pair_count,mem_estimate_bytes");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1000,hst,"));
    assert!(lines[2].starts_with("4000,hst,"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("\"seed\":0"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = hst(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn runtime_failure_exits_with_one() {
    let out = hst(&["eval", "--data", "/nonexistent/data.hstd", "--checkpoint", "/nonexistent/model.hstm"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn report_from_counts() {
    let dir = tempfile::tempdir().unwrap();
    let kv = dir.path().join("avu.txt");
    let out = hst(&["report", "--counts", "2726,9144,3252,4919", "--kv", kv.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("AvU_harmonic 0.33"));
    let text = std::fs::read_to_string(kv).unwrap();
    assert!(text.contains("n_ac=2726"));
}

#[test]
fn training_twice_with_one_seed_gives_identical_histories() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.hstd");
    let gen = hst(&["gen", "--n", "40", "--instances", "10", "--seed", "3", "--out", data.to_str().unwrap()]);
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = hst(&[
            "train", "--data", data.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap(), "--seed", "7",
            "--d-model", "16", "--heads", "2", "--layers", "1", "--max-epochs", "2", "--queries", "6", "--lr", "1e-3",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stderr).contains("\"seed\":7"));
        (std::fs::read(out_dir.join("history.csv")).unwrap(), std::fs::read(out_dir.join("model.hstm")).unwrap())
    };
    let (h1, m1) = run("a");
    let (h2, m2) = run("b");
    assert_eq!(h1, h2);
    assert_eq!(m1, m2);
    assert_eq!(String::from_utf8(h1).unwrap().lines().count(), 3);

    let ckpt = dir.path().join("a").join("model.hstm");
    let eval = hst(&["eval", "--data", data.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap(), "--split", "val"]);
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    assert!(String::from_utf8_lossy(&eval.stdout).contains("mse="));
}
