use std::path::Path;
use std::process::{Command, Output};

use blockivf::harness::{self, mixture_split, Dataset, MixtureSpec};

fn blockivf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blockivf")).args(args).env("BLOCKIVF_LOG", "warn").output().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_data(dir: &Path) -> Dataset {
    let split = mixture_split(&MixtureSpec { n: 3_000, dim: 16, components: 20, extent: 50.0, spread: 5.0, seed: 2 }, 40, 0);
    harness::save_fvecs(&dir.join("base.fvecs"), &split.base).unwrap();
    harness::save_fvecs(&dir.join("q.fvecs"), &split.queries).unwrap();
    split.base
}

#[test]
fn train_oracle_replay_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let base = write_data(d);
    let (index, gt) = (d.join("idx.bivf"), d.join("gt.ivecs"));
    ok(&blockivf(&["train", "--input", p(&d.join("base.fvecs")), "--clusters", "20", "--seed", "3", "--out", p(&index)]));
    ok(&blockivf(&["oracle", "--input", p(&d.join("base.fvecs")), "--queries", p(&d.join("q.fvecs")), "--k", "5", "--out", p(&gt)]));
    let truth = harness::load_ivecs(&gt).unwrap();
    assert_eq!(truth.len(), 40);
    assert!(truth.iter().all(|r| r.len() == 5 && r.iter().all(|&id| (id as usize) < base.len())));

    let report = d.join("replay.json");
    ok(&blockivf(&[
        "replay", "--index", p(&index), "--backend", "baseline", "--mode", "serialized", "--qps-search", "50",
        "--qps-insert", "5", "--duration", "1", "--k", "5", "--nprobe", "4", "--report", p(&report), "--format", "json",
    ]));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(v["runs"][0]["backend"], "baseline");
    assert_eq!(v["runs"][0]["mode"], "serialized");
    assert_eq!(v["runs"][0]["submitted_search"], 50);

    let sweep = d.join("sweep.csv");
    ok(&blockivf(&[
        "sweep", "--index", p(&index), "--param", "nprobe", "--values", "1,5,20", "--queries", p(&d.join("q.fvecs")),
        "--report", p(&sweep),
    ]));
    let csv = std::fs::read_to_string(&sweep).unwrap();
    assert!(csv.contains("nprobe=20,recall,1\n"), "{csv}");

    let table = d.join("table.csv");
    ok(&blockivf(&[
        "sweep", "--index", p(&index), "--param", "rearrange-threshold", "--values", "32,128", "--insert-count", "2000",
        "--report", p(&table),
    ]));
    let csv = std::fs::read_to_string(&table).unwrap();
    assert!(csv.starts_with("threshold,latency_before_ms,rearrange_cost_ms,latency_after_ms\n32,"), "{csv}");
}

#[test]
fn config_file_fills_missing_flags_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_data(d);
    let index = d.join("idx.bivf");
    let cfg = d.join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "[train]\ninput = {:?}\nclusters = 8\nout = {:?}\n\n[replay]\nindex = {:?}\nqps_search = 20.0\nqps_insert = 0.0\nduration = 1.0\nreport = {:?}\nformat = \"json\"\nnprobe = 2\n",
            p(&d.join("base.fvecs")),
            p(&index),
            p(&index),
            p(&d.join("from_config.json")),
        ),
    )
    .unwrap();
    ok(&blockivf(&["--config", p(&cfg), "train", "--seed", "1"]));
    assert!(index.exists());
    ok(&blockivf(&["--config", p(&cfg), "replay", "--format", "csv", "--report", p(&d.join("flag.csv"))]));
    let csv = std::fs::read_to_string(d.join("flag.csv")).unwrap();
    assert!(csv.starts_with("experiment,metric,value\n"));
    assert!(!d.join("from_config.json").exists());
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let out = blockivf(&["train", "--clusters", "4"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing --input"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nclusterz = 3\n").unwrap();
    let out = blockivf(&["--config", p(&bad), "train"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("clusterz"));

    let out = blockivf(&["oracle", "--input", "/nonexistent.fvecs", "--queries", "/x", "--k", "1", "--out", "/y"]);
    assert!(!out.status.success());
}
