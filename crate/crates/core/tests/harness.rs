use std::sync::Arc;

use blockivf::exec::{Executor, ExecutorConfig, Mode};
use blockivf::harness::{
    self, emit, ground_truth, mixture_split, schedule, zipf_stream, Dataset, Format, MixtureSpec, ReplayInput,
    ReplayReport, VecsError, WorkloadSpec,
};
use blockivf::index::{AnnIndex, Backend, IndexConfig, IvfModel};

mod common;
use common::fast_kmeans;

struct Fixture {
    model: IvfModel,
    queries: Dataset,
    stream: Dataset,
    truth: Vec<Vec<u64>>,
}

fn fixture(n: usize, dim: usize) -> Fixture {
    let spec = MixtureSpec { n, dim, components: 40, extent: 100.0, spread: 10.0, seed: 14 };
    let split = mixture_split(&spec, 100, 5_000);
    let model = IvfModel::train(&split.base.vectors, dim, 40, &fast_kmeans(14), 32).unwrap();
    let stream = zipf_stream(&model, &split.held_out, 5_000, 1.0, 3);
    let truth = ground_truth(&split.base.vectors, &split.queries.vectors, dim, 10);
    Fixture { model, queries: split.queries, stream, truth }
}

fn executor(f: &Fixture, backend: Backend, mode: Mode) -> Executor {
    let cfg = IndexConfig { num_clusters: 40, nprobe_default: 8, ..IndexConfig::default() }.with_pool_for(6_000);
    let index = harness::experiments::build_index(backend, f.model.clone(), cfg).unwrap();
    Executor::new(index, ExecutorConfig { mode, ..ExecutorConfig::default() }).unwrap()
}

fn spec(qps_search: f64, qps_insert: f64) -> WorkloadSpec {
    WorkloadSpec { qps_search, qps_insert, duration_s: 1.0, nprobe: 8, timeout_ms: 1e6, ..WorkloadSpec::default() }
}

#[test]
fn search_only_workload_has_no_insert_term() {
    let f = fixture(4_000, 16);
    let exec = executor(&f, Backend::Block, Mode::Parallel);
    let input = ReplayInput { queries: &f.queries, inserts: &f.stream, ground_truth: Some(&f.truth), insertion_stream: "none" };
    let (r, log) = harness::replay(&spec(100.0, 0.0), &exec, input, "search-only").unwrap();
    assert_eq!(r.insert.count, 0);
    assert_eq!(r.insert.mean_ms, 0.0);
    assert_eq!(r.latency_combined_ms, r.search.mean_ms);
    assert_eq!(r.search.count, 100);
    assert_eq!(log.len(), 100);
    assert!(r.recall.unwrap() > 0.8, "{:?}", r.recall);
}

#[test]
fn same_seed_same_schedule_and_results() {
    let f = fixture(4_000, 16);
    let s = WorkloadSpec { arrival: blockivf::harness::Arrival::Poisson, seed: 77, ..spec(80.0, 10.0) };
    assert_eq!(schedule(&s), schedule(&s));
    let run = || {
        let exec = executor(&f, Backend::Block, Mode::Serialized);
        let input = ReplayInput { queries: &f.queries, inserts: &f.stream, ground_truth: None, insertion_stream: "zipf" };
        harness::replay(&s, &exec, input, "det").unwrap().1
    };
    assert_eq!(run(), run());
}

#[test]
fn block_backend_beats_baseline_on_a_hot_stream() {
    let f = fixture(30_000, 64);
    let run = |backend, mode| {
        let exec = executor(&f, backend, mode);
        let input = ReplayInput { queries: &f.queries, inserts: &f.stream, ground_truth: None, insertion_stream: "zipf" };
        harness::replay(&spec(100.0, 20.0), &exec, input, "dir").unwrap().0
    };
    let block = run(Backend::Block, Mode::Parallel);
    let base = run(Backend::Baseline, Mode::Serialized);
    assert!(block.latency_combined_ms < base.latency_combined_ms, "{} vs {}", block.latency_combined_ms, base.latency_combined_ms);
    assert!(block.costs.scalars_copied < base.costs.scalars_copied);
    assert_eq!(block.costs.reallocations, 0);
}

#[test]
fn csv_and_json_files() {
    let f = fixture(2_000, 8);
    let exec = executor(&f, Backend::Block, Mode::Parallel);
    let input = ReplayInput { queries: &f.queries, inserts: &f.stream, ground_truth: None, insertion_stream: "zipf" };
    let (r, _) = harness::replay(&spec(50.0, 5.0), &exec, input, "files").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let report = ReplayReport { runs: vec![r] };
    emit(&report, &dir.path().join("r.csv"), Format::Csv).unwrap();
    emit(&report, &dir.path().join("r.json"), Format::Json).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert!(csv.starts_with("experiment,metric,value\n"));
    assert!(csv.lines().any(|l| l.starts_with("files,latency_combined_ms,")));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(json["runs"][0]["experiment"], "files");
    assert_eq!(json["runs"][0]["submitted_insert"], 5);
}

#[test]
fn vecs_files_report_byte_offsets() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.fvecs");
    let mut bytes = Vec::new();
    for dim in [2i32, 3] {
        bytes.extend_from_slice(&dim.to_le_bytes());
        bytes.extend(std::iter::repeat_n(0u8, 4 * dim as usize));
    }
    std::fs::write(&path, &bytes).unwrap();
    match harness::load_fvecs(&path) {
        Err(VecsError::InconsistentDim { offset, expected: 2, got: 3 }) => assert_eq!(offset, 12),
        other => panic!("{other:?}"),
    }
    std::fs::write(&path, &bytes[..10]).unwrap();
    assert!(matches!(harness::load_fvecs(&path), Err(VecsError::Truncated { offset: 0 })));

    let ivecs = dir.path().join("gt.ivecs");
    let rows = vec![vec![1, 2, 3], vec![4, 5, 6]];
    harness::save_ivecs(&ivecs, &rows).unwrap();
    assert_eq!(harness::load_ivecs(&ivecs).unwrap(), rows);
}

#[test]
fn capacity_sweep_reports_every_value() {
    let f = fixture(2_000, 8);
    let input = harness::experiments::ExperimentInput {
        model: &f.model,
        config: IndexConfig { num_clusters: 40, ..IndexConfig::default() },
        stream: &f.stream,
        queries: &f.queries,
        insert_batch: 128,
        k: 10,
        nprobe: 8,
        reps: 1,
    };
    let r = harness::experiments::block_capacity_sweep(&input, &[8, 32]).unwrap();
    assert_eq!(r.points.len(), 2);
    assert!(r.points[0].metrics["mean_hops"] > r.points[1].metrics["mean_hops"]);
    let t = harness::experiments::rearrangement_table(&input, &[16, 64]).unwrap();
    assert_eq!(t.rows.iter().map(|r| r.threshold).collect::<Vec<_>>(), vec![16, 64]);
    let idx: Arc<dyn AnnIndex> =
        harness::experiments::build_index(Backend::Block, f.model.clone(), input.config.clone()).unwrap();
    let s = harness::experiments::nprobe_sweep(idx.as_ref(), &f.queries, &f.truth, 10, &[1, 40]).unwrap();
    assert_eq!(s.points[1].metrics["recall"], 1.0);
}
