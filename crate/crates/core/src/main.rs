use std::path::{Path, PathBuf};
use std::process::ExitCode;


use cli_error::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;

use blockivf::exec::{Executor, ExecutorConfig, Mode};
use blockivf::harness::experiments::{self, ExperimentInput};
use blockivf::harness::workload::desk_calibration_factor;
use blockivf::harness::{
    emit, load_fvecs, save_ivecs, zipf_stream, Arrival, Dataset, Format, ReplayInput, ReplayReport, WorkloadSpec,
};
use blockivf::index::{snapshot, Backend, IndexConfig, IvfModel, KMeansConfig};

/// Minimal error plumbing for the binary: every failure becomes a message.
mod cli_error {
    pub type Result<T> = std::result::Result<T, String>;

    pub trait Context<T> {
        fn context(self, what: impl std::fmt::Display) -> Result<T>;
    }

    impl<T, E: std::fmt::Display> Context<T> for std::result::Result<T, E> {
        fn context(self, what: impl std::fmt::Display) -> Result<T> {
            self.map_err(|e| format!("{what}: {e}"))
        }
    }

    macro_rules! bail {
        ($($t:tt)*) => { return Err(format!($($t)*)) };
    }
    pub(crate) use bail;
}

const LOG_ENV: &str = "BLOCKIVF_LOG";

#[derive(Parser, Debug)]
#[command(name = "blockivf", version, about = "IVF-flat index with block-linked online lists")]
struct Cli {
    /// TOML file whose [train], [replay], [sweep] and [oracle] tables supply defaults for flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the coarse quantizer and write an index snapshot.
    Train(TrainArgs),
    /// Replay a timed search/insert workload and report latencies.
    Replay(ReplayArgs),
    /// Vary one parameter and report its effect.
    Sweep(SweepArgs),
    /// Write exact nearest-neighbor ids as ivecs.
    Oracle(OracleArgs),
}

/// Fills every `None` field of `$a` from `$b`.
macro_rules! merge {
    ($a:ident, $b:ident; $($f:ident),+ $(,)?) => {
        $( if $a.$f.is_none() { $a.$f = $b.$f.take(); } )+
    };
}

#[derive(Args, Deserialize, Debug, Default)]
#[serde(default, deny_unknown_fields)]
struct TrainArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    block_capacity: Option<usize>,
    #[arg(long)]
    rearrange_threshold: Option<usize>,
    #[arg(long)]
    nprobe: Option<usize>,
}

#[derive(Args, Deserialize, Debug, Default)]
#[serde(default, deny_unknown_fields)]
struct ReplayArgs {
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: Option<Backend>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    qps_search: Option<f64>,
    #[arg(long)]
    qps_insert: Option<f64>,
    /// Seconds.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    nprobe: Option<usize>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Query vectors; sampled from the index when absent.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Insertion source; sampled from the index when absent.
    #[arg(long)]
    inserts: Option<PathBuf>,
    #[arg(long)]
    insert_batch: Option<usize>,
    #[arg(long)]
    search_batch: Option<usize>,
    #[arg(long, value_enum)]
    arrival: Option<Arrival>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    zipf: Option<f64>,
    #[arg(long)]
    lanes: Option<usize>,
    #[arg(long)]
    warmup: Option<f64>,
    /// Milliseconds; defaults to 20 ms scaled by a startup calibration.
    #[arg(long)]
    timeout_ms: Option<f64>,
    #[arg(long)]
    flush_interval_ms: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
enum SweepParam {
    BlockCapacity,
    RearrangeThreshold,
    Nprobe,
}

#[derive(Args, Deserialize, Debug, Default)]
#[serde(default, deny_unknown_fields)]
struct SweepArgs {
    #[arg(long, value_enum)]
    param: Option<SweepParam>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    values: Option<Vec<usize>>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    inserts: Option<PathBuf>,
    /// Insertions applied before measuring (block-capacity and rearrange-threshold sweeps).
    #[arg(long)]
    insert_count: Option<usize>,
    #[arg(long)]
    insert_batch: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    nprobe: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Deserialize, Debug, Default)]
#[serde(default, deny_unknown_fields)]
struct OracleArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    train: TrainArgs,
    replay: ReplayArgs,
    sweep: SweepArgs,
    oracle: OracleArgs,
}

fn need<T>(v: Option<T>, flag: &str, table: &str) -> Result<T> {
    match v {
        Some(v) => Ok(v),
        None => bail!("missing --{flag} (or `{}` in the [{table}] config table)", flag.replace('-', "_")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or(LOG_ENV, "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut file = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).context(p.display())?;
            toml::from_str::<ConfigFile>(&text).context(p.display())?
        }
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::Train(mut a) => {
            let b = &mut file.train;
            merge!(a, b; input, clusters, seed, out, iters, block_capacity, rearrange_threshold, nprobe);
            train(a)
        }
        Command::Replay(mut a) => {
            let b = &mut file.replay;
            merge!(a, b; index, backend, mode, qps_search, qps_insert, duration, k, nprobe, report, format, queries,
                inserts, insert_batch, search_batch, arrival, seed, zipf, lanes, warmup, timeout_ms, flush_interval_ms);
            replay(a)
        }
        Command::Sweep(mut a) => {
            let b = &mut file.sweep;
            merge!(a, b; param, values, report, format, index, queries, inserts, insert_count, insert_batch, k, nprobe, seed);
            sweep(a)
        }
        Command::Oracle(mut a) => {
            let b = &mut file.oracle;
            merge!(a, b; input, queries, k, out);
            oracle(a)
        }
    }
}

fn load_vectors(path: &Path) -> Result<Dataset> {
    load_fvecs(path).context(path.display())
}

fn train(a: TrainArgs) -> Result<()> {
    let input = need(a.input, "input", "train")?;
    let clusters = need(a.clusters, "clusters", "train")?;
    let out = need(a.out, "out", "train")?;
    let data = load_vectors(&input)?;
    if data.is_empty() {
        bail!("{} holds no vectors", input.display());
    }
    let defaults = IndexConfig::default();
    let config = IndexConfig {
        num_clusters: clusters,
        nprobe_default: a.nprobe.unwrap_or(defaults.nprobe_default.min(clusters)),
        rearrange_threshold: a.rearrange_threshold.unwrap_or(defaults.rearrange_threshold),
        block_capacity: a.block_capacity.unwrap_or(defaults.block_capacity),
        kmeans: KMeansConfig {
            seed: a.seed.unwrap_or(defaults.kmeans.seed),
            max_iters: a.iters.unwrap_or(defaults.kmeans.max_iters),
            ..defaults.kmeans.clone()
        },
        ..defaults
    };
    config.validate().context("index config")?;
    let model = IvfModel::train(&data.vectors, data.dim, clusters, &config.kmeans, config.interleave_group)
        .context("training")?;
    snapshot::save(&out, &model, &config).context(out.display())?;
    log::info!("trained {clusters} clusters over {} vectors of dimension {} -> {}", data.len(), data.dim, out.display());
    Ok(())
}

/// `count` offline vectors picked by `seed`, each perturbed by Gaussian noise
/// of `noise` times the data's per-coordinate standard deviation.
fn sample_from_model(model: &IvfModel, count: usize, noise: f32, seed: u64) -> Dataset {
    let rows: Vec<f32> = model.offline.iter().flat_map(|s| s.to_rows()).collect();
    let dim = model.dim;
    let n = rows.len() / dim;
    if n == 0 || count == 0 {
        return Dataset::new(dim, Vec::new());
    }
    let mean = rows.iter().map(|&x| x as f64).sum::<f64>() / rows.len() as f64;
    let var = rows.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / rows.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = if count <= n {
        sample(&mut rng, n, count).into_vec()
    } else {
        (0..count).map(|i| i % n).collect()
    };
    let sd = (var.sqrt() as f32 * noise).max(f32::MIN_POSITIVE);
    let normal = Normal::new(0.0f32, sd).expect("finite deviation");
    let mut out = Vec::with_capacity(count * dim);
    for i in picks {
        out.extend(rows[i * dim..(i + 1) * dim].iter().map(|&x| x + normal.sample(&mut rng)));
    }
    Dataset::new(dim, out)
}

fn model_ids_and_rows(model: &IvfModel) -> (Vec<u64>, Vec<f32>) {
    let ids = model.offline.iter().flat_map(|s| s.ids.iter().copied()).collect();
    let rows = model.offline.iter().flat_map(|s| s.to_rows()).collect();
    (ids, rows)
}

fn replay(a: ReplayArgs) -> Result<()> {
    let index_path = need(a.index, "index", "replay")?;
    let report_path = need(a.report, "report", "replay")?;
    let (model, mut config) = snapshot::load(&index_path).context(index_path.display())?;
    let defaults = WorkloadSpec::default();
    let timeout_ms = match a.timeout_ms {
        Some(t) => t,
        None => {
            let factor = desk_calibration_factor();
            log::info!("desk calibration factor {factor:.2}");
            defaults.timeout_ms * factor
        }
    };
    let spec = WorkloadSpec {
        qps_search: a.qps_search.unwrap_or(defaults.qps_search),
        qps_insert: a.qps_insert.unwrap_or(defaults.qps_insert),
        duration_s: a.duration.unwrap_or(defaults.duration_s),
        search_batch: a.search_batch.unwrap_or(defaults.search_batch),
        insert_batch: a.insert_batch.unwrap_or(defaults.insert_batch),
        k: a.k.unwrap_or(defaults.k),
        nprobe: a.nprobe.unwrap_or(config.nprobe_default),
        seed: a.seed.unwrap_or(defaults.seed),
        arrival: a.arrival.unwrap_or(defaults.arrival),
        warmup_s: a.warmup.unwrap_or(defaults.warmup_s),
        window_s: a.duration.unwrap_or(defaults.duration_s).max(defaults.window_s),
        timeout_ms,
    };
    spec.validate().context("workload")?;
    let backend = a.backend.unwrap_or(Backend::Block);
    let mode = a.mode.unwrap_or(Mode::Parallel);
    let exponent = a.zipf.unwrap_or(1.0);

    let queries = match &a.queries {
        Some(p) => load_vectors(p)?,
        None => sample_from_model(&model, 1000, 0.05, spec.seed),
    };
    let source = match &a.inserts {
        Some(p) => load_vectors(p)?,
        None => sample_from_model(&model, 20_000, 0.05, spec.seed ^ 1),
    };
    let expected = (spec.qps_insert * spec.duration_s).ceil() as usize * spec.insert_batch;
    let stream = zipf_stream(&model, &source, expected.max(1), exponent, spec.seed);
    let label = format!("zipf({exponent}) cluster skew, synthetic stand-in for a hot-key insertion stream");
    config = config.with_pool_for(expected + model.len());

    let index = experiments::build_index(backend, model, config).context("building index")?;
    let exec_config = ExecutorConfig {
        num_lanes: a.lanes.unwrap_or(ExecutorConfig::default().num_lanes),
        mode,
        batch_flush_interval: a
            .flush_interval_ms
            .map(|ms| std::time::Duration::from_secs_f64(ms / 1e3))
            .unwrap_or(ExecutorConfig::default().batch_flush_interval),
        ..ExecutorConfig::default()
    };
    let executor = Executor::new(index, exec_config).context("executor")?;
    let input = ReplayInput { queries: &queries, inserts: &stream, ground_truth: None, insertion_stream: &label };
    let name = format!("{backend:?}-{mode:?}").to_lowercase();
    let (report, _) = blockivf::harness::replay(&spec, &executor, input, &name).context("replay")?;
    log::info!(
        "{name}: search {:.3} ms + insert {:.3} ms = {:.3} ms combined; {} rejected, {} timed out{}",
        report.search.mean_ms,
        report.insert.mean_ms,
        report.latency_combined_ms,
        report.rejections,
        report.timeouts,
        if report.saturated { " (saturated)" } else { "" }
    );
    executor.shutdown();
    emit(&ReplayReport { runs: vec![report] }, &report_path, a.format.unwrap_or(Format::Csv)).context("report")
}

fn sweep(a: SweepArgs) -> Result<()> {
    let param = need(a.param, "param", "sweep")?;
    let values = need(a.values, "values", "sweep")?;
    let report_path = need(a.report, "report", "sweep")?;
    let index_path = need(a.index, "index", "sweep")?;
    let format = a.format.unwrap_or(Format::Csv);
    if values.is_empty() {
        bail!("--values needs at least one value");
    }
    let (model, config) = snapshot::load(&index_path).context(index_path.display())?;
    let seed = a.seed.unwrap_or(7);
    let k = a.k.unwrap_or(10);
    let queries = match &a.queries {
        Some(p) => load_vectors(p)?,
        None => sample_from_model(&model, 200, 0.05, seed),
    };
    match param {
        SweepParam::Nprobe => {
            let (ids, rows) = model_ids_and_rows(&model);
            let truth: Vec<Vec<u64>> = (0..queries.len())
                .map(|i| {
                    blockivf::harness::exact_knn(&rows, &ids, model.dim, queries.row(i), k).iter().map(|n| n.id).collect()
                })
                .collect();
            let index = experiments::build_index(Backend::Block, model, config).context("building index")?;
            if let Some(&bad) = values.iter().find(|&&v| v == 0 || v > index.num_clusters()) {
                bail!("nprobe {bad} outside [1, {}]", index.num_clusters());
            }
            let report = experiments::nprobe_sweep(index.as_ref(), &queries, &truth, k, &values).context("sweep")?;
            emit(&report, &report_path, format).context("report")
        }
        SweepParam::BlockCapacity | SweepParam::RearrangeThreshold => {
            let count = a.insert_count.unwrap_or(50_000);
            let source = match &a.inserts {
                Some(p) => load_vectors(p)?,
                None => sample_from_model(&model, count.min(20_000), 0.05, seed ^ 1),
            };
            let stream = zipf_stream(&model, &source, count, 1.0, seed);
            let input = ExperimentInput {
                model: &model,
                config: config.clone(),
                stream: &stream,
                queries: &queries,
                insert_batch: a.insert_batch.unwrap_or(128),
                k,
                nprobe: a.nprobe.unwrap_or(config.nprobe_default),
                reps: 3,
            };
            if param == SweepParam::BlockCapacity {
                let report = experiments::block_capacity_sweep(&input, &values).context("sweep")?;
                emit(&report, &report_path, format).context("report")
            } else {
                let table = experiments::rearrangement_table(&input, &values).context("sweep")?;
                emit(&table, &report_path, format).context("report")
            }
        }
    }
}

fn oracle(a: OracleArgs) -> Result<()> {
    let input = need(a.input, "input", "oracle")?;
    let queries_path = need(a.queries, "queries", "oracle")?;
    let k = need(a.k, "k", "oracle")?;
    let out = need(a.out, "out", "oracle")?;
    let base = load_vectors(&input)?;
    let queries = load_vectors(&queries_path)?;
    if !queries.is_empty() && base.dim != queries.dim {
        bail!("base dimension {} differs from query dimension {}", base.dim, queries.dim);
    }
    if k == 0 || k > base.len() {
        bail!("k must lie in [1, {}]", base.len());
    }
    let truth = blockivf::harness::ground_truth(&base.vectors, &queries.vectors, base.dim, k);
    let rows: Vec<Vec<i32>> =
        truth.into_iter().map(|r| r.into_iter().map(|id| id as i32).collect()).collect();
    save_ivecs(&out, &rows).context(out.display())?;
    log::info!("wrote {} x {k} neighbor ids to {}", rows.len(), out.display());
    Ok(())
}

