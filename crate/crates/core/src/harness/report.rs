//! Report emission.
//!
//! CSV reports are long-form with the header `experiment,metric,value` and
//! one row per (experiment, metric), except the rearrangement table, whose
//! header is `threshold,latency_before_ms,rearrange_cost_ms,latency_after_ms`.
//! JSON reports are the nested serde form of the same structs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::exec::Mode;
use crate::index::{Backend, CostSnapshot, RearrangeEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

pub const LONG_HEADER: &str = "experiment,metric,value";

/// A report that can be written in either format.
pub trait Report: Serialize {
    fn write_csv(&self, w: &mut dyn Write) -> io::Result<()>;

    fn write(&self, w: &mut dyn Write, format: Format) -> Result<(), HarnessError> {
        match format {
            Format::Csv => self.write_csv(w)?,
            Format::Json => {
                serde_json::to_writer_pretty(&mut *w, self).map_err(io::Error::other)?;
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

pub fn emit<R: Report>(report: &R, path: &Path, format: Format) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(|e| HarnessError::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let mut w = BufWriter::new(file);
    report.write(&mut w, format)?;
    w.flush()?;
    Ok(())
}

fn write_long(w: &mut dyn Write, rows: impl IntoIterator<Item = (String, &'static str, f64)>) -> io::Result<()> {
    writeln!(w, "{LONG_HEADER}")?;
    for (experiment, metric, value) in rows {
        writeln!(w, "{experiment},{metric},{value}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    /// Nearest-rank percentiles over `samples` (milliseconds).
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let pct = |p: f64| s[((p / 100.0 * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
        Self {
            count: s.len(),
            mean_ms: s.iter().sum::<f64>() / s.len() as f64,
            p50_ms: pct(50.0),
            p95_ms: pct(95.0),
            p99_ms: pct(99.0),
            max_ms: s[s.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkloadReport {
    pub experiment: String,
    pub backend: Backend,
    pub mode: Mode,
    pub qps_search: f64,
    pub qps_insert: f64,
    pub duration_s: f64,
    pub search: LatencyStats,
    pub insert: LatencyStats,
    /// Mean search latency plus mean insertion latency.
    pub latency_combined_ms: f64,
    pub submitted_search: usize,
    pub submitted_insert: usize,
    pub rejections: usize,
    pub timeouts: usize,
    /// Requests that completed with an error.
    pub failures: usize,
    pub timeout_ms: f64,
    pub saturated: bool,
    pub recall: Option<f64>,
    /// Hops per online list -> number of lists.
    pub hop_histogram: BTreeMap<usize, usize>,
    pub mean_hops: f64,
    pub costs: CostSnapshot,
    pub rearrangements: Vec<RearrangeEvent>,
    pub insertion_stream: String,
    pub search_samples_ms: Vec<f64>,
    pub insert_samples_ms: Vec<f64>,
}

impl WorkloadReport {
    fn rows(&self) -> Vec<(String, &'static str, f64)> {
        let e = &self.experiment;
        let mut rows = vec![
            ("latency_search_ms", self.search.mean_ms),
            ("latency_insert_ms", self.insert.mean_ms),
            ("latency_combined_ms", self.latency_combined_ms),
            ("search_p50_ms", self.search.p50_ms),
            ("search_p95_ms", self.search.p95_ms),
            ("search_p99_ms", self.search.p99_ms),
            ("insert_p50_ms", self.insert.p50_ms),
            ("insert_p95_ms", self.insert.p95_ms),
            ("insert_p99_ms", self.insert.p99_ms),
            ("completed_search", self.search.count as f64),
            ("completed_insert", self.insert.count as f64),
            ("rejections", self.rejections as f64),
            ("timeouts", self.timeouts as f64),
            ("failures", self.failures as f64),
            ("saturated", u8::from(self.saturated) as f64),
            ("mean_hops", self.mean_hops),
            ("scalars_copied", self.costs.scalars_copied as f64),
            ("reallocations", self.costs.reallocations as f64),
            ("blocks_allocated", self.costs.blocks_allocated as f64),
            ("rearrangements", self.costs.rearrangements as f64),
            ("rearrange_ms", self.costs.rearrange_nanos as f64 / 1e6),
        ];
        if let Some(r) = self.recall {
            rows.push(("recall", r));
        }
        rows.into_iter().map(|(m, v)| (e.clone(), m, v)).collect()
    }
}

/// Several workload runs written together.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ReplayReport {
    pub runs: Vec<WorkloadReport>,
}

impl Report for ReplayReport {
    fn write_csv(&self, w: &mut dyn Write) -> io::Result<()> {
        write_long(w, self.runs.iter().flat_map(WorkloadReport::rows))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub metrics: BTreeMap<&'static str, f64>,
}

/// One parameter varied, a metric set measured at each value.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SweepReport {
    pub param: String,
    pub points: Vec<SweepPoint>,
}

impl Report for SweepReport {
    fn write_csv(&self, w: &mut dyn Write) -> io::Result<()> {
        write_long(
            w,
            self.points.iter().flat_map(|p| {
                let e = format!("{}={}", self.param, p.value);
                p.metrics.iter().map(move |(m, v)| (e.clone(), *m, *v))
            }),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RearrangeRow {
    pub threshold: usize,
    pub latency_before_ms: f64,
    pub rearrange_cost_ms: f64,
    pub latency_after_ms: f64,
}

/// Search latency before and after rearranging, per threshold.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RearrangeTable {
    pub rows: Vec<RearrangeRow>,
}

pub const REARRANGE_HEADER: &str = "threshold,latency_before_ms,rearrange_cost_ms,latency_after_ms";

impl Report for RearrangeTable {
    fn write_csv(&self, w: &mut dyn Write) -> io::Result<()> {
        writeln!(w, "{REARRANGE_HEADER}")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.threshold, r.latency_before_ms, r.rearrange_cost_ms, r.latency_after_ms)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(combined: f64) -> WorkloadReport {
        WorkloadReport {
            experiment: "demo".into(),
            backend: Backend::Block,
            mode: Mode::Parallel,
            qps_search: 1.0,
            qps_insert: 0.0,
            duration_s: 1.0,
            search: LatencyStats::default(),
            insert: LatencyStats::default(),
            latency_combined_ms: combined,
            submitted_search: 0,
            submitted_insert: 0,
            rejections: 0,
            timeouts: 0,
            failures: 0,
            timeout_ms: 20.0,
            saturated: false,
            recall: None,
            hop_histogram: BTreeMap::new(),
            mean_hops: 0.0,
            costs: CostSnapshot::default(),
            rearrangements: Vec::new(),
            insertion_stream: String::new(),
            search_samples_ms: Vec::new(),
            insert_samples_ms: Vec::new(),
        }
    }

    fn csv<R: Report>(r: &R) -> String {
        let mut out = Vec::new();
        r.write(&mut out, Format::Csv).unwrap();
        String::from_utf8(out).unwrap()
    }

    #[test]
    fn empty_report_is_header_only() {
        assert_eq!(csv(&ReplayReport::default()), "experiment,metric,value\n");
        assert_eq!(csv(&RearrangeTable::default()), format!("{REARRANGE_HEADER}\n"));
    }

    #[test]
    fn combined_row_format() {
        let out = csv(&ReplayReport { runs: vec![report(4.8)] });
        assert!(out.lines().any(|l| l == "demo,latency_combined_ms,4.8"), "{out}");
    }

    #[test]
    fn json_is_nested() {
        let mut out = Vec::new();
        ReplayReport { runs: vec![report(1.5)] }.write(&mut out, Format::Json).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&out).unwrap();
        assert_eq!(v["runs"][0]["latency_combined_ms"], 1.5);
        assert_eq!(v["runs"][0]["search"]["count"], 0);
    }

    #[test]
    fn percentiles() {
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        let st = LatencyStats::from_samples(&s);
        assert_eq!((st.p50_ms, st.p95_ms, st.p99_ms, st.max_ms), (50.0, 95.0, 99.0, 100.0));
        assert_eq!(st.mean_ms, 50.5);
    }

    #[test]
    fn unwritable_path_errors() {
        let r = emit(&ReplayReport::default(), Path::new("/nonexistent-dir/x.csv"), Format::Csv);
        assert!(r.is_err());
    }
}
