//! Results files: long-format CSV, summary JSON, comparison tables.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::error::{FedError, Result};
use crate::metrics::{ClientMetrics, MetricSummary, RoundReport};

pub const CSV_HEADER: [&str; 9] = [
    "round", "strategy", "clientId", "groupId", "split", "acc", "wF1", "wAUC", "n",
];

/// One parsed CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub round: usize,
    pub strategy: String,
    #[serde(rename = "clientId")]
    pub client_id: usize,
    #[serde(rename = "groupId")]
    pub group_id: usize,
    pub split: Split,
    pub acc: f64,
    #[serde(rename = "wF1")]
    pub wf1: f64,
    #[serde(rename = "wAUC")]
    pub wauc: f64,
    pub n: usize,
}

impl CsvRow {
    pub fn from_metrics(round: usize, strategy: &str, m: &ClientMetrics) -> CsvRow {
        CsvRow {
            round,
            strategy: strategy.to_string(),
            client_id: m.client_id,
            group_id: m.group_id,
            split: m.split,
            acc: m.accuracy,
            wf1: m.weighted_f1,
            wauc: m.weighted_auc,
            n: m.n,
        }
    }
}

fn csv_err(path: &Path, e: csv::Error) -> FedError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => FedError::io(path, io),
        other => FedError::Format(format!("{}: {other:?}", path.display())),
    }
}

/// Appends one row per client of `report`. The header is the caller's job
/// (see [`write_header`]).
pub fn write_round_csv<W: Write>(
    report: &RoundReport,
    sink: &mut csv::Writer<W>,
) -> csv::Result<()> {
    for m in &report.per_client {
        sink.write_record(record(&CsvRow::from_metrics(
            report.round,
            &report.strategy,
            m,
        )))?;
    }
    sink.flush()?;
    Ok(())
}

/// Floats use the shortest representation that parses back to the same
/// value, so rows survive a read/write cycle byte for byte.
fn record(r: &CsvRow) -> [String; 9] {
    [
        r.round.to_string(),
        r.strategy.clone(),
        r.client_id.to_string(),
        r.group_id.to_string(),
        r.split.as_str().to_string(),
        r.acc.to_string(),
        r.wf1.to_string(),
        r.wauc.to_string(),
        r.n.to_string(),
    ]
}

pub fn write_header<W: Write>(sink: &mut csv::Writer<W>) -> csv::Result<()> {
    sink.write_record(CSV_HEADER)?;
    sink.flush()?;
    Ok(())
}

/// Strict reader: exact header, every field typed.
pub fn read_results_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let file = File::open(path).map_err(|e| FedError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(file);
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(FedError::Format(format!(
            "{}: unexpected header {:?}",
            path.display(),
            header
        )));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(|e| csv_err(path, e)))
        .collect()
}

/// Streams rows to `<path>.partial`, flushing after every round, and moves
/// the file into place on [`CsvSink::finish`]. An interrupted run leaves
/// only the `.partial` file.
pub struct CsvSink {
    path: PathBuf,
    partial: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl CsvSink {
    /// Starts a fresh file, keeping rows of `keep` (typically rows before a
    /// resumed round) ahead of anything new.
    pub fn create(path: &Path, keep: &[CsvRow]) -> Result<CsvSink> {
        let partial = partial_path(path);
        let file = File::create(&partial).map_err(|e| FedError::io(&partial, e))?;
        let mut writer = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(BufWriter::new(file));
        write_header(&mut writer).map_err(|e| csv_err(&partial, e))?;
        for row in keep {
            writer
                .write_record(record(row))
                .map_err(|e| csv_err(&partial, e))?;
        }
        writer.flush().map_err(|e| FedError::io(&partial, e))?;
        Ok(CsvSink {
            path: path.to_path_buf(),
            partial,
            writer,
        })
    }

    pub fn append(&mut self, report: &RoundReport) -> Result<()> {
        write_round_csv(report, &mut self.writer).map_err(|e| csv_err(&self.partial, e))
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.writer
            .flush()
            .map_err(|e| FedError::io(&self.partial, e))?;
        drop(self.writer);
        fs::rename(&self.partial, &self.path).map_err(|e| FedError::io(&self.path, e))?;
        Ok(self.path)
    }
}

pub fn partial_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = partial_path(path);
    let mut f = File::create(&tmp).map_err(|e| FedError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| FedError::io(&tmp, e))?;
    f.sync_all().map_err(|e| FedError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| FedError::io(path, e))
}

/// Final-round outcome of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: String,
    pub seed: u64,
    pub rounds: usize,
    pub config_hash: String,
    pub smoothing: String,
    /// Population standard deviation across clients.
    pub std_convention: String,
    pub final_report: Option<RoundReport>,
}

impl RunSummary {
    pub fn new(
        strategy: &str,
        seed: u64,
        rounds: usize,
        config_hash: String,
        final_report: Option<RoundReport>,
    ) -> RunSummary {
        RunSummary {
            strategy: strategy.to_string(),
            seed,
            rounds,
            config_hash,
            smoothing: final_report
                .as_ref()
                .map_or("n/a", |r| r.smoothing.label())
                .to_string(),
            std_convention: "population".into(),
            final_report,
        }
    }

    pub fn load(path: &Path) -> Result<RunSummary> {
        let text = fs::read_to_string(path).map_err(|e| FedError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| {
            FedError::Format(format!(
                "{}: line {} column {}: {e}",
                path.display(),
                e.line(),
                e.column()
            ))
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| FedError::Format(format!("summary: {e}")))?;
        write_atomic(path, json.as_bytes())
    }
}

/// One row of a comparison table: pooled final-round client metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub strategy: String,
    pub runs: usize,
    pub all: MetricSummary,
    pub test: Option<MetricSummary>,
}

/// Pools final-round client metrics per strategy across runs (e.g. seeds).
pub fn compare(summaries: &[RunSummary]) -> Result<Vec<ComparisonRow>> {
    let mut pooled: BTreeMap<&str, (usize, Vec<&ClientMetrics>)> = BTreeMap::new();
    for s in summaries {
        let entry = pooled.entry(s.strategy.as_str()).or_default();
        entry.0 += 1;
        if let Some(r) = &s.final_report {
            entry.1.extend(&r.per_client);
        }
    }
    pooled
        .into_iter()
        .map(|(strategy, (runs, clients))| {
            if clients.is_empty() {
                return Err(FedError::Validation(format!(
                    "no evaluated clients for {strategy}"
                )));
            }
            let test: Vec<&ClientMetrics> = clients
                .iter()
                .copied()
                .filter(|m| m.split == Split::Test)
                .collect();
            Ok(ComparisonRow {
                strategy: strategy.to_string(),
                runs,
                all: MetricSummary::of(clients.iter().copied())?,
                test: if test.is_empty() {
                    None
                } else {
                    Some(MetricSummary::of(test)?)
                },
            })
        })
        .collect()
}

/// Plain-text table with `mean(std)` cells.
pub fn format_comparison(rows: &[ComparisonRow]) -> String {
    let cell = |m: &MetricSummary, f: fn(&MetricSummary) -> (f64, f64)| {
        let (mean, std) = f(m);
        format!("{mean:.4}({std:.4})")
    };
    let f1 = |m: &MetricSummary| (m.weighted_f1.mean, m.weighted_f1.std);
    let auc = |m: &MetricSummary| (m.weighted_auc.mean, m.weighted_auc.std);
    let acc = |m: &MetricSummary| (m.accuracy.mean, m.accuracy.std);
    let mut out = format!(
        "{:<12} {:>4} {:>16} {:>16} {:>16} {:>16} {:>16}\n",
        "strategy", "runs", "wF1", "wAUC", "acc", "test wF1", "test wAUC"
    );
    for r in rows {
        let (tf1, tauc) = match &r.test {
            Some(t) => (cell(t, f1), cell(t, auc)),
            None => ("-".into(), "-".into()),
        };
        out.push_str(&format!(
            "{:<12} {:>4} {:>16} {:>16} {:>16} {:>16} {:>16}\n",
            r.strategy,
            r.runs,
            cell(&r.all, f1),
            cell(&r.all, auc),
            cell(&r.all, acc),
            tf1,
            tauc
        ));
    }
    out.push_str("std: population standard deviation across clients\n");
    out
}
