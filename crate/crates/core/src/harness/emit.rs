use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::experiment::{AggregateResult, SCHEMA_VERSION};
use crate::channel::ChannelParams;
use crate::error::{Error, Result};

/// External reference curve point, e.g. a published bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlayPoint {
    pub blocklength: f64,
    pub rate: f64,
    #[serde(default)]
    pub label: Option<String>,
}

pub fn read_overlay(path: &Path) -> Result<Vec<OverlayPoint>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let pt: OverlayPoint = row?;
        if !(pt.blocklength.is_finite() && pt.rate.is_finite()) {
            return Err(Error::param(format!("non-finite overlay point in {}", path.display())));
        }
        out.push(pt);
    }
    Ok(out)
}

/// JSON mirror of a CSV result file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub schema: u32,
    pub config: ExperimentConfig,
    pub capacity: f64,
    pub results: Vec<AggregateResult>,
    pub overlay: Vec<OverlayPoint>,
}

impl ResultDocument {
    pub fn new(config: &ExperimentConfig, results: Vec<AggregateResult>, overlay: Vec<OverlayPoint>) -> Self {
        let capacity = ChannelParams::new(config.p).map(|c| c.capacity()).unwrap_or(f64::NAN);
        ResultDocument { schema: SCHEMA_VERSION, config: config.clone(), capacity, results, overlay }
    }
}

/// CSV columns in output order.
pub const COLUMNS: [&str; 19] = [
    "k", "p", "epsilon", "policy", "mode", "compaction", "trials", "seed", "E_tau", "rate", "fer", "fer_ci_lo", "fer_ci_hi",
    "mean_list", "max_list", "ns_per_transmission", "errors", "fer_guaranteed", "schema",
];

/// Streams rows to a CSV file, flushing after each one.
pub struct CsvSink<W: Write> {
    writer: csv::Writer<W>,
}

impl CsvSink<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self> {
        CsvSink::new(BufWriter::new(File::create(path)?))
    }
}

impl<W: Write> CsvSink<W> {
    /// Writes the header immediately, so an empty sweep still yields a valid table.
    pub fn new(inner: W) -> Result<Self> {
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(inner);
        writer.write_record(COLUMNS)?;
        writer.flush()?;
        Ok(CsvSink { writer })
    }

    pub fn push(&mut self, row: &AggregateResult) -> Result<()> {
        self.writer.serialize(row)?;
        self.writer.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W> {
        self.writer.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

/// CSV text for `rows`, header included.
pub fn to_csv_string(rows: &[AggregateResult]) -> Result<String> {
    let mut sink = CsvSink::new(Vec::new())?;
    for r in rows {
        sink.push(r)?;
    }
    Ok(String::from_utf8(sink.into_inner()?).expect("csv output is utf-8"))
}

pub fn write_json(path: &Path, doc: &ResultDocument) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, doc)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// JSON path next to a CSV output path.
pub fn json_path_for(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Fixed-width summary table for terminals.
pub fn summary_table(rows: &[AggregateResult]) -> String {
    let mut s = format!(
        "{:>5} {:>6} {:>8} {:>8} {:>10} {:>4} {:>9} {:>9} {:>7} {:>10} {:>8} {:>6}\n",
        "k", "p", "epsilon", "policy", "mode", "tail", "trials", "E[tau]", "rate", "fer", "list", "max"
    );
    for r in rows {
        let fer = if r.fer_guaranteed && r.errors == 0 { format!("<={:.0e}", r.epsilon) } else { format!("{:.3e}", r.fer) };
        s.push_str(&format!(
            "{:>5} {:>6} {:>8.0e} {:>8} {:>10} {:>4} {:>9} {:>9.3} {:>7.4} {:>10} {:>8.2} {:>6}\n",
            r.k,
            r.p,
            r.epsilon,
            r.policy,
            r.mode,
            if r.compaction { "on" } else { "off" },
            r.trials,
            r.e_tau,
            r.rate,
            fer,
            r.mean_list,
            r.max_list
        ));
    }
    s
}
