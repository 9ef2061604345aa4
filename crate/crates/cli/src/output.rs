//! Report documents, the comparison table, and atomic file output.

use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use clap::ValueEnum;
use hmmu::meter::REPORT_SCHEMA_VERSION;
use hmmu::{FinalReport, PolicyKind};
use serde::Serialize;

#[derive(Clone, Copy, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Serialize)]
pub struct RunRecord {
    pub label: String,
    pub policy: PolicyKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_value: Option<String>,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<FinalReport>,
}

impl RunRecord {
    pub fn new(
        policy: PolicyKind,
        sweep_value: Option<String>,
        param: Option<&str>,
        result: Result<FinalReport, String>,
    ) -> Self {
        let label = match (&sweep_value, param) {
            (Some(v), Some(p)) => format!("{policy}@{p}={v}"),
            _ => policy.to_string(),
        };
        let (status, error, report) = match result {
            Ok(r) => (Status::Ok, None, Some(r)),
            Err(e) => (Status::Failed, Some(e), None),
        };
        Self {
            label,
            policy,
            sweep_value,
            status,
            error,
            report,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Document {
    pub schema_version: u32,
    pub trace: String,
    pub requests: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_param: Option<String>,
    pub runs: Vec<RunRecord>,
}

impl Document {
    pub fn new(
        trace: String,
        requests: u64,
        sweep_param: Option<String>,
        runs: Vec<RunRecord>,
    ) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            trace,
            requests,
            sweep_param,
            runs,
        }
    }

    pub fn all_ok(&self) -> bool {
        self.runs.iter().all(|r| r.status == Status::Ok)
    }
}

fn write_doc<W: Write>(doc: &Document, mut w: W, format: Format) -> Result<()> {
    match format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut w, doc)?;
            writeln!(w)?;
        }
        Format::Csv => {
            let mut csv_rows = Vec::new();
            for r in &doc.runs {
                match &r.report {
                    Some(rep) => csv_rows.push(rep.csv_row(&r.label)),
                    None => {
                        let mut row = vec![String::new(); FinalReport::CSV_HEADER.len()];
                        row[0] = doc.schema_version.to_string();
                        row[1] = r.policy.to_string();
                        *row.last_mut().unwrap() =
                            format!("FAILED {}: {}", r.label, r.error.as_deref().unwrap_or(""));
                        csv_rows.push(row);
                    }
                }
            }
            let mut out = csv::Writer::from_writer(&mut w);
            out.write_record(FinalReport::CSV_HEADER)?;
            for row in csv_rows {
                out.write_record(row)?;
            }
            out.flush()?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes to a temporary file beside `path` and renames it into place, so
/// readers never see a half-written file.
pub fn write_atomically(
    path: &Path,
    body: impl FnOnce(&mut dyn Write) -> Result<()>,
) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating a temporary file in {}", dir.display()))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn emit(doc: &Document, out: Option<&Path>, format: Format) -> Result<()> {
    match out {
        Some(path) => {
            write_atomically(path, |w| write_doc(doc, w, format))?;
            print_table(doc, io::stdout().lock())?;
        }
        None => {
            write_doc(doc, io::stdout().lock(), format)?;
            print_table(doc, io::stderr().lock())?;
        }
    }
    Ok(())
}

/// Human-readable comparison, one line per run.
pub fn print_table<W: Write>(doc: &Document, mut w: W) -> io::Result<()> {
    let width = doc
        .runs
        .iter()
        .map(|r| r.label.len())
        .max()
        .unwrap_or(5)
        .max(5);
    writeln!(
        w,
        "{:<width$} {:>14} {:>8} {:>8} {:>12} {:>10} {:>10}",
        "run", "runtime_ns", "speedup", "energy", "slow_writes", "page_swaps", "blk_fills"
    )?;
    for r in &doc.runs {
        match &r.report {
            Some(rep) => {
                let (speedup, energy) = rep.vs_alldram.map_or(("-".into(), "-".into()), |n| {
                    (
                        format!("{:.3}", n.speedup),
                        format!("{:.3}", n.energy_ratio),
                    )
                });
                writeln!(
                    w,
                    "{:<width$} {:>14} {:>8} {:>8} {:>12} {:>10} {:>10}",
                    r.label,
                    rep.total_foreground_ns,
                    speedup,
                    energy,
                    rep.slow_writes_total,
                    rep.page_swaps,
                    rep.block_fills
                )?;
            }
            None => writeln!(
                w,
                "{:<width$} FAILED: {}",
                r.label,
                r.error.as_deref().unwrap_or("")
            )?,
        }
    }
    Ok(())
}
