//! The results table and its CSV wire format: header
//! `run_id,seed,protocol,unit,phase,plcc,srocc,loss,wall_ms`, UTF-8, LF
//! endings, rows sorted by (run_id, seed, unit, phase), correlations and
//! losses printed to nine decimal places, undefined values as `NA`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CliError, Result};

pub const HEADER: &str = "run_id,seed,protocol,unit,phase,plcc,srocc,loss,wall_ms";

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub run_id: String,
    pub seed: u64,
    pub protocol: String,
    /// Held-out family, split id, or sweep cell.
    pub unit: String,
    pub phase: String,
    pub plcc: Option<f64>,
    pub srocc: Option<f64>,
    pub loss: Option<f64>,
    pub wall_ms: Option<u64>,
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.9}"),
        None => "NA".into(),
    }
}

/// Render the table deterministically. Rows are sorted by
/// (run_id, seed, unit, phase); the phase key breaks the remaining tie so
/// re-emission is byte-stable regardless of construction order.
pub fn render_results(rows: &[Row]) -> Result<String> {
    if rows.is_empty() {
        return Err(CliError::Config("results table is empty".into()));
    }
    let mut sorted: Vec<&Row> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.run_id, a.seed, &a.unit, &a.phase).cmp(&(&b.run_id, b.seed, &b.unit, &b.phase))
    });
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    for r in sorted {
        let wall = match r.wall_ms {
            Some(ms) => ms.to_string(),
            None => "NA".into(),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.run_id,
            r.seed,
            r.protocol,
            r.unit,
            r.phase,
            fmt_opt(r.plcc),
            fmt_opt(r.srocc),
            fmt_opt(r.loss),
            wall
        )
        .expect("writing to String cannot fail");
    }
    Ok(out)
}

pub fn emit_results(rows: &[Row], path: &Path) -> Result<()> {
    let text = render_results(rows)?;
    std::fs::write(path, text.as_bytes())?;
    Ok(())
}

/// Parse a results CSV back into rows (the inverse of `emit_results`, used
/// for post-run analysis and tests).
pub fn parse_results(text: &str) -> Result<Vec<Row>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == HEADER => {}
        other => {
            return Err(CliError::Config(format!(
                "results header mismatch: got {other:?}"
            )))
        }
    }
    let parse_opt = |field: &str, what: &str, line: usize| -> Result<Option<f64>> {
        if field == "NA" {
            return Ok(None);
        }
        field
            .parse::<f64>()
            .map(Some)
            .map_err(|e| CliError::Config(format!("line {line}: bad {what} `{field}`: {e}")))
    };
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(CliError::Config(format!(
                "line {n}: expected 9 fields, got {}",
                fields.len()
            )));
        }
        rows.push(Row {
            run_id: fields[0].to_string(),
            seed: fields[1]
                .parse()
                .map_err(|e| CliError::Config(format!("line {n}: bad seed: {e}")))?,
            protocol: fields[2].to_string(),
            unit: fields[3].to_string(),
            phase: fields[4].to_string(),
            plcc: parse_opt(fields[5], "plcc", n)?,
            srocc: parse_opt(fields[6], "srocc", n)?,
            loss: parse_opt(fields[7], "loss", n)?,
            wall_ms: if fields[8] == "NA" {
                None
            } else {
                Some(
                    fields[8]
                        .parse()
                        .map_err(|e| CliError::Config(format!("line {n}: bad wall_ms: {e}")))?,
                )
            },
        });
    }
    Ok(rows)
}

/// Per-epoch training curve, one file per run: `run_id,seed,unit,epoch,query_loss`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub run_id: String,
    pub seed: u64,
    pub unit: String,
    pub epoch: usize,
    pub query_loss: f64,
}

pub const TRAIN_LOG_HEADER: &str = "run_id,seed,unit,epoch,query_loss";

pub fn emit_train_log(rows: &[TrainLogRow], path: &Path) -> Result<()> {
    let mut sorted: Vec<&TrainLogRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.run_id, a.seed, &a.unit, a.epoch).cmp(&(&b.run_id, b.seed, &b.unit, b.epoch))
    });
    let mut out = String::new();
    out.push_str(TRAIN_LOG_HEADER);
    out.push('\n');
    for r in sorted {
        writeln!(
            out,
            "{},{},{},{},{:.9}",
            r.run_id, r.seed, r.unit, r.epoch, r.query_loss
        )
        .expect("writing to String cannot fail");
    }
    std::fs::write(path, out.as_bytes())?;
    Ok(())
}
