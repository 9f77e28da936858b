//! Long-format result tables.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use causreg_core::Lambda;

use crate::error::{CliError, CliResult};

pub const COLUMNS: [&str; 7] = ["run_id", "experiment", "replication", "n", "lambda", "metric", "value"];

/// 17 significant digits; lossless for every finite `f64`.
pub fn fmt_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn fmt_lambda(l: Option<Lambda>) -> String {
    match l {
        None => String::new(),
        Some(Lambda::Infinity) => "inf".into(),
        Some(Lambda::Finite(v)) => fmt_float(v),
    }
}

/// `Index(r)` for one replication, `Aggregate` for summaries across them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Replication {
    Index(usize),
    Aggregate,
}

impl std::fmt::Display for Replication {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Replication::Index(r) => write!(f, "{r}"),
            Replication::Aggregate => f.write_str("all"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub replication: Replication,
    pub n: usize,
    pub lambda: Option<Lambda>,
    pub metric: String,
    pub value: f64,
}

impl Row {
    pub fn new(replication: Replication, n: usize, lambda: Option<Lambda>, metric: impl Into<String>, value: f64) -> Self {
        Self { replication, n, lambda, metric: metric.into(), value }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub run_id: String,
    pub experiment: String,
    rows: Vec<Row>,
    keys: HashSet<(Replication, usize, String, String)>,
}

impl ResultTable {
    pub fn new(run_id: impl Into<String>, experiment: impl Into<String>) -> Self {
        Self { run_id: run_id.into(), experiment: experiment.into(), rows: Vec::new(), keys: HashSet::new() }
    }

    /// Appends a row, rejecting a repeated (replication, n, λ, metric) key.
    pub fn push(&mut self, row: Row) -> CliResult<()> {
        let key = (row.replication, row.n, fmt_lambda(row.lambda), row.metric.clone());
        if !self.keys.insert(key) {
            return Err(CliError::DuplicateKey(format!(
                "{}/{}: replication {}, n {}, lambda {:?}, metric {}",
                self.run_id,
                self.experiment,
                row.replication,
                row.n,
                fmt_lambda(row.lambda),
                row.metric
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn extend(&mut self, rows: impl IntoIterator<Item = Row>) -> CliResult<()> {
        rows.into_iter().try_for_each(|r| self.push(r))
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Values of `metric` in row order, optionally restricted to one `n`.
    pub fn values(&self, metric: &str, n: Option<usize>) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.metric == metric && n.is_none_or(|n| r.n == n))
            .map(|r| r.value)
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| CliError::Io { path: "<table>".into(), source: std::io::Error::other(e) };
        w.write_record(COLUMNS).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                self.run_id.as_str(),
                self.experiment.as_str(),
                &r.replication.to_string(),
                &r.n.to_string(),
                &fmt_lambda(r.lambda),
                &r.metric,
                &fmt_float(r.value),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|source| CliError::Io { path: "<table>".into(), source })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let file = std::fs::File::create(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}
