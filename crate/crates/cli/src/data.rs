//! Two-environment CSV files: header `x1,…,xp,y,<env>`, one row per
//! observation.

use std::io::Write;
use std::path::Path;

use causreg_core::{Dataset, DMatrix, DVector, EnvPair};

use crate::error::{CliError, CliResult, IngestError};
use crate::table::fmt_float;

struct Columns {
    x: Vec<usize>,
    y: usize,
    env: usize,
}

fn locate_columns(header: &csv::StringRecord, env_column: &str) -> Result<Columns, IngestError> {
    let find = |name: &str| {
        header.iter().position(|h| h.trim() == name).ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    };
    let p = header
        .iter()
        .filter_map(|h| h.trim().strip_prefix('x').and_then(|k| k.parse::<usize>().ok()))
        .max()
        .unwrap_or(0);
    if p == 0 {
        return Err(IngestError::MissingColumn("x1".into()));
    }
    let x = (1..=p).map(|k| find(&format!("x{k}"))).collect::<Result<_, _>>()?;
    Ok(Columns { x, y: find("y")?, env: find(env_column)? })
}

fn parse_cell(record: &csv::StringRecord, idx: usize, row: usize, name: &str) -> Result<f64, IngestError> {
    record
        .get(idx)
        .and_then(|s| s.trim().parse::<f64>().ok())
        .filter(|v| v.is_finite())
        .ok_or_else(|| IngestError::NonNumericCell { row, col: name.to_string() })
}

fn center(rows: &mut [Vec<f64>]) {
    let Some(width) = rows.first().map(Vec::len) else { return };
    let n = rows.len() as f64;
    for j in 0..width {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        for r in rows.iter_mut() {
            r[j] -= mean;
        }
    }
}

fn to_dataset(rows: &[Vec<f64>], p: usize, label: &str) -> Dataset {
    let x = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
    let y = DVector::from_fn(rows.len(), |i, _| rows[i][p]);
    Dataset::new(x, y, label).expect("row-aligned by construction")
}

/// Reads a two-environment CSV. `labels` are (observational, shifted).
/// Rows are numbered from 1, counting data rows only. With `center`, every
/// column is mean-centred within each environment.
pub fn ingest_csv(path: &Path, env_column: &str, labels: (&str, &str), center_columns: bool) -> CliResult<EnvPair> {
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    ingest_reader(file, env_column, labels, center_columns)
}

pub fn ingest_reader<R: std::io::Read>(
    reader: R,
    env_column: &str,
    (obs_label, shift_label): (&str, &str),
    center_columns: bool,
) -> CliResult<EnvPair> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| IngestError::Csv(e.to_string()))?.clone();
    let cols = locate_columns(&header, env_column)?;
    let p = cols.x.len();
    let (mut obs, mut shifted) = (Vec::new(), Vec::new());
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| IngestError::Csv(e.to_string()))?;
        let mut values = Vec::with_capacity(p + 1);
        for (k, &idx) in cols.x.iter().enumerate() {
            values.push(parse_cell(&record, idx, row, &format!("x{}", k + 1))?);
        }
        values.push(parse_cell(&record, cols.y, row, "y")?);
        let label = record.get(cols.env).unwrap_or("").trim();
        if label == obs_label {
            obs.push(values);
        } else if label == shift_label {
            shifted.push(values);
        } else {
            return Err(IngestError::UnknownLabel { row, label: label.to_string() }.into());
        }
    }
    for (rows, label) in [(&obs, obs_label), (&shifted, shift_label)] {
        if rows.is_empty() {
            return Err(IngestError::EmptyEnvironment(label.to_string()).into());
        }
    }
    if center_columns {
        center(&mut obs);
        center(&mut shifted);
    }
    Ok(EnvPair::new(to_dataset(&obs, p, obs_label), to_dataset(&shifted, p, shift_label))?)
}

/// Writes `pair` in the ingest format, observational rows first, floats with
/// 17 significant digits.
pub fn write_pair_csv<W: Write>(out: W, pair: &EnvPair, labels: (&str, &str)) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let p = pair.p();
    let mut header: Vec<String> = (1..=p).map(|k| format!("x{k}")).collect();
    header.extend(["y".to_string(), "env".to_string()]);
    let csv_err = |e: csv::Error| CliError::Io { path: "<csv>".into(), source: std::io::Error::other(e) };
    w.write_record(&header).map_err(csv_err)?;
    for (d, label) in [(&pair.obs, labels.0), (&pair.shifted, labels.1)] {
        for i in 0..d.n() {
            let mut rec: Vec<String> = (0..p).map(|j| fmt_float(d.x()[(i, j)])).collect();
            rec.push(fmt_float(d.y()[i]));
            rec.push(label.to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|source| CliError::Io { path: "<csv>".into(), source })?;
    Ok(())
}
