//! CSV ingestion and export, plus the kernel density estimate used for
//! plot-ready efficiency files.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Result, SfaError};

/// Name of the required output column.
pub const OUTPUT_COLUMN: &str = "y";

/// Parse a dataset from CSV text: a header row, one column named `y`, every
/// other column an input in file order. Rows are numbered from 1, counting
/// the first data row after the header.
pub fn parse_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| SfaError::Parse {
            row: 0,
            column: String::new(),
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(SfaError::DegenerateData("empty file".into()));
    }
    let y_pos = headers
        .iter()
        .position(|h| h == OUTPUT_COLUMN)
        .ok_or_else(|| SfaError::Parse {
            row: 0,
            column: OUTPUT_COLUMN.into(),
            message: "required column is missing from the header".into(),
        })?;
    let input_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != y_pos)
        .map(|(_, h)| h.clone())
        .collect();

    let mut inputs = Vec::new();
    let mut output = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| SfaError::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(SfaError::Parse {
                row,
                column: String::new(),
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            let value = parse_cell(cell).map_err(|message| SfaError::Parse {
                row,
                column: headers[j].clone(),
                message,
            })?;
            if j == y_pos {
                output.push(value);
            } else {
                inputs.push(value);
            }
        }
    }
    if output.is_empty() {
        return Err(SfaError::DegenerateData("no data rows".into()));
    }
    Dataset::new(input_names, inputs, output)
}

fn parse_cell(cell: &str) -> std::result::Result<f64, String> {
    if cell.is_empty() {
        return Err("missing value".into());
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(format!("non-finite value {cell:?}")),
        Err(_) => Err(format!("not a number: {cell:?}")),
    }
}

/// [`parse_csv`] on a file.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| SfaError::Io(format!("{}: {e}", path.display())))?;
    parse_csv(file)
}

/// Non-fatal observations about a loaded sample.
pub fn data_warnings(data: &Dataset) -> Vec<String> {
    let mut out = Vec::new();
    let y = data.output();
    if y.windows(2).all(|w| w[0] == w[1]) {
        out.push("column y is constant".to_string());
    }
    out
}

/// Write `data` as CSV with `y` first. Values use the shortest
/// representation that reads back to the same double.
pub fn write_csv_to<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io_err = |e: csv::Error| SfaError::Io(e.to_string());
    let mut header = vec![OUTPUT_COLUMN.to_string()];
    header.extend(data.input_names().iter().cloned());
    w.write_record(&header).map_err(io_err)?;
    for i in 0..data.len() {
        let mut rec = vec![format!("{}", data.y(i))];
        rec.extend(data.inputs(i).iter().map(|v| format!("{v}")));
        w.write_record(&rec).map_err(io_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(data: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| SfaError::Io(format!("{}: {e}", path.display())))?;
    write_csv_to(data, file)
}

/// Write named columns of equal length as CSV.
pub fn write_columns(path: &Path, names: &[&str], columns: &[Vec<f64>]) -> Result<()> {
    let file = File::create(path).map_err(|e| SfaError::Io(format!("{}: {e}", path.display())))?;
    let mut w = csv::Writer::from_writer(file);
    let io_err = |e: csv::Error| SfaError::Io(e.to_string());
    w.write_record(names).map_err(io_err)?;
    let n = columns.first().map_or(0, Vec::len);
    for i in 0..n {
        w.write_record(columns.iter().map(|c| format!("{}", c[i])))
            .map_err(io_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Silverman's rule-of-thumb bandwidth `0.9·min(sd, IQR/1.34)·n^{−1/5}`.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 1.0;
    }
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = p * (n - 1.0);
        let lo = h.floor() as usize;
        let hi = (lo + 1).min(sorted.len() - 1);
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * n.powf(-0.2);
    if h > 0.0 {
        h
    } else {
        1e-3
    }
}

/// Gaussian kernel density estimate on `points` evenly spaced nodes spanning
/// the data range padded by three bandwidths.
pub fn kde(values: &[f64], points: usize) -> (Vec<f64>, Vec<f64>) {
    if values.is_empty() || points == 0 {
        return (Vec::new(), Vec::new());
    }
    let h = silverman_bandwidth(values);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let n = values.len() as f64;
    let xs: Vec<f64> = (0..points)
        .map(|i| {
            if points == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * i as f64 / (points - 1) as f64
            }
        })
        .collect();
    let dens = xs
        .iter()
        .map(|&x| {
            values
                .iter()
                .map(|v| crate::stats::std_normal_pdf((x - v) / h))
                .sum::<f64>()
                / (n * h)
        })
        .collect();
    (xs, dens)
}
