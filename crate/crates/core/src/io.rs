//! CSV and JSON file helpers.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Writes an N×k matrix with header `{prefix}0,{prefix}1,…`.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>, prefix: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((0..m.ncols()).map(|j| format!("{prefix}{j}")))?;
    for i in 0..m.nrows() {
        // `{:?}` prints the shortest representation that round-trips exactly.
        w.write_record((0..m.ncols()).map(|j| format!("{:?}", m[(i, j)])))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV written by [`write_matrix_csv`]; returns the header and matrix.
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let cols = header.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != cols {
            return Err(Error::Format(format!(
                "{}: row {rows} has {} fields, header has {cols}",
                path.display(),
                rec.len()
            )));
        }
        for f in rec.iter() {
            data.push(f.trim().parse::<f64>().map_err(|e| {
                Error::Format(format!("{}: bad number `{f}`: {e}", path.display()))
            })?);
        }
        rows += 1;
    }
    Ok((header, DMatrix::from_row_slice(rows, cols, &data)))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}
