//! Reproduction driver for group-invariance experiments: dataset preparation,
//! training runs with manifests, evaluation, drift, spectral reports and the
//! aggregated experiment grids.

pub mod audit;
pub mod cli;
pub mod config;
pub mod datasets;
pub mod error;
pub mod reproduce;
pub mod runs;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

pub use error::{CliError, Result};

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(error::io_at(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    writeln!(w).map_err(error::io_at(path))?;
    w.flush().map_err(error::io_at(path))
}

/// Comma-separated rows with a header taken from the row type's field names.
pub fn write_csv<'a, T, I>(path: &Path, rows: I) -> Result<()>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(error::io_at(path))
}

/// CSV text of `rows`, as [`write_csv`] would write it.
pub fn csv_string<'a, T, I>(rows: I) -> Result<String>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}
