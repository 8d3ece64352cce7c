//! Stream CSV import and export, and atomic file output.

use std::io::Write;
use std::path::Path;

use gmpp_core::experts::Observation;
use tempfile::NamedTempFile;

use crate::error::{CliError, CliResult};

/// Writes `bytes` to a temporary file next to `path`, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut file = NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    file.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    file.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    file.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

/// Shortest text that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    CliError::Stream {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Stream CSV with header `t,x_1..x_n,y`.
pub fn stream_to_csv(stream: &[Observation]) -> CliResult<Vec<u8>> {
    let dims = stream.first().map_or(0, |o| o.x.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=dims).map(|k| format!("x_{k}")))
        .chain(std::iter::once("y".to_string()))
        .collect();
    let here = Path::new("<stream>");
    w.write_record(&header).map_err(|e| csv_error(here, e))?;
    for (k, o) in stream.iter().enumerate() {
        let row: Vec<String> = std::iter::once((k + 1).to_string())
            .chain(o.x.iter().map(|&v| fmt_f64(v)))
            .chain(std::iter::once(fmt_f64(o.y)))
            .collect();
        w.write_record(&row).map_err(|e| csv_error(here, e))?;
    }
    w.into_inner().map_err(|e| CliError::Stream {
        path: here.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn read_stream(path: &Path) -> CliResult<Vec<Observation>> {
    let bad = |message: String| CliError::Stream {
        path: path.to_path_buf(),
        message,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    let n = header.len();
    let expected: Vec<String> = std::iter::once("t".to_string())
        .chain((1..n.saturating_sub(1)).map(|k| format!("x_{k}")))
        .chain(std::iter::once("y".to_string()))
        .collect();
    if n < 3 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(bad(format!("header must be {}", expected.join(","))));
    }
    let mut stream = Vec::new();
    for (k, row) in r.records().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let values = row
            .iter()
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| bad(format!("row {}: {e}", k + 1)))?;
        if values[0] != (k + 1) as f64 {
            return Err(bad(format!("row {}: t must count 1, 2, ...", k + 1)));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(bad(format!("row {}: values must be finite", k + 1)));
        }
        stream.push(Observation::new(values[1..n - 1].to_vec(), values[n - 1]));
    }
    if stream.is_empty() {
        return Err(bad("the stream has no rows".into()));
    }
    Ok(stream)
}
