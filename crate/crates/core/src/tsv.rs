//! Loading plain-text matrices: one row per voxel, one column per frame,
//! tab- or comma-separated. Handy for desk checks and unit fixtures.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::TimeSeriesVolume;

/// Parses a numeric matrix into a volume with grid `(rows, 1, 1)`.
pub fn load_tsv_matrix(path: impl AsRef<Path>) -> Result<TimeSeriesVolume> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;

    let mut values: Vec<f64> = Vec::new();
    let mut frames = 0usize;
    let mut rows = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let sep = if line.contains('\t') { '\t' } else { ',' };
        let fields: Vec<&str> = line.split(sep).collect();
        if rows == 0 {
            frames = fields.len();
        } else if fields.len() != frames {
            return Err(Error::format(
                path,
                format!(
                    "row {} has {} columns, expected {frames}",
                    lineno + 1,
                    fields.len()
                ),
            ));
        }
        for (col, field) in fields.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::format(
                    path,
                    format!(
                        "row {}, column {}: cannot parse '{}' as a number",
                        lineno + 1,
                        col + 1,
                        field.trim()
                    ),
                )
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::format(path, "no data rows"));
    }
    TimeSeriesVolume::new((rows, 1, 1), frames, values)
        .map_err(|e| Error::format(path, e.to_string()))
}
