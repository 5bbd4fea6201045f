//! Plain-text field files and atomic writes.
//!
//! A field file has one header line followed by one row per time level
//! (one row in total for spatial fields), each row holding the interior
//! values in grid order:
//!
//! ```text
//! n=1 nodes=17 T=1 N_t=16 rows=17
//! 0 0 0 ...
//! ```
//!
//! Values are written in shortest round-trip form, so reading a file back
//! reproduces the field bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{GridFunction, Grids, SpatialField};

fn io_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Writes `contents` to a temporary file next to `path` and renames it.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_error(dir, e))?;
    tmp.write_all(contents).map_err(|e| io_error(path, e))?;
    tmp.persist(path).map_err(|e| io_error(path, e.error))?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| io_error(path, e))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn header(grids: &Grids, rows: usize) -> String {
    let nodes: Vec<String> = grids.space.nodes().iter().map(|n| n.to_string()).collect();
    format!(
        "n={} nodes={} T={} N_t={} rows={rows}",
        grids.space.dim(),
        nodes.join("x"),
        grids.time.horizon(),
        grids.time.steps()
    )
}

fn render(grids: &Grids, rows: &[&[f64]]) -> String {
    let mut s = header(grids, rows.len());
    s.push('\n');
    for row in rows {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            write!(s, "{v:?}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn format_grid_function(grids: &Grids, f: &GridFunction) -> Result<String> {
    grids.check(f)?;
    let rows: Vec<&[f64]> = (0..grids.levels()).map(|k| f.level(k)).collect();
    Ok(render(grids, &rows))
}

pub fn format_spatial_field(grids: &Grids, f: &SpatialField) -> Result<String> {
    grids.check_spatial(f)?;
    Ok(render(grids, &[&f.values]))
}

fn parse(path: &Path, text: &str, grids: &Grids, rows: usize) -> Result<Vec<f64>> {
    let mut lines = text.lines();
    let head = lines.next().ok_or_else(|| io_error(path, "empty file"))?;
    let expected = header(grids, rows);
    if head.trim() != expected {
        return Err(io_error(path, format!("header `{head}` does not match the grid `{expected}`")));
    }
    let width = grids.space.interior_len();
    let mut out = Vec::with_capacity(rows * width);
    for (r, line) in lines.enumerate() {
        if r >= rows {
            if line.trim().is_empty() {
                continue;
            }
            return Err(io_error(path, format!("line {}: more than {rows} rows", r + 2)));
        }
        let before = out.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| io_error(path, format!("line {}: `{tok}` is not a number", r + 2)))?;
            out.push(v);
        }
        if out.len() - before != width {
            return Err(io_error(
                path,
                format!("line {}: expected {width} values, found {}", r + 2, out.len() - before),
            ));
        }
    }
    if out.len() != rows * width {
        return Err(io_error(path, format!("expected {rows} rows, found {}", out.len() / width.max(1))));
    }
    Ok(out)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

pub fn parse_grid_function(path: &Path, text: &str, grids: &Grids) -> Result<GridFunction> {
    GridFunction::from_values(grids, parse(path, text, grids, grids.levels())?)
}

pub fn parse_spatial_field(path: &Path, text: &str, grids: &Grids) -> Result<SpatialField> {
    Ok(SpatialField {
        values: parse(path, text, grids, 1)?,
    })
}

pub fn write_grid_function(path: &Path, grids: &Grids, f: &GridFunction) -> Result<()> {
    write_atomic(path, format_grid_function(grids, f)?.as_bytes())
}

pub fn write_spatial_field(path: &Path, grids: &Grids, f: &SpatialField) -> Result<()> {
    write_atomic(path, format_spatial_field(grids, f)?.as_bytes())
}

pub fn read_grid_function(path: &Path, grids: &Grids) -> Result<GridFunction> {
    parse_grid_function(path, &read(path)?, grids)
}

pub fn read_spatial_field(path: &Path, grids: &Grids) -> Result<SpatialField> {
    parse_spatial_field(path, &read(path)?, grids)
}
