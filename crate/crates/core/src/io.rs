//! File formats.
//!
//! JSON for parameters, projections and reports; CSV for datasets, tables
//! and grids. Every float is written with 17 significant digits so files
//! re-read to the exact in-memory value. CSV files start with a `#` line
//! holding the producing run's config as compact JSON, then a header line.

use std::fs;
use std::io::{self as stdio, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::{Error, Result};
use crate::gaussian::{GaussianParams, LabeledDataset};
use crate::linalg::{Matrix, Vector};

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Pretty JSON with every float written through [`fmt_f64`].
struct ExactFormatter<'a>(PrettyFormatter<'a>);

impl Formatter for ExactFormatter<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> stdio::Result<()> {
        w.write_all(fmt_f64(value).as_bytes())
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> stdio::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> stdio::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> stdio::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> stdio::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> stdio::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> stdio::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> stdio::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> stdio::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> stdio::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Same as the pretty form but on one line.
struct CompactExactFormatter;

impl Formatter for CompactExactFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> stdio::Result<()> {
        w.write_all(fmt_f64(value).as_bytes())
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser =
        serde_json::Serializer::with_formatter(&mut buf, ExactFormatter(PrettyFormatter::new()));
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Parse(e.to_string()))?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
}

pub fn to_json_compact<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, CompactExactFormatter);
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
}

/// Writes via a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, to_json(value)?.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<Matrix> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Parse("ragged matrix rows".into()));
    }
    Ok(Matrix::from_fn(n, d, |i, j| rows[i][j]))
}

/// One class's parameters on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub class: usize,
    pub mean: Vec<f64>,
    /// Row-major.
    pub covariance: Vec<Vec<f64>>,
    pub config: serde_json::Value,
}

impl ParamsFile {
    pub fn new(class: usize, params: &GaussianParams, config: serde_json::Value) -> Self {
        Self {
            class,
            mean: params.mean().iter().copied().collect(),
            covariance: matrix_to_rows(params.covariance()),
            config,
        }
    }

    pub fn params(&self) -> Result<GaussianParams> {
        GaussianParams::new(
            Vector::from_vec(self.mean.clone()),
            rows_to_matrix(&self.covariance)?,
        )
    }
}

pub fn read_params(path: &Path) -> Result<GaussianParams> {
    read_json::<ParamsFile>(path)?.params()
}

/// Parses a CSV with header `label,x1,...,xd`, skipping `#` lines.
pub fn read_dataset(path: &Path) -> Result<LabeledDataset> {
    let text = fs::read_to_string(path)?;
    parse_dataset(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_dataset(text: &str) -> Result<LabeledDataset> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse("empty dataset".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"label") || cols.len() < 2 {
        return Err(Error::Parse(format!(
            "header must be 'label,x1,...', got '{header}'"
        )));
    }
    let d = cols.len() - 1;
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (lineno, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != d + 1 {
            return Err(Error::Parse(format!(
                "line {}: expected {} fields, found {}",
                lineno + 1,
                d + 1,
                fields.len()
            )));
        }
        let label = fields[0]
            .parse::<usize>()
            .map_err(|e| Error::Parse(format!("line {}: label: {e}", lineno + 1)))?;
        labels.push(label);
        for f in &fields[1..] {
            values.push(
                f.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: '{f}': {e}", lineno + 1)))?,
            );
        }
    }
    let samples = Matrix::from_row_slice(labels.len(), d, &values);
    LabeledDataset::new(samples, labels)
}

fn config_line(config: &serde_json::Value) -> Result<String> {
    Ok(format!("# {}\n", to_json_compact(config)?))
}

pub fn dataset_csv(data: &LabeledDataset, config: &serde_json::Value) -> Result<String> {
    let d = data.dim();
    let mut out = config_line(config)?;
    out.push_str("label");
    for j in 1..=d {
        out.push_str(&format!(",x{j}"));
    }
    out.push('\n');
    for (row, label) in data.samples().row_iter().zip(data.labels()) {
        out.push_str(&label.to_string());
        for x in row.iter() {
            out.push(',');
            out.push_str(&fmt_f64(*x));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Generic CSV writer: config line, header, then rows of preformatted cells.
pub fn table_csv(
    config: &serde_json::Value,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<String> {
    let mut out = config_line(config)?;
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    Ok(out)
}
