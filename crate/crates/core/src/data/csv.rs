//! Plain-text CSV persistence.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a save
//! followed by a load reproduces every `f64` bit for bit.
//!
//! * dataset: `label,f1,...,fd`
//! * wild set: `gt,f1,...,fd` with `gt` in `{id, ood}`
//! * loss trace: `sample_id,epoch,loss`, one row per cell, zero-based epochs

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::data::{LabeledDataset, WildSet};
use crate::error::{Error, Result};
use crate::filter::LossTrace;

/// A type with a CSV file representation.
pub trait CsvFormat: Sized {
    fn to_csv(&self) -> String;
    /// `path` is only used for error messages.
    fn from_csv(text: &str, path: &Path) -> Result<Self>;
}

pub fn save_csv<T: CsvFormat>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, value.to_csv()).map_err(|e| Error::io(path, e))
}

pub fn load_csv<T: CsvFormat>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    T::from_csv(&text, path)
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn feature_header(first: &str, d: usize) -> String {
    let mut h = first.to_string();
    for j in 1..=d {
        write!(h, ",f{j}").unwrap();
    }
    h
}

/// Splits non-empty lines, returning `(line_number, cells)` with 1-based
/// line numbers.
fn rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.split(',').map(str::trim).collect()))
}

fn check_feature_header(path: &Path, first: &str, cells: &[&str]) -> Result<usize> {
    if cells.first() != Some(&first) {
        return Err(parse_err(path, 1, format!("header must start with `{first}`")));
    }
    for (j, c) in cells.iter().enumerate().skip(1) {
        if *c != format!("f{j}") {
            return Err(parse_err(path, 1, format!("expected column `f{j}`, found `{c}`")));
        }
    }
    if cells.len() < 2 {
        return Err(parse_err(path, 1, "no feature columns"));
    }
    Ok(cells.len() - 1)
}

fn parse_f64(path: &Path, line: usize, cell: &str) -> Result<f64> {
    let v: f64 = cell
        .parse()
        .map_err(|_| parse_err(path, line, format!("`{cell}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("`{cell}` is not finite")));
    }
    Ok(v)
}

fn parse_usize(path: &Path, line: usize, cell: &str) -> Result<usize> {
    cell.parse()
        .map_err(|_| parse_err(path, line, format!("`{cell}` is not a non-negative integer")))
}

/// Reads `first_col,f1..fd` files; returns the first column raw plus features.
fn read_feature_table<'a>(
    text: &'a str,
    path: &Path,
    first: &str,
) -> Result<(Vec<(usize, &'a str)>, Array2<f64>)> {
    let mut it = rows(text);
    let (_, header) = it.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let d = check_feature_header(path, first, &header)?;
    let mut keys = Vec::new();
    let mut flat = Vec::new();
    for (line, cells) in it {
        if cells.len() != d + 1 {
            return Err(parse_err(
                path,
                line,
                format!("expected {} columns, found {}", d + 1, cells.len()),
            ));
        }
        keys.push((line, cells[0]));
        for c in &cells[1..] {
            flat.push(parse_f64(path, line, c)?);
        }
    }
    if keys.is_empty() {
        return Err(parse_err(path, 2, "no data rows"));
    }
    let features = Array2::from_shape_vec((keys.len(), d), flat).expect("row lengths checked");
    Ok((keys, features))
}

fn write_feature_table(
    first: &str,
    keys: impl Iterator<Item = String>,
    features: &Array2<f64>,
) -> String {
    let mut out = feature_header(first, features.ncols());
    out.push('\n');
    for (key, row) in keys.zip(features.rows()) {
        out.push_str(&key);
        for v in row {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

impl CsvFormat for LabeledDataset {
    fn to_csv(&self) -> String {
        write_feature_table("label", self.labels.iter().map(|y| y.to_string()), &self.features)
    }

    /// The class count is inferred as `max(label) + 1`.
    fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let (keys, features) = read_feature_table(text, path, "label")?;
        let labels = keys
            .iter()
            .map(|&(line, c)| parse_usize(path, line, c))
            .collect::<Result<Vec<_>>>()?;
        let k = labels.iter().max().map_or(1, |m| m + 1);
        LabeledDataset::new(features, labels, k)
    }
}

impl CsvFormat for WildSet {
    fn to_csv(&self) -> String {
        let keys = self
            .ground_truth
            .iter()
            .map(|&id| if id { "id".to_string() } else { "ood".to_string() });
        write_feature_table("gt", keys, &self.features)
    }

    fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let (keys, features) = read_feature_table(text, path, "gt")?;
        let gt = keys
            .iter()
            .map(|&(line, c)| match c {
                "id" => Ok(true),
                "ood" => Ok(false),
                other => Err(parse_err(path, line, format!("gt must be `id` or `ood`, found `{other}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        WildSet::new(features, gt)
    }
}

impl CsvFormat for LossTrace {
    fn to_csv(&self) -> String {
        let mut out = String::from("sample_id,epoch,loss\n");
        for (row, &id) in self.values().rows().into_iter().zip(self.sample_ids()) {
            for (epoch, v) in row.iter().enumerate() {
                writeln!(out, "{id},{epoch},{v}").unwrap();
            }
        }
        out
    }

    fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let mut it = rows(text);
        let (_, header) = it.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
        if header != ["sample_id", "epoch", "loss"] {
            return Err(parse_err(path, 1, "header must be `sample_id,epoch,loss`"));
        }
        let mut cells = Vec::new();
        for (line, c) in it {
            if c.len() != 3 {
                return Err(parse_err(path, line, format!("expected 3 columns, found {}", c.len())));
            }
            let id = parse_usize(path, line, c[0])?;
            let epoch = parse_usize(path, line, c[1])?;
            let loss = parse_f64(path, line, c[2])?;
            cells.push((line, id, epoch, loss));
        }
        if cells.is_empty() {
            return Err(parse_err(path, 2, "no data rows"));
        }
        let epochs = cells.iter().map(|c| c.2).max().unwrap() + 1;
        let mut ids: Vec<usize> = Vec::new();
        let mut slot_of: HashMap<usize, usize> = HashMap::new();
        for c in &cells {
            slot_of.entry(c.1).or_insert_with(|| {
                ids.push(c.1);
                ids.len() - 1
            });
        }
        let mut values = Array2::from_elem((ids.len(), epochs), f64::NAN);
        for &(line, id, epoch, loss) in &cells {
            let slot = &mut values[[slot_of[&id], epoch]];
            if !slot.is_nan() {
                return Err(parse_err(path, line, format!("duplicate cell ({id}, {epoch})")));
            }
            *slot = loss;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(parse_err(path, cells.last().unwrap().0, "trace has missing cells"));
        }
        LossTrace::new(values, ids)
    }
}
