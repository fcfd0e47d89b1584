//! Versioned text format for datasets and sample files.

use std::fmt::Write as _;
use std::path::Path;

use dpsad_core::dataset::LabeledDataset;
use dpsad_core::tensor::Tensor;

use crate::{CliError, CliResult};

pub const MAGIC: &str = "DPSAD-DATA v1";

/// Rows of `d` values with an optional label column.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub x: Tensor,
    pub labels: Option<Vec<usize>>,
    /// Declared class count; 0 when unlabeled.
    pub num_classes: usize,
    pub range: (f64, f64),
    /// Free-form `key=value` lines recorded in the header.
    pub provenance: Vec<(String, String)>,
}

impl DatasetFile {
    pub fn from_labeled(data: &LabeledDataset) -> Self {
        Self {
            x: data.x.clone(),
            labels: Some(data.labels.clone()),
            num_classes: data.num_classes,
            range: (-1.0, 1.0),
            provenance: Vec::new(),
        }
    }

    pub fn unlabeled(x: Tensor) -> Self {
        Self { x, labels: None, num_classes: 0, range: (-1.0, 1.0), provenance: Vec::new() }
    }

    pub fn with_provenance(mut self, key: &str, value: impl ToString) -> Self {
        self.provenance.push((key.to_string(), value.to_string()));
        self
    }

    pub fn rows(&self) -> usize {
        self.x.rows()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Labeled view; fails when the file has no labels.
    pub fn labeled(&self) -> CliResult<LabeledDataset> {
        let labels = self.labels.clone().ok_or_else(|| CliError::usage("dataset has no label column"))?;
        Ok(LabeledDataset::new(self.x.clone(), labels, self.num_classes)?)
    }

    pub fn to_text(&self) -> String {
        let (n, d) = (self.x.rows(), self.x.cols());
        let mut s = String::new();
        writeln!(s, "{MAGIC}").unwrap();
        writeln!(s, "n={n}").unwrap();
        writeln!(s, "d={d}").unwrap();
        writeln!(s, "k={}", self.num_classes).unwrap();
        writeln!(s, "range={},{}", self.range.0, self.range.1).unwrap();
        writeln!(s, "labels={}", if self.labels.is_some() { "yes" } else { "no" }).unwrap();
        for (k, v) in &self.provenance {
            writeln!(s, "# {k}={v}").unwrap();
        }
        writeln!(s, "---").unwrap();
        for i in 0..n {
            let row = self.x.row_slice(i);
            let mut first = true;
            for v in row {
                if !first {
                    s.push(' ');
                }
                first = false;
                write!(s, "{v:?}").unwrap();
            }
            if let Some(l) = &self.labels {
                write!(s, " {}", l[i]).unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(CliError::usage(format!("not a dataset file (expected '{MAGIC}' header)")));
        }
        let mut header = std::collections::BTreeMap::new();
        let mut provenance = Vec::new();
        for line in lines.by_ref() {
            if line == "---" {
                break;
            }
            if let Some(rest) = line.strip_prefix("# ") {
                if let Some((k, v)) = rest.split_once('=') {
                    provenance.push((k.to_string(), v.to_string()));
                }
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| CliError::usage(format!("bad header line '{line}'")))?;
            header.insert(k.to_string(), v.to_string());
        }
        let field = |k: &str| header.get(k).ok_or_else(|| CliError::usage(format!("dataset header lacks '{k}'")));
        let num = |k: &str| -> CliResult<usize> {
            field(k)?.parse().map_err(|_| CliError::usage(format!("dataset header '{k}' is not a count")))
        };
        let (n, d, k) = (num("n")?, num("d")?, num("k")?);
        let (lo, hi) = field("range")?
            .split_once(',')
            .and_then(|(a, b)| Some((a.parse::<f64>().ok()?, b.parse::<f64>().ok()?)))
            .ok_or_else(|| CliError::usage("dataset header 'range' must be 'lo,hi'"))?;
        let labeled = match field("labels")?.as_str() {
            "yes" => true,
            "no" => false,
            other => return Err(CliError::usage(format!("dataset header 'labels' must be yes or no, got '{other}'"))),
        };
        let mut values = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(if labeled { n } else { 0 });
        let mut count = 0;
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_ascii_whitespace();
            for _ in 0..d {
                let v: f64 = parts
                    .next()
                    .and_then(|p| p.parse().ok())
                    .ok_or_else(|| CliError::usage(format!("row {i}: expected {d} numbers")))?;
                if !(lo..=hi).contains(&v) {
                    return Err(CliError::usage(format!("row {i}: value {v} outside declared range [{lo}, {hi}]")));
                }
                values.push(v);
            }
            if labeled {
                let y: usize = parts
                    .next()
                    .and_then(|p| p.parse().ok())
                    .ok_or_else(|| CliError::usage(format!("row {i}: missing label")))?;
                if y >= k {
                    return Err(CliError::usage(format!("row {i}: label {y} outside 0..{k}")));
                }
                labels.push(y);
            }
            if parts.next().is_some() {
                return Err(CliError::usage(format!("row {i}: trailing values")));
            }
            count += 1;
        }
        if count != n {
            return Err(CliError::usage(format!("header declares {n} rows, found {count}")));
        }
        Ok(Self {
            x: Tensor::matrix(n, d, values)?,
            labels: labeled.then_some(labels),
            num_classes: k,
            range: (lo, hi),
            provenance,
        })
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        crate::write_file(path, self.to_text().as_bytes())
    }
}

/// Comma- or whitespace-separated numbers, one example per row; with
/// `labeled` the last column is an integer label.
pub fn read_csv(path: &Path, labeled: bool) -> CliResult<DatasetFile> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut vals: Vec<&str> = line.split(|c: char| c == ',' || c.is_ascii_whitespace()).filter(|s| !s.is_empty()).collect();
        if labeled {
            let y = vals.pop().and_then(|s| s.parse::<usize>().ok());
            labels.push(y.ok_or_else(|| CliError::usage(format!("line {}: bad label", i + 1)))?);
        }
        let row = vals
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| CliError::usage(format!("line {}: bad number", i + 1)))?;
        rows.push(row);
    }
    let x = Tensor::from_rows(&rows)?;
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    Ok(DatasetFile { x, labels: labeled.then_some(labels), num_classes, range: (-1.0, 1.0), provenance: Vec::new() })
}
