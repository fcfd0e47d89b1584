//! Run manifests, metrics logs and key/value reports.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::RunConfig;
use crate::{sha256_file, CliError, CliResult};

pub const MANIFEST_MAGIC: &str = "# DPSAD-MANIFEST v1";
pub const REPORT_MAGIC: &str = "# DPSAD-REPORT v1";

/// A config plus `manifest.*` bookkeeping; the file is itself a valid config.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub command: String,
    pub config: RunConfig,
    pub facts: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self { command: command.to_string(), config: config.clone(), facts: Vec::new() }
    }

    pub fn fact(&mut self, key: &str, value: impl ToString) {
        self.facts.push((key.to_string(), value.to_string()));
    }

    /// Record an output file by content hash.
    pub fn output(&mut self, name: &str, path: &Path) -> CliResult<()> {
        let h = sha256_file(path)?;
        self.fact(&format!("output.{name}"), format!("{} sha256:{h}", path.display()));
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{MANIFEST_MAGIC}").unwrap();
        writeln!(s, "manifest.command = {}", self.command).unwrap();
        writeln!(s, "manifest.version = {}", env!("CARGO_PKG_VERSION")).unwrap();
        for (k, v) in &self.facts {
            writeln!(s, "manifest.{k} = {v}").unwrap();
        }
        s.push_str(&self.config.to_text());
        s
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        crate::write_file(path, self.to_text().as_bytes())
    }
}

/// Ordered `key = value` lines under a magic header.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub entries: Vec<(String, String)>,
}

impl Report {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{REPORT_MAGIC}").unwrap();
        for (k, v) in &self.entries {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(REPORT_MAGIC) {
            return Err(CliError::usage("not a report file"));
        }
        let mut r = Report::default();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once(" = ").ok_or_else(|| CliError::usage(format!("bad report line '{line}'")))?;
            r.set(k, v);
        }
        Ok(r)
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        crate::write_file(path, self.to_text().as_bytes())
    }
}

/// Comma-separated metrics log with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl MetricsLog {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_text(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut lines = text.lines();
        let header: Vec<String> =
            lines.next().ok_or_else(|| CliError::usage("empty metrics log"))?.split(',').map(String::from).collect();
        let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
        Ok(Self { header, rows })
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        crate::write_file(path, self.to_text().as_bytes())
    }
}
