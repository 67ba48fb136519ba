//! Plain-text outputs: CSV tables and `key = value` summaries.
//!
//! Numbers are printed with Rust's shortest round-trip formatting, so equal
//! values always produce equal bytes.

use std::fmt::Write as _;
use std::path::Path;

use crate::{CliError, Result};

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Write { path: dir.to_path_buf(), source })?;
    }
    std::fs::write(path, contents).map_err(|source| CliError::Write { path: path.to_path_buf(), source })
}

pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v}")
    }
}

/// Column-oriented CSV builder.
#[derive(Debug, Clone)]
pub struct Csv {
    buf: String,
    cols: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self { buf: format!("{}\n", header.join(",")), cols: header.len() }
    }

    pub fn row(&mut self, fields: &[String]) {
        debug_assert_eq!(fields.len(), self.cols);
        self.buf.push_str(&fields.join(","));
        self.buf.push('\n');
    }

    pub fn nums(&mut self, values: &[f64]) {
        let f: Vec<String> = values.iter().map(|&v| fmt_num(v)).collect();
        self.row(&f);
    }

    pub fn as_str(&self) -> &str {
        &self.buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.buf)
    }
}

/// Ordered `key = value` lines.
#[derive(Debug, Clone, Default)]
pub struct Summary {
    buf: String,
}

impl Summary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn text(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.buf, "{key} = {value}");
    }

    pub fn num(&mut self, key: &str, value: f64) {
        self.text(key, fmt_num(value));
    }

    pub fn blank(&mut self) {
        self.buf.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.buf)
    }
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut c = Csv::new(&["a", "b"]);
        c.nums(&[1.0, 0.25]);
        c.row(&["x".into(), "nan".into()]);
        assert_eq!(c.as_str(), "a,b\n1,0.25\nx,nan\n");
    }

    #[test]
    fn summary_lines() {
        let mut s = Summary::new();
        s.text("kind", "diag");
        s.num("lambda", 1e-4);
        assert_eq!(s.as_str(), "kind = diag\nlambda = 0.0001\n");
    }

    #[test]
    fn mean_std_sample() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
