//! Plain-text model files.
//!
//! ```text
//! format lula-lab-model
//! version 1
//! layer_count 2
//! layer 1
//! activation relu
//! weight 3 2
//! <3 lines of 2 values>
//! bias 3
//! <1 line of 3 values>
//! layer 2
//! ...
//! end
//! ```
//!
//! Values are written in scientific notation with 17 significant digits, which
//! round-trips every finite `f64` exactly. Blank lines and lines starting with
//! `#` are ignored.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Activation, Layer, Network};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "lula-lab-model";

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn write_values(out: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    let line: Vec<String> = values.iter().map(|&v| fmt_f64(v)).collect();
    writeln!(out, "{}", line.join(" "))
}

pub fn write_to(net: &Network, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "format {MAGIC}")?;
    writeln!(out, "version {MODEL_FORMAT_VERSION}")?;
    writeln!(out, "layer_count {}", net.depth())?;
    for (i, layer) in net.layers().iter().enumerate() {
        writeln!(out, "layer {}", i + 1)?;
        writeln!(out, "activation {}", layer.activation)?;
        writeln!(out, "weight {} {}", layer.weight.rows(), layer.weight.cols())?;
        for r in layer.weight.row_iter() {
            write_values(&mut out, r)?;
        }
        writeln!(out, "bias {}", layer.bias.len())?;
        write_values(&mut out, &layer.bias)?;
    }
    writeln!(out, "end")
}

pub fn save(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_to(net, &mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_from(file)
}

/// Line cursor that skips comments and blank lines.
pub(crate) struct Lines<R> {
    inner: std::io::Lines<BufReader<R>>,
    pub(crate) line_no: usize,
}

impl<R: Read> Lines<R> {
    pub(crate) fn new(r: R) -> Self {
        Self { inner: BufReader::new(r).lines(), line_no: 0 }
    }

    pub(crate) fn next_line(&mut self) -> Result<String> {
        loop {
            self.line_no += 1;
            match self.inner.next() {
                None => return Err(Error::Malformed(format!("unexpected end of file at line {}", self.line_no))),
                Some(Err(e)) => return Err(Error::Malformed(format!("line {}: {e}", self.line_no))),
                Some(Ok(l)) => {
                    let t = l.trim();
                    if !t.is_empty() && !t.starts_with('#') {
                        return Ok(t.to_string());
                    }
                }
            }
        }
    }

    /// Reads `key v1 v2 ..` and returns the values.
    pub(crate) fn keyed(&mut self, key: &str) -> Result<Vec<String>> {
        let line = self.next_line()?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some(k) if k == key => Ok(parts.map(str::to_string).collect()),
            other => Err(Error::Malformed(format!(
                "line {}: expected `{key}`, found `{}`",
                self.line_no,
                other.unwrap_or("")
            ))),
        }
    }

    pub(crate) fn keyed_usizes(&mut self, key: &str, n: usize) -> Result<Vec<usize>> {
        let vals = self.keyed(key)?;
        if vals.len() != n {
            return Err(Error::Malformed(format!("line {}: `{key}` needs {n} values", self.line_no)));
        }
        vals.iter()
            .map(|v| v.parse().map_err(|_| Error::Malformed(format!("line {}: bad count `{v}`", self.line_no))))
            .collect()
    }

    pub(crate) fn values(&mut self, n: usize) -> Result<Vec<f64>> {
        let line = self.next_line()?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|_| Error::Malformed(format!("line {}: bad number `{v}`", self.line_no))))
            .collect::<Result<_>>()?;
        if vals.len() != n {
            return Err(Error::Malformed(format!("line {}: expected {n} values, found {}", self.line_no, vals.len())));
        }
        Ok(vals)
    }
}

pub fn read_from(r: impl Read) -> Result<Network> {
    let mut lines = Lines::new(r);
    let magic = lines.keyed("format")?;
    if magic.first().map(String::as_str) != Some(MAGIC) {
        return Err(Error::Format(format!("not a {MAGIC} file")));
    }
    let version = lines.keyed_usizes("version", 1)?[0];
    if version != MODEL_FORMAT_VERSION as usize {
        return Err(Error::Format(format!("version {version} is not supported (expected {MODEL_FORMAT_VERSION})")));
    }
    let count = lines.keyed_usizes("layer_count", 1)?[0];
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        let idx = lines.keyed_usizes("layer", 1)?[0];
        if idx != i + 1 {
            return Err(Error::Malformed(format!("layer {idx} out of order (expected {})", i + 1)));
        }
        let act = lines.keyed("activation")?;
        let activation: Activation = act.first().ok_or_else(|| Error::Malformed("missing activation".into()))?.parse()?;
        let shape = lines.keyed_usizes("weight", 2)?;
        let (rows, cols) = (shape[0], shape[1]);
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(lines.values(cols)?);
        }
        let nb = lines.keyed_usizes("bias", 1)?[0];
        let bias = lines.values(nb)?;
        layers.push(Layer { weight: Matrix::from_vec(rows, cols, data)?, bias, activation });
    }
    lines.keyed("end")?;
    Network::new(layers).map_err(|e| Error::Malformed(e.to_string()))
}
