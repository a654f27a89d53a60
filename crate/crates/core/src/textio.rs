//! Plain-text serialization.
//!
//! A tensor is two lines: the space-separated shape (empty for a scalar), then the
//! row-major data printed with 17 significant digits so that values round-trip
//! exactly. Decompositions and checkpoints are sequences of such blocks.

use std::fmt::Write as _;

use crate::error::{Result, TrlError};
use crate::tensor::{DenseTensor, Matrix};

/// Formats `v` with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_tensor(out: &mut String, t: &DenseTensor) {
    let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
    let data: Vec<String> = t.data().iter().map(|&v| fmt_f64(v)).collect();
    let _ = writeln!(out, "{}", shape.join(" "));
    let _ = writeln!(out, "{}", data.join(" "));
}

pub fn write_matrix(out: &mut String, m: &Matrix) {
    write_tensor(out, &m.to_tensor());
}

pub fn tensor_to_string(t: &DenseTensor) -> String {
    let mut s = String::new();
    write_tensor(&mut s, t);
    s
}

pub fn tensor_from_str(s: &str) -> Result<DenseTensor> {
    let mut r = LineReader::new(s);
    let t = r.tensor()?;
    r.finish()?;
    Ok(t)
}

/// Line cursor that tracks line numbers for error messages.
#[derive(Clone)]
pub struct LineReader<'a> {
    lines: std::str::Lines<'a>,
    line_no: usize,
}

impl<'a> LineReader<'a> {
    pub fn new(s: &'a str) -> Self {
        Self {
            lines: s.lines(),
            line_no: 0,
        }
    }

    pub fn line_no(&self) -> usize {
        self.line_no
    }

    pub fn error<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(TrlError::Parse {
            line: self.line_no,
            msg: msg.into(),
        })
    }

    pub fn next_line(&mut self) -> Result<&'a str> {
        self.line_no += 1;
        match self.lines.next() {
            Some(l) => Ok(l.trim_end_matches('\r')),
            None => self.error("unexpected end of input"),
        }
    }

    /// Consumes the next line if, trimmed, it equals `word`.
    pub fn take_if(&mut self, word: &str) -> bool {
        let mut probe = self.clone();
        match probe.next_line() {
            Ok(l) if l.trim() == word => {
                *self = probe;
                true
            }
            _ => false,
        }
    }

    pub fn tensor(&mut self) -> Result<DenseTensor> {
        let shape_line = self.next_line()?;
        let shape = shape_line
            .split_whitespace()
            .map(|tok| tok.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>();
        let Ok(shape) = shape else {
            return self.error(format!("bad shape line {shape_line:?}"));
        };
        let data_line = self.next_line()?;
        let data = data_line
            .split_whitespace()
            .map(|tok| tok.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>();
        let Ok(data) = data else {
            return self.error("bad data line");
        };
        DenseTensor::new(shape, data).or_else(|e| self.error(e.to_string()))
    }

    pub fn matrix(&mut self) -> Result<Matrix> {
        let t = self.tensor()?;
        Matrix::try_from(t).or_else(|e| self.error(e.to_string()))
    }

    /// Fails unless only blank lines remain.
    pub fn finish(&mut self) -> Result<()> {
        for l in self.lines.by_ref() {
            self.line_no += 1;
            if !l.trim().is_empty() {
                return Err(TrlError::Parse {
                    line: self.line_no,
                    msg: "trailing content".into(),
                });
            }
        }
        Ok(())
    }
}
