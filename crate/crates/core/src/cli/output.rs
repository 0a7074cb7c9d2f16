//! CSV and JSON emission.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::{Map, Value};

use crate::error::Result;
use crate::mc::EnsembleRecord;

pub const TRAJECTORY_HEADER: [&str; 11] = [
    "t", "re_a_truth", "im_a_truth", "n_truth", "re_a_hat", "im_a_hat", "V", "re_W", "im_W", "Y", "I",
];

/// One row of a paired truth/filter series.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryCsvRow {
    pub t: f64,
    pub re_a_truth: f64,
    pub im_a_truth: f64,
    pub n_truth: f64,
    pub re_a_hat: f64,
    pub im_a_hat: f64,
    pub v: f64,
    pub re_w: f64,
    pub im_w: f64,
    pub y: f64,
    pub i: f64,
}

impl TrajectoryCsvRow {
    pub fn fields(&self) -> [f64; 11] {
        [
            self.t,
            self.re_a_truth,
            self.im_a_truth,
            self.n_truth,
            self.re_a_hat,
            self.im_a_hat,
            self.v,
            self.re_w,
            self.im_w,
            self.y,
            self.i,
        ]
    }

    pub fn from_record(rec: &EnsembleRecord) -> Vec<Self> {
        (0..rec.t.len())
            .map(|k| Self {
                t: rec.t[k],
                re_a_truth: rec.truth_a[k].re,
                im_a_truth: rec.truth_a[k].im,
                n_truth: rec.truth_var[k] + rec.truth_a[k].norm_sqr(),
                re_a_hat: rec.a_hat[k].re,
                im_a_hat: rec.a_hat[k].im,
                v: rec.v[k],
                re_w: rec.w[k].re,
                im_w: rec.w[k].im,
                y: rec.y[k],
                i: rec.i[k],
            })
            .collect()
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_number(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_csv<R: AsRef<[f64]>>(path: &Path, header: &[&str], rows: &[R]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let line: Vec<String> = row.as_ref().iter().map(|&x| format_number(x)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Flat JSON object builder.
#[derive(Clone, Debug, Default)]
pub struct Summary(Map<String, Value>);

impl Summary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num(mut self, key: &str, v: f64) -> Self {
        let value = serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number);
        self.0.insert(key.into(), value);
        self
    }

    pub fn int(mut self, key: &str, v: u64) -> Self {
        self.0.insert(key.into(), Value::from(v));
        self
    }

    pub fn flag(mut self, key: &str, v: bool) -> Self {
        self.0.insert(key.into(), Value::Bool(v));
        self
    }

    pub fn text(mut self, key: &str, v: &str) -> Self {
        self.0.insert(key.into(), Value::String(v.into()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.0.get(key)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.0).expect("JSON maps always serialize");
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}
