//! Serialisation of results: CSV tables, JSON lines and the run manifest.
//!
//! CSV floats are written like C's `%.17g`, which round-trips every f64.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GAP_CURVE_HEADER: &[&str] = &["s", "gamma"];
pub const QUANTUM_COST_HEADER: &[&str] = &["n", "s_star", "gamma_min", "cost"];
pub const PREDICTION_HEADER: &[&str] = &["n", "gamma_tb", "gamma_exact", "pr_exact", "pr_approx"];
pub const DISTRIBUTION_HEADER: &[&str] = &["w", "probability"];
pub const SNAPSHOT_HEADER: &[&str] = &["step", "s", "w", "count"];
pub const COST_SERIES_HEADER: &[&str] = &["n", "mean_cost", "std", "walkers", "success_rate"];

#[derive(Debug, Error)]
pub enum OutputError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Decode { line: usize, message: String },
    #[error("row has {got} fields, header has {expected}")]
    RowWidth { got: usize, expected: usize },
}

/// Formats `x` the way `printf("%.17g", x)` does.
pub fn format_g17(x: f64) -> String {
    const P: i32 = 17;
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    // Rounding to 17 significant digits first fixes the decimal exponent.
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..P).contains(&exp) {
        let fixed = format!("{:.*}", (P - 1 - exp) as usize, x);
        strip_zeros(&fixed).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", strip_zeros(mantissa), sign, exp.abs())
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// A value that can appear in a CSV cell.
pub trait CsvField {
    fn render(&self) -> String;
}

impl CsvField for f64 {
    fn render(&self) -> String {
        format_g17(*self)
    }
}

impl CsvField for usize {
    fn render(&self) -> String {
        self.to_string()
    }
}

impl CsvField for u64 {
    fn render(&self) -> String {
        self.to_string()
    }
}

/// Comma-separated writer with a fixed header. No quoting is needed since
/// every field is numeric.
pub struct CsvWriter<W: Write> {
    out: W,
    width: usize,
}

impl<W: Write> CsvWriter<W> {
    pub fn new(mut out: W, header: &[&str]) -> Result<Self, OutputError> {
        writeln!(out, "{}", header.join(","))?;
        Ok(CsvWriter {
            out,
            width: header.len(),
        })
    }

    pub fn row(&mut self, fields: &[&dyn CsvField]) -> Result<(), OutputError> {
        if fields.len() != self.width {
            return Err(OutputError::RowWidth {
                got: fields.len(),
                expected: self.width,
            });
        }
        let cells: Vec<String> = fields.iter().map(|f| f.render()).collect();
        writeln!(self.out, "{}", cells.join(","))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, OutputError> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// One JSON document per line.
pub fn write_jsonl<W: Write, T: Serialize>(mut out: W, items: &[T]) -> Result<(), OutputError> {
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads JSON lines, skipping blank lines. Errors carry 1-based line numbers.
pub fn read_jsonl<R: BufRead, T: DeserializeOwned>(input: R) -> Result<Vec<T>, OutputError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| OutputError::Decode {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

/// Written next to every output so a run can be reproduced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    #[serde(default)]
    pub parameters: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub flags: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            tool: "stoq".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: None,
            config: None,
            parameters: BTreeMap::new(),
            flags: Vec::new(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_config<T: Serialize>(mut self, config: &T) -> Self {
        self.config = serde_json::to_value(config).ok();
        self
    }

    pub fn param<T: Serialize>(mut self, key: &str, value: T) -> Self {
        if let Ok(v) = serde_json::to_value(value) {
            self.parameters.insert(key.into(), v);
        }
        self
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises")
    }
}
