//! Plain-text head serialization.
//!
//! Format (version 1):
//!
//! ```text
//! var-cpo-checkpoint v1
//! head <kind name>
//! sizes <input> <hidden...> <output>
//! activation tanh
//! log_std_bounds <lo> <hi>
//! layer <i> weight <floats...>
//! layer <i> bias <floats...>
//! ...
//! log_std <floats...>          (Gaussian heads only)
//! end
//! ```
//!
//! Floats are printed with 17 significant digits (`{:.16e}`), which
//! round-trips every finite `f64` bit-exactly through `str::parse`.

use std::fs;
use std::path::Path;

use super::{Approximator, HeadKind};
use crate::{Error, Result};

const MAGIC: &str = "var-cpo-checkpoint v1";

fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_floats(xs: &[f64]) -> String {
    xs.iter().map(|x| fmt_float(*x)).collect::<Vec<_>>().join(" ")
}

/// Serializes a head to the checkpoint text format.
pub fn to_text(head: &Approximator) -> String {
    let sizes = head.sizes();
    let (lo, hi) = head.log_std_bounds();
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str(&format!("head {}\n", head.kind().name()));
    out.push_str(&format!(
        "sizes {}\n",
        sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ")
    ));
    out.push_str("activation tanh\n");
    out.push_str(&format!("log_std_bounds {} {}\n", fmt_float(lo), fmt_float(hi)));
    let params = head.params();
    let mut cursor = 0;
    for l in 0..sizes.len() - 1 {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let w = &params[cursor..cursor + n_in * n_out];
        cursor += n_in * n_out;
        let b = &params[cursor..cursor + n_out];
        cursor += n_out;
        out.push_str(&format!("layer {l} weight {}\n", fmt_floats(w)));
        out.push_str(&format!("layer {l} bias {}\n", fmt_floats(b)));
    }
    if head.kind() == HeadKind::GaussianPolicy {
        out.push_str(&format!("log_std {}\n", fmt_floats(&params[cursor..])));
    }
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    inner: std::str::Lines<'a>,
    line_no: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        self.line_no += 1;
        self.inner
            .next()
            .ok_or_else(|| Error::Checkpoint(format!("truncated at line {}", self.line_no)))
    }

    fn expect_prefix(&mut self, prefix: &str) -> Result<&'a str> {
        let line = self.next()?;
        line.strip_prefix(prefix).ok_or_else(|| {
            Error::Checkpoint(format!(
                "line {}: expected '{prefix}…', found '{line}'",
                self.line_no
            ))
        })
    }
}

fn parse_floats(s: &str, line_no: usize) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| Error::Checkpoint(format!("line {line_no}: bad float '{tok}'")))
        })
        .collect()
}

/// Parses a head from the checkpoint text format.
pub fn from_text(text: &str) -> Result<Approximator> {
    let mut lines = Lines { inner: text.lines(), line_no: 0 };
    let magic = lines.next()?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "unrecognized header '{magic}' (expected '{MAGIC}')"
        )));
    }
    let kind = HeadKind::from_name(lines.expect_prefix("head ")?)?;
    let sizes: Vec<usize> = lines
        .expect_prefix("sizes ")?
        .split_whitespace()
        .map(|tok| {
            tok.parse::<usize>()
                .map_err(|_| Error::Checkpoint(format!("bad layer size '{tok}'")))
        })
        .collect::<Result<_>>()?;
    if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
        return Err(Error::Checkpoint("invalid sizes line".into()));
    }
    let activation = lines.expect_prefix("activation ")?;
    if activation != "tanh" {
        return Err(Error::Checkpoint(format!("unsupported activation '{activation}'")));
    }
    let bounds = parse_floats(lines.expect_prefix("log_std_bounds ")?, lines.line_no)?;
    if bounds.len() != 2 {
        return Err(Error::Checkpoint("log_std_bounds needs two values".into()));
    }

    let mut params = Vec::new();
    for l in 0..sizes.len() - 1 {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        for (label, expected) in [("weight", n_in * n_out), ("bias", n_out)] {
            let body = lines.expect_prefix(&format!("layer {l} {label} "))?;
            let vals = parse_floats(body, lines.line_no)?;
            if vals.len() != expected {
                return Err(Error::Checkpoint(format!(
                    "layer {l} {label}: expected {expected} values, found {}",
                    vals.len()
                )));
            }
            params.extend(vals);
        }
    }
    if kind == HeadKind::GaussianPolicy {
        let body = lines.expect_prefix("log_std ")?;
        let vals = parse_floats(body, lines.line_no)?;
        let expected = *sizes.last().unwrap();
        if vals.len() != expected {
            return Err(Error::Checkpoint(format!(
                "log_std: expected {expected} values, found {}",
                vals.len()
            )));
        }
        params.extend(vals);
    }
    let end = lines.next()?;
    if end != "end" {
        return Err(Error::Checkpoint(format!("expected terminator, found '{end}'")));
    }
    Approximator::from_parts(kind, sizes, params, (bounds[0], bounds[1]))
}

/// Writes a head to a file.
pub fn save(head: &Approximator, path: &Path) -> Result<()> {
    fs::write(path, to_text(head))?;
    Ok(())
}

/// Reads a head from a file.
pub fn load(path: &Path) -> Result<Approximator> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    from_text(&text)
}
