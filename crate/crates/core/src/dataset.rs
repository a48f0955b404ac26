//! Pattern dataset TSV.
//!
//! One row per pattern, tab-separated:
//!
//! 1. 32 comma-separated step codes,
//! 2. 4 comma-separated latent coordinates, or empty,
//! 3. 2 comma-separated map coordinates, or empty,
//! 4. optional genre label (column omitted when absent).
//!
//! UTF-8, `\n` line endings, reals printed with 6 significant digits.

use thiserror::Error;

use crate::pattern::{Codes, MAX_CODE, STEPS};

pub const LATENT_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct PatternRecord {
    pub codes: Codes,
    pub latent: Option<[f64; LATENT_DIM]>,
    pub projection: Option<[f64; 2]>,
    pub genre: Option<String>,
}

impl PatternRecord {
    pub fn new(codes: Codes) -> Self {
        Self { codes, latent: None, projection: None, genre: None }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DatasetError {
    #[error("row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("dataset is not valid UTF-8")]
    NotUtf8,
}

/// `%g`-style rendering with 6 significant digits.
pub fn format_real(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let fixed = format!("{:.*}", (5 - exp) as usize, x);
        trim_fraction(&fixed).to_string()
    } else {
        format!("{}e{}", trim_fraction(mantissa), exp)
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn join_reals(values: &[f64]) -> String {
    values.iter().map(|&v| format_real(v)).collect::<Vec<_>>().join(",")
}

pub fn format_row(record: &PatternRecord) -> String {
    let codes = record.codes.iter().map(u16::to_string).collect::<Vec<_>>().join(",");
    let latent = record.latent.as_ref().map(|z| join_reals(z)).unwrap_or_default();
    let projection = record.projection.as_ref().map(|p| join_reals(p)).unwrap_or_default();
    let mut row = format!("{codes}\t{latent}\t{projection}");
    if let Some(genre) = &record.genre {
        row.push('\t');
        row.push_str(genre);
    }
    row
}

pub fn write_dataset(records: &[PatternRecord]) -> Vec<u8> {
    let mut out = String::new();
    for r in records {
        out.push_str(&format_row(r));
        out.push('\n');
    }
    out.into_bytes()
}

fn parse_reals<const N: usize>(field: &str, row: usize, what: &str) -> Result<Option<[f64; N]>, DatasetError> {
    if field.is_empty() {
        return Ok(None);
    }
    let malformed = |reason: String| DatasetError::MalformedRow { row, reason };
    let values: Vec<f64> = field
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| malformed(format!("{what}: {v:?} is not a number"))))
        .collect::<Result<_, _>>()?;
    let arr: [f64; N] =
        values.try_into().map_err(|v: Vec<f64>| malformed(format!("{what}: expected {N} values, got {}", v.len())))?;
    Ok(Some(arr))
}

pub fn parse_row(line: &str, row: usize) -> Result<PatternRecord, DatasetError> {
    let malformed = |reason: String| DatasetError::MalformedRow { row, reason };
    let fields: Vec<&str> = line.split('\t').collect();
    if !(3..=4).contains(&fields.len()) {
        return Err(malformed(format!("expected 3 or 4 tab-separated columns, got {}", fields.len())));
    }
    let codes: Vec<u16> = fields[0]
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<u16>()
                .ok()
                .filter(|&c| c <= MAX_CODE)
                .ok_or_else(|| malformed(format!("step code {v:?} is not an integer in 0..={MAX_CODE}")))
        })
        .collect::<Result<_, _>>()?;
    let codes: Codes = codes
        .try_into()
        .map_err(|v: Vec<u16>| malformed(format!("expected {STEPS} step codes, got {}", v.len())))?;
    let latent = parse_reals::<LATENT_DIM>(fields[1], row, "latent")?;
    let projection = parse_reals::<2>(fields[2], row, "projection")?;
    let genre = fields.get(3).filter(|g| !g.is_empty()).map(|g| g.to_string());
    Ok(PatternRecord { codes, latent, projection, genre })
}

/// Parses a dataset; rows are numbered from 1. Blank lines are skipped.
pub fn read_dataset(bytes: &[u8]) -> Result<Vec<PatternRecord>, DatasetError> {
    let text = std::str::from_utf8(bytes).map_err(|_| DatasetError::NotUtf8)?;
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| parse_row(line.trim_end_matches('\r'), i + 1))
        .collect()
}
