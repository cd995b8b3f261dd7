//! CSV artifacts: a `#`-comment header carrying the config hash and seed,
//! then a header row and data rows with floats at 17 significant digits.

use crate::channel::EvalPoint;
use crate::numfmt::fmt17;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("row {row} has {got} fields, header has {expected}")]
    RowWidth {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Provenance lines written as `# key: value` before the header row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvMeta {
    pub config_hash: String,
    pub seed: u64,
    pub extra: Vec<(String, String)>,
}

impl CsvMeta {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Self {
            config_hash: config_hash.into(),
            seed,
            extra: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.extra.push((key.into(), value.to_string()));
        self
    }
}

pub fn write_csv<W: Write>(
    mut w: W,
    meta: &CsvMeta,
    columns: &[&str],
    rows: &[Vec<String>],
) -> Result<(), ReportError> {
    writeln!(w, "# config_hash: {}", meta.config_hash)?;
    writeln!(w, "# seed: {}", meta.seed)?;
    for (k, v) in &meta.extra {
        writeln!(w, "# {k}: {v}")?;
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(columns)?;
    for (i, row) in rows.iter().enumerate() {
        if row.len() != columns.len() {
            return Err(ReportError::RowWidth {
                row: i,
                got: row.len(),
                expected: columns.len(),
            });
        }
        out.write_record(row)?;
    }
    out.flush()?;
    Ok(())
}

/// `−ln(BER)`; a zero BER gives `+inf`, printed as `inf`.
pub fn neg_ln_ber(ber: f64) -> f64 {
    if ber <= 0.0 {
        f64::INFINITY
    } else {
        -ber.ln()
    }
}

pub const EVAL_COLUMNS: &[&str] = &[
    "ebn0_db",
    "ber",
    "fer",
    "neg_ln_ber",
    "frames",
    "bit_errors",
    "frame_errors",
    "seed",
];

pub fn eval_rows(points: &[EvalPoint]) -> Vec<Vec<String>> {
    points
        .iter()
        .map(|p| {
            vec![
                fmt17(p.ebn0_db),
                fmt17(p.ber),
                fmt17(p.fer),
                fmt17(neg_ln_ber(p.ber)),
                p.frames.to_string(),
                p.bit_errors.to_string(),
                p.frame_errors.to_string(),
                p.seed.to_string(),
            ]
        })
        .collect()
}

/// One row per epoch: `epoch,loss`.
pub fn loss_rows(epoch_loss: &[f64]) -> Vec<Vec<String>> {
    epoch_loss
        .iter()
        .enumerate()
        .map(|(e, &l)| vec![e.to_string(), fmt17(l)])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(ber: f64) -> EvalPoint {
        EvalPoint {
            ebn0_db: 4.0,
            ber,
            fer: ber * 3.0,
            frames: 100,
            bit_errors: (ber * 700.0) as u64,
            frame_errors: 1,
            seed: 9,
        }
    }

    #[test]
    fn zero_ber_prints_inf() {
        let rows = eval_rows(&[point(0.0)]);
        assert_eq!(rows[0][3], "inf");
        assert_eq!(neg_ln_ber(1.0), 0.0);
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        let meta = CsvMeta::new("abc", 3).with("code", "HAMMING_7_4");
        write_csv(&mut buf, &meta, EVAL_COLUMNS, &eval_rows(&[point(0.25)])).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# config_hash: abc");
        assert_eq!(lines[1], "# seed: 3");
        assert_eq!(lines[2], "# code: HAMMING_7_4");
        assert_eq!(lines[3], EVAL_COLUMNS.join(","));
        assert!(lines[4].starts_with("4.0000000000000000e0,2.5000000000000000e-1,"));
        assert!(write_csv(Vec::new(), &meta, &["a"], &[vec![]]).is_err());
    }
}
