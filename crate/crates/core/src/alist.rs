//! Reading and writing parity-check matrices in the alist format.
//!
//! Layout: `n m`, then the maximum column and row degrees, then the `n`
//! column degrees and `m` row degrees, then one line per column listing its
//! 1-indexed rows and one line per row listing its 1-indexed columns. Lists
//! shorter than the maximum degree are padded with zeros.

use std::fmt::Write as _;

use thiserror::Error;

use crate::code::{CodeError, ParityCheckMatrix};
use crate::gf2::BitMatrix;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlistError {
    #[error("alist line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("alist ended early: expected {0}")]
    Truncated(&'static str),
    #[error(transparent)]
    Code(#[from] CodeError),
}

fn perr(line: usize, msg: impl Into<String>) -> AlistError {
    AlistError::Parse {
        line,
        msg: msg.into(),
    }
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    /// Next non-blank line as (1-based line number, integers).
    fn next_ints(&mut self, what: &'static str) -> Result<(usize, Vec<usize>), AlistError> {
        for (i, raw) in self.inner.by_ref() {
            let line = i + 1;
            let raw = raw.trim();
            if raw.is_empty() {
                continue;
            }
            let vals = raw
                .split_whitespace()
                .map(|t| {
                    t.parse::<usize>()
                        .map_err(|_| perr(line, format!("invalid integer {t:?}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            return Ok((line, vals));
        }
        Err(AlistError::Truncated(what))
    }
}

fn expect_len(line: usize, vals: &[usize], n: usize, what: &str) -> Result<(), AlistError> {
    if vals.len() != n {
        return Err(perr(
            line,
            format!("expected {n} {what}, found {}", vals.len()),
        ));
    }
    Ok(())
}

/// Parses one neighbor list: `deg` indices in `1..=bound` followed by zero
/// padding up to `max_deg`.
fn neighbor_list(
    line: usize,
    vals: &[usize],
    deg: usize,
    max_deg: usize,
    bound: usize,
) -> Result<Vec<usize>, AlistError> {
    if vals.len() != deg && vals.len() != max_deg {
        return Err(perr(
            line,
            format!(
                "expected {deg} entries (or {max_deg} with zero padding), found {}",
                vals.len()
            ),
        ));
    }
    let (body, pad) = vals.split_at(deg);
    if let Some(pos) = body.iter().position(|&v| v == 0) {
        return Err(perr(
            line,
            format!(
                "zero index at position {} inside the neighbor list",
                pos + 1
            ),
        ));
    }
    if pad.iter().any(|&v| v != 0) {
        return Err(perr(line, "padding after the listed degree must be zero"));
    }
    if let Some(&bad) = body.iter().find(|&&v| v > bound) {
        return Err(perr(line, format!("index {bad} out of range 1..={bound}")));
    }
    let mut out: Vec<usize> = body.iter().map(|&v| v - 1).collect();
    let before = out.len();
    out.sort_unstable();
    out.dedup();
    if out.len() != before {
        return Err(perr(line, "duplicate index in neighbor list"));
    }
    Ok(out)
}

pub fn load_alist(text: &str) -> Result<ParityCheckMatrix, AlistError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    let (l, hdr) = lines.next_ints("header `n m`")?;
    expect_len(l, &hdr, 2, "header values (n m)")?;
    let (n, m) = (hdr[0], hdr[1]);
    if n == 0 || m == 0 {
        return Err(perr(l, "n and m must be positive"));
    }
    let (l, maxes) = lines.next_ints("maximum degrees")?;
    expect_len(l, &maxes, 2, "maximum degrees")?;
    let (max_col, max_row) = (maxes[0], maxes[1]);
    let (l, col_deg) = lines.next_ints("column degrees")?;
    expect_len(l, &col_deg, n, "column degrees")?;
    if let Some(d) = col_deg.iter().find(|&&d| d > max_col || d > m) {
        return Err(perr(l, format!("column degree {d} exceeds maximum")));
    }
    let (l, row_deg) = lines.next_ints("row degrees")?;
    expect_len(l, &row_deg, m, "row degrees")?;
    if let Some(d) = row_deg.iter().find(|&&d| d > max_row || d > n) {
        return Err(perr(l, format!("row degree {d} exceeds maximum")));
    }

    let mut bits = BitMatrix::zeros(m, n);
    for (c, &deg) in col_deg.iter().enumerate() {
        let (l, vals) = lines.next_ints("column neighbor lists")?;
        for r in neighbor_list(l, &vals, deg, max_col, m)? {
            bits.set(r, c, true);
        }
    }
    for (r, &deg) in row_deg.iter().enumerate() {
        let (l, vals) = lines.next_ints("row neighbor lists")?;
        let cols = neighbor_list(l, &vals, deg, max_row, n)?;
        if cols != bits.row_support(r) {
            return Err(perr(
                l,
                format!("row {} list disagrees with the column lists", r + 1),
            ));
        }
    }
    Ok(ParityCheckMatrix::new(bits)?)
}

pub fn write_alist(pcm: &ParityCheckMatrix) -> String {
    let cols = pcm.var_neighbors();
    let rows = pcm.check_neighbors();
    let max_col = cols.iter().map(Vec::len).max().unwrap_or(0);
    let max_row = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut s = String::new();
    let join = |v: &[usize]| {
        v.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let _ = writeln!(s, "{} {}", pcm.n(), pcm.m());
    let _ = writeln!(s, "{max_col} {max_row}");
    let _ = writeln!(
        s,
        "{}",
        join(&cols.iter().map(Vec::len).collect::<Vec<_>>())
    );
    let _ = writeln!(
        s,
        "{}",
        join(&rows.iter().map(Vec::len).collect::<Vec<_>>())
    );
    for (lists, max) in [(&cols, max_col), (&rows, max_row)] {
        for list in lists {
            let mut padded: Vec<usize> = list.iter().map(|&i| i + 1).collect();
            padded.resize(max, 0);
            let _ = writeln!(s, "{}", join(&padded));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const HAMMING: &str = "7 3
3 4
1 1 2 1 2 2 3
4 4 4
1 0 0
2 0 0
1 2 0
3 0 0
1 3 0
2 3 0
1 2 3
1 3 5 7
2 3 6 7
4 5 6 7
";

    fn squash(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn small_matrix_has_four_ones() {
        let doc = "3 2\n2 2\n1 2 1\n2 2\n1 0\n1 2\n2 0\n1 2\n2 3\n";
        let h = load_alist(doc).unwrap();
        assert_eq!(h.bits().to_rows(), vec![vec![1, 1, 0], vec![0, 1, 1]]);
        assert_eq!(h.nnz(), 4);
    }

    #[test]
    fn hamming_round_trip_modulo_whitespace() {
        let h = load_alist(HAMMING).unwrap();
        assert_eq!(h.n(), 7);
        assert_eq!(h.m(), 3);
        assert_eq!(squash(&write_alist(&h)), squash(HAMMING));
    }

    #[test]
    fn unpadded_lists_accepted() {
        let doc = "3 2\n2 2\n1 2 1\n2 2\n1\n1 2\n2\n1 2\n2 3\n";
        assert_eq!(load_alist(doc).unwrap().nnz(), 4);
    }

    #[test]
    fn zero_inside_list_rejected_with_line() {
        let doc = "3 2\n2 2\n1 2 1\n2 2\n1 0\n0 2\n2 0\n1 2\n2 3\n";
        match load_alist(doc) {
            Err(AlistError::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_documents() {
        assert!(matches!(
            load_alist("3\n"),
            Err(AlistError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            load_alist("3 2\n2 2\n"),
            Err(AlistError::Truncated(_))
        ));
        // row index 3 out of range for m = 2
        let oob = "3 2\n2 2\n1 2 1\n2 2\n3 0\n1 2\n2 0\n1 2\n2 3\n";
        assert!(matches!(
            load_alist(oob),
            Err(AlistError::Parse { line: 5, .. })
        ));
        // row lists contradict column lists
        let bad = "3 2\n2 2\n1 2 1\n2 2\n1 0\n1 2\n2 0\n1 3\n2 3\n";
        assert!(matches!(
            load_alist(bad),
            Err(AlistError::Parse { line: 8, .. })
        ));
        assert!(matches!(
            load_alist("3 2\n2 2\nx 2 1\n"),
            Err(AlistError::Parse { line: 3, .. })
        ));
    }
}
