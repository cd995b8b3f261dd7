//! Dense bit matrices over GF(2).
//!
//! Rows are packed 64 columns per `u64` word. Addition is XOR, so row
//! operations during elimination are word-wide.

use std::fmt;

const WORD: usize = 64;

/// Dense row-major bit matrix over GF(2).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    stride: usize,
    words: Vec<u64>,
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let stride = cols.div_ceil(WORD);
        Self {
            rows,
            cols,
            stride,
            words: vec![0; rows * stride],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, true);
        }
        m
    }

    /// Builds a matrix from nested rows of 0/1 values.
    ///
    /// Panics if the rows are ragged or contain values other than 0 and 1.
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut m = Self::zeros(rows.len(), cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            assert_eq!(row.len(), cols, "ragged bit matrix rows");
            for (j, &b) in row.iter().enumerate() {
                assert!(b <= 1, "bit matrix entries must be 0 or 1");
                m.set(i, j, b == 1);
            }
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        debug_assert!(r < self.rows && c < self.cols);
        (self.words[r * self.stride + c / WORD] >> (c % WORD)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        debug_assert!(r < self.rows && c < self.cols);
        let w = &mut self.words[r * self.stride + c / WORD];
        let bit = 1u64 << (c % WORD);
        if v {
            *w |= bit;
        } else {
            *w &= !bit;
        }
    }

    #[inline]
    pub fn flip(&mut self, r: usize, c: usize) {
        self.words[r * self.stride + c / WORD] ^= 1u64 << (c % WORD);
    }

    fn row_words(&self, r: usize) -> &[u64] {
        &self.words[r * self.stride..(r + 1) * self.stride]
    }

    /// `row[dst] ^= row[src]`.
    pub fn xor_row_into(&mut self, src: usize, dst: usize) {
        if src == dst {
            self.words[dst * self.stride..(dst + 1) * self.stride].fill(0);
            return;
        }
        for w in 0..self.stride {
            let v = self.words[src * self.stride + w];
            self.words[dst * self.stride + w] ^= v;
        }
    }

    pub fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for w in 0..self.stride {
            self.words.swap(a * self.stride + w, b * self.stride + w);
        }
    }

    pub fn row_is_zero(&self, r: usize) -> bool {
        self.row_words(r).iter().all(|&w| w == 0)
    }

    pub fn row_weight(&self, r: usize) -> usize {
        self.row_words(r)
            .iter()
            .map(|w| w.count_ones() as usize)
            .sum()
    }

    pub fn col_weight(&self, c: usize) -> usize {
        (0..self.rows).filter(|&r| self.get(r, c)).count()
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Column indices of the ones in row `r`, ascending.
    pub fn row_support(&self, r: usize) -> Vec<usize> {
        (0..self.cols).filter(|&c| self.get(r, c)).collect()
    }

    /// Row indices of the ones in column `c`, ascending.
    pub fn col_support(&self, c: usize) -> Vec<usize> {
        (0..self.rows).filter(|&r| self.get(r, c)).collect()
    }

    pub fn row_bits(&self, r: usize) -> Vec<u8> {
        (0..self.cols).map(|c| self.get(r, c) as u8).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.rows).map(|r| self.row_bits(r)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                if self.get(r, c) {
                    t.set(c, r, true);
                }
            }
        }
        t
    }

    /// `self · v` over GF(2), where `v` has one bit per column.
    pub fn mul_vec(&self, v: &[u8]) -> Vec<u8> {
        assert_eq!(v.len(), self.cols);
        let packed = pack(v);
        (0..self.rows)
            .map(|r| {
                let ones: u32 = self
                    .row_words(r)
                    .iter()
                    .zip(&packed)
                    .map(|(a, b)| (a & b).count_ones())
                    .sum();
                (ones & 1) as u8
            })
            .collect()
    }

    /// Row-vector product `v · self` over GF(2), where `v` has one bit per row.
    pub fn vec_mul(&self, v: &[u8]) -> Vec<u8> {
        assert_eq!(v.len(), self.rows);
        let mut acc = vec![0u64; self.stride];
        for (r, &b) in v.iter().enumerate() {
            if b & 1 == 1 {
                for (a, w) in acc.iter_mut().zip(self.row_words(r)) {
                    *a ^= w;
                }
            }
        }
        unpack(&acc, self.cols)
    }

    /// Matrix product over GF(2).
    pub fn mul(&self, rhs: &BitMatrix) -> BitMatrix {
        assert_eq!(self.cols, rhs.rows);
        let mut out = BitMatrix::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                if self.get(r, k) {
                    for w in 0..out.stride {
                        out.words[r * out.stride + w] ^= rhs.words[k * rhs.stride + w];
                    }
                }
            }
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Reduces the matrix in place to reduced row echelon form and returns the
    /// pivot column of each nonzero row.
    ///
    /// Zero rows end up at the bottom.
    pub fn rref_in_place(&mut self) -> Vec<usize> {
        let mut pivots = Vec::new();
        let mut row = 0;
        for col in 0..self.cols {
            if row == self.rows {
                break;
            }
            let Some(p) = (row..self.rows).find(|&r| self.get(r, col)) else {
                continue;
            };
            self.swap_rows(p, row);
            for r in 0..self.rows {
                if r != row && self.get(r, col) {
                    self.xor_row_into(row, r);
                }
            }
            pivots.push(col);
            row += 1;
        }
        pivots
    }

    pub fn rank(&self) -> usize {
        self.clone().rref_in_place().len()
    }

    /// Returns the matrix with column `c` moved to column `perm[c]`.
    pub fn permute_cols(&self, perm: &[usize]) -> BitMatrix {
        assert_eq!(perm.len(), self.cols);
        let mut out = BitMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, &pc) in perm.iter().enumerate() {
                if self.get(r, c) {
                    out.set(r, pc, true);
                }
            }
        }
        out
    }
}

impl fmt::Debug for BitMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BitMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            let s: String = (0..self.cols)
                .map(|c| if self.get(r, c) { '1' } else { '0' })
                .collect();
            writeln!(f, "  {s}")?;
        }
        write!(f, "]")
    }
}

fn pack(v: &[u8]) -> Vec<u64> {
    let mut out = vec![0u64; v.len().div_ceil(WORD)];
    for (i, &b) in v.iter().enumerate() {
        if b & 1 == 1 {
            out[i / WORD] |= 1 << (i % WORD);
        }
    }
    out
}

fn unpack(words: &[u64], len: usize) -> Vec<u8> {
    (0..len)
        .map(|i| ((words[i / WORD] >> (i % WORD)) & 1) as u8)
        .collect()
}
