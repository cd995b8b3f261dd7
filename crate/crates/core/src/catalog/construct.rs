//! Constructions behind the embedded catalog files.
//!
//! `cargo run -p sap-core --example gen_catalog` regenerates `data/catalog/v1`
//! from these functions; a unit test checks the embedded files still match.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::code::{CodeFamily, ParityCheckMatrix};
use crate::gf2::BitMatrix;

/// Hamming code PCM with `r` checks: column `j` is the binary expansion of
/// `j + 1`, least significant bit in row 0.
pub fn hamming(r: usize) -> ParityCheckMatrix {
    let n = (1 << r) - 1;
    let mut h = BitMatrix::zeros(r, n);
    for c in 0..n {
        for row in 0..r {
            if ((c + 1) >> row) & 1 == 1 {
                h.set(row, c, true);
            }
        }
    }
    ParityCheckMatrix::new(h).expect("hamming shape")
}

/// Polynomial over GF(2) as coefficient bits, index = power.
fn poly_divmod(num: &[u8], den: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let dd = den.iter().rposition(|&b| b == 1).expect("nonzero divisor");
    let mut rem = num.to_vec();
    let nd = rem.iter().rposition(|&b| b == 1).unwrap_or(0);
    let mut quot = vec![0u8; nd.saturating_sub(dd) + 1];
    for shift in (0..=nd.saturating_sub(dd)).rev() {
        if rem.get(shift + dd) == Some(&1) {
            quot[shift] = 1;
            for (i, &b) in den.iter().enumerate().take(dd + 1) {
                rem[shift + i] ^= b;
            }
        }
    }
    (quot, rem)
}

/// PCM of the length-`n` cyclic code generated by `g` (coefficients by
/// increasing power). Returns `None` if `g` does not divide `x^n - 1`.
pub fn cyclic(n: usize, g: &[u8]) -> Option<ParityCheckMatrix> {
    let mut xn1 = vec![0u8; n + 1];
    xn1[0] = 1;
    xn1[n] = 1;
    let (h, rem) = poly_divmod(&xn1, g);
    if rem.iter().any(|&b| b == 1) {
        return None;
    }
    let k = h.len() - 1;
    let m = n - k;
    let mut pcm = BitMatrix::zeros(m, n);
    for r in 0..m {
        // row r holds the reciprocal of h shifted by r
        for i in 0..=k {
            if h[k - i] == 1 {
                pcm.set(r, r + i, true);
            }
        }
    }
    ParityCheckMatrix::new(pcm).ok()
}

/// Generator rows for the cyclic code: shifts of `g`.
pub fn cyclic_generator(n: usize, g: &[u8]) -> BitMatrix {
    let deg = g.iter().rposition(|&b| b == 1).expect("nonzero generator");
    let k = n - deg;
    let mut gm = BitMatrix::zeros(k, n);
    for r in 0..k {
        for (i, &b) in g.iter().enumerate().take(deg + 1) {
            if b == 1 {
                gm.set(r, r + i, true);
            }
        }
    }
    gm
}

fn bits_from_powers(powers: &[usize]) -> Vec<u8> {
    let deg = *powers.iter().max().unwrap();
    let mut v = vec![0u8; deg + 1];
    for &p in powers {
        v[p] = 1;
    }
    v
}

/// Kronecker power `F^{⊗m}` of the polar kernel `[[1,0],[1,1]]`.
pub fn polar_transform(m: usize) -> BitMatrix {
    let n = 1usize << m;
    let mut g = BitMatrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            // entry is 1 iff the bits of c are a subset of the bits of r
            if c & !r == 0 {
                g.set(r, c, true);
            }
        }
    }
    g
}

/// Polar code PCM of length `2^m` with `k` information positions chosen by
/// the erasure-channel Bhattacharyya recursion at erasure probability 1/2.
pub fn polar(m: usize, k: usize) -> ParityCheckMatrix {
    let n = 1usize << m;
    let z: Vec<f64> = (0..n)
        .map(|i| {
            let mut z = 0.5f64;
            for level in (0..m).rev() {
                z = if (i >> level) & 1 == 1 {
                    z * z
                } else {
                    2.0 * z - z * z
                };
            }
            z
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| z[a].total_cmp(&z[b]).then(b.cmp(&a)));
    let mut frozen: Vec<usize> = order[k..].to_vec();
    frozen.sort_unstable();
    let g = polar_transform(m);
    let mut h = BitMatrix::zeros(frozen.len(), n);
    for (r, &j) in frozen.iter().enumerate() {
        for c in 0..n {
            if g.get(c, j) {
                h.set(r, c, true);
            }
        }
    }
    ParityCheckMatrix::new(h).expect("polar shape")
}

/// Regular LDPC code with variable degree `dv` and check degree `dc`, drawn
/// from the configuration model. Draws with repeated edges or rank
/// deficiency are rejected; the first acceptable draw for `seed` is returned.
pub fn regular_ldpc(n: usize, dv: usize, dc: usize, seed: u64) -> ParityCheckMatrix {
    assert_eq!((n * dv) % dc, 0, "n·dv must be divisible by dc");
    let m = n * dv / dc;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sockets: Vec<usize> = (0..n * dv).map(|e| e / dv).collect();
    loop {
        let mut perm = sockets.clone();
        perm.shuffle(&mut rng);
        let mut h = BitMatrix::zeros(m, n);
        let mut ok = true;
        for (e, &v) in perm.iter().enumerate() {
            let c = e / dc;
            if h.get(c, v) {
                ok = false;
                break;
            }
            h.set(c, v, true);
        }
        if ok && h.rank() == m {
            return ParityCheckMatrix::new(h).expect("ldpc shape");
        }
    }
}

/// Two-fold graph lift: each one becomes a 2×2 identity or swap block.
/// Draws until the lifted matrix has full row rank.
pub fn lift2(base: &ParityCheckMatrix, seed: u64) -> ParityCheckMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, n) = (base.m(), base.n());
    loop {
        let mut h = BitMatrix::zeros(2 * m, 2 * n);
        for r in 0..m {
            for c in 0..n {
                if base.get(r, c) {
                    let swap: bool = rng.gen();
                    for i in 0..2 {
                        let j = if swap { 1 - i } else { i };
                        h.set(2 * r + i, 2 * c + j, true);
                    }
                }
            }
        }
        if h.rank() == 2 * m {
            return ParityCheckMatrix::new(h).expect("lift shape");
        }
    }
}

/// One catalog entry as produced by its construction.
pub struct Construction {
    pub name: &'static str,
    pub family: CodeFamily,
    pub pcm: ParityCheckMatrix,
}

pub const LDPC_SEED_A: u64 = 0x5A9_0001;
pub const LDPC_SEED_B: u64 = 0x5A9_0002;
pub const LIFT_SEED: u64 = 0x5A9_1000;

/// Every catalog code, in catalog order.
pub fn build_all() -> Vec<Construction> {
    let bch = |n: usize, powers: &[usize]| {
        cyclic(n, &bits_from_powers(powers)).expect("generator divides x^n - 1")
    };
    let ldpc12 = regular_ldpc(12, 3, 6, LDPC_SEED_A);
    let ldpc24 = regular_ldpc(24, 3, 6, LDPC_SEED_A);
    let ldpc48 = regular_ldpc(48, 3, 6, LDPC_SEED_A);
    vec![
        Construction {
            name: "HAMMING_7_4",
            family: CodeFamily::Hamming,
            pcm: hamming(3),
        },
        Construction {
            name: "HAMMING_15_11",
            family: CodeFamily::Hamming,
            pcm: hamming(4),
        },
        Construction {
            name: "BCH_15_7",
            family: CodeFamily::Bch,
            pcm: bch(15, &[0, 4, 6, 7, 8]),
        },
        Construction {
            name: "BCH_15_5",
            family: CodeFamily::Bch,
            pcm: bch(15, &[0, 1, 2, 4, 5, 8, 10]),
        },
        Construction {
            name: "BCH_31_16",
            family: CodeFamily::Bch,
            pcm: bch(31, &[0, 1, 2, 3, 5, 7, 8, 9, 10, 11, 15]),
        },
        Construction {
            name: "POLAR_16_8",
            family: CodeFamily::Polar,
            pcm: polar(4, 8),
        },
        Construction {
            name: "POLAR_32_16",
            family: CodeFamily::Polar,
            pcm: polar(5, 16),
        },
        Construction {
            name: "LDPC_12_6",
            family: CodeFamily::Ldpc,
            pcm: ldpc12.clone(),
        },
        Construction {
            name: "LDPC_24_12",
            family: CodeFamily::Ldpc,
            pcm: ldpc24.clone(),
        },
        Construction {
            name: "LDPC_24_12_B",
            family: CodeFamily::Ldpc,
            pcm: regular_ldpc(24, 3, 6, LDPC_SEED_B),
        },
        Construction {
            name: "LDPC_48_24",
            family: CodeFamily::Ldpc,
            pcm: ldpc48.clone(),
        },
        Construction {
            name: "LDPC_12_6_LIFT2",
            family: CodeFamily::Ldpc,
            pcm: lift2(&ldpc12, LIFT_SEED),
        },
        Construction {
            name: "LDPC_24_12_LIFT2",
            family: CodeFamily::Ldpc,
            pcm: lift2(&ldpc24, LIFT_SEED),
        },
        Construction {
            name: "LDPC_48_24_LIFT2",
            family: CodeFamily::Ldpc,
            pcm: lift2(&ldpc48, LIFT_SEED),
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cyclic_generator_is_orthogonal_to_pcm() {
        for (n, powers) in [
            (7usize, vec![0usize, 1, 3]),
            (15, vec![0, 4, 6, 7, 8]),
            (15, vec![0, 1, 2, 4, 5, 8, 10]),
            (31, vec![0, 1, 2, 3, 5, 7, 8, 9, 10, 11, 15]),
        ] {
            let g = bits_from_powers(&powers);
            let h = cyclic(n, &g).unwrap();
            let gm = cyclic_generator(n, &g);
            assert_eq!(h.k(), n - powers.iter().max().unwrap());
            assert!(gm.mul(&h.bits().transpose()).is_zero());
            assert_eq!(h.rank(), h.m());
        }
        // x^2 + 1 does not divide x^7 - 1
        assert!(cyclic(7, &[1, 0, 1]).is_none());
    }

    #[test]
    fn polar_transform_is_an_involution() {
        let g = polar_transform(4);
        assert_eq!(g.mul(&g), BitMatrix::identity(16));
        let h = polar(4, 8);
        assert_eq!(h.m(), 8);
        assert_eq!(h.rank(), 8);
        // the all-ones row of the transform is the most reliable position, so
        // the all-ones word is a codeword
        assert!(h.bits().mul_vec(&[1; 16]).iter().all(|&b| b == 0));
    }

    #[test]
    fn regular_ldpc_degrees() {
        let h = regular_ldpc(24, 3, 6, 7);
        assert_eq!(h.m(), 12);
        assert!((0..24).all(|c| h.bits().col_weight(c) == 3));
        assert!((0..12).all(|r| h.bits().row_weight(r) == 6));
        let l = lift2(&h, 3);
        assert_eq!((l.m(), l.n()), (24, 48));
        assert!((0..48).all(|c| l.bits().col_weight(c) == 3));
        assert_eq!(l.nnz(), 2 * h.nnz());
    }
}
