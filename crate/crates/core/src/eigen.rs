//! Cyclic Jacobi eigenvalue solver for dense real symmetric matrices.

use thiserror::Error;

/// Stop once the off-diagonal Frobenius norm falls below this.
pub const OFF_DIAGONAL_TOL: f64 = 1e-10;
pub const MAX_SWEEPS: usize = 100;
/// Largest tolerated `|a_ij - a_ji|` on input.
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EigenError {
    #[error("matrix is not symmetric: |a[{i}][{j}] - a[{j}][{i}]| = {diff:e}")]
    Asymmetric { i: usize, j: usize, diff: f64 },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error(
        "Jacobi iteration did not converge in {sweeps} sweeps (off-diagonal norm {residual:e})"
    )]
    NoConvergence { sweeps: usize, residual: f64 },
}

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, EigenError> {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(EigenError::NotSquare {
                    rows: n,
                    cols: r.len(),
                });
            }
            m.data[i * n..(i + 1) * n].copy_from_slice(r);
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    fn off_diagonal_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    s += self.get(i, j).powi(2);
                }
            }
        }
        s.sqrt()
    }

    fn check_symmetric(&self) -> Result<(), EigenError> {
        for i in 0..self.n {
            for j in i + 1..self.n {
                let diff = (self.get(i, j) - self.get(j, i)).abs();
                if !(diff <= SYMMETRY_TOL) {
                    return Err(EigenError::Asymmetric { i, j, diff });
                }
            }
        }
        Ok(())
    }
}

/// All eigenvalues of a real symmetric matrix, ascending.
pub fn symmetric_eigenvalues(mat: &SymMatrix) -> Result<Vec<f64>, EigenError> {
    mat.check_symmetric()?;
    let n = mat.n;
    let mut a = mat.clone();
    // symmetrize exactly so rotations see a single value per pair
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (a.get(i, j) + a.get(j, i));
            a.set(i, j, v);
            a.set(j, i, v);
        }
    }
    let mut sweeps = 0;
    loop {
        let off = a.off_diagonal_norm();
        if off <= OFF_DIAGONAL_TOL {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(EigenError::NoConvergence {
                sweeps,
                residual: off,
            });
        }
        for p in 0..n {
            for q in p + 1..n {
                rotate(&mut a, p, q);
            }
        }
        sweeps += 1;
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Annihilates `a[p][q]` with a Givens similarity rotation.
fn rotate(a: &mut SymMatrix, p: usize, q: usize) {
    let apq = a.get(p, q);
    if apq == 0.0 {
        return;
    }
    let n = a.n;
    let app = a.get(p, p);
    let aqq = a.get(q, q);
    let theta = (aqq - app) / (2.0 * apq);
    let t = if theta.is_infinite() {
        0.0
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    if t == 0.0 {
        a.set(p, q, 0.0);
        a.set(q, p, 0.0);
        return;
    }
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let tau = s / (1.0 + c);
    a.set(p, p, app - t * apq);
    a.set(q, q, aqq + t * apq);
    a.set(p, q, 0.0);
    a.set(q, p, 0.0);
    for r in 0..n {
        if r == p || r == q {
            continue;
        }
        let arp = a.get(r, p);
        let arq = a.get(r, q);
        let new_rp = arp - s * (arq + tau * arp);
        let new_rq = arq + s * (arp - tau * arq);
        a.set(r, p, new_rp);
        a.set(p, r, new_rp);
        a.set(r, q, new_rq);
        a.set(q, r, new_rq);
    }
}
