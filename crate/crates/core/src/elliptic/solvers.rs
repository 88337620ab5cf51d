//! Linear solvers for SPD stiffness systems: a banded Cholesky factorization
//! for moderate sizes and Jacobi-preconditioned conjugate gradients otherwise.

use super::sparse::{dot, CsrMatrix};
use crate::{Error, Result};

/// Lower-triangular Cholesky factor stored as dense rows of the band.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    /// Row `i` holds columns `i - bw ..= i` at offsets `0 ..= bw`.
    rows: Vec<f64>,
}

impl BandedCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.dim();
        let bw = a.bandwidth();
        let w = bw + 1;
        let mut rows = vec![0.0; n * w];
        for i in 0..n {
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if j <= i {
                    rows[i * w + (j + bw - i)] = v;
                }
            }
        }
        for i in 0..n {
            let i0 = i.saturating_sub(bw);
            for j in i0..=i {
                let k0 = i0.max(j.saturating_sub(bw));
                let mut s = rows[i * w + (j + bw - i)];
                if k0 < j {
                    let ri = &rows[i * w + (k0 + bw - i)..i * w + (j + bw - i)];
                    let rj = &rows[j * w + (k0 + bw - j)..j * w + bw];
                    s -= dot(ri, rj);
                }
                if j == i {
                    if !(s > 0.0) {
                        return Err(Error::Indefinite(format!("non-positive pivot {s:e} at row {i}")));
                    }
                    rows[i * w + bw] = s.sqrt();
                } else {
                    rows[i * w + (j + bw - i)] = s / rows[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, rows })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let mut y = b.to_vec();
        for i in 0..n {
            let i0 = i.saturating_sub(bw);
            let row = &self.rows[i * w + (i0 + bw - i)..i * w + bw];
            let s = y[i] - dot(row, &y[i0..i]);
            y[i] = s / self.rows[i * w + bw];
        }
        for i in (0..n).rev() {
            y[i] /= self.rows[i * w + bw];
            let xi = y[i];
            let i0 = i.saturating_sub(bw);
            let row = &self.rows[i * w + (i0 + bw - i)..i * w + bw];
            for (yk, &l) in y[i0..i].iter_mut().zip(row) {
                *yk -= l * xi;
            }
        }
        y
    }
}

/// Outcome of a conjugate gradient run.
#[derive(Debug, Clone, Copy)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned CG for `A x = b`, stopping when
/// `|r| <= tol |b|`. Starts from zero.
pub fn pcg(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, CgStats)> {
    let n = a.dim();
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, CgStats { iterations: 0, relative_residual: 0.0 }));
    }
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|&d| 1.0 / d).collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Indefinite(format!("CG met curvature {pap:e}")));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let res = dot(&r, &r).sqrt() / bnorm;
        if res <= tol {
            return Ok((x, CgStats { iterations: it, relative_residual: res }));
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let res = dot(&r, &r).sqrt() / bnorm;
    Err(Error::Solver { iterations: max_iter, residual: res, tolerance: tol })
}
