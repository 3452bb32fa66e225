//! Thin singular value decomposition by one-sided (Hestenes) Jacobi rotations.
//!
//! The shorter side of the matrix is orthogonalized pairwise in a fixed cyclic
//! order, so for a given input the sequence of floating-point operations, and
//! therefore the output, is identical from run to run. Singular vector signs
//! are whatever the rotations produce; callers that only consume `U Σ Vᵀ`
//! products are unaffected.

use thiserror::Error;

use crate::matrix::{dot, Matrix};

const MAX_SWEEPS: usize = 80;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SvdError {
    #[error("Jacobi SVD did not converge after {sweeps} sweeps")]
    NotConverged { sweeps: usize },
    #[error("matrix contains a non-finite entry")]
    NonFinite,
}

/// `M = U diag(σ) Vᵀ` with `k = min(n, d)` columns in `U` (n×k) and `V` (d×k).
///
/// Columns paired with an exactly zero singular value on the long side are
/// left as zero vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
    pub sweeps: usize,
}

impl Svd {
    pub fn rank_capacity(&self) -> usize {
        self.singular_values.len()
    }

    /// `U_r Σ_r V_rᵀ` from the leading `r` singular triples.
    pub fn reconstruct(&self, r: usize) -> Matrix {
        let r = r.min(self.singular_values.len());
        let (n, d) = (self.u.rows(), self.v.rows());
        let mut out = Matrix::zeros(n, d);
        for k in 0..r {
            let s = self.singular_values[k];
            if s == 0.0 {
                continue;
            }
            let vk = self.v.column(k);
            for i in 0..n {
                let coef = self.u[(i, k)] * s;
                if coef == 0.0 {
                    continue;
                }
                for (o, &vj) in out.row_mut(i).iter_mut().zip(&vk) {
                    *o += coef * vj;
                }
            }
        }
        out
    }
}

pub fn thin_svd(m: &Matrix) -> Result<Svd, SvdError> {
    if !m.is_finite() {
        return Err(SvdError::NonFinite);
    }
    let (n, d) = m.shape();
    let transposed = n > d;
    let mut work = if transposed { m.transpose() } else { m.clone() };
    let (p, q) = work.shape();
    let mut rot = Matrix::identity(p);

    let tol = (q.max(1) as f64).sqrt() * f64::EPSILON;
    // Rows this small are rounding noise; their relative correlation with
    // other rows never settles, so they are left alone.
    let floor = (f64::EPSILON * m.frobenius_norm()).powi(2);
    let mut sweeps = 0;
    let mut converged = p < 2;
    while !converged {
        if sweeps == MAX_SWEEPS {
            return Err(SvdError::NotConverged { sweeps });
        }
        sweeps += 1;
        let mut rotated = false;
        for i in 0..p - 1 {
            for j in i + 1..p {
                let alpha = dot(work.row(i), work.row(i));
                let beta = dot(work.row(j), work.row(j));
                let gamma = dot(work.row(i), work.row(j));
                if alpha <= floor
                    || beta <= floor
                    || gamma == 0.0
                    || gamma.abs() <= tol * (alpha * beta).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut work, i, j, c, s);
                rotate_rows(&mut rot, i, j, c, s);
            }
        }
        converged = !rotated;
    }

    let norms: Vec<f64> = work.row_iter().map(|r| dot(r, r).sqrt()).collect();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));

    // Long-side vectors come from the orthogonalized rows, short-side vectors
    // from the accumulated rotation.
    let mut short = Matrix::zeros(p, p);
    let mut long = Matrix::zeros(q, p);
    let mut singular_values = Vec::with_capacity(p);
    for (k, &src) in order.iter().enumerate() {
        let sigma = norms[src];
        singular_values.push(sigma);
        for i in 0..p {
            short[(i, k)] = rot[(src, i)];
        }
        if sigma > 0.0 {
            for (j, &x) in work.row(src).iter().enumerate() {
                long[(j, k)] = x / sigma;
            }
        }
    }

    let (u, v) = if transposed { (long, short) } else { (short, long) };
    Ok(Svd {
        u,
        singular_values,
        v,
        sweeps,
    })
}

#[inline]
fn rotate_rows(m: &mut Matrix, i: usize, j: usize, c: f64, s: f64) {
    debug_assert!(i < j);
    let cols = m.cols();
    let data = m.as_mut_slice();
    let (head, tail) = data.split_at_mut(j * cols);
    let ri = &mut head[i * cols..(i + 1) * cols];
    let rj = &mut tail[..cols];
    for (x, y) in ri.iter_mut().zip(rj.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}
