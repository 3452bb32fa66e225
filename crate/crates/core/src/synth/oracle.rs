//! Reference computations kept independent of the production code paths,
//! for cross-checking on small inputs.

use crate::matrix::Matrix;
use crate::metrics::MetricsError;

const JACOBI_TOLERANCE: f64 = 1e-14;
const JACOBI_MAX_SWEEPS: usize = 200;

/// Singular values of `M` as square roots of the eigenvalues of `MᵀM`,
/// found by cyclic Jacobi rotations. Returns the top `min(n, d)` values,
/// descending.
///
/// Squaring loses accuracy for small singular values (absolute error near
/// `eps·σ₁²/σ`), so compare with tolerances scaled to `σ₁`. Meant for
/// matrices up to about 12×12.
pub fn oracle_spectrum(m: &Matrix) -> Vec<f64> {
    let (n, d) = m.shape();
    let mut g = m.transpose().matmul(m);
    let scale = g.frobenius_norm();
    if scale > 0.0 {
        for _ in 0..JACOBI_MAX_SWEEPS {
            let off: f64 = (0..d)
                .flat_map(|p| (0..d).filter(move |&q| q != p).map(move |q| (p, q)))
                .map(|(p, q)| g[(p, q)] * g[(p, q)])
                .sum::<f64>()
                .sqrt();
            if off <= JACOBI_TOLERANCE * scale {
                break;
            }
            for p in 0..d {
                for q in (p + 1)..d {
                    rotate(&mut g, p, q);
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..d).map(|i| g[(i, i)].max(0.0).sqrt()).collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    eig.truncate(n.min(d));
    eig
}

/// Zeroes `g[p][q]` with a symmetric Jacobi rotation `JᵀGJ`.
fn rotate(g: &mut Matrix, p: usize, q: usize) {
    let apq = g[(p, q)];
    if apq == 0.0 {
        return;
    }
    let theta = (g[(q, q)] - g[(p, p)]) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let d = g.rows();
    for k in 0..d {
        let gkp = g[(k, p)];
        let gkq = g[(k, q)];
        g[(k, p)] = c * gkp - s * gkq;
        g[(k, q)] = s * gkp + c * gkq;
    }
    for k in 0..d {
        let gpk = g[(p, k)];
        let gqk = g[(q, k)];
        g[(p, k)] = c * gpk - s * gqk;
        g[(q, k)] = s * gpk + c * gqk;
    }
}

/// Spearman's ρ from explicitly sorted tie groups, with rank means taken
/// from the rank vectors themselves. `None` when either side is constant.
pub fn oracle_spearman(h: &[f64], h_gt: &[f64]) -> Result<Option<f64>, MetricsError> {
    if h.len() != h_gt.len() {
        return Err(MetricsError::LengthMismatch {
            left: h.len(),
            right: h_gt.len(),
        });
    }
    if h.len() < 2 {
        return Err(MetricsError::TooFew(h.len()));
    }
    let r = tie_group_ranks(h);
    let s = tie_group_ranks(h_gt);
    let n = r.len() as f64;
    let r_bar = r.iter().sum::<f64>() / n;
    let s_bar = s.iter().sum::<f64>() / n;
    let num: f64 = r.iter().zip(&s).map(|(a, b)| (a - r_bar) * (b - s_bar)).sum();
    let var_r: f64 = r.iter().map(|a| (a - r_bar) * (a - r_bar)).sum();
    let var_s: f64 = s.iter().map(|b| (b - s_bar) * (b - s_bar)).sum();
    if var_r == 0.0 || var_s == 0.0 {
        return Ok(None);
    }
    Ok(Some(num / (var_r * var_s).sqrt()))
}

fn tie_group_ranks(values: &[f64]) -> Vec<f64> {
    let mut pairs: Vec<(f64, usize)> = values.iter().copied().zip(0..).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite values"));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut last: Option<f64> = None;
    for (v, i) in pairs {
        if last == Some(v) {
            groups.last_mut().expect("group open").push(i);
        } else {
            groups.push(vec![i]);
            last = Some(v);
        }
    }
    let mut ranks = vec![0.0; values.len()];
    let mut next = 1usize;
    for group in groups {
        let positions: Vec<usize> = (next..next + group.len()).collect();
        let mean = positions.iter().sum::<usize>() as f64 / group.len() as f64;
        for i in group {
            ranks[i] = mean;
        }
        next += positions.len();
    }
    ranks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectrum_of_known_matrices() {
        let s = oracle_spectrum(&Matrix::from_rows(&[[3.0, 0.0], [0.0, 1.0]]));
        assert!((s[0] - 3.0).abs() < 1e-13 && (s[1] - 1.0).abs() < 1e-13);
        let s = oracle_spectrum(&Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]));
        let exact = [(15.0 + 221f64.sqrt()).sqrt(), (15.0 - 221f64.sqrt()).sqrt()];
        assert!((s[0] - exact[0]).abs() < 1e-12);
        assert!((s[1] - exact[1]).abs() < 1e-12);
    }

    #[test]
    fn spectrum_of_wide_and_zero() {
        let s = oracle_spectrum(&Matrix::from_rows(&[[1.0, 0.0, 0.0, 0.0]]));
        assert_eq!(s.len(), 1);
        assert!((s[0] - 1.0).abs() < 1e-14);
        assert_eq!(oracle_spectrum(&Matrix::zeros(3, 2)), vec![0.0, 0.0]);
    }

    #[test]
    fn spearman_references() {
        assert_eq!(oracle_spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), Some(1.0));
        assert_eq!(oracle_spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), Some(-1.0));
        let tie = oracle_spearman(&[1.0, 1.0, 2.0], &[0.0, 0.0, 1.0]).unwrap().unwrap();
        assert!((tie - 1.0).abs() < 1e-15);
        assert_eq!(oracle_spearman(&[1.0, 1.0], &[0.0, 1.0]).unwrap(), None);
    }
}
