use super::Tensor2D;
use crate::error::{Error, Result};

/// Eigenvalues more negative than this flag a matrix that was meant to be PSD.
pub const PSD_TOLERANCE: f64 = 1e-9;

const MAX_SWEEPS: usize = 64;

/// Spectrum of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymEig {
    /// Sorted descending.
    pub eigenvalues: Vec<f64>,
    /// Set when some eigenvalue is below `-PSD_TOLERANCE`.
    pub psd_violation: bool,
}

impl SymEig {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }
}

/// Eigenvalues of `(A + Aᵀ)/2` by cyclic Jacobi rotations.
///
/// Jacobi is slow next to tridiagonal QR but accurate to a few ulps of the
/// matrix norm, which is what the identity checks downstream rely on. Inputs
/// here are at most a few hundred rows.
pub fn sym_eigvals(a: &Tensor2D) -> Result<SymEig> {
    if !a.is_square() {
        return Err(Error::NotSquare { rows: a.rows(), cols: a.cols() });
    }
    let n = a.rows();
    let mut m = a.symmetrize()?.into_data();

    let scale: f64 = m.iter().map(|v| v * v).sum::<f64>().sqrt();
    if scale > 0.0 {
        for _ in 0..MAX_SWEEPS {
            let off: f64 = (0..n)
                .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
                .map(|(p, q)| m[p * n + q] * m[p * n + q])
                .sum();
            if off.sqrt() <= f64::EPSILON * scale {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    rotate(&mut m, n, p, q);
                }
            }
        }
    }

    let mut eigenvalues: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    eigenvalues.sort_by(|x, y| y.total_cmp(x));
    let psd_violation = eigenvalues.last().is_some_and(|&v| v < -PSD_TOLERANCE);
    Ok(SymEig { eigenvalues, psd_violation })
}

/// One Jacobi rotation zeroing `m[p][q]`, applied as `Jᵀ M J`.
fn rotate(m: &mut [f64], n: usize, p: usize, q: usize) {
    let apq = m[p * n + q];
    if apq == 0.0 {
        return;
    }
    let app = m[p * n + p];
    let aqq = m[q * n + q];
    let theta = (aqq - app) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    // signum(0) is 1 for f64, so t is well defined when app == aqq.
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    for k in 0..n {
        let mkp = m[k * n + p];
        let mkq = m[k * n + q];
        m[k * n + p] = c * mkp - s * mkq;
        m[k * n + q] = s * mkp + c * mkq;
    }
    for k in 0..n {
        let mpk = m[p * n + k];
        let mqk = m[q * n + k];
        m[p * n + k] = c * mpk - s * mqk;
        m[q * n + k] = s * mpk + c * mqk;
    }
    m[p * n + q] = 0.0;
    m[q * n + p] = 0.0;
}
