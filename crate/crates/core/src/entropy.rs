//! Matrix-based Rényi α-entropy, joint entropy and mutual information.
//!
//! The estimators act on the spectrum of a trace-normalized Gram matrix
//! instead of a density. All quantities are in bits.

use crate::error::{Error, Result};
use crate::linalg::{frobenius_sq, hadamard, l2_normalize_rows, sym_eigvals, Tensor2D};

/// Traces at or below this cannot be normalized.
pub const TRACE_FLOOR: f64 = 1e-12;

/// A symmetric PSD Gram matrix scaled to unit trace.
#[derive(Debug, Clone, PartialEq)]
pub struct GramNpd {
    matrix: Tensor2D,
}

impl GramNpd {
    pub fn matrix(&self) -> &Tensor2D {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.matrix.rows()
    }

    /// Gram matrix of the L2-normalized rows of `x`, divided by the row count.
    pub fn from_features(x: &Tensor2D) -> Result<Self> {
        normalize_trace(&gram_linear(&l2_normalize_rows(x)?)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyResult {
    pub bits: f64,
    pub alpha: f64,
}

/// Linear-kernel Gram matrix `X·Xᵀ`.
pub fn gram_linear(x: &Tensor2D) -> Result<Tensor2D> {
    if x.rows() == 0 {
        return Err(Error::invalid("gram_linear needs at least one row"));
    }
    Ok(x.gram())
}

/// Scales a square symmetric matrix to unit trace.
pub fn normalize_trace(k: &Tensor2D) -> Result<GramNpd> {
    let tr = k.trace()?;
    if !k.is_symmetric(1e-9 * k.max_abs().max(1.0)) {
        return Err(Error::invalid("kernel matrix is not symmetric"));
    }
    if tr <= TRACE_FLOOR {
        return Err(Error::VanishingTrace(tr));
    }
    Ok(GramNpd { matrix: k.scale(1.0 / tr) })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::invalid(format!("alpha must be positive and finite, got {alpha}")));
    }
    if alpha == 1.0 {
        return Err(Error::invalid(
            "alpha = 1 is undefined for the Rényi form; it is the Shannon limit as alpha -> 1, use alpha = 1 ± h",
        ));
    }
    Ok(())
}

/// `1/(1-α) · log2 Σ max(λᵢ, 0)^α` over the eigenvalues of `a`.
pub fn renyi_entropy(a: &GramNpd, alpha: f64) -> Result<EntropyResult> {
    check_alpha(alpha)?;
    let spectrum = sym_eigvals(&a.matrix)?;
    let power_sum: f64 = spectrum.eigenvalues.iter().map(|&l| l.max(0.0).powf(alpha)).sum();
    Ok(EntropyResult { bits: power_sum.log2() / (1.0 - alpha), alpha })
}

/// Order-2 entropy without an eigendecomposition: `tr(A²) = ‖A‖_F²` for symmetric `A`.
pub fn renyi_entropy2_fast(a: &GramNpd) -> EntropyResult {
    EntropyResult { bits: -frobenius_sq(&a.matrix).log2(), alpha: 2.0 }
}

fn entropy_dispatch(a: &GramNpd, alpha: f64) -> Result<EntropyResult> {
    if alpha == 2.0 {
        Ok(renyi_entropy2_fast(a))
    } else {
        renyi_entropy(a, alpha)
    }
}

/// Shannon entropy of the clamped, renormalized spectrum; the α → 1 limit.
pub fn spectral_shannon(a: &GramNpd) -> Result<f64> {
    let spectrum = sym_eigvals(&a.matrix)?;
    let clamped: Vec<f64> = spectrum.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    Ok(clamped.iter().filter(|&&p| p > 0.0).map(|&p| -(p / total) * (p / total).log2()).sum())
}

fn joint_gram(a: &GramNpd, b: &GramNpd) -> Result<GramNpd> {
    if a.n() != b.n() {
        return Err(Error::Shape(format!("joint entropy of {}- and {}-sample Grams", a.n(), b.n())));
    }
    let prod = hadamard(&a.matrix, &b.matrix)?;
    normalize_trace(&prod)
}

/// `S_α((A⊙B) / tr(A⊙B))`.
pub fn joint_entropy(a: &GramNpd, b: &GramNpd, alpha: f64) -> Result<EntropyResult> {
    check_alpha(alpha)?;
    entropy_dispatch(&joint_gram(a, b)?, alpha)
}

/// `S_α(A) + S_α(B) − S_α(A, B)`.
pub fn mutual_information(a: &GramNpd, b: &GramNpd, alpha: f64) -> Result<EntropyResult> {
    check_alpha(alpha)?;
    let joint = joint_entropy(a, b, alpha)?.bits;
    let sa = entropy_dispatch(a, alpha)?.bits;
    let sb = entropy_dispatch(b, alpha)?.bits;
    Ok(EntropyResult { bits: sa + sb - joint, alpha })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(n: usize) -> GramNpd {
        normalize_trace(&Tensor2D::identity(n)).unwrap()
    }

    fn ones(n: usize) -> GramNpd {
        normalize_trace(&Tensor2D::filled(n, n, 1.0)).unwrap()
    }

    #[test]
    fn gram_examples() {
        assert_eq!(gram_linear(&Tensor2D::identity(2)).unwrap(), Tensor2D::identity(2));
        let same = Tensor2D::from_rows(&[vec![0.6, 0.8], vec![0.6, 0.8]]).unwrap();
        assert!(gram_linear(&same).unwrap().max_abs_diff(&Tensor2D::filled(2, 2, 1.0)) < 1e-15);
        assert!(gram_linear(&Tensor2D::zeros(0, 3)).is_err());
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(uniform(4).matrix(), &Tensor2D::identity(4).scale(0.25));
        assert!(ones(3).matrix().max_abs_diff(&Tensor2D::filled(3, 3, 1.0 / 3.0)) < 1e-16);
        assert!(matches!(normalize_trace(&Tensor2D::zeros(3, 3)), Err(Error::VanishingTrace(_))));
        assert!(normalize_trace(&Tensor2D::zeros(2, 3)).is_err());
    }

    #[test]
    fn uniform_spectrum_is_log_n() {
        for alpha in [0.5, 2.0, 3.0, 7.5] {
            assert!((renyi_entropy(&uniform(4), alpha).unwrap().bits - 2.0).abs() < 1e-12);
        }
        assert!((renyi_entropy2_fast(&uniform(2)).bits - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rank_one_has_zero_entropy() {
        assert!(renyi_entropy(&ones(3), 2.0).unwrap().bits.abs() < 1e-12);
        assert!(renyi_entropy2_fast(&ones(3)).bits.abs() < 1e-15);
    }

    #[test]
    fn alpha_validation() {
        let err = renyi_entropy(&uniform(2), 1.0).unwrap_err().to_string();
        assert!(err.contains("limit"), "{err}");
        assert!(renyi_entropy(&uniform(2), 0.0).is_err());
        assert!(renyi_entropy(&uniform(2), -2.0).is_err());
        assert!(renyi_entropy(&uniform(2), f64::NAN).is_err());
    }

    #[test]
    fn joint_and_mi_of_uniform() {
        let n = 5;
        let log_n = (n as f64).log2();
        assert!((joint_entropy(&uniform(n), &uniform(n), 2.0).unwrap().bits - log_n).abs() < 1e-12);
        assert!((mutual_information(&uniform(n), &uniform(n), 2.0).unwrap().bits - log_n).abs() < 1e-12);
    }

    #[test]
    fn uniform_factor_cancels() {
        let x = Tensor2D::from_rows(&[vec![1.0, 0.2], vec![0.3, 1.0], vec![-0.5, 0.5]]).unwrap();
        let b = GramNpd::from_features(&x).unwrap();
        for alpha in [2.0, 0.5] {
            let joint = joint_entropy(&ones(3), &b, alpha).unwrap().bits;
            let alone = renyi_entropy(&b, alpha).unwrap().bits;
            assert!((joint - alone).abs() < 1e-12);
        }
        assert!(mutual_information(&b, &ones(3), 2.0).unwrap().bits.abs() < 1e-12);
    }

    #[test]
    fn joint_size_mismatch() {
        assert!(matches!(joint_entropy(&uniform(2), &uniform(3), 2.0), Err(Error::Shape(_))));
    }

    #[test]
    fn hadamard_with_vanishing_trace() {
        // Disjoint diagonal supports: the Hadamard product is all zeros.
        let a = GramNpd { matrix: Tensor2D::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap() };
        let b = GramNpd { matrix: Tensor2D::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0]]).unwrap() };
        assert!(matches!(joint_entropy(&a, &b, 2.0), Err(Error::VanishingTrace(_))));
    }
}
