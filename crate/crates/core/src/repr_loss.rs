//! Correlation-alignment representation loss.
//!
//! For L2-normalized student rows `Ẑ` and a target correlation `T`,
//!
//! ```text
//! C_s = Ẑ Ẑᵀ
//! L   = ( log2 ‖C_s‖² − log2 ‖C_s ⊙ T‖² ) / N
//! ```
//!
//! where `N` is the number of sampled pixels. `T` interpolates between the
//! teacher correlation (`ω = 1`, distillation; `N·L` equals the negated
//! order-2 mutual information up to a teacher-only constant) and the label
//! co-occurrence matrix (`ω = 0`, a squared-cosine supervised contrastive
//! objective).

use std::borrow::Cow;

use crate::entropy::{mutual_information, GramNpd};
use crate::error::{Error, Result};
use crate::linalg::{dot, frobenius_sq, l2_normalize_rows, norm, Tensor2D};

/// Masked squared norms at or below this make the loss undefined.
pub const ANNIHILATION_FLOOR: f64 = 1e-12;

const CORRELATION_TOL: f64 = 1e-10;

/// `N × d` per-pixel features.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    z: Tensor2D,
    normalized: bool,
}

impl Representation {
    /// Wraps raw features; they are normalized on first use.
    pub fn new(z: Tensor2D) -> Self {
        Self { z, normalized: false }
    }

    pub fn normalized(z: &Tensor2D) -> Result<Self> {
        Ok(Self { z: l2_normalize_rows(z)?, normalized: true })
    }

    pub fn raw(&self) -> &Tensor2D {
        &self.z
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.z.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.rows() == 0
    }

    /// Unit-norm rows, normalizing now if needed.
    pub fn unit_rows(&self) -> Result<Cow<'_, Tensor2D>> {
        if self.normalized {
            Ok(Cow::Borrowed(&self.z))
        } else {
            Ok(Cow::Owned(l2_normalize_rows(&self.z)?))
        }
    }
}

/// Symmetric `N × N` matrix with unit diagonal and entries in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    c: Tensor2D,
}

impl CorrelationMatrix {
    /// Validates an externally supplied matrix.
    pub fn from_matrix(c: Tensor2D) -> Result<Self> {
        if !c.is_square() {
            return Err(Error::NotSquare { rows: c.rows(), cols: c.cols() });
        }
        if !c.is_symmetric(CORRELATION_TOL) {
            return Err(Error::invalid("correlation matrix is not symmetric"));
        }
        for i in 0..c.rows() {
            if (c.get(i, i) - 1.0).abs() > CORRELATION_TOL {
                return Err(Error::invalid(format!("correlation diagonal ({i},{i}) is {}, not 1", c.get(i, i))));
            }
        }
        if c.data().iter().any(|v| v.abs() > 1.0 + CORRELATION_TOL) {
            return Err(Error::invalid("correlation entries must lie in [-1, 1]"));
        }
        Ok(Self { c })
    }

    pub fn matrix(&self) -> &Tensor2D {
        &self.c
    }

    pub fn n(&self) -> usize {
        self.c.rows()
    }
}

/// `N × 2` one-hot background/object labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    y: Tensor2D,
}

impl LabelMatrix {
    pub fn new(y: Tensor2D) -> Result<Self> {
        if y.cols() != 2 {
            return Err(Error::Shape(format!("label matrix needs 2 columns, got {}", y.cols())));
        }
        for (i, row) in y.row_iter().enumerate() {
            let one_hot = matches!(row, [a, b] if (*a == 1.0 && *b == 0.0) || (*a == 0.0 && *b == 1.0));
            if !one_hot {
                return Err(Error::invalid(format!("label row {i} is not one-hot: {row:?}")));
            }
        }
        Ok(Self { y })
    }

    /// One-hot encodes class ids in `{0, 1}`.
    pub fn from_classes(classes: &[u8]) -> Result<Self> {
        let mut y = Tensor2D::zeros(classes.len(), 2);
        for (i, &c) in classes.iter().enumerate() {
            if c > 1 {
                return Err(Error::invalid(format!("class id {c} at pixel {i}; only 0 and 1 are allowed")));
            }
            y.set(i, c as usize, 1.0);
        }
        Ok(Self { y })
    }

    pub fn matrix(&self) -> &Tensor2D {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.y.rows() == 0
    }

    pub fn class(&self, i: usize) -> u8 {
        if self.y.get(i, 1) == 1.0 {
            1
        } else {
            0
        }
    }

    pub fn classes(&self) -> Vec<u8> {
        (0..self.len()).map(|i| self.class(i)).collect()
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Ok(Self { y: self.y.select_rows(indices)? })
    }
}

/// `C = Ẑ Ẑᵀ` of the unit-normalized rows.
pub fn correlation(z: &Representation) -> Result<CorrelationMatrix> {
    let unit = z.unit_rows()?;
    let mut c = unit.gram();
    // Force the exact unit diagonal the invariants promise.
    for i in 0..c.rows() {
        c.set(i, i, 1.0);
    }
    Ok(CorrelationMatrix { c })
}

/// `C_y = Y Yᵀ`: 1 where two pixels share a class.
pub fn label_correlation(y: &LabelMatrix) -> CorrelationMatrix {
    CorrelationMatrix { c: y.matrix().gram() }
}

/// `ω·C_t + (1 − ω)·C_y`.
pub fn interpolate_target(
    teacher: &CorrelationMatrix,
    labels: &CorrelationMatrix,
    omega: f64,
) -> Result<CorrelationMatrix> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::invalid(format!("omega must lie in [0, 1], got {omega}")));
    }
    if teacher.n() != labels.n() {
        return Err(Error::Shape(format!("teacher target is {}, label target is {}", teacher.n(), labels.n())));
    }
    if omega == 1.0 {
        return Ok(teacher.clone());
    }
    if omega == 0.0 {
        return Ok(labels.clone());
    }
    let c = teacher.c.zip_with(&labels.c, |t, y| omega * t + (1.0 - omega) * y)?;
    Ok(CorrelationMatrix { c })
}

fn check_target(n: usize, target: &CorrelationMatrix) -> Result<()> {
    if target.n() != n {
        return Err(Error::Shape(format!("target is {0}x{0} but the representation has {n} rows", target.n())));
    }
    if n < 2 {
        return Err(Error::invalid(format!("the loss needs at least 2 pixels, got {n}")));
    }
    Ok(())
}

/// Both squared norms of the loss for a correlation matrix `m`.
fn norms(m: &Tensor2D, target: &Tensor2D) -> Result<(f64, f64)> {
    let full = frobenius_sq(m);
    let masked: f64 = m.data().iter().zip(target.data()).map(|(c, t)| (c * t) * (c * t)).sum();
    if masked <= ANNIHILATION_FLOOR {
        return Err(Error::TargetAnnihilates(masked));
    }
    Ok((full, masked))
}

/// The representation loss of `zs` against `target`.
pub fn repr_loss(zs: &Representation, target: &CorrelationMatrix) -> Result<f64> {
    check_target(zs.len(), target)?;
    let cs = correlation(zs)?;
    let (full, masked) = norms(&cs.c, &target.c)?;
    Ok((full.log2() - masked.log2()) / zs.len() as f64)
}

/// Loss and its gradient with respect to the raw (unnormalized) student features.
///
/// With `M = ẐẐᵀ`, `f = ‖M‖²`, `g = ‖M⊙T‖²`:
///
/// ```text
/// ∂L/∂M  = G = 2/(N ln 2) · ( M/f − M⊙T⊙T/g )
/// ∂L/∂Ẑ  = (G + Gᵀ) Ẑ
/// ∂L/∂zᵢ = (I − ẑᵢẑᵢᵀ) ∂L/∂ẑᵢ / ‖zᵢ‖
/// ```
///
/// The target is a constant.
pub fn repr_loss_and_grad(z_raw: &Tensor2D, target: &CorrelationMatrix) -> Result<(f64, Tensor2D)> {
    let n = z_raw.rows();
    check_target(n, target)?;
    let unit = l2_normalize_rows(z_raw)?;
    let m = unit.gram();
    let t = &target.c;
    let (full, masked) = norms(&m, t)?;
    let loss = (full.log2() - masked.log2()) / n as f64;

    let k = 2.0 / (n as f64 * std::f64::consts::LN_2);
    let g = m.zip_with(t, |c, tv| k * (c / full - c * tv * tv / masked))?;
    let g_sym = g.zip_with(&g.transpose(), |a, b| a + b)?;
    let d_unit = g_sym.matmul(&unit)?;

    let mut grad = Tensor2D::zeros(n, z_raw.cols());
    for i in 0..n {
        let r = norm(z_raw.row(i));
        let u = unit.row(i);
        let du = d_unit.row(i);
        let radial = dot(u, du);
        for (out, (&dui, &ui)) in grad.row_mut(i).iter_mut().zip(du.iter().zip(u)) {
            *out = (dui - radial * ui) / r;
        }
    }
    Ok((loss, grad))
}

/// Gradient of [`repr_loss`] with respect to the raw student features.
pub fn repr_loss_grad(z_raw: &Tensor2D, target: &CorrelationMatrix) -> Result<Tensor2D> {
    repr_loss_and_grad(z_raw, target).map(|(_, g)| g)
}

/// Largest relative disagreement between the analytic gradient and central
/// differences with step `h`.
///
/// Each coordinate is compared as `|a − n| / max(|a|, |n|, floor)` where the
/// floor is `1e-3` of the largest gradient entry, so coordinates that are
/// nearly zero do not turn rounding noise into huge ratios.
pub fn gradient_check(z_raw: &Tensor2D, target: &CorrelationMatrix, h: f64) -> Result<f64> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::invalid(format!("step h must be positive, got {h}")));
    }
    let analytic = repr_loss_grad(z_raw, target)?;
    let loss_at = |z: Tensor2D| repr_loss(&Representation::new(z), target);
    let mut numeric = Tensor2D::zeros(z_raw.rows(), z_raw.cols());
    for i in 0..z_raw.rows() {
        for j in 0..z_raw.cols() {
            let mut plus = z_raw.clone();
            plus.set(i, j, z_raw.get(i, j) + h);
            let mut minus = z_raw.clone();
            minus.set(i, j, z_raw.get(i, j) - h);
            numeric.set(i, j, (loss_at(plus)? - loss_at(minus)?) / (2.0 * h));
        }
    }
    let floor = 1e-3 * analytic.max_abs().max(numeric.max_abs()).max(f64::MIN_POSITIVE);
    Ok(analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max))
}

/// `−(1/N)·log2( Σᵢ Σ_{j∈Pᵢ} Cᵢⱼ² / Σᵢ Σₖ Cᵢₖ² )` with `Pᵢ` the pixels sharing `i`'s class.
///
/// Evaluated by pairwise label comparison rather than through `Y Yᵀ`.
pub fn supcon_closed_form(zs: &Representation, y: &LabelMatrix) -> Result<f64> {
    let n = zs.len();
    if y.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} pixels", y.len())));
    }
    if n < 2 {
        return Err(Error::invalid(format!("the loss needs at least 2 pixels, got {n}")));
    }
    let cs = correlation(zs)?;
    let classes = y.classes();
    let mut positive = 0.0;
    let mut total = 0.0;
    for i in 0..n {
        for k in 0..n {
            let sq = cs.c.get(i, k).powi(2);
            total += sq;
            if classes[i] == classes[k] {
                positive += sq;
            }
        }
    }
    if positive <= ANNIHILATION_FLOOR {
        return Err(Error::TargetAnnihilates(positive));
    }
    Ok(-(positive / total).log2() / n as f64)
}

/// Order-2 mutual information between two feature sets over the same pixels,
/// each turned into a trace-normalized cosine Gram matrix.
pub fn pixel_mutual_information(zs: &Tensor2D, zt: &Tensor2D) -> Result<f64> {
    if zs.rows() != zt.rows() {
        return Err(Error::Shape(format!("{} student rows vs {} teacher rows", zs.rows(), zt.rows())));
    }
    let a = GramNpd::from_features(zs)?;
    let b = GramNpd::from_features(zt)?;
    Ok(mutual_information(&a, &b, 2.0)?.bits)
}
