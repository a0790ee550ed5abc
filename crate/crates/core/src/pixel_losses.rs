//! Per-pixel classification losses: temperature-scaled logit distillation
//! and bootstrapped poly-1 cross-entropy. Natural log throughout.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::Tensor2D;
use crate::repr_loss::LabelMatrix;

/// Probabilities below this are treated as zero (student) or clamped (teacher, true class).
pub const PROB_FLOOR: f64 = 1e-12;

/// `N × K` raw class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelLogits(Tensor2D);

impl PixelLogits {
    pub fn new(values: Tensor2D) -> Result<Self> {
        if values.cols() == 0 {
            return Err(Error::Shape("logits need at least one class column".into()));
        }
        if !values.all_finite() {
            return Err(Error::invalid("logits must be finite"));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &Tensor2D {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Ok(Self(self.0.select_rows(indices)?))
    }
}

/// Which way the KL divergence runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KlDirection {
    /// `KL(p_S ‖ p_T)`.
    #[default]
    StudentTeacher,
    /// `KL(p_T ‖ p_S)`.
    TeacherStudent,
}

impl FromStr for KlDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "student-teacher" => Ok(KlDirection::StudentTeacher),
            "teacher-student" => Ok(KlDirection::TeacherStudent),
            other => Err(Error::invalid(format!(
                "kl direction `{other}`; expected student-teacher or teacher-student"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlOutput {
    pub value: f64,
    /// A reference probability hit [`PROB_FLOOR`] and was clamped.
    pub saturated: bool,
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

/// Row-wise `log softmax(row / tau)`.
fn log_softmax_row(row: &[f64], tau: f64, out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max) / tau;
        sum += o.exp();
    }
    let log_sum = sum.ln();
    out.iter_mut().for_each(|o| *o -= log_sum);
}

/// Row-wise softmax of `l / tau` in the max-subtracted form.
pub fn temperature_softmax(l: &PixelLogits, tau: f64) -> Result<Tensor2D> {
    check_tau(tau)?;
    let v = l.values();
    let mut out = Tensor2D::zeros(v.rows(), v.cols());
    for i in 0..v.rows() {
        let row = out.row_mut(i);
        let max = v.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, &x) in row.iter_mut().zip(v.row(i)) {
            *o = ((x - max) / tau).exp();
            sum += *o;
        }
        row.iter_mut().for_each(|o| *o /= sum);
    }
    Ok(out)
}

/// `(1/N) Σ KL(p_S(τ) ‖ p_T(τ))`.
pub fn kl_logit_loss(student: &PixelLogits, teacher: &PixelLogits, tau: f64) -> Result<KlOutput> {
    kl_logit_loss_and_grad(student, teacher, tau, KlDirection::StudentTeacher).map(|(out, _)| out)
}

/// Mean KL in either direction, with its gradient with respect to the student logits.
pub fn kl_logit_loss_and_grad(
    student: &PixelLogits,
    teacher: &PixelLogits,
    tau: f64,
    direction: KlDirection,
) -> Result<(KlOutput, Tensor2D)> {
    check_tau(tau)?;
    let (s, t) = (student.values(), teacher.values());
    if s.shape() != t.shape() {
        return Err(Error::Shape(format!(
            "student logits {}x{} vs teacher {}x{}",
            s.rows(),
            s.cols(),
            t.rows(),
            t.cols()
        )));
    }
    let (n, k) = s.shape();
    let log_floor = PROB_FLOOR.ln();
    let mut grad = Tensor2D::zeros(n, k);
    let mut total = 0.0;
    let mut saturated = false;
    let mut ls = vec![0.0; k];
    let mut lt = vec![0.0; k];
    let scale = 1.0 / (n.max(1) as f64 * tau);

    for i in 0..n {
        log_softmax_row(s.row(i), tau, &mut ls);
        log_softmax_row(t.row(i), tau, &mut lt);
        let g = grad.row_mut(i);
        match direction {
            KlDirection::StudentTeacher => {
                let mut kl = 0.0;
                let mut terms = vec![0.0; k];
                for c in 0..k {
                    let p = ls[c].exp();
                    if p < PROB_FLOOR {
                        continue;
                    }
                    if lt[c] < log_floor {
                        saturated = true;
                    }
                    terms[c] = ls[c] - lt[c].max(log_floor);
                    kl += p * terms[c];
                }
                for c in 0..k {
                    g[c] = ls[c].exp() * (terms[c] - kl) * scale;
                }
                total += kl;
            }
            KlDirection::TeacherStudent => {
                let mut kl = 0.0;
                for c in 0..k {
                    let q = lt[c].exp();
                    if q >= PROB_FLOOR {
                        if ls[c] < log_floor {
                            saturated = true;
                        }
                        kl += q * (lt[c] - ls[c].max(log_floor));
                    }
                    g[c] = (ls[c].exp() - q) * scale;
                }
                total += kl;
            }
        }
    }
    let value = if n == 0 { 0.0 } else { total / n as f64 };
    Ok((KlOutput { value, saturated }, grad))
}

fn check_poly_args(n_probs: usize, y: &LabelMatrix, epsilon: f64, top_p: f64) -> Result<()> {
    if y.len() != n_probs {
        return Err(Error::Shape(format!("{} label rows for {n_probs} pixels", y.len())));
    }
    if n_probs == 0 {
        return Err(Error::invalid("poly cross-entropy needs at least one pixel"));
    }
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::invalid(format!("epsilon must be non-negative, got {epsilon}")));
    }
    if !(top_p > 0.0 && top_p <= 1.0) {
        return Err(Error::invalid(format!("bootstrap top-p must lie in (0, 1], got {top_p}")));
    }
    Ok(())
}

/// Number of hardest pixels kept by the bootstrap.
pub fn bootstrap_count(n: usize, top_p: f64) -> usize {
    ((top_p * n as f64).ceil() as usize).clamp(1, n.max(1))
}

/// Indices of the `k` largest losses, ties broken toward the lower index.
fn hardest(losses: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

fn poly_term(p_true: f64, epsilon: f64) -> f64 {
    -p_true.max(PROB_FLOOR).ln() + epsilon * (1.0 - p_true)
}

/// Per-pixel `−ln p_t + ε(1 − p_t)`, averaged over the `⌈top_p·N⌉` hardest pixels.
pub fn poly_cross_entropy(probs: &Tensor2D, y: &LabelMatrix, epsilon: f64, bootstrap_top_p: f64) -> Result<f64> {
    check_poly_args(probs.rows(), y, epsilon, bootstrap_top_p)?;
    if probs.cols() != 2 {
        return Err(Error::Shape(format!("two-class probabilities expected, got {} columns", probs.cols())));
    }
    for (i, row) in probs.row_iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&p| p < 0.0) {
            return Err(Error::invalid(format!("probability row {i} is not a distribution (sums to {sum})")));
        }
    }
    let losses: Vec<f64> = (0..probs.rows()).map(|i| poly_term(probs.get(i, y.class(i) as usize), epsilon)).collect();
    let keep = hardest(&losses, bootstrap_count(losses.len(), bootstrap_top_p));
    Ok(keep.iter().map(|&i| losses[i]).sum::<f64>() / keep.len() as f64)
}

/// Plain mean cross-entropy of probabilities against one-hot labels.
pub fn cross_entropy(probs: &Tensor2D, y: &LabelMatrix) -> Result<f64> {
    poly_cross_entropy(probs, y, 0.0, 1.0)
}

/// Poly cross-entropy of `softmax(logits)` with its gradient with respect to the logits.
///
/// The bootstrap selection is held fixed when differentiating.
pub fn poly_cross_entropy_logits_and_grad(
    logits: &PixelLogits,
    y: &LabelMatrix,
    epsilon: f64,
    bootstrap_top_p: f64,
) -> Result<(f64, Tensor2D)> {
    let probs = temperature_softmax(logits, 1.0)?;
    let (n, k) = probs.shape();
    check_poly_args(n, y, epsilon, bootstrap_top_p)?;
    if k != 2 {
        return Err(Error::Shape(format!("two-class logits expected, got {k} columns")));
    }
    let losses: Vec<f64> = (0..n).map(|i| poly_term(probs.get(i, y.class(i) as usize), epsilon)).collect();
    let keep = hardest(&losses, bootstrap_count(n, bootstrap_top_p));
    let weight = 1.0 / keep.len() as f64;
    let mut grad = Tensor2D::zeros(n, k);
    for &i in &keep {
        let t = y.class(i) as usize;
        let pt = probs.get(i, t);
        for c in 0..k {
            let p = probs.get(i, c);
            let delta = if c == t { 1.0 } else { 0.0 };
            grad.set(i, c, weight * ((p - delta) - epsilon * pt * (delta - p)));
        }
    }
    let value = keep.iter().map(|&i| losses[i]).sum::<f64>() * weight;
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(rows: &[&[f64]]) -> PixelLogits {
        PixelLogits::new(Tensor2D::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let p = temperature_softmax(&logits(&[&[3.0, 3.0], &[-1.0, -1.0]]), 0.7).unwrap();
        assert!(p.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        let p = temperature_softmax(&logits(&[&[2f64.ln(), 0.0]]), 1.0).unwrap();
        assert!((p.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.get(0, 1) - 1.0 / 3.0).abs() < 1e-15);
        let p = temperature_softmax(&logits(&[&[1.0, 0.0]]), 0.1).unwrap();
        let e = (-10f64).exp();
        assert!((p.get(0, 0) - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((p.get(0, 1) - e / (1.0 + e)).abs() < 1e-18);
        assert!((p.get(0, 0) - 0.9999546).abs() < 1e-7);
        assert!(temperature_softmax(&logits(&[&[1.0, 0.0]]), 0.0).is_err());
    }

    #[test]
    fn softmax_extreme_logits_stay_finite() {
        let p = temperature_softmax(&logits(&[&[1e300, -1e300]]), 0.1).unwrap();
        assert!(p.all_finite());
        assert_eq!(p.get(0, 0), 1.0);
    }

    #[test]
    fn kl_zero_cases() {
        let a = logits(&[&[0.3, -1.2], &[2.0, 0.5]]);
        assert_eq!(kl_logit_loss(&a, &a, 0.1).unwrap().value, 0.0);
        let shifted = logits(&[&[5.3, 3.8], &[-1.0, -2.5]]);
        assert!(kl_logit_loss(&a, &shifted, 0.1).unwrap().value.abs() < 1e-12);
    }

    #[test]
    fn kl_hand_value() {
        let out = kl_logit_loss(&logits(&[&[0.0, 0.0]]), &logits(&[&[3f64.ln(), 0.0]]), 1.0).unwrap();
        let expected = 0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln();
        assert!((out.value - expected).abs() < 1e-15);
        assert!((out.value - 0.14384).abs() < 1e-5);
        assert!(!out.saturated);
    }

    #[test]
    fn kl_flags_teacher_saturation() {
        let out = kl_logit_loss(&logits(&[&[0.0, 0.0]]), &logits(&[&[100.0, 0.0]]), 1.0).unwrap();
        assert!(out.saturated);
        assert!(out.value.is_finite());
    }

    #[test]
    fn kl_shape_mismatch() {
        assert!(kl_logit_loss(&logits(&[&[0.0, 0.0]]), &logits(&[&[0.0, 0.0], &[1.0, 0.0]]), 1.0).is_err());
    }

    #[test]
    fn kl_direction_parse() {
        assert_eq!("teacher-student".parse::<KlDirection>().unwrap(), KlDirection::TeacherStudent);
        assert!("sideways".parse::<KlDirection>().is_err());
    }

    #[test]
    fn poly_examples() {
        let y = LabelMatrix::from_classes(&[0, 1]).unwrap();
        let perfect = Tensor2D::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(poly_cross_entropy(&perfect, &y, 1.0, 1.0).unwrap(), 0.0);

        let one = LabelMatrix::from_classes(&[1]).unwrap();
        let half = Tensor2D::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let v = poly_cross_entropy(&half, &one, 1.0, 1.0).unwrap();
        assert!((v - (-(0.5f64.ln()) + 0.5)).abs() < 1e-15);
        assert!((v - 1.19315).abs() < 1e-5);

        let p = Tensor2D::from_rows(&[vec![0.9, 0.1], vec![0.3, 0.7]]).unwrap();
        let ce = -(0.9f64.ln() + 0.7f64.ln()) / 2.0;
        assert_eq!(poly_cross_entropy(&p, &y, 0.0, 1.0).unwrap(), ce);
    }

    #[test]
    fn poly_bootstrap_keeps_hardest() {
        let y = LabelMatrix::from_classes(&[0, 0, 0, 0]).unwrap();
        let p = Tensor2D::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8], vec![0.6, 0.4], vec![0.99, 0.01]]).unwrap();
        let v = poly_cross_entropy(&p, &y, 1.0, 0.25).unwrap();
        assert!((v - poly_term(0.2, 1.0)).abs() < 1e-15);
        assert!(poly_cross_entropy(&p, &y, 1.0, 0.0).is_err());
        assert!(poly_cross_entropy(&p, &y, -1.0, 1.0).is_err());
    }

    #[test]
    fn poly_tie_break_prefers_lower_index() {
        assert_eq!(hardest(&[1.0, 2.0, 2.0, 0.5], 2), vec![1, 2]);
        assert_eq!(hardest(&[1.0, 1.0, 1.0], 1), vec![0]);
    }

    #[test]
    fn poly_rejects_non_distribution() {
        let y = LabelMatrix::from_classes(&[0]).unwrap();
        let bad = Tensor2D::from_rows(&[vec![0.5, 0.6]]).unwrap();
        assert!(poly_cross_entropy(&bad, &y, 1.0, 1.0).is_err());
    }

    #[test]
    fn poly_clamps_zero_true_probability() {
        let y = LabelMatrix::from_classes(&[1]).unwrap();
        let p = Tensor2D::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let v = poly_cross_entropy(&p, &y, 1.0, 1.0).unwrap();
        assert!((v - (-(PROB_FLOOR.ln()) + 1.0)).abs() < 1e-12);
    }
}
