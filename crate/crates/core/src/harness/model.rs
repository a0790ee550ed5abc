use rand_distr::{Distribution, StandardNormal};

use super::rng;
use crate::error::{Error, Result};
use crate::linalg::Tensor2D;
use crate::soup::ParamVector;

/// Bias initialisation scale relative to the weights.
const BIAS_SCALE: f64 = 0.1;

/// Linear per-pixel embedder `z = xW + b`.
///
/// Parameters are `W` row-major (`d_in × d_out`) followed by `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    params: ParamVector,
    d_in: usize,
    d_out: usize,
}

impl ToyModel {
    pub fn param_len(d_in: usize, d_out: usize) -> usize {
        d_in * d_out + d_out
    }

    pub fn new_random(d_in: usize, d_out: usize, seed: u64) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        let mut r = rng(seed, 0x57d);
        let scale = 1.0 / (d_in as f64).sqrt();
        let values = (0..Self::param_len(d_in, d_out))
            .map(|k| {
                let v: f64 = StandardNormal.sample(&mut r);
                if k < d_in * d_out { v * scale } else { v * BIAS_SCALE }
            })
            .collect();
        Ok(Self { params: ParamVector::new("init", values), d_in, d_out })
    }

    pub fn from_params(params: ParamVector, d_in: usize, d_out: usize) -> Result<Self> {
        let expected = Self::param_len(d_in, d_out);
        if params.len() != expected {
            return Err(Error::Shape(format!(
                "`{}` has {} parameters; a {d_in}x{d_out} model needs {expected}",
                params.tag,
                params.len()
            )));
        }
        if let Some(k) = params.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("parameter {k} of `{}` is not finite", params.tag)));
        }
        Ok(Self { params, d_in, d_out })
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn into_params(self) -> ParamVector {
        self.params
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    fn weights(&self) -> &[f64] {
        &self.params.values[..self.d_in * self.d_out]
    }

    fn bias(&self) -> &[f64] {
        &self.params.values[self.d_in * self.d_out..]
    }

    pub fn forward(&self, x: &Tensor2D) -> Result<Tensor2D> {
        if x.cols() != self.d_in {
            return Err(Error::Shape(format!("input has {} features, model expects {}", x.cols(), self.d_in)));
        }
        let w = Tensor2D::from_vec(self.d_in, self.d_out, self.weights().to_vec())?;
        let mut z = x.matmul(&w)?;
        let b = self.bias();
        for i in 0..z.rows() {
            z.row_mut(i).iter_mut().zip(b).for_each(|(v, bj)| *v += bj);
        }
        Ok(z)
    }

    /// Parameter gradient from the gradient `dz` of the outputs: `Xᵀ dz` then column sums.
    pub fn backward(&self, x: &Tensor2D, dz: &Tensor2D) -> Result<Vec<f64>> {
        if dz.shape() != (x.rows(), self.d_out) {
            return Err(Error::Shape(format!(
                "output gradient is {}x{}, expected {}x{}",
                dz.rows(),
                dz.cols(),
                x.rows(),
                self.d_out
            )));
        }
        let mut grad = x.transpose().matmul(dz)?.into_data();
        grad.extend((0..self.d_out).map(|j| (0..dz.rows()).map(|i| dz.get(i, j)).sum::<f64>()));
        Ok(grad)
    }

    /// One descent step `θ ← θ − lr·g`.
    pub fn step(&mut self, grad: &[f64], lr: f64) {
        self.params.values.iter_mut().zip(grad).for_each(|(p, g)| *p -= lr * g);
    }
}
