use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};

use super::rng;
use super::sequence::{Sequence, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::linalg::{dot, l2_normalize_rows, norm, Tensor2D};
use crate::pixel_losses::PixelLogits;
use crate::repr_loss::Representation;

/// Length of the class offset added to every teacher embedding.
const CLASS_OFFSET: f64 = 2.0;
/// Weight of the pixel's own embedding when mixing with the class centroid.
const MEMORY_MIX: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeacherMode {
    /// Each frame embedded on its own.
    PerFrame,
    /// Embeddings pulled toward class centroids pooled over every frame.
    InfiniteMemory,
}

impl TeacherMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TeacherMode::PerFrame => "per-frame",
            TeacherMode::InfiniteMemory => "infinite-memory",
        }
    }
}

impl FromStr for TeacherMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-frame" => Ok(TeacherMode::PerFrame),
            "infinite-memory" => Ok(TeacherMode::InfiniteMemory),
            other => Err(Error::invalid(format!("teacher mode `{other}`; expected per-frame or infinite-memory"))),
        }
    }
}

/// Fixed random linear embedder with a class-dependent offset.
#[derive(Debug, Clone, PartialEq)]
pub struct Teacher {
    projection: Tensor2D,
    /// Unit, mutually orthogonal class directions.
    offsets: [Vec<f64>; 2],
}

impl Teacher {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid("teacher dimension must be at least 2"));
        }
        let mut r = rng(seed, 0x7eac);
        let scale = 1.0 / (FEATURE_DIM as f64).sqrt();
        let projection = Tensor2D::from_fn(FEATURE_DIM, dim, |_, _| {
            let v: f64 = StandardNormal.sample(&mut r);
            v * scale
        });
        let mut draw = || -> Vec<f64> { (0..dim).map(|_| StandardNormal.sample(&mut r)).collect() };
        let mut o0 = draw();
        let n0 = norm(&o0);
        o0.iter_mut().for_each(|v| *v /= n0);
        let mut o1 = draw();
        let along = dot(&o0, &o1);
        o1.iter_mut().zip(&o0).for_each(|(v, u)| *v -= along * u);
        let n1 = norm(&o1);
        o1.iter_mut().for_each(|v| *v /= n1);
        Ok(Self { projection, offsets: [o0, o1] })
    }

    pub fn dim(&self) -> usize {
        self.projection.cols()
    }

    fn embed_frame(&self, features: &Tensor2D, classes: &[u8]) -> Result<Tensor2D> {
        let mut z = features.matmul(&self.projection)?;
        for (i, &c) in classes.iter().enumerate() {
            for (v, o) in z.row_mut(i).iter_mut().zip(&self.offsets[c as usize]) {
                *v += CLASS_OFFSET * o;
            }
        }
        Ok(z)
    }

    /// Raw embeddings for every frame of `seq`.
    pub fn embed(&self, seq: &Sequence, mode: TeacherMode) -> Result<Vec<Tensor2D>> {
        let mut frames = seq
            .features
            .iter()
            .zip(&seq.masks)
            .map(|(f, m)| self.embed_frame(f, m.values()))
            .collect::<Result<Vec<_>>>()?;
        if mode == TeacherMode::InfiniteMemory {
            let dim = self.dim();
            let mut centroids = [vec![0.0; dim], vec![0.0; dim]];
            let mut counts = [0usize; 2];
            for (z, m) in frames.iter().zip(&seq.masks) {
                for (i, &c) in m.values().iter().enumerate() {
                    counts[c as usize] += 1;
                    centroids[c as usize].iter_mut().zip(z.row(i)).for_each(|(a, &v)| *a += v);
                }
            }
            for (centroid, &count) in centroids.iter_mut().zip(&counts) {
                centroid.iter_mut().for_each(|a| *a /= count.max(1) as f64);
            }
            for (z, m) in frames.iter_mut().zip(&seq.masks) {
                for (i, &c) in m.values().iter().enumerate() {
                    for (v, &a) in z.row_mut(i).iter_mut().zip(&centroids[c as usize]) {
                        *v = MEMORY_MIX * *v + (1.0 - MEMORY_MIX) * a;
                    }
                }
            }
        }
        Ok(frames)
    }

    /// Two-class logits: cosine between the embedding and each class direction.
    pub fn logits(&self, z: &Tensor2D) -> Result<PixelLogits> {
        let unit = l2_normalize_rows(z)?;
        let values = Tensor2D::from_fn(unit.rows(), 2, |i, c| dot(unit.row(i), &self.offsets[c]));
        PixelLogits::new(values)
    }
}

/// Embeds a sequence with a freshly seeded teacher.
pub fn teacher_embed(seq: &Sequence, mode: TeacherMode, dim: usize, seed: u64) -> Result<Vec<Representation>> {
    let teacher = Teacher::new(dim, seed)?;
    Ok(teacher.embed(seq, mode)?.into_iter().map(Representation::new).collect())
}
