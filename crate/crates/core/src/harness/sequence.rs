use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::rng;
use crate::error::{Error, Result};
use crate::linalg::Tensor2D;
use crate::sampling::Mask;

/// Per-pixel input channels.
pub const FEATURE_NAMES: [&str; 4] = ["intensity", "x", "y", "contrast"];
pub const FEATURE_DIM: usize = FEATURE_NAMES.len();

const OBJECT_LEVEL: f64 = 0.7;
const BACKGROUND_LEVEL: f64 = 0.3;
const NOISE_SIGMA: f64 = 0.1;
/// Shape size relative to the shorter frame side.
const RADIUS_RANGE: (f64, f64) = (0.15, 0.3);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Disc,
    Square,
}

impl ShapeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ShapeKind::Disc => "disc",
            ShapeKind::Square => "square",
        }
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disc" => Ok(ShapeKind::Disc),
            "square" => Ok(ShapeKind::Square),
            other => Err(Error::invalid(format!("shape `{other}`; expected disc or square"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceConfig {
    pub seed: u64,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub shape: ShapeKind,
    /// Pixels travelled per frame.
    pub motion_step: f64,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self { seed: 0, frames: 5, height: 64, width: 64, shape: ShapeKind::Disc, motion_step: 2.0 }
    }
}

impl SequenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::invalid(format!("a sequence needs at least 2 frames, got {}", self.frames)));
        }
        if self.height < 16 || self.width < 16 {
            return Err(Error::invalid(format!("frames must be at least 16x16, got {}x{}", self.height, self.width)));
        }
        if !self.motion_step.is_finite() || self.motion_step < 0.0 {
            return Err(Error::invalid(format!("motion_step must be finite and non-negative, got {}", self.motion_step)));
        }
        Ok(())
    }
}

/// A moving shape: per-frame features (`h·w × FEATURE_DIM`) and masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub features: Vec<Tensor2D>,
    pub masks: Vec<Mask>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

/// Signed offset on a ring of circumference `period`, in `[-period/2, period/2)`.
fn wrap_offset(d: f64, period: f64) -> f64 {
    (d + 0.5 * period).rem_euclid(period) - 0.5 * period
}

/// Generates a deterministic sequence of a shape moving with wrap-around.
pub fn gen_sequence(cfg: &SequenceConfig) -> Result<Sequence> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = rng(cfg.seed, 0x5e9);
    let side = h.min(w) as f64;
    let radius = rng.random_range(RADIUS_RANGE.0..RADIUS_RANGE.1) * side;
    let (cy0, cx0) = (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64));
    let heading = rng.random_range(0.0..std::f64::consts::TAU);
    let (vy, vx) = (cfg.motion_step * heading.sin(), cfg.motion_step * heading.cos());
    // Equal-area square.
    let half_side = radius * std::f64::consts::PI.sqrt() / 2.0;
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");

    let mut features = Vec::with_capacity(cfg.frames);
    let mut masks = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        let cy = (cy0 + vy * t as f64).rem_euclid(h as f64);
        let cx = (cx0 + vx * t as f64).rem_euclid(w as f64);
        let mask = Mask::from_fn(h, w, |i, j| {
            let dy = wrap_offset(i as f64 + 0.5 - cy, h as f64);
            let dx = wrap_offset(j as f64 + 0.5 - cx, w as f64);
            match cfg.shape {
                ShapeKind::Disc => dx * dx + dy * dy <= radius * radius,
                ShapeKind::Square => dx.abs() <= half_side && dy.abs() <= half_side,
            }
        });

        let intensity: Vec<f64> = mask
            .values()
            .iter()
            .map(|&m| if m == 1 { OBJECT_LEVEL } else { BACKGROUND_LEVEL } + noise.sample(&mut rng))
            .collect();
        let local_mean = |i: usize, j: usize| {
            let mut sum = 0.0;
            for di in 0..3 {
                let r = (i + di).saturating_sub(1).min(h - 1);
                for dj in 0..3 {
                    let c = (j + dj).saturating_sub(1).min(w - 1);
                    sum += intensity[r * w + c];
                }
            }
            sum / 9.0
        };
        let feats = Tensor2D::from_fn(h * w, FEATURE_DIM, |p, k| {
            let (i, j) = (p / w, p % w);
            match k {
                0 => intensity[p],
                1 => 2.0 * (j as f64 + 0.5) / w as f64 - 1.0,
                2 => 2.0 * (i as f64 + 0.5) / h as f64 - 1.0,
                _ => intensity[p] - local_mean(i, j),
            }
        });
        features.push(feats);
        masks.push(mask);
    }
    Ok(Sequence { features, masks })
}
