use std::str::FromStr;

use super::model::ToyModel;
use super::probe::linear_probe_accuracy;
use super::rng;
use super::sequence::{gen_sequence, FEATURE_DIM};
use super::teacher::Teacher;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::format::fmt_g12;
use crate::linalg::Tensor2D;
use crate::pixel_losses::{kl_logit_loss_and_grad, poly_cross_entropy_logits_and_grad, PixelLogits};
use crate::repr_loss::{
    correlation, interpolate_target, label_correlation, pixel_mutual_information, repr_loss, repr_loss_and_grad,
    CorrelationMatrix, LabelMatrix, Representation,
};
use crate::sampling::{boundary_band, select_pixels, uniform_indices};
use crate::soup::ParamVector;

pub const CSV_HEADER: [&str; 7] = ["step", "loss_total", "loss_repr", "loss_logit", "loss_xe", "probe_acc", "mi_bits"];

/// Which pixels feed the training losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingStrategy {
    /// The dilated mask boundary.
    Boundary,
    /// As many pixels as the boundary provides, drawn uniformly from the grid.
    Random,
}

impl SamplingStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplingStrategy::Boundary => "boundary",
            SamplingStrategy::Random => "random",
        }
    }
}

impl FromStr for SamplingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "boundary" => Ok(SamplingStrategy::Boundary),
            "random" => Ok(SamplingStrategy::Random),
            other => Err(Error::invalid(format!("sampling `{other}`; expected boundary or random"))),
        }
    }
}

/// Selection metric for soups, higher is better.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoupMetric {
    ProbeAcc,
    NegLoss,
}

impl FromStr for SoupMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probe_acc" => Ok(SoupMetric::ProbeAcc),
            "neg_loss" => Ok(SoupMetric::NegLoss),
            other => Err(Error::invalid(format!("metric `{other}`; expected probe_acc or neg_loss"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRecord {
    pub step: usize,
    pub loss_total: f64,
    pub loss_repr: f64,
    pub loss_logit: f64,
    pub loss_xe: f64,
    /// Probe accuracy on the boundary pixels.
    pub probe_acc: f64,
    /// Order-2 mutual information between student and teacher on the boundary pixels.
    pub mi_bits: f64,
    /// Representation loss on the boundary pixels, whatever the sampling strategy.
    pub eval_repr: f64,
}

impl TrainRecord {
    fn is_finite(&self) -> bool {
        [self.loss_total, self.loss_repr, self.loss_logit, self.loss_xe, self.probe_acc, self.mi_bits, self.eval_repr]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<TrainRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first(&self) -> Option<&TrainRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&TrainRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::invalid(format!("csv: {e}"));
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        for r in &self.records {
            let mut row = vec![r.step.to_string()];
            row.extend(
                [r.loss_total, r.loss_repr, r.loss_logit, r.loss_xe, r.probe_acc, r.mi_bits].iter().map(|&v| fmt_g12(v)),
            );
            w.write_record(&row).map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| Error::invalid(format!("csv: {e}")))
    }
}

/// First step whose boundary representation loss is at or below `threshold`.
pub fn steps_to_threshold(history: &TrainHistory, threshold: f64) -> Option<usize> {
    history.records.iter().find(|r| r.eval_repr <= threshold).map(|r| r.step)
}

/// Precomputed rows and targets for one pixel set of one frame.
#[derive(Debug, Clone)]
struct PixelBatch {
    x: Tensor2D,
    y: LabelMatrix,
    target: CorrelationMatrix,
    teacher_z: Tensor2D,
    teacher_logits: PixelLogits,
}

impl PixelBatch {
    fn gather(
        idx: &[usize],
        features: &Tensor2D,
        teacher_z: &Tensor2D,
        grid: &[usize],
        labels: &LabelMatrix,
        teacher: &Teacher,
        omega: f64,
    ) -> Result<Self> {
        let full: Vec<usize> = idx.iter().map(|&k| grid[k]).collect();
        let teacher_z = teacher_z.select_rows(&full)?;
        let y = labels.select(idx)?;
        let target = interpolate_target(
            &correlation(&Representation::new(teacher_z.clone()))?,
            &label_correlation(&y),
            omega,
        )?;
        Ok(Self {
            x: features.select_rows(&full)?,
            y,
            target,
            teacher_logits: teacher.logits(&teacher_z)?,
            teacher_z,
        })
    }
}

#[derive(Debug, Clone)]
struct FrameBatches {
    train: PixelBatch,
    eval: PixelBatch,
}

/// Per-objective losses averaged over frames.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub repr: f64,
    pub logit: f64,
    pub xe: f64,
}

/// Data, teacher targets and pixel sets of one run, fixed across steps.
#[derive(Debug, Clone)]
pub struct Experiment {
    cfg: RunConfig,
    frames: Vec<FrameBatches>,
}

/// Seed of frame `t`'s boundary subsample.
fn frame_seed(seed: u64, t: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(t as u64)
}

impl Experiment {
    pub fn prepare(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let seq = gen_sequence(&cfg.sequence)?;
        let seed = cfg.sequence.seed;
        let teacher = Teacher::new(cfg.teacher_dim, seed)?;
        let teacher_z = teacher.embed(&seq, cfg.teacher_mode)?;
        let s = cfg.stride;
        let (h, w) = (cfg.sequence.height, cfg.sequence.width);
        let (gh, gw) = (h / s, w / s);
        let grid: Vec<usize> = (0..gh * gw).map(|k| (k / gw) * s * w + (k % gw) * s).collect();

        let mut frames = Vec::with_capacity(seq.len());
        for (t, (features, mask)) in seq.features.iter().zip(&seq.masks).enumerate() {
            let small = mask.downsample(s)?;
            let labels = LabelMatrix::from_classes(small.values())?;
            let band = boundary_band(&small, cfg.loss.boundary_radius)?;
            let eval_idx = select_pixels(&band, cfg.loss.pixel_cap, frame_seed(seed, t))?.indices;
            let train_idx = match cfg.sampling {
                SamplingStrategy::Boundary => eval_idx.clone(),
                SamplingStrategy::Random => uniform_indices(gh * gw, eval_idx.len(), &mut rng(seed, 0x5a3 + t as u64)),
            };
            let gather =
                |idx: &[usize]| PixelBatch::gather(idx, features, &teacher_z[t], &grid, &labels, &teacher, cfg.loss.omega);
            frames.push(FrameBatches { train: gather(&train_idx)?, eval: gather(&eval_idx)? });
        }
        Ok(Self { cfg: cfg.clone(), frames })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn initial_model(&self) -> Result<ToyModel> {
        ToyModel::new_random(FEATURE_DIM, self.cfg.embed_dim, self.cfg.sequence.seed)
    }

    pub fn model_from_params(&self, params: ParamVector) -> Result<ToyModel> {
        ToyModel::from_params(params, FEATURE_DIM, self.cfg.embed_dim)
    }

    /// Training losses and their parameter gradient, both averaged over frames.
    pub fn loss_and_grad(&self, model: &ToyModel) -> Result<(LossParts, Vec<f64>)> {
        let l = &self.cfg.loss;
        let mut parts = LossParts::default();
        let mut grad = vec![0.0; model.params().len()];
        for f in &self.frames {
            let b = &f.train;
            let z = model.forward(&b.x)?;
            let logits = PixelLogits::new(Tensor2D::from_fn(z.rows(), 2, |i, c| z.get(i, c)))?;
            let (xe, d_xe) = poly_cross_entropy_logits_and_grad(&logits, &b.y, l.epsilon_poly, l.bootstrap_top_p)?;
            let (kl, d_kl) = kl_logit_loss_and_grad(&logits, &b.teacher_logits, l.tau, l.kl_direction)?;
            let (repr, mut dz) = repr_loss_and_grad(&z, &b.target)?;
            for i in 0..dz.rows() {
                for c in 0..2 {
                    dz.set(i, c, dz.get(i, c) + d_xe.get(i, c) + d_kl.get(i, c));
                }
            }
            model.backward(&b.x, &dz)?.iter().zip(grad.iter_mut()).for_each(|(g, acc)| *acc += g);
            parts.xe += xe;
            parts.logit += kl.value;
            parts.repr += repr;
        }
        let n = self.frames.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        parts.xe /= n;
        parts.logit /= n;
        parts.repr /= n;
        parts.total = parts.xe + parts.logit + parts.repr;
        Ok((parts, grad))
    }

    /// Every history metric for `model`, labelled `step`.
    pub fn evaluate(&self, model: &ToyModel, step: usize) -> Result<TrainRecord> {
        let (parts, _) = self.loss_and_grad(model)?;
        let (mut probe, mut mi, mut eval_repr) = (0.0, 0.0, 0.0);
        for f in &self.frames {
            let b = &f.eval;
            let z = model.forward(&b.x)?;
            probe += linear_probe_accuracy(&Representation::normalized(&z)?, &b.y)?;
            mi += pixel_mutual_information(&z, &b.teacher_z)?;
            eval_repr += repr_loss(&Representation::new(z), &b.target)?;
        }
        let n = self.frames.len() as f64;
        Ok(TrainRecord {
            step,
            loss_total: parts.total,
            loss_repr: parts.repr,
            loss_logit: parts.logit,
            loss_xe: parts.xe,
            probe_acc: probe / n,
            mi_bits: mi / n,
            eval_repr: eval_repr / n,
        })
    }

    /// Soup selection score of a parameter vector.
    pub fn metric(&self, params: &ParamVector, metric: SoupMetric) -> Result<f64> {
        let record = self.evaluate(&self.model_from_params(params.clone())?, 0)?;
        Ok(match metric {
            SoupMetric::ProbeAcc => record.probe_acc,
            SoupMetric::NegLoss => -record.loss_total,
        })
    }

    /// Full-batch gradient descent from `model`, recording before every update.
    pub fn run(&self, mut model: ToyModel) -> Result<(TrainHistory, ToyModel)> {
        let mut history = TrainHistory { records: Vec::with_capacity(self.cfg.steps) };
        for step in 0..self.cfg.steps {
            let record = self.evaluate(&model, step).map_err(|e| match e {
                Error::DegenerateRow { .. } | Error::NonFinite { .. } => Error::Diverged(step),
                other => other,
            })?;
            if !record.is_finite() {
                return Err(Error::Diverged(step));
            }
            history.records.push(record);
            let (_, grad) = self.loss_and_grad(&model)?;
            model.step(&grad, self.cfg.learning_rate);
        }
        Ok((history, model))
    }
}

/// Trains a fresh student and returns its history and final parameters.
pub fn train_model(cfg: &RunConfig) -> Result<(TrainHistory, ToyModel)> {
    let exp = Experiment::prepare(cfg)?;
    let init = exp.initial_model()?;
    exp.run(init)
}

pub fn train(cfg: &RunConfig) -> Result<TrainHistory> {
    train_model(cfg).map(|(h, _)| h)
}
