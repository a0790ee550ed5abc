//! `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, no sections or nesting.
//! Unknown and repeated keys are rejected.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::harness::{SamplingStrategy, SequenceConfig, ShapeKind, SoupMetric, TeacherMode};
use crate::pixel_losses::KlDirection;

/// One parsed `key = value` line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Splits text into entries. `origin` names the source in error messages.
pub fn parse_entries(text: &str, origin: &str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
            path: origin.to_string(),
            line,
            msg: format!("expected `key = value`, got `{content}`"),
        })?;
        let key = key.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.') {
            return Err(Error::Config { path: origin.to_string(), line, msg: format!("invalid key `{key}`") });
        }
        out.push(Entry { line, key: key.to_string(), value: value.trim().to_string() });
    }
    Ok(out)
}

/// Loss hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// Weight of the teacher correlation in the target, in `[0, 1]`.
    pub omega: f64,
    /// Logit distillation temperature.
    pub tau: f64,
    /// Poly-1 coefficient.
    pub epsilon_poly: f64,
    /// Dilation radius of the Sobel boundary.
    pub boundary_radius: usize,
    /// Maximum sampled pixels per frame.
    pub pixel_cap: usize,
    /// Fraction of hardest pixels kept by the bootstrapped cross-entropy.
    pub bootstrap_top_p: f64,
    pub kl_direction: KlDirection,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            omega: 0.95,
            tau: 0.1,
            epsilon_poly: 1.0,
            boundary_radius: 1,
            pixel_cap: 1024,
            bootstrap_top_p: 1.0,
            kl_direction: KlDirection::StudentTeacher,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.omega) {
            return Err(Error::invalid(format!("omega must lie in [0, 1], got {}", self.omega)));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::invalid(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.epsilon_poly.is_finite() && self.epsilon_poly >= 0.0) {
            return Err(Error::invalid(format!("epsilon_poly must be non-negative, got {}", self.epsilon_poly)));
        }
        if self.boundary_radius < 1 {
            return Err(Error::invalid("boundary_radius must be at least 1"));
        }
        if self.pixel_cap < 2 {
            return Err(Error::invalid("pixel_cap must be at least 2"));
        }
        if !(self.bootstrap_top_p > 0.0 && self.bootstrap_top_p <= 1.0) {
            return Err(Error::invalid(format!("bootstrap_top_p must lie in (0, 1], got {}", self.bootstrap_top_p)));
        }
        Ok(())
    }
}

/// Everything one `train` invocation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub loss: LossConfig,
    pub sequence: SequenceConfig,
    pub steps: usize,
    pub learning_rate: f64,
    pub sampling: SamplingStrategy,
    pub teacher_mode: TeacherMode,
    /// Student embedding size; the first two coordinates double as logits.
    pub embed_dim: usize,
    pub teacher_dim: usize,
    /// Feature-grid stride relative to the mask.
    pub stride: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            sequence: SequenceConfig::default(),
            steps: 500,
            learning_rate: 0.05,
            sampling: SamplingStrategy::Boundary,
            teacher_mode: TeacherMode::InfiniteMemory,
            embed_dim: 8,
            teacher_dim: 16,
            stride: 2,
        }
    }
}

fn parse_value<T: FromStr>(entry: &Entry, origin: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    entry.value.parse::<T>().map_err(|e| Error::Config {
        path: origin.to_string(),
        line: entry.line,
        msg: format!("bad value `{}` for `{}`: {e}", entry.value, entry.key),
    })
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "frames",
        "height",
        "width",
        "shape",
        "motion_step",
        "omega",
        "tau",
        "epsilon_poly",
        "boundary_radius",
        "pixel_cap",
        "bootstrap_top_p",
        "kl_direction",
        "steps",
        "learning_rate",
        "sampling",
        "teacher_mode",
        "embed_dim",
        "teacher_dim",
        "stride",
    ];

    /// Parses config text over the defaults.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen: Vec<&str> = Vec::new();
        let entries = parse_entries(text, origin)?;
        for e in &entries {
            if seen.contains(&e.key.as_str()) {
                return Err(Error::Config { path: origin.into(), line: e.line, msg: format!("duplicate key `{}`", e.key) });
            }
            seen.push(&e.key);
            cfg.apply(e, origin)?;
        }
        cfg.validate().map_err(|err| Error::Config { path: origin.into(), line: 0, msg: err.to_string() })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Sets one key; unknown keys are an error.
    pub fn apply(&mut self, e: &Entry, origin: &str) -> Result<()> {
        match e.key.as_str() {
            "seed" => self.sequence.seed = parse_value(e, origin)?,
            "frames" => self.sequence.frames = parse_value(e, origin)?,
            "height" => self.sequence.height = parse_value(e, origin)?,
            "width" => self.sequence.width = parse_value(e, origin)?,
            "shape" => self.sequence.shape = parse_value::<ShapeKind>(e, origin)?,
            "motion_step" => self.sequence.motion_step = parse_value(e, origin)?,
            "omega" => self.loss.omega = parse_value(e, origin)?,
            "tau" => self.loss.tau = parse_value(e, origin)?,
            "epsilon_poly" => self.loss.epsilon_poly = parse_value(e, origin)?,
            "boundary_radius" => self.loss.boundary_radius = parse_value(e, origin)?,
            "pixel_cap" => self.loss.pixel_cap = parse_value(e, origin)?,
            "bootstrap_top_p" => self.loss.bootstrap_top_p = parse_value(e, origin)?,
            "kl_direction" => self.loss.kl_direction = parse_value::<KlDirection>(e, origin)?,
            "steps" => self.steps = parse_value(e, origin)?,
            "learning_rate" => self.learning_rate = parse_value(e, origin)?,
            "sampling" => self.sampling = parse_value::<SamplingStrategy>(e, origin)?,
            "teacher_mode" => self.teacher_mode = parse_value::<TeacherMode>(e, origin)?,
            "embed_dim" => self.embed_dim = parse_value(e, origin)?,
            "teacher_dim" => self.teacher_dim = parse_value(e, origin)?,
            "stride" => self.stride = parse_value(e, origin)?,
            other => {
                return Err(Error::Config {
                    path: origin.into(),
                    line: e.line,
                    msg: format!("unknown key `{other}`"),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.sequence.validate()?;
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::invalid(format!("learning_rate must be non-negative, got {}", self.learning_rate)));
        }
        if self.embed_dim < 2 {
            return Err(Error::invalid("embed_dim must be at least 2 (two logit coordinates)"));
        }
        if self.teacher_dim < 2 {
            return Err(Error::invalid("teacher_dim must be at least 2"));
        }
        if self.stride == 0 || !self.sequence.height.is_multiple_of(self.stride) || !self.sequence.width.is_multiple_of(self.stride) {
            return Err(Error::invalid(format!(
                "stride {} must divide the {}x{} frame",
                self.stride, self.sequence.height, self.sequence.width
            )));
        }
        if self.sequence.height / self.stride < 3 || self.sequence.width / self.stride < 3 {
            return Err(Error::invalid("feature grid must be at least 3x3"));
        }
        Ok(())
    }

    /// Renders the config in the same `key = value` form `parse` reads.
    pub fn to_text(&self) -> String {
        let s = &self.sequence;
        let l = &self.loss;
        let kl = match l.kl_direction {
            KlDirection::StudentTeacher => "student-teacher",
            KlDirection::TeacherStudent => "teacher-student",
        };
        [
            format!("seed = {}", s.seed),
            format!("frames = {}", s.frames),
            format!("height = {}", s.height),
            format!("width = {}", s.width),
            format!("shape = {}", s.shape.as_str()),
            format!("motion_step = {:?}", s.motion_step),
            format!("omega = {:?}", l.omega),
            format!("tau = {:?}", l.tau),
            format!("epsilon_poly = {:?}", l.epsilon_poly),
            format!("boundary_radius = {}", l.boundary_radius),
            format!("pixel_cap = {}", l.pixel_cap),
            format!("bootstrap_top_p = {:?}", l.bootstrap_top_p),
            format!("kl_direction = {kl}"),
            format!("steps = {}", self.steps),
            format!("learning_rate = {:?}", self.learning_rate),
            format!("sampling = {}", self.sampling.as_str()),
            format!("teacher_mode = {}", self.teacher_mode.as_str()),
            format!("embed_dim = {}", self.embed_dim),
            format!("teacher_dim = {}", self.teacher_dim),
            format!("stride = {}", self.stride),
        ]
        .join("\n")
            + "\n"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoupMode {
    Greedy,
    Uniform,
}

impl FromStr for SoupMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(SoupMode::Greedy),
            "uniform" => Ok(SoupMode::Uniform),
            other => Err(Error::invalid(format!("soup mode `{other}`; expected greedy or uniform"))),
        }
    }
}

/// A soup recipe: `metric`, `mode`, optional run `config`, and one
/// `ingredient = <tag> <path>` line per checkpoint.
///
/// Relative paths are kept as written; callers resolve them.
#[derive(Debug, Clone, PartialEq)]
pub struct SoupManifest {
    pub metric: SoupMetric,
    pub mode: SoupMode,
    pub config: Option<PathBuf>,
    pub ingredients: Vec<(String, PathBuf)>,
}

impl SoupManifest {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Config { path: origin.to_string(), line, msg };
        let mut metric = None;
        let mut mode = None;
        let mut config = None;
        let mut ingredients: Vec<(String, PathBuf)> = Vec::new();
        for e in parse_entries(text, origin)? {
            let once = |set: bool| if set { Err(err(e.line, format!("duplicate key `{}`", e.key))) } else { Ok(()) };
            match e.key.as_str() {
                "metric" => {
                    once(metric.is_some())?;
                    metric = Some(parse_value::<SoupMetric>(&e, origin)?);
                }
                "mode" => {
                    once(mode.is_some())?;
                    mode = Some(parse_value::<SoupMode>(&e, origin)?);
                }
                "config" => {
                    once(config.is_some())?;
                    if e.value.is_empty() {
                        return Err(err(e.line, "empty config path".into()));
                    }
                    config = Some(PathBuf::from(&e.value));
                }
                "ingredient" => {
                    let (tag, path) = e
                        .value
                        .split_once(char::is_whitespace)
                        .map(|(t, p)| (t, p.trim()))
                        .filter(|(_, p)| !p.is_empty())
                        .ok_or_else(|| err(e.line, format!("expected `ingredient = <tag> <path>`, got `{}`", e.value)))?;
                    if ingredients.iter().any(|(t, _)| t == tag) {
                        return Err(err(e.line, format!("duplicate ingredient tag `{tag}`")));
                    }
                    ingredients.push((tag.to_string(), PathBuf::from(path)));
                }
                other => return Err(err(e.line, format!("unknown key `{other}`"))),
            }
        }
        if ingredients.is_empty() {
            return Err(err(0, "no ingredients".into()));
        }
        Ok(Self {
            metric: metric.unwrap_or(SoupMetric::ProbeAcc),
            mode: mode.unwrap_or(SoupMode::Greedy),
            config,
            ingredients,
        })
    }
}
