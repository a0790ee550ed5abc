//! `corrkd` command line. Exit codes: 0 success, 1 usage error, 2 data or
//! validation error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{LossConfig, RunConfig, SoupManifest, SoupMode};
use crate::entropy::{mutual_information, normalize_trace, renyi_entropy, GramNpd};
use crate::error::{Error, Result};
use crate::format::fmt_g12;
use crate::harness::{gen_sequence, train_model, Experiment, SamplingStrategy, TeacherMode};
use crate::linalg::io::{read_tensor, write_atomic, write_tensor, write_tensor_as, DType};
use crate::linalg::Tensor2D;
use crate::pixel_losses::{kl_logit_loss_and_grad, poly_cross_entropy_logits_and_grad, KlDirection, PixelLogits};
use crate::repr_loss::{
    correlation, gradient_check, interpolate_target, label_correlation, repr_loss, CorrelationMatrix, LabelMatrix,
    Representation,
};
use crate::sampling::{boundary_band, select_pixels, Mask};
use crate::soup::{greedy_soup, uniform_soup, ParamVector};

/// Relative error below which `grad-check` succeeds.
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "corrkd", version, about = "Correlation distillation losses, entropy estimators and a toy harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Matrix-based Rényi entropy of a Gram matrix.
    Entropy(EntropyArgs),
    /// Mutual information between two Gram matrices over the same samples.
    Mi(MiArgs),
    /// Representation loss, and logit losses when logits are given.
    Loss(LossArgs),
    /// Compares the analytic loss gradient with central differences.
    GradCheck(GradCheckArgs),
    /// Dilated Sobel boundary of a mask and a capped pixel sample from it.
    Boundary(BoundaryArgs),
    /// Averages checkpoints listed in a manifest.
    Soup(SoupArgs),
    /// Runs the synthetic experiment and writes its history as CSV.
    Train(TrainArgs),
    /// Dumps the synthetic sequence of a run config.
    Gen(GenArgs),
}

#[derive(Debug, Args)]
struct EntropyArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    /// Treat the input as per-sample features rather than a Gram matrix.
    #[arg(long)]
    features: bool,
}

#[derive(Debug, Args)]
struct MiArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[arg(long)]
    features: bool,
}

/// Loss settings that override the config file.
#[derive(Debug, Args, Default)]
struct LossOverrides {
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    top_p: Option<f64>,
    #[arg(long)]
    kl_direction: Option<KlDirection>,
}

impl LossOverrides {
    fn apply(&self, l: &mut LossConfig) {
        if let Some(v) = self.omega {
            l.omega = v;
        }
        if let Some(v) = self.tau {
            l.tau = v;
        }
        if let Some(v) = self.epsilon {
            l.epsilon_poly = v;
        }
        if let Some(v) = self.top_p {
            l.bootstrap_top_p = v;
        }
        if let Some(v) = self.kl_direction {
            l.kl_direction = v;
        }
    }
}

#[derive(Debug, Args)]
struct LossArgs {
    /// Student features, N×d.
    #[arg(long)]
    zs: PathBuf,
    /// Explicit target correlation, N×N.
    #[arg(long, conflicts_with = "zt")]
    target: Option<PathBuf>,
    /// Teacher features, N×d_t.
    #[arg(long)]
    zt: Option<PathBuf>,
    /// Labels, N×1 classes or N×2 one-hot.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, requires = "labels")]
    student_logits: Option<PathBuf>,
    #[arg(long, requires = "student_logits")]
    teacher_logits: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: LossOverrides,
}

#[derive(Debug, Args)]
struct GradCheckArgs {
    #[arg(long)]
    zs: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
}

#[derive(Debug, Args)]
struct BoundaryArgs {
    #[arg(long)]
    mask: PathBuf,
    #[arg(long, default_value_t = 1)]
    radius: usize,
    #[arg(long, default_value_t = 1024)]
    cap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Downsampling stride applied to the mask first.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Boundary band as a u8 mask.
    #[arg(long)]
    out: PathBuf,
    /// Selected flat indices as a k×1 tensor.
    #[arg(long)]
    indices: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SoupArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    sampling: Option<SamplingStrategy>,
    #[arg(long)]
    teacher_mode: Option<TeacherMode>,
    #[command(flatten)]
    overrides: LossOverrides,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.sequence.seed = s;
        }
        if let Some(s) = self.steps {
            cfg.steps = s;
        }
        if let Some(s) = self.sampling {
            cfg.sampling = s;
        }
        if let Some(m) = self.teacher_mode {
            cfg.teacher_mode = m;
        }
        self.overrides.apply(&mut cfg.loss);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// History CSV.
    #[arg(long)]
    out: PathBuf,
    /// Final parameters as a 1×P tensor.
    #[arg(long)]
    params_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

/// Parses `argv` (program name first), runs the subcommand and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let mut out = String::new();
    let result = dispatch(cli.command, &mut out);
    print!("{out}");
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(command: Command, out: &mut String) -> Result<i32> {
    match command {
        Command::Entropy(a) => {
            let g = read_gram(&a.input, a.features)?;
            line(out, &fmt_g12(renyi_entropy(&g, a.alpha)?.bits));
        }
        Command::Mi(a) => {
            let ga = read_gram(&a.a, a.features)?;
            let gb = read_gram(&a.b, a.features)?;
            line(out, &fmt_g12(mutual_information(&ga, &gb, a.alpha)?.bits));
        }
        Command::Loss(a) => loss(a, out)?,
        Command::GradCheck(a) => {
            let zs = read_tensor(&a.zs)?;
            let target = CorrelationMatrix::from_matrix(read_tensor(&a.target)?)?;
            let err = gradient_check(&zs, &target, a.h)?;
            line(out, &fmt_g12(err));
            if err.is_nan() || err >= GRAD_CHECK_TOLERANCE {
                eprintln!("error: max relative error {} exceeds {}", fmt_g12(err), fmt_g12(GRAD_CHECK_TOLERANCE));
                return Ok(2);
            }
        }
        Command::Boundary(a) => boundary(a, out)?,
        Command::Soup(a) => soup(a, out)?,
        Command::Train(a) => {
            let cfg = a.run.resolve()?;
            let (history, model) = train_model(&cfg)?;
            let csv = history.to_csv()?;
            let params = model.into_params();
            write_atomic(&a.out, &csv)?;
            if let Some(p) = &a.params_out {
                write_tensor(p, &params_tensor(&params)?)?;
            }
            if let Some(r) = history.last() {
                let _ = writeln!(
                    out,
                    "steps {} loss_total {} probe_acc {} mi_bits {}",
                    history.len(),
                    fmt_g12(r.loss_total),
                    fmt_g12(r.probe_acc),
                    fmt_g12(r.mi_bits)
                );
            }
        }
        Command::Gen(a) => {
            let cfg = a.run.resolve()?;
            let seq = gen_sequence(&cfg.sequence)?;
            std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
            for (t, (f, m)) in seq.features.iter().zip(&seq.masks).enumerate() {
                write_tensor_as(a.out_dir.join(format!("mask_{t:03}.rdt")), &m.to_tensor(), DType::U8)?;
                write_tensor(a.out_dir.join(format!("features_{t:03}.rdt")), f)?;
            }
            let _ = writeln!(out, "frames {}", seq.len());
        }
    }
    Ok(0)
}

fn line(out: &mut String, s: &str) {
    out.push_str(s);
    out.push('\n');
}

fn read_gram(path: &Path, features: bool) -> Result<GramNpd> {
    let t = read_tensor(path)?;
    if features {
        GramNpd::from_features(&t)
    } else {
        normalize_trace(&t)
    }
}

fn read_labels(path: &Path) -> Result<LabelMatrix> {
    let t = read_tensor(path)?;
    match t.cols() {
        1 => {
            let classes = t
                .data()
                .iter()
                .map(|&v| match v {
                    0.0 => Ok(0),
                    1.0 => Ok(1),
                    other => Err(Error::invalid(format!("{}: class labels must be 0 or 1, got {other}", path.display()))),
                })
                .collect::<Result<Vec<u8>>>()?;
            LabelMatrix::from_classes(&classes)
        }
        2 => LabelMatrix::new(t),
        c => Err(Error::Shape(format!("{}: labels need 1 or 2 columns, got {c}", path.display()))),
    }
}

fn params_tensor(p: &ParamVector) -> Result<Tensor2D> {
    Tensor2D::from_vec(1, p.len(), p.values.clone())
}

fn loss(a: LossArgs, out: &mut String) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?.loss,
        None => LossConfig::default(),
    };
    a.overrides.apply(&mut cfg);
    cfg.validate()?;

    let zs = read_tensor(&a.zs)?;
    let labels = a.labels.as_deref().map(read_labels).transpose()?;
    let target = match (&a.target, &a.zt) {
        (Some(t), _) => CorrelationMatrix::from_matrix(read_tensor(t)?)?,
        (None, zt) => {
            let teacher = zt.as_deref().map(|p| -> Result<_> {
                correlation(&Representation::new(read_tensor(p)?))
            });
            let teacher = teacher.transpose()?;
            let label_c = labels.as_ref().map(label_correlation);
            match (teacher, label_c) {
                (Some(t), Some(y)) => interpolate_target(&t, &y, cfg.omega)?,
                (Some(t), None) if cfg.omega == 1.0 => t,
                (None, Some(y)) if cfg.omega == 0.0 => y,
                _ => {
                    return Err(Error::invalid(format!(
                        "omega {} needs --zt and --labels (or an explicit --target)",
                        cfg.omega
                    )))
                }
            }
        }
    };
    let repr = repr_loss(&Representation::new(zs), &target)?;
    let mut total = repr;
    let _ = writeln!(out, "repr_loss {}", fmt_g12(repr));

    if let (Some(path), Some(y)) = (&a.student_logits, &labels) {
        let student = PixelLogits::new(read_tensor(path)?)?;
        let (xe, _) = poly_cross_entropy_logits_and_grad(&student, y, cfg.epsilon_poly, cfg.bootstrap_top_p)?;
        total += xe;
        let _ = writeln!(out, "poly_xe {}", fmt_g12(xe));
        if let Some(tp) = &a.teacher_logits {
            let teacher = PixelLogits::new(read_tensor(tp)?)?;
            let (kl, _) = kl_logit_loss_and_grad(&student, &teacher, cfg.tau, cfg.kl_direction)?;
            total += kl.value;
            let _ = writeln!(out, "kl {}", fmt_g12(kl.value));
            if kl.saturated {
                eprintln!("warning: softmax saturated at tau {}", fmt_g12(cfg.tau));
            }
        }
    }
    let _ = writeln!(out, "total {}", fmt_g12(total));
    Ok(())
}

fn boundary(a: BoundaryArgs, out: &mut String) -> Result<()> {
    let mut mask = Mask::from_tensor(&read_tensor(&a.mask)?)?;
    if a.stride > 1 {
        mask = mask.downsample(a.stride)?;
    }
    let band = boundary_band(&mask, a.radius)?;
    let picked = select_pixels(&band, a.cap, a.seed)?;
    let indices = Tensor2D::from_vec(picked.len(), 1, picked.indices.iter().map(|&i| i as f64).collect())?;
    write_tensor_as(&a.out, &band.to_tensor(), DType::U8)?;
    if let Some(p) = &a.indices {
        write_tensor(p, &indices)?;
    }
    let _ = writeln!(out, "boundary_pixels {}", band.count());
    let _ = writeln!(out, "selected {} source {}", picked.len(), picked.source.as_str());
    Ok(())
}

fn soup(a: SoupArgs, out: &mut String) -> Result<()> {
    let text = std::fs::read_to_string(&a.manifest).map_err(|e| Error::io(&a.manifest, e))?;
    let manifest = SoupManifest::parse(&text, &a.manifest.display().to_string())?;
    let base = a.manifest.parent().unwrap_or(Path::new(""));
    let cfg = match &manifest.config {
        Some(p) => RunConfig::load(&base.join(p))?,
        None => RunConfig::default(),
    };
    let exp = Experiment::prepare(&cfg)?;
    let mut ingredients = Vec::with_capacity(manifest.ingredients.len());
    for (tag, path) in &manifest.ingredients {
        let p = ParamVector::new(tag.clone(), read_tensor(base.join(path))?.into_data());
        // Surface shape problems before the metric sees them.
        exp.model_from_params(p.clone())?;
        ingredients.push(p);
    }
    let score = |p: &ParamVector| exp.metric(p, manifest.metric).unwrap_or(f64::NAN);
    let (params, selected, metric) = match manifest.mode {
        SoupMode::Greedy => {
            let g = greedy_soup(&ingredients, score)?;
            let _ = writeln!(out, "best_individual {}", fmt_g12(g.best_individual));
            (g.soup, g.selected, g.metric)
        }
        SoupMode::Uniform => {
            let s = uniform_soup(&ingredients)?;
            let m = score(&s);
            if m.is_nan() {
                return Err(Error::NanMetric(s.tag));
            }
            (s, ingredients.iter().map(|p| p.tag.clone()).collect(), m)
        }
    };
    write_tensor(&a.out, &params_tensor(&params)?)?;
    let _ = writeln!(out, "selected {}", selected.join(","));
    let _ = writeln!(out, "metric {}", fmt_g12(metric));
    Ok(())
}
