//! The `igan` command line: run configuration files, training runs and the
//! latent-space tools.
//!
//! A run configuration is a flat text file of `key = value` lines. Blank
//! lines and `#` comments are ignored and unknown keys are rejected. Any
//! trailing `key=value` arguments on the command line override the file.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for unreadable or
//! mismatched data (including checkpoints), 4 when training hits a
//! non-finite value, 1 for anything else.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::data::{grid_bytes, load_idx_images, sample_mixture, sample_prior, Dataset, GaussianMixtureSpec};
use crate::error::{Error, Result};
use crate::latent::{
    apply_attribute, attribute_vector, encode_dataset, knn_purity, latents_csv, round_trip, shuffled_purity_baseline,
    translate,
};
use crate::networks::{build_model, ArchConfig, IganModel};
use crate::tensor::Tensor;
use crate::trainer::checkpoint::{checkpoint_bytes, load_checkpoint};
use crate::trainer::{compute_indicators, metrics_csv, probe_batch, TrainConfig, TrainEvent, TrainState, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Ring,
    Grid,
    Idx,
}

impl DatasetKind {
    fn name(self) -> &'static str {
        match self {
            DatasetKind::Ring => "ring",
            DatasetKind::Grid => "grid",
            DatasetKind::Idx => "idx",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub mixture_modes: usize,
    pub mixture_radius: f64,
    pub mixture_sigma: f64,
    pub grid_side: usize,
    pub grid_spacing: f64,
    pub samples: usize,
    pub seed: u64,
    pub idx_images: Option<PathBuf>,
    pub idx_labels: Option<PathBuf>,
    /// Box-downscaled image extent; zero keeps the stored size.
    pub image_size: usize,
    pub attributes: Option<PathBuf>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            kind: DatasetKind::Ring,
            mixture_modes: 8,
            mixture_radius: 2.0,
            mixture_sigma: 0.05,
            grid_side: 5,
            grid_spacing: 1.0,
            samples: 20_000,
            seed: 0,
            idx_images: None,
            idx_labels: None,
            image_size: 0,
            attributes: None,
        }
    }
}

impl DatasetSpec {
    /// The generating mixture of a synthetic dataset.
    pub fn mixture(&self) -> Option<GaussianMixtureSpec> {
        match self.kind {
            DatasetKind::Ring => Some(GaussianMixtureSpec::ring(
                self.mixture_modes,
                self.mixture_radius,
                self.mixture_sigma,
            )),
            DatasetKind::Grid => Some(GaussianMixtureSpec::grid(
                self.grid_side,
                self.grid_spacing,
                self.mixture_sigma,
            )),
            DatasetKind::Idx => None,
        }
    }

    pub fn load(&self) -> Result<Dataset> {
        let mut data = match (self.kind, self.mixture()) {
            (DatasetKind::Idx, _) | (_, None) => {
                let images = self
                    .idx_images
                    .as_deref()
                    .ok_or_else(|| Error::Config("dataset = idx needs idx_images".into()))?;
                let size = (self.image_size > 0).then_some(self.image_size);
                load_idx_images(images, self.idx_labels.as_deref(), size)?
            }
            (_, Some(spec)) => sample_mixture(&spec, self.samples, self.seed)?,
        };
        if let Some(path) = &self.attributes {
            data.load_attributes(path)?;
        }
        Ok(data)
    }
}

/// Everything one run needs. The data shape of `arch` is taken from the
/// dataset when it is loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub dataset: DatasetSpec,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    /// Sample grids every this many steps; zero disables them.
    pub sample_interval: usize,
    pub grid_cols: usize,
    pub knn_k: usize,
    /// Evaluation encodes at most this many items for cluster purity.
    pub knn_items: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("runs/default"),
            dataset: DatasetSpec::default(),
            arch: ArchConfig {
                base_channels: 64,
                secondary_latent_dim: 64,
                toy_depth: 2,
                ..ArchConfig::toy(2, 2)
            },
            train: TrainConfig {
                steps: 20_000,
                batch_size: 128,
                ..Default::default()
            },
            sample_interval: 0,
            grid_cols: 8,
            knn_k: 10,
            knn_items: 2000,
        }
    }
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad value {value:?} for {key}: {e}")))
}

impl RunConfig {
    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (d, a, t) = (&self.dataset, &self.arch, &self.train);
        vec![
            ("output_dir", self.output_dir.display().to_string()),
            ("dataset", d.kind.name().to_string()),
            ("mixture_modes", d.mixture_modes.to_string()),
            ("mixture_radius", d.mixture_radius.to_string()),
            ("mixture_sigma", d.mixture_sigma.to_string()),
            ("grid_side", d.grid_side.to_string()),
            ("grid_spacing", d.grid_spacing.to_string()),
            ("samples", d.samples.to_string()),
            ("data_seed", d.seed.to_string()),
            ("idx_images", show_path(&d.idx_images)),
            ("idx_labels", show_path(&d.idx_labels)),
            ("image_size", d.image_size.to_string()),
            ("attributes", show_path(&d.attributes)),
            ("latent_dim", a.latent_dim.to_string()),
            ("secondary_latent_dim", a.secondary_latent_dim.to_string()),
            ("base_channels", a.base_channels.to_string()),
            ("omit_h", a.omit_h.to_string()),
            ("toy_mode", a.toy_mode.to_string()),
            ("toy_depth", a.toy_depth.to_string()),
            ("steps", t.steps.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("adam_beta1", t.adam_beta1.to_string()),
            ("adam_beta2", t.adam_beta2.to_string()),
            ("adam_eps", t.adam_eps.to_string()),
            ("alpha", t.loss.alpha.to_string()),
            ("real_weight", t.loss.real_weight.to_string()),
            ("data_cycle_weight", t.loss.data_cycle_weight.to_string()),
            ("real_latent_weight", t.loss.real_latent_weight.to_string()),
            ("d_steps_per_g", t.d_steps_per_g.to_string()),
            ("seed", t.seed.to_string()),
            ("indicator_interval", t.indicator_interval.to_string()),
            ("checkpoint_interval", t.checkpoint_interval.to_string()),
            ("probe_size", t.probe_size.to_string()),
            ("sample_interval", self.sample_interval.to_string()),
            ("grid_cols", self.grid_cols.to_string()),
            ("knn_k", self.knn_k.to_string()),
            ("knn_items", self.knn_items.to_string()),
        ]
    }

    pub fn keys() -> Vec<&'static str> {
        RunConfig::default().entries().into_iter().map(|(k, _)| k).collect()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        let (d, a, t) = (&mut self.dataset, &mut self.arch, &mut self.train);
        match key {
            "output_dir" => self.output_dir = PathBuf::from(v),
            "dataset" => {
                d.kind = match v {
                    "ring" => DatasetKind::Ring,
                    "grid" => DatasetKind::Grid,
                    "idx" => DatasetKind::Idx,
                    _ => return Err(Error::Config(format!("unknown dataset {v:?} (ring, grid or idx)"))),
                }
            }
            "mixture_modes" => d.mixture_modes = parse_value(key, v)?,
            "mixture_radius" => d.mixture_radius = parse_value(key, v)?,
            "mixture_sigma" => d.mixture_sigma = parse_value(key, v)?,
            "grid_side" => d.grid_side = parse_value(key, v)?,
            "grid_spacing" => d.grid_spacing = parse_value(key, v)?,
            "samples" => d.samples = parse_value(key, v)?,
            "data_seed" => d.seed = parse_value(key, v)?,
            "idx_images" => d.idx_images = opt_path(v),
            "idx_labels" => d.idx_labels = opt_path(v),
            "image_size" => d.image_size = parse_value(key, v)?,
            "attributes" => d.attributes = opt_path(v),
            "latent_dim" => a.latent_dim = parse_value(key, v)?,
            "secondary_latent_dim" => a.secondary_latent_dim = parse_value(key, v)?,
            "base_channels" => a.base_channels = parse_value(key, v)?,
            "omit_h" => a.omit_h = parse_value(key, v)?,
            "toy_mode" => a.toy_mode = parse_value(key, v)?,
            "toy_depth" => a.toy_depth = parse_value(key, v)?,
            "steps" => t.steps = parse_value(key, v)?,
            "batch_size" => t.batch_size = parse_value(key, v)?,
            "learning_rate" => t.learning_rate = parse_value(key, v)?,
            "adam_beta1" => t.adam_beta1 = parse_value(key, v)?,
            "adam_beta2" => t.adam_beta2 = parse_value(key, v)?,
            "adam_eps" => t.adam_eps = parse_value(key, v)?,
            "alpha" => t.loss.alpha = parse_value(key, v)?,
            "real_weight" => t.loss.real_weight = parse_value(key, v)?,
            "data_cycle_weight" => t.loss.data_cycle_weight = parse_value(key, v)?,
            "real_latent_weight" => t.loss.real_latent_weight = parse_value(key, v)?,
            "d_steps_per_g" => t.d_steps_per_g = parse_value(key, v)?,
            "seed" => t.seed = parse_value(key, v)?,
            "indicator_interval" => t.indicator_interval = parse_value(key, v)?,
            "checkpoint_interval" => t.checkpoint_interval = parse_value(key, v)?,
            "probe_size" => t.probe_size = parse_value(key, v)?,
            "sample_interval" => self.sample_interval = parse_value(key, v)?,
            "grid_cols" => self.grid_cols = parse_value(key, v)?,
            "knn_k" => self.knn_k = parse_value(key, v)?,
            "knn_items" => self.knn_items = parse_value(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Apply `key=value` text on top of `self`, one pair per line.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip_prefix(&e))))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Apply command-line overrides of the form `key=value`.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }

    /// Consistency checks that do not need the data.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.grid_cols == 0 || self.knn_k == 0 {
            return Err(Error::Config("grid_cols and knn_k must be positive".into()));
        }
        let mixture = self.dataset.kind != DatasetKind::Idx;
        if mixture != self.arch.toy_mode {
            return Err(Error::Config(
                "mixture datasets need toy_mode = true and image datasets toy_mode = false".into(),
            ));
        }
        if let Some(spec) = self.dataset.mixture() {
            spec.validate()?;
        }
        // Stand-in shape; the real one comes from the loaded data.
        let data_shape = if mixture { vec![2] } else { vec![1, 8, 8] };
        ArchConfig {
            data_shape,
            ..self.arch.clone()
        }
        .validate()
    }

    /// Load a config file (if any) and apply overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            cfg.apply_text(&text)?;
        }
        cfg.apply_overrides(overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The architecture for `data`.
    pub fn arch_for(&self, data: &Dataset) -> Result<ArchConfig> {
        let arch = ArchConfig {
            data_shape: data.item_shape().to_vec(),
            ..self.arch.clone()
        };
        arch.validate()?;
        Ok(arch)
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

/// Write `bytes` to `path` unless a file with different content is already
/// there. Rewriting identical content is allowed.
pub fn write_artifact(path: &Path, bytes: &[u8]) -> Result<()> {
    match std::fs::read(path) {
        Ok(existing) if existing == bytes => return Ok(()),
        Ok(_) => return Err(Error::ArtifactConflict(path.to_path_buf())),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(Error::io(path, e)),
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Point cloud CSV with header `id,x0,x1,...`.
pub fn points_csv(points: &Tensor) -> String {
    let n = points.batch();
    let d = points.len() / n.max(1);
    let mut out = String::from("id");
    for j in 0..d {
        write!(out, ",x{j}").unwrap();
    }
    out.push('\n');
    for (i, row) in points.data().chunks_exact(d).enumerate() {
        write!(out, "{i}").unwrap();
        for v in row {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Visual artifact for a batch: a PGM/PPM grid for images, a CSV point
/// cloud for flat data. Returns the file extension and the bytes.
fn render(batch: &Tensor, cols: usize) -> Result<(&'static str, Vec<u8>)> {
    if batch.rank() == 4 {
        let ext = if batch.shape()[1] == 3 { "ppm" } else { "pgm" };
        Ok((ext, grid_bytes(batch, cols)?))
    } else {
        Ok(("csv", points_csv(batch).into_bytes()))
    }
}

fn write_rendered(dir: &Path, stem: &str, batch: &Tensor, cols: usize) -> Result<PathBuf> {
    let (ext, bytes) = render(batch, cols)?;
    let path = dir.join(format!("{stem}.{ext}"));
    write_artifact(&path, &bytes)?;
    Ok(path)
}

/// Stack the given batches along the item axis.
fn concat_batches(parts: &[&Tensor]) -> Result<Tensor> {
    let mut shape = parts[0].shape().to_vec();
    shape[0] = parts.iter().map(|p| p.batch()).sum();
    let data = parts.iter().flat_map(|p| p.data().iter().copied()).collect();
    Tensor::from_vec(shape, data)
}

/// Four panels: real items, their reconstructions, generated items, and the
/// generated items after another encode/decode.
pub fn sample_panels(model: &IganModel, x: &Tensor, z: &Tensor) -> Result<Tensor> {
    let rec = model.forward_g(&model.forward_e(x)?)?;
    let gen = model.forward_g(z)?;
    let regen = model.forward_g(&model.forward_e(&gen)?)?;
    concat_batches(&[x, &rec, &gen, &regen])
}

/// A failed command: the error and its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: Error,
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.error)
    }
}

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NON_FINITE: i32 = 4;

trait Stage<T> {
    fn stage(self, code: i32) -> std::result::Result<T, Failure>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, code: i32) -> std::result::Result<T, Failure> {
        self.map_err(|error| {
            let code = match error {
                Error::NonFinite { .. } => EXIT_NON_FINITE,
                Error::Config(_) => EXIT_CONFIG,
                _ => code,
            };
            Failure { code, error }
        })
    }
}

type CmdResult = std::result::Result<(), Failure>;

#[derive(Debug, Parser)]
#[command(
    name = "igan",
    version,
    about = "Train and use joint generator/encoder adversarial networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct ConfigArgs {
    /// Run configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` overrides applied after the file.
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes the resolved config, metrics, checkpoints and samples.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Indicators and cluster purity of a checkpoint, as a one-row CSV.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Reconstructions `G(E(x))` of the first `n` dataset items.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Samples `G(z)` from the prior.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        cols: usize,
    },
    /// `G(E(x) - mean(minus) + mean(plus))` for the first `n` dataset items.
    Arith {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        minus: String,
        #[arg(long)]
        plus: String,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Translate the first `n` items of domain A into domain B and back.
    Translate {
        #[arg(long)]
        checkpoint_a: PathBuf,
        #[arg(long)]
        checkpoint_b: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Encoded latents of the whole dataset as CSV.
    ExportLatents {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

/// Run a parsed command line and return the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Train { cfg, resume } => cmd_train(&cfg, resume.as_deref()),
        Command::Eval { checkpoint, out, cfg } => cmd_eval(&checkpoint, &cfg, &out),
        Command::Reconstruct {
            checkpoint,
            out,
            n,
            cfg,
        } => cmd_reconstruct(&checkpoint, &cfg, n, &out),
        Command::Generate {
            checkpoint,
            out,
            n,
            seed,
            cols,
        } => cmd_generate(&checkpoint, n, seed, cols, &out),
        Command::Arith {
            checkpoint,
            out,
            minus,
            plus,
            n,
            cfg,
        } => cmd_arith(&checkpoint, &cfg, &minus, &plus, n, &out),
        Command::Translate {
            checkpoint_a,
            checkpoint_b,
            out,
            n,
            cfg,
        } => cmd_translate(&checkpoint_a, &checkpoint_b, &cfg, n, &out),
        Command::ExportLatents { checkpoint, out, cfg } => cmd_export_latents(&checkpoint, &cfg, &out),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.code
        }
    }
}

fn load_config(args: &ConfigArgs) -> std::result::Result<RunConfig, Failure> {
    RunConfig::load(args.config.as_deref(), &args.overrides).stage(EXIT_CONFIG)
}

fn load_data(cfg: &RunConfig) -> std::result::Result<Dataset, Failure> {
    cfg.dataset.load().stage(EXIT_DATA)
}

fn load_state(path: &Path) -> std::result::Result<TrainState, Failure> {
    load_checkpoint(path).stage(EXIT_DATA)
}

fn check_model_data(model: &IganModel, data: &Dataset) -> CmdResult {
    if data.item_shape() != model.arch.data_shape.as_slice() {
        return Err(Failure {
            code: EXIT_DATA,
            error: Error::dim("checkpoint vs dataset", &model.arch.data_shape, data.item_shape()),
        });
    }
    Ok(())
}

fn first_items(data: &Dataset, n: usize) -> std::result::Result<Tensor, Failure> {
    let idx: Vec<usize> = (0..n.min(data.len())).collect();
    if idx.is_empty() {
        return Err(Failure {
            code: EXIT_DATA,
            error: Error::Data("dataset is empty".into()),
        });
    }
    data.items().select_rows(&idx).stage(EXIT_DATA)
}

pub fn cmd_train(args: &ConfigArgs, resume: Option<&Path>) -> CmdResult {
    let cfg = load_config(args)?;
    let data = load_data(&cfg)?;
    let arch = cfg.arch_for(&data).stage(EXIT_CONFIG)?;
    let state = match resume {
        Some(p) => {
            let st = load_state(p)?;
            if st.model.arch != arch {
                return Err(Failure {
                    code: EXIT_CONFIG,
                    error: Error::Config(format!("{} was trained with a different architecture", p.display())),
                });
            }
            st
        }
        None => TrainState::new(build_model(&arch, cfg.train.seed).stage(EXIT_CONFIG)?),
    };
    let out = &cfg.output_dir;
    let start = state.step;
    let suffix = if start == 0 {
        String::new()
    } else {
        format!("_from_step{start:06}")
    };
    let seed = cfg.train.seed;
    write_artifact(&out.join(format!("config{suffix}.resolved")), cfg.to_text().as_bytes()).stage(EXIT_OTHER)?;

    let mut trainer = Trainer::resume(state, &data, cfg.train.clone()).stage(EXIT_DATA)?;
    let (px, pz) = trainer.probe();
    let cols = cfg.grid_cols.min(px.batch());
    let sample_idx: Vec<usize> = (0..cols).collect();
    let sample_x = px.select_rows(&sample_idx).stage(EXIT_OTHER)?;
    let sample_z = pz.select_rows(&sample_idx).stage(EXIT_OTHER)?;
    let save = |st: &TrainState| {
        write_artifact(
            &out.join(format!("checkpoint_step{:06}.igan", st.step)),
            &checkpoint_bytes(st),
        )
    };
    if start == 0 {
        save(trainer.state()).stage(EXIT_OTHER)?;
    }

    let mut records = Vec::new();
    let result = trainer.run(|ev| {
        match ev {
            TrainEvent::Step(st) => {
                if cfg.sample_interval > 0 && st.step % cfg.sample_interval == 0 {
                    let panels = sample_panels(&st.model, &sample_x, &sample_z)?;
                    write_rendered(out, &format!("samples_step{:06}", st.step), &panels, cols)?;
                }
            }
            TrainEvent::Metrics(r) => {
                eprintln!(
                    "step {:>7}  d(true) {:.3}  d(K1) {:.3}  prior latent rec {:.4}  real data rec {:.4}",
                    r.step, r.d_score_true, r.d_score_k1, r.prior_latent_rec, r.real_data_rec
                );
                records.push(r.clone());
            }
            TrainEvent::Checkpoint(st) => save(st)?,
        }
        Ok(())
    });
    let metrics_path = out.join(format!("metrics_seed{seed}{suffix}.csv"));
    write_artifact(&metrics_path, metrics_csv(&records).as_bytes()).stage(EXIT_OTHER)?;
    result.stage(EXIT_OTHER)?;
    save(trainer.state()).stage(EXIT_OTHER)?;
    Ok(())
}

pub const EVAL_COLUMNS: [&str; 11] = [
    "step",
    "d_score_true",
    "d_score_k1",
    "prior_latent_rec",
    "fake_data_rec",
    "real_latent_rec",
    "real_data_rec",
    "minimax",
    "knn_purity",
    "knn_baseline",
    "knn_baseline_sd",
];

/// Evaluation summary: header plus one row.
pub fn eval_summary(model: &IganModel, step: usize, data: &Dataset, cfg: &RunConfig) -> Result<String> {
    let (px, pz) = probe_batch(data, model.arch.latent_dim, cfg.train.probe_size, cfg.train.seed)?;
    let m = compute_indicators(model, &px, &pz)?;
    let mut row = format!(
        "{step},{},{},{},{},{},{},{}",
        m.d_score_true,
        m.d_score_k1,
        m.prior_latent_rec,
        m.fake_data_rec,
        m.real_latent_rec,
        m.real_data_rec,
        m.minimax
    );
    let n = data.len().min(cfg.knn_items);
    if data.labels.is_some() && cfg.knn_k < n {
        let subset = data.subset(&(0..n).collect::<Vec<_>>())?;
        let latents = encode_dataset(model, &subset, 256)?;
        let purity = knn_purity(&latents, cfg.knn_k)?;
        let (base, sd) = shuffled_purity_baseline(&latents, cfg.knn_k, 100, cfg.train.seed)?;
        write!(row, ",{purity},{base},{sd}").unwrap();
    } else {
        row.push_str(",,,");
    }
    Ok(format!("{}\n{row}\n", EVAL_COLUMNS.join(",")))
}

pub fn cmd_eval(checkpoint: &Path, args: &ConfigArgs, out: &Path) -> CmdResult {
    let cfg = load_config(args)?;
    let st = load_state(checkpoint)?;
    let data = load_data(&cfg)?;
    check_model_data(&st.model, &data)?;
    let text = eval_summary(&st.model, st.step, &data, &cfg).stage(EXIT_OTHER)?;
    write_artifact(&out.join(format!("eval_step{:06}.csv", st.step)), text.as_bytes()).stage(EXIT_OTHER)
}

pub fn cmd_reconstruct(checkpoint: &Path, args: &ConfigArgs, n: usize, out: &Path) -> CmdResult {
    let cfg = load_config(args)?;
    let st = load_state(checkpoint)?;
    let data = load_data(&cfg)?;
    check_model_data(&st.model, &data)?;
    let x = first_items(&data, n)?;
    let m = &st.model;
    let rec = m.forward_g(&m.forward_e(&x).stage(EXIT_OTHER)?).stage(EXIT_OTHER)?;
    write_rendered(out, &format!("reconstruct_step{:06}", st.step), &rec, cfg.grid_cols).stage(EXIT_OTHER)?;
    Ok(())
}

pub fn cmd_generate(checkpoint: &Path, n: usize, seed: u64, cols: usize, out: &Path) -> CmdResult {
    let st = load_state(checkpoint)?;
    if n == 0 || cols == 0 {
        return Err(Failure {
            code: EXIT_CONFIG,
            error: Error::Config("generate needs n >= 1 and cols >= 1".into()),
        });
    }
    let z = sample_prior(st.model.arch.latent_dim, n, seed);
    let x = st.model.forward_g(&z).stage(EXIT_OTHER)?;
    let stem = format!("generate_step{:06}_seed{seed}", st.step);
    write_rendered(out, &stem, &x, cols).stage(EXIT_OTHER)?;
    Ok(())
}

pub fn cmd_arith(checkpoint: &Path, args: &ConfigArgs, minus: &str, plus: &str, n: usize, out: &Path) -> CmdResult {
    let cfg = load_config(args)?;
    let st = load_state(checkpoint)?;
    let data = load_data(&cfg)?;
    check_model_data(&st.model, &data)?;
    let latents = encode_dataset(&st.model, &data, 256).stage(EXIT_OTHER)?;
    let minus_v = attribute_vector(&latents, minus).stage(EXIT_DATA)?;
    let plus_v = attribute_vector(&latents, plus).stage(EXIT_DATA)?;
    let x = first_items(&data, n)?;
    let y = apply_attribute(&st.model, &x, &minus_v, &plus_v).stage(EXIT_OTHER)?;
    let stem = format!("arith_{minus}_to_{plus}_step{:06}", st.step);
    write_rendered(out, &stem, &y, cfg.grid_cols).stage(EXIT_OTHER)?;
    Ok(())
}

pub fn cmd_translate(checkpoint_a: &Path, checkpoint_b: &Path, args: &ConfigArgs, n: usize, out: &Path) -> CmdResult {
    let cfg = load_config(args)?;
    let a = load_state(checkpoint_a)?;
    let b = load_state(checkpoint_b)?;
    let data = load_data(&cfg)?;
    check_model_data(&a.model, &data)?;
    let x = first_items(&data, n)?;
    let to_b = translate(&a.model, &b.model, &x).stage(EXIT_DATA)?;
    let back = round_trip(&a.model, &b.model, &x).stage(EXIT_DATA)?;
    let tag = format!("a{:06}_b{:06}", a.step, b.step);
    write_rendered(out, &format!("translate_{tag}"), &to_b, cfg.grid_cols).stage(EXIT_OTHER)?;
    write_rendered(out, &format!("round_trip_{tag}"), &back, cfg.grid_cols).stage(EXIT_OTHER)?;
    Ok(())
}

pub fn cmd_export_latents(checkpoint: &Path, args: &ConfigArgs, out: &Path) -> CmdResult {
    let cfg = load_config(args)?;
    let st = load_state(checkpoint)?;
    let data = load_data(&cfg)?;
    check_model_data(&st.model, &data)?;
    let latents = encode_dataset(&st.model, &data, 256).stage(EXIT_OTHER)?;
    let path = out.join(format!("latents_step{:06}.csv", st.step));
    write_artifact(&path, latents_csv(&latents).as_bytes()).stage(EXIT_OTHER)
}
