//! Alternating optimization of the two network groups.
//!
//! Each step draws a minibatch of real items and prior latents from a random
//! stream that depends only on `(seed, step)`. The discriminator group
//! (`D`, `F`, `H`) takes `d_steps_per_g` Adam steps, then the
//! encoder/generator group (`E`, `G`) takes one. Networks outside the group
//! being updated still run batchnorm on batch statistics, but their running
//! statistics are left untouched, so a phase never changes a single bit of
//! the other group.

mod adam;
pub mod checkpoint;
mod metrics;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use adam::{adam_step, AdamConfig, Moments, OptimizerState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use metrics::{compute_indicators, csv_header, metrics_csv, MetricsRecord, CSV_COLUMNS};

use crate::data::{sample_prior_with, Dataset};
use crate::error::{Error, Result};
use crate::loss::{forward_couples, loss_dfh, loss_eg, LossBreakdown, LossConfig};
use crate::networks::{IganModel, NetKind};
use crate::tensor::{BatchNormMode, Graph, Tensor};

pub const DEFAULT_PROBE_SIZE: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub loss: LossConfig,
    pub d_steps_per_g: usize,
    pub seed: u64,
    pub indicator_interval: usize,
    /// Zero disables checkpoint events.
    pub checkpoint_interval: usize,
    pub probe_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            steps: 1000,
            batch_size: 64,
            learning_rate: adam.lr,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            loss: LossConfig::default(),
            d_steps_per_g: 1,
            seed: 0,
            indicator_interval: 100,
            checkpoint_interval: 0,
            probe_size: DEFAULT_PROBE_SIZE,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("d_steps_per_g", self.d_steps_per_g),
            ("indicator_interval", self.indicator_interval),
            ("probe_size", self.probe_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2 for batchnorm".into()));
        }
        let rates = [("learning_rate", self.learning_rate), ("adam_eps", self.adam_eps)];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        self.loss.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// Everything needed to continue training bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: IganModel,
    pub opt_d: OptimizerState,
    pub opt_eg: OptimizerState,
    /// Number of completed steps.
    pub step: usize,
}

impl TrainState {
    pub fn new(model: IganModel) -> Self {
        TrainState {
            model,
            opt_d: OptimizerState::new(),
            opt_eg: OptimizerState::new(),
            step: 0,
        }
    }

    /// Round every tensor through `f32`, exactly as a checkpoint round trip does.
    pub fn quantize_f32(&mut self) {
        for kind in self.model.kinds() {
            let net = self.model.network_mut(kind).expect("listed kind");
            for e in &mut net.params.entries {
                e.tensor = e.tensor.quantize_f32();
            }
        }
        for opt in [&mut self.opt_d, &mut self.opt_eg] {
            for m in opt.moments.values_mut() {
                m.m = m.m.quantize_f32();
                m.v = m.v.quantize_f32();
            }
        }
    }
}

/// Notifications raised while training.
#[derive(Debug)]
pub enum TrainEvent<'a> {
    /// Raised after every completed step.
    Step(&'a TrainState),
    Metrics(&'a MetricsRecord),
    /// Raised every `checkpoint_interval` steps and after the final step.
    Checkpoint(&'a TrainState),
}

/// The two alternating updates of a training step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Updates `D`, `F` and `H`.
    Discriminator,
    /// Updates `E` and `G`.
    Generator,
}

/// Random stream of one training step. Stream 0 is reserved for the probe.
fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64 + 1);
    rng
}

fn draw_batch<R: Rng>(rng: &mut R, dataset: &Dataset, n: usize, latent_dim: usize) -> Result<(Tensor, Tensor)> {
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..dataset.len())).collect();
    let x = dataset.items().select_rows(&idx)?;
    let z = sample_prior_with(rng, latent_dim, n);
    Ok((x, z))
}

/// The fixed batch on which indicators are evaluated.
pub fn probe_batch(dataset: &Dataset, latent_dim: usize, size: usize, seed: u64) -> Result<(Tensor, Tensor)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    draw_batch(&mut rng, dataset, size, latent_dim)
}

fn non_finite(term: &str, step: usize) -> Error {
    Error::NonFinite {
        term: term.to_string(),
        step,
    }
}

/// One discriminator-group update. Returns the loss breakdown.
fn discriminator_phase(
    state: &mut TrainState,
    x: &Tensor,
    z: &Tensor,
    cfg: &TrainConfig,
    step: usize,
) -> Result<LossBreakdown> {
    let model = &mut state.model;
    let frozen = (model.e.clone(), model.g.clone());
    let mut graph = Graph::new();
    let bound = model.bind(&mut graph, &[NetKind::F, NetKind::H, NetKind::D]);
    let xv = graph.constant(x.clone());
    let zv = graph.constant(z.clone());
    let cb = forward_couples(model, &mut graph, &bound, xv, zv, BatchNormMode::Train)?;
    (model.e, model.g) = frozen;
    let (loss, breakdown) = loss_dfh(model, &mut graph, &bound, &cb, &cfg.loss, BatchNormMode::Train)?;
    if let Some(term) = breakdown.first_non_finite() {
        return Err(non_finite(term, step));
    }
    graph.backward(loss)?;
    let adam = cfg.adam();
    state.opt_d.begin_step();
    for kind in [NetKind::F, NetKind::H, NetKind::D] {
        if let (Some(net), Some(vars)) = (model.network_mut(kind), bound.vars(kind)) {
            let grads = net.grads(&graph, vars);
            adam_step(&mut net.params, kind.name(), &grads, &mut state.opt_d, &adam);
        }
    }
    Ok(breakdown)
}

/// One encoder/generator update. Returns the loss breakdown.
fn generator_phase(
    state: &mut TrainState,
    x: &Tensor,
    z: &Tensor,
    cfg: &TrainConfig,
    step: usize,
) -> Result<LossBreakdown> {
    let model = &mut state.model;
    let mut graph = Graph::new();
    let bound = model.bind(&mut graph, &[NetKind::E, NetKind::G]);
    let xv = graph.constant(x.clone());
    let zv = graph.constant(z.clone());
    let cb = forward_couples(model, &mut graph, &bound, xv, zv, BatchNormMode::Train)?;
    let frozen = (model.f.clone(), model.h.clone(), model.d.clone());
    let result = loss_eg(model, &mut graph, &bound, &cb, &cfg.loss, BatchNormMode::Train);
    (model.f, model.h, model.d) = frozen;
    let (loss, breakdown) = result?;
    if let Some(term) = breakdown.first_non_finite() {
        return Err(non_finite(term, step));
    }
    graph.backward(loss)?;
    let adam = cfg.adam();
    state.opt_eg.begin_step();
    for kind in [NetKind::E, NetKind::G] {
        let vars = bound.vars(kind).expect("E and G are always bound");
        let net = model.network_mut(kind).expect("E and G always exist");
        let grads = net.grads(&graph, vars);
        adam_step(&mut net.params, kind.name(), &grads, &mut state.opt_eg, &adam);
    }
    Ok(breakdown)
}

/// Stepwise driver over a [`TrainState`].
#[derive(Debug)]
pub struct Trainer<'a> {
    cfg: TrainConfig,
    dataset: &'a Dataset,
    probe: (Tensor, Tensor),
    state: TrainState,
}

impl<'a> Trainer<'a> {
    pub fn new(model: IganModel, dataset: &'a Dataset, cfg: TrainConfig) -> Result<Self> {
        Self::resume(TrainState::new(model), dataset, cfg)
    }

    /// Continue from a saved state. The probe batch depends only on the seed,
    /// so indicator curves line up with an uninterrupted run.
    pub fn resume(state: TrainState, dataset: &'a Dataset, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if dataset.is_empty() {
            return Err(Error::Data("training needs a non-empty dataset".into()));
        }
        if dataset.item_shape() != state.model.arch.data_shape.as_slice() {
            return Err(Error::dim(
                "dataset items",
                dataset.item_shape(),
                &state.model.arch.data_shape,
            ));
        }
        let probe = probe_batch(dataset, state.model.arch.latent_dim, cfg.probe_size, cfg.seed)?;
        Ok(Trainer {
            cfg,
            dataset,
            probe,
            state,
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut TrainState {
        &mut self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn probe(&self) -> (&Tensor, &Tensor) {
        (&self.probe.0, &self.probe.1)
    }

    /// Run one full step (all discriminator updates, then the generator update).
    pub fn step(&mut self) -> Result<LossBreakdown> {
        self.step_observed(|_, _| {})
    }

    /// Like [`Trainer::step`], calling `on_phase` after every phase update.
    pub fn step_observed(&mut self, mut on_phase: impl FnMut(Phase, &TrainState)) -> Result<LossBreakdown> {
        let step = self.state.step + 1;
        let mut rng = step_rng(self.cfg.seed, step);
        let latent_dim = self.state.model.arch.latent_dim;
        let mut d_losses = LossBreakdown::default();
        for _ in 0..self.cfg.d_steps_per_g {
            let (x, z) = draw_batch(&mut rng, self.dataset, self.cfg.batch_size, latent_dim)?;
            d_losses = discriminator_phase(&mut self.state, &x, &z, &self.cfg, step)?;
            on_phase(Phase::Discriminator, &self.state);
        }
        let (x, z) = draw_batch(&mut rng, self.dataset, self.cfg.batch_size, latent_dim)?;
        let eg_losses = generator_phase(&mut self.state, &x, &z, &self.cfg, step)?;
        self.state.step = step;
        on_phase(Phase::Generator, &self.state);
        Ok(d_losses.merge(eg_losses))
    }

    /// Indicators at the current step.
    pub fn indicators(&self, losses: LossBreakdown) -> Result<MetricsRecord> {
        let mut rec = compute_indicators(&self.state.model, &self.probe.0, &self.probe.1)?;
        rec.step = self.state.step;
        rec.losses = losses;
        if !rec.is_finite() {
            return Err(non_finite("indicators", rec.step));
        }
        Ok(rec)
    }

    /// Train until `cfg.steps` steps are complete, reporting to `on_event`.
    pub fn run(&mut self, mut on_event: impl FnMut(TrainEvent<'_>) -> Result<()>) -> Result<Vec<MetricsRecord>> {
        let mut records = Vec::new();
        while self.state.step < self.cfg.steps {
            let losses = self.step()?;
            let step = self.state.step;
            on_event(TrainEvent::Step(&self.state))?;
            if step.is_multiple_of(self.cfg.indicator_interval) {
                let rec = self.indicators(losses)?;
                on_event(TrainEvent::Metrics(&rec))?;
                records.push(rec);
            }
            let interval = self.cfg.checkpoint_interval;
            if interval > 0 && (step.is_multiple_of(interval) || step == self.cfg.steps) {
                on_event(TrainEvent::Checkpoint(&self.state))?;
            }
        }
        Ok(records)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: IganModel,
    pub metrics: Vec<MetricsRecord>,
}

/// Train `model` on `dataset` for `cfg.steps` steps.
pub fn train(model: IganModel, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(model, dataset, cfg.clone())?;
    let metrics = trainer.run(|_| Ok(()))?;
    Ok(TrainOutcome {
        model: trainer.into_state().model,
        metrics,
    })
}
