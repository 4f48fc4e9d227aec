//! Adversarial losses over data-latent couples.
//!
//! A *true* couple pairs a real sample `x_r` with an independent prior draw
//! `z_p`. Three kinds of generated couple are built from the same minibatch:
//!
//! | kind | data side        | latent side      |
//! |------|------------------|------------------|
//! | K1   | `G(z_p)`         | `E(x_r)`         |
//! | K2   | `G(E(x_r))`      | `E(G(z_p))`      |
//! | K3   | `G(E(G(z_p)))`   | `E(G(E(x_r)))`   |
//!
//! The discriminator group (D, F, H) minimizes
//! `3 * mean(-log D(true)) + sum_k mean(-log(1 - D(K_k)))`, and the
//! encoder/generator group minimizes `sum_k mean(-log D(K_k))` plus
//! `alpha * mean_batch ||E(G(z_p)) - z_p||^2`.

use crate::error::{Error, Result};
use crate::networks::{BoundModel, IganModel};
use crate::tensor::{BatchNormMode, Graph, Tensor, Var};

/// Discriminator outputs are clamped to `[LOG_EPS, 1 - LOG_EPS]` before any log.
pub const LOG_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Weight of the latent reconstruction term `||E(G(z_p)) - z_p||^2`.
    pub alpha: f64,
    /// Weight of the true-couple term in the discriminator loss.
    pub real_weight: f64,
    /// Weight of `mse(x_r, G(E(x_r)))`; zero disables the term.
    pub data_cycle_weight: f64,
    /// Weight of `mse(E(G(E(x_r))), E(x_r))`; zero disables the term.
    pub real_latent_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 10.0,
            real_weight: 3.0,
            data_cycle_weight: 0.0,
            real_latent_weight: 0.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("real_weight", self.real_weight),
            ("data_cycle_weight", self.data_cycle_weight),
            ("real_latent_weight", self.real_latent_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// All compositions of one forward phase, as nodes on a graph.
#[derive(Debug, Clone, Copy)]
pub struct CoupleBatch {
    pub x_r: Var,
    pub z_p: Var,
    /// `E(x_r)`
    pub z_r: Var,
    /// `(G(z_p), E(x_r))`
    pub k1: (Var, Var),
    /// `(G(E(x_r)), E(G(z_p)))`
    pub k2: (Var, Var),
    /// `(G(E(G(z_p))), E(G(E(x_r))))`
    pub k3: (Var, Var),
    /// `E(G(z_p))`
    pub z_p_rec: Var,
}

impl CoupleBatch {
    pub fn generated(&self) -> [(Var, Var); 3] {
        [self.k1, self.k2, self.k3]
    }

    /// `G(E(x_r))`
    pub fn x_r_rec(&self) -> Var {
        self.k2.0
    }

    /// `G(z_p)`
    pub fn x_p(&self) -> Var {
        self.k1.0
    }
}

/// Evaluate every composition exactly once: `E(x_r)`, `G(z_p)`, then
/// `G(E(x_r))`, `E(G(z_p))`, then `G(E(G(z_p)))`, `E(G(E(x_r)))`.
pub fn forward_couples(
    model: &mut IganModel,
    graph: &mut Graph,
    bound: &BoundModel,
    x_r: Var,
    z_p: Var,
    mode: BatchNormMode,
) -> Result<CoupleBatch> {
    if graph.shape(x_r)[0] != graph.shape(z_p)[0] {
        return Err(Error::dim("forward_couples", graph.shape(x_r), graph.shape(z_p)));
    }
    let z_r = model.run_e(graph, bound, x_r, mode)?;
    let x_p = model.run_g(graph, bound, z_p, mode)?;
    let x_r_rec = model.run_g(graph, bound, z_r, mode)?;
    let z_p_rec = model.run_e(graph, bound, x_p, mode)?;
    let x_p_rec2 = model.run_g(graph, bound, z_p_rec, mode)?;
    let z_r_rec2 = model.run_e(graph, bound, x_r_rec, mode)?;
    Ok(CoupleBatch {
        x_r,
        z_p,
        z_r,
        k1: (x_p, z_r),
        k2: (x_r_rec, z_p_rec),
        k3: (x_p_rec2, z_r_rec2),
        z_p_rec,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub d_true: f64,
    pub d_k1: f64,
    pub d_k2: f64,
    pub d_k3: f64,
    pub eg_k1: f64,
    pub eg_k2: f64,
    pub eg_k3: f64,
    /// Batch mean of `||E(G(z_p)) - z_p||^2`.
    pub latent_rec: f64,
    pub data_cycle: Option<f64>,
    pub real_latent_rec: Option<f64>,
    pub total_d: f64,
    pub total_eg: f64,
}

impl LossBreakdown {
    /// Discriminator-group fields from `self`, encoder/generator fields from `eg`.
    pub fn merge(self, eg: LossBreakdown) -> LossBreakdown {
        LossBreakdown {
            eg_k1: eg.eg_k1,
            eg_k2: eg.eg_k2,
            eg_k3: eg.eg_k3,
            latent_rec: eg.latent_rec,
            data_cycle: eg.data_cycle,
            real_latent_rec: eg.real_latent_rec,
            total_eg: eg.total_eg,
            ..self
        }
    }

    /// Name of the first non-finite term, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        let terms = [
            ("d_true", Some(self.d_true)),
            ("d_k1", Some(self.d_k1)),
            ("d_k2", Some(self.d_k2)),
            ("d_k3", Some(self.d_k3)),
            ("eg_k1", Some(self.eg_k1)),
            ("eg_k2", Some(self.eg_k2)),
            ("eg_k3", Some(self.eg_k3)),
            ("latent_rec", Some(self.latent_rec)),
            ("data_cycle", self.data_cycle),
            ("real_latent_rec", self.real_latent_rec),
            ("total_d", Some(self.total_d)),
            ("total_eg", Some(self.total_eg)),
        ];
        terms
            .into_iter()
            .find(|(_, v)| v.is_some_and(|v| !v.is_finite()))
            .map(|(n, _)| n)
    }
}

fn clamped_score(graph: &mut Graph, score: Var) -> Var {
    graph.clamp(score, LOG_EPS, 1.0 - LOG_EPS)
}

/// `mean(-log s)` with clamping.
fn neg_log_mean(graph: &mut Graph, score: Var) -> Var {
    let s = clamped_score(graph, score);
    let l = graph.log(s);
    let m = graph.mean(l);
    graph.scale(m, -1.0)
}

/// `mean(-log(1 - s))` with clamping.
fn neg_log_one_minus_mean(graph: &mut Graph, score: Var) -> Var {
    let s = clamped_score(graph, score);
    let one_minus = graph.affine(s, -1.0, 1.0);
    let l = graph.log(one_minus);
    let m = graph.mean(l);
    graph.scale(m, -1.0)
}

fn weighted_sum(graph: &mut Graph, terms: &[(f64, Var)]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &(w, v) in terms {
        let t = if w == 1.0 { v } else { graph.scale(v, w) };
        acc = Some(match acc {
            Some(a) => graph.add(a, t)?,
            None => t,
        });
    }
    acc.ok_or_else(|| Error::Contract("empty loss".into()))
}

fn scalar(graph: &Graph, v: Var) -> f64 {
    graph.value(v).data()[0]
}

/// Discriminator-group loss. Bind `E` and `G` without gradients so the
/// generated couples reach it as constants.
pub fn loss_dfh(
    model: &mut IganModel,
    graph: &mut Graph,
    bound: &BoundModel,
    cb: &CoupleBatch,
    cfg: &LossConfig,
    mode: BatchNormMode,
) -> Result<(Var, LossBreakdown)> {
    let s_true = model.run_discriminator(graph, bound, cb.x_r, cb.z_p, mode)?;
    let d_true = neg_log_mean(graph, s_true);
    let mut terms = vec![(cfg.real_weight, d_true)];
    let mut fakes = [0.0; 3];
    for (i, (x, z)) in cb.generated().into_iter().enumerate() {
        let s = model.run_discriminator(graph, bound, x, z, mode)?;
        let t = neg_log_one_minus_mean(graph, s);
        fakes[i] = scalar(graph, t);
        terms.push((1.0, t));
    }
    let total = weighted_sum(graph, &terms)?;
    let breakdown = LossBreakdown {
        d_true: scalar(graph, d_true),
        d_k1: fakes[0],
        d_k2: fakes[1],
        d_k3: fakes[2],
        total_d: scalar(graph, total),
        ..Default::default()
    };
    Ok((total, breakdown))
}

/// Encoder/generator loss. Gradients flow through `D`, `F` and `H` to reach
/// `E` and `G`; only the caller's optimizer step decides what is updated.
pub fn loss_eg(
    model: &mut IganModel,
    graph: &mut Graph,
    bound: &BoundModel,
    cb: &CoupleBatch,
    cfg: &LossConfig,
    mode: BatchNormMode,
) -> Result<(Var, LossBreakdown)> {
    cfg.validate()?;
    let mut terms = Vec::new();
    let mut adv = [0.0; 3];
    for (i, (x, z)) in cb.generated().into_iter().enumerate() {
        let s = model.run_discriminator(graph, bound, x, z, mode)?;
        let t = neg_log_mean(graph, s);
        adv[i] = scalar(graph, t);
        terms.push((1.0, t));
    }
    // Batch mean of the per-sample squared norm = latent_dim * mse.
    let latent_dim = graph.shape(cb.z_p)[1] as f64;
    let rec = graph.mse(cb.z_p_rec, cb.z_p)?;
    let latent_rec = graph.scale(rec, latent_dim);
    terms.push((cfg.alpha, latent_rec));

    let mut data_cycle = None;
    if cfg.data_cycle_weight > 0.0 {
        let t = graph.mse(cb.x_r, cb.x_r_rec())?;
        data_cycle = Some(scalar(graph, t));
        terms.push((cfg.data_cycle_weight, t));
    }
    let mut real_latent_rec = None;
    if cfg.real_latent_weight > 0.0 {
        let t = graph.mse(cb.k3.1, cb.z_r)?;
        real_latent_rec = Some(scalar(graph, t));
        terms.push((cfg.real_latent_weight, t));
    }
    let total = weighted_sum(graph, &terms)?;
    let breakdown = LossBreakdown {
        eg_k1: adv[0],
        eg_k2: adv[1],
        eg_k3: adv[2],
        latent_rec: scalar(graph, latent_rec),
        data_cycle,
        real_latent_rec,
        total_eg: scalar(graph, total),
        ..Default::default()
    };
    Ok((total, breakdown))
}

/// The raw two-term payoff `mean D(F(x_r), H(z_p)) - mean D(F(G(z_p)), H(E(x_r)))`
/// in eval mode. Diagnostic only; training optimizes the clamped log losses.
pub fn minimax_value(model: &IganModel, x_r: &Tensor, z_p: &Tensor) -> Result<f64> {
    let x_p = model.forward_g(z_p)?;
    let z_r = model.forward_e(x_r)?;
    let real = model.discriminate(x_r, z_p)?.mean();
    let fake = model.discriminate(&x_p, &z_r)?.mean();
    Ok(real - fake)
}
