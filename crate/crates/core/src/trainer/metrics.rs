use std::fmt::Write as _;

use crate::error::Result;
use crate::loss::LossBreakdown;
use crate::networks::IganModel;
use crate::tensor::Tensor;

/// Convergence indicators and loss components at one step.
///
/// The reconstruction indicators are root-mean-square errors over every
/// element of the probe batch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsRecord {
    pub step: usize,
    /// Mean `D` score on true couples `(x, z)`.
    pub d_score_true: f64,
    /// Mean `D` score on `(G(z), E(x))`.
    pub d_score_k1: f64,
    /// `rms(E(G(z)) - z)`
    pub prior_latent_rec: f64,
    /// `rms(G(z) - G(E(G(z))))`
    pub fake_data_rec: f64,
    /// `rms(E(G(E(x))) - E(x))`
    pub real_latent_rec: f64,
    /// `rms(x - G(E(x)))`
    pub real_data_rec: f64,
    /// `d_score_true - d_score_k1`
    pub minimax: f64,
    /// Losses of the most recent training step.
    pub losses: LossBreakdown,
}

pub const CSV_COLUMNS: [&str; 20] = [
    "step",
    "d_score_true",
    "d_score_k1",
    "prior_latent_rec",
    "fake_data_rec",
    "real_latent_rec",
    "real_data_rec",
    "minimax",
    "d_true",
    "d_k1",
    "d_k2",
    "d_k3",
    "eg_k1",
    "eg_k2",
    "eg_k3",
    "latent_rec",
    "data_cycle",
    "real_latent_cycle",
    "total_d",
    "total_eg",
];

pub fn csv_header() -> String {
    CSV_COLUMNS.join(",")
}

impl MetricsRecord {
    /// One CSV row in [`CSV_COLUMNS`] order. Disabled optional losses are
    /// left empty.
    pub fn csv_row(&self) -> String {
        let l = &self.losses;
        let mut row = self.step.to_string();
        for v in [
            self.d_score_true,
            self.d_score_k1,
            self.prior_latent_rec,
            self.fake_data_rec,
            self.real_latent_rec,
            self.real_data_rec,
            self.minimax,
            l.d_true,
            l.d_k1,
            l.d_k2,
            l.d_k3,
            l.eg_k1,
            l.eg_k2,
            l.eg_k3,
            l.latent_rec,
        ] {
            write!(row, ",{v}").unwrap();
        }
        for v in [l.data_cycle, l.real_latent_rec] {
            row.push(',');
            if let Some(v) = v {
                write!(row, "{v}").unwrap();
            }
        }
        write!(row, ",{},{}", l.total_d, l.total_eg).unwrap();
        row
    }

    pub fn is_finite(&self) -> bool {
        [
            self.d_score_true,
            self.d_score_k1,
            self.prior_latent_rec,
            self.fake_data_rec,
            self.real_latent_rec,
            self.real_data_rec,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Header plus one row per record.
pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = csv_header();
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Evaluate the indicators on a probe batch in eval mode. `step` and
/// `losses` are left at their defaults.
pub fn compute_indicators(model: &IganModel, probe_x: &Tensor, probe_z: &Tensor) -> Result<MetricsRecord> {
    let z_r = model.forward_e(probe_x)?;
    let x_p = model.forward_g(probe_z)?;
    let x_r_rec = model.forward_g(&z_r)?;
    let z_p_rec = model.forward_e(&x_p)?;
    let x_p_rec = model.forward_g(&z_p_rec)?;
    let z_r_rec = model.forward_e(&x_r_rec)?;
    let d_score_true = model.discriminate(probe_x, probe_z)?.mean();
    let d_score_k1 = model.discriminate(&x_p, &z_r)?.mean();
    Ok(MetricsRecord {
        step: 0,
        d_score_true,
        d_score_k1,
        prior_latent_rec: z_p_rec.rms_diff(probe_z)?,
        fake_data_rec: x_p.rms_diff(&x_p_rec)?,
        real_latent_rec: z_r_rec.rms_diff(&z_r)?,
        real_data_rec: probe_x.rms_diff(&x_r_rec)?,
        minimax: d_score_true - d_score_k1,
        losses: LossBreakdown::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_matches_header_width() {
        let r = MetricsRecord {
            step: 7,
            losses: LossBreakdown {
                data_cycle: Some(0.5),
                ..Default::default()
            },
            ..Default::default()
        };
        let row = r.csv_row();
        assert_eq!(row.split(',').count(), CSV_COLUMNS.len());
        assert!(row.starts_with("7,0,"));
        assert!(row.contains(",0.5,,"));
    }

    #[test]
    fn empty_stream_is_header_only() {
        assert_eq!(metrics_csv(&[]), format!("{}\n", CSV_COLUMNS.join(",")));
    }
}
