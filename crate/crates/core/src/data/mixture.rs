use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureMode {
    pub mean: Vec<f64>,
    /// Isotropic standard deviation in raw coordinates.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixtureSpec {
    pub modes: Vec<MixtureMode>,
    pub weights: Vec<f64>,
    pub dim: usize,
    /// Raw coordinates are divided by this to land in `[-1, 1]`.
    pub scale: f64,
    /// Named groups of mode indices, turned into attribute tags.
    pub attribute_groups: Vec<(String, Vec<usize>)>,
}

impl GaussianMixtureSpec {
    /// Equal-weight mixture; the scale leaves ten sigmas of headroom around
    /// the outermost mean (at least 1).
    pub fn uniform(modes: Vec<MixtureMode>) -> Self {
        let dim = modes.first().map_or(0, |m| m.mean.len());
        let extent = modes
            .iter()
            .flat_map(|m| m.mean.iter().map(|v| v.abs() + 10.0 * m.sigma))
            .fold(0.0_f64, f64::max);
        let k = modes.len().max(1);
        GaussianMixtureSpec {
            weights: vec![1.0 / k as f64; modes.len()],
            modes,
            dim,
            scale: extent.max(1.0),
            attribute_groups: Vec::new(),
        }
    }

    /// `n_modes` modes evenly spaced on a circle, mode `k` at angle
    /// `2 pi k / n_modes`. Tagged with `upper` (angles in `[0, pi)`) and
    /// `lower` half-ring attributes.
    pub fn ring(n_modes: usize, radius: f64, sigma: f64) -> Self {
        let modes = (0..n_modes)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / n_modes as f64;
                MixtureMode {
                    mean: vec![radius * a.cos(), radius * a.sin()],
                    sigma,
                }
            })
            .collect();
        let mut spec = Self::uniform(modes);
        let half = n_modes / 2;
        spec.attribute_groups = vec![
            ("upper".to_string(), (0..half).collect()),
            ("lower".to_string(), (half..n_modes).collect()),
        ];
        spec
    }

    /// `side x side` modes on a square lattice centred at the origin.
    pub fn grid(side: usize, spacing: f64, sigma: f64) -> Self {
        let offset = (side as f64 - 1.0) / 2.0;
        let mut modes = Vec::with_capacity(side * side);
        for i in 0..side {
            for j in 0..side {
                modes.push(MixtureMode {
                    mean: vec![(i as f64 - offset) * spacing, (j as f64 - offset) * spacing],
                    sigma,
                });
            }
        }
        Self::uniform(modes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() || self.modes.len() != self.weights.len() {
            return Err(Error::Config(format!(
                "mixture needs one weight per mode ({} modes, {} weights)",
                self.modes.len(),
                self.weights.len()
            )));
        }
        if self.dim == 0 || self.modes.iter().any(|m| m.mean.len() != self.dim) {
            return Err(Error::Config(
                "all mixture means must share a positive dimension".into(),
            ));
        }
        if self.modes.iter().any(|m| !(m.sigma >= 0.0 && m.sigma.is_finite())) {
            return Err(Error::Config("mixture sigmas must be finite and non-negative".into()));
        }
        if self.weights.iter().any(|w| w.is_nan() || *w < 0.0) {
            return Err(Error::Config("mixture weights must be non-negative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("mixture weights sum to {total}, not 1")));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config("mixture scale must be positive".into()));
        }
        for (name, group) in &self.attribute_groups {
            if group.iter().any(|&k| k >= self.modes.len()) {
                return Err(Error::Config(format!("attribute {name} names a missing mode")));
            }
        }
        Ok(())
    }

    /// Index of the nearest mode mean and the Euclidean distance to it, both
    /// in raw coordinates.
    pub fn nearest_mode(&self, point: &[f64]) -> (usize, f64) {
        self.modes
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let d2: f64 = m.mean.iter().zip(point).map(|(a, b)| (a - b) * (a - b)).sum();
                (k, d2.sqrt())
            })
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
    }

    /// How well normalized `points` (`[n, dim]`) cover the modes. A point
    /// counts for a mode when its nearest mean is within `n_sigma` standard
    /// deviations of that mode.
    pub fn coverage(&self, points: &Tensor, n_sigma: f64) -> Result<ModeCoverage> {
        if points.rank() != 2 || points.shape()[1] != self.dim {
            return Err(Error::dim("coverage", points.shape(), &[points.batch(), self.dim]));
        }
        let n = points.batch();
        let mut counts = vec![0usize; self.modes.len()];
        let mut raw = vec![0.0; self.dim];
        for i in 0..n {
            for (r, v) in raw.iter_mut().zip(points.row(i)) {
                *r = v * self.scale;
            }
            let (k, dist) = self.nearest_mode(&raw);
            if dist <= n_sigma * self.modes[k].sigma {
                counts[k] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        Ok(ModeCoverage {
            mode_fractions: counts.iter().map(|&c| c as f64 / n as f64).collect(),
            within: total as f64 / n as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeCoverage {
    /// Per mode, the fraction of all points that landed close to it.
    pub mode_fractions: Vec<f64>,
    /// Fraction of points close to some mode.
    pub within: f64,
}

impl ModeCoverage {
    pub fn min_mode_fraction(&self) -> f64 {
        self.mode_fractions.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Draw `n` samples; each label is the index of the generating mode.
pub fn sample_mixture(spec: &GaussianMixtureSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Config("sample_mixture needs n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = spec.modes.len() - 1;
        for (i, w) in spec.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let mode = &spec.modes[k];
        for &m in &mode.mean {
            let eps: f64 = rng.sample(StandardNormal);
            data.push(((m + mode.sigma * eps) / spec.scale).clamp(-1.0, 1.0));
        }
        labels.push(k as u32);
    }
    let items = Tensor::from_vec(vec![n, spec.dim], data)?;
    let mut ds = Dataset::new(items, Some(labels.clone()))?;
    ds.data_scale = spec.scale;
    for (name, group) in &spec.attribute_groups {
        let tags = labels.iter().map(|&l| group.contains(&(l as usize))).collect();
        ds.set_attribute(name, tags)?;
    }
    Ok(ds)
}
