//! Datasets and file formats: Gaussian mixtures, IDX images, PGM/PPM grids,
//! prior sampling and the attribute sidecar CSV.

mod idx;
mod mixture;
mod pnm;

pub use idx::{load_idx_images, parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels, IdxError};
pub use mixture::{sample_mixture, GaussianMixtureSpec, MixtureMode, ModeCoverage};
pub use pnm::{byte_to_unit, export_grid, grid_bytes, unit_to_byte};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Items normalized to `[-1, 1]`, stacked along the leading axis, with
/// optional evaluation-only labels and attribute tags.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    items: Tensor,
    pub labels: Option<Vec<u32>>,
    pub attributes: BTreeMap<String, Vec<bool>>,
    /// Multiply normalized items by this to recover raw coordinates.
    pub data_scale: f64,
}

impl Dataset {
    pub fn new(items: Tensor, labels: Option<Vec<u32>>) -> Result<Self> {
        if items.rank() < 2 {
            return Err(Error::Data(format!(
                "dataset items need a leading item axis, got shape {:?}",
                items.shape()
            )));
        }
        if items.data().iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::Data("dataset items must lie in [-1, 1]".into()));
        }
        if let Some(l) = &labels {
            if l.len() != items.batch() {
                return Err(Error::Data(format!("{} labels for {} items", l.len(), items.batch())));
            }
        }
        Ok(Dataset {
            items,
            labels,
            attributes: BTreeMap::new(),
            data_scale: 1.0,
        })
    }

    /// The training view: items only.
    pub fn items(&self) -> &Tensor {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn item_shape(&self) -> &[usize] {
        &self.items.shape()[1..]
    }

    pub fn set_attribute(&mut self, name: &str, tags: Vec<bool>) -> Result<()> {
        if tags.len() != self.len() {
            return Err(Error::Data(format!(
                "attribute {name}: {} tags for {} items",
                tags.len(),
                self.len()
            )));
        }
        self.attributes.insert(name.to_string(), tags);
        Ok(())
    }

    /// Indices of items tagged with `name`.
    pub fn with_attribute(&self, name: &str) -> Option<Vec<usize>> {
        self.attributes
            .get(name)
            .map(|tags| tags.iter().enumerate().filter(|(_, &t)| t).map(|(i, _)| i).collect())
    }

    /// Raw-coordinate view of normalized samples.
    pub fn denormalize(&self, x: &Tensor) -> Tensor {
        x.map(|v| v * self.data_scale)
    }

    /// Subset of items (labels and attributes follow).
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let items = self.items.select_rows(indices)?;
        let labels = self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect());
        let attributes = self
            .attributes
            .iter()
            .map(|(k, v)| (k.clone(), indices.iter().map(|&i| v[i]).collect()))
            .collect();
        Ok(Dataset {
            items,
            labels,
            attributes,
            data_scale: self.data_scale,
        })
    }

    /// Permute items with a stream independent of the one that sampled them.
    pub fn shuffled(&self, seed: u64) -> Result<Dataset> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        self.subset(&order)
    }

    /// Attach tags from a sidecar CSV with header `index,name,value`.
    pub fn load_attributes(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tags = parse_attribute_csv(&text, self.len())?;
        for (name, v) in tags {
            self.set_attribute(&name, v)?;
        }
        Ok(())
    }
}

/// Parse `index,name,value` rows into per-attribute tag vectors of length `n`.
/// Items not mentioned for an attribute are untagged.
pub fn parse_attribute_csv(text: &str, n: usize) -> Result<BTreeMap<String, Vec<bool>>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("index,name,value") {
        return Err(Error::Data(
            "attribute CSV must start with header index,name,value".into(),
        ));
    }
    let mut out: BTreeMap<String, Vec<bool>> = BTreeMap::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = || Error::Data(format!("attribute CSV line {}: {line:?}", lineno + 2));
        let mut parts = line.split(',');
        let (Some(i), Some(name), Some(v), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(bad());
        };
        let i: usize = i.trim().parse().map_err(|_| bad())?;
        if i >= n {
            return Err(bad());
        }
        let v = match v.trim() {
            "0" => false,
            "1" => true,
            _ => return Err(bad()),
        };
        out.entry(name.trim().to_string()).or_insert_with(|| vec![false; n])[i] = v;
    }
    Ok(out)
}

pub fn attribute_csv(attributes: &BTreeMap<String, Vec<bool>>) -> String {
    let mut s = String::from("index,name,value\n");
    for (name, tags) in attributes {
        for (i, &t) in tags.iter().enumerate() {
            let _ = writeln!(s, "{i},{name},{}", u8::from(t));
        }
    }
    s
}

/// `n` i.i.d. standard normal latents, `[n, latent_dim]`.
pub fn sample_prior(latent_dim: usize, n: usize, seed: u64) -> Tensor {
    sample_prior_with(&mut ChaCha8Rng::seed_from_u64(seed), latent_dim, n)
}

pub fn sample_prior_with<R: Rng + ?Sized>(rng: &mut R, latent_dim: usize, n: usize) -> Tensor {
    let data = (0..n * latent_dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::from_vec(vec![n, latent_dim], data).expect("prior shape")
}
