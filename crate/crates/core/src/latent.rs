//! Working in the learned latent space: encoding datasets, cluster purity,
//! attribute arithmetic, interpolation and cross-domain translation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::networks::IganModel;
use crate::tensor::Tensor;

/// Encoded latents of a dataset, with the labels and attributes of their
/// source items.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSet {
    /// `[n, latent_dim]`
    pub latents: Tensor,
    pub source_ids: Vec<usize>,
    pub labels: Option<Vec<u32>>,
    pub attributes: BTreeMap<String, Vec<bool>>,
}

impl LatentSet {
    pub fn new(latents: Tensor, labels: Option<Vec<u32>>) -> Result<Self> {
        if latents.rank() != 2 {
            return Err(Error::Contract(format!(
                "latents must be [n, latent_dim], got {:?}",
                latents.shape()
            )));
        }
        let n = latents.batch();
        if labels.as_ref().is_some_and(|l| l.len() != n) {
            return Err(Error::Contract(format!("{n} latents but a different number of labels")));
        }
        Ok(LatentSet {
            latents,
            source_ids: (0..n).collect(),
            labels,
            attributes: BTreeMap::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.source_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_ids.is_empty()
    }

    pub fn latent_dim(&self) -> usize {
        self.latents.shape()[1]
    }
}

/// `E(x)` for every item, in dataset order, evaluated in chunks of `batch`.
pub fn encode_dataset(model: &IganModel, dataset: &Dataset, batch: usize) -> Result<LatentSet> {
    if batch == 0 {
        return Err(Error::Contract("encode_dataset needs batch >= 1".into()));
    }
    let n = dataset.len();
    let mut data = Vec::with_capacity(n * model.arch.latent_dim);
    for start in (0..n).step_by(batch) {
        let idx: Vec<usize> = (start..(start + batch).min(n)).collect();
        let x = dataset.items().select_rows(&idx)?;
        data.extend_from_slice(model.forward_e(&x)?.data());
    }
    let latents = Tensor::from_vec(vec![n, model.arch.latent_dim], data)?;
    let mut set = LatentSet::new(latents, dataset.labels.clone())?;
    set.attributes = dataset.attributes.clone();
    Ok(set)
}

fn squared_distances(latents: &Tensor) -> Vec<f64> {
    let n = latents.batch();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = latents
                .row(i)
                .iter()
                .zip(latents.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

/// For every item, the indices of its `k` nearest other items. Distance ties
/// go to the lower index.
fn neighbours(latents: &Tensor, k: usize) -> Vec<Vec<usize>> {
    let n = latents.batch();
    let d = squared_distances(latents);
    (0..n)
        .map(|i| {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let order = |&a: &usize, &b: &usize| d[i * n + a].total_cmp(&d[i * n + b]).then(a.cmp(&b));
            if k < others.len() {
                others.select_nth_unstable_by(k, order);
                others.truncate(k);
            }
            others.sort_by(order);
            others
        })
        .collect()
}

fn purity_with(neigh: &[Vec<usize>], labels: &[u32]) -> f64 {
    let mut pure = 0usize;
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for (i, nb) in neigh.iter().enumerate() {
        counts.clear();
        for &j in nb {
            *counts.entry(labels[j]).or_default() += 1;
        }
        // BTreeMap iterates labels in increasing order, so the first maximum
        // is the smallest label among ties.
        let mut best = (0u32, 0usize);
        for (&label, &c) in &counts {
            if c > best.1 {
                best = (label, c);
            }
        }
        if best.0 == labels[i] {
            pure += 1;
        }
    }
    pure as f64 / neigh.len() as f64
}

fn check_purity_args(latents: &LatentSet, k: usize) -> Result<&[u32]> {
    let labels = latents
        .labels
        .as_deref()
        .ok_or_else(|| Error::Contract("knn purity needs labels".into()))?;
    if k == 0 || k >= latents.len() {
        return Err(Error::Contract(format!(
            "knn purity needs 0 < k < n, got k = {k} with n = {}",
            latents.len()
        )));
    }
    Ok(labels)
}

/// Fraction of items whose label equals the majority label among their `k`
/// nearest neighbours (Euclidean, self excluded). Majority ties go to the
/// smaller label.
pub fn knn_purity(latents: &LatentSet, k: usize) -> Result<f64> {
    let labels = check_purity_args(latents, k)?;
    Ok(purity_with(&neighbours(&latents.latents, k), labels))
}

/// Mean and standard deviation of [`knn_purity`] over `permutations` random
/// shuffles of the labels. This is the purity expected from latents that
/// carry no label information.
pub fn shuffled_purity_baseline(latents: &LatentSet, k: usize, permutations: usize, seed: u64) -> Result<(f64, f64)> {
    let labels = check_purity_args(latents, k)?;
    if permutations == 0 {
        return Err(Error::Contract("baseline needs at least one permutation".into()));
    }
    let neigh = neighbours(&latents.latents, k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = labels.to_vec();
    let values: Vec<f64> = (0..permutations)
        .map(|_| {
            shuffled.shuffle(&mut rng);
            purity_with(&neigh, &shuffled)
        })
        .collect();
    let mean = values.iter().sum::<f64>() / permutations as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / permutations as f64;
    Ok((mean, var.sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeVector {
    pub name: String,
    /// `[latent_dim]`
    pub mean_latent: Tensor,
    pub support_count: usize,
}

/// Mean latent over the items tagged with `name`.
pub fn attribute_vector(latents: &LatentSet, name: &str) -> Result<AttributeVector> {
    let tags = latents
        .attributes
        .get(name)
        .ok_or_else(|| Error::Contract(format!("no attribute named {name:?}")))?;
    let d = latents.latent_dim();
    let mut mean = vec![0.0; d];
    let mut count = 0usize;
    for (i, _) in tags.iter().enumerate().filter(|(_, &t)| t) {
        for (m, v) in mean.iter_mut().zip(latents.latents.row(i)) {
            *m += v;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::Contract(format!("attribute {name:?} tags no item")));
    }
    for m in &mut mean {
        *m /= count as f64;
    }
    Ok(AttributeVector {
        name: name.to_string(),
        mean_latent: Tensor::from_vec(vec![d], mean)?,
        support_count: count,
    })
}

/// `G(E(x) - minus + plus)`. The offset `plus - minus` is formed first, so
/// equal vectors give exactly `G(E(x))`.
pub fn apply_attribute(
    model: &IganModel,
    x: &Tensor,
    minus: &AttributeVector,
    plus: &AttributeVector,
) -> Result<Tensor> {
    let d = model.arch.latent_dim;
    for v in [minus, plus] {
        if v.mean_latent.shape() != [d] {
            return Err(Error::dim("apply_attribute", v.mean_latent.shape(), &[d]));
        }
    }
    let offset = plus.mean_latent.zip_map(&minus.mean_latent, |p, m| p - m)?;
    let mut z = model.forward_e(x)?;
    for row in z.data_mut().chunks_exact_mut(d) {
        for (v, o) in row.iter_mut().zip(offset.data()) {
            *v += o;
        }
    }
    model.forward_g(&z)
}

/// `G((1 - t) z0 + t z1)` for `steps` evenly spaced `t` from 0 to 1.
/// `z0` and `z1` are `[b, latent_dim]`; each output is a batch of `b` items.
pub fn interpolate(model: &IganModel, z0: &Tensor, z1: &Tensor, steps: usize) -> Result<Vec<Tensor>> {
    if steps < 2 {
        return Err(Error::Contract(format!(
            "interpolation needs at least 2 steps, got {steps}"
        )));
    }
    if z0.shape() != z1.shape() {
        return Err(Error::dim("interpolate", z0.shape(), z1.shape()));
    }
    (0..steps)
        .map(|i| {
            let t = i as f64 / (steps - 1) as f64;
            let z = z0.zip_map(z1, |a, b| (1.0 - t) * a + t * b)?;
            model.forward_g(&z)
        })
        .collect()
}

fn check_shared_latent(a: &IganModel, b: &IganModel) -> Result<()> {
    if a.arch.latent_dim != b.arch.latent_dim {
        return Err(Error::Contract(format!(
            "domains do not share a latent space: latent_dim {} vs {}",
            a.arch.latent_dim, b.arch.latent_dim
        )));
    }
    Ok(())
}

/// `G_b(E_a(x_a))`
pub fn translate(model_a: &IganModel, model_b: &IganModel, x_a: &Tensor) -> Result<Tensor> {
    check_shared_latent(model_a, model_b)?;
    model_b.forward_g(&model_a.forward_e(x_a)?)
}

/// `G_a(E_b(G_b(E_a(x_a))))`
pub fn round_trip(model_a: &IganModel, model_b: &IganModel, x_a: &Tensor) -> Result<Tensor> {
    let x_b = translate(model_a, model_b, x_a)?;
    translate(model_b, model_a, &x_b)
}

/// CSV text with header `id,label,z0,...`. Values use the shortest decimal
/// form that parses back to the same `f64`.
pub fn latents_csv(latents: &LatentSet) -> String {
    let d = latents.latent_dim();
    let mut out = String::from("id,label");
    for j in 0..d {
        write!(out, ",z{j}").unwrap();
    }
    out.push('\n');
    for (i, id) in latents.source_ids.iter().enumerate() {
        write!(out, "{id},").unwrap();
        if let Some(l) = &latents.labels {
            write!(out, "{}", l[i]).unwrap();
        }
        for v in latents.latents.row(i) {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn export_latents_csv(latents: &LatentSet, path: &Path) -> Result<()> {
    std::fs::write(path, latents_csv(latents)).map_err(|e| Error::io(path, e))
}

/// Inverse of [`latents_csv`].
pub fn parse_latents_csv(text: &str) -> Result<LatentSet> {
    let bad = |msg: String| Error::Data(format!("latent csv: {msg}"));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "id" || cols[1] != "label" {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let d = cols.len() - 2;
    let (mut ids, mut labels, mut data) = (Vec::new(), Vec::new(), Vec::new());
    let mut any_label = false;
    for (ln, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != d + 2 {
            return Err(bad(format!("row {} has {} fields", ln + 1, f.len())));
        }
        ids.push(f[0].parse::<usize>().map_err(|e| bad(e.to_string()))?);
        if !f[1].is_empty() {
            any_label = true;
            labels.push(f[1].parse::<u32>().map_err(|e| bad(e.to_string()))?);
        }
        for v in &f[2..] {
            data.push(v.parse::<f64>().map_err(|e| bad(e.to_string()))?);
        }
    }
    if any_label && labels.len() != ids.len() {
        return Err(bad("labels present on some rows only".into()));
    }
    if ids.is_empty() {
        return Err(bad("no rows".into()));
    }
    let latents = Tensor::from_vec(vec![ids.len(), d], data)?;
    let mut set = LatentSet::new(latents, any_label.then_some(labels))?;
    set.source_ids = ids;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(rows: &[Vec<f64>], labels: Option<Vec<u32>>) -> LatentSet {
        LatentSet::new(Tensor::from_rows(rows).unwrap(), labels).unwrap()
    }

    #[test]
    fn single_class_is_pure() {
        let s = set(&[vec![0.0], vec![1.0], vec![5.0], vec![2.0]], Some(vec![3; 4]));
        assert_eq!(knn_purity(&s, 2).unwrap(), 1.0);
    }

    #[test]
    fn duplicates_with_k1_are_pure() {
        let s = set(
            &[vec![0.0, 0.0], vec![0.0, 0.0], vec![0.1, 0.0], vec![0.1, 0.0]],
            Some(vec![0, 0, 1, 1]),
        );
        assert_eq!(knn_purity(&s, 1).unwrap(), 1.0);
    }

    #[test]
    fn majority_ties_go_to_smaller_label() {
        // Points -1, 0, 1 with k = 2: the middle item sees one neighbour from
        // each side, the outer items see the middle and the far side.
        let s = set(&[vec![0.0], vec![-1.0], vec![1.0]], None);
        let neigh = neighbours(&s.latents, 2);
        assert_eq!(neigh[0], vec![1, 2]);
        assert_eq!(neigh[1], vec![0, 2]);
        // Ties resolve to label 0: items 0 and 1 are pure, item 2 is not.
        assert_eq!(purity_with(&neigh, &[0, 0, 2]), 2.0 / 3.0);
        // Same geometry with the labels swapped: every tie now goes against
        // the item.
        assert_eq!(purity_with(&neigh, &[2, 2, 0]), 0.0);
    }

    #[test]
    fn purity_errors() {
        let s = set(&[vec![0.0], vec![1.0]], None);
        assert!(matches!(knn_purity(&s, 1), Err(Error::Contract(_))));
        let s = set(&[vec![0.0], vec![1.0]], Some(vec![0, 1]));
        assert!(knn_purity(&s, 2).is_err());
        assert!(knn_purity(&s, 0).is_err());
    }

    #[test]
    fn attribute_means() {
        let mut s = set(&[vec![1.0, 0.0], vec![9.0, 9.0], vec![3.0, 0.0]], None);
        s.attributes.insert("a".into(), vec![true, false, true]);
        s.attributes.insert("one".into(), vec![false, true, false]);
        s.attributes.insert("none".into(), vec![false; 3]);
        let a = attribute_vector(&s, "a").unwrap();
        assert_eq!(a.mean_latent.data(), &[2.0, 0.0]);
        assert_eq!(a.support_count, 2);
        assert_eq!(attribute_vector(&s, "one").unwrap().mean_latent.data(), &[9.0, 9.0]);
        assert!(matches!(attribute_vector(&s, "none"), Err(Error::Contract(_))));
        assert!(attribute_vector(&s, "missing").is_err());
    }

    #[test]
    fn csv_round_trip_and_empty_labels() {
        let s = set(&[vec![0.1, -1.0 / 3.0], vec![1e-300, 2.5e10]], None);
        let text = latents_csv(&s);
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("id,label,z0,z1\n0,,"));
        assert_eq!(parse_latents_csv(&text).unwrap(), s);

        let s = set(&[vec![std::f64::consts::PI]], Some(vec![4]));
        assert_eq!(parse_latents_csv(&latents_csv(&s)).unwrap(), s);
    }
}
