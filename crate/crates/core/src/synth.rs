//! Synthetic embeddings with noisy labels, for demos, benches and
//! end-to-end checks of the cleaning workflow.
//!
//! Two Gaussian classes with unit variance sit at `±separation / 2` along
//! the all-ones direction. Observed labels are drawn first; the true label
//! is then the observed one flipped with a per-value error rate, the same
//! shape as audited annotation errors (many missed positives, few false
//! positives).

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::annotation::{AnnotationMatrix, ImageRecord, LabelValue, Split};
use crate::duplicates::EmbeddingStore;
use crate::error::Result;
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub dim: usize,
    pub separation: f64,
    /// Share of observed labels that are TRUE.
    pub observed_positive: f64,
    /// P(truth TRUE | observed FALSE).
    pub error_negative: f64,
    /// P(truth FALSE | observed TRUE).
    pub error_positive: f64,
    pub images_per_identity: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 50_000,
            dim: 8,
            separation: 4.0,
            observed_positive: 0.483,
            error_negative: 0.209,
            error_positive: 0.016,
            images_per_identity: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub attribute: String,
    pub store: EmbeddingStore,
    pub ids: Vec<String>,
    pub truth: Vec<bool>,
    pub observed: Vec<bool>,
}

pub fn image_id(i: usize) -> String {
    format!("{:06}.jpg", i + 1)
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    generate_with_prefix(cfg, "")
}

/// Like [`generate`], but with image ids prefixed so that several datasets
/// (e.g. a held-out test set) can share one store.
pub fn generate_with_prefix(cfg: &SynthConfig, prefix: &str) -> Result<SynthDataset> {
    let mut rng = seeded(derive_seed(cfg.seed, &[0x5e7]));
    let mut store = EmbeddingStore::new(cfg.dim);
    let shift = cfg.separation / 2.0 / (cfg.dim as f64).sqrt();
    let mut ids = Vec::with_capacity(cfg.n);
    let mut truth = Vec::with_capacity(cfg.n);
    let mut observed = Vec::with_capacity(cfg.n);
    let mut x = vec![0.0; cfg.dim];
    for i in 0..cfg.n {
        let obs = rng.random::<f64>() < cfg.observed_positive;
        let flip = if obs { cfg.error_positive } else { cfg.error_negative };
        let t = obs ^ (rng.random::<f64>() < flip);
        let sign = if t { 1.0 } else { -1.0 };
        for v in x.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = z + sign * shift;
        }
        let id = format!("{prefix}{}", image_id(i));
        let identity = format!("{prefix}p{:05}", i / cfg.images_per_identity.max(1));
        store.insert(&id, &identity, &x)?;
        ids.push(id);
        truth.push(t);
        observed.push(obs);
    }
    Ok(SynthDataset {
        attribute: "Mouth_Slightly_Open".to_string(),
        store,
        ids,
        truth,
        observed,
    })
}

impl SynthDataset {
    pub fn truth_of(&self, id: &str) -> Option<bool> {
        self.store.row(id).map(|r| self.truth[r])
    }

    pub fn truth_map(&self) -> BTreeMap<String, bool> {
        self.ids.iter().cloned().zip(self.truth.iter().copied()).collect()
    }

    pub fn observed_map(&self) -> BTreeMap<String, bool> {
        self.ids.iter().cloned().zip(self.observed.iter().copied()).collect()
    }

    /// Seed/uncleaned split: every image whose index is a multiple of
    /// `1 / seed_fraction` is cleaned (true label), the rest is not.
    pub fn seed_split(&self, seed_fraction: f64) -> (BTreeMap<String, LabelValue>, BTreeSet<String>) {
        let every = (1.0 / seed_fraction).round().max(1.0) as usize;
        let mut seed = BTreeMap::new();
        let mut rest = BTreeSet::new();
        for (i, id) in self.ids.iter().enumerate() {
            if i % every == 0 {
                seed.insert(id.clone(), LabelValue::from_bool(self.truth[i]));
            } else {
                rest.insert(id.clone());
            }
        }
        (seed, rest)
    }

    /// Observed labels as a one-attribute matrix, split 80/10/10.
    pub fn observed_matrix(&self) -> AnnotationMatrix {
        let mut m = AnnotationMatrix::new(vec![self.attribute.clone()]).expect("one attribute");
        let n = self.ids.len();
        for (i, id) in self.ids.iter().enumerate() {
            m.push_image(ImageRecord::new(id.clone()), &[LabelValue::from_bool(self.observed[i])])
                .expect("generated ids are unique");
            let split = if i * 10 < n * 8 {
                Split::Train
            } else if i * 10 < n * 9 {
                Split::Val
            } else {
                Split::Test
            };
            m.set_split(id, split).expect("image exists");
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rates_match_config() {
        let d = generate(&SynthConfig { n: 40_000, ..Default::default() }).unwrap();
        let obs_pos = d.observed.iter().filter(|b| **b).count();
        assert!((obs_pos as f64 / 40_000.0 - 0.483).abs() < 0.01);
        let neg_flips = d
            .observed
            .iter()
            .zip(&d.truth)
            .filter(|(o, t)| !**o && **t)
            .count();
        let rate = neg_flips as f64 / (40_000 - obs_pos) as f64;
        assert!((rate - 0.209).abs() < 0.015, "{rate}");
    }

    #[test]
    fn deterministic() {
        let cfg = SynthConfig { n: 500, ..Default::default() };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.store.vector(7), b.store.vector(7));
    }

    #[test]
    fn seed_split_partitions() {
        let d = generate(&SynthConfig { n: 1000, ..Default::default() }).unwrap();
        let (seed, rest) = d.seed_split(0.1);
        assert_eq!(seed.len(), 100);
        assert_eq!(rest.len(), 900);
        assert!(seed.keys().all(|k| !rest.contains(k)));
    }
}
