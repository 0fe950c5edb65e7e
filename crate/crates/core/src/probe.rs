//! Linear probe: L2-regularized logistic regression over embedding features,
//! trained with mini-batch SGD.
//!
//! Loss over a batch `B`:
//!
//! ```text
//! L(w, b) = 1/|B| * sum_i [ log(1 + exp(z_i)) - y_i z_i ] + l2/2 * |w|^2,   z_i = w.x_i + b
//! ```
//!
//! The bias is not regularized.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::duplicates::EmbeddingStore;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            learning_rate: 1e-2,
            batch_size: 128,
            l2: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be positive".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || self.l2.is_nan() || self.l2 < 0.0 {
            return Err(Error::InvalidArgument(
                "learning_rate must be positive and l2 nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
    pub final_train_loss: f64,
    /// All training labels were equal; the model predicts that class.
    pub constant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub meta: TrainMeta,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub probability: f64,
    pub label: bool,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Regularized loss and its gradient `(dL/dw, dL/db)` over `rows`.
pub fn loss_and_gradient(
    weights: &[f64],
    bias: f64,
    rows: &[&[f64]],
    labels: &[bool],
    l2: f64,
) -> (f64, Vec<f64>, f64) {
    let n = rows.len() as f64;
    let mut grad_w = vec![0.0; weights.len()];
    let mut grad_b = 0.0;
    let mut loss = 0.0;
    for (x, &y) in rows.iter().zip(labels) {
        let z = dot(weights, x) + bias;
        let y = y as u8 as f64;
        loss += softplus(z) - y * z;
        let r = sigmoid(z) - y;
        for (g, xi) in grad_w.iter_mut().zip(x.iter()) {
            *g += r * xi;
        }
        grad_b += r;
    }
    let reg: f64 = weights.iter().map(|w| w * w).sum::<f64>() * 0.5 * l2;
    for (g, w) in grad_w.iter_mut().zip(weights) {
        *g = *g / n + l2 * w;
    }
    (loss / n + reg, grad_w, grad_b / n)
}

/// Trains on rows of `store` given by index. Deterministic in
/// `(config.seed, rows order)`.
pub fn train_rows(
    store: &EmbeddingStore,
    rows: &[usize],
    labels: &[bool],
    config: &TrainConfig,
) -> Result<ProbeModel> {
    config.validate()?;
    if rows.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if rows.len() != labels.len() {
        return Err(Error::InvalidArgument("rows and labels differ in length".into()));
    }
    let dim = store.dim();
    let meta = |final_train_loss: f64, constant: bool| TrainMeta {
        epochs: config.epochs,
        learning_rate: config.learning_rate,
        batch_size: config.batch_size,
        l2: config.l2,
        seed: config.seed,
        final_train_loss,
        constant,
    };

    let positives = labels.iter().filter(|l| **l).count();
    if positives == 0 || positives == labels.len() {
        let class = positives > 0;
        log::warn!("SINGLE_CLASS: all {} training labels are {class}; returning a constant predictor", labels.len());
        // sigmoid(+-10) is within 5e-5 of the class
        let bias = if class { 10.0 } else { -10.0 };
        let loss = softplus(bias) - if class { bias } else { 0.0 };
        return Ok(ProbeModel {
            weights: vec![0.0; dim],
            bias,
            meta: meta(loss, true),
        });
    }

    let features: Vec<&[f64]> = rows.iter().map(|&r| store.vector(r)).collect();
    let mut weights = vec![0.0; dim];
    let mut bias = 0.0;
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut r = rng::seeded(config.seed);
    let mut batch_x: Vec<&[f64]> = Vec::with_capacity(config.batch_size);
    let mut batch_y: Vec<bool> = Vec::with_capacity(config.batch_size);
    for _ in 0..config.epochs {
        rng::shuffle(&mut r, &mut order);
        for chunk in order.chunks(config.batch_size) {
            batch_x.clear();
            batch_y.clear();
            batch_x.extend(chunk.iter().map(|&i| features[i]));
            batch_y.extend(chunk.iter().map(|&i| labels[i]));
            let (_, gw, gb) = loss_and_gradient(&weights, bias, &batch_x, &batch_y, config.l2);
            for (w, g) in weights.iter_mut().zip(&gw) {
                *w -= config.learning_rate * g;
            }
            bias -= config.learning_rate * gb;
        }
    }
    let (loss, _, _) = loss_and_gradient(&weights, bias, &features, labels, config.l2);
    Ok(ProbeModel {
        weights,
        bias,
        meta: meta(loss, false),
    })
}

/// Trains on labeled image ids. Ids are processed in map order.
pub fn train(
    store: &EmbeddingStore,
    labels: &BTreeMap<String, bool>,
    config: &TrainConfig,
) -> Result<ProbeModel> {
    let mut rows = Vec::with_capacity(labels.len());
    let mut ys = Vec::with_capacity(labels.len());
    for (id, &y) in labels {
        rows.push(store.row(id).ok_or_else(|| Error::MissingEmbedding(id.clone()))?);
        ys.push(y);
    }
    train_rows(store, &rows, &ys, config)
}

impl ProbeModel {
    fn check_dim(&self, dim: usize) -> Result<()> {
        if dim != self.weights.len() {
            return Err(Error::DimMismatch {
                expected: self.weights.len(),
                actual: dim,
            });
        }
        Ok(())
    }

    /// Probability and hard label; a probability of exactly 0.5 is TRUE.
    pub fn predict_vector(&self, x: &[f64]) -> Prediction {
        let probability = sigmoid(dot(&self.weights, x) + self.bias);
        Prediction {
            probability,
            label: probability >= 0.5,
        }
    }

    pub fn predict_row(&self, store: &EmbeddingStore, row: usize) -> bool {
        self.predict_vector(store.vector(row)).label
    }

    pub fn predict(
        &self,
        store: &EmbeddingStore,
        ids: &[String],
    ) -> Result<BTreeMap<String, Prediction>> {
        self.check_dim(store.dim())?;
        ids.iter()
            .map(|id| {
                let x = store.get(id).ok_or_else(|| Error::MissingEmbedding(id.clone()))?;
                Ok((id.clone(), self.predict_vector(x)))
            })
            .collect()
    }

    /// Fraction of ids whose hard label equals the given label.
    pub fn evaluate(&self, store: &EmbeddingStore, labels: &BTreeMap<String, bool>) -> Result<f64> {
        if labels.is_empty() {
            return Err(Error::EmptyEvalSet);
        }
        self.check_dim(store.dim())?;
        let mut correct = 0usize;
        for (id, &y) in labels {
            let x = store.get(id).ok_or_else(|| Error::MissingEmbedding(id.clone()))?;
            correct += (self.predict_vector(x).label == y) as usize;
        }
        Ok(correct as f64 / labels.len() as f64)
    }

    /// Model file: `key<TAB>value` header lines, `weights`, then one weight
    /// per line.
    pub fn to_text(&self) -> String {
        let m = &self.meta;
        let mut out = format!(
            "dim\t{}\nbias\t{}\nepochs\t{}\nlearning_rate\t{}\nbatch_size\t{}\nl2\t{}\nseed\t{}\nfinal_train_loss\t{}\nconstant\t{}\nweights\n",
            self.weights.len(),
            self.bias,
            m.epochs,
            m.learning_rate,
            m.batch_size,
            m.l2,
            m.seed,
            m.final_train_loss,
            m.constant as u8
        );
        for w in &self.weights {
            out.push_str(&format!("{w}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut header = BTreeMap::new();
        let mut weights = Vec::new();
        let mut in_weights = false;
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Parse {
                line: idx + 1,
                message: format!("unexpected {line:?}"),
            };
            if in_weights {
                weights.push(line.parse::<f64>().map_err(|_| bad())?);
            } else if line == "weights" {
                in_weights = true;
            } else {
                let (k, v) = line.split_once('\t').ok_or_else(bad)?;
                header.insert(k.to_string(), v.to_string());
            }
        }
        fn field<T: std::str::FromStr>(h: &BTreeMap<String, String>, k: &str) -> Result<T> {
            h.get(k).and_then(|v| v.parse().ok()).ok_or(Error::Parse {
                line: 0,
                message: format!("missing or bad {k}"),
            })
        }
        let dim: usize = field(&header, "dim")?;
        if dim != weights.len() {
            return Err(Error::DimMismatch {
                expected: dim,
                actual: weights.len(),
            });
        }
        Ok(ProbeModel {
            weights,
            bias: field(&header, "bias")?,
            meta: TrainMeta {
                epochs: field(&header, "epochs")?,
                learning_rate: field(&header, "learning_rate")?,
                batch_size: field(&header, "batch_size")?,
                l2: field(&header, "l2")?,
                seed: field(&header, "seed")?,
                final_train_loss: field(&header, "final_train_loss")?,
                constant: field::<u8>(&header, "constant")? == 1,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn blobs(n: usize, seed: u64) -> (EmbeddingStore, BTreeMap<String, bool>) {
        // two clusters at (+-2, +-2) with points within radius 0.5:
        // the line x + y = 0 separates them with margin > 1
        let mut r = rng::seeded(seed);
        let mut store = EmbeddingStore::new(2);
        let mut labels = BTreeMap::new();
        for i in 0..n {
            let y = i % 2 == 0;
            let c = if y { 2.0 } else { -2.0 };
            let dx = rng::unit_f64(&mut r) - 0.5;
            let dy = rng::unit_f64(&mut r) - 0.5;
            let id = format!("p{i:04}");
            store.insert(&id, "x", &[c + dx, c + dy]).unwrap();
            labels.insert(id, y);
        }
        (store, labels)
    }

    #[test]
    fn separable_blobs_fit_perfectly() {
        let (store, labels) = blobs(200, 1);
        // the hand-built separator w = (1, 1), b = 0 classifies every point
        let separator = ProbeModel {
            weights: vec![1.0, 1.0],
            bias: 0.0,
            meta: TrainMeta {
                epochs: 0,
                learning_rate: 0.0,
                batch_size: 0,
                l2: 0.0,
                seed: 0,
                final_train_loss: 0.0,
                constant: false,
            },
        };
        assert_eq!(separator.evaluate(&store, &labels).unwrap(), 1.0);
        let model = train(&store, &labels, &TrainConfig::default()).unwrap();
        assert_eq!(model.evaluate(&store, &labels).unwrap(), 1.0);
        assert!(model.meta.final_train_loss.is_finite());
    }

    #[test]
    fn coin_flip_labels_are_near_chance() {
        for seed in 0..5u64 {
            let mut r = rng::seeded(100 + seed);
            let mut store = EmbeddingStore::new(4);
            let mut train_set = BTreeMap::new();
            let mut test_set = BTreeMap::new();
            for i in 0..2000 {
                let v: Vec<f64> = (0..4).map(|_| rng::unit_f64(&mut r) * 2.0 - 1.0 + 1e-9).collect();
                let id = format!("p{i}");
                store.insert(&id, "x", &v).unwrap();
                let y = rng::unit_f64(&mut r) < 0.5;
                if i < 1000 {
                    train_set.insert(id, y);
                } else {
                    test_set.insert(id, y);
                }
            }
            let cfg = TrainConfig { seed, ..Default::default() };
            let model = train(&store, &train_set, &cfg).unwrap();
            let acc = model.evaluate(&store, &test_set).unwrap();
            assert!((0.4..=0.6).contains(&acc), "seed {seed}: {acc}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (store, labels) = blobs(300, 2);
        let cfg = TrainConfig { seed: 7, ..Default::default() };
        let a = train(&store, &labels, &cfg).unwrap();
        let b = train(&store, &labels, &cfg).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.bias.to_bits(), b.bias.to_bits());
    }

    #[test]
    fn single_class_gives_constant_model() {
        let (store, mut labels) = blobs(10, 3);
        labels.values_mut().for_each(|v| *v = false);
        let m = train(&store, &labels, &TrainConfig::default()).unwrap();
        assert!(m.meta.constant);
        assert_eq!(m.evaluate(&store, &labels).unwrap(), 1.0);
    }

    #[test]
    fn empty_sets() {
        let (store, _) = blobs(4, 3);
        let empty = BTreeMap::new();
        assert_eq!(
            train(&store, &empty, &TrainConfig::default()).unwrap_err().code(),
            "EMPTY_TRAINING_SET"
        );
        let m = ProbeModel::from_text("dim\t2\nbias\t0\nepochs\t1\nlearning_rate\t0.1\nbatch_size\t1\nl2\t0\nseed\t0\nfinal_train_loss\t0\nconstant\t0\nweights\n0\n0\n").unwrap();
        assert_eq!(m.evaluate(&store, &empty).unwrap_err().code(), "EMPTY_EVAL_SET");
    }

    #[test]
    fn zero_model_ties_to_true() {
        let (store, labels) = blobs(10, 4);
        let m = ProbeModel::from_text("dim\t2\nbias\t0\nepochs\t1\nlearning_rate\t0.1\nbatch_size\t1\nl2\t0\nseed\t0\nfinal_train_loss\t0\nconstant\t0\nweights\n0\n0\n").unwrap();
        let ids: Vec<String> = labels.keys().cloned().collect();
        for p in m.predict(&store, &ids).unwrap().values() {
            assert_eq!(p.probability, 0.5);
            assert!(p.label);
        }
        // balanced labels against a constant predictor
        assert_eq!(m.evaluate(&store, &labels).unwrap(), 0.5);
    }

    #[test]
    fn saturation_and_symmetry() {
        assert!(sigmoid(10.0) > 0.9999);
        let m = ProbeModel {
            weights: vec![0.3, -1.2],
            bias: 0.0,
            meta: TrainMeta {
                epochs: 0,
                learning_rate: 0.0,
                batch_size: 0,
                l2: 0.0,
                seed: 0,
                final_train_loss: 0.0,
                constant: false,
            },
        };
        let p = m.predict_vector(&[1.5, 0.25]).probability;
        let q = m.predict_vector(&[-1.5, -0.25]).probability;
        assert!((p + q - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dim_mismatch() {
        let (store, labels) = blobs(10, 5);
        let m = ProbeModel::from_text("dim\t3\nbias\t0\nepochs\t1\nlearning_rate\t0.1\nbatch_size\t1\nl2\t0\nseed\t0\nfinal_train_loss\t0\nconstant\t0\nweights\n0\n0\n0\n").unwrap();
        let ids: Vec<String> = labels.keys().cloned().collect();
        assert_eq!(m.predict(&store, &ids).unwrap_err().code(), "DIM_MISMATCH");
    }

    #[test]
    fn model_file_round_trip() {
        let (store, labels) = blobs(100, 6);
        let m = train(&store, &labels, &TrainConfig::default()).unwrap();
        assert_eq!(ProbeModel::from_text(&m.to_text()).unwrap(), m);
    }

    proptest! {
        #[test]
        fn scaling_preserves_labels(
            w in proptest::collection::vec(-3.0f64..3.0, 3),
            b in -2.0f64..2.0,
            xs in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 1..20),
            c in 1.0f64..50.0,
        ) {
            let meta = TrainMeta { epochs: 0, learning_rate: 0.0, batch_size: 0, l2: 0.0, seed: 0, final_train_loss: 0.0, constant: false };
            let m = ProbeModel { weights: w.clone(), bias: b, meta: meta.clone() };
            let scaled = ProbeModel { weights: w.iter().map(|x| x * c).collect(), bias: b * c, meta };
            for x in &xs {
                let z = dot(&w, x) + b;
                // labels can only flip through rounding when z is ~0
                prop_assume!(z.abs() > 1e-9);
                prop_assert_eq!(m.predict_vector(x).label, scaled.predict_vector(x).label);
            }
        }
    }
}
