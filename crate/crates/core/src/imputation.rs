//! Feature-based relevance imputation.
//!
//! A feed-forward scoring head stands in for the PLM cross-encoder: a
//! deterministic synthetic encoder maps each query-document pair to a dense
//! feature vector from which the true relevance is recoverable with bounded
//! noise, and a sigmoid-headed MLP is fit to top-1 randomization clicks with
//! cross-entropy. The result is the low-variance but biased estimator the
//! doubly robust combination leans on for tail queries.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mlp::{Activation, Gradients, MlpError, MlpModel};
use crate::rng::derive_stream;
use crate::sim::{QueryCatalog, RandRecord};

/// Output clamp inside the log-loss; predictions themselves stay raw sigmoid.
const LOSS_EPS: f64 = 1e-12;

/// Maps a query-document pair to a fixed-dimension feature vector.
pub trait FeatureEncoder {
    fn dim(&self) -> usize;
    /// Same pair always yields the same vector. Unknown pairs encode to zero.
    fn encode(&self, query_id: u64, doc_id: u64) -> Vec<f64>;
}

/// Default synthetic encoder: 16 features per pair, derived from the pair's
/// feature seed. The first four are noisy monotone transforms of the true
/// relevance; the rest are distractor noise. This preserves the premise that
/// semantics predict relevance imperfectly, at desk scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticEncoder {
    pairs: HashMap<(u64, u64), (f64, u64)>,
    noise: f64,
}

pub const SYNTHETIC_FEATURE_DIM: usize = 16;

impl SyntheticEncoder {
    pub fn from_catalog(catalog: &QueryCatalog) -> Self {
        Self::with_noise(catalog, 0.08)
    }

    pub fn with_noise(catalog: &QueryCatalog, noise: f64) -> Self {
        let mut pairs = HashMap::new();
        for q in &catalog.queries {
            for d in &q.documents {
                pairs.insert((q.query_id, d.doc_id), (d.relevance, d.feature_seed));
            }
        }
        Self { pairs, noise }
    }
}

impl FeatureEncoder for SyntheticEncoder {
    fn dim(&self) -> usize {
        SYNTHETIC_FEATURE_DIM
    }

    fn encode(&self, query_id: u64, doc_id: u64) -> Vec<f64> {
        let Some(&(gamma, seed)) = self.pairs.get(&(query_id, doc_id)) else {
            return vec![0.0; SYNTHETIC_FEATURE_DIM];
        };
        let mut rng = derive_stream(seed, 4);
        let mut jitter = |scale: f64| (rng.gen::<f64>() * 2.0 - 1.0) * scale;
        let mut x = Vec::with_capacity(SYNTHETIC_FEATURE_DIM);
        x.push(gamma + jitter(self.noise));
        x.push(gamma * gamma + jitter(self.noise));
        x.push(gamma.sqrt() + jitter(self.noise));
        x.push(2.0 * gamma - 1.0 + jitter(self.noise));
        while x.len() < SYNTHETIC_FEATURE_DIM {
            x.push(jitter(1.0));
        }
        x
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Multiplicative learning-rate decay applied once per epoch; 1.0 keeps
    /// the rate flat.
    pub epoch_decay: f64,
    /// L2 penalty on the weights (not biases); shrinks what the data cannot
    /// support toward zero.
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.1,
            warmup_steps: 20,
            batch_size: 64,
            epochs: 30,
            epoch_decay: 1.0,
            weight_decay: 0.0,
            seed: 17,
        }
    }
}

impl TrainConfig {
    /// Linear warm-up to the base rate, flat afterwards.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.base_lr
        } else {
            self.base_lr * (step + 1) as f64 / self.warmup_steps as f64
        }
    }

    /// `lr_at` scaled by the per-epoch decay.
    pub fn lr_for(&self, step: usize, epoch: usize) -> f64 {
        self.lr_at(step) * self.epoch_decay.powi(epoch as i32)
    }
}

/// Builds the default imputation model: encoder features through hidden
/// sizes {64, 32, 16} to a sigmoid head.
pub fn default_imputation_model(input_dim: usize, seed: u64) -> MlpModel {
    MlpModel::random(&[input_dim, 64, 32, 16, 1], Activation::Tanh, Activation::Sigmoid, seed)
}

/// Predicted relevance for a pair, always in (0, 1).
pub fn imp_predict<E: FeatureEncoder>(
    model: &MlpModel,
    encoder: &E,
    query_id: u64,
    doc_id: u64,
) -> f64 {
    let x = encoder.encode(query_id, doc_id);
    model.forward_scalar(&x).expect("encoder dim matches model input")
}

pub fn cross_entropy(prediction: f64, label: f64) -> f64 {
    let p = prediction.clamp(LOSS_EPS, 1.0 - LOSS_EPS);
    -label * p.ln() - (1.0 - label) * (1.0 - p).ln()
}

/// Mean cross-entropy loss and parameter gradients of one batch of
/// (features, label) examples against a sigmoid-headed model.
pub fn cross_entropy_batch_gradients(
    model: &MlpModel,
    batch: &[(&[f64], f64)],
) -> Result<(f64, Gradients), MlpError> {
    let mut total = Gradients::zeros_like(model);
    let mut loss = 0.0;
    let n = batch.len() as f64;
    for (x, label) in batch {
        let (y, cache) = model.forward(x)?;
        let p = y[0].clamp(LOSS_EPS, 1.0 - LOSS_EPS);
        loss += cross_entropy(p, *label);
        let dl_dp = (-label / p + (1.0 - label) / (1.0 - p)) / n;
        let g = model.backward(&cache, &[dl_dp])?;
        total.add_scaled(&g, 1.0);
    }
    Ok((loss / n, total))
}

/// Minibatch gradient descent on the cross-entropy objective. Returns the
/// per-step batch loss trace; deterministic given the config seed.
pub fn train_cross_entropy(
    model: &mut MlpModel,
    examples: &[(Vec<f64>, f64)],
    config: &TrainConfig,
) -> Result<Vec<f64>, MlpError> {
    assert!(!examples.is_empty(), "training set must be nonempty");
    let mut rng = derive_stream(config.seed, 5);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut trace = Vec::new();
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch: Vec<(&[f64], f64)> =
                chunk.iter().map(|&i| (examples[i].0.as_slice(), examples[i].1)).collect();
            let (loss, grads) = cross_entropy_batch_gradients(model, &batch)?;
            if !loss.is_finite() {
                return Err(MlpError::Diverged { step });
            }
            let lr = config.lr_for(step, epoch);
            model.apply_gradients(&grads, lr);
            if config.weight_decay > 0.0 {
                model.decay_weights(lr * config.weight_decay);
            }
            trace.push(loss);
            step += 1;
        }
    }
    Ok(trace)
}

/// Fine-tunes the imputation model on top-1 randomization data.
pub fn imp_train<E: FeatureEncoder>(
    model: &mut MlpModel,
    encoder: &E,
    rand_data: &[RandRecord],
    config: &TrainConfig,
) -> Result<Vec<f64>, MlpError> {
    let examples: Vec<(Vec<f64>, f64)> = rand_data
        .iter()
        .map(|r| (encoder.encode(r.query_id, r.doc_id), if r.clicked { 1.0 } else { 0.0 }))
        .collect();
    train_cross_entropy(model, &examples, config)
}

/// Windowed mean of a loss trace, the form the monotonicity contract is
/// stated over.
pub fn smoothed(trace: &[f64], window: usize) -> Vec<f64> {
    if trace.len() < window || window == 0 {
        return trace.to_vec();
    }
    trace
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_catalog, CatalogConfig, RelevancePrior};

    fn catalog(n: usize) -> QueryCatalog {
        generate_catalog(
            &CatalogConfig {
                n_queries: n,
                docs_per_query: 5,
                zipf_exponent: 1.0,
                relevance_prior: RelevancePrior::Uniform,
            },
            21,
        )
        .unwrap()
    }

    #[test]
    fn encoder_is_deterministic_per_pair() {
        let enc = SyntheticEncoder::from_catalog(&catalog(5));
        assert_eq!(enc.encode(0, 1), enc.encode(0, 1));
        assert_ne!(enc.encode(0, 1), enc.encode(0, 2));
        assert_eq!(enc.encode(999, 999), vec![0.0; SYNTHETIC_FEATURE_DIM]);
    }

    #[test]
    fn zero_model_predicts_half_everywhere() {
        let enc = SyntheticEncoder::from_catalog(&catalog(3));
        let m = MlpModel::zeros(
            &[SYNTHETIC_FEATURE_DIM, 8, 1],
            Activation::Tanh,
            Activation::Sigmoid,
        );
        assert_eq!(imp_predict(&m, &enc, 0, 0), 0.5);
        assert_eq!(imp_predict(&m, &enc, 2, 4), 0.5);
    }

    #[test]
    fn all_positive_labels_drift_predictions_up() {
        let cat = catalog(10);
        let enc = SyntheticEncoder::from_catalog(&cat);
        let mut m = default_imputation_model(enc.dim(), 5);
        let data: Vec<RandRecord> = (0..400)
            .map(|i| RandRecord {
                query_id: i % 10,
                doc_id: i % 5,
                clicked: true,
                ts: i,
            })
            .collect();
        imp_train(&mut m, &enc, &data, &TrainConfig::default()).unwrap();
        let mean: f64 = (0..10)
            .flat_map(|q| (0..5).map(move |d| (q, d)))
            .map(|(q, d)| imp_predict(&m, &enc, q, d))
            .sum::<f64>()
            / 50.0;
        assert!(mean > 0.95, "mean prediction {mean}");
    }

    #[test]
    fn uninformative_labels_hit_the_entropy_floor() {
        let cat = catalog(10);
        let enc = SyntheticEncoder::from_catalog(&cat);
        let mut m = default_imputation_model(enc.dim(), 6);
        // every pair observed with both labels equally often: nothing to learn
        let data: Vec<RandRecord> = (0..2000)
            .map(|i| RandRecord {
                query_id: (i / 2) % 10,
                doc_id: (i / 20) % 5,
                clicked: i % 2 == 0,
                ts: i,
            })
            .collect();
        let cfg = TrainConfig { epochs: 6, ..TrainConfig::default() };
        let trace = imp_train(&mut m, &enc, &data, &cfg).unwrap();
        let tail = &trace[trace.len().saturating_sub(10)..];
        let final_loss = tail.iter().sum::<f64>() / tail.len() as f64;
        assert!(
            (final_loss - std::f64::consts::LN_2).abs() < 0.05,
            "final loss {final_loss} vs ln 2"
        );
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let cat = catalog(3);
        let enc = SyntheticEncoder::from_catalog(&cat);
        let mut m = default_imputation_model(enc.dim(), 7);
        let before = m.digest();
        let data = vec![RandRecord { query_id: 0, doc_id: 0, clicked: true, ts: 0 }];
        let cfg = TrainConfig { base_lr: 0.0, epochs: 1, ..TrainConfig::default() };
        imp_train(&mut m, &enc, &data, &cfg).unwrap();
        assert_eq!(m.digest(), before);
    }

    #[test]
    fn smoothed_loss_decreases_on_separable_data() {
        let cat = catalog(20);
        let enc = SyntheticEncoder::from_catalog(&cat);
        let mut m = default_imputation_model(enc.dim(), 8);
        // label = relevance > 0.5, perfectly recoverable from the features
        let mut data = Vec::new();
        for (rep, q) in (0..200).map(|i| (i, i % 20)) {
            for d in 0..5 {
                let gamma = cat.relevance(q as u64, d).unwrap();
                data.push(RandRecord {
                    query_id: q as u64,
                    doc_id: d,
                    clicked: gamma > 0.5,
                    ts: rep as u64,
                });
            }
        }
        let trace = imp_train(&mut m, &enc, &data, &TrainConfig::default()).unwrap();
        let s = smoothed(&trace, 10);
        assert!(s.last().unwrap() < s.first().unwrap());
        // training accuracy should be essentially perfect
        let correct = data
            .iter()
            .filter(|r| (imp_predict(&m, &enc, r.query_id, r.doc_id) > 0.5) == r.clicked)
            .count();
        assert!(correct as f64 / data.len() as f64 > 0.95);
    }

    #[test]
    fn predictions_stay_in_open_unit_interval() {
        let cat = catalog(5);
        let enc = SyntheticEncoder::from_catalog(&cat);
        let m = default_imputation_model(enc.dim(), 9);
        for q in 0..5u64 {
            for d in 0..5u64 {
                let p = imp_predict(&m, &enc, q, d);
                assert!(p > 0.0 && p < 1.0);
            }
        }
    }
}
