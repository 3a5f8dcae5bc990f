//! Online approximation of the doubly robust relevance score.
//!
//! Three pieces compose the final score for a query-document pair:
//! an approximated affine model mapping the dense click feature vector to a
//! sigmoid output, the frozen imputation model, and a tanh-headed trade-off
//! network trained by policy gradient with stop-gradient semantics — the
//! trade-off loss back-propagates into the trade-off MLP only, never into
//! the other two models.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imputation::{imp_predict, train_cross_entropy, FeatureEncoder, TrainConfig};
use crate::mlp::{Activation, Gradients, MlpError, MlpModel};
use crate::rng::derive_stream;
use crate::sim::RandRecord;
use crate::tracking::{
    build_click_features, ClickFeatureVector, TrackingDicts, FEATURE_DIM, FEATURE_SCHEMA_ID,
};

use rand::seq::SliceRandom;

/// Clamp bounds applied to the combined score inside the log-loss; the raw
/// value is kept for ranking.
/// Batch gradient-norm cap for trade-off training (see `tradeoff_train`).
pub const TRADEOFF_CLIP_NORM: f64 = 1.0;

pub const DR_CLAMP_MIN: f64 = 1e-6;
pub const DR_CLAMP_MAX: f64 = 1.0;

#[derive(Debug, Error)]
pub enum NeuralDrError {
    #[error("feature vector has dimension {got}, model expects {expected}")]
    FeatureDim { got: usize, expected: usize },
    #[error("feature schema mismatch: bundle built for {got:?}, runtime uses {expected:?}")]
    SchemaMismatch { got: String, expected: String },
    #[error("frozen {which} model parameters changed during trade-off training")]
    FrozenMutated { which: &'static str },
    #[error("no training records")]
    Empty,
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error("scorer bundle failed to parse: {0}")]
    BadBundle(String),
}

/// Per-dimension standardization fitted on the training set and replayed at
/// inference. Raw click features mix rates in [0, 1] with second-scale dwell
/// times; feeding them to a tanh net unscaled saturates the first layer.
/// Empty vectors mean identity (untrained models).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FeatureNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureNorm {
    fn fit<'a>(dim: usize, rows: impl Iterator<Item = &'a [f64]> + Clone) -> Self {
        let mut mean = vec![0.0; dim];
        let mut n = 0usize;
        for r in rows.clone() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
            n += 1;
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, m), v) in var.iter_mut().zip(&mean).zip(r) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 1e-9 { sd } else { 1.0 }
            })
            .collect();
        Self { mean, std }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        if self.mean.is_empty() {
            return x.to_vec();
        }
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Sigmoid-headed MLP from click features straight to relevance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxAffineModel {
    pub mlp: MlpModel,
    pub feature_schema_id: String,
    #[serde(default)]
    pub norm: FeatureNorm,
}

impl ApproxAffineModel {
    pub fn random(seed: u64) -> Self {
        Self {
            mlp: MlpModel::random(
                &[FEATURE_DIM, 64, 32, 16, 1],
                Activation::Tanh,
                Activation::Sigmoid,
                seed,
            ),
            feature_schema_id: FEATURE_SCHEMA_ID.to_string(),
            norm: FeatureNorm::default(),
        }
    }

    /// γ̄^aff for one feature vector; always in (0, 1).
    pub fn predict(&self, x: &ClickFeatureVector) -> Result<f64, NeuralDrError> {
        check_features(x, self.mlp.input_dim(), &self.feature_schema_id)?;
        Ok(self.mlp.forward_scalar(&self.norm.apply(&x.x))?)
    }

    pub fn digest(&self) -> String {
        self.mlp.digest()
    }
}

/// Tanh-headed MLP producing the trade-off coefficient ζ̄ ∈ [−1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffModel {
    pub mlp: MlpModel,
    pub feature_schema_id: String,
    #[serde(default)]
    pub norm: FeatureNorm,
}

impl TradeoffModel {
    pub fn random(seed: u64) -> Self {
        Self {
            mlp: MlpModel::random(
                &[FEATURE_DIM, 64, 32, 16, 1],
                Activation::Tanh,
                Activation::Tanh,
                seed,
            ),
            feature_schema_id: FEATURE_SCHEMA_ID.to_string(),
            norm: FeatureNorm::default(),
        }
    }

    pub fn predict(&self, x: &ClickFeatureVector) -> Result<f64, NeuralDrError> {
        check_features(x, self.mlp.input_dim(), &self.feature_schema_id)?;
        Ok(self.mlp.forward_scalar(&self.norm.apply(&x.x))?)
    }

    pub fn digest(&self) -> String {
        self.mlp.digest()
    }
}

fn check_features(
    x: &ClickFeatureVector,
    expected_dim: usize,
    expected_schema: &str,
) -> Result<(), NeuralDrError> {
    if x.schema_id != expected_schema {
        return Err(NeuralDrError::SchemaMismatch {
            got: x.schema_id.clone(),
            expected: expected_schema.to_string(),
        });
    }
    if x.x.len() != expected_dim {
        return Err(NeuralDrError::FeatureDim { got: x.x.len(), expected: expected_dim });
    }
    Ok(())
}

/// Fits the approximated affine model with cross-entropy on randomization
/// clicks joined to their feature snapshots. Returns the model and the
/// per-step loss trace.
pub fn approx_affine_train(
    joined: &[(ClickFeatureVector, bool)],
    config: &TrainConfig,
) -> Result<(ApproxAffineModel, Vec<f64>), NeuralDrError> {
    if joined.is_empty() {
        return Err(NeuralDrError::Empty);
    }
    let mut model = ApproxAffineModel::random(config.seed);
    for (x, _) in joined {
        check_features(x, model.mlp.input_dim(), &model.feature_schema_id)?;
    }
    model.norm = FeatureNorm::fit(FEATURE_DIM, joined.iter().map(|(x, _)| x.x.as_slice()));
    let examples: Vec<(Vec<f64>, f64)> = joined
        .iter()
        .map(|(x, c)| (model.norm.apply(&x.x), if *c { 1.0 } else { 0.0 }))
        .collect();
    let trace = train_cross_entropy(&mut model.mlp, &examples, config)?;
    Ok((model, trace))
}

/// One randomization record joined to the feature snapshot current at its
/// timestamp.
#[derive(Debug, Clone)]
pub struct JoinedRecord {
    pub record: RandRecord,
    pub features: ClickFeatureVector,
}

/// Policy-gradient loss term for one record: −ĉ · log(clamped γ̄^dr) with
/// ĉ = 2c − 1, plus its derivative with respect to ζ̄ (zero where the clamp
/// is active).
fn tradeoff_loss_term(
    zeta: f64,
    gamma_imp: f64,
    gamma_aff: f64,
    clicked: bool,
) -> (f64, f64) {
    let c_hat = if clicked { 1.0 } else { -1.0 };
    let raw = zeta * gamma_imp + gamma_aff;
    let clamped = raw.clamp(DR_CLAMP_MIN, DR_CLAMP_MAX);
    let loss = -c_hat * clamped.ln();
    let grad = if raw > DR_CLAMP_MIN && raw < DR_CLAMP_MAX {
        -c_hat * gamma_imp / clamped
    } else {
        0.0
    };
    (loss, grad)
}

/// Trains the trade-off network against frozen imputation and affine
/// models. Gradients flow only into the trade-off MLP; both frozen models
/// are digest-checked before and after as a stop-gradient guard.
pub fn tradeoff_train<E: FeatureEncoder>(
    joined: &[JoinedRecord],
    imputation: &MlpModel,
    encoder: &E,
    affine: &ApproxAffineModel,
    config: &TrainConfig,
) -> Result<(TradeoffModel, Vec<f64>), NeuralDrError> {
    if joined.is_empty() {
        return Err(NeuralDrError::Empty);
    }
    let imp_digest = imputation.digest();
    let aff_digest = affine.digest();

    let mut model = TradeoffModel::random(config.seed);
    model.norm =
        FeatureNorm::fit(FEATURE_DIM, joined.iter().map(|j| j.features.x.as_slice()));

    // Frozen components precomputed once: they are constants of the loss.
    let mut rows = Vec::with_capacity(joined.len());
    for j in joined {
        let gamma_imp = imp_predict(imputation, encoder, j.record.query_id, j.record.doc_id);
        let gamma_aff = affine.predict(&j.features)?;
        rows.push((model.norm.apply(&j.features.x), gamma_imp, gamma_aff, j.record.clicked));
    }

    let mut rng = derive_stream(config.seed, 6);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut trace = Vec::new();
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size.max(1)) {
            let mut grads = Gradients::zeros_like(&model.mlp);
            let mut loss = 0.0;
            let n = chunk.len() as f64;
            for &i in chunk {
                let (x, gamma_imp, gamma_aff, clicked) = &rows[i];
                let (out, cache) = model.mlp.forward(x)?;
                let (l, dl_dzeta) =
                    tradeoff_loss_term(out[0], *gamma_imp, *gamma_aff, *clicked);
                loss += l;
                let g = model.mlp.backward(&cache, &[dl_dzeta / n])?;
                grads.add_scaled(&g, 1.0);
            }
            if !loss.is_finite() {
                return Err(MlpError::Diverged { step }.into());
            }
            // Records near the lower clamp produce gradients up to 1/DR_CLAMP_MIN;
            // without a norm cap those few records dominate the shared weights.
            grads.clip_norm(TRADEOFF_CLIP_NORM);
            model.mlp.apply_gradients(&grads, config.lr_for(step, epoch));
            trace.push(loss / n);
            step += 1;
        }
    }

    if imputation.digest() != imp_digest {
        return Err(NeuralDrError::FrozenMutated { which: "imputation" });
    }
    if affine.digest() != aff_digest {
        return Err(NeuralDrError::FrozenMutated { which: "affine" });
    }
    Ok((model, trace))
}

/// The combined score and its components for one query-document pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrScore {
    /// ζ̄·γ̂^imp + γ̄^aff, unclamped; this is what ranking sorts by.
    pub value: f64,
    pub zeta: f64,
    pub gamma_imp: f64,
    pub gamma_aff: f64,
}

impl DrScore {
    /// The value the training loss takes the log of.
    pub fn clamped_value(&self) -> f64 {
        self.value.clamp(DR_CLAMP_MIN, DR_CLAMP_MAX)
    }
}

/// Scores one pair by composing the three models over the current dict
/// snapshot.
pub fn dr_score<E: FeatureEncoder>(
    query_id: u64,
    doc_id: u64,
    dicts: &TrackingDicts,
    imputation: &MlpModel,
    encoder: &E,
    affine: &ApproxAffineModel,
    tradeoff: &TradeoffModel,
) -> Result<DrScore, NeuralDrError> {
    let x = build_click_features(dicts, query_id, doc_id);
    let zeta = tradeoff.predict(&x)?;
    let gamma_aff = affine.predict(&x)?;
    let gamma_imp = imp_predict(imputation, encoder, query_id, doc_id);
    Ok(DrScore { value: zeta * gamma_imp + gamma_aff, zeta, gamma_imp, gamma_aff })
}

/// Sorts candidates by score descending; ties break by doc_id ascending.
pub fn rank_documents<F: FnMut(u64) -> f64>(candidates: &[u64], mut score: F) -> Vec<u64> {
    let mut scored: Vec<(u64, f64)> = candidates.iter().map(|&d| (d, score(d))).collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1).expect("scores are finite").then(a.0.cmp(&b.0))
    });
    scored.into_iter().map(|(d, _)| d).collect()
}

/// Serialized bundle of the three checkpoints plus the feature schema they
/// were trained against. Loading refuses a schema mismatch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerBundle {
    pub feature_schema_id: String,
    pub imputation: MlpModel,
    pub affine: ApproxAffineModel,
    pub tradeoff: TradeoffModel,
}

impl ScorerBundle {
    pub fn new(
        imputation: MlpModel,
        affine: ApproxAffineModel,
        tradeoff: TradeoffModel,
    ) -> Self {
        Self {
            feature_schema_id: FEATURE_SCHEMA_ID.to_string(),
            imputation,
            affine,
            tradeoff,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bundle serializes")
    }

    pub fn from_json(raw: &str) -> Result<Self, NeuralDrError> {
        let bundle: ScorerBundle =
            serde_json::from_str(raw).map_err(|e| NeuralDrError::BadBundle(e.to_string()))?;
        if bundle.feature_schema_id != FEATURE_SCHEMA_ID {
            return Err(NeuralDrError::SchemaMismatch {
                got: bundle.feature_schema_id,
                expected: FEATURE_SCHEMA_ID.to_string(),
            });
        }
        Ok(bundle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::gradient_check;

    fn features(values: &[f64]) -> ClickFeatureVector {
        let mut x = values.to_vec();
        x.resize(FEATURE_DIM, 0.0);
        ClickFeatureVector { x, schema_id: FEATURE_SCHEMA_ID.to_string() }
    }

    /// Encoder that ignores the pair and returns a fixed vector; paired
    /// with a zeroed model it pins γ̂^imp at 0.5.
    struct FixedEncoder;
    impl FeatureEncoder for FixedEncoder {
        fn dim(&self) -> usize {
            4
        }
        fn encode(&self, query_id: u64, _doc_id: u64) -> Vec<f64> {
            vec![query_id as f64 * 0.1; 4]
        }
    }

    fn rand_record(query_id: u64, doc_id: u64, clicked: bool) -> RandRecord {
        RandRecord { query_id, doc_id, clicked, ts: 0 }
    }

    #[test]
    fn outputs_respect_activation_ranges() {
        let affine = ApproxAffineModel::random(3);
        let tradeoff = TradeoffModel::random(4);
        for i in 0..20 {
            let x = features(&[(i as f64) * 0.7 - 5.0, 1.0, -2.0]);
            let a = affine.predict(&x).unwrap();
            let z = tradeoff.predict(&x).unwrap();
            assert!(a > 0.0 && a < 1.0, "affine output {a} outside (0,1)");
            assert!((-1.0..=1.0).contains(&z), "zeta {z} outside [-1,1]");
        }
    }

    #[test]
    fn schema_mismatch_rejected() {
        let affine = ApproxAffineModel::random(3);
        let mut x = features(&[1.0]);
        x.schema_id = "something-else".into();
        assert!(matches!(
            affine.predict(&x),
            Err(NeuralDrError::SchemaMismatch { .. })
        ));
    }

    #[test]
    fn zero_learning_rate_leaves_affine_unchanged() {
        let joined = vec![(features(&[1.0]), true), (features(&[0.0]), false)];
        let config = TrainConfig { base_lr: 0.0, warmup_steps: 0, ..TrainConfig::default() };
        let baseline = ApproxAffineModel::random(config.seed);
        let (trained, _) = approx_affine_train(&joined, &config).unwrap();
        assert_eq!(trained.digest(), baseline.digest());
    }

    #[test]
    fn no_signal_converges_to_base_rate() {
        // all-zero features, 25% positives: the only thing learnable is the bias
        let mut joined = Vec::new();
        for i in 0..200 {
            joined.push((features(&[]), i % 4 == 0));
        }
        let config = TrainConfig { epochs: 60, ..TrainConfig::default() };
        let (model, _) = approx_affine_train(&joined, &config).unwrap();
        let p = model.predict(&features(&[])).unwrap();
        assert!((p - 0.25).abs() < 0.05, "constant prediction {p} far from base rate 0.25");
    }

    #[test]
    fn affine_training_reduces_smoothed_loss() {
        // label is a deterministic function of the first feature
        let joined: Vec<(ClickFeatureVector, bool)> = (0..300)
            .map(|i| {
                let v = (i % 10) as f64 / 10.0;
                (features(&[v, v * v]), v > 0.5)
            })
            .collect();
        let (_, trace) = approx_affine_train(&joined, &TrainConfig::default()).unwrap();
        let smooth = crate::imputation::smoothed(&trace, 10);
        assert!(
            smooth.last().unwrap() < smooth.first().unwrap(),
            "smoothed loss did not decrease"
        );
    }

    #[test]
    fn composition_identity_is_exact() {
        let affine = ApproxAffineModel::random(1);
        let tradeoff = TradeoffModel::random(2);
        let imputation = crate::imputation::default_imputation_model(4, 9);
        let dicts = TrackingDicts::new();
        let s = dr_score(5, 6, &dicts, &imputation, &FixedEncoder, &affine, &tradeoff)
            .unwrap();
        assert_eq!(s.value, s.zeta * s.gamma_imp + s.gamma_aff);
        assert!(s.clamped_value() >= DR_CLAMP_MIN && s.clamped_value() <= DR_CLAMP_MAX);
    }

    #[test]
    fn tradeoff_gradient_matches_finite_differences() {
        let model = TradeoffModel::random(11);
        let rows: Vec<(Vec<f64>, f64, f64, bool)> = vec![
            (features(&[0.3, -0.2, 1.0]).x, 0.6, 0.3, true),
            (features(&[1.0, 0.5]).x, 0.4, 0.2, false),
            (features(&[-0.4]).x, 0.8, 0.5, true),
        ];
        let mut grads = Gradients::zeros_like(&model.mlp);
        for (x, gi, ga, c) in &rows {
            let (out, cache) = model.mlp.forward(x).unwrap();
            let (_, dl) = tradeoff_loss_term(out[0], *gi, *ga, *c);
            let g = model.mlp.backward(&cache, &[dl]).unwrap();
            grads.add_scaled(&g, 1.0);
        }
        let err = gradient_check(
            &model.mlp,
            &grads,
            |m| {
                rows.iter()
                    .map(|(x, gi, ga, c)| {
                        let z = m.forward_scalar(x).unwrap();
                        tradeoff_loss_term(z, *gi, *ga, *c).0
                    })
                    .sum()
            },
            1e-5,
        );
        assert!(err < 1e-4, "max relative gradient error {err}");
    }

    #[test]
    fn positive_clicks_push_zeta_up() {
        // every record clicked, gamma_imp > 0: the analytic gradient on zeta
        // is strictly negative, so training must raise zeta
        let encoder = FixedEncoder;
        let imputation = crate::imputation::default_imputation_model(4, 21);
        let affine = ApproxAffineModel::random(22);
        let x = features(&[0.5, 0.2]);
        let joined: Vec<JoinedRecord> = (0..100)
            .map(|i| JoinedRecord {
                record: rand_record(i % 3, 1, true),
                features: x.clone(),
            })
            .collect();
        let config = TrainConfig { epochs: 20, seed: 5, ..TrainConfig::default() };
        let before = TradeoffModel::random(config.seed).predict(&x).unwrap();
        let (model, _) = tradeoff_train(&joined, &imputation, &encoder, &affine, &config)
            .unwrap();
        let after = model.predict(&x).unwrap();
        assert!(after > before, "zeta did not increase: {before} -> {after}");
    }

    #[test]
    fn all_negative_clicks_drive_score_down() {
        let encoder = FixedEncoder;
        let imputation = crate::imputation::default_imputation_model(4, 31);
        let affine = ApproxAffineModel::random(32);
        let x = features(&[0.5, 0.2]);
        let joined: Vec<JoinedRecord> = (0..100)
            .map(|_| JoinedRecord { record: rand_record(1, 1, false), features: x.clone() })
            .collect();
        let config = TrainConfig { epochs: 20, seed: 5, ..TrainConfig::default() };
        let before = TradeoffModel::random(config.seed).predict(&x).unwrap();
        let (model, _) = tradeoff_train(&joined, &imputation, &encoder, &affine, &config)
            .unwrap();
        let after = model.predict(&x).unwrap();
        assert!(after < before, "zeta did not decrease: {before} -> {after}");
    }

    #[test]
    fn frozen_models_unchanged_by_tradeoff_training() {
        let encoder = FixedEncoder;
        let imputation = crate::imputation::default_imputation_model(4, 41);
        let affine = ApproxAffineModel::random(42);
        let imp_before = imputation.digest();
        let aff_before = affine.digest();
        let joined: Vec<JoinedRecord> = (0..50)
            .map(|i| JoinedRecord {
                record: rand_record(i, i, i % 2 == 0),
                features: features(&[i as f64 * 0.01]),
            })
            .collect();
        tradeoff_train(&joined, &imputation, &encoder, &affine, &TrainConfig::default())
            .unwrap();
        assert_eq!(imputation.digest(), imp_before);
        assert_eq!(affine.digest(), aff_before);
    }

    #[test]
    fn ranking_is_deterministic_and_tie_broken_by_doc_id() {
        assert_eq!(rank_documents(&[7], |_| 0.3), vec![7]);
        assert_eq!(rank_documents(&[9, 3, 5], |_| 1.0), vec![3, 5, 9]);
        let ranked = rank_documents(&[1, 2, 3], |d| match d {
            2 => 0.9,
            3 => 0.5,
            _ => 0.1,
        });
        assert_eq!(ranked, vec![2, 3, 1]);
    }

    #[test]
    fn ranking_invariant_under_monotone_transform() {
        let docs = [4u64, 8, 15, 16, 23, 42];
        let base = |d: u64| (d as f64).sin();
        let plain = rank_documents(&docs, base);
        let transformed = rank_documents(&docs, |d| 3.0 * base(d).exp() + 1.0);
        assert_eq!(plain, transformed);
    }

    #[test]
    fn bundle_roundtrip_and_schema_guard() {
        let bundle = ScorerBundle::new(
            crate::imputation::default_imputation_model(4, 1),
            ApproxAffineModel::random(2),
            TradeoffModel::random(3),
        );
        let raw = bundle.to_json();
        assert_eq!(ScorerBundle::from_json(&raw).unwrap(), bundle);

        let mut tampered = bundle.clone();
        tampered.feature_schema_id = "click-features/v0/L9".into();
        assert!(matches!(
            ScorerBundle::from_json(&tampered.to_json()),
            Err(NeuralDrError::SchemaMismatch { .. })
        ));
    }
}
