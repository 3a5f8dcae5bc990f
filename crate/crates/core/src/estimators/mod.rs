//! Closed-form relevance estimators and their bias/variance theory.
//!
//! An interaction set `D_qd = {(k_i, c_i)}` for one query-document pair feeds
//! four estimators: the naive click mean, IPW reweighting by examination
//! propensity, the affine correction `(c - beta_hat_k) / alpha_hat_k`, and
//! the doubly robust combination with an imputation model. The companion
//! [`theory`] submodule evaluates the analytic bias/variance formulas and
//! verifies them against exact enumeration over all click patterns and
//! Monte Carlo replication.
//!
//! Estimates are intentionally NOT clamped here; theory verification needs
//! raw values. Use [`clamp_unit`] where a ranking score is required.

pub mod theory;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{ClickModelParams, SessionLog};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("empty interaction set")]
    EmptyData,
    #[error("zero or negative propensity at observed position {0}")]
    ZeroPropensity(usize),
    #[error("e_hat has {e_hat} entries for {interactions} interactions")]
    Misaligned { e_hat: usize, interactions: usize },
    #[error("no click coverage at position {0} in randomized logs")]
    Coverage(usize),
    #[error("invalid estimator parameters: {0}")]
    InvalidParams(String),
}

/// One logged (position, click) observation for a query-document pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub position: usize,
    pub clicked: bool,
}

impl Observation {
    pub fn new(position: usize, clicked: bool) -> Self {
        Self { position, clicked }
    }

    fn c(&self) -> f64 {
        if self.clicked {
            1.0
        } else {
            0.0
        }
    }
}

/// Estimated per-position correction parameters used by the estimators.
///
/// These are supplied by configuration (optionally misspecified); fitting
/// them with EM/MLE is out of scope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorParams {
    pub alpha_hat: Vec<f64>,
    pub beta_hat: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub eps_plus_hat: Vec<f64>,
    pub eps_minus_hat: Vec<f64>,
}

impl EstimatorParams {
    /// Correctly specified parameters copied from the true click model.
    pub fn matched(params: &ClickModelParams) -> Self {
        let k = params.num_positions();
        Self {
            alpha_hat: (1..=k).map(|p| params.alpha(p)).collect(),
            beta_hat: (1..=k).map(|p| params.beta(p)).collect(),
            theta_hat: (1..=k).map(|p| params.theta(p)).collect(),
            eps_plus_hat: (1..=k).map(|p| params.eps_plus(p)).collect(),
            eps_minus_hat: (1..=k).map(|p| params.eps_minus(p)).collect(),
        }
    }

    /// Multiplies each parameter family by a factor, the misspecification
    /// knob used in theory experiments. Factors of 1.0 leave it matched.
    pub fn misspecified(
        params: &ClickModelParams,
        alpha_factor: f64,
        beta_factor: f64,
        theta_factor: f64,
    ) -> Self {
        let mut s = Self::matched(params);
        for v in &mut s.alpha_hat {
            *v *= alpha_factor;
        }
        for v in &mut s.beta_hat {
            *v *= beta_factor;
        }
        for v in &mut s.theta_hat {
            *v = (*v * theta_factor).min(1.0);
        }
        s
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        let k = self.alpha_hat.len();
        if self.beta_hat.len() != k
            || self.theta_hat.len() != k
            || self.eps_plus_hat.len() != k
            || self.eps_minus_hat.len() != k
        {
            return Err(EstimatorError::InvalidParams("field length mismatch".into()));
        }
        for i in 0..k {
            if self.alpha_hat[i] <= 0.0 {
                return Err(EstimatorError::InvalidParams(format!(
                    "alpha_hat[{i}] = {} must be > 0",
                    self.alpha_hat[i]
                )));
            }
            if self.theta_hat[i] <= 0.0 {
                return Err(EstimatorError::InvalidParams(format!(
                    "theta_hat[{i}] = {} must be > 0",
                    self.theta_hat[i]
                )));
            }
        }
        Ok(())
    }

    pub fn alpha(&self, position: usize) -> f64 {
        self.alpha_hat[position - 1]
    }

    pub fn beta(&self, position: usize) -> f64 {
        self.beta_hat[position - 1]
    }

    pub fn theta(&self, position: usize) -> f64 {
        self.theta_hat[position - 1]
    }

    pub fn eps_gap(&self, position: usize) -> f64 {
        self.eps_plus_hat[position - 1] - self.eps_minus_hat[position - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Naive,
    Ipw,
    Affine,
    Dr,
}

/// A raw (unclamped) relevance estimate together with its provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelevanceEstimate {
    pub value: f64,
    pub kind: EstimatorKind,
    /// Number of interactions the estimate was computed from.
    pub d: usize,
}

/// Clamp adapter for ranking use; the estimators themselves stay raw.
pub fn clamp_unit(value: f64) -> f64 {
    value.clamp(0.0, 1.0)
}

/// Raw click-through mean ("no correction" baseline).
pub fn naive_ctr(observations: &[Observation]) -> Result<RelevanceEstimate, EstimatorError> {
    if observations.is_empty() {
        return Err(EstimatorError::EmptyData);
    }
    let sum: f64 = observations.iter().map(Observation::c).sum();
    Ok(RelevanceEstimate {
        value: sum / observations.len() as f64,
        kind: EstimatorKind::Naive,
        d: observations.len(),
    })
}

/// IPW estimate: mean of `c / theta_hat_k`.
pub fn ipw_estimate(
    observations: &[Observation],
    theta_hat: &[f64],
) -> Result<RelevanceEstimate, EstimatorError> {
    if observations.is_empty() {
        return Err(EstimatorError::EmptyData);
    }
    let mut sum = 0.0;
    for o in observations {
        let th = theta_hat.get(o.position - 1).copied().unwrap_or(0.0);
        if th <= 0.0 {
            return Err(EstimatorError::ZeroPropensity(o.position));
        }
        sum += o.c() / th;
    }
    Ok(RelevanceEstimate {
        value: sum / observations.len() as f64,
        kind: EstimatorKind::Ipw,
        d: observations.len(),
    })
}

/// Affine estimate: mean of `(c - beta_hat_k) / alpha_hat_k`.
pub fn affine_estimate(
    observations: &[Observation],
    params: &EstimatorParams,
) -> Result<RelevanceEstimate, EstimatorError> {
    if observations.is_empty() {
        return Err(EstimatorError::EmptyData);
    }
    let sum: f64 = observations
        .iter()
        .map(|o| (o.c() - params.beta(o.position)) / params.alpha(o.position))
        .sum();
    Ok(RelevanceEstimate {
        value: sum / observations.len() as f64,
        kind: EstimatorKind::Affine,
        d: observations.len(),
    })
}

/// Doubly robust estimate.
///
/// `gamma_imp` is the imputation model's estimate for the pair and
/// `e_hat` the per-interaction click-correlated examination indicator,
/// aligned one-to-one with `observations`. With an empty interaction set the
/// estimate falls back to `gamma_imp` (the tail-query convention).
pub fn dr_estimate(
    observations: &[Observation],
    params: &EstimatorParams,
    gamma_imp: f64,
    e_hat: &[f64],
) -> Result<RelevanceEstimate, EstimatorError> {
    if e_hat.len() != observations.len() {
        return Err(EstimatorError::Misaligned {
            e_hat: e_hat.len(),
            interactions: observations.len(),
        });
    }
    if observations.is_empty() {
        return Ok(RelevanceEstimate { value: gamma_imp, kind: EstimatorKind::Dr, d: 0 });
    }
    let d = observations.len() as f64;
    let mut sum = 0.0;
    for (o, &e) in observations.iter().zip(e_hat) {
        let a = params.alpha(o.position);
        let alpha_tilde = e * params.eps_gap(o.position);
        // (alpha_hat - e_hat*(eps+ - eps-))/alpha_hat * gamma_imp
        //   + (c - beta_hat)/alpha_hat
        sum += (a - alpha_tilde) / a * gamma_imp + (o.c() - params.beta(o.position)) / a;
    }
    Ok(RelevanceEstimate {
        value: sum / d,
        kind: EstimatorKind::Dr,
        d: observations.len(),
    })
}

/// Estimates relative examination propensities from uniformly shuffled
/// sessions as `theta_hat_k = CTR(k) / CTR(1)`, clipped to (0, 1].
pub fn estimate_theta_from_randomized_logs(
    sessions: &[SessionLog],
    num_positions: usize,
) -> Result<Vec<f64>, EstimatorError> {
    let mut impressions = vec![0usize; num_positions];
    let mut clicks = vec![0usize; num_positions];
    for s in sessions {
        for it in &s.interactions {
            if it.position >= 1 && it.position <= num_positions {
                impressions[it.position - 1] += 1;
                if it.clicked {
                    clicks[it.position - 1] += 1;
                }
            }
        }
    }
    for (i, &n) in impressions.iter().enumerate() {
        if n == 0 {
            return Err(EstimatorError::Coverage(i + 1));
        }
    }
    let ctr1 = clicks[0] as f64 / impressions[0] as f64;
    if ctr1 <= 0.0 {
        return Err(EstimatorError::Coverage(1));
    }
    Ok((0..num_positions)
        .map(|i| {
            let ctr = clicks[i] as f64 / impressions[i] as f64;
            (ctr / ctr1).clamp(f64::MIN_POSITIVE, 1.0)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{
        generate_catalog, simulate_sessions, CatalogConfig, RankingPolicy, RelevancePrior,
        SimOptions,
    };

    fn obs(pairs: &[(usize, u8)]) -> Vec<Observation> {
        pairs.iter().map(|&(k, c)| Observation::new(k, c == 1)).collect()
    }

    fn flat(k: usize, theta: f64, ep: f64, em: f64) -> ClickModelParams {
        ClickModelParams::new(vec![theta; k], vec![ep; k], vec![em; k]).unwrap()
    }

    #[test]
    fn naive_is_click_mean() {
        assert_eq!(naive_ctr(&obs(&[(1, 1), (3, 1)])).unwrap().value, 1.0);
        assert_eq!(naive_ctr(&obs(&[(1, 1), (2, 0)])).unwrap().value, 0.5);
        assert!(matches!(naive_ctr(&[]), Err(EstimatorError::EmptyData)));
    }

    #[test]
    fn ipw_hand_values() {
        assert_eq!(ipw_estimate(&obs(&[(1, 1)]), &[1.0]).unwrap().value, 1.0);
        let got = ipw_estimate(&obs(&[(2, 1), (2, 0)]), &[1.0, 0.5]).unwrap().value;
        assert!((got - 1.0).abs() < 1e-15);
        assert!(matches!(
            ipw_estimate(&obs(&[(2, 1)]), &[1.0, 0.0]),
            Err(EstimatorError::ZeroPropensity(2))
        ));
    }

    #[test]
    fn affine_hand_values() {
        let p = EstimatorParams::matched(&flat(1, 0.5, 0.9, 0.1)); // alpha=0.4, beta=0.05
        let up = affine_estimate(&obs(&[(1, 1)]), &p).unwrap().value;
        assert!((up - 2.375).abs() < 1e-12);
        let down = affine_estimate(&obs(&[(1, 0)]), &p).unwrap().value;
        assert!((down - (-0.125)).abs() < 1e-12);
    }

    #[test]
    fn dr_reduces_to_affine_when_alpha_tilde_matches() {
        let cm = flat(2, 0.5, 0.9, 0.1);
        let p = EstimatorParams::matched(&cm);
        let data = obs(&[(1, 1), (2, 0), (1, 0)]);
        // e_hat * (eps+ - eps-) = alpha_hat  =>  e_hat = theta_hat
        let e: Vec<f64> = data.iter().map(|o| p.theta(o.position)).collect();
        let dr = dr_estimate(&data, &p, 0.77, &e).unwrap().value;
        let aff = affine_estimate(&data, &p).unwrap().value;
        assert!((dr - aff).abs() < 1e-12);
    }

    #[test]
    fn dr_with_zero_e_hat_adds_full_imputation() {
        let p = EstimatorParams::matched(&flat(1, 0.5, 0.9, 0.1));
        let data = obs(&[(1, 1), (1, 0)]);
        let dr = dr_estimate(&data, &p, 0.3, &[0.0, 0.0]).unwrap().value;
        let aff = affine_estimate(&data, &p).unwrap().value;
        assert!((dr - (0.3 + aff)).abs() < 1e-12);
    }

    #[test]
    fn dr_empty_data_returns_imputation() {
        let p = EstimatorParams::matched(&flat(1, 0.5, 0.9, 0.1));
        let got = dr_estimate(&[], &p, 0.42, &[]).unwrap();
        assert_eq!(got.value, 0.42);
        assert_eq!(got.d, 0);
    }

    #[test]
    fn dr_misalignment_is_an_error() {
        let p = EstimatorParams::matched(&flat(1, 0.5, 0.9, 0.1));
        assert!(matches!(
            dr_estimate(&obs(&[(1, 1)]), &p, 0.5, &[0.5, 0.5]),
            Err(EstimatorError::Misaligned { .. })
        ));
    }

    #[test]
    fn theta_ratio_recovers_decay_under_shuffle() {
        let cat = generate_catalog(
            &CatalogConfig {
                n_queries: 20,
                docs_per_query: 2,
                zipf_exponent: 1.0,
                relevance_prior: RelevancePrior::Uniform,
            },
            11,
        )
        .unwrap();
        let cm = flat(2, 1.0, 0.9, 0.1);
        let cm = ClickModelParams::new(
            vec![1.0, 0.5],
            vec![cm.eps_plus(1); 2],
            vec![cm.eps_minus(1); 2],
        )
        .unwrap();
        let sessions = simulate_sessions(
            &cat,
            &cm,
            RankingPolicy::UniformShuffle,
            &SimOptions::new(100_000, 6),
        )
        .unwrap();
        let theta = estimate_theta_from_randomized_logs(&sessions, 2).unwrap();
        assert!((theta[0] - 1.0).abs() < 1e-12);
        assert!((theta[1] - 0.5).abs() < 0.02, "theta_2 = {}", theta[1]);
    }

    #[test]
    fn theta_ratio_without_clicks_is_coverage_error() {
        let cat = generate_catalog(
            &CatalogConfig {
                n_queries: 1,
                docs_per_query: 1,
                zipf_exponent: 1.0,
                relevance_prior: RelevancePrior::PointMass { value: 0.0 },
            },
            1,
        )
        .unwrap();
        let cm = flat(1, 1.0, 1.0, 0.0); // gamma=0 and eps-=0: no clicks ever
        let sessions =
            simulate_sessions(&cat, &cm, RankingPolicy::Identity, &SimOptions::new(1, 1)).unwrap();
        assert!(matches!(
            estimate_theta_from_randomized_logs(&sessions, 1),
            Err(EstimatorError::Coverage(1))
        ));
    }
}
