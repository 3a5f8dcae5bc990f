//! Biased click simulation under the trust-bias-extended position-based model.
//!
//! A result at position `k` is examined with probability `theta_k`; an
//! examined relevant result is clicked with probability `eps_plus_k`, an
//! examined irrelevant one with probability `eps_minus_k`. Collapsing the
//! latent examination/relevance draws gives the click probability
//! `alpha_k * gamma + beta_k` with `alpha_k = theta_k (eps_plus_k - eps_minus_k)`
//! and `beta_k = theta_k * eps_minus_k`.

mod catalog;
mod params;
mod session;

pub use catalog::{generate_catalog, CatalogConfig, Document, Query, QueryCatalog, RelevancePrior};
pub use params::ClickModelParams;
pub use session::{
    generate_randomization_data, sessions_to_jsonl, simulate_sessions, Interaction, RandRecord,
    RankingPolicy, SessionLog, SimOptions,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("position {position} out of range 1..={num_positions}")]
    PositionOutOfRange { position: usize, num_positions: usize },
    #[error("invalid click model parameters: {0}")]
    InvalidParams(String),
    #[error("invalid catalog: {0}")]
    InvalidCatalog(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Click probability of a document with relevance `gamma` shown at `position`.
///
/// Evaluates `alpha_k * gamma + beta_k`; the result always lies in
/// `[beta_k, alpha_k + beta_k]`, a subset of `[0, 1]`.
pub fn click_probability(
    params: &ClickModelParams,
    position: usize,
    gamma: f64,
) -> Result<f64, SimError> {
    if position < 1 || position > params.num_positions() {
        return Err(SimError::PositionOutOfRange {
            position,
            num_positions: params.num_positions(),
        });
    }
    debug_assert!((0.0..=1.0).contains(&gamma));
    Ok(params.alpha(position) * gamma + params.beta(position))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_params(k: usize, theta: f64, ep: f64, em: f64) -> ClickModelParams {
        ClickModelParams::new(vec![theta; k], vec![ep; k], vec![em; k]).unwrap()
    }

    #[test]
    fn irrelevant_doc_clicks_only_by_mistake() {
        let p = flat_params(3, 0.5, 0.9, 0.1);
        let got = click_probability(&p, 2, 0.0).unwrap();
        assert!((got - p.beta(2)).abs() < 1e-15);
    }

    #[test]
    fn noise_free_reduces_to_pbm() {
        let p = flat_params(3, 0.7, 1.0, 0.0);
        for gamma in [0.0, 0.3, 1.0] {
            let got = click_probability(&p, 1, gamma).unwrap();
            assert!((got - 0.7 * gamma).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_evaluated_click_probability() {
        let p = flat_params(1, 0.5, 0.9, 0.1);
        assert!((p.alpha(1) - 0.40).abs() < 1e-15);
        assert!((p.beta(1) - 0.05).abs() < 1e-15);
        let got = click_probability(&p, 1, 0.5).unwrap();
        assert!((got - 0.25).abs() < 1e-15);
    }

    #[test]
    fn position_out_of_range_is_an_error() {
        let p = flat_params(3, 0.5, 0.9, 0.1);
        assert!(click_probability(&p, 0, 0.5).is_err());
        assert!(click_probability(&p, 4, 0.5).is_err());
    }

    #[test]
    fn affine_and_nondecreasing_in_gamma() {
        let p = flat_params(5, 0.6, 0.8, 0.2);
        for k in 1..=5 {
            let lo = click_probability(&p, k, 0.2).unwrap();
            let hi = click_probability(&p, k, 0.8).unwrap();
            let mid = click_probability(&p, k, 0.5).unwrap();
            assert!(hi > lo);
            // affine: midpoint in gamma is midpoint in probability
            assert!((mid - 0.5 * (lo + hi)).abs() < 1e-15);
        }
    }
}
