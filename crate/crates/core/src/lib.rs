//! Counterfactual search-relevance estimation toolkit.
//!
//! The crate simulates biased click behavior under a trust-bias-extended
//! position-based model, implements the naive/IPW/affine/doubly-robust
//! relevance estimators together with their closed-form bias and variance,
//! and provides the surrounding machinery needed to exercise them end to
//! end: an imputation MLP trained on top-1 randomization data, a GBDT
//! examination model mined from display times, a sliding-window click
//! feature pipeline, the approximated online estimator, and DCG/ERR/GSB
//! ranking evaluation.

pub mod estimators;
pub mod examination;
pub mod imputation;
pub mod metrics;
pub mod mlp;
pub mod neural_dr;
pub mod rng;
pub mod sim;
pub mod tracking;
