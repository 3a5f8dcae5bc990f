//! Per-position click model parameters.

use serde::{Deserialize, Serialize};

use super::SimError;

/// Per-position examination and trust-bias probabilities.
///
/// `theta[k-1]` is the examination probability at position `k`,
/// `eps_plus[k-1]` / `eps_minus[k-1]` the click probabilities of an examined
/// relevant / irrelevant document. The derived compact parameters are
/// `alpha_k = theta_k (eps_plus_k - eps_minus_k)` and
/// `beta_k = theta_k * eps_minus_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickModelParams {
    theta: Vec<f64>,
    eps_plus: Vec<f64>,
    eps_minus: Vec<f64>,
}

impl ClickModelParams {
    pub fn new(
        theta: Vec<f64>,
        eps_plus: Vec<f64>,
        eps_minus: Vec<f64>,
    ) -> Result<Self, SimError> {
        let k = theta.len();
        if k == 0 {
            return Err(SimError::InvalidParams("need at least one position".into()));
        }
        if eps_plus.len() != k || eps_minus.len() != k {
            return Err(SimError::InvalidParams(format!(
                "length mismatch: theta={}, eps_plus={}, eps_minus={}",
                k,
                eps_plus.len(),
                eps_minus.len()
            )));
        }
        for i in 0..k {
            let (t, ep, em) = (theta[i], eps_plus[i], eps_minus[i]);
            if !(0.0..=1.0).contains(&t) || !(0.0..=1.0).contains(&ep) || !(0.0..=1.0).contains(&em)
            {
                return Err(SimError::InvalidParams(format!(
                    "entries at position {} not in [0,1]: theta={t}, eps_plus={ep}, eps_minus={em}",
                    i + 1
                )));
            }
            if em >= ep {
                return Err(SimError::InvalidParams(format!(
                    "eps_minus must be < eps_plus at position {} (got {em} >= {ep})",
                    i + 1
                )));
            }
            let alpha = t * (ep - em);
            let beta = t * em;
            if alpha <= 0.0 || alpha > 1.0 || beta >= 1.0 || alpha + beta > 1.0 + 1e-12 {
                return Err(SimError::InvalidParams(format!(
                    "derived alpha={alpha}, beta={beta} out of range at position {}",
                    i + 1
                )));
            }
        }
        Ok(Self { theta, eps_plus, eps_minus })
    }

    /// Validated deserialization from the raw field triple.
    pub fn from_parts(
        theta: Vec<f64>,
        eps_plus: Vec<f64>,
        eps_minus: Vec<f64>,
    ) -> Result<Self, SimError> {
        Self::new(theta, eps_plus, eps_minus)
    }

    pub fn num_positions(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self, position: usize) -> f64 {
        self.theta[position - 1]
    }

    pub fn eps_plus(&self, position: usize) -> f64 {
        self.eps_plus[position - 1]
    }

    pub fn eps_minus(&self, position: usize) -> f64 {
        self.eps_minus[position - 1]
    }

    pub fn alpha(&self, position: usize) -> f64 {
        self.theta(position) * (self.eps_plus(position) - self.eps_minus(position))
    }

    pub fn beta(&self, position: usize) -> f64 {
        self.theta(position) * self.eps_minus(position)
    }

    /// Same parameters with `theta_1` forced to 1, as used when placing a
    /// document at the top slot for randomization data collection.
    pub fn with_top1_examined(&self) -> Self {
        let mut theta = self.theta.clone();
        theta[0] = 1.0;
        Self { theta, eps_plus: self.eps_plus.clone(), eps_minus: self.eps_minus.clone() }
    }

    pub fn theta_vec(&self) -> &[f64] {
        &self.theta
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_eps_minus_at_least_eps_plus() {
        assert!(ClickModelParams::new(vec![0.5], vec![0.5], vec![0.5]).is_err());
        assert!(ClickModelParams::new(vec![0.5], vec![0.4], vec![0.5]).is_err());
    }

    #[test]
    fn rejects_out_of_range_entries() {
        assert!(ClickModelParams::new(vec![1.5], vec![0.9], vec![0.1]).is_err());
        assert!(ClickModelParams::new(vec![0.5], vec![0.9], vec![-0.1]).is_err());
    }

    #[test]
    fn derived_params() {
        let p = ClickModelParams::new(vec![0.5, 1.0], vec![0.9, 1.0], vec![0.1, 0.0]).unwrap();
        assert!((p.alpha(1) - 0.4).abs() < 1e-15);
        assert!((p.beta(1) - 0.05).abs() < 1e-15);
        assert!((p.alpha(2) - 1.0).abs() < 1e-15);
        assert_eq!(p.beta(2), 0.0);
    }

    #[test]
    fn top1_examined_only_touches_first_position() {
        let p = ClickModelParams::new(vec![0.5, 0.3], vec![0.9, 0.9], vec![0.1, 0.1]).unwrap();
        let q = p.with_top1_examined();
        assert_eq!(q.theta(1), 1.0);
        assert_eq!(q.theta(2), 0.3);
    }
}
