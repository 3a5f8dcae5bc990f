//! Synthetic query/document catalogs with long-tailed query popularity.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::rng::rng_from_seed;

pub const CATALOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: u64,
    /// True relevance gamma in [0,1]; hidden from estimators, used by the
    /// generator and by evaluation oracles.
    pub relevance: f64,
    /// Seed feeding the synthetic feature encoder for this pair.
    pub feature_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Query {
    pub query_id: u64,
    /// Monthly frequency weight; sampling probability is proportional to it.
    pub monthly_frequency: f64,
    pub documents: Vec<Document>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryCatalog {
    pub schema_version: u32,
    pub queries: Vec<Query>,
}

impl QueryCatalog {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.queries.is_empty() {
            return Err(SimError::InvalidCatalog("catalog has no queries".into()));
        }
        let mut qids = std::collections::HashSet::new();
        for q in &self.queries {
            if !qids.insert(q.query_id) {
                return Err(SimError::InvalidCatalog(format!("duplicate query_id {}", q.query_id)));
            }
            if q.monthly_frequency <= 0.0 {
                return Err(SimError::InvalidCatalog(format!(
                    "query {} has non-positive frequency",
                    q.query_id
                )));
            }
            let mut dids = std::collections::HashSet::new();
            for d in &q.documents {
                if !dids.insert(d.doc_id) {
                    return Err(SimError::InvalidCatalog(format!(
                        "duplicate doc_id {} under query {}",
                        d.doc_id, q.query_id
                    )));
                }
                if !(0.0..=1.0).contains(&d.relevance) {
                    return Err(SimError::InvalidCatalog(format!(
                        "relevance {} out of [0,1] for ({}, {})",
                        d.relevance, q.query_id, d.doc_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn query(&self, query_id: u64) -> Option<&Query> {
        self.queries.iter().find(|q| q.query_id == query_id)
    }

    /// True relevance for a pair, if present.
    pub fn relevance(&self, query_id: u64, doc_id: u64) -> Option<f64> {
        self.query(query_id)?
            .documents
            .iter()
            .find(|d| d.doc_id == doc_id)
            .map(|d| d.relevance)
    }

    pub fn total_frequency(&self) -> f64 {
        self.queries.iter().map(|q| q.monthly_frequency).sum()
    }
}

/// Prior over true relevance gamma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RelevancePrior {
    Uniform,
    PointMass { value: f64 },
    /// Beta(a, b) sampled by the ratio of two gamma-shaped draws.
    Beta { a: f64, b: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatalogConfig {
    pub n_queries: usize,
    pub docs_per_query: usize,
    /// Frequency weight of the rank-r query is r^(-zipf_exponent).
    pub zipf_exponent: f64,
    pub relevance_prior: RelevancePrior,
}

/// Generates a catalog with Zipf-distributed query frequencies and
/// relevances drawn from the configured prior. Deterministic given the seed.
pub fn generate_catalog(config: &CatalogConfig, seed: u64) -> Result<QueryCatalog, SimError> {
    if config.n_queries == 0 || config.docs_per_query == 0 {
        return Err(SimError::InvalidConfig("sizes must be positive".into()));
    }
    if config.zipf_exponent <= 0.0 {
        return Err(SimError::InvalidConfig("zipf_exponent must be > 0".into()));
    }
    if let RelevancePrior::PointMass { value } = config.relevance_prior {
        if !(0.0..=1.0).contains(&value) {
            return Err(SimError::InvalidConfig("point-mass value out of [0,1]".into()));
        }
    }
    let mut rng = rng_from_seed(seed);
    let mut queries = Vec::with_capacity(config.n_queries);
    for rank in 1..=config.n_queries {
        let weight = (rank as f64).powf(-config.zipf_exponent);
        let mut documents = Vec::with_capacity(config.docs_per_query);
        for d in 0..config.docs_per_query {
            let relevance = sample_prior(&config.relevance_prior, &mut rng);
            documents.push(Document {
                doc_id: d as u64,
                relevance,
                feature_seed: rng.gen(),
            });
        }
        queries.push(Query {
            query_id: rank as u64 - 1,
            monthly_frequency: weight,
            documents,
        });
    }
    let catalog = QueryCatalog { schema_version: CATALOG_SCHEMA_VERSION, queries };
    catalog.validate()?;
    Ok(catalog)
}

fn sample_prior<R: Rng>(prior: &RelevancePrior, rng: &mut R) -> f64 {
    match prior {
        RelevancePrior::Uniform => rng.gen::<f64>(),
        RelevancePrior::PointMass { value } => *value,
        RelevancePrior::Beta { a, b } => {
            let x = rand_distr::Gamma::new(*a, 1.0).map(|g| rng.sample(g)).unwrap_or(0.5);
            let y = rand_distr::Gamma::new(*b, 1.0).map(|g| rng.sample(g)).unwrap_or(0.5);
            if x + y == 0.0 {
                0.5
            } else {
                x / (x + y)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, exp: f64, prior: RelevancePrior) -> CatalogConfig {
        CatalogConfig { n_queries: n, docs_per_query: 3, zipf_exponent: exp, relevance_prior: prior }
    }

    #[test]
    fn zipf_weights_follow_definition() {
        let c = generate_catalog(&cfg(4, 1.0, RelevancePrior::Uniform), 1).unwrap();
        let w: Vec<f64> = c.queries.iter().map(|q| q.monthly_frequency).collect();
        for (i, wi) in w.iter().enumerate() {
            assert!((wi - 1.0 / (i as f64 + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn point_mass_prior_sets_all_relevances() {
        let c = generate_catalog(&cfg(5, 1.0, RelevancePrior::PointMass { value: 0.7 }), 2).unwrap();
        for q in &c.queries {
            for d in &q.documents {
                assert_eq!(d.relevance, 0.7);
            }
        }
    }

    #[test]
    fn head_queries_carry_most_weight() {
        // top 10% of 1000 queries carry > 60% of total weight at exponent 1
        let c = generate_catalog(&cfg(1000, 1.0, RelevancePrior::Uniform), 3).unwrap();
        let total = c.total_frequency();
        let head: f64 = c.queries.iter().take(100).map(|q| q.monthly_frequency).sum();
        assert!(head / total > 0.6, "head share {}", head / total);
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_catalog(&cfg(10, 1.0, RelevancePrior::Uniform), 42).unwrap();
        let b = generate_catalog(&cfg(10, 1.0, RelevancePrior::Uniform), 42).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn rejects_bad_config() {
        assert!(generate_catalog(&cfg(0, 1.0, RelevancePrior::Uniform), 1).is_err());
        assert!(generate_catalog(&cfg(5, 0.0, RelevancePrior::Uniform), 1).is_err());
    }
}
