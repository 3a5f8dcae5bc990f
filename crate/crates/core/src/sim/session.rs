//! Session simulation and top-1 randomization data collection.

use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use super::{click_probability, ClickModelParams, QueryCatalog, SimError};
use crate::rng::derive_stream;

/// One displayed result.
///
/// `examined` is the latent examination draw. It is never serialized and
/// exists only for test oracles (examination-model AUC against ground truth);
/// estimators must not read it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub doc_id: u64,
    #[serde(rename = "pos")]
    pub position: usize,
    #[serde(rename = "click")]
    pub clicked: bool,
    #[serde(rename = "display_s")]
    pub display_time_s: f64,
    #[serde(rename = "dwell_s")]
    pub dwell_time_s: f64,
    /// Hours since epoch of the simulated clock.
    pub ts: u64,
    #[serde(skip)]
    pub examined: bool,
}

/// A ranked result page with one interaction per displayed document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub query_id: u64,
    pub docs: Vec<u64>,
    pub interactions: Vec<Interaction>,
}

impl SessionLog {
    /// Positions must be exactly 1..=docs.len(), each once, matching `docs`.
    pub fn validate(&self) -> Result<(), String> {
        if self.interactions.len() != self.docs.len() {
            return Err(format!(
                "{} interactions for {} docs",
                self.interactions.len(),
                self.docs.len()
            ));
        }
        for (i, it) in self.interactions.iter().enumerate() {
            if it.position != i + 1 {
                return Err(format!("interaction {i} has position {}", it.position));
            }
            if it.doc_id != self.docs[i] {
                return Err(format!("interaction {i} doc {} != docs[{i}]", it.doc_id));
            }
            if it.display_time_s < 0.0 || it.dwell_time_s < 0.0 {
                return Err("negative display or dwell time".into());
            }
            if it.clicked && it.display_time_s <= 0.0 {
                return Err("clicked interaction with zero display time".into());
            }
        }
        Ok(())
    }
}

/// One top-1 randomization record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandRecord {
    pub query_id: u64,
    pub doc_id: u64,
    pub clicked: bool,
    pub ts: u64,
}

/// How documents are assigned to positions within a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankingPolicy {
    /// Catalog order (doc_id ascending as generated).
    Identity,
    /// Descending true relevance, ties by doc_id. An oracle upper bound.
    OracleDescending,
    /// Independent uniform shuffle per session; used to collect the
    /// randomized-ranking logs that propensity estimation needs.
    UniformShuffle,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimOptions {
    pub n_sessions: usize,
    pub seed: u64,
    /// Simulated clock hour assigned to the first session.
    pub start_hour: u64,
    /// Sessions are spread evenly over this many hours.
    pub span_hours: u64,
}

impl SimOptions {
    pub fn new(n_sessions: usize, seed: u64) -> Self {
        Self { n_sessions, seed, start_hour: 0, span_hours: 1 }
    }
}

// Display-time model: examined items draw LogNormal(mu=2.0, sigma=0.5) seconds
// (median ~7.4s), unexamined draw Exponential(mean 0.4s). This separates the
// >5s / <1s label bands while leaving a realistic overlap region.
const DISPLAY_EXAMINED_MU: f64 = 2.0;
const DISPLAY_EXAMINED_SIGMA: f64 = 0.5;
const DISPLAY_UNEXAMINED_MEAN: f64 = 0.4;
// Dwell after a click: LogNormal(mu=3.0, sigma=1.0); zero when unclicked.
const DWELL_MU: f64 = 3.0;
const DWELL_SIGMA: f64 = 1.0;

/// Simulates `options.n_sessions` sessions.
///
/// Queries are drawn proportionally to their frequency weights; each query's
/// documents (up to `K = params.num_positions()`) are laid out by `policy`;
/// examination and clicks follow the trust-bias model. Deterministic given
/// the seed.
pub fn simulate_sessions(
    catalog: &QueryCatalog,
    params: &ClickModelParams,
    policy: RankingPolicy,
    options: &SimOptions,
) -> Result<Vec<SessionLog>, SimError> {
    catalog.validate()?;
    let mut rng = derive_stream(options.seed, 0);
    let weights: Vec<f64> = catalog.queries.iter().map(|q| q.monthly_frequency).collect();
    let total: f64 = weights.iter().sum();
    let display_examined = LogNormal::new(DISPLAY_EXAMINED_MU, DISPLAY_EXAMINED_SIGMA)
        .expect("valid lognormal");
    let display_unexamined =
        Exp::new(1.0 / DISPLAY_UNEXAMINED_MEAN).expect("valid exponential");
    let dwell = LogNormal::new(DWELL_MU, DWELL_SIGMA).expect("valid lognormal");

    let mut sessions = Vec::with_capacity(options.n_sessions);
    for i in 0..options.n_sessions {
        let qi = sample_weighted(&weights, total, &mut rng);
        let query = &catalog.queries[qi];
        let order = rank_docs(query.documents.len().min(params.num_positions()), query, policy, &mut rng);
        let ts = options.start_hour
            + if options.n_sessions == 0 {
                0
            } else {
                (i as u64 * options.span_hours) / options.n_sessions as u64
            };
        let mut docs = Vec::with_capacity(order.len());
        let mut interactions = Vec::with_capacity(order.len());
        for (slot, &di) in order.iter().enumerate() {
            let position = slot + 1;
            let doc = &query.documents[di];
            let examined = rng.gen::<f64>() < params.theta(position);
            let clicked = if examined {
                let p_click_given_exam = params.eps_plus(position) * doc.relevance
                    + params.eps_minus(position) * (1.0 - doc.relevance);
                rng.gen::<f64>() < p_click_given_exam
            } else {
                false
            };
            let display_time_s = if examined {
                display_examined.sample(&mut rng)
            } else {
                display_unexamined.sample(&mut rng)
            };
            let dwell_time_s = if clicked { dwell.sample(&mut rng) } else { 0.0 };
            docs.push(doc.doc_id);
            interactions.push(Interaction {
                doc_id: doc.doc_id,
                position,
                clicked,
                display_time_s,
                dwell_time_s,
                ts,
                examined,
            });
        }
        sessions.push(SessionLog { query_id: query.query_id, docs, interactions });
    }
    Ok(sessions)
}

/// Collects `n` top-1 randomization records: a uniformly sampled (query, doc)
/// pair is placed at position 1 with examination forced, and only the top-1
/// click is recorded.
pub fn generate_randomization_data(
    catalog: &QueryCatalog,
    params: &ClickModelParams,
    n: usize,
    seed: u64,
) -> Result<Vec<RandRecord>, SimError> {
    catalog.validate()?;
    let forced = params.with_top1_examined();
    let mut rng = derive_stream(seed, 1);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let q = &catalog.queries[rng.gen_range(0..catalog.queries.len())];
        let d = &q.documents[rng.gen_range(0..q.documents.len())];
        // theta_1 = 1, so this is eps_plus_1 * gamma + eps_minus_1 * (1 - gamma)
        let p = click_probability(&forced, 1, d.relevance)?;
        let clicked = rng.gen::<f64>() < p;
        out.push(RandRecord { query_id: q.query_id, doc_id: d.doc_id, clicked, ts: i as u64 });
    }
    Ok(out)
}

fn sample_weighted<R: Rng>(weights: &[f64], total: f64, rng: &mut R) -> usize {
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

fn rank_docs<R: Rng>(
    page_len: usize,
    query: &super::Query,
    policy: RankingPolicy,
    rng: &mut R,
) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..query.documents.len()).collect();
    match policy {
        RankingPolicy::Identity => {}
        RankingPolicy::OracleDescending => {
            idx.sort_by(|&a, &b| {
                let (da, db) = (&query.documents[a], &query.documents[b]);
                db.relevance
                    .partial_cmp(&da.relevance)
                    .unwrap()
                    .then(da.doc_id.cmp(&db.doc_id))
            });
        }
        RankingPolicy::UniformShuffle => {
            // Fisher-Yates
            for i in (1..idx.len()).rev() {
                let j = rng.gen_range(0..=i);
                idx.swap(i, j);
            }
        }
    }
    idx.truncate(page_len);
    idx
}

/// Serializes sessions as JSONL, one session per line.
pub fn sessions_to_jsonl(sessions: &[SessionLog]) -> String {
    let mut out = String::new();
    for s in sessions {
        out.push_str(&serde_json::to_string(s).expect("session serializes"));
        out.push('\n');
    }
    out
}
