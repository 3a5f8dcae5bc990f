//! Ranking-quality evaluation: DCG@K, ERR@K, a simulated good/same/bad
//! comparison with an oracle judge, and frequency-bucketed reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("paired ranking sets cover different queries")]
    UnpairedQueries,
    #[error("invalid bucket thresholds: lower {lower} must be < upper {upper}")]
    BadThresholds { lower: f64, upper: f64 },
}

/// True-relevance thresholds mapping γ to grades 0..4.
pub const GRADE_THRESHOLDS: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

/// Graded label for a true relevance value.
pub fn grade(gamma: f64) -> u32 {
    GRADE_THRESHOLDS.iter().filter(|&&t| gamma >= t).count() as u32
}

/// Exponential gain for a grade: 2^grade − 1, so 0, 1, 3, 7, 15.
pub fn gain(gamma: f64) -> f64 {
    (1u64 << grade(gamma)) as f64 - 1.0
}

/// The depth the oracle judge compares at.
pub const JUDGE_DEPTH: usize = 4;

/// A ranked list with per-position oracle gain and relevance probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgedRanking {
    pub query_id: u64,
    pub doc_ids: Vec<u64>,
    /// G_i ≥ 0, from the true relevance via the grade map.
    pub gains: Vec<f64>,
    /// R_i ∈ [0,1]; the true relevance γ itself.
    pub relevances: Vec<f64>,
}

impl JudgedRanking {
    /// Builds the judged view of a ranking against true relevances.
    pub fn from_true_relevance(query_id: u64, ranked: &[(u64, f64)]) -> Self {
        Self {
            query_id,
            doc_ids: ranked.iter().map(|(d, _)| *d).collect(),
            gains: ranked.iter().map(|(_, g)| gain(*g)).collect(),
            relevances: ranked.iter().map(|(_, g)| g.clamp(0.0, 1.0)).collect(),
        }
    }
}

/// DCG@K = Σ_{i≤K} G_i / log2(i + 1), positions 1-based.
pub fn dcg_at_k(ranking: &JudgedRanking, k: usize) -> f64 {
    assert!(k >= 1, "K must be at least 1");
    ranking
        .gains
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| g / ((i + 2) as f64).log2())
        .sum()
}

/// ERR@K = Σ_{i≤K} (1/i) Π_{j<i}(1 − R_j) R_i.
pub fn err_at_k(ranking: &JudgedRanking, k: usize) -> f64 {
    assert!(k >= 1, "K must be at least 1");
    let mut not_stopped = 1.0;
    let mut total = 0.0;
    for (i, &r) in ranking.relevances.iter().take(k).enumerate() {
        total += not_stopped * r / (i + 1) as f64;
        not_stopped *= 1.0 - r;
    }
    total
}

/// Outcome counts of the oracle side-by-side judge.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GsbCounts {
    pub good: usize,
    pub same: usize,
    pub bad: usize,
}

impl GsbCounts {
    /// ΔGSB = (Good − Bad) / (Good + Same + Bad).
    pub fn delta(&self) -> f64 {
        let total = self.good + self.same + self.bad;
        if total == 0 {
            return 0.0;
        }
        (self.good as f64 - self.bad as f64) / total as f64
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct JudgeConfig {
    /// DCG@4 differences within this margin count as Same.
    pub tie_epsilon: f64,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self { tie_epsilon: 1e-6 }
    }
}

/// Compares paired rankings with the oracle judge: per query, Good if side
/// A's DCG@4 beats side B's by more than the tie margin, Bad if the
/// opposite, Same otherwise.
pub fn simulated_gsb(
    side_a: &[JudgedRanking],
    side_b: &[JudgedRanking],
    judge: &JudgeConfig,
) -> Result<GsbCounts, MetricsError> {
    let ids_a: BTreeMap<u64, &JudgedRanking> =
        side_a.iter().map(|r| (r.query_id, r)).collect();
    let ids_b: BTreeMap<u64, &JudgedRanking> =
        side_b.iter().map(|r| (r.query_id, r)).collect();
    if ids_a.len() != side_a.len()
        || ids_b.len() != side_b.len()
        || ids_a.keys().ne(ids_b.keys())
    {
        return Err(MetricsError::UnpairedQueries);
    }
    let mut counts = GsbCounts::default();
    for (qid, a) in &ids_a {
        let diff = dcg_at_k(a, JUDGE_DEPTH) - dcg_at_k(ids_b[qid], JUDGE_DEPTH);
        if diff > judge.tie_epsilon {
            counts.good += 1;
        } else if diff < -judge.tie_epsilon {
            counts.bad += 1;
        } else {
            counts.same += 1;
        }
    }
    Ok(counts)
}

/// Monthly-frequency partition into {High, Mid, Tail}.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct BucketSpec {
    /// Frequencies below this are Tail.
    pub tail_below: f64,
    /// Frequencies at or above this are High; [tail_below, high_at) is Mid.
    pub high_at: f64,
}

impl Default for BucketSpec {
    fn default() -> Self {
        Self { tail_below: 10.0, high_at: 1000.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Bucket {
    High,
    Mid,
    Tail,
}

impl Bucket {
    pub fn name(self) -> &'static str {
        match self {
            Bucket::High => "high",
            Bucket::Mid => "mid",
            Bucket::Tail => "tail",
        }
    }
}

impl BucketSpec {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.tail_below < self.high_at {
            Ok(())
        } else {
            Err(MetricsError::BadThresholds {
                lower: self.tail_below,
                upper: self.high_at,
            })
        }
    }

    pub fn bucket(&self, monthly_frequency: f64) -> Bucket {
        if monthly_frequency >= self.high_at {
            Bucket::High
        } else if monthly_frequency >= self.tail_below {
            Bucket::Mid
        } else {
            Bucket::Tail
        }
    }
}

/// One row of the bucketed comparison report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub system: String,
    pub bucket: &'static str,
    pub metric: String,
    pub mean_value: f64,
    pub baseline_mean: f64,
    /// Percent improvement over the baseline; None when the bucket is
    /// empty or the baseline mean is zero.
    pub relative_improvement_pct: Option<f64>,
    pub n_queries: usize,
}

/// Per-query metric values for one named system, keyed by query id.
pub type SystemMetrics = BTreeMap<u64, f64>;

/// Builds the bucketed relative-improvement table of each system against
/// the named baseline. `frequencies` maps query id to monthly frequency;
/// empty buckets yield rows with no relative improvement rather than
/// errors.
pub fn bucketed_report(
    metric_name: &str,
    systems: &BTreeMap<String, SystemMetrics>,
    baseline: &str,
    frequencies: &BTreeMap<u64, f64>,
    spec: &BucketSpec,
) -> Result<Vec<BucketRow>, MetricsError> {
    spec.validate()?;
    let base = systems.get(baseline).ok_or(MetricsError::UnpairedQueries)?;
    let mut rows = Vec::new();
    for (name, metrics) in systems {
        if metrics.keys().ne(base.keys()) {
            return Err(MetricsError::UnpairedQueries);
        }
        for bucket in [Bucket::High, Bucket::Mid, Bucket::Tail] {
            let qids: Vec<u64> = metrics
                .keys()
                .filter(|q| frequencies.get(q).map(|&f| spec.bucket(f)) == Some(bucket))
                .copied()
                .collect();
            let n = qids.len();
            let mean = |m: &SystemMetrics| {
                if n == 0 {
                    0.0
                } else {
                    qids.iter().map(|q| m[q]).sum::<f64>() / n as f64
                }
            };
            let mean_value = mean(metrics);
            let baseline_mean = mean(base);
            let relative_improvement_pct = if n == 0 || baseline_mean == 0.0 {
                None
            } else {
                Some((mean_value - baseline_mean) / baseline_mean * 100.0)
            };
            rows.push(BucketRow {
                system: name.clone(),
                bucket: bucket.name(),
                metric: metric_name.to_string(),
                mean_value,
                baseline_mean,
                relative_improvement_pct,
                n_queries: n,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranking(query_id: u64, gammas: &[f64]) -> JudgedRanking {
        let ranked: Vec<(u64, f64)> =
            gammas.iter().enumerate().map(|(i, &g)| (i as u64 + 1, g)).collect();
        JudgedRanking::from_true_relevance(query_id, &ranked)
    }

    #[test]
    fn grade_and_gain_map() {
        assert_eq!(grade(0.0), 0);
        assert_eq!(grade(0.2), 1);
        assert_eq!(grade(0.55), 2);
        assert_eq!(grade(1.0), 4);
        assert_eq!(gain(1.0), 15.0);
        assert_eq!(gain(0.1), 0.0);
    }

    #[test]
    fn dcg_hand_values() {
        let single = JudgedRanking {
            query_id: 1,
            doc_ids: vec![1],
            gains: vec![3.0],
            relevances: vec![0.5],
        };
        assert_eq!(dcg_at_k(&single, 1), 3.0);

        let two = JudgedRanking {
            query_id: 1,
            doc_ids: vec![1, 2],
            gains: vec![3.0, 1.0],
            relevances: vec![0.5, 0.5],
        };
        assert!((dcg_at_k(&two, 2) - 3.63093).abs() < 1e-5);

        let zeros = ranking(1, &[0.0, 0.1, 0.05]);
        assert_eq!(dcg_at_k(&zeros, 3), 0.0);
    }

    #[test]
    fn err_hand_values() {
        let single = ranking(1, &[0.5]);
        assert_eq!(err_at_k(&single, 1), 0.5);
        let two = ranking(1, &[0.5, 0.5]);
        assert!((err_at_k(&two, 2) - 0.625).abs() < 1e-12);
        // a certainly-relevant top doc absorbs the whole cascade
        let cascade = ranking(1, &[1.0, 0.9, 0.2]);
        assert_eq!(err_at_k(&cascade, 3), 1.0);
    }

    #[test]
    fn err_bounded_and_dcg_nonnegative() {
        let r = ranking(1, &[0.9, 0.8, 0.3, 0.1, 0.7]);
        for k in 1..=5 {
            let e = err_at_k(&r, k);
            assert!((0.0..=1.0).contains(&e));
            assert!(dcg_at_k(&r, k) >= 0.0);
        }
    }

    #[test]
    fn swapping_better_doc_upward_never_hurts() {
        let worse = ranking(1, &[0.3, 0.9, 0.5]);
        let better = ranking(1, &[0.9, 0.3, 0.5]);
        assert!(dcg_at_k(&better, 3) >= dcg_at_k(&worse, 3));
        assert!(err_at_k(&better, 3) >= err_at_k(&worse, 3));
    }

    #[test]
    fn descending_order_is_permutation_optimal_up_to_five() {
        // brute-force every permutation of a 5-doc list: none beats the
        // relevance-descending order on either metric
        let gammas = [0.85, 0.6, 0.45, 0.15, 0.05];
        let mut idx = [0usize, 1, 2, 3, 4];
        let best = ranking(1, &gammas);
        let best_dcg = dcg_at_k(&best, 5);
        let best_err = err_at_k(&best, 5);
        permute(&mut idx, 0, &mut |p| {
            let perm: Vec<f64> = p.iter().map(|&i| gammas[i]).collect();
            let r = ranking(1, &perm);
            assert!(dcg_at_k(&r, 5) <= best_dcg + 1e-12);
            assert!(err_at_k(&r, 5) <= best_err + 1e-12);
        });
    }

    fn permute(items: &mut [usize], k: usize, visit: &mut impl FnMut(&[usize])) {
        if k == items.len() {
            visit(items);
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            permute(items, k + 1, visit);
            items.swap(k, i);
        }
    }

    #[test]
    fn gsb_identical_sides_are_all_same() {
        let side: Vec<JudgedRanking> =
            (1..=5).map(|q| ranking(q, &[0.9, 0.4, 0.1])).collect();
        let counts = simulated_gsb(&side, &side, &JudgeConfig::default()).unwrap();
        assert_eq!(counts.delta(), 0.0);
        assert_eq!(counts.same, 5);
    }

    #[test]
    fn gsb_strict_dominance_is_one() {
        let a: Vec<JudgedRanking> = (1..=4).map(|q| ranking(q, &[0.9, 0.5])).collect();
        let b: Vec<JudgedRanking> = (1..=4).map(|q| ranking(q, &[0.5, 0.9])).collect();
        let counts = simulated_gsb(&a, &b, &JudgeConfig::default()).unwrap();
        assert_eq!(counts.delta(), 1.0);
    }

    #[test]
    fn gsb_mixed_hand_value_and_antisymmetry() {
        // A better on 3 queries, worse on 1, tied on 6
        let mut a = Vec::new();
        let mut b = Vec::new();
        for q in 0..10u64 {
            let (ga, gb) = match q {
                0..=2 => (&[0.9, 0.2][..], &[0.2, 0.9][..]),
                3 => (&[0.2, 0.9][..], &[0.9, 0.2][..]),
                _ => (&[0.5, 0.5][..], &[0.5, 0.5][..]),
            };
            a.push(ranking(q, ga));
            b.push(ranking(q, gb));
        }
        let judge = JudgeConfig::default();
        let ab = simulated_gsb(&a, &b, &judge).unwrap();
        let ba = simulated_gsb(&b, &a, &judge).unwrap();
        assert!((ab.delta() - 0.2).abs() < 1e-12);
        assert_eq!(ab.delta(), -ba.delta());
    }

    #[test]
    fn gsb_rejects_unpaired_queries() {
        let a = vec![ranking(1, &[0.5])];
        let b = vec![ranking(2, &[0.5])];
        assert!(matches!(
            simulated_gsb(&a, &b, &JudgeConfig::default()),
            Err(MetricsError::UnpairedQueries)
        ));
    }

    #[test]
    fn bucket_assignment() {
        let spec = BucketSpec::default();
        assert_eq!(spec.bucket(5000.0), Bucket::High);
        assert_eq!(spec.bucket(1000.0), Bucket::High);
        assert_eq!(spec.bucket(999.0), Bucket::Mid);
        assert_eq!(spec.bucket(10.0), Bucket::Mid);
        assert_eq!(spec.bucket(9.0), Bucket::Tail);
        assert!(BucketSpec { tail_below: 10.0, high_at: 10.0 }.validate().is_err());
    }

    #[test]
    fn bucketed_report_identical_systems_are_flat() {
        let mut per_query = SystemMetrics::new();
        let mut freqs = BTreeMap::new();
        for q in 0..6u64 {
            per_query.insert(q, 2.0);
            freqs.insert(q, 500.0); // all Mid
        }
        let mut systems = BTreeMap::new();
        systems.insert("baseline".to_string(), per_query.clone());
        systems.insert("candidate".to_string(), per_query);
        let rows = bucketed_report(
            "dcg@4",
            &systems,
            "baseline",
            &freqs,
            &BucketSpec::default(),
        )
        .unwrap();
        for row in &rows {
            match row.bucket {
                "mid" => {
                    assert_eq!(row.relative_improvement_pct, Some(0.0));
                    assert_eq!(row.n_queries, 6);
                }
                _ => {
                    assert_eq!(row.relative_improvement_pct, None);
                    assert_eq!(row.n_queries, 0);
                }
            }
        }
    }

    #[test]
    fn bucketed_report_ten_percent_gain() {
        let mut base = SystemMetrics::new();
        let mut cand = SystemMetrics::new();
        let mut freqs = BTreeMap::new();
        base.insert(1, 1.0);
        cand.insert(1, 1.1);
        freqs.insert(1, 2000.0);
        let mut systems = BTreeMap::new();
        systems.insert("baseline".to_string(), base);
        systems.insert("candidate".to_string(), cand);
        let rows =
            bucketed_report("dcg@4", &systems, "baseline", &freqs, &BucketSpec::default())
                .unwrap();
        let row = rows
            .iter()
            .find(|r| r.system == "candidate" && r.bucket == "high")
            .unwrap();
        assert!((row.relative_improvement_pct.unwrap() - 10.0).abs() < 1e-9);
    }
}
