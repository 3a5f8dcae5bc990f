//! Pipeline stages. Each stage reads its upstream artifacts (verifying
//! config hash and schema version), does its work, writes versioned
//! artifacts plus a manifest, and returns a typed summary. Stages are
//! deterministic given the config seed; reruns reproduce byte-identical
//! artifacts and reports.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use relest_core::examination::{
    auc, below_anchor_means_by_position, exam_curves, mine_exam_labels, train_exam_model,
    GbdtModel,
};
use relest_core::imputation::{imp_predict, imp_train, SyntheticEncoder};
use relest_core::metrics::{
    bucketed_report, dcg_at_k, err_at_k, simulated_gsb, GsbCounts, JudgeConfig, JudgedRanking,
    SystemMetrics,
};
use relest_core::mlp::MlpModel;
use relest_core::neural_dr::{
    approx_affine_train, dr_score, rank_documents, tradeoff_train, ApproxAffineModel,
    JoinedRecord, ScorerBundle,
};
use relest_core::rng::derive_stream;
use relest_core::sim::{
    generate_catalog, generate_randomization_data, simulate_sessions, QueryCatalog, RandRecord,
    RankingPolicy, SessionLog, SimOptions,
};
use relest_core::tracking::{
    attach_examination, build_click_features, parse_click_log, ClickFeatureVector,
    TrackingDicts, SESSION_LOG_SCHEMA_VERSION,
};

use crate::artifact::{
    file_sha256, read_artifact, write_artifact, write_manifest, write_text, Layout, Manifest,
};
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::theory;

fn manifest_for(
    config: &ExperimentConfig,
    stage: &str,
    started: Instant,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
) -> Result<Manifest, CliError> {
    let hash_all = |paths: &[PathBuf]| -> Result<Vec<(String, String)>, CliError> {
        paths
            .iter()
            .map(|p| Ok((p.display().to_string(), file_sha256(p)?)))
            .collect()
    };
    Ok(Manifest {
        stage: stage.to_string(),
        config_hash: config.hash(),
        seed: config.seed,
        inputs: hash_all(inputs)?,
        outputs: hash_all(outputs)?,
        duration_ms: started.elapsed().as_millis(),
    })
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub n_sessions: usize,
    pub n_rand: usize,
    pub rand_click_rate: f64,
}

/// Generates the catalog, one month of production sessions under the
/// catalog-order policy, and the top-1 randomization records.
pub fn simulate(config: &ExperimentConfig) -> Result<SimulateSummary, CliError> {
    let started = Instant::now();
    let layout = Layout::new(&config.output_dir);
    let hash = config.hash();
    let params = config.click_model.build()?;

    let catalog = generate_catalog(&config.catalog, config.seed)?;
    let options = SimOptions {
        n_sessions: config.simulation.n_sessions,
        seed: config.seed,
        start_hour: 0,
        span_hours: config.simulation.span_hours,
    };
    let sessions = simulate_sessions(&catalog, &params, RankingPolicy::Identity, &options)?;
    let rand_data = generate_randomization_data(
        &catalog,
        &params,
        config.simulation.n_rand,
        config.seed.wrapping_add(1),
    )?;

    write_artifact(&layout.catalog(), &hash, config.seed, &catalog)?;
    let mut jsonl = format!(
        "{{\"schema_version\":{SESSION_LOG_SCHEMA_VERSION},\"config_hash\":\"{hash}\",\"seed\":{}}}\n",
        config.seed
    );
    jsonl.push_str(&relest_core::sim::sessions_to_jsonl(&sessions));
    write_text(&layout.sessions(), &jsonl)?;
    write_artifact(&layout.rand_data(), &hash, config.seed, &rand_data)?;

    let manifest = manifest_for(
        config,
        "simulate",
        started,
        &[],
        &[layout.catalog(), layout.sessions(), layout.rand_data()],
    )?;
    write_manifest(&layout, &manifest)?;
    let clicks = rand_data.iter().filter(|r| r.clicked).count();
    Ok(SimulateSummary {
        n_sessions: sessions.len(),
        n_rand: rand_data.len(),
        rand_click_rate: clicks as f64 / rand_data.len().max(1) as f64,
    })
}

fn load_catalog(layout: &Layout, hash: &str) -> Result<QueryCatalog, CliError> {
    Ok(read_artifact::<QueryCatalog>(&layout.catalog(), hash, "simulate")?.payload)
}

fn load_rand(layout: &Layout, hash: &str) -> Result<Vec<RandRecord>, CliError> {
    Ok(read_artifact::<Vec<RandRecord>>(&layout.rand_data(), hash, "simulate")?.payload)
}

/// Loads the session log, checking the header line carries the current
/// config hash before anything is parsed.
fn load_sessions(layout: &Layout, hash: &str) -> Result<Vec<SessionLog>, CliError> {
    let path = layout.sessions();
    let raw = std::fs::read_to_string(&path).map_err(|_| CliError::MissingArtifact {
        artifact: "sessions.jsonl".into(),
        producer: "simulate".into(),
        path: path.display().to_string(),
    })?;
    #[derive(Deserialize)]
    struct Header {
        config_hash: String,
    }
    let first = raw.lines().next().unwrap_or("");
    let header: Header = serde_json::from_str(first)
        .map_err(|e| CliError::Internal(format!("session log header: {e}")))?;
    if header.config_hash != hash {
        return Err(CliError::StaleArtifact {
            artifact: "sessions.jsonl".into(),
            producer: "simulate".into(),
            found: header.config_hash,
            expected: hash.to_string(),
        });
    }
    let report = parse_click_log(&raw)?;
    if !report.rejects.is_empty() {
        return Err(CliError::Internal(format!(
            "{} rejected session lines (first: line {}: {})",
            report.rejects.len(),
            report.rejects[0].line_number,
            report.rejects[0].reason
        )));
    }
    Ok(report.sessions)
}

// --------------------------------------------------------------- train-exam

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExamSummary {
    pub holdout_auc: f64,
    pub n_train: usize,
    pub n_holdout: usize,
    /// Mean predicted examination by position.
    pub position_curve: Vec<(usize, f64)>,
    /// (position, mean ê below a click, unconditional mean ê).
    pub below_anchor: Vec<(usize, f64, f64)>,
}

pub fn train_exam(config: &ExperimentConfig) -> Result<ExamSummary, CliError> {
    let started = Instant::now();
    let layout = Layout::new(&config.output_dir);
    let hash = config.hash();
    let sessions = load_sessions(&layout, &hash)?;

    let mut labeled = mine_exam_labels(&sessions);
    // deterministic shuffle, then cap and split
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut derive_stream(config.seed, 10));
    order.truncate(config.exam_model.max_examples);
    let picked: Vec<_> = order.iter().map(|&i| labeled[i].clone()).collect();
    labeled = picked;
    let n_holdout =
        ((labeled.len() as f64) * config.exam_model.holdout_fraction).round() as usize;
    let (holdout, train) = labeled.split_at(n_holdout);

    let model = train_exam_model(train, &config.exam_model.gbdt())?;
    let scores: Vec<f64> = holdout
        .iter()
        .map(|ex| relest_core::examination::exam_predict(&model, &ex.features))
        .collect();
    let truths: Vec<bool> = holdout.iter().map(|ex| ex.label).collect();
    let holdout_auc = auc(&scores, &truths);

    let (pos_curve, _offset_curve) = exam_curves(&model, &sessions);
    let below_points = below_anchor_means_by_position(&model, &sessions);
    let uncond: BTreeMap<usize, f64> =
        pos_curve.iter().map(|p| (p.key, p.mean_e)).collect();
    let below: Vec<(usize, f64, f64)> = below_points
        .iter()
        .filter_map(|p| uncond.get(&p.key).map(|&u| (p.key, p.mean_e, u)))
        .collect();

    write_artifact(&layout.exam_model(), &hash, config.seed, &model)?;
    let mut rows = vec![vec![
        "auc".to_string(),
        String::new(),
        format!("{holdout_auc:.6}"),
        String::new(),
    ]];
    for p in &pos_curve {
        rows.push(vec![
            "position_curve".into(),
            p.key.to_string(),
            format!("{:.6}", p.mean_e),
            p.n.to_string(),
        ]);
    }
    for &(pos, below_mean, uncond) in &below {
        rows.push(vec![
            "below_anchor".into(),
            pos.to_string(),
            format!("{below_mean:.6}"),
            format!("{uncond:.6}"),
        ]);
    }
    write_text(
        &layout.exam_report(),
        &crate::artifact::to_csv(&["kind", "position", "value", "extra"], &rows),
    )?;

    let manifest = manifest_for(
        config,
        "train-exam",
        started,
        &[layout.sessions()],
        &[layout.exam_model(), layout.exam_report()],
    )?;
    write_manifest(&layout, &manifest)?;
    Ok(ExamSummary {
        holdout_auc,
        n_train: train.len(),
        n_holdout: holdout.len(),
        position_curve: pos_curve.iter().map(|p| (p.key, p.mean_e)).collect(),
        below_anchor: below,
    })
}

// ---------------------------------------------------------------- train-imp

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImpSummary {
    pub final_loss: f64,
    /// Mean |prediction − true relevance| over the whole catalog.
    pub mae: f64,
}

pub fn train_imp(config: &ExperimentConfig) -> Result<ImpSummary, CliError> {
    let started = Instant::now();
    let layout = Layout::new(&config.output_dir);
    let hash = config.hash();
    let catalog = load_catalog(&layout, &hash)?;
    let rand_data = load_rand(&layout, &hash)?;

    let encoder = SyntheticEncoder::with_noise(&catalog, config.encoder_noise);
    let mut model = relest_core::imputation::default_imputation_model(
        relest_core::imputation::SYNTHETIC_FEATURE_DIM,
        config.seed.wrapping_add(2),
    );
    let mut train_cfg = config.imputation_training.clone();
    train_cfg.seed = config.seed.wrapping_add(3);
    let trace = imp_train(&mut model, &encoder, &rand_data, &train_cfg)?;

    let mut abs_err = 0.0;
    let mut n = 0usize;
    for q in &catalog.queries {
        for d in &q.documents {
            abs_err += (imp_predict(&model, &encoder, q.query_id, d.doc_id) - d.relevance).abs();
            n += 1;
        }
    }

    write_artifact(&layout.imp_model(), &hash, config.seed, &model)?;
    let manifest = manifest_for(
        config,
        "train-imp",
        started,
        &[layout.catalog(), layout.rand_data()],
        &[layout.imp_model()],
    )?;
    write_manifest(&layout, &manifest)?;
    Ok(ImpSummary {
        final_loss: trace.last().copied().unwrap_or(f64::NAN),
        mae: abs_err / n.max(1) as f64,
    })
}

// ------------------------------------------------------------- train-affine

/// Replays the month of traffic on the simulated clock and joins each
/// randomization record to the feature snapshot current at its timestamp.
fn build_tracking_and_join(
    config: &ExperimentConfig,
    sessions: &[SessionLog],
    rand_data: &[RandRecord],
    exam_model: &GbdtModel,
) -> Result<(TrackingDicts, Vec<(RandRecord, ClickFeatureVector)>), CliError> {
    let annotated = attach_examination(sessions, exam_model);
    let span = config.simulation.span_hours.max(1);
    let mut by_hour: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, a) in annotated.iter().enumerate() {
        let ts = a.session.interactions.first().map_or(0, |it| it.ts);
        by_hour.entry(ts).or_default().push(i);
    }
    // randomization record index -> hour, spread over the same span
    let n_rand = rand_data.len().max(1) as u64;
    let mut rand_by_hour: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, _) in rand_data.iter().enumerate() {
        let hour = (i as u64) * span / n_rand;
        rand_by_hour.entry(hour).or_default().push(i);
    }

    let mut dicts = TrackingDicts::new();
    let mut joined = Vec::with_capacity(rand_data.len());
    for hour in 0..span {
        let batch: Vec<_> = by_hour
            .get(&hour)
            .map(|idx| idx.iter().map(|&i| annotated[i].clone()).collect())
            .unwrap_or_default();
        dicts.advance_clock_and_aggregate(&batch, hour)?;
        if let Some(idx) = rand_by_hour.get(&hour) {
            for &i in idx {
                let r = &rand_data[i];
                joined.push((
                    r.clone(),
                    build_click_features(&dicts, r.query_id, r.doc_id),
                ));
            }
        }
    }
    Ok((dicts, joined))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AffineSummary {
    pub final_loss: f64,
    pub n_joined: usize,
    /// Fraction of joined records whose feature vector was all zero.
    pub zero_feature_fraction: f64,
}

pub fn train_affine(config: &ExperimentConfig) -> Result<AffineSummary, CliError> {
    let started = Instant::now();
    let layout = Layout::new(&config.output_dir);
    let hash = config.hash();
    let sessions = load_sessions(&layout, &hash)?;
    let rand_data = load_rand(&layout, &hash)?;
    let exam_model: GbdtModel =
        read_artifact(&layout.exam_model(), &hash, "train-exam")?.payload;

    let (dicts, joined) = build_tracking_and_join(config, &sessions, &rand_data, &exam_model)?;
    let examples: Vec<(ClickFeatureVector, bool)> =
        joined.iter().map(|(r, x)| (x.clone(), r.clicked)).collect();
    let mut train_cfg = config.affine_training.clone();
    train_cfg.seed = config.seed.wrapping_add(4);
    let (model, trace) = approx_affine_train(&examples, &train_cfg)?;

    write_artifact(&layout.tracking(), &hash, config.seed, &dicts)?;
    write_artifact(&layout.joined_rand(), &hash, config.seed, &joined)?;
    write_artifact(&layout.affine_model(), &hash, config.seed, &model)?;
    let manifest = manifest_for(
        config,
        "train-affine",
        started,
        &[layout.sessions(), layout.rand_data(), layout.exam_model()],
        &[layout.tracking(), layout.joined_rand(), layout.affine_model()],
    )?;
    write_manifest(&layout, &manifest)?;
    let zeros = joined.iter().filter(|(_, x)| x.is_zero()).count();
    Ok(AffineSummary {
        final_loss: trace.last().copied().unwrap_or(f64::NAN),
        n_joined: joined.len(),
        zero_feature_fraction: zeros as f64 / joined.len().max(1) as f64,
    })
}

// ----------------------------------------------------------- train-tradeoff

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TradeoffSummary {
    pub final_loss: f64,
    /// ζ̄ at the all-zero feature vector: the weight tail pairs put on the
    /// imputation score.
    pub zeta_at_zero: f64,
}

pub fn train_tradeoff(config: &ExperimentConfig) -> Result<TradeoffSummary, CliError> {
    let started = Instant::now();
    let layout = Layout::new(&config.output_dir);
    let hash = config.hash();
    let catalog = load_catalog(&layout, &hash)?;
    let imp_model: MlpModel = read_artifact(&layout.imp_model(), &hash, "train-imp")?.payload;
    let affine: ApproxAffineModel =
        read_artifact(&layout.affine_model(), &hash, "train-affine")?.payload;
    let joined: Vec<(RandRecord, ClickFeatureVector)> =
        read_artifact(&layout.joined_rand(), &hash, "train-affine")?.payload;

    let encoder = SyntheticEncoder::with_noise(&catalog, config.encoder_noise);
    let records: Vec<JoinedRecord> = joined
        .into_iter()
        .map(|(record, features)| JoinedRecord { record, features })
        .collect();
    let mut train_cfg = config.tradeoff_training.clone();
    train_cfg.seed = config.seed.wrapping_add(5);
    let (tradeoff, trace) =
        tradeoff_train(&records, &imp_model, &encoder, &affine, &train_cfg)?;

    let zero = ClickFeatureVector {
        x: vec![0.0; relest_core::tracking::FEATURE_DIM],
        schema_id: relest_core::tracking::FEATURE_SCHEMA_ID.to_string(),
    };
    let zeta_at_zero = tradeoff.predict(&zero)?;

    write_artifact(&layout.tradeoff_model(), &hash, config.seed, &tradeoff)?;
    let bundle = ScorerBundle::new(imp_model, affine, tradeoff);
    write_artifact(&layout.scorer_bundle(), &hash, config.seed, &bundle)?;
    let manifest = manifest_for(
        config,
        "train-tradeoff",
        started,
        &[
            layout.catalog(),
            layout.imp_model(),
            layout.affine_model(),
            layout.joined_rand(),
        ],
        &[layout.tradeoff_model(), layout.scorer_bundle()],
    )?;
    write_manifest(&layout, &manifest)?;
    Ok(TradeoffSummary {
        final_loss: trace.last().copied().unwrap_or(f64::NAN),
        zeta_at_zero,
    })
}

// --------------------------------------------------------------------- score

/// Per-query rankings of every system under comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryRankings {
    pub query_id: u64,
    pub systems: BTreeMap<String, Vec<u64>>,
}

pub const SYSTEM_PRODUCTION: &str = "production";
pub const SYSTEM_IMPUTATION: &str = "imputation";
pub const SYSTEM_AFFINE: &str = "affine";
pub const SYSTEM_DR: &str = "dr";

pub fn score(config: &ExperimentConfig) -> Result<usize, CliError> {
    let started = Instant::now();
    let layout = Layout::new(&config.output_dir);
    let hash = config.hash();
    let catalog = load_catalog(&layout, &hash)?;
    let dicts: TrackingDicts = read_artifact(&layout.tracking(), &hash, "train-affine")?.payload;
    let bundle: ScorerBundle =
        read_artifact(&layout.scorer_bundle(), &hash, "train-tradeoff")?.payload;
    if bundle.feature_schema_id != relest_core::tracking::FEATURE_SCHEMA_ID {
        return Err(CliError::Internal(format!(
            "scorer bundle built for feature schema {}, runtime uses {}",
            bundle.feature_schema_id,
            relest_core::tracking::FEATURE_SCHEMA_ID
        )));
    }

    let encoder = SyntheticEncoder::with_noise(&catalog, config.encoder_noise);
    let mut rankings = Vec::with_capacity(catalog.queries.len());
    for q in &catalog.queries {
        let candidates: Vec<u64> = q.documents.iter().map(|d| d.doc_id).collect();
        let mut systems = BTreeMap::new();
        systems.insert(SYSTEM_PRODUCTION.to_string(), candidates.clone());
        systems.insert(
            SYSTEM_IMPUTATION.to_string(),
            rank_documents(&candidates, |d| {
                imp_predict(&bundle.imputation, &encoder, q.query_id, d)
            }),
        );
        systems.insert(
            SYSTEM_AFFINE.to_string(),
            rank_documents(&candidates, |d| {
                let x = build_click_features(&dicts, q.query_id, d);
                bundle.affine.predict(&x).expect("schema matches")
            }),
        );
        systems.insert(
            SYSTEM_DR.to_string(),
            rank_documents(&candidates, |d| {
                dr_score(
                    q.query_id,
                    d,
                    &dicts,
                    &bundle.imputation,
                    &encoder,
                    &bundle.affine,
                    &bundle.tradeoff,
                )
                .expect("schema matches")
                .value
            }),
        );
        rankings.push(QueryRankings { query_id: q.query_id, systems });
    }

    write_artifact(&layout.rankings(), &hash, config.seed, &rankings)?;
    let manifest = manifest_for(
        config,
        "score",
        started,
        &[layout.catalog(), layout.tracking(), layout.scorer_bundle()],
        &[layout.rankings()],
    )?;
    write_manifest(&layout, &manifest)?;
    Ok(rankings.len())
}

// ------------------------------------------------------------------ evaluate

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    /// system -> bucket name -> (mean DCG@4, n_queries).
    pub dcg_by_bucket: BTreeMap<String, BTreeMap<String, (f64, usize)>>,
    /// (side A, side B) -> ΔGSB counts over all queries.
    pub gsb: BTreeMap<String, GsbCounts>,
}

pub fn evaluate(config: &ExperimentConfig) -> Result<EvalSummary, CliError> {
    let started = Instant::now();
    let layout = Layout::new(&config.output_dir);
    let hash = config.hash();
    let catalog = load_catalog(&layout, &hash)?;
    let rankings: Vec<QueryRankings> =
        read_artifact(&layout.rankings(), &hash, "score")?.payload;

    // expected sessions per month per query, the bucketing frequency
    let total_weight = catalog.total_frequency();
    let frequencies: BTreeMap<u64, f64> = catalog
        .queries
        .iter()
        .map(|q| {
            (
                q.query_id,
                q.monthly_frequency / total_weight * config.simulation.n_sessions as f64,
            )
        })
        .collect();

    let judged = |query_id: u64, docs: &[u64]| -> JudgedRanking {
        let ranked: Vec<(u64, f64)> = docs
            .iter()
            .map(|&d| (d, catalog.relevance(query_id, d).unwrap_or(0.0)))
            .collect();
        JudgedRanking::from_true_relevance(query_id, &ranked)
    };

    let systems = [SYSTEM_PRODUCTION, SYSTEM_IMPUTATION, SYSTEM_AFFINE, SYSTEM_DR];
    let mut judged_lists: BTreeMap<&str, Vec<JudgedRanking>> = BTreeMap::new();
    let mut dcg_metrics: BTreeMap<String, SystemMetrics> = BTreeMap::new();
    let mut err_metrics: BTreeMap<String, SystemMetrics> = BTreeMap::new();
    for sys in systems {
        let mut lists = Vec::with_capacity(rankings.len());
        let mut dcg = SystemMetrics::new();
        let mut err = SystemMetrics::new();
        for r in &rankings {
            let docs = r.systems.get(sys).ok_or_else(|| {
                CliError::Internal(format!("rankings missing system {sys}"))
            })?;
            let j = judged(r.query_id, docs);
            dcg.insert(r.query_id, dcg_at_k(&j, 4));
            err.insert(r.query_id, err_at_k(&j, 4));
            lists.push(j);
        }
        judged_lists.insert(sys, lists);
        dcg_metrics.insert(sys.to_string(), dcg);
        err_metrics.insert(sys.to_string(), err);
    }

    let mut rows = Vec::new();
    let mut summary_dcg: BTreeMap<String, BTreeMap<String, (f64, usize)>> = BTreeMap::new();
    for (metric_name, metrics) in [("dcg@4", &dcg_metrics), ("err@4", &err_metrics)] {
        let table =
            bucketed_report(metric_name, metrics, SYSTEM_PRODUCTION, &frequencies, &config.buckets)?;
        for row in &table {
            rows.push(vec![
                row.system.clone(),
                row.bucket.to_string(),
                row.metric.clone(),
                "4".to_string(),
                format!("{:.6}", row.mean_value),
                row.relative_improvement_pct
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_else(|| "N/A".to_string()),
                row.n_queries.to_string(),
            ]);
            if metric_name == "dcg@4" {
                summary_dcg
                    .entry(row.system.clone())
                    .or_default()
                    .insert(row.bucket.to_string(), (row.mean_value, row.n_queries));
            }
        }
    }
    write_text(
        &layout.eval_report(),
        &crate::artifact::to_csv(
            &["system", "bucket", "metric", "K", "value", "relative_improvement", "n_queries"],
            &rows,
        ),
    )?;

    let judge = JudgeConfig::default();
    let pairs = [
        (SYSTEM_DR, SYSTEM_IMPUTATION),
        (SYSTEM_DR, SYSTEM_AFFINE),
        (SYSTEM_IMPUTATION, SYSTEM_AFFINE),
        (SYSTEM_DR, SYSTEM_PRODUCTION),
    ];
    let mut gsb = BTreeMap::new();
    let mut gsb_rows = Vec::new();
    for (a, b) in pairs {
        let counts = simulated_gsb(&judged_lists[a], &judged_lists[b], &judge)?;
        gsb_rows.push(vec![
            a.to_string(),
            b.to_string(),
            counts.good.to_string(),
            counts.same.to_string(),
            counts.bad.to_string(),
            format!("{:.6}", counts.delta()),
        ]);
        gsb.insert(format!("{a}_vs_{b}"), counts);
    }
    write_text(
        &layout.gsb_report(),
        &crate::artifact::to_csv(&["side_a", "side_b", "good", "same", "bad", "delta"], &gsb_rows),
    )?;

    let manifest = manifest_for(
        config,
        "evaluate",
        started,
        &[layout.catalog(), layout.rankings()],
        &[layout.eval_report(), layout.gsb_report()],
    )?;
    write_manifest(&layout, &manifest)?;
    Ok(EvalSummary { dcg_by_bucket: summary_dcg, gsb })
}

// -------------------------------------------------------------- verify-theory

pub fn verify_theory(config: &ExperimentConfig, ci_mode: bool) -> Result<theory::TheorySummary, CliError> {
    let started = Instant::now();
    let layout = Layout::new(&config.output_dir);
    let summary = theory::run_checks(config.seed)?;

    let rows: Vec<Vec<String>> = summary
        .rows
        .iter()
        .map(|r| {
            vec![
                r.check.clone(),
                r.detail.clone(),
                format!("{:.3e}", r.observed),
                format!("{:.3e}", r.tolerance),
                if r.passed { "pass" } else { "fail" }.to_string(),
            ]
        })
        .collect();
    write_text(
        &layout.theory_report(),
        &crate::artifact::to_csv(&["check", "detail", "observed", "tolerance", "status"], &rows),
    )?;
    let manifest = manifest_for(config, "verify-theory", started, &[], &[layout.theory_report()])?;
    write_manifest(&layout, &manifest)?;

    if ci_mode && summary.failures > 0 {
        return Err(CliError::TheoryCheckFailed {
            failures: summary.failures,
            checks: summary.rows.len(),
        });
    }
    Ok(summary)
}

/// Runs every stage in dependency order.
pub fn run_all(config: &ExperimentConfig) -> Result<EvalSummary, CliError> {
    simulate(config)?;
    train_exam(config)?;
    train_imp(config)?;
    train_affine(config)?;
    train_tradeoff(config)?;
    score(config)?;
    evaluate(config)
}
