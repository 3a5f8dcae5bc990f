//! Click behavior tracking: log parsing, examination annotation, and the
//! monthly/weekly/daily aggregation dictionaries behind the dense click
//! feature vector.
//!
//! Dictionaries store sufficient statistics per refresh-cadence bucket
//! (hourly buckets for the daily dict, daily for weekly, weekly for
//! monthly); eviction drops whole buckets, so window boundaries are honored
//! at the refresh granularity. Accumulators are commutative monoids, so
//! aggregation is order-independent within a batch and shards merge cleanly.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::examination::{exam_predict, extract_exam_features, GbdtModel};
use crate::sim::SessionLog;

pub const SESSION_LOG_SCHEMA_VERSION: u32 = 1;
/// Schema id stamped on every feature vector; scorer bundles refuse to mix.
pub const FEATURE_SCHEMA_ID: &str = "click-features/v1/L21";
/// Feature vector length: 7 features per window, three windows.
pub const FEATURE_DIM: usize = 21;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("schema version mismatch: log has {got}, expected {expected}")]
    SchemaMismatch { got: u32, expected: u32 },
    #[error("sessions timestamped after the clock: ts {ts} > clock {clock}")]
    FutureTimestamp { ts: u64, clock: u64 },
}

/// A session with the examination model's `e_hat` per interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedSession {
    pub session: SessionLog,
    pub e_hat: Vec<f64>,
}

/// Annotates every interaction with the examination model's prediction.
pub fn attach_examination(sessions: &[SessionLog], model: &GbdtModel) -> Vec<AnnotatedSession> {
    sessions
        .iter()
        .map(|s| {
            let e_hat = s
                .interactions
                .iter()
                .map(|it| {
                    let f = extract_exam_features(s, it.position).expect("valid session");
                    exam_predict(model, &f)
                })
                .collect();
            AnnotatedSession { session: s.clone(), e_hat }
        })
        .collect()
}

/// A rejected log line with the reason it failed validation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RejectedLine {
    pub line_number: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParseReport {
    pub sessions: Vec<SessionLog>,
    pub rejects: Vec<RejectedLine>,
}

/// Parses JSONL session logs. Malformed or invalid lines land in the
/// rejects report, never silently dropped; a header line with a wrong
/// schema version is a hard error. Blank lines are ignored.
pub fn parse_click_log(raw: &str) -> Result<ParseReport, TrackError> {
    #[derive(Deserialize)]
    struct Header {
        schema_version: u32,
    }
    let mut report = ParseReport::default();
    for (i, line) in raw.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Ok(h) = serde_json::from_str::<Header>(line) {
            if h.schema_version != SESSION_LOG_SCHEMA_VERSION {
                return Err(TrackError::SchemaMismatch {
                    got: h.schema_version,
                    expected: SESSION_LOG_SCHEMA_VERSION,
                });
            }
            continue;
        }
        match serde_json::from_str::<SessionLog>(line) {
            Err(e) => report.rejects.push(RejectedLine {
                line_number: i + 1,
                reason: format!("parse error: {e}"),
            }),
            Ok(s) => match s.validate() {
                Ok(()) => report.sessions.push(s),
                Err(reason) => {
                    report.rejects.push(RejectedLine { line_number: i + 1, reason })
                }
            },
        }
    }
    Ok(report)
}

/// Per-pair sufficient statistics; a commutative mergeable monoid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Accumulator {
    pub impressions: u64,
    pub clicks: u64,
    pub sum_e: f64,
    pub sum_position: f64,
    pub sum_display: f64,
    pub sum_dwell: f64,
    /// Displayed above a clicked position in the same session, not clicked.
    pub skips: u64,
}

impl Accumulator {
    pub fn merge(&mut self, other: &Accumulator) {
        self.impressions += other.impressions;
        self.clicks += other.clicks;
        self.sum_e += other.sum_e;
        self.sum_position += other.sum_position;
        self.sum_display += other.sum_display;
        self.sum_dwell += other.sum_dwell;
        self.skips += other.skips;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Daily,
    Weekly,
    Monthly,
}

impl WindowKind {
    /// Coverage interval length in hours.
    pub fn window_hours(self) -> u64 {
        match self {
            WindowKind::Daily => 24,
            WindowKind::Weekly => 7 * 24,
            WindowKind::Monthly => 4 * 7 * 24,
        }
    }

    /// Refresh cadence, also the bucket granularity.
    pub fn refresh_hours(self) -> u64 {
        match self {
            WindowKind::Daily => 1,
            WindowKind::Weekly => 24,
            WindowKind::Monthly => 7 * 24,
        }
    }
}

/// One refresh-granularity bucket of statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    /// Keyed by (query_id, doc_id); JSON needs string map keys, so the
    /// wire form is a sequence of entries.
    #[serde(with = "pair_map")]
    stats: BTreeMap<(u64, u64), Accumulator>,
    /// Content hashes of ingested sessions, for idempotent replay.
    seen: BTreeSet<u64>,
}

mod pair_map {
    use super::Accumulator;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<(u64, u64), Accumulator>,
        serializer: S,
    ) -> Result<S::Ok, S::Error> {
        map.iter().collect::<Vec<_>>().serialize(serializer)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        deserializer: D,
    ) -> Result<BTreeMap<(u64, u64), Accumulator>, D::Error> {
        Vec::<((u64, u64), Accumulator)>::deserialize(deserializer)
            .map(|v| v.into_iter().collect())
    }
}

impl Bucket {
    fn entry(&mut self, key: (u64, u64)) -> &mut Accumulator {
        self.stats.entry(key).or_default()
    }

    fn get(&self, key: (u64, u64)) -> Option<&Accumulator> {
        self.stats.get(&key)
    }
}

/// Sliding-window aggregation dictionary for one window kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowDict {
    pub kind: WindowKind,
    /// Keyed by bucket start hour.
    buckets: BTreeMap<u64, Bucket>,
    /// Coverage interval end (exclusive) = last refresh clock.
    pub end_ts: u64,
}

impl WindowDict {
    pub fn new(kind: WindowKind) -> Self {
        Self { kind, buckets: BTreeMap::new(), end_ts: 0 }
    }

    pub fn start_ts(&self) -> u64 {
        self.end_ts.saturating_sub(self.kind.window_hours())
    }

    fn bucket_key(&self, ts: u64) -> u64 {
        ts / self.kind.refresh_hours() * self.kind.refresh_hours()
    }

    fn refresh(&mut self, clock: u64) {
        self.end_ts = self.end_ts.max(clock);
        let cutoff = self.end_ts.saturating_sub(self.kind.window_hours());
        self.buckets.retain(|&start, _| start >= cutoff);
    }

    fn ingest(&mut self, annotated: &AnnotatedSession, hash: u64) -> bool {
        let ts = annotated.session.interactions.first().map_or(0, |i| i.ts);
        if ts < self.start_ts() {
            return false; // outside coverage
        }
        let bucket = self.buckets.entry(self.bucket_key(ts)).or_default();
        if !bucket.seen.insert(hash) {
            return true; // replay of an already-counted session
        }
        let s = &annotated.session;
        let max_click_pos =
            s.interactions.iter().filter(|i| i.clicked).map(|i| i.position).max();
        for (it, &e) in s.interactions.iter().zip(&annotated.e_hat) {
            let acc = bucket.entry((s.query_id, it.doc_id));
            acc.impressions += 1;
            if it.clicked {
                acc.clicks += 1;
            }
            acc.sum_e += e;
            acc.sum_position += it.position as f64;
            acc.sum_display += it.display_time_s;
            acc.sum_dwell += it.dwell_time_s;
            if !it.clicked && max_click_pos.is_some_and(|m| m > it.position) {
                acc.skips += 1;
            }
        }
        true
    }

    /// Total statistics for a pair over the live coverage interval.
    pub fn totals(&self, query_id: u64, doc_id: u64) -> Accumulator {
        let mut total = Accumulator::default();
        for bucket in self.buckets.values() {
            if let Some(acc) = bucket.get((query_id, doc_id)) {
                total.merge(acc);
            }
        }
        total
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.values().all(|b| b.stats.is_empty())
    }

    /// All pairs currently covered.
    pub fn pairs(&self) -> BTreeSet<(u64, u64)> {
        self.buckets.values().flat_map(|b| b.stats.keys().copied()).collect()
    }
}

/// The three dictionaries plus the simulated clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingDicts {
    pub daily: WindowDict,
    pub weekly: WindowDict,
    pub monthly: WindowDict,
    pub clock: u64,
    /// Sessions dropped for being older than every window.
    pub out_of_window: u64,
}

impl Default for TrackingDicts {
    fn default() -> Self {
        Self::new()
    }
}

impl TrackingDicts {
    pub fn new() -> Self {
        Self {
            daily: WindowDict::new(WindowKind::Daily),
            weekly: WindowDict::new(WindowKind::Weekly),
            monthly: WindowDict::new(WindowKind::Monthly),
            clock: 0,
            out_of_window: 0,
        }
    }

    /// Advances the simulated clock, refreshing each dictionary at its
    /// cadence, and aggregates the new sessions. Sessions must not be
    /// timestamped after the clock; replaying the same (clock, sessions)
    /// leaves the state unchanged.
    pub fn advance_clock_and_aggregate(
        &mut self,
        sessions: &[AnnotatedSession],
        clock: u64,
    ) -> Result<(), TrackError> {
        for s in sessions {
            let ts = s.session.interactions.first().map_or(0, |i| i.ts);
            if ts > clock {
                return Err(TrackError::FutureTimestamp { ts, clock });
            }
        }
        self.clock = self.clock.max(clock);
        self.daily.refresh(self.clock);
        self.weekly.refresh(self.clock);
        self.monthly.refresh(self.clock);
        for s in sessions {
            let hash = session_hash(&s.session);
            let kept = self.monthly.ingest(s, hash);
            self.weekly.ingest(s, hash);
            self.daily.ingest(s, hash);
            if !kept {
                self.out_of_window += 1;
            }
        }
        Ok(())
    }
}

fn session_hash(session: &SessionLog) -> u64 {
    let bytes = serde_json::to_vec(session).expect("session serializes");
    let digest = Sha256::digest(&bytes);
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Dense click feature vector for a query-document pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickFeatureVector {
    pub x: Vec<f64>,
    pub schema_id: String,
}

impl ClickFeatureVector {
    pub fn is_zero(&self) -> bool {
        self.x.iter().all(|v| *v == 0.0)
    }
}

fn window_features(acc: &Accumulator) -> [f64; 7] {
    if acc.impressions == 0 {
        return [0.0; 7];
    }
    let n = acc.impressions as f64;
    let ctr = acc.clicks as f64 / n;
    let examined_ctr = if acc.sum_e > 0.0 {
        (acc.clicks as f64 / acc.sum_e).min(1.0)
    } else {
        0.0
    };
    [
        n.ln_1p(),
        ctr,
        examined_ctr,
        acc.sum_position / n,
        acc.sum_display / n,
        acc.sum_dwell / n,
        acc.skips as f64 / n,
    ]
}

/// Builds the 21-dimensional feature vector for a pair; an unseen pair maps
/// to the all-zero vector (the tail case).
pub fn build_click_features(
    dicts: &TrackingDicts,
    query_id: u64,
    doc_id: u64,
) -> ClickFeatureVector {
    let mut x = Vec::with_capacity(FEATURE_DIM);
    for dict in [&dicts.monthly, &dicts.weekly, &dicts.daily] {
        x.extend_from_slice(&window_features(&dict.totals(query_id, doc_id)));
    }
    ClickFeatureVector { x, schema_id: FEATURE_SCHEMA_ID.to_string() }
}
