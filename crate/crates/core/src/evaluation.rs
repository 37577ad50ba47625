//! Ranking metrics over judged concept lists and the simple-random-sampling
//! accuracy estimator used to judge extracted triples.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{EduKG, TripleId};

/// z for a 95% two-sided interval.
pub const DEFAULT_Z: f64 = 1.959964;
pub const DEFAULT_MOE_THRESHOLD: f64 = 0.05;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("k = {k} outside 1..={len}")]
    KOutOfRange { k: usize, len: usize },
    #[error("a ranking needs at least one item")]
    EmptyRanking,
    #[error("no rankings given")]
    NoRankings,
    #[error("session has no judgments")]
    EmptySession,
    #[error("judgment must be 0 or 1, got {0}")]
    InvalidJudgment(u8),
    #[error("annotator `{annotator}` already judged {triple}")]
    DuplicateJudgment { triple: String, annotator: String },
    #[error("sample of {requested} requested from a population of {population}")]
    SampleTooLarge { requested: usize, population: usize },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgedItem {
    pub uri: String,
    pub relevant: bool,
}

/// A ranking as shown to a judge, best first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RankingRecord", into = "RankingRecord")]
pub struct JudgedRanking {
    id: String,
    items: Vec<JudgedItem>,
}

#[derive(Serialize, Deserialize)]
struct RankingRecord {
    #[serde(default)]
    id: String,
    items: Vec<JudgedItem>,
}

impl TryFrom<RankingRecord> for JudgedRanking {
    type Error = EvalError;

    fn try_from(r: RankingRecord) -> Result<Self, Self::Error> {
        JudgedRanking::new(r.id, r.items)
    }
}

impl From<JudgedRanking> for RankingRecord {
    fn from(r: JudgedRanking) -> Self {
        RankingRecord {
            id: r.id,
            items: r.items,
        }
    }
}

impl JudgedRanking {
    pub fn new(id: impl Into<String>, items: Vec<JudgedItem>) -> Result<Self, EvalError> {
        if items.is_empty() {
            return Err(EvalError::EmptyRanking);
        }
        Ok(Self { id: id.into(), items })
    }

    /// Ranking of anonymous items from relevance flags.
    pub fn from_flags(flags: &[bool]) -> Result<Self, EvalError> {
        let items = flags
            .iter()
            .enumerate()
            .map(|(i, &relevant)| JudgedItem {
                uri: format!("item:{i}"),
                relevant,
            })
            .collect();
        Self::new("", items)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn items(&self) -> &[JudgedItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn relevant_in_top(&self, k: usize) -> usize {
        self.items.iter().take(k).filter(|i| i.relevant).count()
    }
}

pub fn precision_at_k(r: &JudgedRanking, k: usize) -> Result<f64, EvalError> {
    if k == 0 || k > r.len() {
        return Err(EvalError::KOutOfRange { k, len: r.len() });
    }
    Ok(r.relevant_in_top(k) as f64 / k as f64)
}

pub fn reciprocal_rank(r: &JudgedRanking) -> f64 {
    r.items
        .iter()
        .position(|i| i.relevant)
        .map_or(0.0, |p| 1.0 / (p + 1) as f64)
}

pub fn mrr(rankings: &[JudgedRanking]) -> Result<f64, EvalError> {
    if rankings.is_empty() {
        return Err(EvalError::NoRankings);
    }
    Ok(rankings.iter().map(reciprocal_rank).sum::<f64>() / rankings.len() as f64)
}

/// AP@k: mean of P@i over relevant positions i ≤ k, normalised by the
/// number of relevant items in the top k. Rankings shorter than k are
/// scored over their whole length.
pub fn average_precision_at_k(r: &JudgedRanking, k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::KOutOfRange { k, len: r.len() });
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, item) in r.items.iter().take(k).enumerate() {
        if item.relevant {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    let denom = hits.min(k);
    Ok(if denom == 0 { 0.0 } else { sum / denom as f64 })
}

pub fn mean_average_precision(rankings: &[JudgedRanking], k: usize) -> Result<f64, EvalError> {
    if rankings.is_empty() {
        return Err(EvalError::NoRankings);
    }
    let mut total = 0.0;
    for r in rankings {
        total += average_precision_at_k(r, k)?;
    }
    Ok(total / rankings.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub rankings: usize,
    pub k: usize,
    /// Mean P@k over rankings.
    pub precision: f64,
    pub mrr: f64,
    pub map: f64,
}

pub fn metrics_report(rankings: &[JudgedRanking], k: usize) -> Result<MetricsReport, EvalError> {
    if rankings.is_empty() {
        return Err(EvalError::NoRankings);
    }
    let mut precision = 0.0;
    for r in rankings {
        precision += precision_at_k(r, k)?;
    }
    Ok(MetricsReport {
        rankings: rankings.len(),
        k,
        precision: precision / rankings.len() as f64,
        mrr: mrr(rankings)?,
        map: mean_average_precision(rankings, k)?,
    })
}

/// Reads one JSON ranking per line (`{"id": .., "items": [{"uri", "relevant"}]}`).
pub fn load_rankings(path: &Path) -> Result<Vec<JudgedRanking>, EvalError> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| EvalError::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn normal_approx_half_width(mu: f64, n: usize, z: f64) -> f64 {
    z * (mu * (1.0 - mu) / n as f64).sqrt()
}

pub fn margin_of_error(variance: f64, n: usize, z: f64) -> f64 {
    z * (variance / n as f64).sqrt()
}

/// One accuracy judgment of a sampled triple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SrsJudgment {
    pub triple: TripleId,
    pub annotator: String,
    pub judgment: u8,
    #[serde(default)]
    pub timestamp: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SrsEstimate {
    pub mu: f64,
    pub n: usize,
    pub accurate: usize,
    pub half_width: f64,
    pub moe: f64,
}

#[derive(Debug, Clone)]
pub struct SrsSession {
    pub population: Vec<TripleId>,
    pub z: f64,
    pub moe_threshold: f64,
    judgments: Vec<SrsJudgment>,
    seen: HashSet<(TripleId, String)>,
}

impl SrsSession {
    pub fn new(population: Vec<TripleId>, z: f64, moe_threshold: f64) -> Self {
        Self {
            population,
            z,
            moe_threshold,
            judgments: Vec::new(),
            seen: HashSet::new(),
        }
    }

    pub fn judgments(&self) -> &[SrsJudgment] {
        &self.judgments
    }

    pub fn record(&mut self, judgment: SrsJudgment) -> Result<(), EvalError> {
        if judgment.judgment > 1 {
            return Err(EvalError::InvalidJudgment(judgment.judgment));
        }
        if !self.seen.insert((judgment.triple.clone(), judgment.annotator.clone())) {
            return Err(EvalError::DuplicateJudgment {
                triple: judgment.triple.to_string(),
                annotator: judgment.annotator,
            });
        }
        self.judgments.push(judgment);
        Ok(())
    }

    /// Accuracy pooled over every judgment of every annotator.
    pub fn mean(&self) -> Result<f64, EvalError> {
        Ok(self.estimate()?.mu)
    }

    pub fn estimate(&self) -> Result<SrsEstimate, EvalError> {
        let n = self.judgments.len();
        if n == 0 {
            return Err(EvalError::EmptySession);
        }
        let accurate = self.judgments.iter().filter(|j| j.judgment == 1).count();
        let mu = accurate as f64 / n as f64;
        Ok(SrsEstimate {
            mu,
            n,
            accurate,
            half_width: normal_approx_half_width(mu, n, self.z),
            moe: margin_of_error(mu * (1.0 - mu), n, self.z),
        })
    }

    pub fn should_stop(&self) -> Result<bool, EvalError> {
        Ok(self.estimate()?.moe <= self.moe_threshold)
    }

    pub fn report(&self) -> Result<SrsReport, EvalError> {
        let estimate = self.estimate()?;
        Ok(SrsReport {
            estimate,
            z: self.z,
            moe_threshold: self.moe_threshold,
            stop: estimate.moe <= self.moe_threshold,
        })
    }
}

/// Truncates to `decimals` places. A tiny tolerance keeps exact decimals
/// such as 0.40 from dropping to 0.39 through representation error.
pub fn truncate_decimals(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    ((x * scale) + 1e-9).floor() / scale
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SrsReport {
    #[serde(flatten)]
    pub estimate: SrsEstimate,
    pub z: f64,
    pub moe_threshold: f64,
    pub stop: bool,
}

impl SrsReport {
    /// `μ ± half-width` in two and three decimals, e.g. `0.40 ± 0.049`.
    pub fn table_cell(&self) -> String {
        format!(
            "{:.2} ± {:.3}",
            truncate_decimals(self.estimate.mu, 2),
            truncate_decimals(self.estimate.half_width, 3)
        )
    }
}

impl fmt::Display for SrsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "accuracy: {}", self.table_cell())?;
        writeln!(f, "mu: {:.6}", self.estimate.mu)?;
        writeln!(f, "n: {} ({} accurate)", self.estimate.n, self.estimate.accurate)?;
        writeln!(f, "half_width: {:.6}", self.estimate.half_width)?;
        writeln!(
            f,
            "moe: {:.6} (threshold {}, z {})",
            self.estimate.moe, self.moe_threshold, self.z
        )?;
        write!(f, "stop: {}", self.stop)
    }
}

/// Uniform sample without replacement of the graph's `CONTAINS` triples.
pub fn sample_triples(graph: &EduKG, n: usize, seed: u64) -> Result<Vec<TripleId>, EvalError> {
    let population = graph.contains_triples();
    sample_population(&population, n, seed)
}

pub fn sample_population(population: &[TripleId], n: usize, seed: u64) -> Result<Vec<TripleId>, EvalError> {
    if n > population.len() {
        return Err(EvalError::SampleTooLarge {
            requested: n,
            population: population.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, population.len(), n)
        .into_iter()
        .map(|i| population[i].clone())
        .collect())
}

/// Append-only JSONL judgment log. Appends from several threads are
/// serialized.
pub struct SessionLog {
    file: Mutex<std::fs::File>,
}

impl SessionLog {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file: Mutex::new(file) })
    }

    pub fn append(&self, judgment: &SrsJudgment) -> std::io::Result<()> {
        let mut line = serde_json::to_string(judgment).map_err(std::io::Error::other)?;
        line.push('\n');
        let mut file = self.file.lock().expect("session log");
        file.write_all(line.as_bytes())?;
        file.flush()
    }

    pub fn read(path: &Path) -> Result<Vec<SrsJudgment>, EvalError> {
        let file = std::fs::File::open(path)?;
        let mut out = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| EvalError::Parse {
                line: i + 1,
                reason: e.to_string(),
            })?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn triple(i: usize) -> TripleId {
        TripleId {
            subject: format!("slide:m:{i}"),
            predicate: "CONTAINS".into(),
            object: format!("u:{i}"),
        }
    }

    fn session_with(accurate: usize, n: usize) -> SrsSession {
        let mut s = SrsSession::new(Vec::new(), DEFAULT_Z, DEFAULT_MOE_THRESHOLD);
        for i in 0..n {
            s.record(SrsJudgment {
                triple: triple(i),
                annotator: "a".into(),
                judgment: u8::from(i < accurate),
                timestamp: String::new(),
            })
            .unwrap();
        }
        s
    }

    #[test]
    fn precision_examples() {
        let all = JudgedRanking::from_flags(&[true; 15]).unwrap();
        assert_eq!(precision_at_k(&all, 15).unwrap(), 1.0);
        let mut flags = [true; 15];
        flags[3] = false;
        flags[7] = false;
        flags[11] = false;
        let r = JudgedRanking::from_flags(&flags).unwrap();
        assert_eq!(precision_at_k(&r, 15).unwrap(), 0.8);
        assert!(matches!(
            precision_at_k(&r, 16),
            Err(EvalError::KOutOfRange { k: 16, len: 15 })
        ));
        assert!(matches!(precision_at_k(&r, 0), Err(EvalError::KOutOfRange { .. })));
    }

    #[test]
    fn mrr_examples() {
        let first = JudgedRanking::from_flags(&[true, false]).unwrap();
        let second = JudgedRanking::from_flags(&[false, true]).unwrap();
        let none = JudgedRanking::from_flags(&[false, false]).unwrap();
        assert_eq!(mrr(&[first.clone(), first]).unwrap(), 1.0);
        assert_eq!(mrr(std::slice::from_ref(&second)).unwrap(), 0.5);
        assert_eq!(mrr(&[second, none]).unwrap(), 0.25);
        assert!(mrr(&[]).is_err());
    }

    #[test]
    fn map_examples() {
        let r = JudgedRanking::from_flags(&[true, false, true]).unwrap();
        let ap = mean_average_precision(&[r], 3).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        let all = JudgedRanking::from_flags(&[true; 5]).unwrap();
        assert_eq!(mean_average_precision(&[all], 5).unwrap(), 1.0);
        let none = JudgedRanking::from_flags(&[false; 3]).unwrap();
        assert_eq!(mean_average_precision(&[none], 3).unwrap(), 0.0);
    }

    #[test]
    fn srs_table_arithmetic() {
        let td = session_with(146, 383).report().unwrap();
        assert!((td.estimate.mu - 146.0 / 383.0).abs() == 0.0);
        assert_eq!(td.table_cell(), "0.38 ± 0.048");
        let bu = session_with(152, 380).report().unwrap();
        assert_eq!(bu.estimate.mu, 0.4);
        assert_eq!(bu.table_cell(), "0.40 ± 0.049");
        assert!(bu.stop);
        assert!(!session_with(40, 100).should_stop().unwrap());
    }

    #[test]
    fn half_width_and_moe_examples() {
        assert_eq!(normal_approx_half_width(0.0, 10, DEFAULT_Z), 0.0);
        assert_eq!(normal_approx_half_width(1.0, 10, DEFAULT_Z), 0.0);
        assert_eq!(margin_of_error(0.0, 10, DEFAULT_Z), 0.0);
        let m = margin_of_error(0.24, 380, 1.96);
        assert!((m - 1.96 * (0.24f64 / 380.0).sqrt()).abs() < 1e-15);
        assert!((m - 0.04925).abs() < 1e-4);
        assert!(normal_approx_half_width(0.40, 100, 1.96) > 0.05);
    }

    #[test]
    fn session_rejects_bad_judgments() {
        let mut s = session_with(1, 2);
        let dup = SrsJudgment {
            triple: triple(0),
            annotator: "a".into(),
            judgment: 1,
            timestamp: String::new(),
        };
        assert!(matches!(
            s.record(dup.clone()),
            Err(EvalError::DuplicateJudgment { .. })
        ));
        let other = SrsJudgment {
            annotator: "b".into(),
            ..dup.clone()
        };
        s.record(other).unwrap();
        let bad = SrsJudgment {
            judgment: 2,
            annotator: "c".into(),
            ..dup
        };
        assert!(matches!(s.record(bad), Err(EvalError::InvalidJudgment(2))));
        let empty = SrsSession::new(vec![], DEFAULT_Z, 1.0);
        assert!(matches!(empty.should_stop(), Err(EvalError::EmptySession)));
        assert!(session_with(0, 3).should_stop().unwrap());
    }

    #[test]
    fn sampling_is_seeded_and_bounded() {
        let pop: Vec<TripleId> = (0..10).map(triple).collect();
        let full = sample_population(&pop, 10, 7).unwrap();
        let mut sorted = full.clone();
        sorted.sort();
        assert_eq!(sorted, pop);
        assert_eq!(
            sample_population(&pop, 4, 7).unwrap(),
            sample_population(&pop, 4, 7).unwrap()
        );
        assert!(matches!(
            sample_population(&pop, 11, 7),
            Err(EvalError::SampleTooLarge {
                requested: 11,
                population: 10
            })
        ));
    }

    #[test]
    fn session_log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("session.jsonl");
        let log = SessionLog::open(&path).unwrap();
        let j = SrsJudgment {
            triple: triple(1),
            annotator: "a".into(),
            judgment: 1,
            timestamp: "2024-01-01T00:00:00Z".into(),
        };
        log.append(&j).unwrap();
        log.append(&SrsJudgment {
            judgment: 0,
            ..j.clone()
        })
        .unwrap();
        let back = SessionLog::read(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], j);
    }

    #[test]
    fn ranking_json_rejects_empty() {
        assert!(serde_json::from_str::<JudgedRanking>(r#"{"id":"x","items":[]}"#).is_err());
        let r: JudgedRanking = serde_json::from_str(r#"{"id":"x","items":[{"uri":"u","relevant":true}]}"#).unwrap();
        assert_eq!(r.len(), 1);
    }

    proptest! {
        #[test]
        fn half_width_scales_with_root_n(mu in 0.0f64..=1.0, n in 1usize..10_000) {
            let a = normal_approx_half_width(mu, 4 * n, DEFAULT_Z);
            let b = normal_approx_half_width(mu, n, DEFAULT_Z) / 2.0;
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn half_width_bounded(mu in 0.0f64..=1.0, n in 1usize..10_000) {
            let h = normal_approx_half_width(mu, n, DEFAULT_Z);
            prop_assert!(h >= 0.0);
            prop_assert!(h <= DEFAULT_Z / 2.0 / (n as f64).sqrt() + 1e-15);
        }

        #[test]
        fn moe_equals_half_width_under_bernoulli_variance(mu in 0.0f64..=1.0, n in 1usize..10_000) {
            let h = normal_approx_half_width(mu, n, DEFAULT_Z);
            let m = margin_of_error(mu * (1.0 - mu), n, DEFAULT_Z);
            prop_assert_eq!(h, m);
        }

        #[test]
        fn metrics_in_unit_interval(flags in proptest::collection::vec(any::<bool>(), 1..20), k in 1usize..20) {
            let r = JudgedRanking::from_flags(&flags).unwrap();
            if k <= r.len() {
                let p = precision_at_k(&r, k).unwrap();
                prop_assert!((0.0..=1.0).contains(&p));
            }
            let ap = average_precision_at_k(&r, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&ap));
            let rr = reciprocal_rank(&r);
            prop_assert!((0.0..=1.0).contains(&rr));
        }
    }
}
