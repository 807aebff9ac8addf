//! Pair curation: hard thresholds, sliding-window quality scoring and
//! per-language top-fraction selection.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::PathBuf;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DocPairAlignment, Side};

/// Environment variable naming an external scorer executable.
pub const SCORER_ENV: &str = "DOCCORPUS_SCORER";

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("scorer process: {0}")]
    Io(#[from] std::io::Error),
    #[error("scorer returned malformed output {line:?}: {message}")]
    Protocol { line: String, message: String },
    #[error("scorer returned {0}, outside [0, 1]")]
    OutOfRange(f64),
}

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("invalid filter configuration: {0}")]
    Config(String),
    #[error("pair {0} has no links to score")]
    NoLinks(String),
    #[error("scoring window {window} of pair {pair} failed: {source}")]
    Scorer {
        pair: String,
        window: usize,
        #[source]
        source: ScorerError,
    },
}

/// Sentence-pair quality estimator. Must be deterministic for fixed input.
pub trait QualityScorer: Send + Sync {
    fn name(&self) -> &str;
    fn score(&self, src: &str, tgt: &str) -> Result<f64, ScorerError>;
}

/// Token-level longest-common-subsequence ratio `2·lcs / (|a| + |b|)`.
/// Useful only as a deterministic stand-in for a real estimator.
#[derive(Debug, Clone, Copy, Default)]
pub struct LcsRatioScorer;

impl QualityScorer for LcsRatioScorer {
    fn name(&self) -> &str {
        "lcs-ratio"
    }

    fn score(&self, src: &str, tgt: &str) -> Result<f64, ScorerError> {
        let a: Vec<&str> = src.split_whitespace().collect();
        let b: Vec<&str> = tgt.split_whitespace().collect();
        if a.is_empty() && b.is_empty() {
            return Ok(1.0);
        }
        let mut row = vec![0usize; b.len() + 1];
        for x in &a {
            let mut diag = 0;
            for (j, y) in b.iter().enumerate() {
                let up = row[j + 1];
                row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
                diag = up;
            }
        }
        Ok(2.0 * row[b.len()] as f64 / (a.len() + b.len()) as f64)
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    src: &'a str,
    tgt: &'a str,
}

#[derive(Deserialize)]
struct ScoreResponse {
    score: f64,
}

struct ScorerProcess {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Talks to a long-running external process: one `{"src","tgt"}` JSON line
/// in, one `{"score"}` JSON line out.
pub struct ExternalScorer {
    name: String,
    process: Mutex<ScorerProcess>,
}

impl ExternalScorer {
    pub fn spawn(program: impl Into<PathBuf>) -> Result<Self, ScorerError> {
        let program = program.into();
        let mut child = Command::new(&program).stdin(Stdio::piped()).stdout(Stdio::piped()).spawn()?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = BufReader::new(child.stdout.take().expect("stdout is piped"));
        Ok(Self { name: program.display().to_string(), process: Mutex::new(ScorerProcess { child, stdin, stdout }) })
    }

    /// Spawns the program named by [`SCORER_ENV`], if set.
    pub fn from_env() -> Option<Result<Self, ScorerError>> {
        std::env::var_os(SCORER_ENV).map(Self::spawn)
    }
}

impl QualityScorer for ExternalScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, src: &str, tgt: &str) -> Result<f64, ScorerError> {
        let mut process = self.process.lock().unwrap_or_else(|e| e.into_inner());
        let request = serde_json::to_string(&ScoreRequest { src, tgt }).expect("strings always serialize");
        writeln!(process.stdin, "{request}")?;
        process.stdin.flush()?;
        let mut line = String::new();
        if process.stdout.read_line(&mut line)? == 0 {
            return Err(ScorerError::Protocol { line, message: "scorer closed its output".into() });
        }
        let response: ScoreResponse = serde_json::from_str(line.trim_end())
            .map_err(|e| ScorerError::Protocol { line: line.clone(), message: e.to_string() })?;
        if !(0.0..=1.0).contains(&response.score) {
            return Err(ScorerError::OutOfRange(response.score));
        }
        Ok(response.score)
    }
}

impl Drop for ExternalScorer {
    fn drop(&mut self) {
        let process = self.process.get_mut().unwrap_or_else(|e| e.into_inner());
        let _ = process.child.kill();
        let _ = process.child.wait();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub min_density: f64,
    pub min_doc_score: f64,
    pub window: usize,
    pub slide: usize,
    pub keep_top_fraction: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { min_density: 0.3, min_doc_score: 0.3, window: 3, slide: 1, keep_top_fraction: 0.25 }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.min_density) || !unit.contains(&self.min_doc_score) {
            return Err(FilterError::Config("thresholds must lie in [0, 1]".into()));
        }
        if self.window == 0 || self.slide == 0 {
            return Err(FilterError::Config("window and slide must be positive".into()));
        }
        if self.slide > self.window {
            return Err(FilterError::Config(format!("slide {} exceeds window {}", self.slide, self.window)));
        }
        if !(self.keep_top_fraction > 0.0 && self.keep_top_fraction <= 1.0) {
            return Err(FilterError::Config("keep_top_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Why a pair failed the threshold stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    Density,
    Unscored,
    Score,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::Density => "density",
            DropReason::Unscored => "unscored",
            DropReason::Score => "score",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ThresholdOutcome {
    pub kept: Vec<DocPairAlignment>,
    pub dropped: Vec<(DocPairAlignment, DropReason)>,
}

/// Keeps a pair iff its density and its doc-averaged bicleaner score both
/// reach the configured minimums. Density is checked first.
pub fn threshold_filter(pairs: Vec<DocPairAlignment>, config: &FilterConfig) -> ThresholdOutcome {
    let mut out = ThresholdOutcome::default();
    for pair in pairs {
        match threshold_decision(pair.density(), pair.avg_scores().bicleaner, config) {
            None => out.kept.push(pair),
            Some(reason) => out.dropped.push((pair, reason)),
        }
    }
    out
}

/// Slack below a threshold that still counts as reaching it, so averages
/// of values sitting exactly on the threshold survive rounding.
pub const THRESHOLD_EPSILON: f64 = 1e-9;

/// The threshold rule on raw values; `None` means keep.
pub fn threshold_decision(density: f64, bicleaner: Option<f64>, config: &FilterConfig) -> Option<DropReason> {
    if density < config.min_density - THRESHOLD_EPSILON {
        return Some(DropReason::Density);
    }
    match bicleaner {
        None => Some(DropReason::Unscored),
        Some(score) if score < config.min_doc_score - THRESHOLD_EPSILON => Some(DropReason::Score),
        Some(_) => None,
    }
}

/// Link index ranges covered by each window. Fewer than `window` links give
/// one window of everything. When the stride does not land on the last
/// link, one extra window aligned to the end covers the tail.
pub fn window_ranges(n: usize, window: usize, slide: usize) -> Vec<Range<usize>> {
    assert!(window > 0 && slide > 0, "window and slide must be positive");
    if n <= window {
        return vec![0..n];
    }
    let mut out: Vec<Range<usize>> = (0..=n - window).step_by(slide).map(|s| s..s + window).collect();
    if out.last().is_some_and(|r| r.end < n) {
        out.push(n - window..n);
    }
    out
}

/// Scores each window on the space-joined source and target texts of its
/// links, in source order.
pub fn window_scores(
    pair: &DocPairAlignment,
    scorer: &dyn QualityScorer,
    window: usize,
    slide: usize,
) -> Result<Vec<f64>, FilterError> {
    let links = pair.links();
    if links.is_empty() {
        return Err(FilterError::NoLinks(pair.pair_id()));
    }
    let texts: Vec<(String, String)> =
        links.iter().map(|l| (pair.link_text(l, Side::Source), pair.link_text(l, Side::Target))).collect();
    window_ranges(links.len(), window, slide)
        .into_iter()
        .enumerate()
        .map(|(index, range)| {
            let src = join(texts[range.clone()].iter().map(|t| t.0.as_str()));
            let tgt = join(texts[range].iter().map(|t| t.1.as_str()));
            scorer.score(&src, &tgt).map_err(|source| FilterError::Scorer {
                pair: pair.pair_id(),
                window: index,
                source,
            })
        })
        .collect()
}

fn join<'a>(parts: impl Iterator<Item = &'a str>) -> String {
    parts.collect::<Vec<_>>().join(" ")
}

/// Mean of the window scores.
pub fn document_score(
    pair: &DocPairAlignment,
    scorer: &dyn QualityScorer,
    config: &FilterConfig,
) -> Result<f64, FilterError> {
    let scores = window_scores(pair, scorer, config.window, config.slide)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Number of items the top-fraction rule keeps before ties: `⌈fraction·n⌉`,
/// at least one for a non-empty group.
pub fn top_count(n: usize, fraction: f64) -> usize {
    if n == 0 {
        return 0;
    }
    (((fraction * n as f64) - 1e-9).ceil() as usize).clamp(1, n)
}

/// Per group, keeps items scoring at least the nearest-rank cutoff: the
/// k-th highest score with k = [`top_count`]. Ties at the cutoff survive.
/// Kept items stay in input order.
pub fn percentile_filter<T>(groups: BTreeMap<String, Vec<(T, f64)>>, fraction: f64) -> BTreeMap<String, Vec<(T, f64)>> {
    groups
        .into_iter()
        .map(|(group, items)| {
            let k = top_count(items.len(), fraction);
            if k == 0 {
                return (group, items);
            }
            let mut scores: Vec<f64> = items.iter().map(|i| i.1).collect();
            scores.sort_by(|a, b| b.total_cmp(a));
            let cutoff = scores[k - 1];
            let kept = items.into_iter().filter(|i| i.1 >= cutoff).collect();
            (group, kept)
        })
        .collect()
}

/// One row of the filter decision log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterLogEntry {
    pub pair_id: String,
    pub stage: String,
    pub decision: String,
    pub value: Option<f64>,
}

/// Tab-separated log with a `pair_id stage decision value` header.
pub fn filter_log_tsv(entries: &[FilterLogEntry]) -> String {
    let mut out = String::from("pair_id\tstage\tdecision\tvalue\n");
    for e in entries {
        let value = e.value.map(|v| format!("{v:.6}")).unwrap_or_default();
        let _ = writeln!(out, "{}\t{}\t{}\t{}", e.pair_id, e.stage, e.decision, value);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AlignmentLink, AlignmentScoreSet, DocId, DocumentMeta, LanguageTag, Paragraph, SentenceId};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn doc(id: &str, lang: &str, texts: &[&str]) -> Arc<crate::model::StructuredDocument> {
        let meta = DocumentMeta {
            doc_id: DocId::new(id),
            url: format!("https://example.org/{id}"),
            lang: LanguageTag::new(lang).unwrap(),
            collection: "t".into(),
        };
        let para = Paragraph::from_texts(1, texts.iter().map(|s| s.to_string()));
        Arc::new(crate::model::StructuredDocument::new(meta, vec![para]).unwrap())
    }

    /// A pair of `n` one-to-one links over documents of `len` sentences.
    fn pair(n: usize, len: usize, bicleaner: Option<f64>) -> DocPairAlignment {
        let texts: Vec<String> = (0..len).map(|i| format!("w{i}")).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let links = (1..=n as u32)
            .map(|i| {
                let id = SentenceId::new(1, i).unwrap();
                AlignmentLink::new(vec![id], vec![id], AlignmentScoreSet { bicleaner, ..Default::default() }).unwrap()
            })
            .collect();
        DocPairAlignment::new(doc("s", "eu", &refs), doc("t", "en", &refs), links).unwrap()
    }

    #[test]
    fn threshold_examples() {
        let c = FilterConfig::default();
        assert_eq!(threshold_decision(0.29, Some(0.9), &c), Some(DropReason::Density));
        assert_eq!(threshold_decision(0.31, Some(0.31), &c), None);
        assert_eq!(threshold_decision(1.0, Some(0.299), &c), Some(DropReason::Score));
        assert_eq!(threshold_decision(0.30, Some(0.30), &c), None);
        assert_eq!(threshold_decision(0.5, None, &c), Some(DropReason::Unscored));
        let out = threshold_filter(vec![pair(2, 10, Some(0.9)), pair(5, 10, None), pair(5, 10, Some(0.5))], &c);
        assert_eq!(out.kept.len(), 1);
        let reasons: Vec<_> = out.dropped.iter().map(|d| d.1).collect();
        assert_eq!(reasons, [DropReason::Density, DropReason::Unscored]);
    }

    #[test]
    fn config_validation() {
        assert!(FilterConfig::default().validate().is_ok());
        assert!(FilterConfig { slide: 4, ..Default::default() }.validate().is_err());
        assert!(FilterConfig { keep_top_fraction: 0.0, ..Default::default() }.validate().is_err());
        assert!(FilterConfig { min_density: 1.5, ..Default::default() }.validate().is_err());
        assert!(FilterConfig { window: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn window_examples() {
        assert_eq!(window_ranges(5, 3, 1), [0..3, 1..4, 2..5]);
        assert_eq!(window_ranges(3, 3, 1), [0..3]);
        assert_eq!(window_ranges(2, 3, 1), [0..2]);
        assert_eq!(window_ranges(6, 3, 2), [0..3, 2..5, 3..6]);
        for n in 1..=20 {
            let brute = if n < 3 { 1 } else { (0..n).filter(|&s| s + 3 <= n).count() };
            assert_eq!(window_ranges(n, 3, 1).len(), brute);
            assert_eq!(window_ranges(n, 3, 1).len(), 1.max(n.saturating_sub(3) + 1));
        }
    }

    struct Failing;
    impl QualityScorer for Failing {
        fn name(&self) -> &str {
            "failing"
        }
        fn score(&self, src: &str, _: &str) -> Result<f64, ScorerError> {
            if src.contains("w3") {
                Err(ScorerError::OutOfRange(2.0))
            } else {
                Ok(0.5)
            }
        }
    }

    #[test]
    fn window_scoring() {
        let p = pair(5, 5, Some(0.5));
        let scores = window_scores(&p, &LcsRatioScorer, 3, 1).unwrap();
        assert_eq!(scores, [1.0, 1.0, 1.0]);
        assert_eq!(document_score(&p, &LcsRatioScorer, &FilterConfig::default()).unwrap(), 1.0);
        let err = window_scores(&p, &Failing, 3, 1).unwrap_err();
        assert!(matches!(err, FilterError::Scorer { window: 1, .. }));
        assert!(matches!(window_scores(&pair(0, 2, None), &LcsRatioScorer, 3, 1), Err(FilterError::NoLinks(_))));
    }

    #[test]
    fn lcs_ratio() {
        let s = LcsRatioScorer;
        assert_eq!(s.score("", "").unwrap(), 1.0);
        assert_eq!(s.score("a b c", "").unwrap(), 0.0);
        assert_eq!(s.score("a b c d", "a x c d").unwrap(), 0.75);
    }

    fn group(scores: &[f64]) -> BTreeMap<String, Vec<(usize, f64)>> {
        BTreeMap::from([("eu-en".to_string(), scores.iter().copied().enumerate().collect())])
    }

    #[test]
    fn percentile_examples() {
        let out = percentile_filter(group(&[0.1, 0.8, 0.3, 0.9, 0.2, 0.4, 0.5, 0.6]), 0.25);
        let kept: Vec<usize> = out["eu-en"].iter().map(|i| i.0).collect();
        assert_eq!(kept, [1, 3]);
        assert_eq!(percentile_filter(group(&[0.5; 6]), 0.25)["eu-en"].len(), 6);
        assert_eq!(percentile_filter(group(&[0.2]), 0.25)["eu-en"].len(), 1);
        assert!(percentile_filter(group(&[]), 0.25)["eu-en"].is_empty());
        assert_eq!(top_count(4, 0.25), 1);
        assert_eq!(top_count(5, 0.25), 2);
    }

    #[test]
    fn log_format() {
        let log = filter_log_tsv(&[FilterLogEntry {
            pair_id: "a|b".into(),
            stage: "threshold".into(),
            decision: "drop:density".into(),
            value: Some(0.25),
        }]);
        assert_eq!(log, "pair_id\tstage\tdecision\tvalue\na|b\tthreshold\tdrop:density\t0.250000\n");
    }

    proptest! {
        #[test]
        fn threshold_monotone(d in 0.0..=1.0f64, s in 0.0..=1.0f64, a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
            let (lo, hi) = (a.min(b), a.max(b));
            let loose = FilterConfig { min_density: lo, min_doc_score: lo, ..Default::default() };
            let strict = FilterConfig { min_density: hi, min_doc_score: hi, ..Default::default() };
            if threshold_decision(d, Some(s), &strict).is_none() {
                prop_assert!(threshold_decision(d, Some(s), &loose).is_none());
            }
        }

        #[test]
        fn windows_cover_every_link(n in 1usize..60, window in 1usize..8, slide_seed in 0usize..8) {
            let slide = 1 + slide_seed % window;
            let ranges = window_ranges(n, window, slide);
            for i in 0..n {
                let hits = ranges.iter().filter(|r| r.contains(&i)).count();
                prop_assert!(hits >= 1);
                if slide == 1 && n >= 2 * window - 1 && i >= window - 1 && i + window <= n {
                    prop_assert_eq!(hits, window);
                }
            }
        }

        #[test]
        fn percentile_bounds(scores in proptest::collection::vec(0.0..1.0f64, 1..50), fraction in 0.01..=1.0f64) {
            let n = scores.len();
            let kept = percentile_filter(group(&scores), fraction)["eu-en"].len();
            prop_assert!(kept >= top_count(n, fraction) && kept <= n);
            prop_assert!(top_count(n, fraction) >= (fraction * n as f64 - 1e-9).ceil() as usize);
        }
    }
}
