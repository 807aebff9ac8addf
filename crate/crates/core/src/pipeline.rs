//! Manifest-driven end-to-end runs and the stage helpers the CLI shares.
//!
//! A manifest is TOML:
//!
//! ```toml
//! output_dir = "out"
//! jobs = 4
//!
//! [[stages]]
//! stage = "build"
//! input = "raw.jsonl"
//!
//! [[stages]]
//! stage = "verify"
//! alignments = ["links.xml"]
//! ```
//!
//! Stages run in the fixed order build, dedup, verify, density, filter,
//! split, decontam, chunk; any of them may be left out as long as its
//! prerequisites are present. Every stage writes fixed file names under
//! `output_dir`, and `run-report.json` records per-stage counts and the
//! effective configuration.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{verify_links, LinkDropReason, VerificationReport};
use crate::chunker::{budget_sample, make_records, ChunkError, Mode, PromptTemplate, SftRecord};
use crate::decontam::{build_lsh_index, decontaminate, DecontamDoc, DecontamEntry, DecontamError, LshConfig};
use crate::dedup::{dedup_corpus, remap_alignments, DedupError, RemapTable};
use crate::docbuild::RuleSegmenter;
use crate::filter::{
    document_score, filter_log_tsv, percentile_filter, threshold_decision, ExternalScorer, FilterConfig, FilterError,
    FilterLogEntry, LcsRatioScorer, QualityScorer, SCORER_ENV,
};
use crate::io::{self, IoError};
use crate::model::{DocPairAlignment, DocStore, StructuredDocument};
use crate::xml::LinkGroup;

pub const REPORT_FILE: &str = "run-report.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid manifest: {0}")]
    Validation(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: String, message: String, report: Box<RunReport> },
}

impl PipelineError {
    /// Process exit code: 1 for validation errors, 2 for stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 1,
            PipelineError::Stage { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerChoice {
    /// The built-in LCS ratio stand-in.
    #[default]
    Lcs,
    /// The program named by the scorer environment variable.
    External,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecontamMethod {
    #[default]
    Lsh,
    Exact,
}

/// Which training pairs a test pair is compared against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecontamScope {
    /// Training pairs of the same language pair.
    #[default]
    Pair,
    /// Training pairs of every language pair.
    All,
}

fn default_threshold() -> f64 {
    crate::decontam::DEFAULT_THRESHOLD
}
fn default_mode() -> Mode {
    Mode::Chunk(10)
}
fn default_min_density() -> f64 {
    FilterConfig::default().min_density
}
fn default_min_doc_score() -> f64 {
    FilterConfig::default().min_doc_score
}
fn default_window() -> usize {
    FilterConfig::default().window
}
fn default_slide() -> usize {
    FilterConfig::default().slide
}
fn default_keep_top_fraction() -> f64 {
    FilterConfig::default().keep_top_fraction
}

/// One stage and its configuration. Input paths are relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StageSpec {
    Build {
        input: PathBuf,
        /// Added to the segmenter's default abbreviation list.
        #[serde(default)]
        abbreviations: Vec<String>,
    },
    Dedup {},
    Verify {
        #[serde(default)]
        alignments: Vec<PathBuf>,
    },
    Density {},
    Filter {
        #[serde(default = "default_min_density")]
        min_density: f64,
        #[serde(default = "default_min_doc_score")]
        min_doc_score: f64,
        #[serde(default = "default_window")]
        window: usize,
        #[serde(default = "default_slide")]
        slide: usize,
        #[serde(default = "default_keep_top_fraction")]
        keep_top_fraction: f64,
        #[serde(default)]
        scorer: ScorerChoice,
    },
    Split {
        n: usize,
        #[serde(default)]
        seed: u64,
    },
    Decontam {
        #[serde(default = "default_threshold")]
        threshold: f64,
        #[serde(default)]
        method: DecontamMethod,
        #[serde(default)]
        scope: DecontamScope,
        #[serde(default)]
        lsh: LshConfig,
    },
    Chunk {
        #[serde(default = "default_mode")]
        mode: Mode,
        #[serde(default)]
        budget: Option<usize>,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        template: Option<PathBuf>,
    },
}

impl StageSpec {
    pub const ORDER: [&'static str; 8] =
        ["build", "dedup", "verify", "density", "filter", "split", "decontam", "chunk"];

    pub fn name(&self) -> &'static str {
        match self {
            StageSpec::Build { .. } => "build",
            StageSpec::Dedup {} => "dedup",
            StageSpec::Verify { .. } => "verify",
            StageSpec::Density {} => "density",
            StageSpec::Filter { .. } => "filter",
            StageSpec::Split { .. } => "split",
            StageSpec::Decontam { .. } => "decontam",
            StageSpec::Chunk { .. } => "chunk",
        }
    }

    fn rank(&self) -> usize {
        Self::ORDER.iter().position(|&n| n == self.name()).expect("every stage is ordered")
    }

    fn prerequisite(&self) -> Option<&'static str> {
        match self {
            StageSpec::Build { .. } => None,
            StageSpec::Dedup {} | StageSpec::Verify { .. } => Some("build"),
            StageSpec::Decontam { .. } => Some("split"),
            _ => Some("verify"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub output_dir: PathBuf,
    #[serde(default)]
    pub jobs: Option<usize>,
    pub stages: Vec<StageSpec>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Validation(e.to_string()))
    }

    /// Checks stage order, prerequisites, per-stage settings and that every
    /// input exists relative to `base`.
    pub fn validate(&self, base: &Path) -> Result<(), PipelineError> {
        let invalid = |m: String| Err(PipelineError::Validation(m));
        if self.jobs == Some(0) {
            return invalid("jobs must be at least 1".into());
        }
        let mut seen: HashSet<&str> = HashSet::new();
        let mut last: Option<&StageSpec> = None;
        for stage in &self.stages {
            if let Some(prev) = last {
                if stage.rank() <= prev.rank() {
                    return invalid(format!(
                        "stage {} cannot come after {}; required order is {}",
                        stage.name(),
                        prev.name(),
                        StageSpec::ORDER.join(" → ")
                    ));
                }
            }
            if let Some(required) = stage.prerequisite() {
                if !seen.contains(required) {
                    return invalid(format!("stage {} needs an earlier {required} stage", stage.name()));
                }
            }
            seen.insert(stage.name());
            last = Some(stage);
            let missing = |p: &Path| -> Result<(), PipelineError> {
                if base.join(p).exists() {
                    Ok(())
                } else {
                    invalid(format!("stage {}: input {} does not exist", stage.name(), p.display()))
                }
            };
            match stage {
                StageSpec::Build { input, .. } => missing(input)?,
                StageSpec::Verify { alignments } => alignments.iter().try_for_each(|p| missing(p))?,
                StageSpec::Filter { .. } => {
                    filter_config(stage).validate().map_err(|e| PipelineError::Validation(e.to_string()))?;
                    if let StageSpec::Filter { scorer: ScorerChoice::External, .. } = stage {
                        if std::env::var_os(SCORER_ENV).is_none() {
                            return invalid(format!("filter scorer is external but {SCORER_ENV} is not set"));
                        }
                    }
                }
                StageSpec::Split { n, .. } if *n == 0 => return invalid("split n must be at least 1".into()),
                StageSpec::Decontam { threshold, lsh, .. } => {
                    if !(0.0..=1.0).contains(threshold) {
                        return invalid("decontam threshold must lie in [0, 1]".into());
                    }
                    lsh.validate().map_err(|e| PipelineError::Validation(e.to_string()))?;
                }
                StageSpec::Chunk { mode, budget, template, .. } => {
                    if *mode == Mode::Chunk(0) {
                        return invalid("chunk size must be positive".into());
                    }
                    if *budget == Some(0) {
                        return invalid("chunk budget must be positive".into());
                    }
                    if let Some(t) = template {
                        missing(t)?;
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn filter_config(stage: &StageSpec) -> FilterConfig {
    match *stage {
        StageSpec::Filter { min_density, min_doc_score, window, slide, keep_top_fraction, .. } => {
            FilterConfig { min_density, min_doc_score, window, slide, keep_top_fraction }
        }
        _ => unreachable!("only called for filter stages"),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageReport {
    pub stage: String,
    pub counts: BTreeMap<String, u64>,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config: Manifest,
    pub stages: Vec<StageReport>,
}

impl RunReport {
    pub fn stage(&self, name: &str) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.stage == name)
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("report always serializes");
        out.push('\n');
        out
    }
}

/// Stage-level failure before it is wrapped with the partial report.
#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Dedup(#[from] DedupError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Chunk(#[from] ChunkError),
    #[error(transparent)]
    Decontam(#[from] DecontamError),
    #[error("{0}")]
    Other(String),
}

/// Result of verifying raw link groups against their documents.
#[derive(Debug, Clone, Default)]
pub struct VerifyOutcome {
    pub pairs: Vec<DocPairAlignment>,
    pub reports: Vec<VerificationReport>,
    pub counts: BTreeMap<String, u64>,
}

/// Verifies groups, then optionally points them at canonical documents.
/// Pairs collapsing onto one document or repeating an earlier pair id are
/// dropped.
pub fn verify_and_remap(
    resolved: Vec<(Arc<StructuredDocument>, Arc<StructuredDocument>, LinkGroup)>,
    remap: Option<(&RemapTable, &DocStore)>,
) -> Result<VerifyOutcome, DedupError> {
    let verified: Vec<(DocPairAlignment, VerificationReport)> = resolved
        .into_par_iter()
        .map(|(src, tgt, group)| {
            let (kept, report) = verify_links(&src, &tgt, &group.links);
            let pair = DocPairAlignment::new(src, tgt, kept).expect("verified links always form a valid pair");
            (pair, report)
        })
        .collect();
    let mut counts = BTreeMap::new();
    counts.insert("pairs_in".to_string(), verified.len() as u64);
    let (pairs, reports): (Vec<_>, Vec<_>) = verified.into_iter().unzip();
    counts.insert("links_in".into(), reports.iter().map(|r: &VerificationReport| r.input as u64).sum());
    counts.insert("links_kept".into(), reports.iter().map(|r| r.kept as u64).sum());
    counts.insert("links_dropped".into(), reports.iter().map(|r| r.dropped as u64).sum());
    for reason in [
        LinkDropReason::MissingSource,
        LinkDropReason::MissingTarget,
        LinkDropReason::OverlapSource,
        LinkDropReason::OverlapTarget,
    ] {
        let key =
            format!("links_dropped_{}", serde_json::to_value(reason).unwrap().as_str().unwrap().replace('-', "_"));
        counts.insert(key, reports.iter().map(|r| *r.reasons.get(&reason).unwrap_or(&0) as u64).sum());
    }
    let (pairs, self_pairs) = match remap {
        Some((table, store)) => {
            let out = remap_alignments(pairs, table, store)?;
            (out.pairs, out.self_pairs_dropped)
        }
        None => (pairs, 0),
    };
    let mut seen = HashSet::new();
    let before = pairs.len();
    let pairs: Vec<DocPairAlignment> = pairs.into_iter().filter(|p| seen.insert(p.pair_id())).collect();
    counts.insert("self_pairs_dropped".into(), self_pairs as u64);
    counts.insert("duplicate_pairs_dropped".into(), (before - pairs.len()) as u64);
    counts.insert("pairs_out".into(), pairs.len() as u64);
    Ok(VerifyOutcome { pairs, reports, counts })
}

/// `pair_id label src_sentences tgt_sentences links density` rows.
pub fn density_tsv(pairs: &[DocPairAlignment]) -> String {
    let mut out = String::from("pair_id\tlabel\tsrc_sentences\ttgt_sentences\tlinks\tdensity\n");
    for p in pairs {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{:.6}",
            p.pair_id(),
            p.label(),
            p.src().sentence_count(),
            p.tgt().sentence_count(),
            p.links().len(),
            p.density()
        );
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutcome {
    pub kept: Vec<DocPairAlignment>,
    pub log: Vec<FilterLogEntry>,
    pub counts: BTreeMap<String, u64>,
}

/// Thresholds, then windowed scoring of the survivors, then the top
/// fraction per language pair. Kept pairs stay in input order.
pub fn run_filter(
    pairs: Vec<DocPairAlignment>,
    config: &FilterConfig,
    scorer: &dyn QualityScorer,
) -> Result<FilterOutcome, FilterError> {
    config.validate()?;
    let mut out = FilterOutcome::default();
    let mut count = |k: &str, n: u64| *out.counts.entry(k.to_string()).or_default() += n;
    count("pairs_in", pairs.len() as u64);
    let mut survivors = Vec::new();
    let mut log = Vec::new();
    for (index, pair) in pairs.into_iter().enumerate() {
        let decision = threshold_decision(pair.density(), pair.avg_scores().bicleaner, config);
        let (label, value) = match decision {
            Some(crate::filter::DropReason::Density) | None => ("density", Some(pair.density())),
            _ => ("bicleaner", pair.avg_scores().bicleaner),
        };
        let entry = |decision: String| FilterLogEntry {
            pair_id: pair.pair_id(),
            stage: format!("threshold-{label}"),
            decision,
            value,
        };
        match decision {
            Some(reason) => {
                log.push(entry(format!("drop:{}", reason.as_str())));
                count(&format!("dropped_{}", reason.as_str()), 1);
            }
            None => {
                log.push(entry("keep".into()));
                survivors.push((index, pair));
            }
        }
    }
    count("threshold_kept", survivors.len() as u64);
    let scores: Vec<f64> =
        survivors.par_iter().map(|(_, p)| document_score(p, scorer, config)).collect::<Result<_, _>>()?;
    let mut groups: BTreeMap<String, Vec<((usize, DocPairAlignment), f64)>> = BTreeMap::new();
    for (item, score) in survivors.into_iter().zip(scores) {
        groups.entry(item.1.label()).or_default().push((item, score));
    }
    let scored: Vec<(String, f64)> = groups.values().flatten().map(|((_, p), s)| (p.pair_id(), *s)).collect();
    let kept_groups = percentile_filter(groups, config.keep_top_fraction);
    let mut kept: Vec<(usize, DocPairAlignment)> = kept_groups.into_values().flatten().map(|(item, _)| item).collect();
    kept.sort_by_key(|(i, _)| *i);
    let kept_ids: HashSet<String> = kept.iter().map(|(_, p)| p.pair_id()).collect();
    for (pair_id, score) in scored {
        let decision = if kept_ids.contains(&pair_id) { "keep" } else { "drop:percentile" };
        log.push(FilterLogEntry { pair_id, stage: "score".into(), decision: decision.into(), value: Some(score) });
    }
    let threshold_kept = out.counts["threshold_kept"];
    out.counts.insert("percentile_kept".into(), kept.len() as u64);
    out.counts.insert("percentile_dropped".into(), threshold_kept - kept.len() as u64);
    out.counts.insert("pairs_out".into(), kept.len() as u64);
    for key in ["dropped_density", "dropped_unscored", "dropped_score"] {
        out.counts.entry(key.into()).or_default();
    }
    out.kept = kept.into_iter().map(|(_, p)| p).collect();
    out.log = log;
    Ok(out)
}

/// Samples `n` test pairs per language pair label; both halves keep
/// input order.
pub fn split_by_label(
    pairs: Vec<DocPairAlignment>,
    n: usize,
    seed: u64,
) -> (Vec<DocPairAlignment>, Vec<DocPairAlignment>) {
    let mut groups: BTreeMap<String, Vec<(usize, DocPairAlignment)>> = BTreeMap::new();
    for (i, p) in pairs.into_iter().enumerate() {
        groups.entry(p.label()).or_default().push((i, p));
    }
    let (mut test, mut train) = (Vec::new(), Vec::new());
    for group in groups.into_values() {
        let (t, r) = crate::decontam::sample_test(group, n, seed);
        test.extend(t);
        train.extend(r);
    }
    test.sort_by_key(|(i, _)| *i);
    train.sort_by_key(|(i, _)| *i);
    (test.into_iter().map(|x| x.1).collect(), train.into_iter().map(|x| x.1).collect())
}

fn english_doc(pair: &DocPairAlignment) -> Result<DecontamDoc, StageError> {
    let side = pair
        .english_side()
        .ok_or_else(|| StageError::Other(format!("pair {} has no English side to compare", pair.pair_id())))?;
    Ok(DecontamDoc::new(pair.pair_id(), pair.doc(side).text()))
}

#[derive(Debug, Clone, Default)]
pub struct DecontamRun {
    pub kept: Vec<DocPairAlignment>,
    pub report: Vec<DecontamEntry>,
    pub comparisons: u64,
}

/// Drops test pairs whose English side nearly duplicates the English side
/// of a training pair in scope.
pub fn decontaminate_pairs(
    test: Vec<DocPairAlignment>,
    train: &[DocPairAlignment],
    threshold: f64,
    method: DecontamMethod,
    scope: DecontamScope,
    lsh: LshConfig,
) -> Result<DecontamRun, StageError> {
    let mut groups: BTreeMap<String, (Vec<(usize, DocPairAlignment)>, Vec<DecontamDoc>)> = BTreeMap::new();
    let all_train: Vec<DecontamDoc> = match scope {
        DecontamScope::All => train.iter().map(english_doc).collect::<Result<_, _>>()?,
        DecontamScope::Pair => Vec::new(),
    };
    for (i, p) in test.into_iter().enumerate() {
        let key = match scope {
            DecontamScope::Pair => p.label(),
            DecontamScope::All => String::new(),
        };
        groups.entry(key).or_default().0.push((i, p));
    }
    if scope == DecontamScope::Pair {
        for p in train {
            if let Some(group) = groups.get_mut(&p.label()) {
                group.1.push(english_doc(p)?);
            }
        }
    }
    let mut run = DecontamRun::default();
    let mut kept = Vec::new();
    let mut report = Vec::new();
    for (_, (items, group_train)) in groups {
        let train_docs = if scope == DecontamScope::All { &all_train } else { &group_train };
        let queries: Vec<DecontamDoc> = items.iter().map(|(_, p)| english_doc(p)).collect::<Result<_, _>>()?;
        let outcome = match method {
            DecontamMethod::Exact => decontaminate(&queries, train_docs, threshold),
            DecontamMethod::Lsh => build_lsh_index(train_docs, lsh)?.decontaminate(&queries, threshold),
        };
        run.comparisons += outcome.comparisons;
        let keep: HashSet<usize> = outcome.kept.iter().copied().collect();
        for (j, ((i, p), entry)) in items.into_iter().zip(outcome.report).enumerate() {
            if keep.contains(&j) {
                kept.push((i, p));
            }
            report.push((i, entry));
        }
    }
    kept.sort_by_key(|(i, _)| *i);
    report.sort_by_key(|(i, _)| *i);
    run.kept = kept.into_iter().map(|x| x.1).collect();
    run.report = report.into_iter().map(|x| x.1).collect();
    Ok(run)
}

#[derive(Debug, Clone, Default)]
pub struct ChunkRun {
    pub records: Vec<SftRecord>,
    pub tokens: usize,
    pub pairs_used: usize,
}

/// All records of every pair, or a budgeted sample when `budget` is set.
pub fn chunk_pairs(
    pairs: &[DocPairAlignment],
    mode: Mode,
    budget: Option<usize>,
    seed: u64,
    template: &PromptTemplate,
) -> Result<ChunkRun, ChunkError> {
    if let Some(budget) = budget {
        let sample = budget_sample(pairs, mode, budget, seed, template)?;
        return Ok(ChunkRun { tokens: sample.tokens, pairs_used: sample.pairs_used, records: sample.records });
    }
    let per_pair: Vec<Vec<SftRecord>> =
        pairs.par_iter().map(|p| make_records(p, mode, template)).collect::<Result<_, _>>()?;
    let pairs_used = per_pair.iter().filter(|r| !r.is_empty()).count();
    let records: Vec<SftRecord> = per_pair.into_iter().flatten().collect();
    let tokens = records.iter().map(SftRecord::tokens).sum();
    Ok(ChunkRun { records, tokens, pairs_used })
}

struct Run<'a> {
    base: &'a Path,
    out_dir: PathBuf,
    built: DocStore,
    canonical: Option<(DocStore, RemapTable)>,
    pairs: Vec<DocPairAlignment>,
    split: Option<(Vec<DocPairAlignment>, Vec<DocPairAlignment>)>,
}

impl Run<'_> {
    fn write(&self, report: &mut StageReport, name: &str, contents: &str) -> Result<(), StageError> {
        io::write_text(&self.out_dir.join(name), contents)?;
        report.outputs.push(name.to_string());
        Ok(())
    }

    fn stage(&mut self, spec: &StageSpec) -> Result<StageReport, StageError> {
        let mut report = StageReport { stage: spec.name().to_string(), ..Default::default() };
        let counts = &mut BTreeMap::new();
        match spec {
            StageSpec::Build { input, abbreviations } => {
                let mut segmenter = RuleSegmenter::default();
                for a in abbreviations {
                    segmenter.add_abbreviation(a);
                }
                let raw = io::read_raw_jsonl(&self.base.join(input))?;
                counts.insert("records_in".into(), raw.len() as u64);
                let (docs, empty) = io::build_all(raw, &segmenter).map_err(|e| StageError::Other(e.to_string()))?;
                counts.insert("docs_out".into(), docs.len() as u64);
                counts.insert("empty_skipped".into(), empty.len() as u64);
                counts.insert("sentences".into(), docs.iter().map(|d| d.sentence_count() as u64).sum());
                self.write(&mut report, "docs.xml", &crate::xml::write_corpus_xml(&docs))?;
                for doc in docs {
                    let id = doc.doc_id().clone();
                    if self.built.insert(Arc::new(doc)).is_some() {
                        return Err(StageError::Other(format!("duplicate document id {id}")));
                    }
                }
            }
            StageSpec::Dedup {} => {
                let docs: Vec<StructuredDocument> = self.built.sorted().iter().map(|d| (**d).clone()).collect();
                counts.insert("docs_in".into(), docs.len() as u64);
                let (kept, table) = dedup_corpus(docs)?;
                counts.insert("docs_kept".into(), kept.len() as u64);
                counts.insert("docs_dropped".into(), table.dropped_count() as u64);
                self.write(&mut report, "dedup-docs.xml", &crate::xml::write_corpus_xml(&kept))?;
                self.write(&mut report, "remap.tsv", &table.to_tsv())?;
                self.canonical = Some((kept.into_iter().collect(), table));
            }
            StageSpec::Verify { alignments } => {
                let mut resolved = Vec::new();
                for path in alignments {
                    let path = self.base.join(path);
                    let groups = io::read_link_groups(&path)?;
                    resolved.extend(io::resolve_groups(&path, groups, &self.built)?);
                }
                let remap = self.canonical.as_ref().map(|(store, table)| (table, store));
                let outcome = verify_and_remap(resolved, remap)?;
                counts.extend(outcome.counts);
                self.write(&mut report, "verified.xml", &write_pairs(&outcome.pairs))?;
                self.write(&mut report, "verify-report.jsonl", &io::to_jsonl(&outcome.reports))?;
                self.pairs = outcome.pairs;
            }
            StageSpec::Density {} => {
                counts.insert("pairs".into(), self.pairs.len() as u64);
                self.write(&mut report, "density.tsv", &density_tsv(&self.pairs))?;
            }
            StageSpec::Filter { scorer, .. } => {
                let config = filter_config(spec);
                let scorer: Box<dyn QualityScorer> = match scorer {
                    ScorerChoice::Lcs => Box::new(LcsRatioScorer),
                    ScorerChoice::External => Box::new(
                        ExternalScorer::from_env()
                            .ok_or_else(|| StageError::Other(format!("{SCORER_ENV} is not set")))?
                            .map_err(|e| StageError::Other(e.to_string()))?,
                    ),
                };
                let outcome = run_filter(std::mem::take(&mut self.pairs), &config, scorer.as_ref())?;
                counts.extend(outcome.counts);
                self.write(&mut report, "filtered.xml", &write_pairs(&outcome.kept))?;
                self.write(&mut report, "filter-log.tsv", &filter_log_tsv(&outcome.log))?;
                self.pairs = outcome.kept;
            }
            StageSpec::Split { n, seed } => {
                counts.insert("pairs_in".into(), self.pairs.len() as u64);
                let (test, train) = split_by_label(self.pairs.clone(), *n, *seed);
                counts.insert("test".into(), test.len() as u64);
                counts.insert("train".into(), train.len() as u64);
                self.write(&mut report, "test.xml", &write_pairs(&test))?;
                self.write(&mut report, "train.xml", &write_pairs(&train))?;
                self.split = Some((test, train));
            }
            StageSpec::Decontam { threshold, method, scope, lsh } => {
                let (test, train) = self.split.take().expect("validated: split precedes decontam");
                counts.insert("test_in".into(), test.len() as u64);
                let run = decontaminate_pairs(test, &train, *threshold, *method, *scope, *lsh)?;
                counts.insert("test_kept".into(), run.kept.len() as u64);
                counts.insert("test_removed".into(), run.report.iter().filter(|e| e.removed).count() as u64);
                counts.insert("comparisons".into(), run.comparisons);
                self.write(&mut report, "test-clean.xml", &write_pairs(&run.kept))?;
                self.write(&mut report, "decontam-report.tsv", &crate::decontam::report_tsv(&run.report))?;
                self.split = Some((run.kept, train));
            }
            StageSpec::Chunk { mode, budget, seed, template } => {
                let template = match template {
                    Some(path) => PromptTemplate::from_json(&io::read_text(&self.base.join(path))?)?,
                    None => PromptTemplate::default(),
                };
                let pool = self.split.as_ref().map_or(&self.pairs, |(_, train)| train);
                counts.insert("pairs_in".into(), pool.len() as u64);
                let run = chunk_pairs(pool, *mode, *budget, *seed, &template)?;
                counts.insert("pairs_used".into(), run.pairs_used as u64);
                counts.insert("records".into(), run.records.len() as u64);
                counts.insert("tokens".into(), run.tokens as u64);
                self.write(&mut report, "sft.jsonl", &io::to_jsonl(&run.records))?;
            }
        }
        report.counts = std::mem::take(counts);
        Ok(report)
    }
}

fn write_pairs(pairs: &[DocPairAlignment]) -> String {
    let groups: Vec<LinkGroup> = pairs.iter().map(io::link_group).collect();
    crate::xml::write_cesalign(&groups)
}

/// Loads, validates and runs the manifest at `path`, writing the report to
/// `output_dir/run-report.json` whether or not a stage fails.
pub fn run_pipeline(path: &Path) -> Result<RunReport, PipelineError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?;
    let manifest = Manifest::parse(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    run_manifest(&manifest, base)
}

/// Runs an already parsed manifest with paths relative to `base`.
pub fn run_manifest(manifest: &Manifest, base: &Path) -> Result<RunReport, PipelineError> {
    manifest.validate(base)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(manifest.jobs.unwrap_or(0))
        .build()
        .map_err(|e| PipelineError::Validation(e.to_string()))?;
    pool.install(|| execute(manifest, base))
}

fn execute(manifest: &Manifest, base: &Path) -> Result<RunReport, PipelineError> {
    let mut run = Run {
        base,
        out_dir: base.join(&manifest.output_dir),
        built: DocStore::new(),
        canonical: None,
        pairs: Vec::new(),
        split: None,
    };
    let mut report = RunReport {
        status: "ok".into(),
        failed_stage: None,
        error: None,
        config: manifest.clone(),
        stages: Vec::new(),
    };
    let report_path = run.out_dir.join(REPORT_FILE);
    for spec in &manifest.stages {
        info!("running stage {}", spec.name());
        match run.stage(spec) {
            Ok(stage) => report.stages.push(stage),
            Err(e) => {
                report.status = "failed".into();
                report.failed_stage = Some(spec.name().into());
                report.error = Some(e.to_string());
                let _ = io::write_text(&report_path, &report.to_json());
                return Err(PipelineError::Stage {
                    stage: spec.name().into(),
                    message: e.to_string(),
                    report: Box::new(report),
                });
            }
        }
    }
    io::write_text(&report_path, &report.to_json()).map_err(|e| PipelineError::Stage {
        stage: "report".into(),
        message: e.to_string(),
        report: Box::new(report.clone()),
    })?;
    Ok(report)
}
