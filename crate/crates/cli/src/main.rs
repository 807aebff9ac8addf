use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use doccorpus::chunker::{Mode, PromptTemplate};
use doccorpus::decontam::{LshConfig, DEFAULT_THRESHOLD};
use doccorpus::dedup::{dedup_corpus, RemapTable};
use doccorpus::docbuild::RuleSegmenter;
use doccorpus::filter::{filter_log_tsv, ExternalScorer, FilterConfig, LcsRatioScorer, QualityScorer, SCORER_ENV};
use doccorpus::io;
use doccorpus::metrics::{bleu_signature, chrf_signature, doc_bleu, doc_chrf_pp};
use doccorpus::model::{DocPairAlignment, DocStore};
use doccorpus::pipeline::{self, DecontamMethod, DecontamScope, PipelineError};
use doccorpus::pivot::{pivot_alignment, pivot_doc_pairs, pivot_link_group};
use doccorpus::stats::{self, RatioMode};
use doccorpus::xml;

#[derive(Parser, Debug)]
#[command(version, about = "Build and curate document-level parallel corpora")]
struct Cli {
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Docs {
    /// Document corpus XML files.
    #[arg(long = "docs", required = true, num_args = 1..)]
    docs: Vec<PathBuf>,
}

impl Docs {
    fn store(&self) -> Result<DocStore> {
        Ok(io::read_store(&self.docs)?)
    }
}

#[derive(Args, Debug)]
struct Pairs {
    #[command(flatten)]
    docs: Docs,
    /// Verified cesAlign file.
    #[arg(long)]
    pairs: PathBuf,
}

impl Pairs {
    fn load(&self) -> Result<Vec<DocPairAlignment>> {
        let store = self.docs.store()?;
        Ok(io::read_pairs(&self.pairs, &store)?)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Segment raw JSONL records into structured documents.
    Build {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Extra abbreviation that never ends a sentence; repeatable.
        #[arg(long = "abbreviation")]
        abbreviations: Vec<String>,
    },
    /// Drop exact duplicates and consolidate English across collections.
    Dedup {
        #[command(flatten)]
        docs: Docs,
        #[arg(long)]
        output: PathBuf,
        /// Where to write the id remap table.
        #[arg(long)]
        remap: PathBuf,
    },
    /// Check alignment links against their documents.
    Verify {
        /// Documents the alignments were produced against.
        #[command(flatten)]
        docs: Docs,
        #[arg(long, required = true, num_args = 1..)]
        alignments: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        /// Per-pair verification report (JSONL).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Remap table from `dedup`; needs `--canonical`.
        #[arg(long, requires = "canonical")]
        remap: Option<PathBuf>,
        /// Deduplicated corpus the remap table points into.
        #[arg(long)]
        canonical: Vec<PathBuf>,
    },
    /// Alignment density per pair as TSV.
    Density {
        #[command(flatten)]
        pairs: Pairs,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Pair xx and yy documents through shared English documents.
    Pivot {
        #[command(flatten)]
        docs: Docs,
        #[arg(long)]
        en_xx: PathBuf,
        #[arg(long)]
        en_yy: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Also compose sentence links through the English sentences.
        #[arg(long)]
        compose: bool,
    },
    /// Threshold, window-score and percentile filtering.
    Filter {
        #[command(flatten)]
        pairs: Pairs,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, default_value_t = FilterConfig::default().min_density)]
        min_density: f64,
        #[arg(long, default_value_t = FilterConfig::default().min_doc_score)]
        min_doc_score: f64,
        #[arg(long, default_value_t = FilterConfig::default().window)]
        window: usize,
        #[arg(long, default_value_t = FilterConfig::default().slide)]
        slide: usize,
        #[arg(long, default_value_t = FilterConfig::default().keep_top_fraction)]
        keep_top_fraction: f64,
        /// Score windows with the program named by DOCCORPUS_SCORER.
        #[arg(long)]
        external_scorer: bool,
    },
    /// Sample n test pairs per language pair.
    Split {
        #[command(flatten)]
        pairs: Pairs,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        test_out: PathBuf,
        #[arg(long)]
        train_out: PathBuf,
    },
    /// Remove test pairs whose English side nearly duplicates training data.
    Decontam {
        #[command(flatten)]
        docs: Docs,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Compare every test/train pair.
        #[arg(long, conflicts_with = "lsh")]
        exact: bool,
        /// Compare only LSH candidates (default).
        #[arg(long)]
        lsh: bool,
        /// Compare against training pairs of every language pair.
        #[arg(long)]
        widen: bool,
        /// MinHash seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Emit prompt/completion records.
    Chunk {
        #[command(flatten)]
        pairs: Pairs,
        #[arg(long)]
        output: PathBuf,
        /// 1, 2, 5, 10 (or any k) or doc2doc.
        #[arg(long, default_value = "10")]
        mode: Mode,
        /// Whitespace-token budget; all pairs are used when absent.
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON object with `segment` and `document` templates.
        #[arg(long)]
        template_file: Option<PathBuf>,
    },
    /// Document-level BLEU and chrF++.
    Eval {
        /// One document per line, newlines escaped as \n.
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, value_enum, default_value_t = Metric::Both)]
        metric: Metric,
        #[arg(long)]
        json: bool,
    },
    /// Corpus and alignment statistics tables.
    Stats {
        #[command(flatten)]
        docs: Docs,
        /// Report per language pair statistics instead of language totals.
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Tsv)]
        format: Format,
        #[arg(long, value_enum, default_value_t = Ratio::MeanOfRatios)]
        ratio_mode: Ratio,
    },
    /// Run a TOML pipeline manifest.
    Run { manifest: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Metric {
    Bleu,
    Chrfpp,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Tsv,
    Markdown,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Ratio {
    MeanOfRatios,
    RatioOfSums,
}

impl From<Ratio> for RatioMode {
    fn from(r: Ratio) -> Self {
        match r {
            Ratio::MeanOfRatios => RatioMode::MeanOfRatios,
            Ratio::RatioOfSums => RatioMode::RatioOfSums,
        }
    }
}

fn write_pairs(path: &Path, pairs: &[DocPairAlignment]) -> Result<()> {
    Ok(io::write_pairs(path, pairs)?)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Build { input, output, abbreviations } => {
            let segmenter = RuleSegmenter::with_abbreviations(abbreviations);
            let raw = io::read_raw_jsonl(&input)?;
            let records = raw.len();
            let (docs, empty) = io::build_all(raw, &segmenter)?;
            let mut seen = std::collections::HashSet::new();
            if let Some(doc) = docs.iter().find(|d| !seen.insert(d.doc_id())) {
                bail!("duplicate document id {}", doc.doc_id());
            }
            io::write_corpus(&output, &docs)?;
            info!("{records} records, {} documents, {} empty", docs.len(), empty.len());
        }
        Command::Dedup { docs, output, remap } => {
            let store = docs.store()?;
            let all = store.sorted().iter().map(|d| (**d).clone()).collect();
            let (kept, table) = dedup_corpus(all)?;
            io::write_corpus(&output, &kept)?;
            io::write_text(&remap, &table.to_tsv())?;
            info!("{} kept, {} dropped", kept.len(), table.dropped_count());
        }
        Command::Verify { docs, alignments, output, report, remap, canonical } => {
            let store = docs.store()?;
            let mut resolved = Vec::new();
            for path in &alignments {
                let groups = io::read_link_groups(path)?;
                resolved.extend(io::resolve_groups(path, groups, &store)?);
            }
            let remap = match remap {
                Some(path) => {
                    let table = RemapTable::from_tsv(&io::read_text(&path)?)
                        .with_context(|| format!("reading {}", path.display()))?;
                    Some((table, io::read_store(&canonical)?))
                }
                None => None,
            };
            let outcome = pipeline::verify_and_remap(resolved, remap.as_ref().map(|(t, s)| (t, s)))?;
            write_pairs(&output, &outcome.pairs)?;
            if let Some(path) = report {
                io::write_text(&path, &io::to_jsonl(&outcome.reports))?;
            }
            info!("{}", serde_json::to_string(&outcome.counts)?);
        }
        Command::Density { pairs, output } => {
            let tsv = pipeline::density_tsv(&pairs.load()?);
            match output {
                Some(path) => io::write_text(&path, &tsv)?,
                None => print!("{tsv}"),
            }
        }
        Command::Pivot { docs, en_xx, en_yy, output, compose } => {
            let store = docs.store()?;
            let xx = io::read_pairs(&en_xx, &store)?;
            let yy = io::read_pairs(&en_yy, &store)?;
            let pivots = pivot_doc_pairs(&xx, &yy)?;
            let mut groups = Vec::with_capacity(pivots.len());
            for p in &pivots {
                let links = if compose { Some(pivot_alignment(p, &xx, &yy)?.links().to_vec()) } else { None };
                groups.push(pivot_link_group(p, links));
            }
            io::write_text(&output, &xml::write_cesalign(&groups))?;
            info!("{} pivoted pairs", groups.len());
        }
        Command::Filter {
            pairs,
            output,
            log,
            min_density,
            min_doc_score,
            window,
            slide,
            keep_top_fraction,
            external_scorer,
        } => {
            let config = FilterConfig { min_density, min_doc_score, window, slide, keep_top_fraction };
            config.validate()?;
            let scorer: Box<dyn QualityScorer> = if external_scorer {
                match ExternalScorer::from_env() {
                    Some(s) => Box::new(s?),
                    None => bail!("--external-scorer needs {SCORER_ENV} to name the scorer program"),
                }
            } else {
                Box::new(LcsRatioScorer)
            };
            let outcome = pipeline::run_filter(pairs.load()?, &config, scorer.as_ref())?;
            write_pairs(&output, &outcome.kept)?;
            if let Some(path) = log {
                io::write_text(&path, &filter_log_tsv(&outcome.log))?;
            }
            info!("{}", serde_json::to_string(&outcome.counts)?);
        }
        Command::Split { pairs, n, seed, test_out, train_out } => {
            if n == 0 {
                bail!("--n must be at least 1");
            }
            let (test, train) = pipeline::split_by_label(pairs.load()?, n, seed);
            write_pairs(&test_out, &test)?;
            write_pairs(&train_out, &train)?;
            info!("{} test, {} train", test.len(), train.len());
        }
        Command::Decontam { docs, test, train, output, report, threshold, exact, lsh: _, widen, seed } => {
            let store = docs.store()?;
            let test = io::read_pairs(&test, &store)?;
            let train = io::read_pairs(&train, &store)?;
            let method = if exact { DecontamMethod::Exact } else { DecontamMethod::Lsh };
            let scope = if widen { DecontamScope::All } else { DecontamScope::Pair };
            let defaults = LshConfig::default();
            let lsh = LshConfig { seed: seed.unwrap_or(defaults.seed), ..defaults };
            let run = pipeline::decontaminate_pairs(test, &train, threshold, method, scope, lsh)?;
            write_pairs(&output, &run.kept)?;
            if let Some(path) = report {
                io::write_text(&path, &doccorpus::decontam::report_tsv(&run.report))?;
            }
            info!("{} kept, {} exact comparisons", run.kept.len(), run.comparisons);
        }
        Command::Chunk { pairs, output, mode, budget, seed, template_file } => {
            let template = match template_file {
                Some(path) => PromptTemplate::from_json(&io::read_text(&path)?)?,
                None => PromptTemplate::default(),
            };
            let run = pipeline::chunk_pairs(&pairs.load()?, mode, budget, seed, &template)?;
            io::write_text(&output, &io::to_jsonl(&run.records))?;
            info!("{} records, {} tokens from {} pairs", run.records.len(), run.tokens, run.pairs_used);
        }
        Command::Eval { hyp, reference, metric, json } => {
            let hyps = io::read_line_documents(&hyp)?;
            let refs = io::read_line_documents(&reference)?;
            let mut out = serde_json::Map::new();
            if matches!(metric, Metric::Bleu | Metric::Both) {
                let scores = doc_bleu(&hyps, &refs)?;
                out.insert("bleu".into(), serde_json::json!({ "signature": bleu_signature(), "score": scores.average, "per_doc": scores.per_doc }));
            }
            if matches!(metric, Metric::Chrfpp | Metric::Both) {
                let scores = doc_chrf_pp(&hyps, &refs)?;
                out.insert("chrfpp".into(), serde_json::json!({ "signature": chrf_signature(), "score": scores.average, "per_doc": scores.per_doc }));
            }
            if json {
                println!("{}", serde_json::to_string_pretty(&out)?);
            } else {
                for (name, value) in &out {
                    println!(
                        "{name}\t{:.2}\t{}",
                        value["score"].as_f64().unwrap_or_default(),
                        value["signature"].as_str().unwrap_or_default()
                    );
                }
            }
        }
        Command::Stats { docs, pairs, format, ratio_mode } => {
            let text = match pairs {
                Some(path) => {
                    let store = docs.store()?;
                    let rows = stats::pair_stats_by_label(&io::read_pairs(&path, &store)?, ratio_mode.into());
                    match format {
                        Format::Tsv => stats::pair_stats_tsv(&rows),
                        Format::Markdown => stats::pair_stats_markdown(&rows),
                    }
                }
                None => {
                    let store = docs.store()?;
                    let sorted = store.sorted();
                    let table = stats::language_totals(sorted.iter().map(Arc::as_ref));
                    match format {
                        Format::Tsv => stats::language_totals_tsv(&table),
                        Format::Markdown => stats::language_totals_markdown(&table),
                    }
                }
            };
            print!("{text}");
        }
        Command::Run { .. } => unreachable!("handled before dispatch"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Command::Run { manifest } = &cli.command {
        return match run_manifest(manifest, cli.jobs) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        };
    }
    if cli.jobs == Some(0) {
        eprintln!("error: --jobs must be at least 1");
        return ExitCode::from(1);
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs.unwrap_or(0)).build();
    let result = match pool {
        Ok(pool) => pool.install(|| run(cli.command)),
        Err(e) => Err(e.into()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// `--jobs` overrides the manifest's own setting.
fn run_manifest(path: &Path, jobs: Option<usize>) -> Result<(), PipelineError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?;
    let mut manifest = pipeline::Manifest::parse(&text)?;
    if jobs.is_some() {
        manifest.jobs = jobs;
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let report = pipeline::run_manifest(&manifest, base)?;
    for stage in &report.stages {
        info!("{}: {}", stage.stage, serde_json::to_string(&stage.counts).unwrap_or_default());
    }
    Ok(())
}
