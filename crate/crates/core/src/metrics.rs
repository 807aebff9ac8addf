//! Document-level BLEU and chrF++.
//!
//! Each hypothesis document is scored against its reference as one string
//! and the per-document scores are macro-averaged. Tokenization, smoothing
//! and n-gram orders follow the signatures returned by [`bleu_signature`]
//! and [`chrf_signature`].

use std::collections::HashMap;
use std::hash::Hash;
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("{hypotheses} hypothesis documents but {references} reference documents")]
    LengthMismatch { hypotheses: usize, references: usize },
}

const NGRAM_ORDER: usize = 4;
const CHAR_ORDER: usize = 6;
const WORD_ORDER: usize = 2;
const BETA: f64 = 2.0;
const METRIC_VERSION: &str = "2.5.1";

pub fn bleu_signature() -> String {
    format!("nrefs:1|case:mixed|eff:no|tok:13a|smooth:exp|version:{METRIC_VERSION}")
}

pub fn chrf_signature() -> String {
    format!("nrefs:1|case:mixed|eff:yes|nc:{CHAR_ORDER}|nw:{WORD_ORDER}|space:no|version:{METRIC_VERSION}")
}

/// Whitespace as understood by the reference tokenizer, which also treats
/// the ASCII separator controls as spaces.
fn is_space(c: char) -> bool {
    c.is_whitespace() || ('\u{1c}'..='\u{1f}').contains(&c)
}

fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split(is_space).filter(|w| !w.is_empty())
}

static PADDING: LazyLock<[(Regex, &'static str); 4]> = LazyLock::new(|| {
    [
        (Regex::new(r"([\{-~\[-` -&\(-\+:-@/])").unwrap(), " $1 "),
        (Regex::new(r"([^0-9])([\.,])").unwrap(), "$1 $2 "),
        (Regex::new(r"([\.,])([^0-9])").unwrap(), " $1 $2"),
        (Regex::new(r"([0-9])(-)").unwrap(), "$1 $2 "),
    ]
});

/// The 13a tokenizer: entity unescaping, then padding of punctuation and
/// symbols, with periods and commas kept inside numbers.
pub fn tokenize_13a(line: &str) -> String {
    let mut line = line.replace("<skipped>", "").replace("-\n", "").replace('\n', " ");
    if line.contains('&') {
        line = line.replace("&quot;", "\"").replace("&amp;", "&").replace("&lt;", "<").replace("&gt;", ">");
    }
    let mut line = format!(" {line} ");
    for (re, replacement) in PADDING.iter() {
        line = re.replace_all(&line, *replacement).into_owned();
    }
    words(&line).collect::<Vec<_>>().join(" ")
}

fn counts<K: Eq + Hash>(items: impl Iterator<Item = K>) -> HashMap<K, usize> {
    let mut map = HashMap::new();
    for item in items {
        *map.entry(item).or_insert(0) += 1;
    }
    map
}

/// Sentence BLEU with exponential smoothing and a fixed order of four.
pub fn sentence_bleu(hypothesis: &str, reference: &str) -> f64 {
    let hyp_tok = tokenize_13a(hypothesis.trim_end_matches(is_space));
    let ref_tok = tokenize_13a(reference.trim_end_matches(is_space));
    let hyp: Vec<&str> = words(&hyp_tok).collect();
    let refs: Vec<&str> = words(&ref_tok).collect();
    let mut correct = [0usize; NGRAM_ORDER];
    let mut total = [0usize; NGRAM_ORDER];
    for n in 1..=NGRAM_ORDER {
        let r = counts(refs.windows(n));
        for (gram, c) in counts(hyp.windows(n)) {
            total[n - 1] += c;
            correct[n - 1] += c.min(r.get(gram).copied().unwrap_or(0));
        }
    }
    let (sys_len, ref_len) = (hyp.len() as f64, refs.len() as f64);
    let bp = if sys_len < ref_len {
        if sys_len > 0.0 {
            (1.0 - ref_len / sys_len).exp()
        } else {
            0.0
        }
    } else {
        1.0
    };
    if correct.iter().all(|&c| c == 0) {
        return 0.0;
    }
    let mut precisions = [0.0f64; NGRAM_ORDER];
    let mut smooth = 1.0;
    for n in 0..NGRAM_ORDER {
        if total[n] == 0 {
            break;
        }
        precisions[n] = if correct[n] == 0 {
            smooth *= 2.0;
            100.0 / (smooth * total[n] as f64)
        } else {
            100.0 * correct[n] as f64 / total[n] as f64
        };
    }
    let log = |p: f64| if p == 0.0 { -9_999_999_999.0 } else { p.ln() };
    bp * (precisions.iter().map(|&p| log(p)).sum::<f64>() / NGRAM_ORDER as f64).exp()
}

const PUNCTUATION: &str = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";

fn split_punctuation(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for w in words(text) {
        let mut chars = w.chars();
        let (first, last) = (chars.next(), chars.next_back());
        match (first, last) {
            (Some(_), None) => out.push(w),
            (_, Some(l)) if PUNCTUATION.contains(l) => {
                let cut = w.len() - l.len_utf8();
                out.extend([&w[..cut], &w[cut..]]);
            }
            (Some(f), _) if PUNCTUATION.contains(f) => {
                let cut = f.len_utf8();
                out.extend([&w[..cut], &w[cut..]]);
            }
            _ => out.push(w),
        }
    }
    out
}

/// `(hyp count, ref count, matches)` for each n-gram order, in the order
/// characters 1..=6 then words 1..=2.
fn chrf_statistics(hypothesis: &str, reference: &str) -> Vec<[usize; 3]> {
    fn stats<K: Eq + Hash>(hyp: HashMap<K, usize>, r: &HashMap<K, usize>) -> [usize; 3] {
        let ref_count: usize = r.values().sum();
        let mut hyp_count = 0;
        let mut matches = 0;
        for (gram, c) in hyp {
            hyp_count += c;
            matches += c.min(r.get(&gram).copied().unwrap_or(0));
        }
        [if r.is_empty() { 0 } else { hyp_count }, ref_count, matches]
    }
    let hyp_chars: Vec<char> = words(hypothesis).flat_map(str::chars).collect();
    let ref_chars: Vec<char> = words(reference).flat_map(str::chars).collect();
    let mut out: Vec<[usize; 3]> =
        (1..=CHAR_ORDER).map(|n| stats(counts(hyp_chars.windows(n)), &counts(ref_chars.windows(n)))).collect();
    let hyp_words = split_punctuation(hypothesis);
    let ref_words = split_punctuation(reference);
    for n in 1..=WORD_ORDER {
        let join = |w: &[&str]| w.join(" ");
        out.push(stats(counts(hyp_words.windows(n).map(join)), &counts(ref_words.windows(n).map(join))));
    }
    out
}

/// chrF++: character 6-grams and word bigrams, beta 2, averaging precision
/// and recall only over orders present on both sides.
pub fn sentence_chrf(hypothesis: &str, reference: &str) -> f64 {
    let (mut precision, mut recall, mut orders) = (0.0, 0.0, 0);
    for [n_hyp, n_ref, n_match] in chrf_statistics(hypothesis, reference) {
        if n_hyp > 0 && n_ref > 0 {
            precision += n_match as f64 / n_hyp as f64;
            recall += n_match as f64 / n_ref as f64;
            orders += 1;
        }
    }
    if orders == 0 {
        return 0.0;
    }
    precision /= orders as f64;
    recall /= orders as f64;
    if precision + recall == 0.0 {
        return 0.0;
    }
    let factor = BETA * BETA;
    100.0 * (1.0 + factor) * precision * recall / (factor * precision + recall)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DocScores {
    pub per_doc: Vec<f64>,
    /// Mean of `per_doc`; 0 for no documents.
    pub average: f64,
}

fn score_documents(
    hypotheses: &[String],
    references: &[String],
    metric: fn(&str, &str) -> f64,
) -> Result<DocScores, MetricError> {
    if hypotheses.len() != references.len() {
        return Err(MetricError::LengthMismatch { hypotheses: hypotheses.len(), references: references.len() });
    }
    let per_doc: Vec<f64> = hypotheses.par_iter().zip(references).map(|(h, r)| metric(h, r)).collect();
    let average = if per_doc.is_empty() { 0.0 } else { per_doc.iter().sum::<f64>() / per_doc.len() as f64 };
    Ok(DocScores { per_doc, average })
}

pub fn doc_bleu(hypotheses: &[String], references: &[String]) -> Result<DocScores, MetricError> {
    score_documents(hypotheses, references, sentence_bleu)
}

pub fn doc_chrf_pp(hypotheses: &[String], references: &[String]) -> Result<DocScores, MetricError> {
    score_documents(hypotheses, references, sentence_chrf)
}
