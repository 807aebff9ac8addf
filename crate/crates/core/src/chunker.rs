//! Supervised fine-tuning records: chunks of k aligned sentences or whole
//! documents, rendered through a prompt template, plus token-budget
//! sampling so that different chunk sizes see the same amount of text.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DocPairAlignment, LanguageTag, Side};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChunkError {
    #[error("chunk size must be positive")]
    ZeroChunk,
    #[error("unknown mode {0:?}; expected 1, 2, 5, 10, chunk-<k> or doc2doc")]
    UnknownMode(String),
    #[error("token budget must be positive")]
    ZeroBudget,
    #[error("token budget {budget} is smaller than the smallest record ({smallest} tokens)")]
    BudgetTooSmall { budget: usize, smallest: usize },
    #[error("invalid template file: {0}")]
    Template(String),
}

pub const SRC_LANG_SLOT: &str = "src_lang_name";
pub const TGT_LANG_SLOT: &str = "tgt_lang_name";
pub const SRC_TEXT_SLOT: &str = "src_text";

/// Prompt layouts for chunk and whole-document records. The target text is
/// never part of the prompt; it is the record's completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub segment: String,
    pub document: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            segment: "Translate the following source segment from {src_lang_name} into {tgt_lang_name}.\n\
                      {src_lang_name}: {src_text}\n\
                      {tgt_lang_name}: "
                .into(),
            document: "Translate the following source document from {src_lang_name} into {tgt_lang_name}.\n\
                       {src_lang_name}: {src_text}\n\
                       {tgt_lang_name}: "
                .into(),
        }
    }
}

impl PromptTemplate {
    /// Reads `{"segment": ..., "document": ...}`.
    pub fn from_json(text: &str) -> Result<Self, ChunkError> {
        serde_json::from_str(text).map_err(|e| ChunkError::Template(e.to_string()))
    }
}

/// Replaces `{slot}` markers in one left-to-right pass, so slot values are
/// never themselves expanded. Unknown markers are left as they are.
pub fn render(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let value = after
            .find('}')
            .and_then(|close| slots.iter().find(|(name, _)| *name == &after[..close]).map(|(_, v)| (close, *v)));
        match value {
            Some((close, v)) => {
                out.push_str(v);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

const LANGUAGE_NAMES: &[(&str, &str)] = &[
    ("af", "Afrikaans"),
    ("ar", "Arabic"),
    ("az", "Azerbaijani"),
    ("be", "Belarusian"),
    ("bg", "Bulgarian"),
    ("bn", "Bengali"),
    ("bs", "Bosnian"),
    ("ca", "Catalan"),
    ("cy", "Welsh"),
    ("en", "English"),
    ("eo", "Esperanto"),
    ("et", "Estonian"),
    ("eu", "Basque"),
    ("fa", "Persian"),
    ("fi", "Finnish"),
    ("ga", "Irish"),
    ("gl", "Galician"),
    ("gu", "Gujarati"),
    ("he", "Hebrew"),
    ("hi", "Hindi"),
    ("hr", "Croatian"),
    ("is", "Icelandic"),
    ("ja", "Japanese"),
    ("kk", "Kazakh"),
    ("kn", "Kannada"),
    ("ko", "Korean"),
    ("lt", "Lithuanian"),
    ("lv", "Latvian"),
    ("mk", "Macedonian"),
    ("ml", "Malayalam"),
    ("mr", "Marathi"),
    ("ms", "Malay"),
    ("mt", "Maltese"),
    ("nb", "Norwegian Bokmål"),
    ("ne", "Nepali"),
    ("nn", "Norwegian Nynorsk"),
    ("si", "Sinhala"),
    ("sk", "Slovak"),
    ("sl", "Slovenian"),
    ("sq", "Albanian"),
    ("sr", "Serbian"),
    ("sw", "Swahili"),
    ("ta", "Tamil"),
    ("te", "Telugu"),
    ("th", "Thai"),
    ("tr", "Turkish"),
    ("uk", "Ukrainian"),
    ("ur", "Urdu"),
    ("uz", "Uzbek"),
    ("vi", "Vietnamese"),
    ("xh", "Xhosa"),
];

/// English name of a language code, or the code itself when unknown.
pub fn language_name(lang: &LanguageTag) -> &str {
    LANGUAGE_NAMES
        .binary_search_by(|(code, _)| (*code).cmp(lang.as_str()))
        .map_or(lang.as_str(), |i| LANGUAGE_NAMES[i].1)
}

/// Chunk size or whole-document mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Chunk(usize),
    Doc2Doc,
}

impl Mode {
    /// The chunk sizes and document mode compared against each other.
    pub const STANDARD: [Mode; 5] = [Mode::Chunk(1), Mode::Chunk(2), Mode::Chunk(5), Mode::Chunk(10), Mode::Doc2Doc];
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Chunk(k) => write!(f, "chunk-{k}"),
            Mode::Doc2Doc => f.write_str("doc2doc"),
        }
    }
}

impl FromStr for Mode {
    type Err = ChunkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "doc2doc" {
            return Ok(Mode::Doc2Doc);
        }
        let k: usize = s.strip_prefix("chunk-").unwrap_or(s).parse().map_err(|_| ChunkError::UnknownMode(s.into()))?;
        if k == 0 {
            return Err(ChunkError::ZeroChunk);
        }
        Ok(Mode::Chunk(k))
    }
}

impl Serialize for Mode {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Mode {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub pair_id: String,
    pub lang_src: String,
    pub lang_tgt: String,
    pub mode: Mode,
    pub prompt: String,
    pub completion: String,
    /// Link indices covered by this record; every link for doc2doc.
    pub source_span: Vec<usize>,
}

impl SftRecord {
    /// Whitespace-delimited tokens in prompt and completion.
    pub fn tokens(&self) -> usize {
        self.prompt.split_whitespace().count() + self.completion.split_whitespace().count()
    }
}

fn prompt(pair: &DocPairAlignment, template: &str, src_text: &str) -> String {
    render(
        template,
        &[
            (SRC_LANG_SLOT, language_name(pair.src().lang())),
            (TGT_LANG_SLOT, language_name(pair.tgt().lang())),
            (SRC_TEXT_SLOT, src_text),
        ],
    )
}

fn record(pair: &DocPairAlignment, mode: Mode, prompt: String, completion: String, span: Vec<usize>) -> SftRecord {
    SftRecord {
        pair_id: pair.pair_id(),
        lang_src: pair.src().lang().to_string(),
        lang_tgt: pair.tgt().lang().to_string(),
        mode,
        prompt,
        completion,
        source_span: span,
    }
}

/// Groups the links, in source order, into consecutive runs of `k`.
pub fn make_chunks(pair: &DocPairAlignment, k: usize, template: &PromptTemplate) -> Result<Vec<SftRecord>, ChunkError> {
    if k == 0 {
        return Err(ChunkError::ZeroChunk);
    }
    let links = pair.links();
    let records = (0..links.len())
        .step_by(k)
        .map(|start| {
            let span: Vec<usize> = (start..(start + k).min(links.len())).collect();
            let side_text = |side| span.iter().map(|&i| pair.link_text(&links[i], side)).collect::<Vec<_>>().join(" ");
            let src = side_text(Side::Source);
            record(pair, Mode::Chunk(k), prompt(pair, &template.segment, &src), side_text(Side::Target), span)
        })
        .collect();
    Ok(records)
}

/// The whole source document as prompt and the whole target document,
/// aligned or not, as completion.
pub fn make_doc2doc(pair: &DocPairAlignment, template: &PromptTemplate) -> SftRecord {
    let prompt = prompt(pair, &template.document, &pair.src().text());
    record(pair, Mode::Doc2Doc, prompt, pair.tgt().text(), (0..pair.links().len()).collect())
}

pub fn make_records(
    pair: &DocPairAlignment,
    mode: Mode,
    template: &PromptTemplate,
) -> Result<Vec<SftRecord>, ChunkError> {
    match mode {
        Mode::Chunk(k) => make_chunks(pair, k, template),
        Mode::Doc2Doc => Ok(vec![make_doc2doc(pair, template)]),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BudgetSample {
    pub records: Vec<SftRecord>,
    pub tokens: usize,
    pub pairs_used: usize,
}

/// Walks the pairs in a seeded random order and takes all of a pair's
/// records at once. A pair that would push the total more than 2% past
/// the budget is skipped; sampling stops once the budget is reached.
pub fn budget_sample(
    pairs: &[DocPairAlignment],
    mode: Mode,
    budget: usize,
    seed: u64,
    template: &PromptTemplate,
) -> Result<BudgetSample, ChunkError> {
    if budget == 0 {
        return Err(ChunkError::ZeroBudget);
    }
    let per_pair: Vec<Vec<SftRecord>> =
        pairs.par_iter().map(|p| make_records(p, mode, template)).collect::<Result<_, _>>()?;
    let smallest = per_pair.iter().flatten().map(SftRecord::tokens).min();
    if let Some(smallest) = smallest.filter(|&s| s > budget) {
        return Err(ChunkError::BudgetTooSmall { budget, smallest });
    }
    let ceiling = budget + budget / 50;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = BudgetSample { records: Vec::new(), tokens: 0, pairs_used: 0 };
    let mut per_pair: Vec<Option<Vec<SftRecord>>> = per_pair.into_iter().map(Some).collect();
    for i in order {
        if out.tokens >= budget {
            break;
        }
        let records = per_pair[i].take().expect("each pair is visited once");
        let tokens: usize = records.iter().map(SftRecord::tokens).sum();
        if records.is_empty() || out.tokens + tokens > ceiling {
            continue;
        }
        out.tokens += tokens;
        out.pairs_used += 1;
        out.records.extend(records);
    }
    Ok(out)
}

/// Language codes mapped to names, for template authors.
pub fn language_names() -> HashMap<&'static str, &'static str> {
    LANGUAGE_NAMES.iter().copied().collect()
}
