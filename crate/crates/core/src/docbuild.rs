//! Turns raw extracted text into [`StructuredDocument`]s.
//!
//! Every `\n` starts a new paragraph (blank lines are skipped) and each
//! paragraph is cut into sentences by a pluggable [`Segmenter`].

use std::collections::HashSet;

use thiserror::Error;

use crate::model::{DocumentMeta, ModelError, Paragraph, StructuredDocument};

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("document {0:?} contains no text")]
    EmptyDocument(String),
    #[error("document {doc:?}: {source}")]
    Invalid {
        doc: String,
        #[source]
        source: ModelError,
    },
}

/// Splits one paragraph into sentences.
///
/// Implementations must not drop or invent text: joining the returned
/// sentences with spaces and collapsing whitespace gives back the
/// whitespace-collapsed input. No returned sentence may be empty.
pub trait Segmenter: Send + Sync {
    fn name(&self) -> &str;
    fn segment(&self, paragraph: &str) -> Vec<String>;
}

const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "mr.", "mrs.", "ms.", "dr.", "prof.", "sr.", "sra.", "jr.", "st.", "mt.", "vs.", "etc.", "e.g.", "i.e.", "cf.",
    "no.", "nos.", "vol.", "fig.", "figs.", "p.", "pp.", "ed.", "eds.", "approx.", "dept.", "est.", "inc.", "ltd.",
    "co.", "corp.", "gen.", "col.", "lt.", "sgt.", "capt.", "rev.", "hon.", "jan.", "feb.", "mar.", "apr.", "jun.",
    "jul.", "aug.", "sep.", "sept.", "oct.", "nov.", "dec.", "a.m.", "p.m.", "u.s.", "u.k.", "ca.", "av.", "avda.",
    "núm.", "sres.", "dra.",
];

const TERMINALS: &[char] = &['.', '!', '?', '…'];
const CLOSERS: &[char] = &['"', '\'', '”', '’', ')', ']', '}', '»', '›'];
const OPENERS: &[char] = &['"', '\'', '“', '‘', '(', '[', '{', '«', '‹', '¿', '¡'];

/// Deterministic punctuation-driven segmenter.
///
/// A boundary falls after a run of `. ! ? …` (plus any closing quotes or
/// brackets) when it is followed by whitespace and then, past any opening
/// quotes or brackets, an uppercase letter or a digit. A period never ends a
/// sentence when the word it closes is a known abbreviation or a single
/// letter initial.
#[derive(Debug, Clone)]
pub struct RuleSegmenter {
    abbreviations: HashSet<String>,
}

impl Default for RuleSegmenter {
    fn default() -> Self {
        Self::with_abbreviations(DEFAULT_ABBREVIATIONS.iter().copied())
    }
}

impl RuleSegmenter {
    /// Abbreviations are matched case-insensitively and include their
    /// final period, e.g. `"Dr."`.
    pub fn with_abbreviations<I, S>(abbreviations: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let abbreviations = abbreviations.into_iter().map(|a| a.as_ref().to_lowercase()).collect();
        Self { abbreviations }
    }

    pub fn add_abbreviation(&mut self, abbreviation: &str) {
        self.abbreviations.insert(abbreviation.to_lowercase());
    }

    /// True if the period at byte `dot` closes an abbreviation or initial.
    fn is_abbreviation(&self, text: &str, dot: usize) -> bool {
        let before = &text[..dot];
        let start = before.char_indices().rev().find(|&(_, c)| c.is_whitespace()).map_or(0, |(i, c)| i + c.len_utf8());
        let stem = before[start..].trim_start_matches(|c: char| !c.is_alphanumeric());
        let mut chars = stem.chars();
        match (chars.next(), chars.next()) {
            (None, _) => false,
            (Some(c), None) if c.is_uppercase() => true,
            _ => self.abbreviations.contains(&format!("{}.", stem.to_lowercase())),
        }
    }

    /// Byte offsets at which sentences end.
    fn boundaries(&self, text: &str) -> Vec<usize> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let mut cuts = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let (pos, c) = chars[i];
            if !TERMINALS.contains(&c) {
                i += 1;
                continue;
            }
            let single_period = c == '.' && chars.get(i + 1).is_none_or(|&(_, n)| !TERMINALS.contains(&n));
            let mut j = i;
            while j < chars.len() && TERMINALS.contains(&chars[j].1) {
                j += 1;
            }
            while j < chars.len() && CLOSERS.contains(&chars[j].1) {
                j += 1;
            }
            let end = chars.get(j).map_or(text.len(), |&(p, _)| p);
            let mut k = j;
            while k < chars.len() && chars[k].1.is_whitespace() {
                k += 1;
            }
            if k == j || k == chars.len() {
                i = j.max(i + 1);
                continue;
            }
            while k < chars.len() && (OPENERS.contains(&chars[k].1) || chars[k].1.is_whitespace()) {
                k += 1;
            }
            let starts_sentence = chars.get(k).is_some_and(|&(_, n)| n.is_uppercase() || n.is_numeric());
            if starts_sentence && !(single_period && self.is_abbreviation(text, pos)) {
                cuts.push(end);
            }
            i = j;
        }
        cuts
    }
}

impl Segmenter for RuleSegmenter {
    fn name(&self) -> &str {
        "rule"
    }

    fn segment(&self, paragraph: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut start = 0;
        for cut in self.boundaries(paragraph).into_iter().chain([paragraph.len()]) {
            let piece = paragraph[start..cut].trim();
            if !piece.is_empty() {
                out.push(piece.to_owned());
            }
            start = cut;
        }
        out
    }
}

pub fn default_segmenter() -> RuleSegmenter {
    RuleSegmenter::default()
}

/// Builds a document from raw text: one paragraph per non-blank line,
/// sentences numbered `p.1 .. p.n` within paragraph `p`.
pub fn build_document(
    raw_text: &str,
    meta: DocumentMeta,
    segmenter: &dyn Segmenter,
) -> Result<StructuredDocument, BuildError> {
    let mut paragraphs = Vec::new();
    for line in raw_text.split('\n') {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let sentences = segmenter.segment(line);
        if sentences.is_empty() {
            continue;
        }
        paragraphs.push(Paragraph::from_texts(paragraphs.len() as u32 + 1, sentences));
    }
    if paragraphs.is_empty() {
        return Err(BuildError::EmptyDocument(meta.doc_id.to_string()));
    }
    let doc = meta.doc_id.to_string();
    StructuredDocument::new(meta, paragraphs).map_err(|source| BuildError::Invalid { doc, source })
}

/// Collapses every whitespace run to one space and trims the ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}
