//! In-memory corpus model: documents made of ID'd paragraphs and sentences,
//! sentence alignment links with optional quality scores, and aligned
//! document pairs.
//!
//! Every type validates its invariants on construction and is immutable
//! afterwards, so values can be shared freely across threads.

use std::borrow::Borrow;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::alignment;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid language tag {0:?}: expected lowercase ASCII letters")]
    InvalidLanguage(String),
    #[error("invalid sentence id {0:?}")]
    InvalidSentenceId(String),
    #[error("paragraph id {found} out of sequence, expected {expected}")]
    ParagraphOutOfSequence { expected: u32, found: u32 },
    #[error("paragraph {0} has no sentences")]
    EmptyParagraph(u32),
    #[error("sentence id {found} out of sequence, expected {expected}")]
    SentenceOutOfSequence { expected: SentenceId, found: SentenceId },
    #[error("sentence {0} is empty")]
    EmptySentence(SentenceId),
    #[error("sentence {id} contains a forbidden character {ch:?}")]
    ForbiddenCharacter { id: SentenceId, ch: char },
    #[error("document {0:?} has no sentences")]
    EmptyDocument(String),
    #[error("score {field}={value} outside [0, 1]")]
    ScoreOutOfRange { field: &'static str, value: f64 },
    #[error("link has an empty {0} side")]
    EmptyLinkSide(Side),
    #[error("link {side} ids are not strictly ascending at {id}")]
    UnsortedLinkSide { side: Side, id: SentenceId },
    #[error("{side} sentence {id} does not exist in document {doc:?}")]
    UnresolvedSentence { side: Side, id: SentenceId, doc: String },
    #[error("{side} sentence {id} is used by more than one link")]
    OverlappingLinks { side: Side, id: SentenceId },
}

/// Which document of a pair a value refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Source,
    Target,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Source => "source",
            Side::Target => "target",
        })
    }
}

/// A lowercase ISO-639 style language code such as `en` or `eu`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LanguageTag(String);

impl LanguageTag {
    pub fn new(code: impl Into<String>) -> Result<Self, ModelError> {
        let code = code.into();
        if code.is_empty() || !code.bytes().all(|b| b.is_ascii_lowercase()) {
            return Err(ModelError::InvalidLanguage(code));
        }
        Ok(Self(code))
    }

    pub fn english() -> Self {
        Self("en".to_owned())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_english(&self) -> bool {
        self.0 == "en"
    }
}

impl fmt::Display for LanguageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for LanguageTag {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl TryFrom<String> for LanguageTag {
    type Error = ModelError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::new(s)
    }
}

impl From<LanguageTag> for String {
    fn from(tag: LanguageTag) -> Self {
        tag.0
    }
}

/// Position of a sentence inside a document, rendered as `paragraph.sentence`.
///
/// The derived ordering is paragraph-major, which agrees with text order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SentenceId {
    paragraph: u32,
    sentence: u32,
}

impl SentenceId {
    pub fn new(paragraph: u32, sentence: u32) -> Result<Self, ModelError> {
        if paragraph == 0 || sentence == 0 {
            return Err(ModelError::InvalidSentenceId(format!("{paragraph}.{sentence}")));
        }
        Ok(Self { paragraph, sentence })
    }

    pub fn paragraph(self) -> u32 {
        self.paragraph
    }

    pub fn sentence(self) -> u32 {
        self.sentence
    }
}

impl fmt::Display for SentenceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.paragraph, self.sentence)
    }
}

fn parse_positive(part: &str) -> Option<u32> {
    // Leading zeros and signs would break exact round-tripping.
    if part.is_empty() || part.starts_with('0') || !part.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    part.parse().ok()
}

impl FromStr for SentenceId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::InvalidSentenceId(s.to_owned());
        let (p, n) = s.split_once('.').ok_or_else(bad)?;
        let paragraph = parse_positive(p).ok_or_else(bad)?;
        let sentence = parse_positive(n).ok_or_else(bad)?;
        Ok(Self { paragraph, sentence })
    }
}

/// Opaque unique document identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DocId(String);

impl DocId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Borrow<str> for DocId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl From<&str> for DocId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl From<String> for DocId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

/// SHA-256 over a document's sentence texts and paragraph structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContentHash([u8; 32]);

impl ContentHash {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub id: SentenceId,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Paragraph {
    pub id: u32,
    pub sentences: Vec<Sentence>,
}

impl Paragraph {
    /// Numbers `texts` as sentences `id.1 .. id.n`.
    pub fn from_texts(id: u32, texts: impl IntoIterator<Item = String>) -> Self {
        let sentences = texts
            .into_iter()
            .zip(1u32..)
            .map(|(text, n)| Sentence { id: SentenceId { paragraph: id, sentence: n }, text })
            .collect();
        Self { id, sentences }
    }
}

/// Descriptive fields of a document; not part of its content identity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentMeta {
    pub doc_id: DocId,
    pub url: String,
    pub lang: LanguageTag,
    pub collection: String,
}

/// The full text of one URL snapshot as ordered paragraphs of ID'd sentences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuredDocument {
    meta: DocumentMeta,
    paragraphs: Vec<Paragraph>,
    sentence_count: usize,
}

fn forbidden_char(c: char) -> bool {
    // Line breaks split paragraphs; the rest cannot be represented in XML 1.0.
    matches!(c, '\n' | '\r' | '\u{FFFE}' | '\u{FFFF}') || (c < ' ' && c != '\t')
}

impl StructuredDocument {
    pub fn new(meta: DocumentMeta, paragraphs: Vec<Paragraph>) -> Result<Self, ModelError> {
        let mut sentence_count = 0;
        for (paragraph, expected) in paragraphs.iter().zip(1u32..) {
            if paragraph.id != expected {
                return Err(ModelError::ParagraphOutOfSequence { expected, found: paragraph.id });
            }
            if paragraph.sentences.is_empty() {
                return Err(ModelError::EmptyParagraph(paragraph.id));
            }
            for (sentence, n) in paragraph.sentences.iter().zip(1u32..) {
                let expected = SentenceId { paragraph: paragraph.id, sentence: n };
                if sentence.id != expected {
                    return Err(ModelError::SentenceOutOfSequence { expected, found: sentence.id });
                }
                if sentence.text.trim().is_empty() {
                    return Err(ModelError::EmptySentence(sentence.id));
                }
                if let Some(ch) = sentence.text.chars().find(|&c| forbidden_char(c)) {
                    return Err(ModelError::ForbiddenCharacter { id: sentence.id, ch });
                }
            }
            sentence_count += paragraph.sentences.len();
        }
        if sentence_count == 0 {
            return Err(ModelError::EmptyDocument(meta.doc_id.0));
        }
        Ok(Self { meta, paragraphs, sentence_count })
    }

    pub fn meta(&self) -> &DocumentMeta {
        &self.meta
    }

    pub fn doc_id(&self) -> &DocId {
        &self.meta.doc_id
    }

    pub fn url(&self) -> &str {
        &self.meta.url
    }

    pub fn lang(&self) -> &LanguageTag {
        &self.meta.lang
    }

    pub fn collection(&self) -> &str {
        &self.meta.collection
    }

    pub fn paragraphs(&self) -> &[Paragraph] {
        &self.paragraphs
    }

    /// `|D|`, the number of sentences in the document.
    pub fn sentence_count(&self) -> usize {
        self.sentence_count
    }

    pub fn sentences(&self) -> impl Iterator<Item = &Sentence> {
        self.paragraphs.iter().flat_map(|p| p.sentences.iter())
    }

    pub fn sentence(&self, id: SentenceId) -> Option<&str> {
        let paragraph = self.paragraphs.get(id.paragraph as usize - 1)?;
        paragraph.sentences.get(id.sentence as usize - 1).map(|s| s.text.as_str())
    }

    pub fn contains(&self, id: SentenceId) -> bool {
        self.sentence(id).is_some()
    }

    /// Paragraphs joined by newlines, sentences within a paragraph by spaces.
    pub fn text(&self) -> String {
        let mut out = String::new();
        for (i, paragraph) in self.paragraphs.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            for (j, sentence) in paragraph.sentences.iter().enumerate() {
                if j > 0 {
                    out.push(' ');
                }
                out.push_str(&sentence.text);
            }
        }
        out
    }

    /// Hash of the exact sentence texts including paragraph and sentence
    /// boundaries. Metadata is excluded.
    pub fn content_hash(&self) -> ContentHash {
        let mut hasher = Sha256::new();
        for paragraph in &self.paragraphs {
            hasher.update((paragraph.sentences.len() as u64).to_le_bytes());
            for sentence in &paragraph.sentences {
                hasher.update((sentence.text.len() as u64).to_le_bytes());
                hasher.update(sentence.text.as_bytes());
            }
        }
        ContentHash(hasher.finalize().into())
    }

    /// Document identity: two snapshots of a URL are the same document iff
    /// their content is byte-identical.
    pub fn identity(&self) -> (&str, ContentHash) {
        (&self.meta.url, self.content_hash())
    }

    /// Joins the texts of `ids` with single spaces; `None` if any id is missing.
    pub fn join_sentences(&self, ids: &[SentenceId]) -> Option<String> {
        let mut out = String::new();
        for (i, &id) in ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(self.sentence(id)?);
        }
        Some(out)
    }
}

/// Quality scores attached to a link by upstream scorers. Absent means the
/// scorer did not run, which is distinct from a score of 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScoreSet {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleualign: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bicleaner: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bifixer: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScoreField {
    Bleualign,
    Bicleaner,
    Bifixer,
}

impl ScoreField {
    pub const ALL: [ScoreField; 3] = [ScoreField::Bleualign, ScoreField::Bicleaner, ScoreField::Bifixer];

    pub fn name(self) -> &'static str {
        match self {
            ScoreField::Bleualign => "bleualign",
            ScoreField::Bicleaner => "bicleaner",
            ScoreField::Bifixer => "bifixer",
        }
    }
}

impl AlignmentScoreSet {
    pub fn new(bleualign: Option<f64>, bicleaner: Option<f64>, bifixer: Option<f64>) -> Result<Self, ModelError> {
        let set = Self { bleualign, bicleaner, bifixer };
        set.validate()?;
        Ok(set)
    }

    pub fn get(&self, field: ScoreField) -> Option<f64> {
        match field {
            ScoreField::Bleualign => self.bleualign,
            ScoreField::Bicleaner => self.bicleaner,
            ScoreField::Bifixer => self.bifixer,
        }
    }

    pub fn set(&mut self, field: ScoreField, value: Option<f64>) {
        match field {
            ScoreField::Bleualign => self.bleualign = value,
            ScoreField::Bicleaner => self.bicleaner = value,
            ScoreField::Bifixer => self.bifixer = value,
        }
    }

    pub fn is_empty(&self) -> bool {
        ScoreField::ALL.iter().all(|&f| self.get(f).is_none())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for field in ScoreField::ALL {
            if let Some(value) = self.get(field) {
                if !(0.0..=1.0).contains(&value) {
                    return Err(ModelError::ScoreOutOfRange { field: field.name(), value });
                }
            }
        }
        Ok(())
    }
}

/// One aligned group of source sentences and one group of target sentences.
/// Counts as a single alignment whatever its arity.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentLink {
    src: Vec<SentenceId>,
    tgt: Vec<SentenceId>,
    scores: AlignmentScoreSet,
}

fn check_side(ids: &[SentenceId], side: Side) -> Result<(), ModelError> {
    if ids.is_empty() {
        return Err(ModelError::EmptyLinkSide(side));
    }
    if let Some(w) = ids.windows(2).find(|w| w[0] >= w[1]) {
        return Err(ModelError::UnsortedLinkSide { side, id: w[1] });
    }
    Ok(())
}

impl AlignmentLink {
    pub fn new(src: Vec<SentenceId>, tgt: Vec<SentenceId>, scores: AlignmentScoreSet) -> Result<Self, ModelError> {
        check_side(&src, Side::Source)?;
        check_side(&tgt, Side::Target)?;
        scores.validate()?;
        Ok(Self { src, tgt, scores })
    }

    pub fn src(&self) -> &[SentenceId] {
        &self.src
    }

    pub fn tgt(&self) -> &[SentenceId] {
        &self.tgt
    }

    pub fn side(&self, side: Side) -> &[SentenceId] {
        match side {
            Side::Source => &self.src,
            Side::Target => &self.tgt,
        }
    }

    pub fn scores(&self) -> &AlignmentScoreSet {
        &self.scores
    }

    /// Position of the link in source text order.
    pub fn source_position(&self) -> SentenceId {
        self.src[0]
    }

    pub fn swapped(&self) -> Self {
        Self { src: self.tgt.clone(), tgt: self.src.clone(), scores: self.scores }
    }
}

/// Two documents plus a verified, side-disjoint set of links between them.
///
/// Links are kept in source text order. Density and per-field score means
/// are computed once at construction.
#[derive(Debug, Clone)]
pub struct DocPairAlignment {
    src: Arc<StructuredDocument>,
    tgt: Arc<StructuredDocument>,
    links: Vec<AlignmentLink>,
    density: f64,
    avg_scores: AlignmentScoreSet,
}

impl PartialEq for DocPairAlignment {
    fn eq(&self, other: &Self) -> bool {
        self.src == other.src && self.tgt == other.tgt && self.links == other.links
    }
}

impl DocPairAlignment {
    /// Fails if a link references a missing sentence or two links share a
    /// sentence on the same side. Use [`crate::alignment::verify_links`] to
    /// filter a raw link set first.
    pub fn new(
        src: Arc<StructuredDocument>,
        tgt: Arc<StructuredDocument>,
        mut links: Vec<AlignmentLink>,
    ) -> Result<Self, ModelError> {
        for (side, doc) in [(Side::Source, &src), (Side::Target, &tgt)] {
            let mut seen = std::collections::HashSet::new();
            for link in &links {
                for &id in link.side(side) {
                    if !doc.contains(id) {
                        return Err(ModelError::UnresolvedSentence { side, id, doc: doc.doc_id().0.clone() });
                    }
                    if !seen.insert(id) {
                        return Err(ModelError::OverlappingLinks { side, id });
                    }
                }
            }
        }
        links.sort_by_key(AlignmentLink::source_position);
        let density = alignment::density_ratio(links.len(), src.sentence_count(), tgt.sentence_count())
            .expect("documents always hold at least one sentence");
        let avg_scores = alignment::pair_score_summary(&links);
        Ok(Self { src, tgt, links, density, avg_scores })
    }

    pub fn src(&self) -> &Arc<StructuredDocument> {
        &self.src
    }

    pub fn tgt(&self) -> &Arc<StructuredDocument> {
        &self.tgt
    }

    pub fn doc(&self, side: Side) -> &Arc<StructuredDocument> {
        match side {
            Side::Source => &self.src,
            Side::Target => &self.tgt,
        }
    }

    pub fn links(&self) -> &[AlignmentLink] {
        &self.links
    }

    /// Cached alignment density.
    pub fn density(&self) -> f64 {
        self.density
    }

    pub fn avg_scores(&self) -> &AlignmentScoreSet {
        &self.avg_scores
    }

    pub fn pair_id(&self) -> String {
        format!("{}|{}", self.src.doc_id(), self.tgt.doc_id())
    }

    /// The side holding the English document, preferring the target when
    /// both are English.
    pub fn english_side(&self) -> Option<Side> {
        if self.tgt.lang().is_english() {
            Some(Side::Target)
        } else if self.src.lang().is_english() {
            Some(Side::Source)
        } else {
            None
        }
    }

    /// `xx-en` for English-centric pairs, `src-tgt` otherwise.
    pub fn label(&self) -> String {
        match self.english_side() {
            Some(Side::Target) => format!("{}-en", self.src.lang()),
            Some(Side::Source) => format!("{}-en", self.tgt.lang()),
            None => format!("{}-{}", self.src.lang(), self.tgt.lang()),
        }
    }

    pub fn swapped(&self) -> Self {
        let mut links: Vec<_> = self.links.iter().map(AlignmentLink::swapped).collect();
        links.sort_by_key(AlignmentLink::source_position);
        Self { src: self.tgt.clone(), tgt: self.src.clone(), links, density: self.density, avg_scores: self.avg_scores }
    }

    /// Space-joined text of one side of a link.
    pub fn link_text(&self, link: &AlignmentLink, side: Side) -> String {
        self.doc(side).join_sentences(link.side(side)).expect("links are verified against their documents")
    }
}

/// Documents indexed by id.
#[derive(Debug, Clone, Default)]
pub struct DocStore {
    docs: HashMap<DocId, Arc<StructuredDocument>>,
}

impl DocStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the previously stored document when the id was already taken.
    pub fn insert(&mut self, doc: Arc<StructuredDocument>) -> Option<Arc<StructuredDocument>> {
        self.docs.insert(doc.doc_id().clone(), doc)
    }

    pub fn get(&self, id: &str) -> Option<&Arc<StructuredDocument>> {
        self.docs.get(id)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Documents sorted by id.
    pub fn sorted(&self) -> Vec<Arc<StructuredDocument>> {
        let ordered: BTreeMap<_, _> = self.docs.iter().collect();
        ordered.into_values().cloned().collect()
    }
}

impl FromIterator<StructuredDocument> for DocStore {
    fn from_iter<I: IntoIterator<Item = StructuredDocument>>(iter: I) -> Self {
        let mut store = Self::new();
        for doc in iter {
            store.insert(Arc::new(doc));
        }
        store
    }
}

impl FromIterator<Arc<StructuredDocument>> for DocStore {
    fn from_iter<I: IntoIterator<Item = Arc<StructuredDocument>>>(iter: I) -> Self {
        let mut store = Self::new();
        for doc in iter {
            store.insert(doc);
        }
        store
    }
}
