//! Pairs two non-English documents that align to the same English document.
//!
//! Document pairing follows the English pivot directly. Sentence links can
//! optionally be composed through the shared English sentences; those
//! links are marked as composed when written out.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use thiserror::Error;

use crate::model::{
    AlignmentLink, AlignmentScoreSet, ContentHash, DocId, DocPairAlignment, ModelError, ScoreField, Side,
    StructuredDocument,
};
use crate::xml::LinkGroup;

#[derive(Debug, Error)]
pub enum PivotError {
    #[error("pair {0} has no English side")]
    NoEnglishSide(String),
    #[error(
        "English documents {first} and {second} have the same URL and content; \
         run dedup over every collection before pivoting"
    )]
    NonCanonicalEnglish { first: DocId, second: DocId },
    #[error("composed links for {pair} do not resolve: {source}")]
    Compose {
        pair: String,
        #[source]
        source: ModelError,
    },
}

/// One pivoted document pair: `xx` and `yy` both align to `pivot`.
#[derive(Debug, Clone)]
pub struct PivotPair {
    pub xx: Arc<StructuredDocument>,
    pub yy: Arc<StructuredDocument>,
    pub pivot: Arc<StructuredDocument>,
    /// Index of the English–xx pair in the first input.
    pub xx_pair: usize,
    /// Index of the English–yy pair in the second input.
    pub yy_pair: usize,
}

impl PivotPair {
    pub fn ids(&self) -> (&DocId, &DocId, &DocId) {
        (self.xx.doc_id(), self.yy.doc_id(), self.pivot.doc_id())
    }
}

struct Edge {
    english: Arc<StructuredDocument>,
    other: Arc<StructuredDocument>,
    index: usize,
}

fn edges(pairs: &[DocPairAlignment]) -> Result<BTreeMap<DocId, BTreeMap<DocId, Edge>>, PivotError> {
    let mut by_english: BTreeMap<DocId, BTreeMap<DocId, Edge>> = BTreeMap::new();
    for (index, pair) in pairs.iter().enumerate() {
        let side = pair.english_side().ok_or_else(|| PivotError::NoEnglishSide(pair.pair_id()))?;
        let english = pair.doc(side).clone();
        let other = pair.doc(other_side(side)).clone();
        by_english.entry(english.doc_id().clone()).or_default().entry(other.doc_id().clone()).or_insert(Edge {
            english,
            other,
            index,
        });
    }
    Ok(by_english)
}

fn other_side(side: Side) -> Side {
    match side {
        Side::Source => Side::Target,
        Side::Target => Side::Source,
    }
}

fn check_canonical<'a>(docs: impl Iterator<Item = &'a Arc<StructuredDocument>>) -> Result<(), PivotError> {
    let mut seen: HashMap<(String, ContentHash), DocId> = HashMap::new();
    for doc in docs {
        let (url, hash) = doc.identity();
        match seen.get(&(url.to_owned(), hash)) {
            Some(first) if first != doc.doc_id() => {
                let (first, second) = if first < doc.doc_id() {
                    (first.clone(), doc.doc_id().clone())
                } else {
                    (doc.doc_id().clone(), first.clone())
                };
                return Err(PivotError::NonCanonicalEnglish { first, second });
            }
            Some(_) => {}
            None => {
                seen.insert((url.to_owned(), hash), doc.doc_id().clone());
            }
        }
    }
    Ok(())
}

/// One entry per `(X, Y, E)` with `(E, X)` in `en_xx` and `(E, Y)` in
/// `en_yy`, ordered by E, then X, then Y. Repeated `(E, X)` edges count once.
pub fn pivot_doc_pairs(en_xx: &[DocPairAlignment], en_yy: &[DocPairAlignment]) -> Result<Vec<PivotPair>, PivotError> {
    let xx = edges(en_xx)?;
    let yy = edges(en_yy)?;
    let english = xx.values().chain(yy.values()).filter_map(|m| m.values().next()).map(|e| &e.english);
    check_canonical(english)?;
    let mut out = Vec::new();
    for (e, xs) in &xx {
        let Some(ys) = yy.get(e) else { continue };
        for x in xs.values() {
            for y in ys.values() {
                out.push(PivotPair {
                    xx: x.other.clone(),
                    yy: y.other.clone(),
                    pivot: x.english.clone(),
                    xx_pair: x.index,
                    yy_pair: y.index,
                });
            }
        }
    }
    Ok(out)
}

fn min_scores(a: &AlignmentScoreSet, b: &AlignmentScoreSet) -> AlignmentScoreSet {
    let mut out = AlignmentScoreSet::default();
    for field in ScoreField::ALL {
        if let (Some(x), Some(y)) = (a.get(field), b.get(field)) {
            out.set(field, Some(x.min(y)));
        }
    }
    out
}

/// Composes two link sets that share an English document on their source
/// side. Every pair of links sharing at least one English sentence gives a
/// link from the first set's target ids to the second set's target ids,
/// scored with the per-field minimum. Links reusing an already claimed
/// sentence are dropped, in `(first, second)` input order.
pub fn compose_sentence_links(links_en_xx: &[AlignmentLink], links_en_yy: &[AlignmentLink]) -> Vec<AlignmentLink> {
    let mut by_english: HashMap<_, Vec<usize>> = HashMap::new();
    for (j, link) in links_en_yy.iter().enumerate() {
        for &id in link.src() {
            by_english.entry(id).or_default().push(j);
        }
    }
    let mut claimed_x = HashSet::new();
    let mut claimed_y = HashSet::new();
    let mut out = Vec::new();
    for l1 in links_en_xx {
        let partners: BTreeSet<usize> =
            l1.src().iter().filter_map(|id| by_english.get(id)).flatten().copied().collect();
        for j in partners {
            let l2 = &links_en_yy[j];
            if l1.tgt().iter().any(|id| claimed_x.contains(id)) || l2.tgt().iter().any(|id| claimed_y.contains(id)) {
                continue;
            }
            claimed_x.extend(l1.tgt().iter().copied());
            claimed_y.extend(l2.tgt().iter().copied());
            let link = AlignmentLink::new(l1.tgt().to_vec(), l2.tgt().to_vec(), min_scores(l1.scores(), l2.scores()))
                .expect("legs are valid links with valid scores");
            out.push(link);
        }
    }
    out
}

fn english_on_source(pair: &DocPairAlignment) -> Vec<AlignmentLink> {
    match pair.english_side() {
        Some(Side::Target) => pair.links().iter().map(AlignmentLink::swapped).collect(),
        _ => pair.links().to_vec(),
    }
}

/// Builds the xx–yy pair for `pivot` with composed sentence links.
pub fn pivot_alignment(
    pivot: &PivotPair,
    en_xx: &[DocPairAlignment],
    en_yy: &[DocPairAlignment],
) -> Result<DocPairAlignment, PivotError> {
    let links =
        compose_sentence_links(&english_on_source(&en_xx[pivot.xx_pair]), &english_on_source(&en_yy[pivot.yy_pair]));
    DocPairAlignment::new(pivot.xx.clone(), pivot.yy.clone(), links)
        .map_err(|source| PivotError::Compose { pair: format!("{}|{}", pivot.xx.doc_id(), pivot.yy.doc_id()), source })
}

/// cesAlign group for a pivoted pair. With `links` absent only the
/// document pairing is recorded.
pub fn pivot_link_group(pivot: &PivotPair, links: Option<Vec<AlignmentLink>>) -> LinkGroup {
    let composed = links.is_some();
    let mut group = LinkGroup::new(pivot.xx.doc_id().clone(), pivot.yy.doc_id().clone(), links.unwrap_or_default());
    group.pivot = Some(pivot.pivot.doc_id().clone());
    group.composed = composed;
    group
}
