//! Exact content deduplication.
//!
//! Two documents are the same when they share a URL and their content is
//! byte-identical (including paragraph and sentence boundaries). Near
//! duplicates and cross-URL copies are deliberately kept.
//!
//! Work happens in two passes so the document bodies never need to be held
//! together with the hash table: [`plan_dedup`] groups `(id, url, hash)`
//! keys into a [`RemapTable`], then the documents are filtered against it.
//! Among identical documents the one with the smallest doc id is canonical.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use log::warn;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{ContentHash, DocId, DocPairAlignment, DocStore, ModelError, StructuredDocument};

#[derive(Debug, Error)]
pub enum DedupError {
    #[error("document {doc} has language {found}, expected {expected}")]
    LanguageMismatch { doc: DocId, found: String, expected: String },
    #[error("document {doc} in collection {collection:?} is not English ({lang})")]
    NotEnglish { doc: DocId, collection: String, lang: String },
    #[error("document id {0} is used by two documents with different content")]
    IdCollision(DocId),
    #[error("dangling document reference {0}: not in the remap table and not a known canonical document")]
    DanglingReference(DocId),
    #[error("pair {pair} no longer resolves after remapping: {source}")]
    Unresolved {
        pair: String,
        #[source]
        source: ModelError,
    },
    #[error("remap table line {line}: {message}")]
    Table { line: usize, message: String },
}

/// What the planning pass needs to know about a document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocKey {
    pub doc_id: DocId,
    pub url: String,
    pub content: ContentHash,
}

impl DocKey {
    pub fn of(doc: &StructuredDocument) -> Self {
        Self { doc_id: doc.doc_id().clone(), url: doc.url().to_owned(), content: doc.content_hash() }
    }
}

/// Maps every dropped document id to its canonical representative.
///
/// Canonical ids resolve to themselves, so applying the table twice is the
/// same as applying it once.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RemapTable {
    dropped: BTreeMap<DocId, DocId>,
    canonical: BTreeSet<DocId>,
}

impl RemapTable {
    /// A table in which every id is its own canonical.
    pub fn identity<I: IntoIterator<Item = DocId>>(ids: I) -> Self {
        Self { dropped: BTreeMap::new(), canonical: ids.into_iter().collect() }
    }

    pub fn resolve(&self, id: &str) -> Option<&DocId> {
        self.dropped.get(id).or_else(|| self.canonical.get(id))
    }

    pub fn is_canonical(&self, id: &str) -> bool {
        self.canonical.contains(id)
    }

    pub fn canonical_ids(&self) -> impl Iterator<Item = &DocId> {
        self.canonical.iter()
    }

    /// `(dropped, canonical)` entries in id order.
    pub fn dropped(&self) -> impl Iterator<Item = (&DocId, &DocId)> {
        self.dropped.iter()
    }

    pub fn dropped_count(&self) -> usize {
        self.dropped.len()
    }

    pub fn canonical_count(&self) -> usize {
        self.canonical.len()
    }

    /// Follows `self` and then `next`. Ids canonical under `self` but dropped
    /// by `next` end up pointing at `next`'s canonical.
    pub fn then(&self, next: &RemapTable) -> RemapTable {
        let mut out = next.clone();
        for (old, mid) in &self.dropped {
            let target = next.resolve(mid.as_str()).unwrap_or(mid).clone();
            out.canonical.remove(old);
            out.dropped.insert(old.clone(), target);
        }
        for id in &self.canonical {
            if next.resolve(id.as_str()).is_none() {
                out.canonical.insert(id.clone());
            }
        }
        out
    }

    /// Adds the entries of a table covering a disjoint set of ids.
    pub fn absorb(&mut self, other: RemapTable) -> Result<(), DedupError> {
        if let Some(id) =
            other.canonical.iter().chain(other.dropped.keys()).find(|id| self.resolve(id.as_str()).is_some())
        {
            return Err(DedupError::IdCollision(id.clone()));
        }
        self.canonical.extend(other.canonical);
        self.dropped.extend(other.dropped);
        Ok(())
    }

    /// One `old_id\tcanonical_id` row per known id; canonical ids map to
    /// themselves. Rows are sorted by old id.
    pub fn to_tsv(&self) -> String {
        let mut rows: BTreeMap<&DocId, &DocId> = self.dropped.iter().collect();
        rows.extend(self.canonical.iter().map(|id| (id, id)));
        let mut out = String::new();
        for (old, canonical) in rows {
            let _ = writeln!(out, "{old}\t{canonical}");
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, DedupError> {
        let mut table = RemapTable::default();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (old, canonical) = line.split_once('\t').filter(|(_, c)| !c.contains('\t')).ok_or_else(|| {
                DedupError::Table { line: i + 1, message: "expected two tab-separated columns".into() }
            })?;
            if old == canonical {
                table.canonical.insert(DocId::from(old));
            } else {
                table.dropped.insert(DocId::from(old), DocId::from(canonical));
            }
        }
        for (old, canonical) in &table.dropped {
            if !table.canonical.contains(canonical) {
                return Err(DedupError::Table {
                    line: 0,
                    message: format!("{old} maps to {canonical}, which is not canonical"),
                });
            }
        }
        Ok(table)
    }
}

/// Groups keys by `(url, content)`; the smallest id of each group is
/// canonical. An id seen twice with the same key counts once.
pub fn plan_dedup<I: IntoIterator<Item = DocKey>>(keys: I) -> Result<RemapTable, DedupError> {
    let mut by_id: BTreeMap<DocId, (String, ContentHash)> = BTreeMap::new();
    for key in keys {
        match by_id.get(&key.doc_id) {
            Some(seen) if *seen != (key.url.clone(), key.content) => return Err(DedupError::IdCollision(key.doc_id)),
            Some(_) => {}
            None => {
                by_id.insert(key.doc_id, (key.url, key.content));
            }
        }
    }
    let mut first: HashMap<(String, ContentHash), DocId> = HashMap::new();
    let mut table = RemapTable::default();
    for (id, identity) in by_id {
        match first.get(&identity) {
            Some(canonical) => {
                table.dropped.insert(id, canonical.clone());
            }
            None => {
                table.canonical.insert(id.clone());
                first.insert(identity, id);
            }
        }
    }
    Ok(table)
}

fn keep_canonical(docs: Vec<StructuredDocument>, table: &RemapTable) -> Vec<StructuredDocument> {
    let mut kept: BTreeMap<DocId, StructuredDocument> = BTreeMap::new();
    for doc in docs {
        if table.is_canonical(doc.doc_id().as_str()) {
            kept.entry(doc.doc_id().clone()).or_insert(doc);
        }
    }
    kept.into_values().collect()
}

/// Collapses byte-identical snapshots of the same URL within one language.
/// Returns the kept documents sorted by id.
pub fn dedup_by_url(docs: Vec<StructuredDocument>) -> Result<(Vec<StructuredDocument>, RemapTable), DedupError> {
    if let Some(first) = docs.first() {
        let expected = first.lang().clone();
        if let Some(other) = docs.iter().find(|d| *d.lang() != expected) {
            return Err(DedupError::LanguageMismatch {
                doc: other.doc_id().clone(),
                found: other.lang().to_string(),
                expected: expected.to_string(),
            });
        }
    }
    let keys: Vec<DocKey> = docs.par_iter().map(DocKey::of).collect();
    let table = plan_dedup(keys)?;
    Ok((keep_canonical(docs, &table), table))
}

/// Merges the English sides of several language pairs into one collection
/// in which each `(url, content)` appears once.
pub fn consolidate_english(
    collections: Vec<(String, Vec<StructuredDocument>)>,
) -> Result<(Vec<StructuredDocument>, RemapTable), DedupError> {
    for (label, docs) in &collections {
        if let Some(doc) = docs.iter().find(|d| !d.lang().is_english()) {
            return Err(DedupError::NotEnglish {
                doc: doc.doc_id().clone(),
                collection: label.clone(),
                lang: doc.lang().to_string(),
            });
        }
    }
    let docs: Vec<StructuredDocument> = collections.into_iter().flat_map(|(_, docs)| docs).collect();
    let keys: Vec<DocKey> = docs.par_iter().map(DocKey::of).collect();
    let table = plan_dedup(keys)?;
    Ok((keep_canonical(docs, &table), table))
}

/// Deduplicates a mixed-language corpus: each non-English language by URL
/// and content, and English across all collections at once. Returns the
/// kept documents sorted by id.
pub fn dedup_corpus(docs: Vec<StructuredDocument>) -> Result<(Vec<StructuredDocument>, RemapTable), DedupError> {
    let mut english: BTreeMap<String, Vec<StructuredDocument>> = BTreeMap::new();
    let mut others: BTreeMap<String, Vec<StructuredDocument>> = BTreeMap::new();
    for doc in docs {
        if doc.lang().is_english() {
            english.entry(doc.collection().to_owned()).or_default().push(doc);
        } else {
            others.entry(doc.lang().to_string()).or_default().push(doc);
        }
    }
    let (mut kept, mut table) = consolidate_english(english.into_iter().collect())?;
    for group in others.into_values() {
        let (group_kept, group_table) = dedup_by_url(group)?;
        table.absorb(group_table)?;
        kept.extend(group_kept);
    }
    kept.sort_by(|a, b| a.doc_id().cmp(b.doc_id()));
    Ok((kept, table))
}

/// Result of [`remap_alignments`].
#[derive(Debug, Clone)]
pub struct RemapOutcome {
    pub pairs: Vec<DocPairAlignment>,
    /// Pairs dropped because both sides collapsed onto the same document.
    pub self_pairs_dropped: usize,
}

/// Points every pair at canonical documents. `canonical` must hold every
/// canonical document referenced through `table`.
pub fn remap_alignments(
    pairs: Vec<DocPairAlignment>,
    table: &RemapTable,
    canonical: &DocStore,
) -> Result<RemapOutcome, DedupError> {
    let lookup = |doc: &Arc<StructuredDocument>| -> Result<Arc<StructuredDocument>, DedupError> {
        let id = doc.doc_id();
        let target = table.resolve(id.as_str()).ok_or_else(|| DedupError::DanglingReference(id.clone()))?;
        if target == id {
            return Ok(canonical.get(target.as_str()).cloned().unwrap_or_else(|| doc.clone()));
        }
        canonical.get(target.as_str()).cloned().ok_or_else(|| DedupError::DanglingReference(target.clone()))
    };
    let mut out = Vec::with_capacity(pairs.len());
    let mut self_pairs_dropped = 0;
    for pair in pairs {
        let src = lookup(pair.src())?;
        let tgt = lookup(pair.tgt())?;
        if src.doc_id() == tgt.doc_id() {
            self_pairs_dropped += 1;
            continue;
        }
        if Arc::ptr_eq(&src, pair.src()) && Arc::ptr_eq(&tgt, pair.tgt()) {
            out.push(pair);
            continue;
        }
        let id = pair.pair_id();
        let remapped = DocPairAlignment::new(src, tgt, pair.links().to_vec())
            .map_err(|source| DedupError::Unresolved { pair: id, source })?;
        out.push(remapped);
    }
    if self_pairs_dropped > 0 {
        warn!("dropped {self_pairs_dropped} pairs whose two sides remapped to the same document");
    }
    Ok(RemapOutcome { pairs: out, self_pairs_dropped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AlignmentLink, DocumentMeta, LanguageTag, Paragraph};

    fn doc(id: &str, url: &str, lang: &str, text: &str) -> StructuredDocument {
        let meta = DocumentMeta {
            doc_id: DocId::new(id),
            url: url.into(),
            lang: LanguageTag::new(lang).unwrap(),
            collection: "c".into(),
        };
        StructuredDocument::new(meta, vec![Paragraph::from_texts(1, [text.to_string()])]).unwrap()
    }

    fn ids(docs: &[StructuredDocument]) -> Vec<&str> {
        docs.iter().map(|d| d.doc_id().as_str()).collect()
    }

    #[test]
    fn identical_snapshots_collapse() {
        let (kept, table) = dedup_by_url(vec![doc("b", "u", "eu", "Kaixo."), doc("a", "u", "eu", "Kaixo.")]).unwrap();
        assert_eq!(ids(&kept), ["a"]);
        assert_eq!(table.resolve("b").map(DocId::as_str), Some("a"));
        assert_eq!(table.resolve("a").map(DocId::as_str), Some("a"));
        assert_eq!(table.dropped_count(), 1);
    }

    #[test]
    fn near_duplicates_and_cross_url_copies_survive() {
        let (kept, table) = dedup_by_url(vec![doc("a", "u", "eu", "Kaixo."), doc("b", "u", "eu", "Kaixo!")]).unwrap();
        assert_eq!(kept.len(), 2);
        assert_eq!(table.dropped_count(), 0);
        let (kept, _) = dedup_by_url(vec![doc("a", "u1", "eu", "Kaixo."), doc("b", "u2", "eu", "Kaixo.")]).unwrap();
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn empty_and_mixed_inputs() {
        let (kept, table) = dedup_by_url(vec![]).unwrap();
        assert!(kept.is_empty());
        assert_eq!(table, RemapTable::default());
        assert!(matches!(
            dedup_by_url(vec![doc("a", "u", "eu", "x"), doc("b", "u", "ca", "x")]),
            Err(DedupError::LanguageMismatch { .. })
        ));
        assert!(matches!(
            dedup_by_url(vec![doc("a", "u", "eu", "x"), doc("a", "u", "eu", "y")]),
            Err(DedupError::IdCollision(_))
        ));
    }

    #[test]
    fn english_consolidation_across_pairs() {
        let eu = vec![doc("en-eu-1", "u", "en", "Hello."), doc("en-eu-2", "v", "en", "Other.")];
        let ca = vec![doc("en-ca-1", "u", "en", "Hello.")];
        let (kept, table) = consolidate_english(vec![("eu-en".into(), eu.clone()), ("ca-en".into(), ca)]).unwrap();
        assert_eq!(ids(&kept), ["en-ca-1", "en-eu-2"]);
        assert_eq!(table.resolve("en-eu-1").map(DocId::as_str), Some("en-ca-1"));

        let (single, single_table) = consolidate_english(vec![("eu-en".into(), eu.clone())]).unwrap();
        let (by_url, by_url_table) = dedup_by_url(eu).unwrap();
        assert_eq!(single, by_url);
        assert_eq!(single_table, by_url_table);

        let bad = vec![("eu-en".to_string(), vec![doc("x", "u", "eu", "Kaixo.")])];
        assert!(matches!(consolidate_english(bad), Err(DedupError::NotEnglish { .. })));
    }

    #[test]
    fn disjoint_collections_concatenate() {
        let a = vec![doc("a", "u1", "en", "One.")];
        let b = vec![doc("b", "u2", "en", "Two.")];
        let (kept, table) = consolidate_english(vec![("x".into(), a), ("y".into(), b)]).unwrap();
        assert_eq!(ids(&kept), ["a", "b"]);
        assert_eq!(table.dropped_count(), 0);
    }

    #[test]
    fn idempotent() {
        let docs = vec![doc("a", "u", "en", "x"), doc("b", "u", "en", "x"), doc("c", "u", "en", "y")];
        let (kept, _) = dedup_by_url(docs).unwrap();
        let (again, table) = dedup_by_url(kept.clone()).unwrap();
        assert_eq!(kept, again);
        assert_eq!(table.dropped_count(), 0);
    }

    #[test]
    fn tsv_round_trip_and_composition() {
        let (_, table) =
            dedup_by_url(vec![doc("a", "u", "en", "x"), doc("b", "u", "en", "x"), doc("c", "v", "en", "x")]).unwrap();
        assert_eq!(table.to_tsv(), "a\ta\nb\ta\nc\tc\n");
        assert_eq!(RemapTable::from_tsv(&table.to_tsv()).unwrap(), table);
        assert!(RemapTable::from_tsv("a\tb\n").is_err());
        assert_eq!(table.then(&RemapTable::identity(table.canonical_ids().cloned())), table);
        // Second table folds c into a.
        let mut next = RemapTable::identity([DocId::from("a")]);
        next.dropped.insert("c".into(), "a".into());
        next.canonical.remove("c");
        let composed = table.then(&next);
        assert_eq!(composed.resolve("b").map(DocId::as_str), Some("a"));
        assert_eq!(composed.resolve("c").map(DocId::as_str), Some("a"));
        assert!(!composed.is_canonical("c"));
    }

    #[test]
    fn mixed_corpus() {
        let docs = vec![
            doc("e2", "u", "en", "Hello."),
            doc("x1", "u", "eu", "Kaixo."),
            doc("e1", "u", "en", "Hello."),
            doc("x2", "u", "eu", "Kaixo."),
            doc("c1", "u", "ca", "Kaixo."),
        ];
        let (kept, table) = dedup_corpus(docs).unwrap();
        assert_eq!(ids(&kept), ["c1", "e1", "x1"]);
        assert_eq!(table.dropped_count(), 2);
        assert_eq!(table.canonical_count(), 3);
        let mut other = RemapTable::identity([DocId::from("e1")]);
        assert!(matches!(other.absorb(table), Err(DedupError::IdCollision(_))));
    }

    fn pair(src: &StructuredDocument, tgt: &StructuredDocument) -> DocPairAlignment {
        let link =
            AlignmentLink::new(vec!["1.1".parse().unwrap()], vec!["1.1".parse().unwrap()], Default::default()).unwrap();
        DocPairAlignment::new(Arc::new(src.clone()), Arc::new(tgt.clone()), vec![link]).unwrap()
    }

    #[test]
    fn remap_points_pairs_at_canonical_docs() {
        let eu = doc("eu1", "w", "eu", "Kaixo.");
        let en_a = doc("en-a", "u", "en", "Hello.");
        let en_b = doc("en-b", "u", "en", "Hello.");
        let (kept, table) = consolidate_english(vec![("eu-en".into(), vec![en_b.clone(), en_a.clone()])]).unwrap();
        let mut store: DocStore = kept.into_iter().collect();
        store.insert(Arc::new(eu.clone()));
        let table = RemapTable::identity([DocId::from("eu1")]).then(&table);
        let table = {
            let mut t = table;
            t.canonical.insert("eu1".into());
            t
        };
        let out = remap_alignments(vec![pair(&eu, &en_b)], &table, &store).unwrap();
        assert_eq!(out.pairs.len(), 1);
        assert_eq!(out.pairs[0].tgt().doc_id().as_str(), "en-a");
        assert_eq!(out.pairs[0].links(), pair(&eu, &en_b).links());
    }

    #[test]
    fn identity_remap_is_a_no_op_and_dangling_ids_fail() {
        let a = doc("a", "u", "eu", "x");
        let b = doc("b", "v", "en", "y");
        let store: DocStore = [a.clone(), b.clone()].into_iter().collect();
        let table = RemapTable::identity([DocId::from("a"), DocId::from("b")]);
        let input = vec![pair(&a, &b)];
        let out = remap_alignments(input.clone(), &table, &store).unwrap();
        assert_eq!(out.pairs, input);
        let err = remap_alignments(input, &RemapTable::identity([DocId::from("a")]), &store).unwrap_err();
        assert!(matches!(&err, DedupError::DanglingReference(id) if id.as_str() == "b"));
        assert!(err.to_string().contains('b'));
    }

    #[test]
    fn pairs_collapsing_onto_one_document_are_dropped() {
        let a = doc("a", "u", "en", "x");
        let b = doc("b", "u", "en", "x");
        let (kept, table) = dedup_by_url(vec![a.clone(), b.clone()]).unwrap();
        let store: DocStore = kept.into_iter().collect();
        let out = remap_alignments(vec![pair(&a, &b)], &table, &store).unwrap();
        assert!(out.pairs.is_empty());
        assert_eq!(out.self_pairs_dropped, 1);
    }
}
