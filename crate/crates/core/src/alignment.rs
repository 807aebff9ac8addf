//! Link verification, alignment density and per-pair score averages.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::model::{AlignmentLink, AlignmentScoreSet, DocPairAlignment, ScoreField, StructuredDocument};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlignmentError {
    #[error("alignment density is undefined for an empty document")]
    UndefinedDensity,
}

/// Why [`verify_links`] dropped a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkDropReason {
    MissingSource,
    MissingTarget,
    OverlapSource,
    OverlapTarget,
}

/// Outcome of verifying one pair's links; serialized as one JSONL row.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct VerificationReport {
    pub pair: String,
    pub input: usize,
    pub kept: usize,
    pub dropped: usize,
    pub reasons: BTreeMap<LinkDropReason, usize>,
}

/// Keeps exactly the links whose sentence ids all resolve and that do not
/// reuse a sentence already claimed by an earlier link on the same side.
/// Input order decides which of two overlapping links survives.
pub fn verify_links(
    src: &StructuredDocument,
    tgt: &StructuredDocument,
    links: &[AlignmentLink],
) -> (Vec<AlignmentLink>, VerificationReport) {
    let mut report = VerificationReport {
        pair: format!("{}|{}", src.doc_id(), tgt.doc_id()),
        input: links.len(),
        ..Default::default()
    };
    let mut claimed_src = HashSet::new();
    let mut claimed_tgt = HashSet::new();
    let mut kept = Vec::with_capacity(links.len());
    for link in links {
        let reason = if !link.src().iter().all(|&id| src.contains(id)) {
            Some(LinkDropReason::MissingSource)
        } else if !link.tgt().iter().all(|&id| tgt.contains(id)) {
            Some(LinkDropReason::MissingTarget)
        } else if link.src().iter().any(|id| claimed_src.contains(id)) {
            Some(LinkDropReason::OverlapSource)
        } else if link.tgt().iter().any(|id| claimed_tgt.contains(id)) {
            Some(LinkDropReason::OverlapTarget)
        } else {
            None
        };
        match reason {
            Some(reason) => *report.reasons.entry(reason).or_default() += 1,
            None => {
                claimed_src.extend(link.src().iter().copied());
                claimed_tgt.extend(link.tgt().iter().copied());
                kept.push(link.clone());
            }
        }
    }
    report.kept = kept.len();
    report.dropped = links.len() - kept.len();
    (kept, report)
}

/// Verifies `links` and assembles the pair from what survives.
pub fn verified_pair(
    src: Arc<StructuredDocument>,
    tgt: Arc<StructuredDocument>,
    links: &[AlignmentLink],
) -> (DocPairAlignment, VerificationReport) {
    let (kept, report) = verify_links(&src, &tgt, links);
    let pair = DocPairAlignment::new(src, tgt, kept).expect("verified links always form a valid pair");
    (pair, report)
}

/// `links / max(src_len, tgt_len)`: one link is one alignment whatever its arity.
pub fn density_ratio(links: usize, src_len: usize, tgt_len: usize) -> Result<f64, AlignmentError> {
    let longer = src_len.max(tgt_len);
    if longer == 0 {
        return Err(AlignmentError::UndefinedDensity);
    }
    Ok(links as f64 / longer as f64)
}

/// Recomputes the alignment density of a pair from its links.
pub fn alignment_density(pair: &DocPairAlignment) -> Result<f64, AlignmentError> {
    density_ratio(pair.links().len(), pair.src().sentence_count(), pair.tgt().sentence_count())
}

/// Arithmetic mean of each score field over the links that carry it.
/// Fields absent on every link stay absent.
pub fn pair_score_summary(links: &[AlignmentLink]) -> AlignmentScoreSet {
    let mut summary = AlignmentScoreSet::default();
    for field in ScoreField::ALL {
        let values: Vec<f64> = links.iter().filter_map(|l| l.scores().get(field)).collect();
        if !values.is_empty() {
            summary.set(field, Some(values.iter().sum::<f64>() / values.len() as f64));
        }
    }
    summary
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DocId, DocumentMeta, LanguageTag, Paragraph, SentenceId};
    use proptest::prelude::*;

    fn doc(id: &str, lens: &[usize]) -> Arc<StructuredDocument> {
        let paragraphs = lens
            .iter()
            .zip(1u32..)
            .map(|(&n, p)| Paragraph::from_texts(p, (0..n).map(|i| format!("s{p}-{i}"))))
            .collect();
        let meta = DocumentMeta {
            doc_id: DocId::new(id),
            url: format!("https://example.org/{id}"),
            lang: LanguageTag::new("en").unwrap(),
            collection: "t".into(),
        };
        Arc::new(StructuredDocument::new(meta, paragraphs).unwrap())
    }

    fn sid(s: &str) -> SentenceId {
        s.parse().unwrap()
    }

    fn link(src: &[&str], tgt: &[&str], bicleaner: Option<f64>) -> AlignmentLink {
        let scores = AlignmentScoreSet { bicleaner, ..Default::default() };
        AlignmentLink::new(src.iter().map(|s| sid(s)).collect(), tgt.iter().map(|s| sid(s)).collect(), scores).unwrap()
    }

    #[test]
    fn verify_keeps_resolvable_links() {
        let (a, b) = (doc("a", &[1]), doc("b", &[1]));
        let (kept, report) = verify_links(&a, &b, &[link(&["1.1"], &["1.1"], None)]);
        assert_eq!(kept.len(), 1);
        assert_eq!(report.dropped, 0);
    }

    #[test]
    fn verify_drops_missing_ids() {
        let (a, b) = (doc("a", &[1]), doc("b", &[1]));
        let (kept, report) = verify_links(&a, &b, &[link(&["9.9"], &["1.1"], None)]);
        assert!(kept.is_empty());
        assert_eq!(report.reasons[&LinkDropReason::MissingSource], 1);
    }

    #[test]
    fn verify_drops_later_overlapping_link() {
        let (a, b) = (doc("a", &[3]), doc("b", &[3]));
        let links =
            [link(&["1.1"], &["1.1"], None), link(&["1.1", "1.2"], &["1.2"], None), link(&["1.3"], &["1.1"], None)];
        let (kept, report) = verify_links(&a, &b, &links);
        assert_eq!(kept, vec![links[0].clone()]);
        assert_eq!(report.reasons[&LinkDropReason::OverlapSource], 1);
        assert_eq!(report.reasons[&LinkDropReason::OverlapTarget], 1);
        assert_eq!(report.kept + report.dropped, report.input);
    }

    #[test]
    fn density_examples() {
        assert_eq!(density_ratio(5, 10, 8), Ok(0.5));
        assert_eq!(density_ratio(7, 7, 7), Ok(1.0));
        assert_eq!(density_ratio(0, 3, 4), Ok(0.0));
        assert_eq!(density_ratio(0, 0, 0), Err(AlignmentError::UndefinedDensity));
        let src = doc("s", &[10]);
        let tgt = doc("t", &[8]);
        let links: Vec<_> = (1..=5).map(|i| link(&[&format!("1.{i}")], &[&format!("1.{i}")], None)).collect();
        let (pair, _) = verified_pair(src, tgt, &links);
        assert_eq!(alignment_density(&pair), Ok(0.5));
        assert_eq!(pair.density(), 0.5);
    }

    #[test]
    fn score_summary() {
        let s = pair_score_summary(&[link(&["1.1"], &["1.1"], Some(0.2)), link(&["1.2"], &["1.2"], Some(0.4))]);
        assert!((s.bicleaner.unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(s.bifixer, None);
        let one = link(&["1.1"], &["1.1"], Some(0.7));
        assert_eq!(pair_score_summary(std::slice::from_ref(&one)), *one.scores());
        assert!(pair_score_summary(&[]).is_empty());
        let mixed = pair_score_summary(&[link(&["1.1"], &["1.1"], Some(0.6)), link(&["1.2"], &["1.2"], None)]);
        assert_eq!(mixed.bicleaner, Some(0.6));
    }

    fn arb_links(n_src: usize, n_tgt: usize) -> impl Strategy<Value = Vec<AlignmentLink>> {
        proptest::collection::vec(((1..=n_src as u32 + 1), 1..3u32, (1..=n_tgt as u32 + 1), 1..3u32), 0..20).prop_map(
            |raw| {
                raw.into_iter()
                    .map(|(s, sl, t, tl)| {
                        let src = (s..s + sl).map(|i| SentenceId::new(1, i).unwrap()).collect();
                        let tgt = (t..t + tl).map(|i| SentenceId::new(1, i).unwrap()).collect();
                        AlignmentLink::new(src, tgt, Default::default()).unwrap()
                    })
                    .collect()
            },
        )
    }

    proptest! {
        #[test]
        fn verification_properties((n_src, n_tgt, links) in (1usize..12, 1usize..12).prop_flat_map(|(a, b)| (Just(a), Just(b), arb_links(a, b)))) {
            let src = doc("s", &[n_src]);
            let tgt = doc("t", &[n_tgt]);
            let (kept, _) = verify_links(&src, &tgt, &links);
            // Side-disjoint by brute force.
            for (i, a) in kept.iter().enumerate() {
                for b in &kept[i + 1..] {
                    prop_assert!(a.src().iter().all(|x| !b.src().contains(x)));
                    prop_assert!(a.tgt().iter().all(|x| !b.tgt().contains(x)));
                }
            }
            let (again, report) = verify_links(&src, &tgt, &kept);
            prop_assert_eq!(&again, &kept);
            prop_assert_eq!(report.dropped, 0);

            let (pair, _) = verified_pair(src.clone(), tgt.clone(), &links);
            let d = alignment_density(&pair).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
            let mut reversed = kept.clone();
            reversed.reverse();
            let (pair_rev, _) = verified_pair(src.clone(), tgt.clone(), &reversed);
            prop_assert_eq!(alignment_density(&pair_rev).unwrap(), d);
            prop_assert_eq!(alignment_density(&pair.swapped()).unwrap(), d);
        }
    }
}
