mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use common::{meta, random_doc, random_links, random_pair, rng};
use doccorpus::chunker::{make_chunks, make_doc2doc, PromptTemplate};
use doccorpus::dedup::{consolidate_english, dedup_by_url};
use doccorpus::model::{SentenceId, StructuredDocument};
use doccorpus::xml::{self, LinkGroup};

/// Documents with repeated URLs and copied contents under fresh ids.
fn noisy_collection(seed: u64, n: usize, lang: &str) -> Vec<StructuredDocument> {
    let mut r = rng(seed);
    let mut docs: Vec<StructuredDocument> = Vec::new();
    for i in 0..n {
        let id = format!("{lang}{i}");
        let url = format!("https://d.example/{}", r.gen_range(0..n.max(2) / 2 + 1));
        let doc = if !docs.is_empty() && r.gen_bool(0.3) {
            let source = docs.choose(&mut r).unwrap();
            let mut m = source.meta().clone();
            m.doc_id = id.as_str().into();
            StructuredDocument::new(m, source.paragraphs().to_vec()).unwrap()
        } else {
            let sentences = r.gen_range(1..4);
            random_doc(&mut r, meta(&id, lang, &url, "c"), sentences, false)
        };
        docs.push(doc);
    }
    docs
}

proptest! {
    #[test]
    fn documents_and_links_round_trip(seed in any::<u64>()) {
        let mut r = rng(seed);
        let sentences = r.gen_range(1..30);
        let doc = random_doc(&mut r, meta("d<1>", "eu", "https://x.example/?a=1&b=2", "c"), sentences, true);
        let text = xml::write_document_xml(&doc);
        let parsed = xml::parse_document_xml(&text).unwrap();
        prop_assert_eq!(&parsed, &doc);
        prop_assert_eq!(xml::write_document_xml(&parsed), text);

        let pair = random_pair(&mut r, 0, 20);
        let group = LinkGroup::new(pair.src().doc_id().clone(), pair.tgt().doc_id().clone(), pair.links().to_vec());
        let text = xml::write_cesalign([&group]);
        prop_assert_eq!(xml::parse_cesalign(&text).unwrap(), vec![group]);
    }

    #[test]
    fn sentence_order_follows_text_order(seed in any::<u64>()) {
        let mut r = rng(seed);
        let sentences = r.gen_range(1..40);
        let doc = random_doc(&mut r, meta("d", "en", "u", "c"), sentences, false);
        let ids: Vec<SentenceId> = doc.sentences().map(|s| s.id).collect();
        prop_assert!(ids.windows(2).all(|w| w[0] < w[1]));
        for id in &ids {
            prop_assert_eq!(id.to_string().parse::<SentenceId>().unwrap(), *id);
        }
    }

    #[test]
    fn dedup_is_idempotent_and_conserving(seed in any::<u64>(), n in 0usize..60) {
        let docs = noisy_collection(seed, n, "ca");
        let (kept, table) = dedup_by_url(docs.clone()).unwrap();
        prop_assert_eq!(kept.len() + table.dropped_count(), docs.len());
        for d in &docs {
            let canonical = table.resolve(d.doc_id().as_str()).unwrap();
            prop_assert_eq!(table.resolve(canonical.as_str()), Some(canonical));
        }
        let (again, again_table) = dedup_by_url(kept.clone()).unwrap();
        prop_assert_eq!(again, kept);
        prop_assert_eq!(again_table.dropped_count(), 0);
    }

    #[test]
    fn english_consolidation_is_idempotent(seed in any::<u64>(), n in 1usize..60) {
        let docs = noisy_collection(seed, n, "en");
        let (left, right) = docs.split_at(docs.len() / 2);
        let collections = vec![("a".to_string(), left.to_vec()), ("b".to_string(), right.to_vec())];
        let (kept, table) = consolidate_english(collections).unwrap();
        prop_assert_eq!(kept.len() + table.dropped_count(), docs.len());
        let (again, again_table) = consolidate_english(vec![("all".to_string(), kept.clone())]).unwrap();
        prop_assert_eq!(again, kept);
        prop_assert_eq!(again_table.dropped_count(), 0);
    }

    #[test]
    fn chunks_partition_links(seed in any::<u64>(), k in 1usize..12) {
        let mut r = rng(seed);
        let pair = random_pair(&mut r, 0, 30);
        let records = make_chunks(&pair, k, &PromptTemplate::default()).unwrap();
        let spans: Vec<usize> = records.iter().flat_map(|c| c.source_span.iter().copied()).collect();
        prop_assert_eq!(spans, (0..pair.links().len()).collect::<Vec<_>>());
        for c in &records {
            let target: Vec<String> =
                c.source_span.iter().map(|&i| pair.tgt().join_sentences(pair.links()[i].tgt()).unwrap()).collect();
            prop_assert_eq!(&c.completion, &target.join(" "));
            prop_assert!(c.prompt.ends_with("English: "));
        }
    }

    #[test]
    fn doc2doc_separates_prompt_and_target(seed in any::<u64>()) {
        let mut r = rng(seed);
        let en = random_doc(&mut r, meta("e", "en", "u", "c"), 5, false);
        let ca = random_doc(&mut r, meta("x", "ca", "u", "c"), 5, false);
        let links = random_links(&mut r, &en, &ca);
        let pair = doccorpus::model::DocPairAlignment::new(en.clone().into(), ca.clone().into(), links).unwrap();
        let record = make_doc2doc(&pair, &PromptTemplate::default());
        prop_assert_eq!(&record.completion, &ca.text());
        prop_assert!(record.prompt.contains(&en.text()));
        prop_assert!(record.prompt.ends_with("Catalan: "));
    }
}
