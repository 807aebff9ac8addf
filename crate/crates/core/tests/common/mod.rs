//! Synthetic corpora shared by the integration tests.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use doccorpus::docbuild::{build_document, default_segmenter};
use doccorpus::model::{
    AlignmentLink, AlignmentScoreSet, DocPairAlignment, DocumentMeta, LanguageTag, Paragraph, SentenceId,
    StructuredDocument,
};
use doccorpus::xml::{write_cesalign, LinkGroup};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const SYLLABLES: [&str; 16] =
    ["ka", "lo", "mi", "tu", "re", "sa", "no", "vi", "de", "pa", "zu", "gi", "ba", "fe", "ro", "hu"];
const ODD: [&str; 10] = ["café", "naïve", "&amp;", "<b>", "\"q\"", "it's", "Ξένος", "日本", "a\tb", "]]>"];

pub fn word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(1..=3);
    (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect()
}

/// Capitalised words ending in a full stop.
pub fn sentence(rng: &mut ChaCha8Rng, words: usize) -> String {
    let mut s = String::new();
    for i in 0..words.max(1) {
        let mut w = word(rng);
        if i == 0 {
            w[..1].make_ascii_uppercase();
        } else {
            s.push(' ');
        }
        s.push_str(&w);
    }
    s.push('.');
    s
}

/// Sentence text that also exercises markup characters, non-ASCII text and tabs.
pub fn odd_sentence(rng: &mut ChaCha8Rng) -> String {
    let words = rng.gen_range(1..8);
    let mut s = sentence(rng, words);
    if rng.gen_bool(0.5) {
        s.push(' ');
        s.push_str(ODD.choose(rng).unwrap());
    }
    s
}

pub fn meta(id: &str, lang: &str, url: &str, collection: &str) -> DocumentMeta {
    DocumentMeta {
        doc_id: id.into(),
        url: url.into(),
        lang: LanguageTag::new(lang).unwrap(),
        collection: collection.into(),
    }
}

/// A document with `sentences` sentences spread over random paragraphs.
pub fn random_doc(rng: &mut ChaCha8Rng, meta: DocumentMeta, sentences: usize, odd: bool) -> StructuredDocument {
    let mut paragraphs = Vec::new();
    let mut left = sentences.max(1);
    while left > 0 {
        let n = rng.gen_range(1..=left.min(6));
        let texts: Vec<String> = (0..n)
            .map(|_| {
                if odd {
                    return odd_sentence(rng);
                }
                let words = rng.gen_range(3..12);
                sentence(rng, words)
            })
            .collect();
        paragraphs.push(Paragraph::from_texts(paragraphs.len() as u32 + 1, texts));
        left -= n;
    }
    StructuredDocument::new(meta, paragraphs).unwrap()
}

fn ids(doc: &StructuredDocument) -> Vec<SentenceId> {
    doc.sentences().map(|s| s.id).collect()
}

fn random_scores(rng: &mut ChaCha8Rng) -> AlignmentScoreSet {
    let mut pick = |p: f64| rng.gen_bool(p).then(|| rng.gen_range(0.0..=1.0));
    AlignmentScoreSet::new(pick(0.9), pick(0.9), pick(0.3)).unwrap()
}

/// Monotone links of one or two sentences per side with random gaps, so no
/// sentence is used twice.
pub fn random_links(rng: &mut ChaCha8Rng, src: &StructuredDocument, tgt: &StructuredDocument) -> Vec<AlignmentLink> {
    let (s, t) = (ids(src), ids(tgt));
    let (mut i, mut j) = (0, 0);
    let mut links = Vec::new();
    while i < s.len() && j < t.len() {
        if rng.gen_bool(0.15) {
            if rng.gen_bool(0.5) {
                i += 1;
            } else {
                j += 1;
            }
            continue;
        }
        let a = if i + 1 < s.len() && rng.gen_bool(0.15) { 2 } else { 1 };
        let b = if j + 1 < t.len() && rng.gen_bool(0.15) { 2 } else { 1 };
        let link = AlignmentLink::new(s[i..i + a].to_vec(), t[j..j + b].to_vec(), random_scores(rng)).unwrap();
        links.push(link);
        i += a;
        j += b;
    }
    links
}

/// A verified pair of random documents of at most `max_len` sentences.
pub fn random_pair(rng: &mut ChaCha8Rng, n: usize, max_len: usize) -> DocPairAlignment {
    let (a, b) = (rng.gen_range(1..=max_len), rng.gen_range(1..=max_len));
    let src = random_doc(rng, meta(&format!("x{n}"), "eu", &format!("u{n}"), "c"), a, false);
    let tgt = random_doc(rng, meta(&format!("e{n}"), "en", &format!("u{n}"), "c"), b, false);
    let links = random_links(rng, &src, &tgt);
    DocPairAlignment::new(Arc::new(src), Arc::new(tgt), links).unwrap()
}

fn raw_line(out: &mut String, id: &str, url: &str, lang: &str, collection: &str, text: &str) {
    let record = serde_json::json!({ "id": id, "url": url, "lang": lang, "collection": collection, "text": text });
    writeln!(out, "{record}").unwrap();
}

/// Writes `raw.jsonl`, `en-eu.xml` and `en-ca.xml` for a 1000-document
/// corpus: 300 English documents with Basque and Catalan counterparts, 60
/// English copies in a second collection and 40 repeated Basque snapshots.
/// Links are drawn against the documents as the default segmenter builds
/// them, with a few dangling links for verification to drop.
pub fn write_pipeline_corpus(dir: &Path, seed: u64) {
    let mut rng = rng(seed);
    let segmenter = default_segmenter();
    let mut raw = String::new();
    let mut en_eu = Vec::new();
    let mut en_ca = Vec::new();
    let text = |rng: &mut ChaCha8Rng| {
        let paragraphs = rng.gen_range(1..4);
        (0..paragraphs)
            .map(|_| {
                let n = rng.gen_range(1..6);
                let mut sentences = Vec::with_capacity(n);
                for _ in 0..n {
                    let words = rng.gen_range(4..14);
                    sentences.push(sentence(rng, words));
                }
                sentences.join(" ")
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    for i in 0..300 {
        let url = format!("https://site{}.example/page/{i}", i % 17);
        let mut docs = Vec::new();
        for (lang, collection) in [("en", "eu-en"), ("eu", "eu-en"), ("ca", "ca-en")] {
            let id = format!("{lang}{i:04}");
            let body = text(&mut rng);
            raw_line(&mut raw, &id, &url, lang, collection, &body);
            let doc = build_document(&body, meta(&id, lang, &url, collection), &segmenter).unwrap();
            docs.push((id, body, doc));
        }
        let en_id = if i < 60 {
            // The same English page also arrives with the Catalan collection.
            let copy = format!("en{i:04}-ca");
            raw_line(&mut raw, &copy, &url, "en", "ca-en", &docs[0].1);
            copy
        } else {
            docs[0].0.clone()
        };
        let eu_id = if (100..140).contains(&i) {
            let copy = format!("eu{i:04}-snap");
            raw_line(&mut raw, &copy, &url, "eu", "eu-en", &docs[1].1);
            copy
        } else {
            docs[1].0.clone()
        };
        let mut eu_links = random_links(&mut rng, &docs[0].2, &docs[1].2);
        if i % 25 == 0 {
            let ghost = SentenceId::new(99, 1).unwrap();
            eu_links.push(AlignmentLink::new(vec![ghost], vec![ghost], AlignmentScoreSet::default()).unwrap());
        }
        en_eu.push(LinkGroup::new(docs[0].0.clone().into(), eu_id.into(), eu_links));
        let ca_links = random_links(&mut rng, &docs[0].2, &docs[2].2);
        en_ca.push(LinkGroup::new(en_id.into(), docs[2].0.clone().into(), ca_links));
    }
    std::fs::write(dir.join("raw.jsonl"), raw).unwrap();
    std::fs::write(dir.join("en-eu.xml"), write_cesalign(&en_eu)).unwrap();
    std::fs::write(dir.join("en-ca.xml"), write_cesalign(&en_ca)).unwrap();
}
