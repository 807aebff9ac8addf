//! Test split sampling and removal of test documents that nearly duplicate
//! a training document.
//!
//! Similarity is Jaccard over word bigrams of lowercased, whitespace-split
//! text. The exhaustive path compares every test document against every
//! training document; [`LshIndex`] narrows the comparison to MinHash
//! candidates and then rechecks each candidate exactly.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecontamError {
    #[error("LSH bands ({bands}) × rows ({rows}) must equal the signature length ({num_hashes})")]
    LshShape { num_hashes: usize, bands: usize, rows: usize },
}

/// Token interner shared by the sets that will be compared.
#[derive(Debug, Clone, Default)]
pub struct Vocab {
    ids: HashMap<String, u32>,
}

impl Vocab {
    pub fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.ids.len() as u32;
        self.ids.insert(token.to_owned(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

fn pack(a: u32, b: u32) -> u64 {
    (u64::from(a) << 32) | u64::from(b)
}

/// Distinct adjacent token pairs of a text, as sorted packed token ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BigramSet(Vec<u64>);

impl BigramSet {
    fn from_ids(ids: &[u32]) -> Self {
        let mut grams: Vec<u64> = ids.windows(2).map(|w| pack(w[0], w[1])).collect();
        grams.sort_unstable();
        grams.dedup();
        Self(grams)
    }

    /// Interns every token of `text` into `vocab`.
    pub fn build(text: &str, vocab: &mut Vocab) -> Self {
        let ids: Vec<u32> = tokens(text).iter().map(|t| vocab.intern(t)).collect();
        Self::from_ids(&ids)
    }

    /// Encodes `text` against a fixed vocabulary. Unknown tokens get fresh
    /// ids past the vocabulary, so their bigrams never match a set built
    /// from it.
    pub fn lookup(text: &str, vocab: &Vocab) -> Self {
        let mut extra: HashMap<String, u32> = HashMap::new();
        let base = vocab.len() as u32;
        let ids: Vec<u32> = tokens(text)
            .into_iter()
            .map(|t| match vocab.ids.get(&t) {
                Some(&id) => id,
                None => {
                    let next = base + extra.len() as u32;
                    *extra.entry(t).or_insert(next)
                }
            })
            .collect();
        Self::from_ids(&ids)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// 1.0 when both sets are empty, 0.0 when exactly one is.
    pub fn jaccard(&self, other: &BigramSet) -> f64 {
        match (self.is_empty(), other.is_empty()) {
            (true, true) => return 1.0,
            (true, false) | (false, true) => return 0.0,
            _ => {}
        }
        let (mut i, mut j, mut common) = (0, 0, 0usize);
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].cmp(&other.0[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    common += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        common as f64 / (self.0.len() + other.0.len() - common) as f64
    }
}

pub fn jaccard_bigrams(a: &str, b: &str) -> f64 {
    let mut vocab = Vocab::default();
    let sa = BigramSet::build(a, &mut vocab);
    let sb = BigramSet::build(b, &mut vocab);
    sa.jaccard(&sb)
}

/// Picks `min(n, len)` items at random for the test split. Both halves keep
/// the input order.
pub fn sample_test<T>(items: Vec<T>, n: usize, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let chosen: HashSet<usize> = order.into_iter().take(n).collect();
    let (mut test, mut train) = (Vec::new(), Vec::new());
    for (i, item) in items.into_iter().enumerate() {
        if chosen.contains(&i) {
            test.push(item);
        } else {
            train.push(item);
        }
    }
    (test, train)
}

/// A document reduced to what decontamination needs: an id and the text
/// of its English side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecontamDoc {
    pub id: String,
    pub text: String,
}

impl DecontamDoc {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self { id: id.into(), text: text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecontamEntry {
    pub test_id: String,
    /// Most similar training document that was compared, if any.
    pub best_match: Option<String>,
    pub similarity: f64,
    pub removed: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecontamOutcome {
    /// Indices into the test input of the documents that survive.
    pub kept: Vec<usize>,
    pub report: Vec<DecontamEntry>,
    /// Number of exact Jaccard computations performed.
    pub comparisons: u64,
}

impl DecontamOutcome {
    pub fn removed(&self) -> impl Iterator<Item = &DecontamEntry> {
        self.report.iter().filter(|e| e.removed)
    }

    pub fn report_tsv(&self) -> String {
        report_tsv(&self.report)
    }
}

/// `test_id best_match_train_id similarity decision` rows with a header.
pub fn report_tsv(entries: &[DecontamEntry]) -> String {
    let mut out = String::from("test_id\tbest_match_train_id\tsimilarity\tdecision\n");
    for e in entries {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.6}\t{}",
            e.test_id,
            e.best_match.as_deref().unwrap_or(""),
            e.similarity,
            if e.removed { "remove" } else { "keep" }
        );
    }
    out
}

fn encode_train(train: &[DecontamDoc]) -> (Vocab, Vec<BigramSet>) {
    let tokenized: Vec<Vec<String>> = train.par_iter().map(|d| tokens(&d.text)).collect();
    let mut vocab = Vocab::default();
    let ids: Vec<Vec<u32>> = tokenized.iter().map(|t| t.iter().map(|s| vocab.intern(s)).collect()).collect();
    let sets = ids.par_iter().map(|ids| BigramSet::from_ids(ids)).collect();
    (vocab, sets)
}

fn best_of(
    query: &BigramSet,
    sets: &[BigramSet],
    candidates: impl Iterator<Item = usize>,
) -> (Option<usize>, f64, u64) {
    let mut best: Option<(usize, f64)> = None;
    let mut comparisons = 0;
    for i in candidates {
        comparisons += 1;
        let s = query.jaccard(&sets[i]);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    (best.map(|b| b.0), best.map_or(0.0, |b| b.1), comparisons)
}

fn assemble(
    test: &[DecontamDoc],
    train: &[DecontamDoc],
    results: Vec<(Option<usize>, f64, u64)>,
    threshold: f64,
) -> DecontamOutcome {
    let mut out = DecontamOutcome::default();
    for (i, (doc, (best, similarity, comparisons))) in test.iter().zip(results).enumerate() {
        let removed = best.is_some() && similarity > threshold;
        if !removed {
            out.kept.push(i);
        }
        out.comparisons += comparisons;
        out.report.push(DecontamEntry {
            test_id: doc.id.clone(),
            best_match: best.map(|j| train[j].id.clone()),
            similarity,
            removed,
        });
    }
    out
}

/// Removes every test document whose bigram Jaccard with some training
/// document is strictly above `threshold`, comparing against all of them.
pub fn decontaminate(test: &[DecontamDoc], train: &[DecontamDoc], threshold: f64) -> DecontamOutcome {
    let (vocab, sets) = encode_train(train);
    let results =
        test.par_iter().map(|doc| best_of(&BigramSet::lookup(&doc.text, &vocab), &sets, 0..sets.len())).collect();
    assemble(test, train, results, threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LshConfig {
    pub num_hashes: usize,
    pub bands: usize,
    pub rows: usize,
    pub seed: u64,
}

impl Default for LshConfig {
    fn default() -> Self {
        Self { num_hashes: 128, bands: 32, rows: 4, seed: 0x6d69_6e68_6173_6821 }
    }
}

impl LshConfig {
    pub fn validate(&self) -> Result<(), DecontamError> {
        if self.bands == 0 || self.rows == 0 || self.bands * self.rows != self.num_hashes {
            return Err(DecontamError::LshShape { num_hashes: self.num_hashes, bands: self.bands, rows: self.rows });
        }
        Ok(())
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// MinHash signatures banded into hash buckets over a training set.
#[derive(Debug, Clone)]
pub struct LshIndex {
    config: LshConfig,
    seeds: Vec<u64>,
    vocab: Vocab,
    sets: Vec<BigramSet>,
    docs: Vec<DecontamDoc>,
    buckets: Vec<HashMap<u64, Vec<u32>>>,
}

pub fn build_lsh_index(train: &[DecontamDoc], config: LshConfig) -> Result<LshIndex, DecontamError> {
    config.validate()?;
    let seeds: Vec<u64> = (0..config.num_hashes as u64).map(|i| splitmix64(config.seed ^ splitmix64(i))).collect();
    let (vocab, sets) = encode_train(train);
    let mut index =
        LshIndex { config, seeds, vocab, sets, docs: train.to_vec(), buckets: vec![HashMap::new(); config.bands] };
    let keys: Vec<Vec<u64>> = index.sets.par_iter().map(|s| index.band_keys(s)).collect();
    for (doc, keys) in keys.into_iter().enumerate() {
        for (band, key) in keys.into_iter().enumerate() {
            index.buckets[band].entry(key).or_default().push(doc as u32);
        }
    }
    Ok(index)
}

impl LshIndex {
    pub fn config(&self) -> &LshConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    fn signature(&self, set: &BigramSet) -> Vec<u64> {
        self.seeds.iter().map(|&seed| set.0.iter().map(|&g| splitmix64(g ^ seed)).min().unwrap_or(u64::MAX)).collect()
    }

    fn band_keys(&self, set: &BigramSet) -> Vec<u64> {
        let signature = self.signature(set);
        signature
            .chunks(self.config.rows)
            .map(|rows| rows.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &v| splitmix64(h ^ v)))
            .collect()
    }

    /// Training documents sharing at least one band with `text`, ascending.
    pub fn candidates(&self, text: &str) -> Vec<usize> {
        self.candidates_of(&BigramSet::lookup(text, &self.vocab))
    }

    fn candidates_of(&self, set: &BigramSet) -> Vec<usize> {
        let mut found: Vec<usize> = self
            .band_keys(set)
            .into_iter()
            .enumerate()
            .filter_map(|(band, key)| self.buckets[band].get(&key))
            .flatten()
            .map(|&i| i as usize)
            .collect();
        found.sort_unstable();
        found.dedup();
        found
    }

    /// Like [`decontaminate`], but only candidates from the index are
    /// compared exactly.
    pub fn decontaminate(&self, test: &[DecontamDoc], threshold: f64) -> DecontamOutcome {
        let results = test
            .par_iter()
            .map(|doc| {
                let set = BigramSet::lookup(&doc.text, &self.vocab);
                let candidates = self.candidates_of(&set);
                best_of(&set, &self.sets, candidates.into_iter())
            })
            .collect();
        assemble(test, &self.docs, results, threshold)
    }
}
