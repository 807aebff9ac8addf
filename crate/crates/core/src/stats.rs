//! Per-language document totals and per-language-pair alignment statistics,
//! with TSV and markdown renderings.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{DocId, DocPairAlignment, Side, StructuredDocument};

/// How the English/xx length ratio is averaged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatioMode {
    /// Mean over pairs of `|en| / |xx|`.
    #[default]
    MeanOfRatios,
    /// `Σ|en| / Σ|xx|` over pairs.
    RatioOfSums,
}

/// What the pair statistics need from one document pair, with English
/// normalised to one side.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSummary {
    pub en_doc: DocId,
    pub xx_doc: DocId,
    pub en_len: usize,
    pub xx_len: usize,
    pub links: usize,
    pub density: f64,
    pub bleualign: Option<f64>,
    pub bicleaner: Option<f64>,
}

impl PairSummary {
    /// Pairs without an English side are summarised with the target in the
    /// English slot.
    pub fn of(pair: &DocPairAlignment) -> Self {
        let en_side = pair.english_side().unwrap_or(Side::Target);
        let xx_side = match en_side {
            Side::Source => Side::Target,
            Side::Target => Side::Source,
        };
        let (en, xx) = (pair.doc(en_side), pair.doc(xx_side));
        Self {
            en_doc: en.doc_id().clone(),
            xx_doc: xx.doc_id().clone(),
            en_len: en.sentence_count(),
            xx_len: xx.sentence_count(),
            links: pair.links().len(),
            density: pair.density(),
            bleualign: pair.avg_scores().bleualign,
            bicleaner: pair.avg_scores().bicleaner,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Mean {
    sum: f64,
    count: u64,
}

impl Mean {
    fn add(&mut self, value: f64) {
        self.sum += value;
        self.count += 1;
    }

    fn merge(&mut self, other: Mean) {
        self.sum += other.sum;
        self.count += other.count;
    }

    fn get(self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

/// Streaming accumulator behind [`pair_stats`]. Sentences-per-document is
/// computed over the distinct documents seen on each side.
#[derive(Debug, Clone, Default)]
pub struct PairStatsAccumulator {
    doc_pairs: u64,
    alignments: u64,
    ratio: Mean,
    en_sentences: u64,
    xx_sentences: u64,
    density: Mean,
    bleualign: Mean,
    bicleaner: Mean,
    en_docs: HashMap<DocId, usize>,
    xx_docs: HashMap<DocId, usize>,
}

impl PairStatsAccumulator {
    pub fn add(&mut self, s: &PairSummary) {
        self.doc_pairs += 1;
        self.alignments += s.links as u64;
        if s.xx_len > 0 {
            self.ratio.add(s.en_len as f64 / s.xx_len as f64);
        }
        self.en_sentences += s.en_len as u64;
        self.xx_sentences += s.xx_len as u64;
        self.density.add(s.density);
        if let Some(v) = s.bleualign {
            self.bleualign.add(v);
        }
        if let Some(v) = s.bicleaner {
            self.bicleaner.add(v);
        }
        self.en_docs.entry(s.en_doc.clone()).or_insert(s.en_len);
        self.xx_docs.entry(s.xx_doc.clone()).or_insert(s.xx_len);
    }

    pub fn merge(mut self, other: Self) -> Self {
        self.doc_pairs += other.doc_pairs;
        self.alignments += other.alignments;
        self.ratio.merge(other.ratio);
        self.en_sentences += other.en_sentences;
        self.xx_sentences += other.xx_sentences;
        self.density.merge(other.density);
        self.bleualign.merge(other.bleualign);
        self.bicleaner.merge(other.bicleaner);
        for (id, len) in other.en_docs {
            self.en_docs.entry(id).or_insert(len);
        }
        for (id, len) in other.xx_docs {
            self.xx_docs.entry(id).or_insert(len);
        }
        self
    }

    pub fn finish(&self, label: impl Into<String>, mode: RatioMode) -> StatsRow {
        let per_doc = |docs: &HashMap<DocId, usize>| {
            (!docs.is_empty()).then(|| docs.values().sum::<usize>() as f64 / docs.len() as f64)
        };
        let ratio = match mode {
            RatioMode::MeanOfRatios => self.ratio.get(),
            RatioMode::RatioOfSums => {
                (self.xx_sentences > 0).then(|| self.en_sentences as f64 / self.xx_sentences as f64)
            }
        };
        StatsRow {
            label: label.into(),
            doc_pairs: self.doc_pairs,
            alignments: self.alignments,
            avg_aligns_per_doc: (self.doc_pairs > 0).then(|| self.alignments as f64 / self.doc_pairs as f64),
            avg_len_ratio_en_over_xx: ratio,
            sents_per_doc_en: per_doc(&self.en_docs),
            sents_per_doc_xx: per_doc(&self.xx_docs),
            avg_bleualign: self.bleualign.get(),
            avg_bicleaner: self.bicleaner.get(),
            avg_density: self.density.get(),
        }
    }
}

/// One line of the alignment statistics table. Averages are absent when
/// their denominator is zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsRow {
    pub label: String,
    pub doc_pairs: u64,
    pub alignments: u64,
    pub avg_aligns_per_doc: Option<f64>,
    pub avg_len_ratio_en_over_xx: Option<f64>,
    pub sents_per_doc_en: Option<f64>,
    pub sents_per_doc_xx: Option<f64>,
    pub avg_bleualign: Option<f64>,
    pub avg_bicleaner: Option<f64>,
    pub avg_density: Option<f64>,
}

/// Statistics for pairs of one language pair. The label is taken from the
/// first pair, or `"-"` when there are none.
pub fn pair_stats(pairs: &[DocPairAlignment], mode: RatioMode) -> StatsRow {
    let label = pairs.first().map_or_else(|| "-".to_string(), DocPairAlignment::label);
    pairs
        .par_iter()
        .fold(PairStatsAccumulator::default, |mut acc, p| {
            acc.add(&PairSummary::of(p));
            acc
        })
        .reduce(PairStatsAccumulator::default, PairStatsAccumulator::merge)
        .finish(label, mode)
}

/// Rows for every language pair present, sorted by label.
pub fn pair_stats_by_label(pairs: &[DocPairAlignment], mode: RatioMode) -> Vec<StatsRow> {
    let mut groups: BTreeMap<String, Vec<DocPairAlignment>> = BTreeMap::new();
    for p in pairs {
        groups.entry(p.label()).or_default().push(p.clone());
    }
    groups.into_values().map(|g| pair_stats(&g, mode)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageTotals {
    pub lang: String,
    pub sentences: u64,
    pub docs: u64,
}

impl LanguageTotals {
    pub fn sentences_per_doc(&self) -> Option<f64> {
        (self.docs > 0).then(|| self.sentences as f64 / self.docs as f64)
    }
}

/// Per-language rows sorted by language, plus a grand total.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TotalsTable {
    pub rows: Vec<LanguageTotals>,
    pub total: LanguageTotals,
}

impl TotalsTable {
    /// Merges rows of the same language and drops rows without documents.
    pub fn from_rows(rows: impl IntoIterator<Item = LanguageTotals>) -> Self {
        let mut by_lang: BTreeMap<String, (u64, u64)> = BTreeMap::new();
        for r in rows {
            let e = by_lang.entry(r.lang).or_default();
            e.0 += r.sentences;
            e.1 += r.docs;
        }
        let rows: Vec<LanguageTotals> = by_lang
            .into_iter()
            .filter(|(_, (_, docs))| *docs > 0)
            .map(|(lang, (sentences, docs))| LanguageTotals { lang, sentences, docs })
            .collect();
        let total = LanguageTotals {
            lang: "total".into(),
            sentences: rows.iter().map(|r| r.sentences).sum(),
            docs: rows.iter().map(|r| r.docs).sum(),
        };
        Self { rows, total }
    }
}

/// Document and sentence counts per language.
pub fn language_totals<'a>(docs: impl IntoIterator<Item = &'a StructuredDocument>) -> TotalsTable {
    TotalsTable::from_rows(docs.into_iter().map(|d| LanguageTotals {
        lang: d.lang().to_string(),
        sentences: d.sentence_count() as u64,
        docs: 1,
    }))
}

/// Fixed-precision rendering; `-` for an absent value.
pub fn fixed(value: Option<f64>, decimals: usize) -> String {
    value.map_or_else(|| "-".to_string(), |v| format!("{v:.decimals$}"))
}

/// `1234567` as `1,234,567`.
pub fn grouped(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

const PAIR_HEADER: [&str; 10] = [
    "pair",
    "doc_pairs",
    "alignments",
    "avg_aligns_per_doc",
    "avg_sents_en_over_xx",
    "sents_per_doc_en",
    "sents_per_doc_xx",
    "avg_bleualign",
    "avg_bicleaner",
    "avg_density",
];

fn pair_cells(row: &StatsRow, count: fn(u64) -> String) -> [String; 10] {
    [
        row.label.clone(),
        count(row.doc_pairs),
        count(row.alignments),
        fixed(row.avg_aligns_per_doc, 1),
        fixed(row.avg_len_ratio_en_over_xx, 2),
        fixed(row.sents_per_doc_en, 1),
        fixed(row.sents_per_doc_xx, 1),
        fixed(row.avg_bleualign, 3),
        fixed(row.avg_bicleaner, 3),
        fixed(row.avg_density, 3),
    ]
}

fn tsv(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut out = header.join("\t");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join("\t"));
        out.push('\n');
    }
    out
}

/// Markdown table with columns padded to equal width; the first column is
/// left-aligned and the rest right-aligned.
fn markdown(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count().max(3)).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = line(header.to_vec());
    let rule: Vec<String> = widths
        .iter()
        .enumerate()
        .map(|(i, &w)| if i == 0 { format!(":{}", "-".repeat(w - 1)) } else { format!("{}:", "-".repeat(w - 1)) })
        .collect();
    let _ = writeln!(out, "| {} |", rule.join(" | "));
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

pub fn pair_stats_tsv(rows: &[StatsRow]) -> String {
    tsv(&PAIR_HEADER, rows.iter().map(|r| pair_cells(r, |n| n.to_string()).to_vec()))
}

pub fn pair_stats_markdown(rows: &[StatsRow]) -> String {
    let cells: Vec<Vec<String>> = rows.iter().map(|r| pair_cells(r, grouped).to_vec()).collect();
    markdown(&PAIR_HEADER, &cells)
}

const TOTALS_HEADER: [&str; 4] = ["lang", "sentences", "docs", "sentences_per_doc"];

fn totals_cells(table: &TotalsTable, count: fn(u64) -> String) -> Vec<Vec<String>> {
    table
        .rows
        .iter()
        .chain([&table.total])
        .map(|r| vec![r.lang.clone(), count(r.sentences), count(r.docs), fixed(r.sentences_per_doc(), 1)])
        .collect()
}

pub fn language_totals_tsv(table: &TotalsTable) -> String {
    tsv(&TOTALS_HEADER, totals_cells(table, |n| n.to_string()).into_iter())
}

pub fn language_totals_markdown(table: &TotalsTable) -> String {
    markdown(&TOTALS_HEADER, &totals_cells(table, grouped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AlignmentLink, AlignmentScoreSet, DocumentMeta, LanguageTag, Paragraph, SentenceId};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn doc(id: &str, lang: &str, n: usize) -> Arc<StructuredDocument> {
        let meta = DocumentMeta {
            doc_id: DocId::new(id),
            url: format!("https://example.org/{id}"),
            lang: LanguageTag::new(lang).unwrap(),
            collection: "t".into(),
        };
        Arc::new(
            StructuredDocument::new(meta, vec![Paragraph::from_texts(1, (0..n).map(|i| format!("s{i}")))]).unwrap(),
        )
    }

    fn pair(
        xx: &str,
        xx_len: usize,
        en: &str,
        en_len: usize,
        links: usize,
        bicleaner: Option<f64>,
    ) -> DocPairAlignment {
        let links = (1..=links as u32)
            .map(|i| {
                let id = SentenceId::new(1, i).unwrap();
                AlignmentLink::new(vec![id], vec![id], AlignmentScoreSet { bicleaner, ..Default::default() }).unwrap()
            })
            .collect();
        DocPairAlignment::new(doc(xx, "af", xx_len), doc(en, "en", en_len), links).unwrap()
    }

    #[test]
    fn single_pair_arithmetic() {
        let row = pair_stats(&[pair("x", 8, "e", 10, 5, Some(0.5))], RatioMode::MeanOfRatios);
        assert_eq!(row.label, "af-en");
        assert_eq!((row.doc_pairs, row.alignments), (1, 5));
        assert_eq!(row.avg_len_ratio_en_over_xx, Some(1.25));
        assert_eq!(row.avg_density, Some(0.5));
        assert_eq!(row.avg_aligns_per_doc, Some(5.0));
        assert_eq!((row.sents_per_doc_en, row.sents_per_doc_xx), (Some(10.0), Some(8.0)));
        assert_eq!(row.avg_bicleaner, Some(0.5));
        assert_eq!(row.avg_bleualign, None);
    }

    #[test]
    fn duplicates_and_empty_input() {
        let p = pair("x", 8, "e", 10, 5, Some(0.5));
        let one = pair_stats(std::slice::from_ref(&p), RatioMode::MeanOfRatios);
        let two = pair_stats(&[p.clone(), p], RatioMode::MeanOfRatios);
        assert_eq!(two.avg_len_ratio_en_over_xx, one.avg_len_ratio_en_over_xx);
        assert_eq!(two.avg_density, one.avg_density);
        assert_eq!(two.sents_per_doc_en, one.sents_per_doc_en);
        let empty = pair_stats(&[], RatioMode::MeanOfRatios);
        assert_eq!((empty.doc_pairs, empty.alignments, empty.avg_density), (0, 0, None));
    }

    #[test]
    fn ratio_modes_differ() {
        let pairs = [pair("x1", 1, "e1", 2, 1, None), pair("x2", 4, "e2", 4, 1, None)];
        assert_eq!(pair_stats(&pairs, RatioMode::MeanOfRatios).avg_len_ratio_en_over_xx, Some(1.5));
        assert_eq!(pair_stats(&pairs, RatioMode::RatioOfSums).avg_len_ratio_en_over_xx, Some(1.2));
    }

    #[test]
    fn totals() {
        let d = doc("a", "eu", 3);
        let t = language_totals([d.as_ref()]);
        assert_eq!(t.rows, [LanguageTotals { lang: "eu".into(), sentences: 3, docs: 1 }]);
        let t = TotalsTable::from_rows([
            LanguageTotals { lang: "xx".into(), sentences: 0, docs: 0 },
            LanguageTotals { lang: "eu".into(), sentences: 10, docs: 2 },
        ]);
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.total.sentences_per_doc(), Some(5.0));
    }

    #[test]
    fn rendering() {
        assert_eq!(grouped(29_496_715), "29,496,715");
        assert_eq!(grouped(0), "0");
        assert_eq!(grouped(100), "100");
        assert_eq!(fixed(Some(0.4455), 3), "0.446");
        assert_eq!(fixed(None, 1), "-");
        let row = pair_stats(&[pair("x", 8, "e", 10, 5, Some(0.5))], RatioMode::MeanOfRatios);
        let tsv = pair_stats_tsv(std::slice::from_ref(&row));
        assert_eq!(tsv.lines().nth(1).unwrap(), "af-en\t1\t5\t5.0\t1.25\t10.0\t8.0\t-\t0.500\t0.500");
        let md = pair_stats_markdown(&[row]);
        assert!(md.lines().all(|l| l.chars().count() == md.lines().next().unwrap().chars().count()));
        let t = language_totals_markdown(&TotalsTable::from_rows([LanguageTotals {
            lang: "af".into(),
            sentences: 16_416_841,
            docs: 297_636,
        }]));
        assert!(t.contains("16,416,841"));
    }

    proptest! {
        #[test]
        fn union_recombines(a in proptest::collection::vec((1usize..10, 1usize..10, 0usize..5), 1..8),
                            b in proptest::collection::vec((1usize..10, 1usize..10, 0usize..5), 1..8)) {
            let build = |v: &[(usize, usize, usize)], tag: &str| -> Vec<DocPairAlignment> {
                v.iter().enumerate().map(|(i, &(x, e, l))| pair(&format!("{tag}x{i}"), x, &format!("{tag}e{i}"), e, l.min(x).min(e), None)).collect()
            };
            let (pa, pb) = (build(&a, "a"), build(&b, "b"));
            let all: Vec<_> = pa.iter().chain(&pb).cloned().collect();
            let (ra, rb, r) = (pair_stats(&pa, RatioMode::MeanOfRatios), pair_stats(&pb, RatioMode::MeanOfRatios), pair_stats(&all, RatioMode::MeanOfRatios));
            prop_assert_eq!(r.doc_pairs, ra.doc_pairs + rb.doc_pairs);
            prop_assert_eq!(r.alignments, ra.alignments + rb.alignments);
            let weighted = (ra.avg_density.unwrap() * ra.doc_pairs as f64 + rb.avg_density.unwrap() * rb.doc_pairs as f64) / r.doc_pairs as f64;
            prop_assert!((r.avg_density.unwrap() - weighted).abs() < 1e-12);
            let direct: f64 = all.iter().map(|p| p.density()).sum::<f64>() / all.len() as f64;
            prop_assert!((r.avg_density.unwrap() - direct).abs() < 1e-12);
        }
    }
}
