//! File-level readers and writers shared by the pipeline and the CLI.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::docbuild::{build_document, BuildError, Segmenter};
use crate::model::{DocId, DocPairAlignment, DocStore, DocumentMeta, LanguageTag, ModelError, StructuredDocument};
use crate::xml::{self, CodecError, LinkGroup};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Codec {
        path: PathBuf,
        #[source]
        source: CodecError,
    },
    #[error("{path} line {line}: {message}")]
    Record { path: PathBuf, line: usize, message: String },
    #[error("{path}: link group {from}|{to} references unknown document {missing}")]
    UnknownDocument { path: PathBuf, from: DocId, to: DocId, missing: DocId },
    #[error("{path}: link group {pair}: {source}")]
    Pair {
        path: PathBuf,
        pair: String,
        #[source]
        source: ModelError,
    },
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Read { path: path.to_owned(), source })
}

/// Writes `contents`, creating parent directories as needed.
pub fn write_text(path: &Path, contents: &str) -> Result<(), IoError> {
    let err = |source| IoError::Write { path: path.to_owned(), source };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(err)?;
    }
    fs::write(path, contents).map_err(err)
}

/// One line of a raw build input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRecord {
    /// Defaults to `<lang>:<line number>`.
    #[serde(default)]
    pub id: Option<String>,
    pub url: String,
    pub lang: String,
    #[serde(default)]
    pub collection: String,
    pub text: String,
}

/// Reads JSONL raw records as `(meta, text)`; blank lines are skipped.
pub fn read_raw_jsonl(path: &Path) -> Result<Vec<(DocumentMeta, String)>, IoError> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| IoError::Record { path: path.to_owned(), line: i + 1, message };
        let record: RawRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let lang = LanguageTag::new(record.lang).map_err(|e| bad(e.to_string()))?;
        let id = record.id.unwrap_or_else(|| format!("{lang}:{}", i + 1));
        let meta = DocumentMeta { doc_id: DocId::new(id), url: record.url, lang, collection: record.collection };
        out.push((meta, record.text));
    }
    Ok(out)
}

/// Builds every raw record; records whose text holds no sentence are
/// returned separately by id rather than failing the batch.
pub fn build_all(
    raw: Vec<(DocumentMeta, String)>,
    segmenter: &dyn Segmenter,
) -> Result<(Vec<StructuredDocument>, Vec<DocId>), BuildError> {
    use rayon::prelude::*;
    let built: Vec<Result<StructuredDocument, BuildError>> =
        raw.into_par_iter().map(|(meta, text)| build_document(&text, meta, segmenter)).collect();
    let mut docs = Vec::new();
    let mut empty = Vec::new();
    for result in built {
        match result {
            Ok(doc) => docs.push(doc),
            Err(BuildError::EmptyDocument(id)) => empty.push(DocId::new(id)),
            Err(e) => return Err(e),
        }
    }
    Ok((docs, empty))
}

pub fn read_corpus(path: &Path) -> Result<Vec<StructuredDocument>, IoError> {
    xml::parse_corpus_xml(&read_text(path)?).map_err(|source| IoError::Codec { path: path.to_owned(), source })
}

pub fn write_corpus<'a>(path: &Path, docs: impl IntoIterator<Item = &'a StructuredDocument>) -> Result<(), IoError> {
    write_text(path, &xml::write_corpus_xml(docs))
}

/// Loads several corpus files into one store.
pub fn read_store(paths: &[PathBuf]) -> Result<DocStore, IoError> {
    let mut store = DocStore::new();
    for path in paths {
        for doc in read_corpus(path)? {
            store.insert(Arc::new(doc));
        }
    }
    Ok(store)
}

pub fn read_link_groups(path: &Path) -> Result<Vec<LinkGroup>, IoError> {
    xml::parse_cesalign(&read_text(path)?).map_err(|source| IoError::Codec { path: path.to_owned(), source })
}

/// Resolves each group's documents in `store`. Links are not verified;
/// see [`crate::alignment::verify_links`].
pub fn resolve_groups(
    path: &Path,
    groups: Vec<LinkGroup>,
    store: &DocStore,
) -> Result<Vec<(Arc<StructuredDocument>, Arc<StructuredDocument>, LinkGroup)>, IoError> {
    groups
        .into_iter()
        .map(|g| {
            let lookup = |id: &DocId| {
                store.get(id.as_str()).cloned().ok_or_else(|| IoError::UnknownDocument {
                    path: path.to_owned(),
                    from: g.from_doc.clone(),
                    to: g.to_doc.clone(),
                    missing: id.clone(),
                })
            };
            let (src, tgt) = (lookup(&g.from_doc)?, lookup(&g.to_doc)?);
            Ok((src, tgt, g))
        })
        .collect()
}

/// Reads already verified pairs; any invalid link is an error.
pub fn read_pairs(path: &Path, store: &DocStore) -> Result<Vec<DocPairAlignment>, IoError> {
    let groups = read_link_groups(path)?;
    resolve_groups(path, groups, store)?
        .into_iter()
        .map(|(src, tgt, g)| {
            DocPairAlignment::new(src, tgt, g.links).map_err(|source| IoError::Pair {
                path: path.to_owned(),
                pair: format!("{}|{}", g.from_doc, g.to_doc),
                source,
            })
        })
        .collect()
}

pub fn link_group(pair: &DocPairAlignment) -> LinkGroup {
    LinkGroup::new(pair.src().doc_id().clone(), pair.tgt().doc_id().clone(), pair.links().to_vec())
}

pub fn write_pairs(path: &Path, pairs: &[DocPairAlignment]) -> Result<(), IoError> {
    let groups: Vec<LinkGroup> = pairs.iter().map(link_group).collect();
    write_text(path, &xml::write_cesalign(&groups))
}

/// One JSON object per line.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("plain data always serializes"));
        out.push('\n');
    }
    out
}

/// Undoes the `\n`, `\r`, `\t` and `\\` escapes used for one-document-per-line files.
pub fn unescape_line(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('t') => out.push('\t'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

/// Reads a one-document-per-line file with escaped newlines.
pub fn read_line_documents(path: &Path) -> Result<Vec<String>, IoError> {
    Ok(read_text(path)?.lines().map(unescape_line).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::docbuild::default_segmenter;

    #[test]
    fn raw_records_and_building() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.jsonl");
        fs::write(
            &path,
            "{\"url\":\"u\",\"lang\":\"eu\",\"text\":\"Kaixo. Zer moduz?\"}\n\n\
             {\"id\":\"x\",\"url\":\"v\",\"lang\":\"en\",\"collection\":\"c\",\"text\":\"\\n\\n\"}\n",
        )
        .unwrap();
        let raw = read_raw_jsonl(&path).unwrap();
        assert_eq!(raw[0].0.doc_id.as_str(), "eu:1");
        assert_eq!(raw[1].0.doc_id.as_str(), "x");
        let (docs, empty) = build_all(raw, &default_segmenter()).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].sentence_count(), 2);
        assert_eq!(empty, [DocId::new("x")]);

        fs::write(&path, "{\"url\":\"u\",\"lang\":\"EU\",\"text\":\"x\"}\n").unwrap();
        assert!(matches!(read_raw_jsonl(&path), Err(IoError::Record { line: 1, .. })));
    }

    #[test]
    fn corpus_and_pairs_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let raw = vec![
            (
                DocumentMeta {
                    doc_id: "a".into(),
                    url: "u".into(),
                    lang: LanguageTag::new("eu").unwrap(),
                    collection: "c".into(),
                },
                "Kaixo. Agur.".to_string(),
            ),
            (
                DocumentMeta {
                    doc_id: "b".into(),
                    url: "u".into(),
                    lang: LanguageTag::english(),
                    collection: "c".into(),
                },
                "Hello. Bye.".to_string(),
            ),
        ];
        let (docs, _) = build_all(raw, &default_segmenter()).unwrap();
        let corpus = dir.path().join("nested/docs.xml");
        write_corpus(&corpus, &docs).unwrap();
        let store = read_store(&[corpus]).unwrap();
        assert_eq!(store.len(), 2);
        let cesalign = dir.path().join("links.xml");
        fs::write(&cesalign, xml::write_cesalign(&[LinkGroup::new("a".into(), "b".into(), vec![])])).unwrap();
        let pairs = read_pairs(&cesalign, &store).unwrap();
        assert_eq!(pairs[0].pair_id(), "a|b");
        let out = dir.path().join("out.xml");
        write_pairs(&out, &pairs).unwrap();
        assert_eq!(read_text(&out).unwrap(), read_text(&cesalign).unwrap());
        fs::write(&cesalign, xml::write_cesalign(&[LinkGroup::new("a".into(), "zz".into(), vec![])])).unwrap();
        assert!(matches!(read_pairs(&cesalign, &store), Err(IoError::UnknownDocument { .. })));
    }

    #[test]
    fn line_escapes() {
        assert_eq!(unescape_line(r"a\nb\\n\tc\q\"), "a\nb\\n\tc\\q\\");
    }
}
