//! Building, curating and exporting document-level parallel corpora.
//!
//! The crate covers the whole path from raw extracted web text to
//! fine-tuning records: sentence segmentation into structured documents,
//! exact deduplication, verification of sentence alignment links,
//! pivoting through English, threshold and quality filtering, test split
//! decontamination, chunked prompt/completion records, document-level
//! metrics and corpus statistics.

pub mod alignment;
pub mod chunker;
pub mod decontam;
pub mod dedup;
pub mod docbuild;
pub mod filter;
pub mod io;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod pivot;
pub mod stats;
pub mod xml;

pub use model::{
    AlignmentLink, AlignmentScoreSet, DocId, DocPairAlignment, DocStore, DocumentMeta, LanguageTag, Paragraph,
    Sentence, SentenceId, StructuredDocument,
};
