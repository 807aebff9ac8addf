//! Codecs for the document XML and cesAlign interchange formats.
//!
//! Document XML:
//!
//! ```xml
//! <doc id="..." url="..." lang="ca" collection="...">
//! <P id="1">
//! <s id="1.1">Text of the first sentence.</s>
//! </P>
//! </doc>
//! ```
//!
//! A corpus file wraps any number of `<doc>` elements in `<corpus>`.
//!
//! cesAlign:
//!
//! ```xml
//! <cesAlign version="1.0">
//! <linkGrp targType="s" fromDoc="a" toDoc="b">
//! <link xtargets="4.3 4.4;2.1" bleualign="0.5" bicleaner="0.7"/>
//! </linkGrp>
//! </cesAlign>
//! ```
//!
//! Writers emit one element per line; readers ignore whitespace between
//! elements but keep sentence text exactly.

use roxmltree::{Document, Node, ParsingOptions};
use thiserror::Error;

use crate::model::{
    AlignmentLink, AlignmentScoreSet, DocId, DocumentMeta, LanguageTag, ModelError, Paragraph, ScoreField, Sentence,
    SentenceId, StructuredDocument,
};

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("malformed XML at line {line}, column {column}: {message}")]
    Xml { line: u32, column: u32, message: String },
    #[error("line {line}: {source}")]
    Structure {
        line: u32,
        #[source]
        source: ModelError,
    },
    #[error("line {line}: {message}")]
    Format { line: u32, message: String },
}

/// One `<linkGrp>`: the links between two documents, by document id.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGroup {
    pub from_doc: DocId,
    pub to_doc: DocId,
    pub links: Vec<AlignmentLink>,
    /// English document the pair was derived through, for pivoted pairs.
    pub pivot: Option<DocId>,
    /// True when the links were composed through a pivot rather than
    /// produced by an aligner.
    pub composed: bool,
}

impl LinkGroup {
    pub fn new(from_doc: DocId, to_doc: DocId, links: Vec<AlignmentLink>) -> Self {
        Self { from_doc, to_doc, links, pivot: None, composed: false }
    }
}

fn parse_xml(text: &str) -> Result<Document<'_>, CodecError> {
    let options = ParsingOptions { allow_dtd: true, ..ParsingOptions::default() };
    Document::parse_with_options(text, options).map_err(|e| {
        let pos = e.pos();
        CodecError::Xml { line: pos.row, column: pos.col, message: e.to_string() }
    })
}

fn line_of(node: Node<'_, '_>) -> u32 {
    node.document().text_pos_at(node.range().start).row
}

fn format_err(node: Node<'_, '_>, message: impl Into<String>) -> CodecError {
    CodecError::Format { line: line_of(node), message: message.into() }
}

fn structure_err(node: Node<'_, '_>, source: ModelError) -> CodecError {
    CodecError::Structure { line: line_of(node), source }
}

fn required<'a>(node: Node<'a, '_>, name: &str) -> Result<&'a str, CodecError> {
    node.attribute(name)
        .ok_or_else(|| format_err(node, format!("<{}> is missing attribute {name:?}", node.tag_name().name())))
}

/// Element children, rejecting stray non-whitespace text.
fn child_elements<'a, 'i>(node: Node<'a, 'i>) -> Result<Vec<Node<'a, 'i>>, CodecError> {
    let mut out = Vec::new();
    for child in node.children() {
        if child.is_element() {
            out.push(child);
        } else if child.is_text() && !child.text().unwrap_or("").trim().is_empty() {
            return Err(format_err(child, format!("unexpected text inside <{}>", node.tag_name().name())));
        }
    }
    Ok(out)
}

fn expect_name(node: Node<'_, '_>, name: &str) -> Result<(), CodecError> {
    if node.tag_name().name() != name {
        return Err(format_err(node, format!("expected <{name}>, found <{}>", node.tag_name().name())));
    }
    Ok(())
}

fn doc_from_node(node: Node<'_, '_>) -> Result<StructuredDocument, CodecError> {
    expect_name(node, "doc")?;
    let lang = LanguageTag::new(required(node, "lang")?).map_err(|e| structure_err(node, e))?;
    let meta = DocumentMeta {
        doc_id: DocId::new(required(node, "id")?),
        url: required(node, "url")?.to_owned(),
        lang,
        collection: required(node, "collection")?.to_owned(),
    };
    let mut paragraphs = Vec::new();
    for p in child_elements(node)? {
        expect_name(p, "P")?;
        let raw_id = required(p, "id")?;
        let id: u32 = raw_id
            .parse()
            .ok()
            .filter(|&n| n > 0 && !raw_id.starts_with(['0', '+']))
            .ok_or_else(|| format_err(p, format!("invalid paragraph id {raw_id:?}")))?;
        let mut sentences = Vec::new();
        for s in child_elements(p)? {
            expect_name(s, "s")?;
            let sid: SentenceId = required(s, "id")?.parse().map_err(|e| structure_err(s, e))?;
            if sid.paragraph() != id {
                let expected = SentenceId::new(id, sentences.len() as u32 + 1).map_err(|e| structure_err(s, e))?;
                return Err(structure_err(s, ModelError::SentenceOutOfSequence { expected, found: sid }));
            }
            let mut text = String::new();
            for part in s.children() {
                if part.is_element() {
                    return Err(format_err(part, format!("unexpected element inside sentence {sid}")));
                }
                if let Some(t) = part.text() {
                    text.push_str(t);
                }
            }
            sentences.push(Sentence { id: sid, text });
        }
        paragraphs.push(Paragraph { id, sentences });
    }
    StructuredDocument::new(meta, paragraphs).map_err(|e| structure_err(node, e))
}

/// Parses a single `<doc>` element.
pub fn parse_document_xml(text: &str) -> Result<StructuredDocument, CodecError> {
    let xml = parse_xml(text)?;
    doc_from_node(xml.root_element())
}

/// Parses a `<corpus>` of documents; a bare `<doc>` root is also accepted.
pub fn parse_corpus_xml(text: &str) -> Result<Vec<StructuredDocument>, CodecError> {
    let xml = parse_xml(text)?;
    let root = xml.root_element();
    if root.tag_name().name() == "doc" {
        return Ok(vec![doc_from_node(root)?]);
    }
    expect_name(root, "corpus")?;
    child_elements(root)?.into_iter().map(doc_from_node).collect()
}

fn escape_into(out: &mut String, text: &str, attribute: bool) {
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' if attribute => out.push_str("&quot;"),
            '\t' if attribute => out.push_str("&#9;"),
            '\n' => out.push_str("&#10;"),
            '\r' => out.push_str("&#13;"),
            _ => out.push(c),
        }
    }
}

fn push_attr(out: &mut String, name: &str, value: &str) {
    out.push(' ');
    out.push_str(name);
    out.push_str("=\"");
    escape_into(out, value, true);
    out.push('"');
}

fn write_doc_element(out: &mut String, doc: &StructuredDocument) {
    out.push_str("<doc");
    push_attr(out, "id", doc.doc_id().as_str());
    push_attr(out, "url", doc.url());
    push_attr(out, "lang", doc.lang().as_str());
    push_attr(out, "collection", doc.collection());
    out.push_str(">\n");
    for p in doc.paragraphs() {
        out.push_str(&format!("<P id=\"{}\">\n", p.id));
        for s in &p.sentences {
            out.push_str(&format!("<s id=\"{}\">", s.id));
            escape_into(out, &s.text, false);
            out.push_str("</s>\n");
        }
        out.push_str("</P>\n");
    }
    out.push_str("</doc>\n");
}

const XML_DECL: &str = "<?xml version=\"1.0\" encoding=\"utf-8\"?>\n";

pub fn write_document_xml(doc: &StructuredDocument) -> String {
    let mut out = String::from(XML_DECL);
    write_doc_element(&mut out, doc);
    out
}

pub fn write_corpus_xml<'a>(docs: impl IntoIterator<Item = &'a StructuredDocument>) -> String {
    let mut out = String::from(XML_DECL);
    out.push_str("<corpus>\n");
    for doc in docs {
        write_doc_element(&mut out, doc);
    }
    out.push_str("</corpus>\n");
    out
}

fn parse_ids(node: Node<'_, '_>, side: &str, xtargets: &str) -> Result<Vec<SentenceId>, CodecError> {
    let ids = side
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<Vec<SentenceId>, _>>()
        .map_err(|e| structure_err(node, e))?;
    if ids.is_empty() {
        return Err(format_err(node, format!("empty side in xtargets {xtargets:?}")));
    }
    Ok(ids)
}

fn link_from_node(node: Node<'_, '_>) -> Result<AlignmentLink, CodecError> {
    let xtargets = required(node, "xtargets")?;
    let (src, tgt) = xtargets
        .split_once(';')
        .filter(|(_, t)| !t.contains(';'))
        .ok_or_else(|| format_err(node, format!("xtargets {xtargets:?} must have exactly one ';'")))?;
    let src = parse_ids(node, src, xtargets)?;
    let tgt = parse_ids(node, tgt, xtargets)?;
    let mut scores = AlignmentScoreSet::default();
    for field in ScoreField::ALL {
        if let Some(raw) = node.attribute(field.name()) {
            let value: f64 = raw
                .trim()
                .parse()
                .map_err(|_| format_err(node, format!("{} score {raw:?} is not a number", field.name())))?;
            scores.set(field, Some(value));
        }
    }
    AlignmentLink::new(src, tgt, scores).map_err(|e| structure_err(node, e))
}

/// Parses every `<linkGrp>` of a cesAlign file, preserving link order.
pub fn parse_cesalign(text: &str) -> Result<Vec<LinkGroup>, CodecError> {
    let xml = parse_xml(text)?;
    let root = xml.root_element();
    expect_name(root, "cesAlign")?;
    let mut groups = Vec::new();
    for grp in child_elements(root)? {
        expect_name(grp, "linkGrp")?;
        if let Some(kind) = grp.attribute("targType") {
            if kind != "s" {
                return Err(format_err(grp, format!("unsupported targType {kind:?}")));
            }
        }
        let links = child_elements(grp)?
            .into_iter()
            .map(|link| expect_name(link, "link").and_then(|_| link_from_node(link)))
            .collect::<Result<Vec<_>, _>>()?;
        groups.push(LinkGroup {
            from_doc: DocId::new(required(grp, "fromDoc")?),
            to_doc: DocId::new(required(grp, "toDoc")?),
            links,
            pivot: grp.attribute("pivot").map(DocId::new),
            composed: grp.attribute("composed") == Some("yes"),
        });
    }
    Ok(groups)
}

fn render_ids(ids: &[SentenceId]) -> String {
    ids.iter().map(SentenceId::to_string).collect::<Vec<_>>().join(" ")
}

pub fn write_cesalign<'a>(groups: impl IntoIterator<Item = &'a LinkGroup>) -> String {
    let mut out = String::from(XML_DECL);
    out.push_str("<!DOCTYPE cesAlign PUBLIC \"-//CES//DTD XML cesAlign//EN\" \"\">\n");
    out.push_str("<cesAlign version=\"1.0\">\n");
    for group in groups {
        out.push_str("<linkGrp targType=\"s\"");
        push_attr(&mut out, "fromDoc", group.from_doc.as_str());
        push_attr(&mut out, "toDoc", group.to_doc.as_str());
        if let Some(pivot) = &group.pivot {
            push_attr(&mut out, "pivot", pivot.as_str());
        }
        if group.composed {
            push_attr(&mut out, "composed", "yes");
        }
        out.push_str(">\n");
        for link in &group.links {
            out.push_str("<link");
            let xtargets = format!("{};{}", render_ids(link.src()), render_ids(link.tgt()));
            push_attr(&mut out, "xtargets", &xtargets);
            for field in ScoreField::ALL {
                if let Some(value) = link.scores().get(field) {
                    push_attr(&mut out, field.name(), &value.to_string());
                }
            }
            out.push_str("/>\n");
        }
        out.push_str("</linkGrp>\n");
    }
    out.push_str("</cesAlign>\n");
    out
}
