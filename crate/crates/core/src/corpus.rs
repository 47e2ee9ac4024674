//! Wikitext cleaning, link extraction and entity annotation.
//!
//! The grammar is a pragmatic subset of MediaWiki markup:
//!
//! * `[[Target|anchor]]` emits `anchor`, `[[Target]]` emits `Target`;
//!   `Category:`, `File:` and `Image:` links are removed outright.
//! * `{{...}}` templates are removed, nested up to [`MAX_TEMPLATE_DEPTH`].
//! * HTML tags and `<!-- comments -->` are removed; text between tags stays.
//! * Runs of two or more apostrophes (bold/italic markers) are removed.
//! * Heading lines `== Title ==` emit `Title`.
//!
//! Everything else is copied through. Malformed constructs never abort the
//! parse: the remainder of the source is emitted literally and a warning
//! is recorded.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::kgstore::TitleIndex;
use crate::text::word_count;

pub const MAX_TEMPLATE_DEPTH: usize = 8;

/// Half-open byte range into emitted plain text.
pub type Span = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WikiLink {
    pub target_title: String,
    pub anchor_text: String,
    pub byte_span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarningKind {
    UnclosedLink,
    UnclosedTemplate,
    TemplateTooDeep,
    UnclosedComment,
}

/// A recoverable markup problem at a byte offset of the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParseWarning {
    pub kind: WarningKind,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedText {
    pub text: String,
    pub links: Vec<WikiLink>,
    pub warnings: Vec<ParseWarning>,
}

impl ParsedText {
    pub fn is_malformed(&self) -> bool {
        !self.warnings.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub qid: String,
    pub spans: Vec<Span>,
}

/// One WikiEntities record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedDocument {
    pub doc_id: String,
    pub text: String,
    #[serde(rename = "entities")]
    pub mentions: Vec<EntityMention>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub document: AnnotatedDocument,
    pub warnings: Vec<ParseWarning>,
    /// Links whose target did not resolve to an entity.
    pub unmapped_links: usize,
}

pub fn parse_wikitext(source: &str) -> ParsedText {
    let mut p = Parser {
        src: source,
        out: String::with_capacity(source.len()),
        links: Vec::new(),
        warnings: Vec::new(),
    };
    p.run(0, source.len(), true);
    ParsedText {
        text: p.out,
        links: p.links,
        warnings: p.warnings,
    }
}

struct Parser<'a> {
    src: &'a str,
    out: String,
    links: Vec<WikiLink>,
    warnings: Vec<ParseWarning>,
}

impl Parser<'_> {
    /// Emits `src[start..end]`. Returns `false` once the remainder of the
    /// document has been dumped literally after a malformed construct.
    fn run(&mut self, start: usize, end: usize, record_links: bool) -> bool {
        let bytes = self.src.as_bytes();
        let mut i = start;
        let mut line_start = start == 0 || bytes.get(start.wrapping_sub(1)) == Some(&b'\n');
        while i < end {
            if line_start && bytes[i] == b'=' {
                if let Some((inner_s, inner_e, line_end)) = heading(self.src, i, end) {
                    if !self.run(inner_s, inner_e, record_links) {
                        self.out.push_str(&self.src[inner_e..end]);
                        return false;
                    }
                    i = line_end;
                    line_start = false;
                    continue;
                }
            }
            line_start = false;
            let rest = &bytes[i..end];
            if rest.starts_with(b"[[") {
                match find_close(bytes, i + 2, end, b"[[", b"]]", usize::MAX) {
                    Close::Found(j) => {
                        self.link(i + 2, j, record_links);
                        i = j + 2;
                    }
                    _ => return self.bail(WarningKind::UnclosedLink, i, end),
                }
            } else if rest.starts_with(b"{{") {
                match find_close(bytes, i + 2, end, b"{{", b"}}", MAX_TEMPLATE_DEPTH) {
                    Close::Found(j) => i = j + 2,
                    Close::TooDeep => return self.bail(WarningKind::TemplateTooDeep, i, end),
                    Close::Missing => return self.bail(WarningKind::UnclosedTemplate, i, end),
                }
            } else if rest.starts_with(b"<!--") {
                match find(bytes, i + 4, end, b"-->") {
                    Some(j) => i = j + 3,
                    None => return self.bail(WarningKind::UnclosedComment, i, end),
                }
            } else if rest[0] == b'<' && is_tag_start(rest) {
                match find(bytes, i + 1, end, b">") {
                    Some(j) => i = j + 1,
                    None => {
                        self.out.push('<');
                        i += 1;
                    }
                }
            } else if rest.starts_with(b"''") {
                while i < end && bytes[i] == b'\'' {
                    i += 1;
                }
            } else {
                let ch = self.src[i..].chars().next().expect("char boundary");
                if ch == '\n' {
                    line_start = true;
                }
                self.out.push(ch);
                i += ch.len_utf8();
            }
        }
        true
    }

    fn bail(&mut self, kind: WarningKind, offset: usize, end: usize) -> bool {
        self.warnings.push(ParseWarning { kind, offset });
        self.out.push_str(&self.src[offset..end]);
        false
    }

    fn link(&mut self, inner_start: usize, inner_end: usize, record: bool) {
        let inner = &self.src[inner_start..inner_end];
        let (target, anchor_range) = match inner.find('|') {
            Some(p) => (&inner[..p], Some((inner_start + p + 1, inner_end))),
            None => (inner, None),
        };
        let target = target.trim();
        if is_hidden_namespace(target) {
            return;
        }
        let start = self.out.len();
        match anchor_range {
            Some((s, e)) => {
                // anchors are rendered with the same rules but their own
                // nested links are not recorded
                let mut sub = Parser {
                    src: self.src,
                    out: String::new(),
                    links: Vec::new(),
                    warnings: Vec::new(),
                };
                sub.run(s, e, false);
                self.out.push_str(&sub.out);
            }
            None => self.out.push_str(target),
        }
        let end = self.out.len();
        if record && end > start && !target.is_empty() {
            self.links.push(WikiLink {
                target_title: target.to_string(),
                anchor_text: self.out[start..end].to_string(),
                byte_span: (start, end),
            });
        }
    }
}

enum Close {
    Found(usize),
    Missing,
    TooDeep,
}

/// Position of the closer matching an opener that ends just before `from`.
fn find_close(bytes: &[u8], from: usize, end: usize, open: &[u8], close: &[u8], max_depth: usize) -> Close {
    let mut depth = 1usize;
    let mut i = from;
    while i < end {
        let rest = &bytes[i..end];
        if rest.starts_with(open) {
            depth += 1;
            if depth > max_depth {
                return Close::TooDeep;
            }
            i += 2;
        } else if rest.starts_with(close) {
            depth -= 1;
            if depth == 0 {
                return Close::Found(i);
            }
            i += 2;
        } else {
            i += 1;
        }
    }
    Close::Missing
}

fn find(bytes: &[u8], from: usize, end: usize, needle: &[u8]) -> Option<usize> {
    if from >= end {
        return None;
    }
    bytes[from..end]
        .windows(needle.len())
        .position(|w| w == needle)
        .map(|p| p + from)
}

fn is_tag_start(rest: &[u8]) -> bool {
    let after = if rest.get(1) == Some(&b'/') { 2 } else { 1 };
    rest.get(after).is_some_and(|b| b.is_ascii_alphabetic())
}

fn is_hidden_namespace(target: &str) -> bool {
    let Some(colon) = target.find(':') else {
        return false;
    };
    let ns = target[..colon].trim();
    ["category", "file", "image"]
        .iter()
        .any(|n| ns.eq_ignore_ascii_case(n))
}

/// `(inner_start, inner_end, line_end)` for a `== text ==` line at `i`.
fn heading(src: &str, i: usize, end: usize) -> Option<(usize, usize, usize)> {
    let bytes = src.as_bytes();
    let line_end = find(bytes, i, end, b"\n").unwrap_or(end);
    let line = &src[i..line_end];
    let trimmed = line.trim_end();
    let lead = trimmed.bytes().take_while(|&b| b == b'=').count();
    let trail = trimmed.bytes().rev().take_while(|&b| b == b'=').count();
    if lead == 0 || trail == 0 || lead + trail >= trimmed.len() {
        return None;
    }
    let level = lead.min(trail);
    let inner = &trimmed[level..trimmed.len() - level];
    let pad_l = inner.len() - inner.trim_start().len();
    let inner_t = inner.trim();
    if inner_t.is_empty() {
        return None;
    }
    let s = i + level + pad_l;
    Some((s, s + inner_t.len(), line_end))
}

/// Groups resolvable links by entity id; unresolved links are dropped.
/// Mentions are ordered by their first span.
pub fn resolve_entities(links: &[WikiLink], index: &TitleIndex) -> Vec<EntityMention> {
    let mut grouped: BTreeMap<&str, Vec<Span>> = BTreeMap::new();
    for link in links {
        if let Some(qid) = index.resolve(&link.target_title) {
            grouped.entry(qid).or_default().push(link.byte_span);
        }
    }
    let mut mentions: Vec<EntityMention> = grouped
        .into_iter()
        .map(|(qid, mut spans)| {
            spans.sort_unstable();
            spans.dedup();
            EntityMention {
                qid: qid.to_string(),
                spans,
            }
        })
        .collect();
    mentions.sort_by(|a, b| a.spans[0].cmp(&b.spans[0]).then_with(|| a.qid.cmp(&b.qid)));
    mentions
}

pub fn annotate(doc_id: &str, source: &str, index: &TitleIndex) -> Annotation {
    let parsed = parse_wikitext(source);
    let mentions = resolve_entities(&parsed.links, index);
    let unmapped_links = parsed
        .links
        .iter()
        .filter(|l| index.resolve(&l.target_title).is_none())
        .count();
    Annotation {
        document: AnnotatedDocument {
            doc_id: doc_id.to_string(),
            text: parsed.text,
            mentions,
        },
        warnings: parsed.warnings,
        unmapped_links,
    }
}

/// Integer average (rounded half up), maximum and minimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub avg: u64,
    pub max: u64,
    pub min: u64,
}

impl Summary {
    fn of(values: &[u64]) -> Option<Self> {
        let n = values.len() as u64;
        if n == 0 {
            return None;
        }
        let sum: u64 = values.iter().sum();
        Some(Self {
            avg: (2 * sum + n) / (2 * n),
            max: *values.iter().max()?,
            min: *values.iter().min()?,
        })
    }
}

/// Corpus-level length and entity statistics. Aggregates are `None` for an
/// empty corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub num_texts: usize,
    pub words: Option<Summary>,
    pub entities: Option<Summary>,
}

pub fn corpus_stats<'a>(docs: impl IntoIterator<Item = &'a AnnotatedDocument>) -> CorpusStats {
    let mut words = Vec::new();
    let mut entities = Vec::new();
    for d in docs {
        words.push(word_count(&d.text) as u64);
        let mut qids: Vec<&str> = d.mentions.iter().map(|m| m.qid.as_str()).collect();
        qids.sort_unstable();
        qids.dedup();
        entities.push(qids.len() as u64);
    }
    CorpusStats {
        num_texts: words.len(),
        words: Summary::of(&words),
        entities: Summary::of(&entities),
    }
}
