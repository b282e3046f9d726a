//! Corpus ingestion: cleaning, Wikipedia lead-section selection, sentence
//! splitting and per-page / per-type caps.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{collapse_whitespace, nfc};
use crate::types::{EntityType, Sentence, SourceKind};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("document {0:?} has no introduction section")]
    NoIntroSection(String),
    #[error("cannot read {path}: {source}")]
    FileNotReadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    #[serde(default)]
    pub heading: Option<String>,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub doc_id: String,
    pub source: SourceKind,
    #[serde(default)]
    pub entity_type_hint: Option<EntityType>,
    #[serde(default)]
    pub page_id: Option<u64>,
    pub sections: Vec<Section>,
}

static TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"</?[A-Za-z!?/][^<>]*>").unwrap());
static URL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)(?:https?://|www\.)\S*").unwrap());
static EMOJI: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"\p{Extended_Pictographic}(?:[\u{FE0E}\u{FE0F}\u{1F3FB}-\u{1F3FF}\u{20E3}]|\u{200D}\p{Extended_Pictographic}?)*",
    )
    .unwrap()
});

const DECORATION: [char; 3] = ['*', '~', '^'];
const COLLAPSIBLE: [char; 8] = ['.', ',', ';', ':', '!', '?', '-', '_'];

/// Drop invalid UTF-8 sequences, then clean.
pub fn clean_bytes(raw: &[u8]) -> String {
    clean_text(&decode_lossless(raw))
}

fn decode_lossless(raw: &[u8]) -> String {
    let mut out = String::with_capacity(raw.len());
    for chunk in raw.utf8_chunks() {
        out.push_str(chunk.valid());
    }
    out
}

/// Strip markup tags, URLs, emoji, control characters and decorative
/// punctuation; normalize whitespace (paragraph breaks survive as a single
/// `\n`) and NFC. Idempotent.
pub fn clean_text(raw: &str) -> String {
    let mut current = raw.to_string();
    // removals can expose new matches (e.g. a tag inside a URL), so iterate
    for _ in 0..16 {
        let next = clean_once(&current);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

fn clean_once(raw: &str) -> String {
    let s = nfc(raw);
    let s = TAG.replace_all(&s, "");
    let s = URL.replace_all(&s, "");
    let s = EMOJI.replace_all(&s, "");

    let mut out = String::with_capacity(s.len());
    let mut prev: Option<char> = None;
    let mut chars = s.chars().peekable();
    while let Some(c) = chars.next() {
        let c = match c {
            '\r' => {
                if chars.peek() == Some(&'\n') {
                    continue;
                }
                '\n'
            }
            '\n' => '\n',
            c if c.is_whitespace() => ' ',
            c if c.is_control() => continue,
            c if DECORATION.contains(&c) => continue,
            c => c,
        };
        if COLLAPSIBLE.contains(&c) && prev == Some(c) {
            continue;
        }
        out.push(c);
        prev = Some(c);
    }

    let paragraphs: Vec<String> = out
        .split('\n')
        .map(collapse_whitespace)
        .filter(|p| !p.is_empty())
        .collect();
    nfc(&paragraphs.join("\n"))
}

/// Rule-based sentence splitter with an abbreviation list.
#[derive(Debug, Clone)]
pub struct SentenceSplitter {
    abbreviations: HashSet<String>,
}

const DEFAULT_ABBREVIATIONS: &str = include_str!("../data/abbreviations.txt");

static INITIALS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:\p{Alphabetic}\.)+$").unwrap());

impl Default for SentenceSplitter {
    fn default() -> Self {
        SentenceSplitter::from_list(DEFAULT_ABBREVIATIONS)
    }
}

impl SentenceSplitter {
    /// One abbreviation per line, `#` comments allowed.
    pub fn from_list(list: &str) -> Self {
        let abbreviations = list
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| l.to_lowercase())
            .collect();
        SentenceSplitter { abbreviations }
    }

    pub fn with_abbreviation(mut self, abbr: &str) -> Self {
        self.abbreviations.insert(abbr.to_lowercase());
        self
    }

    fn is_abbreviation(&self, word: &str) -> bool {
        self.abbreviations.contains(&word.to_lowercase()) || INITIALS.is_match(word)
    }

    /// Split on `.`, `!`, `?` (plus closing quotes/brackets) followed by
    /// whitespace and an uppercase letter, digit or opening quote. Line
    /// breaks always end a sentence. Output segments are whitespace-collapsed.
    pub fn split(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for line in text.split('\n') {
            let chars: Vec<char> = line.chars().collect();
            let mut seg_start = 0;
            let mut i = 0;
            while i < chars.len() {
                if !matches!(chars[i], '.' | '!' | '?') {
                    i += 1;
                    continue;
                }
                let term = i;
                let mut j = i + 1;
                while j < chars.len()
                    && matches!(
                        chars[j],
                        '.' | '!' | '?' | '"' | '\'' | '”' | '’' | ')' | ']'
                    )
                {
                    j += 1;
                }
                let mut k = j;
                while k < chars.len() && chars[k].is_whitespace() {
                    k += 1;
                }
                let opens = k > j
                    && k < chars.len()
                    && (chars[k].is_uppercase()
                        || chars[k].is_numeric()
                        || matches!(chars[k], '"' | '\'' | '“' | '‘' | '('));
                if opens
                    && !(j == term + 1
                        && chars[term] == '.'
                        && self.ends_abbreviation(&chars, seg_start, term))
                {
                    push_segment(&mut out, &chars[seg_start..j]);
                    seg_start = k;
                }
                i = j.max(i + 1);
            }
            push_segment(&mut out, &chars[seg_start..]);
        }
        out
    }

    fn ends_abbreviation(&self, chars: &[char], seg_start: usize, period: usize) -> bool {
        let mut w = period;
        while w > seg_start && !chars[w - 1].is_whitespace() {
            w -= 1;
        }
        let word: String = chars[w..=period].iter().collect();
        let word = word.trim_start_matches(['(', '"', '\'', '“', '‘']);
        self.is_abbreviation(word)
    }
}

fn push_segment(out: &mut Vec<String>, seg: &[char]) {
    let s: String = seg.iter().collect();
    let s = collapse_whitespace(&s);
    if !s.is_empty() {
        out.push(s);
    }
}

pub fn split_sentences(text: &str) -> Vec<String> {
    SentenceSplitter::default().split(text)
}

/// Body of the lead section: the first section whose heading is absent,
/// blank or "Introduction".
pub fn select_wikipedia_intro(doc: &RawDocument) -> Result<&str, CorpusError> {
    doc.sections
        .iter()
        .find(|s| match &s.heading {
            None => true,
            Some(h) => {
                let h = h.trim();
                h.is_empty() || h.eq_ignore_ascii_case("introduction")
            }
        })
        .map(|s| s.body.as_str())
        .ok_or_else(|| CorpusError::NoIntroSection(doc.doc_id.clone()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapConfig {
    /// Maximum sentences kept from one Wikipedia page.
    pub per_page_max: usize,
    /// Maximum sentences per (entity type hint, source) pair.
    pub per_type_per_source_max: usize,
}

impl Default for CapConfig {
    fn default() -> Self {
        CapConfig {
            per_page_max: 10,
            per_type_per_source_max: 10_000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub documents: usize,
    pub skipped_no_intro: usize,
    pub skipped_duplicate_id: usize,
    pub truncated_by_page_cap: usize,
    pub dropped_by_type_cap: usize,
    pub sentences: usize,
}

fn doc_sentences(
    doc: &RawDocument,
    caps: &CapConfig,
    splitter: &SentenceSplitter,
) -> Result<(Vec<String>, usize), CorpusError> {
    let text = if doc.source == SourceKind::Wikipedia {
        select_wikipedia_intro(doc)?.to_string()
    } else {
        doc.sections
            .iter()
            .map(|s| s.body.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    };
    let mut sentences = splitter.split(&clean_text(&text));
    let mut truncated = 0;
    if doc.source == SourceKind::Wikipedia && sentences.len() > caps.per_page_max {
        truncated = sentences.len() - caps.per_page_max;
        sentences.truncate(caps.per_page_max);
    }
    Ok((sentences, truncated))
}

/// Turn documents into capped, id-stamped sentences in document order.
///
/// Per-document work runs in parallel batches; cap accounting is done by the
/// single consumer loop so output is identical for any thread count.
pub fn ingest<I>(
    docs: I,
    caps: &CapConfig,
    splitter: &SentenceSplitter,
) -> (Vec<Sentence>, IngestReport)
where
    I: IntoIterator<Item = RawDocument>,
{
    const BATCH: usize = 512;
    let mut report = IngestReport::default();
    let mut out = Vec::new();
    let mut counts: HashMap<(Option<EntityType>, SourceKind), usize> = HashMap::new();
    let mut seen_ids = HashSet::new();

    let mut docs = docs.into_iter().peekable();
    while docs.peek().is_some() {
        let batch: Vec<RawDocument> = docs.by_ref().take(BATCH).collect();
        let processed: Vec<_> = batch
            .par_iter()
            .map(|d| doc_sentences(d, caps, splitter))
            .collect();
        for (doc, result) in batch.into_iter().zip(processed) {
            report.documents += 1;
            if !seen_ids.insert(doc.doc_id.clone()) {
                log::warn!("duplicate doc_id {:?}; skipping", doc.doc_id);
                report.skipped_duplicate_id += 1;
                continue;
            }
            let (sentences, truncated) = match result {
                Ok(v) => v,
                Err(e) => {
                    log::warn!("{e}; skipping");
                    report.skipped_no_intro += 1;
                    continue;
                }
            };
            report.truncated_by_page_cap += truncated;
            let key = (doc.entity_type_hint.clone(), doc.source);
            let count = counts.entry(key).or_insert(0);
            for (ordinal, text) in sentences.into_iter().enumerate() {
                if *count >= caps.per_type_per_source_max {
                    report.dropped_by_type_cap += 1;
                    continue;
                }
                *count += 1;
                out.push(Sentence {
                    sent_id: format!("{}#{}", doc.doc_id, ordinal),
                    text,
                    source: doc.source,
                    entity_type_hint: doc.entity_type_hint.clone(),
                    doc_id: doc.doc_id.clone(),
                });
            }
        }
    }
    report.sentences = out.len();
    (out, report)
}

/// Parse one corpus JSONL line, dropping invalid UTF-8 first.
pub fn parse_document_line(line: &[u8]) -> Result<RawDocument, String> {
    serde_json::from_str(&decode_lossless(line)).map_err(|e| e.to_string())
}

/// Read a corpus dump. Blank lines are skipped; malformed lines abort in
/// strict mode and are skipped in lenient mode.
pub fn read_corpus(path: &Path, lenient: bool) -> Result<Vec<RawDocument>, CorpusError> {
    let raw = std::fs::read(path).map_err(|source| CorpusError::FileNotReadable {
        path: path.to_path_buf(),
        source,
    })?;
    let mut docs = Vec::new();
    for (i, line) in raw.split(|b| *b == b'\n').enumerate() {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        match parse_document_line(line) {
            Ok(d) => docs.push(d),
            Err(reason) if !lenient => {
                return Err(CorpusError::MalformedLine {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason,
                })
            }
            Err(reason) => log::warn!("{}:{}: {reason}; skipping", path.display(), i + 1),
        }
    }
    Ok(docs)
}
