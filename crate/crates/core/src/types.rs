//! Shared domain types: entity types, sentences, spans.
//!
//! All span offsets are Unicode scalar indices into the sentence text, never
//! byte offsets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid entity type name {0:?}: expected [A-Z][A-Z0-9_]*")]
pub struct InvalidEntityType(pub String);

/// Short uppercase tag naming an entity type, e.g. `DRINK`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EntityType(String);

impl EntityType {
    pub fn new(name: impl Into<String>) -> Result<Self, InvalidEntityType> {
        let name = name.into();
        let mut chars = name.chars();
        let ok = matches!(chars.next(), Some(c) if c.is_ascii_uppercase())
            && chars.all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_');
        if ok {
            Ok(EntityType(name))
        } else {
            Err(InvalidEntityType(name))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for EntityType {
    type Error = InvalidEntityType;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        EntityType::new(value)
    }
}

impl From<EntityType> for String {
    fn from(value: EntityType) -> Self {
        value.0
    }
}

impl FromStr for EntityType {
    type Err = InvalidEntityType;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EntityType::new(s)
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Strict parsing aborts on the first malformed row; lenient parsing skips
/// and counts it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ParseMode {
    #[default]
    Strict,
    Lenient,
}

/// Where a document came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Wikipedia,
    Reddit,
    Stackexchange,
    Other,
}

impl SourceKind {
    pub const ALL: [SourceKind; 4] = [
        SourceKind::Wikipedia,
        SourceKind::Reddit,
        SourceKind::Stackexchange,
        SourceKind::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::Wikipedia => "wikipedia",
            SourceKind::Reddit => "reddit",
            SourceKind::Stackexchange => "stackexchange",
            SourceKind::Other => "other",
        }
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "wikipedia" => Ok(SourceKind::Wikipedia),
            "reddit" => Ok(SourceKind::Reddit),
            "stackexchange" => Ok(SourceKind::Stackexchange),
            "other" => Ok(SourceKind::Other),
            _ => Err(format!("unknown source kind {s:?}")),
        }
    }
}

/// A cleaned corpus sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub sent_id: String,
    pub text: String,
    pub source: SourceKind,
    #[serde(default)]
    pub entity_type_hint: Option<EntityType>,
    pub doc_id: String,
}

impl Sentence {
    /// Convenience constructor used by tests and bindings.
    pub fn new(sent_id: impl Into<String>, text: impl Into<String>) -> Self {
        let sent_id = sent_id.into();
        let doc_id = sent_id
            .rsplit_once('#')
            .map(|(d, _)| d.to_string())
            .unwrap_or_else(|| sent_id.clone());
        Sentence {
            sent_id,
            text: text.into(),
            source: SourceKind::Other,
            entity_type_hint: None,
            doc_id,
        }
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Origin {
    Auto,
    Human,
}

/// An entity mention, `[start, end)` in Unicode scalar offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub entity_type: EntityType,
    pub surface: String,
    #[serde(default, skip_serializing_if = "Option::is_none", rename = "item_id")]
    pub dict_item_id: Option<u64>,
    pub origin: Origin,
}

impl Span {
    /// Identity used for equality across annotators and evaluation.
    pub fn key(&self) -> (usize, usize, &EntityType) {
        (self.start, self.end, &self.entity_type)
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Record of a cross-type tie resolved by priority order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictNote {
    pub start: usize,
    pub end: usize,
    pub candidate_types: Vec<EntityType>,
    pub chosen: EntityType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedSentence {
    pub sentence: Sentence,
    pub spans: Vec<Span>,
    pub conflicts: Vec<ConflictNote>,
}

/// Flat JSONL form of an [`AnnotatedSentence`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedRecord {
    pub sent_id: String,
    pub text: String,
    pub spans: Vec<Span>,
    #[serde(default)]
    pub conflicts: Vec<ConflictNote>,
    #[serde(default = "default_source")]
    pub source: SourceKind,
    #[serde(default)]
    pub entity_type_hint: Option<EntityType>,
    #[serde(default)]
    pub doc_id: Option<String>,
}

fn default_source() -> SourceKind {
    SourceKind::Other
}

impl From<&AnnotatedSentence> for AnnotatedRecord {
    fn from(a: &AnnotatedSentence) -> Self {
        AnnotatedRecord {
            sent_id: a.sentence.sent_id.clone(),
            text: a.sentence.text.clone(),
            spans: a.spans.clone(),
            conflicts: a.conflicts.clone(),
            source: a.sentence.source,
            entity_type_hint: a.sentence.entity_type_hint.clone(),
            doc_id: Some(a.sentence.doc_id.clone()),
        }
    }
}

impl From<AnnotatedRecord> for AnnotatedSentence {
    fn from(r: AnnotatedRecord) -> Self {
        let doc_id = r.doc_id.unwrap_or_else(|| {
            r.sent_id
                .rsplit_once('#')
                .map(|(d, _)| d.to_string())
                .unwrap_or_else(|| r.sent_id.clone())
        });
        AnnotatedSentence {
            sentence: Sentence {
                sent_id: r.sent_id,
                text: r.text,
                source: r.source,
                entity_type_hint: r.entity_type_hint,
                doc_id,
            },
            spans: r.spans,
            conflicts: r.conflicts,
        }
    }
}

/// Slice `text` by Unicode scalar offsets. Returns `None` when out of range.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut indices = text
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(text.len()));
    let b_start = indices.nth(start)?;
    let b_end = if end == start {
        b_start
    } else {
        indices.nth(end - start - 1)?
    };
    Some(&text[b_start..b_end])
}
