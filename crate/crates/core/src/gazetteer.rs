//! Per-entity-type surface-form dictionaries built from sub-graph heads.
//!
//! Entries are keyed by a normalization key (NFC, case fold, collapsed
//! whitespace); the original surface is kept for reporting. Insertion order is
//! preserved so serialized dictionaries are stable.

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kgstore::{ItemId, ItemIndex, SubGraph, INSTANCE_OF, SUBCLASS_OF};
use crate::text::{collapse_whitespace, fold_str, nfc};
use crate::types::EntityType;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DictError {
    #[error("cannot read {path}: {source}")]
    FileNotReadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid dictionary file {path}: {reason}")]
    InvalidFile { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "KG_P31")]
    KgP31,
    #[serde(rename = "KG_P279")]
    KgP279,
    #[serde(rename = "AUGMENT_LIST")]
    AugmentList,
    #[serde(rename = "MANUAL")]
    Manual,
}

impl Provenance {
    pub fn is_kg(self) -> bool {
        matches!(self, Provenance::KgP31 | Provenance::KgP279)
    }
}

/// NFC, simple case fold, whitespace collapsed and trimmed.
pub fn normalize_entry(surface: &str) -> String {
    collapse_whitespace(&fold_str(&nfc(surface)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictEntry {
    pub surface: String,
    #[serde(skip)]
    pub norm_key: String,
    pub item_id: Option<ItemId>,
    pub provenance: Provenance,
}

impl DictEntry {
    pub fn new(
        surface: impl Into<String>,
        item_id: Option<ItemId>,
        provenance: Provenance,
    ) -> Self {
        let surface = surface.into();
        DictEntry {
            norm_key: normalize_entry(&surface),
            surface,
            item_id,
            provenance,
        }
    }
}

/// Rejects entries that are almost certainly noise for string matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryLimits {
    pub min_chars: usize,
    pub max_tokens: usize,
}

impl Default for EntryLimits {
    fn default() -> Self {
        EntryLimits {
            min_chars: 2,
            max_tokens: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Insert {
    Added,
    Duplicate,
    Rejected(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dictionary {
    entity_type: EntityType,
    entries: IndexMap<String, DictEntry>,
}

impl Dictionary {
    pub fn new(entity_type: EntityType) -> Self {
        Dictionary {
            entity_type,
            entries: IndexMap::new(),
        }
    }

    /// Build from plain surfaces, all tagged `MANUAL`.
    pub fn from_surfaces<I, S>(entity_type: EntityType, surfaces: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut d = Dictionary::new(entity_type);
        for s in surfaces {
            d.insert(DictEntry::new(s, None, Provenance::Manual));
        }
        d
    }

    pub fn entity_type(&self) -> &EntityType {
        &self.entity_type
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &DictEntry> {
        self.entries.values()
    }

    pub fn contains_key(&self, norm_key: &str) -> bool {
        self.entries.contains_key(norm_key)
    }

    pub fn get(&self, surface: &str) -> Option<&DictEntry> {
        self.entries.get(&normalize_entry(surface))
    }

    pub fn norm_keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// First-wins insert; only rejects empty keys.
    pub fn insert(&mut self, entry: DictEntry) -> Insert {
        if entry.norm_key.is_empty() {
            return Insert::Rejected("empty after normalization");
        }
        if self.entries.contains_key(&entry.norm_key) {
            return Insert::Duplicate;
        }
        self.entries.insert(entry.norm_key.clone(), entry);
        Insert::Added
    }

    /// Insert subject to `limits`.
    pub fn insert_checked(&mut self, entry: DictEntry, limits: &EntryLimits) -> Insert {
        if !entry.norm_key.is_empty() {
            if entry.norm_key.chars().count() < limits.min_chars {
                log::warn!("rejecting short entry {:?}", entry.surface);
                return Insert::Rejected("too short");
            }
            if entry.norm_key.split(' ').count() > limits.max_tokens {
                log::warn!("rejecting long entry {:?}", entry.surface);
                return Insert::Rejected("too many tokens");
            }
        }
        self.insert(entry)
    }

    pub fn load(path: &Path) -> Result<Dictionary, DictError> {
        let raw = fs::read_to_string(path).map_err(|source| DictError::FileNotReadable {
            path: path.to_path_buf(),
            source,
        })?;
        Dictionary::from_json(&raw).map_err(|reason| DictError::InvalidFile {
            path: path.to_path_buf(),
            reason,
        })
    }

    pub fn from_json(raw: &str) -> Result<Dictionary, String> {
        let file: DictionaryFile = serde_json::from_str(raw).map_err(|e| e.to_string())?;
        if file.schema != SCHEMA_VERSION {
            return Err(format!("unsupported schema version {}", file.schema));
        }
        let mut d = Dictionary::new(file.entity_type);
        for e in file.entries {
            if e.provenance.is_kg() != e.item_id.is_some() {
                return Err(format!(
                    "entry {:?}: item_id must be present exactly for KG provenance",
                    e.surface
                ));
            }
            let entry = DictEntry::new(e.surface, e.item_id, e.provenance);
            if let Insert::Rejected(why) = d.insert(entry) {
                return Err(format!("invalid entry: {why}"));
            }
        }
        Ok(d)
    }

    pub fn to_json(&self) -> String {
        let file = DictionaryFileRef {
            schema: SCHEMA_VERSION,
            entity_type: &self.entity_type,
            entries: self.entries.values().collect(),
        };
        serde_json::to_string_pretty(&file).expect("dictionary serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), DictError> {
        let mut body = self.to_json();
        body.push('\n');
        fs::write(path, body).map_err(|source| DictError::Write {
            path: path.to_path_buf(),
            source,
        })
    }

    fn with_type(mut self, entity_type: EntityType) -> Self {
        self.entity_type = entity_type;
        self
    }
}

#[derive(Deserialize)]
struct DictionaryFile {
    schema: u32,
    entity_type: EntityType,
    entries: Vec<DictEntry>,
}

#[derive(Serialize)]
struct DictionaryFileRef<'a> {
    schema: u32,
    entity_type: &'a EntityType,
    entries: Vec<&'a DictEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BuildReport {
    pub unresolved_heads: usize,
    pub duplicates: usize,
    pub rejected: usize,
    pub ignored_relations: Vec<u32>,
}

/// Map sub-graph heads to their labels. P31 heads come first, then P279;
/// a label seen under both keeps the P31 provenance.
pub fn build_dictionary(
    subgraph: &SubGraph,
    items: &ItemIndex,
    etype: EntityType,
    limits: &EntryLimits,
) -> (Dictionary, BuildReport) {
    let mut dict = Dictionary::new(etype);
    let mut report = BuildReport::default();
    for &rel in subgraph.heads_by_relation.keys() {
        if rel != INSTANCE_OF && rel != SUBCLASS_OF {
            log::warn!("relation {rel} has no dictionary provenance; its heads are ignored");
            report.ignored_relations.push(rel);
        }
    }
    for (rel, provenance) in [
        (INSTANCE_OF, Provenance::KgP31),
        (SUBCLASS_OF, Provenance::KgP279),
    ] {
        let Some(heads) = subgraph.heads(rel) else {
            continue;
        };
        for &head in heads {
            let Some(item) = items.get(head) else {
                report.unresolved_heads += 1;
                continue;
            };
            let entry = DictEntry::new(item.label.clone(), Some(head), provenance);
            match dict.insert_checked(entry, limits) {
                Insert::Added => {}
                Insert::Duplicate => report.duplicates += 1,
                Insert::Rejected(_) => report.rejected += 1,
            }
        }
    }
    if report.unresolved_heads > 0 {
        log::warn!(
            "{} sub-graph heads have no item label",
            report.unresolved_heads
        );
    }
    (dict, report)
}

/// Union on normalization keys; `a` wins collisions.
pub fn union(a: &Dictionary, b: &Dictionary, etype: EntityType) -> Dictionary {
    let mut out = a.clone().with_type(etype);
    for entry in b.entries() {
        out.insert(entry.clone());
    }
    out
}

/// Entries of `a` whose key does not occur in `b`.
pub fn subtract(a: &Dictionary, b: &Dictionary) -> Dictionary {
    let mut out = Dictionary::new(a.entity_type.clone());
    for entry in a.entries().filter(|e| !b.contains_key(&e.norm_key)) {
        out.insert(entry.clone());
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AugmentReport {
    pub added: usize,
    pub duplicates: usize,
    pub rejected: usize,
}

/// Add one `AUGMENT_LIST` entry per non-empty, non-`#` line.
pub fn augment_from_str(
    d: &Dictionary,
    list: &str,
    limits: &EntryLimits,
) -> (Dictionary, AugmentReport) {
    let mut out = d.clone();
    let mut report = AugmentReport::default();
    for line in list.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match out.insert_checked(DictEntry::new(line, None, Provenance::AugmentList), limits) {
            Insert::Added => report.added += 1,
            Insert::Duplicate => report.duplicates += 1,
            Insert::Rejected(_) => report.rejected += 1,
        }
    }
    (out, report)
}

pub fn augment_from_list(
    d: &Dictionary,
    path: &Path,
    limits: &EntryLimits,
) -> Result<(Dictionary, AugmentReport), DictError> {
    let list = fs::read_to_string(path).map_err(|source| DictError::FileNotReadable {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(augment_from_str(d, &list, limits))
}
