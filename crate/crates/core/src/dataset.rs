//! BIO conversion, hash-based dataset splits, CoNLL export and dataset
//! statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use crate::tokenize::{tokenize, Token};
use crate::types::{AnnotatedSentence, EntityType, Origin, SourceKind, Span};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("sentence {sent_id}: span [{start}, {end}) does not cover whole tokens")]
    SpanTokenMisalignment {
        sent_id: String,
        start: usize,
        end: usize,
    },
    #[error("sentence {sent_id}: I-{entity_type} at token {index} does not continue a span of the same type")]
    MalformedBio {
        sent_id: String,
        index: usize,
        entity_type: EntityType,
    },
    #[error("ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios(Vec<f64>),
    #[error("unknown tag {tag:?} at line {line}")]
    UnknownTag { tag: String, line: usize },
    #[error("malformed CoNLL line {line}: {reason}")]
    MalformedConll { line: usize, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One BIO label.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Tag {
    O,
    B(EntityType),
    I(EntityType),
}

impl Tag {
    pub fn entity_type(&self) -> Option<&EntityType> {
        match self {
            Tag::O => None,
            Tag::B(t) | Tag::I(t) => Some(t),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::O => f.write_str("O"),
            Tag::B(t) => write!(f, "B-{t}"),
            Tag::I(t) => write!(f, "I-{t}"),
        }
    }
}

impl FromStr for Tag {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "O" {
            return Ok(Tag::O);
        }
        let (prefix, name) = s.split_once('-').ok_or_else(|| format!("bad tag {s:?}"))?;
        let t = EntityType::new(name).map_err(|e| e.to_string())?;
        match prefix {
            "B" => Ok(Tag::B(t)),
            "I" => Ok(Tag::I(t)),
            _ => Err(format!("bad tag {s:?}")),
        }
    }
}

impl Serialize for Tag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Tag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub sent_id: String,
    pub text: String,
    pub tokens: Vec<Token>,
    pub tags: Vec<Tag>,
    pub source: SourceKind,
}

/// Every `I-X` follows `B-X` or `I-X`.
pub fn is_well_formed(tags: &[Tag]) -> bool {
    tags.iter().enumerate().all(|(i, tag)| match tag {
        Tag::I(t) => i > 0 && tags[i - 1].entity_type() == Some(t),
        _ => true,
    })
}

/// Tag tokens inside each span `B-`/`I-`, everything else `O`. Spans must
/// cover whole tokens.
pub fn spans_to_bio(a: &AnnotatedSentence) -> Result<TaggedSentence, DatasetError> {
    let tokens = tokenize(&a.sentence.text);
    let mut tags = vec![Tag::O; tokens.len()];
    for span in &a.spans {
        let misaligned = || DatasetError::SpanTokenMisalignment {
            sent_id: a.sentence.sent_id.clone(),
            start: span.start,
            end: span.end,
        };
        let mut first = true;
        for (i, tok) in tokens.iter().enumerate() {
            let inside = tok.start >= span.start && tok.end <= span.end;
            let touches = tok.start < span.end && span.start < tok.end;
            if touches && !inside {
                return Err(misaligned());
            }
            if inside {
                tags[i] = if first {
                    Tag::B(span.entity_type.clone())
                } else {
                    Tag::I(span.entity_type.clone())
                };
                first = false;
            }
        }
        let starts_ok = tokens.iter().any(|t| t.start == span.start);
        let ends_ok = tokens.iter().any(|t| t.end == span.end);
        if first || !starts_ok || !ends_ok {
            return Err(misaligned());
        }
    }
    Ok(TaggedSentence {
        sent_id: a.sentence.sent_id.clone(),
        text: a.sentence.text.clone(),
        tokens,
        tags,
        source: a.sentence.source,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BioDecode {
    pub spans: Vec<Span>,
    /// Stray `I-` tags treated as `B-` (lenient mode only).
    pub repaired: usize,
}

/// Maximal B/I runs become spans. Provenance is not carried by BIO, so every
/// span comes back as `AUTO`.
pub fn bio_to_spans(t: &TaggedSentence, lenient: bool) -> Result<BioDecode, DatasetError> {
    let chars: Vec<char> = t.text.chars().collect();
    let mut out = BioDecode::default();
    let mut current: Option<(usize, usize, EntityType)> = None;
    let flush = |cur: &mut Option<(usize, usize, EntityType)>, spans: &mut Vec<Span>| {
        if let Some((start, end, ty)) = cur.take() {
            spans.push(Span {
                start,
                end,
                entity_type: ty,
                surface: chars[start..end].iter().collect(),
                dict_item_id: None,
                origin: Origin::Auto,
            });
        }
    };
    for (i, (tok, tag)) in t.tokens.iter().zip(&t.tags).enumerate() {
        match tag {
            Tag::O => flush(&mut current, &mut out.spans),
            Tag::B(ty) => {
                flush(&mut current, &mut out.spans);
                current = Some((tok.start, tok.end, ty.clone()));
            }
            Tag::I(ty) => match &mut current {
                Some((_, end, cur_ty)) if cur_ty == ty => *end = tok.end,
                _ => {
                    if !lenient {
                        return Err(DatasetError::MalformedBio {
                            sent_id: t.sent_id.clone(),
                            index: i,
                            entity_type: ty.clone(),
                        });
                    }
                    out.repaired += 1;
                    flush(&mut current, &mut out.spans);
                    current = Some((tok.start, tok.end, ty.clone()));
                }
            },
        }
    }
    flush(&mut current, &mut out.spans);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Ratios {
    pub fn new(train: f64, dev: f64, test: f64) -> Result<Ratios, DatasetError> {
        let all = [train, dev, test];
        if all.iter().any(|r| !r.is_finite() || *r < 0.0)
            || ((train + dev + test) - 1.0).abs() > 1e-9
        {
            return Err(DatasetError::BadRatios(all.to_vec()));
        }
        Ok(Ratios { train, dev, test })
    }

    /// Parse `0.8,0.1,0.1`.
    pub fn parse(s: &str) -> Result<Ratios, DatasetError> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().unwrap_or(f64::NAN))
            .collect();
        match parts.as_slice() {
            [a, b, c] => Ratios::new(*a, *b, *c),
            _ => Err(DatasetError::BadRatios(parts)),
        }
    }
}

impl Default for Ratios {
    fn default() -> Self {
        Ratios {
            train: 0.8,
            dev: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Train,
    Dev,
    Test,
}

impl Bucket {
    pub fn as_str(self) -> &'static str {
        match self {
            Bucket::Train => "train",
            Bucket::Dev => "dev",
            Bucket::Test => "test",
        }
    }
}

/// SHA-256 of `seed (LE) || sent_id`, top 53 bits mapped to `[0, 1)`.
pub fn unit_hash(seed: u64, sent_id: &str) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(sent_id.as_bytes());
    let digest = h.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    (u64::from_be_bytes(first) >> 11) as f64 / (1u64 << 53) as f64
}

pub fn bucket_of(seed: u64, sent_id: &str, ratios: &Ratios) -> Bucket {
    let u = unit_hash(seed, sent_id);
    if u < ratios.train {
        Bucket::Train
    } else if u < ratios.train + ratios.dev {
        Bucket::Dev
    } else {
        Bucket::Test
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<TaggedSentence>,
    pub dev: Vec<TaggedSentence>,
    pub test: Vec<TaggedSentence>,
    pub seed: u64,
    pub ratios: Ratios,
}

impl DatasetSplit {
    pub fn bucket(&self, b: Bucket) -> &[TaggedSentence] {
        match b {
            Bucket::Train => &self.train,
            Bucket::Dev => &self.dev,
            Bucket::Test => &self.test,
        }
    }
}

/// Assign each sentence by its keyed hash; input order within a bucket is
/// preserved.
pub fn split_dataset(sentences: Vec<TaggedSentence>, ratios: Ratios, seed: u64) -> DatasetSplit {
    let mut split = DatasetSplit {
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
        seed,
        ratios,
    };
    for s in sentences {
        match bucket_of(seed, &s.sent_id, &ratios) {
            Bucket::Train => split.train.push(s),
            Bucket::Dev => split.dev.push(s),
            Bucket::Test => split.test.push(s),
        }
    }
    split
}

/// `token<TAB>tag` per line, blank line after each sentence.
pub fn to_conll(sentences: &[TaggedSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        for (tok, tag) in s.tokens.iter().zip(&s.tags) {
            let _ = writeln!(out, "{}\t{}", tok.text, tag);
        }
        out.push('\n');
    }
    out
}

pub fn export_conll(sentences: &[TaggedSentence], path: &Path) -> Result<(), DatasetError> {
    fs::write(path, to_conll(sentences)).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// One CoNLL sentence: tokens and their tags.
pub type ConllSentence = (Vec<String>, Vec<Tag>);

/// Parse CoNLL text into `(tokens, tags)` per sentence. Tags whose type is
/// not in `known` (when given) are rejected.
pub fn parse_conll(
    text: &str,
    known: Option<&BTreeSet<EntityType>>,
) -> Result<Vec<ConllSentence>, DatasetError> {
    let mut out = Vec::new();
    let mut toks = Vec::new();
    let mut tags = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            if !toks.is_empty() {
                out.push((std::mem::take(&mut toks), std::mem::take(&mut tags)));
            }
            continue;
        }
        let (tok, tag) = line
            .rsplit_once('\t')
            .ok_or_else(|| DatasetError::MalformedConll {
                line: i + 1,
                reason: "missing tab".into(),
            })?;
        let unknown = || DatasetError::UnknownTag {
            tag: tag.to_string(),
            line: i + 1,
        };
        let tag: Tag = tag.parse().map_err(|_| unknown())?;
        if let (Some(known), Some(t)) = (known, tag.entity_type()) {
            if !known.contains(t) {
                return Err(unknown());
            }
        }
        toks.push(tok.to_string());
        tags.push(tag);
    }
    if !toks.is_empty() {
        out.push((toks, tags));
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsCell {
    pub entity_tokens: usize,
    pub entities: usize,
    pub sentences: usize,
}

impl StatsCell {
    fn add(&mut self, other: &StatsCell) {
        self.entity_tokens += other.entity_tokens;
        self.entities += other.entities;
        self.sentences += other.sentences;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsReport {
    pub cells: BTreeMap<EntityType, BTreeMap<SourceKind, StatsCell>>,
    pub by_type: BTreeMap<EntityType, StatsCell>,
    pub by_source: BTreeMap<SourceKind, StatsCell>,
    pub total: StatsCell,
}

/// Entity tokens (non-`O` tags), entities (`B-` tags) and sentences with at
/// least one entity, per (type, source). A sentence counts once per cell.
pub fn compute_stats(sentences: &[TaggedSentence]) -> StatsReport {
    let mut report = StatsReport::default();
    for s in sentences {
        let mut local: BTreeMap<&EntityType, StatsCell> = BTreeMap::new();
        for tag in &s.tags {
            match tag {
                Tag::O => {}
                Tag::B(t) => {
                    let c = local.entry(t).or_default();
                    c.entity_tokens += 1;
                    c.entities += 1;
                    c.sentences = 1;
                }
                Tag::I(t) => local.entry(t).or_default().entity_tokens += 1,
            }
        }
        for (t, cell) in local {
            report
                .cells
                .entry(t.clone())
                .or_default()
                .entry(s.source)
                .or_default()
                .add(&cell);
        }
    }
    for (t, by_source) in &report.cells {
        for (src, cell) in by_source {
            report.by_type.entry(t.clone()).or_default().add(cell);
            report.by_source.entry(*src).or_default().add(cell);
            report.total.add(cell);
        }
    }
    report
}

/// Plain-text table, one row per type with per-source columns.
pub fn render_stats_table(report: &StatsReport) -> String {
    let sources: Vec<SourceKind> = report.by_source.keys().copied().collect();
    let mut out = String::new();
    let _ = write!(out, "{:<14}", "type");
    for s in &sources {
        let _ = write!(out, " | {:>28}", format!("{s} (tok/ent/sent)"));
    }
    let _ = writeln!(out, " | {:>28}", "total (tok/ent/sent)");
    let cell = |c: Option<&StatsCell>| {
        let c = c.cloned().unwrap_or_default();
        format!("{}/{}/{}", c.entity_tokens, c.entities, c.sentences)
    };
    for (t, by_source) in &report.cells {
        let _ = write!(out, "{:<14}", t.as_str());
        for s in &sources {
            let _ = write!(out, " | {:>28}", cell(by_source.get(s)));
        }
        let _ = writeln!(out, " | {:>28}", cell(report.by_type.get(t)));
    }
    let _ = write!(out, "{:<14}", "TOTAL");
    for s in &sources {
        let _ = write!(out, " | {:>28}", cell(report.by_source.get(s)));
    }
    let _ = writeln!(out, " | {:>28}", cell(Some(&report.total)));
    out
}
