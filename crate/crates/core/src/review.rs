//! Human verification of automatic spans.
//!
//! State lives in memory and is persisted as an append-only JSON-lines
//! journal. Every accepted decision is appended and fsynced before the caller
//! sees the updated record, and reopening a store replays the journal. A torn
//! final line (crash mid-write) is discarded on open.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock, RwLockReadGuard, RwLockWriteGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::partial_path;
use crate::tokenize::Boundaries;
use crate::types::{
    char_slice, AnnotatedSentence, ConflictNote, EntityType, Origin, Sentence, Span,
};

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("{0} already exists (use --force to overwrite)")]
    PathExists(PathBuf),
    #[error("unknown sentence {0}")]
    UnknownSentence(String),
    #[error("span {start}..{end} overlaps an existing span")]
    OverlapViolation { start: usize, end: usize },
    #[error("span {start}..{end} does not align with token boundaries")]
    MisalignedSpan { start: usize, end: usize },
    #[error("no span at {start}..{end}")]
    SpanNotFound { start: usize, end: usize },
    #[error("entity type {0} is not configured for this store")]
    UnknownType(String),
    #[error("action {0} requires a span with a type")]
    MissingSpan(&'static str),
    #[error("stale revision for {sent_id}: client has {client}, store has {current}")]
    StaleRevision {
        sent_id: String,
        client: u64,
        current: u64,
    },
    #[error("invalid seed sentence {sent_id}: {reason}")]
    InvalidSeed { sent_id: String, reason: String },
    #[error("journal {path} line {line}: {reason}")]
    CorruptJournal {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("journal I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot bind {addr}: {source}")]
    BindFailure {
        addr: String,
        source: std::io::Error,
    },
}

impl ReviewError {
    pub fn status_code(&self) -> StatusCode {
        match self {
            ReviewError::UnknownSentence(_) => StatusCode::NOT_FOUND,
            ReviewError::StaleRevision { .. } => StatusCode::CONFLICT,
            ReviewError::OverlapViolation { .. }
            | ReviewError::MisalignedSpan { .. }
            | ReviewError::SpanNotFound { .. }
            | ReviewError::UnknownType(_)
            | ReviewError::MissingSpan(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            ReviewError::PathExists(_) => "PathExists",
            ReviewError::UnknownSentence(_) => "UnknownSentence",
            ReviewError::OverlapViolation { .. } => "OverlapViolation",
            ReviewError::MisalignedSpan { .. } => "MisalignedSpan",
            ReviewError::SpanNotFound { .. } => "SpanNotFound",
            ReviewError::UnknownType(_) => "UnknownType",
            ReviewError::MissingSpan(_) => "MissingSpan",
            ReviewError::StaleRevision { .. } => "StaleRevision",
            ReviewError::InvalidSeed { .. } => "InvalidSeed",
            ReviewError::CorruptJournal { .. } => "CorruptJournal",
            ReviewError::Io { .. } => "Io",
            ReviewError::BindFailure { .. } => "BindFailure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Pending,
    Accepted,
    Corrected,
    Skipped,
}

impl Status {
    pub const ALL: [Status; 4] = [
        Status::Pending,
        Status::Accepted,
        Status::Corrected,
        Status::Skipped,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pending => "PENDING",
            Status::Accepted => "ACCEPTED",
            Status::Corrected => "CORRECTED",
            Status::Skipped => "SKIPPED",
        }
    }
}

impl std::str::FromStr for Status {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Status::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown status {s:?}"))
    }
}

/// A span as addressed by a client. `type` is required when creating spans
/// and ignored when locating one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanRef {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub entity_type: Option<EntityType>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Accept,
    Skip,
    AddSpan { span: SpanRef },
    EditSpan { span: SpanRef, new_span: SpanRef },
    DeleteSpan { span: SpanRef },
}

impl Action {
    pub fn mutates_spans(&self) -> bool {
        !matches!(self, Action::Accept | Action::Skip)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    /// Milliseconds since the Unix epoch.
    pub ts: u64,
    pub annotator_id: String,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub sent_id: String,
    pub sentence: Sentence,
    pub status: Status,
    pub revision: u64,
    pub current_spans: Vec<Span>,
    /// AUTO spans the record was seeded with.
    pub baseline: Vec<Span>,
    #[serde(default)]
    pub conflicts: Vec<ConflictNote>,
    pub history: Vec<HistoryEntry>,
    #[serde(default)]
    pub annotator_id: Option<String>,
}

impl ReviewRecord {
    fn seed(a: &AnnotatedSentence) -> Result<ReviewRecord, ReviewError> {
        let bad = |reason: String| ReviewError::InvalidSeed {
            sent_id: a.sentence.sent_id.clone(),
            reason,
        };
        let chars: Vec<char> = a.sentence.text.chars().collect();
        let bounds = Boundaries::new(&chars);
        let mut spans = a.spans.clone();
        spans.sort_by_key(|s| (s.start, s.end));
        for (i, s) in spans.iter().enumerate() {
            if !bounds.aligned(s.start, s.end) {
                return Err(bad(format!(
                    "span {}..{} is not token aligned",
                    s.start, s.end
                )));
            }
            if i > 0 && spans[i - 1].overlaps(s) {
                return Err(bad(format!(
                    "span {}..{} overlaps its predecessor",
                    s.start, s.end
                )));
            }
        }
        Ok(ReviewRecord {
            sent_id: a.sentence.sent_id.clone(),
            sentence: a.sentence.clone(),
            status: Status::Pending,
            revision: 0,
            current_spans: spans.clone(),
            baseline: spans,
            conflicts: a.conflicts.clone(),
            history: Vec::new(),
            annotator_id: None,
        })
    }

    pub fn to_annotated(&self) -> AnnotatedSentence {
        AnnotatedSentence {
            sentence: self.sentence.clone(),
            spans: self.current_spans.clone(),
            conflicts: self.conflicts.clone(),
        }
    }

    /// Recompute spans from the baseline and history.
    pub fn replay_spans(
        &self,
        types: &IndexMap<EntityType, TypeInfo>,
    ) -> Result<Vec<Span>, ReviewError> {
        let mut r = ReviewRecord {
            current_spans: self.baseline.clone(),
            history: Vec::new(),
            ..self.clone()
        };
        for h in &self.history {
            r = transition(&r, &h.annotator_id, &h.action, h.ts, types)?;
        }
        Ok(r.current_spans)
    }
}

fn find_span(spans: &[Span], r: &SpanRef) -> Result<usize, ReviewError> {
    spans
        .iter()
        .position(|s| s.start == r.start && s.end == r.end)
        .ok_or(ReviewError::SpanNotFound {
            start: r.start,
            end: r.end,
        })
}

fn human_span(
    text: &str,
    bounds: &Boundaries,
    r: &SpanRef,
    types: &IndexMap<EntityType, TypeInfo>,
    action: &'static str,
) -> Result<Span, ReviewError> {
    let ty = r
        .entity_type
        .clone()
        .ok_or(ReviewError::MissingSpan(action))?;
    if !types.contains_key(&ty) {
        return Err(ReviewError::UnknownType(ty.to_string()));
    }
    let misaligned = ReviewError::MisalignedSpan {
        start: r.start,
        end: r.end,
    };
    if !bounds.aligned(r.start, r.end) {
        return Err(misaligned);
    }
    let surface = char_slice(text, r.start, r.end).ok_or(misaligned)?;
    Ok(Span {
        start: r.start,
        end: r.end,
        entity_type: ty,
        surface: surface.to_string(),
        dict_item_id: None,
        origin: Origin::Human,
    })
}

fn insert_checked(spans: &mut Vec<Span>, span: Span) -> Result<(), ReviewError> {
    if spans.iter().any(|s| s.overlaps(&span)) {
        return Err(ReviewError::OverlapViolation {
            start: span.start,
            end: span.end,
        });
    }
    let at = spans.partition_point(|s| s.start < span.start);
    spans.insert(at, span);
    Ok(())
}

/// Pure state transition shared by live decisions and journal replay.
fn transition(
    rec: &ReviewRecord,
    annotator_id: &str,
    action: &Action,
    ts: u64,
    types: &IndexMap<EntityType, TypeInfo>,
) -> Result<ReviewRecord, ReviewError> {
    let text = &rec.sentence.text;
    let chars: Vec<char> = text.chars().collect();
    let bounds = Boundaries::new(&chars);
    let mut spans = rec.current_spans.clone();
    match action {
        Action::Accept | Action::Skip => {}
        Action::AddSpan { span } => {
            let s = human_span(text, &bounds, span, types, "add_span")?;
            insert_checked(&mut spans, s)?;
        }
        Action::EditSpan { span, new_span } => {
            let i = find_span(&spans, span)?;
            spans.remove(i);
            let s = human_span(text, &bounds, new_span, types, "edit_span")?;
            insert_checked(&mut spans, s)?;
        }
        Action::DeleteSpan { span } => {
            let i = find_span(&spans, span)?;
            spans.remove(i);
        }
    }
    let mutated = action.mutates_spans() || rec.history.iter().any(|h| h.action.mutates_spans());
    let status = match action {
        Action::Skip => Status::Skipped,
        _ if mutated => Status::Corrected,
        _ => Status::Accepted,
    };
    let mut history = rec.history.clone();
    history.push(HistoryEntry {
        ts,
        annotator_id: annotator_id.to_string(),
        action: action.clone(),
    });
    Ok(ReviewRecord {
        status,
        revision: rec.revision + 1,
        current_spans: spans,
        history,
        annotator_id: Some(annotator_id.to_string()),
        ..rec.clone()
    })
}

const PALETTE: [&str; 10] = [
    "#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#42d4f4", "#f032e6", "#bfef45",
    "#fabed4", "#469990",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeInfo {
    pub display: String,
    pub color: String,
}

/// Display names are title-cased type names; colors cycle a fixed palette.
pub fn default_type_info(types: &[EntityType]) -> IndexMap<EntityType, TypeInfo> {
    types
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let lower = t.as_str().to_lowercase().replace('_', " ");
            let mut cs = lower.chars();
            let display = cs
                .next()
                .map(|c| c.to_uppercase().chain(cs).collect())
                .unwrap_or_default();
            (
                t.clone(),
                TypeInfo {
                    display,
                    color: PALETTE[i % PALETTE.len()].to_string(),
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Header {
        schema: u32,
        types: IndexMap<EntityType, TypeInfo>,
    },
    Seed {
        record: ReviewRecord,
    },
    Decision {
        sent_id: String,
        #[serde(flatten)]
        entry: HistoryEntry,
    },
}

const SCHEMA: u32 = 1;

#[derive(Debug, Default)]
struct StoreState {
    types: IndexMap<EntityType, TypeInfo>,
    records: IndexMap<String, ReviewRecord>,
}

/// Thread-safe review store. Reads take a shared lock; writers serialize on
/// the journal mutex and hold the state write lock only to swap in the
/// updated record, so reads proceed while a write is being fsynced.
#[derive(Debug)]
pub struct ReviewStore {
    path: PathBuf,
    state: RwLock<StoreState>,
    journal: Mutex<File>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReviewError + '_ {
    move |source| ReviewError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn line_of(event: &Event) -> String {
    let mut s = serde_json::to_string(event).expect("journal events serialize");
    s.push('\n');
    s
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListQuery {
    #[serde(default)]
    pub status: Option<Status>,
    #[serde(default, rename = "type")]
    pub entity_type: Option<EntityType>,
    #[serde(default)]
    pub offset: Option<usize>,
    #[serde(default)]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordSummary {
    pub sent_id: String,
    pub text: String,
    pub spans: Vec<Span>,
    pub status: Status,
    pub revision: u64,
    pub conflicts: Vec<ConflictNote>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub total: usize,
    pub offset: usize,
    pub items: Vec<RecordSummary>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub by_status: BTreeMap<Status, usize>,
    /// Status counts per sentence type hint.
    pub by_type: BTreeMap<EntityType, BTreeMap<Status, usize>>,
    /// Current span counts per entity type.
    pub spans_by_type: BTreeMap<EntityType, usize>,
}

pub const DEFAULT_PAGE: usize = 50;
pub const MAX_PAGE: usize = 1000;

impl ReviewStore {
    /// Create a new journal seeded with one PENDING record per sentence.
    pub fn init(
        annotated: &[AnnotatedSentence],
        types: IndexMap<EntityType, TypeInfo>,
        path: &Path,
        force: bool,
    ) -> Result<ReviewStore, ReviewError> {
        if path.exists() && !force {
            return Err(ReviewError::PathExists(path.to_path_buf()));
        }
        let mut records = IndexMap::new();
        for a in annotated {
            let r = ReviewRecord::seed(a)?;
            if let Some(s) = r
                .current_spans
                .iter()
                .find(|s| !types.contains_key(&s.entity_type))
            {
                return Err(ReviewError::InvalidSeed {
                    sent_id: r.sent_id.clone(),
                    reason: format!("type {} is not configured", s.entity_type),
                });
            }
            if records.insert(r.sent_id.clone(), r).is_some() {
                return Err(ReviewError::InvalidSeed {
                    sent_id: a.sentence.sent_id.clone(),
                    reason: "duplicate sentence id".into(),
                });
            }
        }
        let state = StoreState { types, records };
        write_snapshot(path, &state)?;
        Self::with_state(path, state)
    }

    /// Replay an existing journal.
    pub fn open(path: &Path) -> Result<ReviewStore, ReviewError> {
        let raw = fs::read(path).map_err(io_err(path))?;
        let mut body = raw.as_slice();
        // discard a torn trailing write
        if !body.is_empty() && !body.ends_with(b"\n") {
            let keep = body.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
            log::warn!(
                "{}: discarding {} bytes of incomplete trailing entry",
                path.display(),
                body.len() - keep
            );
            body = &body[..keep];
            let f = OpenOptions::new()
                .write(true)
                .open(path)
                .map_err(io_err(path))?;
            f.set_len(keep as u64).map_err(io_err(path))?;
            f.sync_all().map_err(io_err(path))?;
        }
        let corrupt = |line: usize, reason: String| ReviewError::CorruptJournal {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let text = std::str::from_utf8(body).map_err(|e| corrupt(0, e.to_string()))?;
        let mut state = StoreState::default();
        let mut seen_header = false;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let event: Event =
                serde_json::from_str(line).map_err(|e| corrupt(i + 1, e.to_string()))?;
            match event {
                Event::Header { schema, types } => {
                    if schema != SCHEMA {
                        return Err(corrupt(i + 1, format!("unsupported schema {schema}")));
                    }
                    state.types = types;
                    seen_header = true;
                }
                Event::Seed { record } => {
                    state.records.insert(record.sent_id.clone(), record);
                }
                Event::Decision { sent_id, entry } => {
                    let rec = state
                        .records
                        .get(&sent_id)
                        .ok_or_else(|| corrupt(i + 1, format!("unknown sentence {sent_id}")))?;
                    let next = transition(
                        rec,
                        &entry.annotator_id,
                        &entry.action,
                        entry.ts,
                        &state.types,
                    )
                    .map_err(|e| corrupt(i + 1, e.to_string()))?;
                    state.records.insert(sent_id, next);
                }
            }
        }
        if !seen_header {
            return Err(corrupt(1, "missing header".into()));
        }
        Self::with_state(path, state)
    }

    fn with_state(path: &Path, state: StoreState) -> Result<ReviewStore, ReviewError> {
        let journal = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok(ReviewStore {
            path: path.to_path_buf(),
            state: RwLock::new(state),
            journal: Mutex::new(journal),
        })
    }

    fn read(&self) -> RwLockReadGuard<'_, StoreState> {
        self.state.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> RwLockWriteGuard<'_, StoreState> {
        self.state.write().unwrap_or_else(|e| e.into_inner())
    }

    fn lock_journal(&self) -> MutexGuard<'_, File> {
        self.journal.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.read().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn types(&self) -> IndexMap<EntityType, TypeInfo> {
        self.read().types.clone()
    }

    pub fn get(&self, sent_id: &str) -> Option<ReviewRecord> {
        self.read().records.get(sent_id).cloned()
    }

    /// All records in seed order.
    pub fn records(&self) -> Vec<ReviewRecord> {
        self.read().records.values().cloned().collect()
    }

    /// Validate, journal (with fsync), then publish a decision. With
    /// `expected_revision` set, a mismatch fails with `StaleRevision`.
    pub fn apply_decision(
        &self,
        sent_id: &str,
        annotator_id: &str,
        expected_revision: Option<u64>,
        action: Action,
    ) -> Result<ReviewRecord, ReviewError> {
        let mut journal = self.lock_journal();
        let next = {
            let state = self.read();
            let rec = state
                .records
                .get(sent_id)
                .ok_or_else(|| ReviewError::UnknownSentence(sent_id.to_string()))?;
            if let Some(client) = expected_revision.filter(|&r| r != rec.revision) {
                return Err(ReviewError::StaleRevision {
                    sent_id: sent_id.to_string(),
                    client,
                    current: rec.revision,
                });
            }
            transition(rec, annotator_id, &action, now_ms(), &state.types)?
        };
        let entry = next
            .history
            .last()
            .expect("transition appends history")
            .clone();
        let line = line_of(&Event::Decision {
            sent_id: sent_id.to_string(),
            entry,
        });
        journal
            .write_all(line.as_bytes())
            .map_err(io_err(&self.path))?;
        journal.sync_data().map_err(io_err(&self.path))?;
        self.write()
            .records
            .insert(sent_id.to_string(), next.clone());
        Ok(next)
    }

    /// ACCEPTED and CORRECTED records, in seed order.
    pub fn export_verified(&self) -> Vec<AnnotatedSentence> {
        self.read()
            .records
            .values()
            .filter(|r| matches!(r.status, Status::Accepted | Status::Corrected))
            .map(ReviewRecord::to_annotated)
            .collect()
    }

    /// Rewrite the journal as one seed event per record (history kept inside
    /// each record), atomically replacing the old file.
    pub fn compact(&self) -> Result<(), ReviewError> {
        let mut journal = self.lock_journal();
        let state = self.read();
        write_snapshot(&self.path, &state)?;
        *journal = OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(io_err(&self.path))?;
        Ok(())
    }

    pub fn list(&self, q: &ListQuery) -> Page {
        let state = self.read();
        let matching: Vec<&ReviewRecord> = state
            .records
            .values()
            .filter(|r| q.status.is_none_or(|s| r.status == s))
            .filter(|r| {
                q.entity_type.as_ref().is_none_or(|t| {
                    r.sentence.entity_type_hint.as_ref() == Some(t)
                        || r.current_spans.iter().any(|s| &s.entity_type == t)
                })
            })
            .collect();
        let offset = q.offset.unwrap_or(0);
        let limit = q.limit.unwrap_or(DEFAULT_PAGE).min(MAX_PAGE);
        Page {
            total: matching.len(),
            offset,
            items: matching
                .into_iter()
                .skip(offset)
                .take(limit)
                .map(|r| RecordSummary {
                    sent_id: r.sent_id.clone(),
                    text: r.sentence.text.clone(),
                    spans: r.current_spans.clone(),
                    status: r.status,
                    revision: r.revision,
                    conflicts: r.conflicts.clone(),
                })
                .collect(),
        }
    }

    pub fn progress(&self) -> Progress {
        let state = self.read();
        let mut p = Progress {
            total: state.records.len(),
            by_status: Status::ALL.iter().map(|s| (*s, 0)).collect(),
            ..Progress::default()
        };
        for r in state.records.values() {
            *p.by_status.entry(r.status).or_default() += 1;
            if let Some(t) = &r.sentence.entity_type_hint {
                *p.by_type
                    .entry(t.clone())
                    .or_default()
                    .entry(r.status)
                    .or_default() += 1;
            }
            for s in &r.current_spans {
                *p.spans_by_type.entry(s.entity_type.clone()).or_default() += 1;
            }
        }
        p
    }
}

fn write_snapshot(path: &Path, state: &StoreState) -> Result<(), ReviewError> {
    let tmp = partial_path(path);
    let mut body = line_of(&Event::Header {
        schema: SCHEMA,
        types: state.types.clone(),
    });
    for r in state.records.values() {
        body.push_str(&line_of(&Event::Seed { record: r.clone() }));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(path))?;
    }
    let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(body.as_bytes()).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

// ---------------------------------------------------------------- HTTP

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRequest {
    pub annotator_id: String,
    pub revision: u64,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    kind: &'static str,
}

impl IntoResponse for ReviewError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.to_string(),
            kind: self.kind(),
        };
        (self.status_code(), Json(body)).into_response()
    }
}

#[derive(Debug, Serialize)]
struct TypeView {
    name: EntityType,
    display: String,
    color: String,
}

async fn list_sentences(
    State(store): State<Arc<ReviewStore>>,
    Query(q): Query<ListQuery>,
) -> Json<Page> {
    Json(store.list(&q))
}

async fn get_sentence(
    State(store): State<Arc<ReviewStore>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<ReviewRecord>, ReviewError> {
    store
        .get(&id)
        .map(Json)
        .ok_or(ReviewError::UnknownSentence(id))
}

async fn post_decision(
    State(store): State<Arc<ReviewStore>>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<DecisionRequest>,
) -> Result<Json<ReviewRecord>, ReviewError> {
    // fsync happens on a blocking thread so the runtime keeps serving reads
    let result = tokio::task::spawn_blocking(move || {
        store.apply_decision(&id, &req.annotator_id, Some(req.revision), req.action)
    })
    .await
    .expect("decision task panicked");
    result.map(Json)
}

async fn get_progress(State(store): State<Arc<ReviewStore>>) -> Json<Progress> {
    Json(store.progress())
}

async fn get_types(State(store): State<Arc<ReviewStore>>) -> Json<Vec<TypeView>> {
    Json(
        store
            .types()
            .into_iter()
            .map(|(name, info)| TypeView {
                name,
                display: info.display,
                color: info.color,
            })
            .collect(),
    )
}

/// API routes, plus static files from `ui_dir` at `/` when given.
pub fn router(store: Arc<ReviewStore>, ui_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/sentences", get(list_sentences))
        .route("/api/sentences/{sent_id}", get(get_sentence))
        .route("/api/sentences/{sent_id}/decision", post(post_decision))
        .route("/api/progress", get(get_progress))
        .route("/api/types", get(get_types))
        .with_state(store);
    match ui_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Serve until Ctrl-C.
pub async fn serve(
    store: Arc<ReviewStore>,
    addr: SocketAddr,
    ui_dir: Option<PathBuf>,
) -> Result<(), ReviewError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ReviewError::BindFailure {
            addr: addr.to_string(),
            source,
        })?;
    log::info!("review server listening on http://{addr}");
    let app = router(store.clone(), ui_dir.as_deref());
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(io_err(store.path()))
}

/// Blocking wrapper around [`serve`] that owns its runtime.
pub fn serve_blocking(
    store: Arc<ReviewStore>,
    addr: SocketAddr,
    ui_dir: Option<PathBuf>,
) -> Result<(), ReviewError> {
    let rt = tokio::runtime::Runtime::new().map_err(io_err(store.path()))?;
    rt.block_on(serve(store, addr, ui_dir))
}
