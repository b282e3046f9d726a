//! Project configuration and the resumable end-to-end pipeline.
//!
//! Stages and their artifacts under `output_dir`:
//!
//! | stage     | output                         |
//! |-----------|--------------------------------|
//! | config    | `config.json` (canonical form) |
//! | subgraph  | `subgraph/<TYPE>.json`         |
//! | dict      | `dicts/<TYPE>.json`            |
//! | pages     | `pages.tsv` (when configured)  |
//! | ingest    | `sentences.jsonl`              |
//! | annotate  | `annotated.jsonl`              |
//! | review    | `review.journal`               |
//!
//! A stage is skipped when all its outputs are at least as new as all its
//! inputs. `finalize` is run separately after human review.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ingest, read_corpus, CapConfig, IngestReport, SentenceSplitter};
use crate::dataset::{
    compute_stats, render_stats_table, spans_to_bio, split_dataset, to_conll, Bucket, Ratios,
    TaggedSentence,
};
use crate::gazetteer::{
    augment_from_list, build_dictionary, subtract, union, Dictionary, EntryLimits,
};
use crate::io::{read_annotated, read_jsonl, write_annotated, write_atomic, write_jsonl};
use crate::kgstore::{
    extract_subgraph, load_items, load_pages, load_statements, resolve_topic, ItemId, ItemIndex,
    ParseMode, PropertyId, RelationFilter, SubGraph,
};
use crate::matcher::{Matcher, MatcherOptions};
use crate::review::{default_type_info, Action, ReviewStore, Status};
use crate::types::{AnnotatedSentence, EntityType, Sentence, SourceKind};

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("cannot load config {path}: {reason}")]
    ConfigLoad { path: PathBuf, reason: String },
    #[error("invalid configuration:\n{0}")]
    Invalid(ValidationReport),
    #[error("stage {stage} failed on {path}: {source}")]
    Stage {
        stage: &'static str,
        path: PathBuf,
        #[source]
        source: BoxError,
    },
}

fn stage_err<'a, E: Into<BoxError>>(
    stage: &'static str,
    path: &'a Path,
) -> impl FnOnce(E) -> PipelineError + 'a {
    move |e| PipelineError::Stage {
        stage,
        path: path.to_path_buf(),
        source: e.into(),
    }
}

/// Item referenced by label or by numeric id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TopicRef {
    Id(ItemId),
    Label(String),
}

impl fmt::Display for TopicRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopicRef::Id(id) => write!(f, "Q{id}"),
            TopicRef::Label(l) => write!(f, "{l:?}"),
        }
    }
}

fn default_relations() -> Vec<PropertyId> {
    vec![31, 279]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityTypeConfig {
    pub name: EntityType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic_item_id: Option<ItemId>,
    #[serde(default = "default_relations")]
    pub relations: Vec<PropertyId>,
    /// Plain-text lists, one surface form per line.
    #[serde(default)]
    pub augment_files: Vec<PathBuf>,
    /// Further topics whose dictionaries are merged into this one.
    #[serde(default)]
    pub union_with: Vec<TopicRef>,
    /// Configured types whose entries are removed from this one.
    #[serde(default)]
    pub subtract: Vec<EntityType>,
}

impl EntityTypeConfig {
    pub fn topic(&self) -> Option<TopicRef> {
        match (&self.topic_item_id, &self.topic_label) {
            (Some(id), _) => Some(TopicRef::Id(*id)),
            (None, Some(l)) => Some(TopicRef::Label(l.clone())),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KgPaths {
    pub statements: PathBuf,
    pub items: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pages: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub path: PathBuf,
    /// Overrides each document's own field when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_type_hint: Option<EntityType>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatcherConfig {
    /// Tie-break order across types; defaults to `entity_types` order.
    #[serde(default)]
    pub priority: Vec<EntityType>,
    #[serde(default)]
    pub case_sensitive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StratifyBy {
    Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default = "default_ratios")]
    pub ratios: [f64; 3],
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stratify_by: Option<StratifyBy>,
}

fn default_ratios() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

fn default_seed() -> u64 {
    42
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratios: default_ratios(),
            seed: default_seed(),
            stratify_by: None,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub kg: KgPaths,
    pub entity_types: Vec<EntityTypeConfig>,
    #[serde(default)]
    pub corpora: Vec<CorpusConfig>,
    #[serde(default)]
    pub caps: CapConfig,
    #[serde(default)]
    pub dictionary: EntryLimits,
    #[serde(default)]
    pub matcher: MatcherConfig,
    #[serde(default)]
    pub split: SplitConfig,
    /// Extra abbreviations for the sentence splitter, one per line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abbreviations: Option<PathBuf>,
}

impl ProjectConfig {
    /// Parse TOML or JSON, chosen by extension (`.json` is JSON, anything
    /// else TOML). Relative paths are resolved against `base`.
    pub fn parse(text: &str, json: bool, base: &Path) -> Result<ProjectConfig, String> {
        let mut cfg: ProjectConfig = if json {
            serde_json::from_str(text).map_err(|e| e.to_string())?
        } else {
            toml::from_str(text).map_err(|e| e.to_string())?
        };
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ProjectConfig, PipelineError> {
        let err = |reason: String| PipelineError::ConfigLoad {
            path: path.to_path_buf(),
            reason,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let base = path.parent().unwrap_or(Path::new("."));
        ProjectConfig::parse(&text, json, base).map_err(err)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.kg.statements);
        fix(&mut self.kg.items);
        if let Some(p) = self.kg.pages.as_mut() {
            fix(p);
        }
        for c in &mut self.corpora {
            fix(&mut c.path);
        }
        for t in &mut self.entity_types {
            t.augment_files.iter_mut().for_each(fix);
        }
        if let Some(p) = self.abbreviations.as_mut() {
            fix(p);
        }
    }

    pub fn type_names(&self) -> Vec<EntityType> {
        self.entity_types.iter().map(|t| t.name.clone()).collect()
    }

    pub fn priority(&self) -> Vec<EntityType> {
        if self.matcher.priority.is_empty() {
            self.type_names()
        } else {
            self.matcher.priority.clone()
        }
    }

    pub fn ratios(&self) -> Result<Ratios, crate::dataset::DatasetError> {
        let [a, b, c] = self.split.ratios;
        Ratios::new(a, b, c)
    }

    /// Canonical JSON form recorded next to the outputs.
    pub fn canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Schema and cross-reference checks; touches nothing but `stat`.
    pub fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        let exists = |r: &mut ValidationReport, field: String, p: &Path| {
            if !p.is_file() {
                r.push(field, format!("file not found: {}", p.display()));
            }
        };
        exists(&mut r, "kg.statements".into(), &self.kg.statements);
        exists(&mut r, "kg.items".into(), &self.kg.items);
        if let Some(p) = &self.kg.pages {
            exists(&mut r, "kg.pages".into(), p);
        }
        if self.entity_types.is_empty() {
            r.push(
                "entity_types".into(),
                "at least one entity type is required".into(),
            );
        }
        let names: BTreeSet<&EntityType> = self.entity_types.iter().map(|t| &t.name).collect();
        let mut seen = BTreeSet::new();
        for (i, t) in self.entity_types.iter().enumerate() {
            let f = |k: &str| format!("entity_types[{i}].{k}");
            if !seen.insert(&t.name) {
                r.push(f("name"), format!("duplicate entity type {}", t.name));
            }
            match (&t.topic_label, &t.topic_item_id) {
                (None, None) => r.push(
                    f("topic_label"),
                    "one of topic_label or topic_item_id is required".into(),
                ),
                (Some(_), Some(_)) => r.push(
                    f("topic_label"),
                    "give topic_label or topic_item_id, not both".into(),
                ),
                _ => {}
            }
            if t.relations.is_empty() || t.relations.contains(&0) {
                r.push(
                    f("relations"),
                    "relations must be non-empty positive property ids".into(),
                );
            }
            for (j, p) in t.augment_files.iter().enumerate() {
                exists(&mut r, f(&format!("augment_files[{j}]")), p);
            }
            for (j, s) in t.subtract.iter().enumerate() {
                if !names.contains(s) {
                    r.push(
                        f(&format!("subtract[{j}]")),
                        format!("unknown entity type {s}"),
                    );
                } else if *s == t.name {
                    r.push(
                        f(&format!("subtract[{j}]")),
                        "a type cannot subtract itself".into(),
                    );
                }
            }
        }
        for (i, c) in self.corpora.iter().enumerate() {
            exists(&mut r, format!("corpora[{i}].path"), &c.path);
            if let Some(h) = c.entity_type_hint.as_ref().filter(|h| !names.contains(h)) {
                r.push(
                    format!("corpora[{i}].entity_type_hint"),
                    format!("unknown entity type {h}"),
                );
            }
        }
        if !self.matcher.priority.is_empty() {
            let prio: BTreeSet<&EntityType> = self.matcher.priority.iter().collect();
            for (i, p) in self.matcher.priority.iter().enumerate() {
                if !names.contains(p) {
                    r.push(
                        format!("matcher.priority[{i}]"),
                        format!("unknown entity type {p}"),
                    );
                }
            }
            for n in names.iter().filter(|n| !prio.contains(*n)) {
                r.push(
                    "matcher.priority".into(),
                    format!("entity type {n} is missing from the priority list"),
                );
            }
        }
        if let Err(e) = self.ratios() {
            r.push("split.ratios".into(), e.to_string());
        }
        if self.caps.per_page_max == 0 || self.caps.per_type_per_source_max == 0 {
            r.push("caps".into(), "caps must be positive".into());
        }
        if self.dictionary.max_tokens == 0 {
            r.push("dictionary.max_tokens".into(), "must be positive".into());
        }
        if let Some(p) = &self.abbreviations {
            exists(&mut r, "abbreviations".into(), p);
        }
        r
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldIssue {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<FieldIssue>,
}

impl ValidationReport {
    fn push(&mut self, field: String, message: String) {
        self.errors.push(FieldIssue { field, message });
    }

    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.errors {
            writeln!(f, "  {}: {}", e.field, e.message)?;
        }
        Ok(())
    }
}

/// Load and check a configuration file.
pub fn validate_config(path: &Path) -> Result<ValidationReport, PipelineError> {
    Ok(ProjectConfig::load(path)?.validate())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub force: bool,
    pub lenient: bool,
}

impl RunOptions {
    fn mode(&self) -> ParseMode {
        if self.lenient {
            ParseMode::Lenient
        } else {
            ParseMode::Strict
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageReport {
    pub stage: &'static str,
    pub ran: bool,
    pub outputs: Vec<PathBuf>,
    pub summary: serde_json::Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PipelineReport {
    pub stages: Vec<StageReport>,
}

impl PipelineReport {
    pub fn all_skipped(&self) -> bool {
        self.stages.iter().all(|s| !s.ran)
    }
}

/// Standard artifact locations for a project.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Layout {
        Layout {
            root: root.to_path_buf(),
        }
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn subgraph(&self, t: &EntityType) -> PathBuf {
        self.root.join("subgraph").join(format!("{t}.json"))
    }
    pub fn union_subgraph(&self, t: &EntityType, k: usize) -> PathBuf {
        self.root
            .join("subgraph")
            .join(format!("{t}.union{k}.json"))
    }
    pub fn dict(&self, t: &EntityType) -> PathBuf {
        self.root.join("dicts").join(format!("{t}.json"))
    }
    pub fn pages(&self) -> PathBuf {
        self.root.join("pages.tsv")
    }
    pub fn sentences(&self) -> PathBuf {
        self.root.join("sentences.jsonl")
    }
    pub fn annotated(&self) -> PathBuf {
        self.root.join("annotated.jsonl")
    }
    pub fn journal(&self) -> PathBuf {
        self.root.join("review.journal")
    }
    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }
}

fn mtime(p: &Path) -> Option<SystemTime> {
    fs::metadata(p).and_then(|m| m.modified()).ok()
}

/// True when every output exists and none is older than any input.
pub fn up_to_date(outputs: &[PathBuf], inputs: &[PathBuf]) -> bool {
    let Some(oldest_out) = outputs
        .iter()
        .map(|p| mtime(p))
        .collect::<Option<Vec<_>>>()
        .and_then(|v| v.into_iter().min())
    else {
        return false;
    };
    inputs
        .iter()
        .all(|p| mtime(p).is_some_and(|t| t <= oldest_out))
}

struct Ctx<'a> {
    cfg: &'a ProjectConfig,
    opts: RunOptions,
    layout: Layout,
    items: Option<ItemIndex>,
    report: PipelineReport,
}

impl Ctx<'_> {
    fn fresh(&self, outputs: &[PathBuf], inputs: &[PathBuf]) -> bool {
        !self.opts.force && up_to_date(outputs, inputs)
    }

    fn skip(&mut self, stage: &'static str, outputs: Vec<PathBuf>) {
        log::info!("stage {stage}: up to date");
        self.report.stages.push(StageReport {
            stage,
            ran: false,
            outputs,
            summary: serde_json::Value::Null,
        });
    }

    fn done(&mut self, stage: &'static str, outputs: Vec<PathBuf>, summary: impl Serialize) {
        log::info!("stage {stage}: done");
        self.report.stages.push(StageReport {
            stage,
            ran: true,
            outputs,
            summary: serde_json::to_value(summary).unwrap_or_default(),
        });
    }

    fn items(&mut self) -> Result<&ItemIndex, PipelineError> {
        if self.items.is_none() {
            let path = &self.cfg.kg.items;
            let (index, report) =
                load_items(path, self.opts.mode()).map_err(stage_err("kg", path))?;
            log::info!("loaded {} items from {}", report.kept, path.display());
            self.items = Some(index);
        }
        Ok(self.items.as_ref().expect("just loaded"))
    }
}

fn write_if_changed(path: &Path, contents: &str) -> Result<bool, crate::io::IoError> {
    if fs::read(path).is_ok_and(|old| old == contents.as_bytes()) {
        return Ok(false);
    }
    write_atomic(path, contents.as_bytes())?;
    Ok(true)
}

fn subgraph_paths(cfg: &ProjectConfig, layout: &Layout) -> Vec<PathBuf> {
    cfg.entity_types
        .iter()
        .flat_map(|t| {
            std::iter::once(layout.subgraph(&t.name))
                .chain((0..t.union_with.len()).map(|k| layout.union_subgraph(&t.name, k)))
        })
        .collect()
}

fn resolve_ref(items: &ItemIndex, topic: &TopicRef) -> Result<ItemId, crate::kgstore::KgError> {
    match topic {
        TopicRef::Id(id) => Ok(*id),
        TopicRef::Label(l) => resolve_topic(items, l),
    }
}

fn stage_subgraph(ctx: &mut Ctx) -> Result<(), PipelineError> {
    let cfg = ctx.cfg;
    let outputs = subgraph_paths(cfg, &ctx.layout);
    let inputs = vec![
        ctx.layout.config(),
        cfg.kg.statements.clone(),
        cfg.kg.items.clone(),
    ];
    if ctx.fresh(&outputs, &inputs) {
        ctx.skip("subgraph", outputs);
        return Ok(());
    }
    let relations: BTreeSet<PropertyId> = cfg
        .entity_types
        .iter()
        .flat_map(|t| t.relations.iter().copied())
        .collect();
    let filter = RelationFilter::from(relations.iter().copied().collect::<BTreeSet<_>>());
    let (store, load) = load_statements(&cfg.kg.statements, &filter, ctx.opts.mode())
        .map_err(stage_err("subgraph", &cfg.kg.statements))?;
    let items_path = cfg.kg.items.clone();
    let layout = ctx.layout.clone();
    let items = ctx.items()?;
    let mut summary = BTreeMap::new();
    let mut writes = Vec::new();
    for t in &cfg.entity_types {
        let rels: BTreeSet<PropertyId> = t.relations.iter().copied().collect();
        let topic = t.topic().expect("validated");
        let id = resolve_ref(items, &topic).map_err(stage_err("subgraph", &items_path))?;
        let sg = extract_subgraph(&store, id, &rels);
        summary.insert(
            t.name.to_string(),
            sg.heads_by_relation
                .iter()
                .map(|(r, h)| (format!("P{r}"), h.len()))
                .collect::<BTreeMap<_, _>>(),
        );
        writes.push((layout.subgraph(&t.name), sg));
        for (k, extra) in t.union_with.iter().enumerate() {
            let id = resolve_ref(items, extra).map_err(stage_err("subgraph", &items_path))?;
            writes.push((
                layout.union_subgraph(&t.name, k),
                extract_subgraph(&store, id, &rels),
            ));
        }
    }
    for (path, sg) in &writes {
        let mut json = serde_json::to_string_pretty(sg).expect("subgraph serializes");
        json.push('\n');
        write_atomic(path, json.as_bytes()).map_err(stage_err("subgraph", path))?;
    }
    ctx.done(
        "subgraph",
        outputs,
        serde_json::json!({"triples_kept": load.kept, "heads": summary}),
    );
    Ok(())
}

fn read_subgraph(path: &Path) -> Result<SubGraph, PipelineError> {
    let text = fs::read_to_string(path).map_err(stage_err("dict", path))?;
    serde_json::from_str(&text).map_err(stage_err("dict", path))
}

fn stage_dict(ctx: &mut Ctx) -> Result<Vec<Dictionary>, PipelineError> {
    let cfg = ctx.cfg;
    let outputs: Vec<PathBuf> = cfg
        .entity_types
        .iter()
        .map(|t| ctx.layout.dict(&t.name))
        .collect();
    let mut inputs = subgraph_paths(cfg, &ctx.layout);
    inputs.push(ctx.layout.config());
    inputs.push(cfg.kg.items.clone());
    inputs.extend(
        cfg.entity_types
            .iter()
            .flat_map(|t| t.augment_files.iter().cloned()),
    );
    if ctx.fresh(&outputs, &inputs) {
        ctx.skip("dict", outputs.clone());
        return outputs
            .iter()
            .map(|p| Dictionary::load(p).map_err(stage_err("dict", p)))
            .collect();
    }
    let limits = cfg.dictionary;
    let layout = ctx.layout.clone();
    let items = ctx.items()?;
    // build, union and augment every type first, then subtract using those
    let mut merged: Vec<Dictionary> = Vec::new();
    let mut summary = BTreeMap::new();
    for t in &cfg.entity_types {
        let sg = read_subgraph(&layout.subgraph(&t.name))?;
        let (mut dict, report) = build_dictionary(&sg, items, t.name.clone(), &limits);
        let kg_entries = dict.len();
        for k in 0..t.union_with.len() {
            let extra = read_subgraph(&layout.union_subgraph(&t.name, k))?;
            let (other, _) = build_dictionary(&extra, items, t.name.clone(), &limits);
            dict = union(&dict, &other, t.name.clone());
        }
        let mut augmented = 0;
        for f in &t.augment_files {
            let (d, r) = augment_from_list(&dict, f, &limits).map_err(stage_err("dict", f))?;
            dict = d;
            augmented += r.added;
        }
        summary.insert(
            t.name.to_string(),
            serde_json::json!({"kg": kg_entries, "augmented": augmented, "build": report}),
        );
        merged.push(dict);
    }
    let by_name: HashMap<&EntityType, usize> = cfg
        .entity_types
        .iter()
        .enumerate()
        .map(|(i, t)| (&t.name, i))
        .collect();
    let mut finals = Vec::new();
    for (i, t) in cfg.entity_types.iter().enumerate() {
        let mut dict = merged[i].clone();
        for s in &t.subtract {
            dict = subtract(&dict, &merged[by_name[s]]);
        }
        if let Some(v) = summary.get_mut(t.name.as_str()) {
            v["total"] = dict.len().into();
        }
        let path = layout.dict(&t.name);
        write_atomic(&path, dict.to_json().as_bytes()).map_err(stage_err("dict", &path))?;
        finals.push(dict);
    }
    ctx.done("dict", outputs, summary);
    Ok(finals)
}

/// Refresh a file's mtime without changing its content.
fn filetime_now(path: &Path) -> std::io::Result<()> {
    let f = fs::OpenOptions::new().append(true).open(path)?;
    f.set_modified(SystemTime::now())
}

fn stage_pages(ctx: &mut Ctx, dicts: &[Dictionary]) -> Result<(), PipelineError> {
    let Some(pages_path) = ctx.cfg.kg.pages.clone() else {
        return Ok(());
    };
    let out = ctx.layout.pages();
    let mut inputs: Vec<PathBuf> = dicts
        .iter()
        .map(|d| ctx.layout.dict(d.entity_type()))
        .collect();
    inputs.push(pages_path.clone());
    if ctx.fresh(std::slice::from_ref(&out), &inputs) {
        ctx.skip("pages", vec![out]);
        return Ok(());
    }
    let (pages, _) =
        load_pages(&pages_path, ctx.opts.mode()).map_err(stage_err("pages", &pages_path))?;
    let mut body = String::from("entity_type\titem_id\tpage_id\ttitle\tviews\n");
    let mut found = BTreeMap::new();
    for d in dicts {
        let mut n = 0usize;
        for e in d.entries() {
            if let Some(p) = e.item_id.and_then(|id| pages.by_item(id)) {
                body.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\n",
                    d.entity_type(),
                    p.item_id,
                    p.page_id,
                    p.title,
                    p.views
                ));
                n += 1;
            }
        }
        found.insert(d.entity_type().to_string(), n);
    }
    write_atomic(&out, body.as_bytes()).map_err(stage_err("pages", &out))?;
    ctx.done("pages", vec![out], found);
    Ok(())
}

fn splitter(cfg: &ProjectConfig) -> Result<SentenceSplitter, PipelineError> {
    let mut s = SentenceSplitter::default();
    if let Some(p) = &cfg.abbreviations {
        let text = fs::read_to_string(p).map_err(stage_err("ingest", p))?;
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            s = s.with_abbreviation(line);
        }
    }
    Ok(s)
}

fn stage_ingest(ctx: &mut Ctx) -> Result<(), PipelineError> {
    let cfg = ctx.cfg;
    let out = ctx.layout.sentences();
    let mut inputs: Vec<PathBuf> = cfg.corpora.iter().map(|c| c.path.clone()).collect();
    inputs.push(ctx.layout.config());
    inputs.extend(cfg.abbreviations.iter().cloned());
    if ctx.fresh(std::slice::from_ref(&out), &inputs) {
        ctx.skip("ingest", vec![out]);
        return Ok(());
    }
    let mut docs = Vec::new();
    for c in &cfg.corpora {
        let mut batch =
            read_corpus(&c.path, ctx.opts.lenient).map_err(stage_err("ingest", &c.path))?;
        for d in &mut batch {
            if let Some(s) = c.source {
                d.source = s;
            }
            if let Some(h) = &c.entity_type_hint {
                d.entity_type_hint = Some(h.clone());
            }
        }
        docs.extend(batch);
    }
    let (sentences, report): (Vec<Sentence>, IngestReport) =
        ingest(docs, &cfg.caps, &splitter(cfg)?);
    write_jsonl(&out, &sentences).map_err(stage_err("ingest", &out))?;
    ctx.done("ingest", vec![out], report);
    Ok(())
}

fn stage_annotate(ctx: &mut Ctx, dicts: &[Dictionary]) -> Result<(), PipelineError> {
    let cfg = ctx.cfg;
    let out = ctx.layout.annotated();
    let mut inputs: Vec<PathBuf> = dicts
        .iter()
        .map(|d| ctx.layout.dict(d.entity_type()))
        .collect();
    inputs.push(ctx.layout.sentences());
    inputs.push(ctx.layout.config());
    if ctx.fresh(std::slice::from_ref(&out), &inputs) {
        ctx.skip("annotate", vec![out]);
        return Ok(());
    }
    let sentences_path = ctx.layout.sentences();
    let sentences: Vec<Sentence> =
        read_jsonl(&sentences_path).map_err(stage_err("annotate", &sentences_path))?;
    let options = MatcherOptions {
        case_sensitive: cfg.matcher.case_sensitive,
    };
    let matcher =
        Matcher::compile(dicts, &cfg.priority(), options).map_err(stage_err("annotate", &out))?;
    let annotated = matcher.annotate_all(&sentences);
    write_annotated(&out, &annotated).map_err(stage_err("annotate", &out))?;
    let spans: usize = annotated.iter().map(|a| a.spans.len()).sum();
    let conflicts: usize = annotated.iter().map(|a| a.conflicts.len()).sum();
    ctx.done(
        "annotate",
        vec![out],
        serde_json::json!({
            "sentences": annotated.len(),
            "with_spans": annotated.iter().filter(|a| !a.spans.is_empty()).count(),
            "spans": spans,
            "conflicts": conflicts,
            "patterns": matcher.pattern_count(),
        }),
    );
    Ok(())
}

/// The journal holds human work: a stale journal is only replaced with
/// `--force`, unless its seed is identical to the current annotations.
fn stage_review(ctx: &mut Ctx) -> Result<(), PipelineError> {
    let cfg = ctx.cfg;
    let out = ctx.layout.journal();
    let annotated_path = ctx.layout.annotated();
    if ctx.fresh(
        std::slice::from_ref(&out),
        std::slice::from_ref(&annotated_path),
    ) {
        ctx.skip("review", vec![out]);
        return Ok(());
    }
    let annotated =
        read_annotated(&annotated_path).map_err(stage_err("review", &annotated_path))?;
    if out.exists() && !ctx.opts.force {
        let existing = ReviewStore::open(&out).map_err(stage_err("review", &out))?;
        let same_seed = existing.len() == annotated.len()
            && existing
                .records()
                .iter()
                .zip(&annotated)
                .all(|(r, a)| r.sentence == a.sentence && r.baseline == a.spans);
        if same_seed {
            filetime_now(&out).map_err(stage_err("review", &out))?;
            ctx.skip("review", vec![out]);
            return Ok(());
        }
        return Err(stage_err("review", &out)(
            "annotations changed since the review store was created; rerun with --force to discard review decisions",
        ));
    }
    let store = ReviewStore::init(&annotated, default_type_info(&cfg.type_names()), &out, true)
        .map_err(stage_err("review", &out))?;
    ctx.done(
        "review",
        vec![out],
        serde_json::json!({"records": store.len()}),
    );
    Ok(())
}

/// Run every stage up to and including review-store initialization.
pub fn run_pipeline(
    cfg: &ProjectConfig,
    opts: RunOptions,
) -> Result<PipelineReport, PipelineError> {
    let issues = cfg.validate();
    if !issues.is_ok() {
        return Err(PipelineError::Invalid(issues));
    }
    let layout = Layout::new(&cfg.output_dir);
    let config_path = layout.config();
    let changed = write_if_changed(&config_path, &cfg.canonical_json())
        .map_err(stage_err("config", &config_path))?;
    if opts.force {
        filetime_now(&config_path).map_err(stage_err("config", &config_path))?;
    }
    let mut ctx = Ctx {
        cfg,
        opts,
        layout,
        items: None,
        report: PipelineReport::default(),
    };
    if changed {
        ctx.done("config", vec![config_path], serde_json::Value::Null);
    } else {
        ctx.skip("config", vec![config_path]);
    }
    stage_subgraph(&mut ctx)?;
    let dicts = stage_dict(&mut ctx)?;
    stage_pages(&mut ctx, &dicts)?;
    stage_ingest(&mut ctx)?;
    stage_annotate(&mut ctx, &dicts)?;
    stage_review(&mut ctx)?;
    Ok(ctx.report)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SplitCounts {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetMeta {
    pub seed: u64,
    pub ratios: Ratios,
    pub counts: SplitCounts,
    pub total: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub by_source: Option<BTreeMap<SourceKind, SplitCounts>>,
    pub origin: String,
}

/// Convert verified sentences to BIO, split, and write
/// `{train,dev,test}.conll`, `meta.json`, `stats.json`, `stats.txt` and
/// `verified.jsonl` into `out_dir`.
pub fn export_dataset(
    verified: &[AnnotatedSentence],
    ratios: Ratios,
    seed: u64,
    stratify_by: Option<StratifyBy>,
    origin: &str,
    out_dir: &Path,
) -> Result<DatasetMeta, PipelineError> {
    let tagged: Vec<TaggedSentence> = verified
        .iter()
        .map(spans_to_bio)
        .collect::<Result<_, _>>()
        .map_err(stage_err("export", out_dir))?;
    let stats = compute_stats(&tagged);
    let split = split_dataset(tagged, ratios, seed);
    for b in [Bucket::Train, Bucket::Dev, Bucket::Test] {
        let path = out_dir.join(format!("{}.conll", b.as_str()));
        write_atomic(&path, to_conll(split.bucket(b)).as_bytes())
            .map_err(stage_err("export", &path))?;
    }
    let by_source = stratify_by.map(|_| {
        let mut m: BTreeMap<SourceKind, SplitCounts> = BTreeMap::new();
        for b in [Bucket::Train, Bucket::Dev, Bucket::Test] {
            for s in split.bucket(b) {
                let c = m.entry(s.source).or_insert(SplitCounts {
                    train: 0,
                    dev: 0,
                    test: 0,
                });
                match b {
                    Bucket::Train => c.train += 1,
                    Bucket::Dev => c.dev += 1,
                    Bucket::Test => c.test += 1,
                }
            }
        }
        m
    });
    let meta = DatasetMeta {
        seed,
        ratios,
        counts: SplitCounts {
            train: split.train.len(),
            dev: split.dev.len(),
            test: split.test.len(),
        },
        total: verified.len(),
        by_source,
        origin: origin.to_string(),
    };
    let write_json = |name: &str, body: String| -> Result<(), PipelineError> {
        let path = out_dir.join(name);
        write_atomic(&path, body.as_bytes()).map_err(stage_err("export", &path))
    };
    write_json("meta.json", pretty_json(&meta))?;
    write_json("stats.json", pretty_json(&stats))?;
    let stats_txt = out_dir.join("stats.txt");
    write_atomic(&stats_txt, render_stats_table(&stats).as_bytes())
        .map_err(stage_err("export", &stats_txt))?;
    let verified_path = out_dir.join("verified.jsonl");
    write_annotated(&verified_path, verified).map_err(stage_err("export", &verified_path))?;
    Ok(meta)
}

fn pretty_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

#[derive(Debug, Clone, Default)]
pub struct FinalizeOptions {
    /// Accept every AUTO annotation instead of reading the review store.
    pub auto_accept: bool,
    /// Review journal; defaults to the project's `review.journal`.
    pub store: Option<PathBuf>,
}

/// Accept every PENDING record in the journal as `annotator_id`. Returns how
/// many were accepted.
pub fn accept_pending(journal: &Path, annotator_id: &str) -> Result<usize, PipelineError> {
    let store = ReviewStore::open(journal).map_err(stage_err("review", journal))?;
    let mut n = 0;
    for rec in store
        .records()
        .into_iter()
        .filter(|r| r.status == Status::Pending)
    {
        store
            .apply_decision(
                &rec.sent_id,
                annotator_id,
                Some(rec.revision),
                Action::Accept,
            )
            .map_err(stage_err("review", journal))?;
        n += 1;
    }
    Ok(n)
}

/// Export the dataset from review results (or all AUTO spans).
pub fn finalize(cfg: &ProjectConfig, opts: &FinalizeOptions) -> Result<DatasetMeta, PipelineError> {
    let layout = Layout::new(&cfg.output_dir);
    let (verified, origin) = if opts.auto_accept {
        let path = layout.annotated();
        (
            read_annotated(&path).map_err(stage_err("finalize", &path))?,
            "auto-accept",
        )
    } else {
        let path = opts.store.clone().unwrap_or_else(|| layout.journal());
        let store = ReviewStore::open(&path).map_err(stage_err("finalize", &path))?;
        (store.export_verified(), "review")
    };
    let ratios = cfg
        .ratios()
        .map_err(stage_err("finalize", &layout.config()))?;
    export_dataset(
        &verified,
        ratios,
        cfg.split.seed,
        cfg.split.stratify_by,
        origin,
        &layout.dataset(),
    )
}
