//! Knowledge-graph ingestion for KDWD-style CSV dumps and depth-1 sub-graph
//! extraction by relation filtering.
//!
//! Three layouts are read:
//!
//! * `statements.csv`: `source_item_id,edge_property_id,target_item_id`
//! * `item.csv`: `item_id,en_label,en_description`
//! * `page.csv`: `page_id,item_id,title,views`
//!
//! A header row is optional and detected by a non-numeric first field.
//! Everything is streamed; only kept rows are held in memory.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type ItemId = u64;
pub type PageId = u64;
pub type PropertyId = u32;

pub const INSTANCE_OF: PropertyId = 31;
pub const SUBCLASS_OF: PropertyId = 279;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("cannot read {path}: {source}")]
    FileNotReadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("topic {0:?} not found in item index")]
    TopicNotFound(String),
    #[error("topic {label:?} is ambiguous, matching items {ids:?}; pass an explicit item id")]
    AmbiguousTopic { label: String, ids: Vec<ItemId> },
    #[error("invalid property identifier {0:?}")]
    BadProperty(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub use crate::types::ParseMode;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub header: bool,
    pub rows: u64,
    pub kept: u64,
    pub malformed: u64,
    pub duplicates: u64,
    pub empty_labels: u64,
}

/// A knowledge-graph edge `(head, relation, tail)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: ItemId,
    pub relation: PropertyId,
    pub tail: ItemId,
}

/// Which relations to keep while streaming statements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RelationFilter {
    All,
    Only(BTreeSet<PropertyId>),
}

impl RelationFilter {
    pub fn keeps(&self, relation: PropertyId) -> bool {
        match self {
            RelationFilter::All => true,
            RelationFilter::Only(set) => set.contains(&relation),
        }
    }
}

impl<I: IntoIterator<Item = PropertyId>> From<I> for RelationFilter {
    fn from(value: I) -> Self {
        RelationFilter::Only(value.into_iter().collect())
    }
}

/// Append-only triple list indexed by `(tail, relation)`.
#[derive(Debug, Clone, Default)]
pub struct TripleStore {
    triples: Vec<Triple>,
    by_tail_relation: HashMap<(ItemId, PropertyId), Vec<ItemId>>,
}

impl TripleStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, triple: Triple) {
        self.by_tail_relation
            .entry((triple.tail, triple.relation))
            .or_default()
            .push(triple.head);
        self.triples.push(triple);
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    /// Heads `h` of every stored `(h, relation, tail)`, duplicates included.
    pub fn heads(&self, tail: ItemId, relation: PropertyId) -> &[ItemId] {
        self.by_tail_relation
            .get(&(tail, relation))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn count_relation(&self, relation: PropertyId) -> usize {
        self.triples
            .iter()
            .filter(|t| t.relation == relation)
            .count()
    }

    /// Keep only triples whose relation passes `filter`.
    pub fn filtered(&self, filter: &RelationFilter) -> TripleStore {
        self.triples
            .iter()
            .filter(|t| filter.keeps(t.relation))
            .copied()
            .collect()
    }
}

impl FromIterator<Triple> for TripleStore {
    fn from_iter<T: IntoIterator<Item = Triple>>(iter: T) -> Self {
        let mut store = TripleStore::new();
        for t in iter {
            store.push(t);
        }
        store
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: ItemId,
    pub label: String,
    pub description: String,
}

#[derive(Debug, Clone, Default)]
pub struct ItemIndex {
    items: HashMap<ItemId, ItemRecord>,
    by_label: HashMap<String, Vec<ItemId>>,
}

impl ItemIndex {
    pub fn get(&self, id: ItemId) -> Option<&ItemRecord> {
        self.items.get(&id)
    }

    /// Exact, case-sensitive label lookup.
    pub fn ids_for_label(&self, label: &str) -> &[ItemId] {
        self.by_label.get(label).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Insert unless the id is already present. Returns false on duplicate.
    pub fn insert(&mut self, record: ItemRecord) -> bool {
        if self.items.contains_key(&record.item_id) {
            return false;
        }
        self.by_label
            .entry(record.label.clone())
            .or_default()
            .push(record.item_id);
        self.items.insert(record.item_id, record);
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageRecord {
    pub page_id: PageId,
    pub item_id: ItemId,
    pub title: String,
    pub views: u64,
}

#[derive(Debug, Clone, Default)]
pub struct PageIndex {
    pages: HashMap<PageId, PageRecord>,
    by_item: HashMap<ItemId, PageId>,
}

impl PageIndex {
    pub fn get(&self, page_id: PageId) -> Option<&PageRecord> {
        self.pages.get(&page_id)
    }

    /// The page describing `item`, or `None` when the item has no page.
    pub fn by_item(&self, item: ItemId) -> Option<&PageRecord> {
        self.by_item.get(&item).and_then(|p| self.pages.get(p))
    }

    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    /// First-wins insert on both page id and item id.
    pub fn insert(&mut self, record: PageRecord) -> bool {
        if self.pages.contains_key(&record.page_id) || self.by_item.contains_key(&record.item_id) {
            return false;
        }
        self.by_item.insert(record.item_id, record.page_id);
        self.pages.insert(record.page_id, record);
        true
    }
}

/// Heads pointing directly at a topic item, grouped by relation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubGraph {
    pub topic_item: ItemId,
    #[serde(rename = "heads", with = "heads_serde")]
    pub heads_by_relation: BTreeMap<PropertyId, BTreeSet<ItemId>>,
}

mod heads_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        heads: &BTreeMap<PropertyId, BTreeSet<ItemId>>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        // numeric key order, not lexicographic
        s.collect_map(heads.iter().map(|(rel, ids)| (rel.to_string(), ids)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<PropertyId, BTreeSet<ItemId>>, D::Error> {
        let raw: BTreeMap<String, BTreeSet<ItemId>> = BTreeMap::deserialize(d)?;
        raw.into_iter()
            .map(|(k, v)| {
                parse_property(&k)
                    .map(|p| (p, v))
                    .map_err(serde::de::Error::custom)
            })
            .collect()
    }
}

impl SubGraph {
    pub fn heads(&self, relation: PropertyId) -> Option<&BTreeSet<ItemId>> {
        self.heads_by_relation.get(&relation)
    }
}

/// Accepts `31` or `P31` (any case).
pub fn parse_property(s: &str) -> Result<PropertyId, KgError> {
    let t = s.trim();
    let digits = t.strip_prefix(['P', 'p']).unwrap_or(t);
    match digits.parse::<PropertyId>() {
        Ok(p) if p > 0 => Ok(p),
        _ => Err(KgError::BadProperty(s.to_string())),
    }
}

/// Parse a comma-separated relation list such as `P31,279`.
pub fn parse_property_list(s: &str) -> Result<BTreeSet<PropertyId>, KgError> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(parse_property)
        .collect()
}

fn open(path: &Path) -> Result<BufReader<File>, KgError> {
    File::open(path)
        .map(|f| BufReader::with_capacity(1 << 20, f))
        .map_err(|source| KgError::FileNotReadable {
            path: path.to_path_buf(),
            source,
        })
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(r)
}

fn parse_positive(field: &[u8]) -> Option<u64> {
    std::str::from_utf8(field)
        .ok()?
        .trim()
        .parse::<u64>()
        .ok()
        .filter(|v| *v > 0)
}

fn parse_count(field: &[u8]) -> Option<u64> {
    std::str::from_utf8(field).ok()?.trim().parse::<u64>().ok()
}

fn looks_like_header(record: &csv::ByteRecord) -> bool {
    record
        .get(0)
        .map(|f| parse_count(f).is_none())
        .unwrap_or(false)
}

/// Drives a row callback over a CSV stream, handling header detection and
/// strict/lenient error policy. The callback returns `Err(reason)` for a
/// malformed row.
fn for_each_row<R, F>(
    reader: R,
    mode: ParseMode,
    report: &mut LoadReport,
    mut f: F,
) -> Result<(), KgError>
where
    R: Read,
    F: FnMut(&csv::ByteRecord, &mut LoadReport) -> Result<(), String>,
{
    let mut rdr = csv_reader(reader);
    let mut record = csv::ByteRecord::new();
    let mut first = true;
    loop {
        let line = rdr.position().line();
        match rdr.read_byte_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(line);
                match mode {
                    ParseMode::Strict => {
                        return Err(KgError::MalformedRow {
                            line,
                            reason: e.to_string(),
                        })
                    }
                    ParseMode::Lenient => {
                        report.malformed += 1;
                        continue;
                    }
                }
            }
        }
        let line = record.position().map(|p| p.line()).unwrap_or(line);
        if first {
            first = false;
            if looks_like_header(&record) {
                report.header = true;
                continue;
            }
        }
        if record.len() == 1 && record.get(0).is_some_and(|f| f.is_empty()) {
            continue;
        }
        report.rows += 1;
        if let Err(reason) = f(&record, report) {
            match mode {
                ParseMode::Strict => return Err(KgError::MalformedRow { line, reason }),
                ParseMode::Lenient => {
                    log::warn!("skipping malformed row at line {line}: {reason}");
                    report.malformed += 1;
                }
            }
        }
    }
    Ok(())
}

/// Stream a statements file, keeping rows whose relation passes `filter`.
pub fn load_statements(
    path: &Path,
    filter: &RelationFilter,
    mode: ParseMode,
) -> Result<(TripleStore, LoadReport), KgError> {
    read_statements(open(path)?, filter, mode)
}

pub fn read_statements<R: Read>(
    reader: R,
    filter: &RelationFilter,
    mode: ParseMode,
) -> Result<(TripleStore, LoadReport), KgError> {
    let mut store = TripleStore::new();
    let mut report = LoadReport::default();
    for_each_row(reader, mode, &mut report, |rec, report| {
        if rec.len() != 3 {
            return Err(format!("expected 3 columns, found {}", rec.len()));
        }
        let head = parse_positive(&rec[0]).ok_or("bad source item id")?;
        let relation = parse_positive(&rec[1])
            .and_then(|v| PropertyId::try_from(v).ok())
            .ok_or("bad edge property id")?;
        let tail = parse_positive(&rec[2]).ok_or("bad target item id")?;
        if filter.keeps(relation) {
            store.push(Triple {
                head,
                relation,
                tail,
            });
            report.kept += 1;
        }
        Ok(())
    })?;
    Ok((store, report))
}

fn utf8_field(rec: &csv::ByteRecord, i: usize, name: &str) -> Result<String, String> {
    let raw = rec.get(i).ok_or_else(|| format!("missing {name}"))?;
    String::from_utf8(raw.to_vec()).map_err(|_| format!("{name} is not valid UTF-8"))
}

pub fn load_items(path: &Path, mode: ParseMode) -> Result<(ItemIndex, LoadReport), KgError> {
    read_items(open(path)?, mode)
}

pub fn read_items<R: Read>(reader: R, mode: ParseMode) -> Result<(ItemIndex, LoadReport), KgError> {
    let mut index = ItemIndex::default();
    let mut report = LoadReport::default();
    for_each_row(reader, mode, &mut report, |rec, report| {
        if rec.len() < 2 || rec.len() > 3 {
            return Err(format!("expected 3 columns, found {}", rec.len()));
        }
        let item_id = parse_positive(&rec[0]).ok_or("bad item id")?;
        let label = utf8_field(rec, 1, "label")?;
        let description = if rec.len() == 3 {
            utf8_field(rec, 2, "description")?
        } else {
            String::new()
        };
        if label.trim().is_empty() {
            report.empty_labels += 1;
            return Ok(());
        }
        if index.insert(ItemRecord {
            item_id,
            label,
            description,
        }) {
            report.kept += 1;
        } else {
            log::warn!("duplicate item id {item_id}; keeping first occurrence");
            report.duplicates += 1;
        }
        Ok(())
    })?;
    Ok((index, report))
}

pub fn load_pages(path: &Path, mode: ParseMode) -> Result<(PageIndex, LoadReport), KgError> {
    read_pages(open(path)?, mode)
}

pub fn read_pages<R: Read>(reader: R, mode: ParseMode) -> Result<(PageIndex, LoadReport), KgError> {
    let mut index = PageIndex::default();
    let mut report = LoadReport::default();
    for_each_row(reader, mode, &mut report, |rec, report| {
        if rec.len() != 4 {
            return Err(format!("expected 4 columns, found {}", rec.len()));
        }
        let page_id = parse_positive(&rec[0]).ok_or("bad page id")?;
        let item_id = parse_positive(&rec[1]).ok_or("bad item id")?;
        let title = utf8_field(rec, 2, "title")?;
        let views = parse_count(&rec[3]).ok_or("bad view count")?;
        if index.insert(PageRecord {
            page_id,
            item_id,
            title,
            views,
        }) {
            report.kept += 1;
        } else {
            log::warn!(
                "duplicate page row (page {page_id}, item {item_id}); keeping first occurrence"
            );
            report.duplicates += 1;
        }
        Ok(())
    })?;
    Ok((index, report))
}

/// Find the single item whose stored label equals `label` exactly.
pub fn resolve_topic(index: &ItemIndex, label: &str) -> Result<ItemId, KgError> {
    match index.ids_for_label(label) {
        [] => Err(KgError::TopicNotFound(label.to_string())),
        [id] => Ok(*id),
        ids => Err(KgError::AmbiguousTopic {
            label: label.to_string(),
            ids: ids.to_vec(),
        }),
    }
}

/// `heads[r] = { h : (h, r, topic) ∈ store }` for each requested relation.
pub fn extract_subgraph(
    store: &TripleStore,
    topic: ItemId,
    relations: &BTreeSet<PropertyId>,
) -> SubGraph {
    let heads_by_relation = relations
        .iter()
        .map(|&r| (r, store.heads(topic, r).iter().copied().collect()))
        .collect();
    SubGraph {
        topic_item: topic,
        heads_by_relation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(head: u64, relation: u32, tail: u64) -> Triple {
        Triple {
            head,
            relation,
            tail,
        }
    }

    #[test]
    fn statements_filtered_by_relation() {
        let data = "263424,31,154007\n263424,279,40050\n7,5,9\n";
        let (store, report) =
            read_statements(data.as_bytes(), &[31, 279].into(), ParseMode::Strict).unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(report.rows, 3);
        assert!(!report.header);
    }

    #[test]
    fn statements_header_detected() {
        let data = "source_item_id,edge_property_id,target_item_id\r\n1,31,2\r\n";
        let (store, report) =
            read_statements(data.as_bytes(), &RelationFilter::All, ParseMode::Strict).unwrap();
        assert!(report.header);
        assert_eq!(store.triples(), &[t(1, 31, 2)]);
    }

    #[test]
    fn empty_statements() {
        let (store, _) = read_statements("".as_bytes(), &[31].into(), ParseMode::Strict).unwrap();
        assert!(store.is_empty());
    }

    #[test]
    fn malformed_strict_vs_lenient() {
        let data = "1,31,2\n3,x,4\n5,31\n6,31,7\n";
        match read_statements(data.as_bytes(), &RelationFilter::All, ParseMode::Strict) {
            Err(KgError::MalformedRow { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected malformed row, got {other:?}"),
        }
        let (store, report) =
            read_statements(data.as_bytes(), &RelationFilter::All, ParseMode::Lenient).unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(report.malformed, 2);
    }

    #[test]
    fn zero_ids_are_malformed() {
        assert!(read_statements(
            "0,31,2\n".as_bytes(),
            &RelationFilter::All,
            ParseMode::Strict
        )
        .is_err());
    }

    #[test]
    fn items_lookup_and_duplicates() {
        let data = "1,Universe,totality of space and all contents\n5,A,x\n5,B,y\n";
        let (index, report) = read_items(data.as_bytes(), ParseMode::Strict).unwrap();
        assert_eq!(index.get(1).unwrap().label, "Universe");
        assert_eq!(index.get(5).unwrap().label, "A");
        assert_eq!(report.duplicates, 1);
        assert_eq!(resolve_topic(&index, "Universe").unwrap(), 1);
    }

    #[test]
    fn items_quoted_fields() {
        let data = "item_id,en_label,en_description\n10,\"Kidneys (meat)\",\"organ meat, food\"\n";
        let (index, report) = read_items(data.as_bytes(), ParseMode::Strict).unwrap();
        assert!(report.header);
        assert_eq!(index.get(10).unwrap().description, "organ meat, food");
    }

    #[test]
    fn empty_items_file() {
        let (index, _) = read_items("".as_bytes(), ParseMode::Strict).unwrap();
        assert!(index.is_empty());
        assert!(index.get(1).is_none());
        assert!(matches!(
            resolve_topic(&index, "NoSuchTopic"),
            Err(KgError::TopicNotFound(_))
        ));
    }

    #[test]
    fn ambiguous_topic() {
        let data = "1,Mercury,planet\n2,Mercury,element\n";
        let (index, _) = read_items(data.as_bytes(), ParseMode::Strict).unwrap();
        match resolve_topic(&index, "Mercury") {
            Err(KgError::AmbiguousTopic { ids, .. }) => assert_eq!(ids, vec![1, 2]),
            other => panic!("{other:?}"),
        }
        // case-sensitive
        assert!(resolve_topic(&index, "mercury").is_err());
    }

    #[test]
    fn pages_by_item() {
        let data = "12,6199,Anarchism,31335\n13,6200,Other,5\n14,6199,Dup,1\n";
        let (index, report) = read_pages(data.as_bytes(), ParseMode::Strict).unwrap();
        assert_eq!(index.by_item(6199).unwrap().page_id, 12);
        assert_eq!(index.len(), 2);
        assert_eq!(report.duplicates, 1);
        assert!(index.by_item(42).is_none());
    }

    #[test]
    fn subgraph_fixture() {
        let store: TripleStore = [
            t(10, 31, 99),
            t(11, 31, 99),
            t(10, 31, 99),
            t(12, 279, 99),
            t(13, 31, 98),
        ]
        .into_iter()
        .collect();
        let sg = extract_subgraph(&store, 99, &[31, 279].into_iter().collect());
        assert_eq!(sg.heads(31).unwrap(), &[10, 11].into_iter().collect());
        assert_eq!(sg.heads(279).unwrap(), &[12].into_iter().collect());

        let empty = extract_subgraph(&store, 5, &[31, 279].into_iter().collect());
        assert!(empty.heads_by_relation.values().all(BTreeSet::is_empty));
    }

    #[test]
    fn subgraph_json_format() {
        let sg = SubGraph {
            topic_item: 2095,
            heads_by_relation: [(31, [3, 1].into_iter().collect()), (279, BTreeSet::new())]
                .into_iter()
                .collect(),
        };
        let json = serde_json::to_string(&sg).unwrap();
        assert_eq!(json, r#"{"topic_item":2095,"heads":{"31":[1,3],"279":[]}}"#);
        let back: SubGraph = serde_json::from_str(&json).unwrap();
        assert_eq!(back, sg);
    }

    #[test]
    fn property_parsing() {
        assert_eq!(parse_property("P31").unwrap(), 31);
        assert_eq!(parse_property("279").unwrap(), 279);
        assert!(parse_property("Q5").is_err());
        assert_eq!(
            parse_property_list("P31, 279").unwrap(),
            [31, 279].into_iter().collect()
        );
    }
}
