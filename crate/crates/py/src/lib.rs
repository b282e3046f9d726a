//! Python bindings. Records cross the boundary as plain dicts with the same
//! shape as the JSONL files.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use pythonize::{depythonize, pythonize};

use rapidner::corpus::{self, SentenceSplitter};
use rapidner::dataset::{self, bucket_of, Bucket, Ratios, Tag, TaggedSentence};
use rapidner::gazetteer::{self, DictEntry, EntryLimits, Insert, Provenance};
use rapidner::kgstore::{self, ParseMode};
use rapidner::matcher::{self, MatcherOptions};
use rapidner::pipeline::{self, FinalizeOptions, ProjectConfig, RunOptions};
use rapidner::quality;
use rapidner::review::{self, default_type_info, Action, SpanRef};
use rapidner::tokenize as tok;
use rapidner::types::{AnnotatedRecord, AnnotatedSentence, EntityType, Sentence, SourceKind};

create_exception!(rapidner, RapidnerError, PyException);

fn err(e: impl Display) -> PyErr {
    RapidnerError::new_err(e.to_string())
}

fn etype(name: &str) -> PyResult<EntityType> {
    EntityType::new(name).map_err(err)
}

fn to_py<T: serde::Serialize>(py: Python<'_>, v: &T) -> PyResult<PyObject> {
    Ok(pythonize(py, v).map_err(err)?.unbind())
}

fn record_from(obj: &Bound<'_, PyAny>) -> PyResult<AnnotatedSentence> {
    let r: AnnotatedRecord = depythonize(obj).map_err(err)?;
    Ok(r.into())
}

fn records_from(objs: &Bound<'_, PyAny>) -> PyResult<Vec<AnnotatedSentence>> {
    let rs: Vec<AnnotatedRecord> = depythonize(objs).map_err(err)?;
    Ok(rs.into_iter().map(Into::into).collect())
}

/// Remove markup, URLs, emoji and control characters; normalize punctuation
/// runs and whitespace.
#[pyfunction]
fn clean_text(text: &str) -> String {
    corpus::clean_text(text)
}

#[pyfunction]
#[pyo3(signature = (text, abbreviations=None))]
fn split_sentences(text: &str, abbreviations: Option<Vec<String>>) -> Vec<String> {
    let mut splitter = SentenceSplitter::default();
    for a in abbreviations.unwrap_or_default() {
        splitter = splitter.with_abbreviation(&a);
    }
    splitter.split(text)
}

/// `(text, start, end)` per token; offsets count Unicode scalars.
#[pyfunction]
fn tokenize(text: &str) -> Vec<(String, usize, usize)> {
    tok::tokenize(text)
        .into_iter()
        .map(|t| (t.text, t.start, t.end))
        .collect()
}

#[pyfunction]
fn normalize_entry(surface: &str) -> String {
    gazetteer::normalize_entry(surface)
}

#[pyclass(name = "Dictionary", module = "rapidner")]
#[derive(Clone)]
struct PyDictionary {
    inner: gazetteer::Dictionary,
}

#[pymethods]
impl PyDictionary {
    #[new]
    #[pyo3(signature = (entity_type, surfaces=None))]
    fn new(entity_type: &str, surfaces: Option<Vec<String>>) -> PyResult<Self> {
        let inner =
            gazetteer::Dictionary::from_surfaces(etype(entity_type)?, surfaces.unwrap_or_default());
        Ok(PyDictionary { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = gazetteer::Dictionary::load(&path).map_err(err)?;
        Ok(PyDictionary { inner })
    }

    /// Dictionary from the instance-of / subclass-of heads of `topic`
    /// (an item id or an exact label) in KDWD-style CSV files.
    #[staticmethod]
    #[pyo3(signature = (statements, items, topic, entity_type, relations=vec![31, 279], lenient=false))]
    fn from_kg(
        statements: PathBuf,
        items: PathBuf,
        topic: &Bound<'_, PyAny>,
        entity_type: &str,
        relations: Vec<u32>,
        lenient: bool,
    ) -> PyResult<Self> {
        let mode = if lenient {
            ParseMode::Lenient
        } else {
            ParseMode::Strict
        };
        let relations: BTreeSet<_> = relations.into_iter().collect();
        let (store, _) =
            kgstore::load_statements(&statements, &relations.clone().into(), mode).map_err(err)?;
        let (index, _) = kgstore::load_items(&items, mode).map_err(err)?;
        let topic = match topic.extract::<u64>() {
            Ok(id) => id,
            Err(_) => kgstore::resolve_topic(&index, &topic.extract::<String>()?).map_err(err)?,
        };
        let sg = kgstore::extract_subgraph(&store, topic, &relations);
        let (inner, _) =
            gazetteer::build_dictionary(&sg, &index, etype(entity_type)?, &EntryLimits::default());
        Ok(PyDictionary { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn entity_type(&self) -> String {
        self.inner.entity_type().to_string()
    }

    /// Returns False when an entry with the same normalized key exists.
    #[pyo3(signature = (surface, item_id=None))]
    fn add(&mut self, surface: &str, item_id: Option<u64>) -> bool {
        matches!(
            self.inner
                .insert(DictEntry::new(surface, item_id, Provenance::Manual)),
            Insert::Added
        )
    }

    fn surfaces(&self) -> Vec<String> {
        self.inner.entries().map(|e| e.surface.clone()).collect()
    }

    #[pyo3(signature = (other, entity_type=None))]
    fn union(&self, other: &PyDictionary, entity_type: Option<&str>) -> PyResult<Self> {
        let t = match entity_type {
            Some(t) => etype(t)?,
            None => self.inner.entity_type().clone(),
        };
        Ok(PyDictionary {
            inner: gazetteer::union(&self.inner, &other.inner, t),
        })
    }

    fn subtract(&self, other: &PyDictionary) -> Self {
        PyDictionary {
            inner: gazetteer::subtract(&self.inner, &other.inner),
        }
    }

    fn augment(&self, surfaces: Vec<String>) -> Self {
        let (inner, _) =
            gazetteer::augment_from_str(&self.inner, &surfaces.join("\n"), &EntryLimits::default());
        PyDictionary { inner }
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __contains__(&self, surface: &str) -> bool {
        self.inner.get(surface).is_some()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dictionary({}, {} entries)",
            self.inner.entity_type(),
            self.inner.len()
        )
    }
}

#[pyclass(name = "Matcher", module = "rapidner", frozen)]
struct PyMatcher {
    inner: matcher::Matcher,
}

#[pymethods]
impl PyMatcher {
    /// `priority` defaults to the order of `dictionaries`.
    #[new]
    #[pyo3(signature = (dictionaries, priority=None, case_sensitive=false))]
    fn new(
        dictionaries: Vec<PyDictionary>,
        priority: Option<Vec<String>>,
        case_sensitive: bool,
    ) -> PyResult<Self> {
        let dicts: Vec<_> = dictionaries.into_iter().map(|d| d.inner).collect();
        let priority = match priority {
            Some(p) => p.iter().map(|t| etype(t)).collect::<PyResult<Vec<_>>>()?,
            None => dicts.iter().map(|d| d.entity_type().clone()).collect(),
        };
        let inner = matcher::Matcher::compile(&dicts, &priority, MatcherOptions { case_sensitive })
            .map_err(err)?;
        Ok(PyMatcher { inner })
    }

    #[getter]
    fn pattern_count(&self) -> usize {
        self.inner.pattern_count()
    }

    #[pyo3(signature = (text, sent_id="s#0"))]
    fn annotate(&self, py: Python<'_>, text: &str, sent_id: &str) -> PyResult<PyObject> {
        let a = self.inner.annotate(&Sentence::new(sent_id, text));
        to_py(py, &AnnotatedRecord::from(&a))
    }

    /// Sentence ids are `s#<index>`.
    fn annotate_many(&self, py: Python<'_>, texts: Vec<String>) -> PyResult<PyObject> {
        let sentences: Vec<Sentence> = texts
            .into_iter()
            .enumerate()
            .map(|(i, t)| Sentence::new(format!("s#{i}"), t))
            .collect();
        let out = py.allow_threads(|| self.inner.annotate_all(&sentences));
        let records: Vec<AnnotatedRecord> = out.iter().map(AnnotatedRecord::from).collect();
        to_py(py, &records)
    }

    /// Annotated record rendered with `<em class="TYPE">` markup.
    fn markup(&self, record: &Bound<'_, PyAny>) -> PyResult<String> {
        Ok(matcher::to_em_markup(&record_from(record)?))
    }
}

/// `(token, tag)` pairs for an annotated record.
#[pyfunction]
fn spans_to_bio(record: &Bound<'_, PyAny>) -> PyResult<Vec<(String, String)>> {
    let t = dataset::spans_to_bio(&record_from(record)?).map_err(err)?;
    Ok(t.tokens
        .into_iter()
        .zip(t.tags)
        .map(|(tok, tag)| (tok.text, tag.to_string()))
        .collect())
}

/// Spans for `tags` over the tokens of `text`.
#[pyfunction]
#[pyo3(signature = (text, tags, lenient=false))]
fn bio_to_spans(
    py: Python<'_>,
    text: &str,
    tags: Vec<String>,
    lenient: bool,
) -> PyResult<PyObject> {
    let tokens = tok::tokenize(text);
    if tokens.len() != tags.len() {
        return Err(err(format!(
            "{} tags for {} tokens",
            tags.len(),
            tokens.len()
        )));
    }
    let tags = tags
        .iter()
        .map(|t| t.parse::<Tag>().map_err(err))
        .collect::<PyResult<Vec<_>>>()?;
    let t = TaggedSentence {
        sent_id: "s#0".into(),
        text: text.to_string(),
        tokens,
        tags,
        source: SourceKind::Other,
    };
    let decoded = dataset::bio_to_spans(&t, lenient).map_err(err)?;
    to_py(py, &decoded.spans)
}

#[pyfunction]
fn cohen_kappa(a: Vec<String>, b: Vec<String>) -> PyResult<f64> {
    quality::cohen_kappa(&a, &b).map_err(err)
}

/// `matrix[i][k]` = raters assigning item `i` to category `k`.
#[pyfunction]
fn fleiss_kappa(matrix: Vec<Vec<usize>>, n_raters: usize) -> PyResult<f64> {
    quality::fleiss_kappa(&matrix, n_raters).map_err(err)
}

/// Exact-match span precision/recall/F1 between two lists of annotated
/// records with the same sentence ids.
#[pyfunction]
fn span_prf(
    py: Python<'_>,
    gold: &Bound<'_, PyAny>,
    pred: &Bound<'_, PyAny>,
) -> PyResult<PyObject> {
    let report = quality::span_prf(&records_from(gold)?, &records_from(pred)?).map_err(err)?;
    to_py(py, &report)
}

/// Deterministic hash split of sentence ids.
#[pyfunction]
#[pyo3(signature = (ids, ratios=(0.8, 0.1, 0.1), seed=42))]
fn split(
    py: Python<'_>,
    ids: Vec<String>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> PyResult<PyObject> {
    let r = Ratios::new(ratios.0, ratios.1, ratios.2).map_err(err)?;
    let out = PyDict::new(py);
    let mut buckets: [Vec<String>; 3] = Default::default();
    for id in ids {
        buckets[bucket_of(seed, &id, &r) as usize].push(id);
    }
    for (b, v) in [Bucket::Train, Bucket::Dev, Bucket::Test]
        .into_iter()
        .zip(buckets)
    {
        out.set_item(b.as_str(), v)?;
    }
    Ok(out.into_any().unbind())
}

#[pyclass(name = "ReviewStore", module = "rapidner", frozen)]
struct PyReviewStore {
    inner: review::ReviewStore,
}

fn span_ref(t: Option<(usize, usize, Option<String>)>, what: &str) -> PyResult<SpanRef> {
    let (start, end, ty) = t.ok_or_else(|| err(format!("{what} is required for this action")))?;
    Ok(SpanRef {
        start,
        end,
        entity_type: ty.as_deref().map(etype).transpose()?,
    })
}

#[pymethods]
impl PyReviewStore {
    /// New journal at `path` seeded from annotated records.
    #[staticmethod]
    #[pyo3(signature = (path, records, types, force=false))]
    fn init(
        path: PathBuf,
        records: &Bound<'_, PyAny>,
        types: Vec<String>,
        force: bool,
    ) -> PyResult<Self> {
        let types = types
            .iter()
            .map(|t| etype(t))
            .collect::<PyResult<Vec<_>>>()?;
        let inner = review::ReviewStore::init(
            &records_from(records)?,
            default_type_info(&types),
            &path,
            force,
        )
        .map_err(err)?;
        Ok(PyReviewStore { inner })
    }

    #[staticmethod]
    fn open(path: PathBuf) -> PyResult<Self> {
        Ok(PyReviewStore {
            inner: review::ReviewStore::open(&path).map_err(err)?,
        })
    }

    /// Apply one decision. `action` is accept, skip, add_span, edit_span or
    /// delete_span; spans are `(start, end, type)` tuples. Returns the
    /// updated record.
    #[pyo3(signature = (sent_id, annotator_id, action, span=None, new_span=None, revision=None))]
    #[allow(clippy::too_many_arguments)]
    fn decide(
        &self,
        py: Python<'_>,
        sent_id: &str,
        annotator_id: &str,
        action: &str,
        span: Option<(usize, usize, Option<String>)>,
        new_span: Option<(usize, usize, Option<String>)>,
        revision: Option<u64>,
    ) -> PyResult<PyObject> {
        let action = match action {
            "accept" => Action::Accept,
            "skip" => Action::Skip,
            "add_span" => Action::AddSpan {
                span: span_ref(span, "span")?,
            },
            "edit_span" => Action::EditSpan {
                span: span_ref(span, "span")?,
                new_span: span_ref(new_span, "new_span")?,
            },
            "delete_span" => Action::DeleteSpan {
                span: span_ref(span, "span")?,
            },
            other => return Err(err(format!("unknown action {other:?}"))),
        };
        let rec = py
            .allow_threads(|| {
                self.inner
                    .apply_decision(sent_id, annotator_id, revision, action)
            })
            .map_err(err)?;
        to_py(py, &rec)
    }

    fn get(&self, py: Python<'_>, sent_id: &str) -> PyResult<Option<PyObject>> {
        self.inner.get(sent_id).map(|r| to_py(py, &r)).transpose()
    }

    fn progress(&self, py: Python<'_>) -> PyResult<PyObject> {
        to_py(py, &self.inner.progress())
    }

    /// ACCEPTED and CORRECTED sentences as annotated records.
    fn export_verified(&self, py: Python<'_>) -> PyResult<PyObject> {
        let records: Vec<AnnotatedRecord> = self
            .inner
            .export_verified()
            .iter()
            .map(AnnotatedRecord::from)
            .collect();
        to_py(py, &records)
    }

    fn compact(&self) -> PyResult<()> {
        self.inner.compact().map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Run the project pipeline up to review-store initialization. Returns one
/// report per stage.
#[pyfunction]
#[pyo3(signature = (config, force=false, lenient=false))]
fn run_pipeline(py: Python<'_>, config: PathBuf, force: bool, lenient: bool) -> PyResult<PyObject> {
    let report = py
        .allow_threads(|| {
            let cfg = ProjectConfig::load(&config)?;
            pipeline::run_pipeline(&cfg, RunOptions { force, lenient })
        })
        .map_err(err)?;
    to_py(py, &report.stages)
}

/// Export train/dev/test CoNLL files; returns the dataset metadata.
#[pyfunction]
#[pyo3(signature = (config, auto_accept=false))]
fn finalize(py: Python<'_>, config: PathBuf, auto_accept: bool) -> PyResult<PyObject> {
    let meta = py
        .allow_threads(|| {
            let cfg = ProjectConfig::load(&config)?;
            pipeline::finalize(
                &cfg,
                &FinalizeOptions {
                    auto_accept,
                    store: None,
                },
            )
        })
        .map_err(err)?;
    to_py(py, &meta)
}

#[pymodule]
#[pyo3(name = "rapidner")]
fn rapidner_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("RapidnerError", m.py().get_type::<RapidnerError>())?;
    m.add_class::<PyDictionary>()?;
    m.add_class::<PyMatcher>()?;
    m.add_class::<PyReviewStore>()?;
    m.add_function(wrap_pyfunction!(clean_text, m)?)?;
    m.add_function(wrap_pyfunction!(split_sentences, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_entry, m)?)?;
    m.add_function(wrap_pyfunction!(spans_to_bio, m)?)?;
    m.add_function(wrap_pyfunction!(bio_to_spans, m)?)?;
    m.add_function(wrap_pyfunction!(cohen_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(fleiss_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(span_prf, m)?)?;
    m.add_function(wrap_pyfunction!(split, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(finalize, m)?)?;
    Ok(())
}
