//! Agreement and evaluation metrics: Cohen's and Fleiss' kappa, span-level
//! precision/recall/F1.
//!
//! Conventions for degenerate inputs:
//!
//! * kappa with expected agreement `p_e == 1` is `1.0` when observed
//!   agreement is perfect and `0.0` otherwise;
//! * precision (recall) with a zero denominator is `0.0`, except when a type
//!   has no gold and no predicted spans at all, in which case P = R = F1 = 1.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{spans_to_bio, DatasetError};
use crate::types::{AnnotatedSentence, EntityType};

#[derive(Debug, Error)]
pub enum QualityError {
    #[error("label sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no items to compare")]
    EmptyInput,
    #[error("row {row} sums to {sum}, expected {expected} raters")]
    RowSumMismatch {
        row: usize,
        sum: usize,
        expected: usize,
    },
    #[error("at least two raters are required, got {0}")]
    TooFewRaters(usize),
    #[error("gold and predicted sentence sets differ: {0}")]
    SentenceSetMismatch(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// One annotator's labels over a fixed, ordered item set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSequence {
    pub annotator_id: String,
    pub labels: Vec<String>,
}

fn degenerate(p_o: f64, p_e: f64) -> Option<f64> {
    ((1.0 - p_e).abs() < 1e-15).then(|| if (1.0 - p_o).abs() < 1e-15 { 1.0 } else { 0.0 })
}

/// `(p_o - p_e) / (1 - p_e)` with categories taken from both sequences.
pub fn cohen_kappa<L: Eq + Hash>(a: &[L], b: &[L]) -> Result<f64, QualityError> {
    if a.len() != b.len() {
        return Err(QualityError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(QualityError::EmptyInput);
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count();
    let p_o = agree as f64 / n;
    let mut counts: HashMap<&L, (usize, usize)> = HashMap::new();
    for x in a {
        counts.entry(x).or_default().0 += 1;
    }
    for y in b {
        counts.entry(y).or_default().1 += 1;
    }
    let p_e: f64 = counts
        .values()
        .map(|&(ca, cb)| (ca as f64 / n) * (cb as f64 / n))
        .sum();
    Ok(degenerate(p_o, p_e).unwrap_or((p_o - p_e) / (1.0 - p_e)))
}

/// Fleiss' kappa over an item × category count matrix where every row sums
/// to `n_raters`.
pub fn fleiss_kappa(matrix: &[Vec<usize>], n_raters: usize) -> Result<f64, QualityError> {
    if n_raters < 2 {
        return Err(QualityError::TooFewRaters(n_raters));
    }
    if matrix.is_empty() {
        return Err(QualityError::EmptyInput);
    }
    let categories = matrix.iter().map(Vec::len).max().unwrap_or(0);
    let mut totals = vec![0usize; categories];
    let n = n_raters as f64;
    let mut p_sum = 0.0;
    for (row, counts) in matrix.iter().enumerate() {
        let sum: usize = counts.iter().sum();
        if sum != n_raters {
            return Err(QualityError::RowSumMismatch {
                row,
                sum,
                expected: n_raters,
            });
        }
        let sq: usize = counts.iter().map(|c| c * c).sum();
        p_sum += (sq as f64 - n) / (n * (n - 1.0));
        for (j, c) in counts.iter().enumerate() {
            totals[j] += c;
        }
    }
    let items = matrix.len() as f64;
    let p_bar = p_sum / items;
    let p_e: f64 = totals
        .iter()
        .map(|&t| {
            let p = t as f64 / (items * n);
            p * p
        })
        .sum();
    Ok(degenerate(p_bar, p_e).unwrap_or((p_bar - p_e) / (1.0 - p_e)))
}

/// Build the Fleiss count matrix from aligned label sequences.
pub fn fleiss_matrix(seqs: &[LabelSequence]) -> Result<Vec<Vec<usize>>, QualityError> {
    let len = seqs.first().map(|s| s.labels.len()).unwrap_or(0);
    if let Some(bad) = seqs.iter().find(|s| s.labels.len() != len) {
        return Err(QualityError::LengthMismatch(len, bad.labels.len()));
    }
    let categories: BTreeSet<&str> = seqs
        .iter()
        .flat_map(|s| s.labels.iter().map(String::as_str))
        .collect();
    let index: HashMap<&str, usize> = categories
        .iter()
        .enumerate()
        .map(|(i, c)| (*c, i))
        .collect();
    Ok((0..len)
        .map(|i| {
            let mut row = vec![0; categories.len()];
            for s in seqs {
                row[index[s.labels[i].as_str()]] += 1;
            }
            row
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairKappa {
    pub a: String,
    pub b: String,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub unit: String,
    pub items: usize,
    pub pairwise: Vec<PairKappa>,
    pub fleiss: Option<f64>,
}

impl AgreementReport {
    /// Symmetric lookup; self-comparison is 1.
    pub fn kappa(&self, a: &str, b: &str) -> Option<f64> {
        if a == b {
            return Some(1.0);
        }
        self.pairwise
            .iter()
            .find(|p| (p.a == a && p.b == b) || (p.a == b && p.b == a))
            .map(|p| p.kappa)
    }

    /// Percent-formatted table in the shape of a pairwise agreement table.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "unit: {} ({} items)", self.unit, self.items);
        let _ = writeln!(
            out,
            "{:<20} {:<20} {:>8}",
            "annotator", "annotator", "kappa"
        );
        for p in &self.pairwise {
            let _ = writeln!(out, "{:<20} {:<20} {:>7.1}%", p.a, p.b, p.kappa * 100.0);
        }
        if let Some(f) = self.fleiss {
            let _ = writeln!(out, "{:<41} {:>7.1}%", "Fleiss", f * 100.0);
        }
        out
    }
}

pub fn agreement(seqs: &[LabelSequence], unit: &str) -> Result<AgreementReport, QualityError> {
    if seqs.len() < 2 {
        return Err(QualityError::TooFewRaters(seqs.len()));
    }
    let mut pairwise = Vec::new();
    for i in 0..seqs.len() {
        for j in i + 1..seqs.len() {
            pairwise.push(PairKappa {
                a: seqs[i].annotator_id.clone(),
                b: seqs[j].annotator_id.clone(),
                kappa: cohen_kappa(&seqs[i].labels, &seqs[j].labels)?,
            });
        }
    }
    let fleiss = fleiss_kappa(&fleiss_matrix(seqs)?, seqs.len())?;
    Ok(AgreementReport {
        unit: unit.to_string(),
        items: seqs[0].labels.len(),
        pairwise,
        fleiss: Some(fleiss),
    })
}

fn by_id<'a>(
    annotator: &str,
    sentences: &'a [AnnotatedSentence],
) -> Result<BTreeMap<&'a str, &'a AnnotatedSentence>, QualityError> {
    let mut map = BTreeMap::new();
    for s in sentences {
        if map.insert(s.sentence.sent_id.as_str(), s).is_some() {
            return Err(QualityError::SentenceSetMismatch(format!(
                "{annotator}: duplicate sentence {}",
                s.sentence.sent_id
            )));
        }
    }
    Ok(map)
}

fn same_ids<'a, T>(maps: &[(&str, BTreeMap<&'a str, T>)]) -> Result<Vec<&'a str>, QualityError> {
    let first: Vec<&str> = maps[0].1.keys().copied().collect();
    for (name, m) in &maps[1..] {
        if !m.keys().copied().eq(first.iter().copied()) {
            return Err(QualityError::SentenceSetMismatch(format!(
                "{name} does not cover the same sentences as {}",
                maps[0].0
            )));
        }
    }
    Ok(first)
}

/// Token-level BIO labels, sentences ordered by id.
pub fn token_label_sequences(
    annotators: &[(String, Vec<AnnotatedSentence>)],
) -> Result<Vec<LabelSequence>, QualityError> {
    let maps = annotators
        .iter()
        .map(|(name, s)| Ok((name.as_str(), by_id(name, s)?)))
        .collect::<Result<Vec<_>, QualityError>>()?;
    if maps.is_empty() {
        return Ok(Vec::new());
    }
    let ids = same_ids(&maps)?;
    maps.iter()
        .map(|(name, m)| {
            let mut labels = Vec::new();
            for id in &ids {
                let tagged = spans_to_bio(m[id])?;
                labels.extend(tagged.tags.iter().map(ToString::to_string));
            }
            Ok(LabelSequence {
                annotator_id: name.to_string(),
                labels,
            })
        })
        .collect()
}

/// One item per distinct `(sentence, start, end)` proposed by anyone; each
/// annotator's label is the type they gave that exact extent, or `NONE`.
pub fn span_label_sequences(
    annotators: &[(String, Vec<AnnotatedSentence>)],
) -> Result<Vec<LabelSequence>, QualityError> {
    let maps = annotators
        .iter()
        .map(|(name, s)| Ok((name.as_str(), by_id(name, s)?)))
        .collect::<Result<Vec<_>, QualityError>>()?;
    if maps.is_empty() {
        return Ok(Vec::new());
    }
    let ids = same_ids(&maps)?;
    let mut items: BTreeSet<(&str, usize, usize)> = BTreeSet::new();
    for (_, m) in &maps {
        for id in &ids {
            for s in &m[id].spans {
                items.insert((id, s.start, s.end));
            }
        }
    }
    Ok(maps
        .iter()
        .map(|(name, m)| LabelSequence {
            annotator_id: name.to_string(),
            labels: items
                .iter()
                .map(|(id, start, end)| {
                    m[id]
                        .spans
                        .iter()
                        .find(|s| s.start == *start && s.end == *end)
                        .map(|s| s.entity_type.to_string())
                        .unwrap_or_else(|| "NONE".to_string())
                })
                .collect(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Prf {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Prf {
        if tp + fp == 0 && tp + fn_ == 0 {
            return Prf {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
                tp,
                fp,
                fn_,
            };
        }
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrfReport {
    pub per_type: BTreeMap<EntityType, Prf>,
    pub micro: Prf,
}

impl PrfReport {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14} {:>9} {:>9} {:>9} {:>7}",
            "type", "precision", "recall", "f1", "support"
        );
        let row = |out: &mut String, name: &str, p: &Prf| {
            let _ = writeln!(
                out,
                "{:<14} {:>9.4} {:>9.4} {:>9.4} {:>7}",
                name,
                p.precision,
                p.recall,
                p.f1,
                p.tp + p.fn_
            );
        };
        for (t, p) in &self.per_type {
            row(&mut out, t.as_str(), p);
        }
        row(&mut out, "micro", &self.micro);
        out
    }
}

/// Exact-match span evaluation on `(start, end, type)`.
pub fn span_prf(
    gold: &[AnnotatedSentence],
    pred: &[AnnotatedSentence],
) -> Result<PrfReport, QualityError> {
    let maps = vec![
        ("gold", by_id("gold", gold)?),
        ("pred", by_id("pred", pred)?),
    ];
    let ids = same_ids(&maps)?;
    let mut counts: BTreeMap<EntityType, (usize, usize, usize)> = BTreeMap::new();
    for id in ids {
        let g = &maps[0].1[id].spans;
        let p = &maps[1].1[id].spans;
        let mut unmatched: Vec<bool> = vec![true; g.len()];
        for ps in p {
            let hit = g
                .iter()
                .enumerate()
                .position(|(i, gs)| unmatched[i] && gs.key() == ps.key());
            let c = counts.entry(ps.entity_type.clone()).or_default();
            match hit {
                Some(i) => {
                    unmatched[i] = false;
                    c.0 += 1;
                }
                None => c.1 += 1,
            }
        }
        for (gs, um) in g.iter().zip(unmatched) {
            if um {
                counts.entry(gs.entity_type.clone()).or_default().2 += 1;
            }
        }
    }
    let (tp, fp, fn_) = counts
        .values()
        .fold((0, 0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1, acc.2 + c.2));
    Ok(PrfReport {
        per_type: counts
            .into_iter()
            .map(|(t, (tp, fp, fn_))| (t, Prf::from_counts(tp, fp, fn_)))
            .collect(),
        micro: Prf::from_counts(tp, fp, fn_),
    })
}
