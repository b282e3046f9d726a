//! Gazetteer matcher: every dictionary compiled into one character trie,
//! annotating sentences with leftmost-longest, token-aligned spans.
//!
//! Matching rules:
//!
//! * comparison is case-insensitive through a length-preserving per-character
//!   fold, so offsets in the original text are exact;
//! * a match must start at a token start and end at a token end (see
//!   [`crate::tokenize`]), so `mate` never fires inside `checkmate`;
//! * scanning goes left to right, takes the longest valid match at each
//!   position and resumes after it, so compounds such as
//!   `Barton Premium Blend` are never split into their parts;
//! * when several entity types own the same matched string, the first type
//!   in the priority list wins and a [`ConflictNote`] is recorded.

use std::collections::HashMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::gazetteer::Dictionary;
use crate::text::{collapse_whitespace, nfc, simple_fold};
use crate::tokenize::Boundaries;
use crate::types::{AnnotatedSentence, ConflictNote, EntityType, Origin, Sentence, Span};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MatchError {
    #[error("dictionary type {0} is missing from the priority list")]
    UnknownTypeInPriority(EntityType),
    #[error("no dictionaries given")]
    EmptyDictionarySet,
    #[error("markup text does not match sentence {sent_id:?}")]
    MarkupMismatch { sent_id: String },
    #[error("malformed markup at character {at}: {reason}")]
    MalformedMarkup { at: usize, reason: &'static str },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MatcherOptions {
    pub case_sensitive: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternMeta {
    pub entity_type: EntityType,
    pub item_id: Option<u64>,
    pub surface: String,
}

#[derive(Debug, Clone, Default)]
struct Node {
    /// Pattern ids ending here, in compile order.
    terminal: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct Matcher {
    nodes: Vec<Node>,
    edges: HashMap<(u32, char), u32>,
    meta: Vec<PatternMeta>,
    priority: Vec<EntityType>,
    rank: HashMap<EntityType, usize>,
    options: MatcherOptions,
    rejected: usize,
}

impl Matcher {
    /// Compile dictionaries in order. Every dictionary type must appear in
    /// `priority`.
    pub fn compile(
        dicts: &[Dictionary],
        priority: &[EntityType],
        options: MatcherOptions,
    ) -> Result<Matcher, MatchError> {
        if dicts.is_empty() {
            return Err(MatchError::EmptyDictionarySet);
        }
        let mut rank = HashMap::new();
        for (i, t) in priority.iter().enumerate() {
            rank.entry(t.clone()).or_insert(i);
        }
        if let Some(d) = dicts.iter().find(|d| !rank.contains_key(d.entity_type())) {
            return Err(MatchError::UnknownTypeInPriority(d.entity_type().clone()));
        }
        let mut m = Matcher {
            nodes: vec![Node::default()],
            edges: HashMap::new(),
            meta: Vec::new(),
            priority: priority.to_vec(),
            rank,
            options,
            rejected: 0,
        };
        for d in dicts {
            for e in d.entries() {
                m.add_pattern(PatternMeta {
                    entity_type: d.entity_type().clone(),
                    item_id: e.item_id,
                    surface: e.surface.clone(),
                });
            }
        }
        Ok(m)
    }

    fn fold(&self, c: char) -> char {
        if self.options.case_sensitive {
            c
        } else {
            simple_fold(c)
        }
    }

    fn add_pattern(&mut self, meta: PatternMeta) {
        let key = collapse_whitespace(&nfc(&meta.surface));
        if key.is_empty() {
            self.rejected += 1;
            return;
        }
        let mut node = 0u32;
        for c in key.chars() {
            let c = self.fold(c);
            node = match self.edges.get(&(node, c)) {
                Some(&next) => next,
                None => {
                    let next = self.nodes.len() as u32;
                    self.nodes.push(Node::default());
                    self.edges.insert((node, c), next);
                    next
                }
            };
        }
        let id = self.meta.len() as u32;
        self.nodes[node as usize].terminal.push(id);
        self.meta.push(meta);
    }

    pub fn pattern_count(&self) -> usize {
        self.meta.len()
    }

    pub fn rejected_count(&self) -> usize {
        self.rejected
    }

    pub fn priority(&self) -> &[EntityType] {
        &self.priority
    }

    pub fn patterns(&self) -> &[PatternMeta] {
        &self.meta
    }

    /// Pick the winning pattern among those ending at one node.
    fn resolve(&self, ids: &[u32]) -> (u32, Vec<EntityType>) {
        let mut best = ids[0];
        let mut types: Vec<&EntityType> = Vec::new();
        for &id in ids {
            let t = &self.meta[id as usize].entity_type;
            if !types.contains(&t) {
                types.push(t);
            }
            if self.rank[t] < self.rank[&self.meta[best as usize].entity_type] {
                best = id;
            }
        }
        types.sort_by_key(|t| self.rank[*t]);
        (best, types.into_iter().cloned().collect())
    }

    pub fn annotate(&self, sentence: &Sentence) -> AnnotatedSentence {
        let chars: Vec<char> = sentence.text.chars().collect();
        let bounds = Boundaries::new(&chars);
        let n = chars.len();
        let mut spans = Vec::new();
        let mut conflicts = Vec::new();
        let mut i = 0;
        while i < n {
            if !bounds.starts[i] {
                i += 1;
                continue;
            }
            let mut node = 0u32;
            let mut best: Option<(usize, u32)> = None;
            for (j, &c) in chars[i..].iter().enumerate() {
                match self.edges.get(&(node, self.fold(c))) {
                    Some(&next) => node = next,
                    None => break,
                }
                let end = i + j + 1;
                if !self.nodes[node as usize].terminal.is_empty() && bounds.ends[end] {
                    best = Some((end, node));
                }
            }
            let Some((end, node)) = best else {
                i += 1;
                continue;
            };
            let (pattern, types) = self.resolve(&self.nodes[node as usize].terminal);
            let meta = &self.meta[pattern as usize];
            if types.len() > 1 {
                conflicts.push(ConflictNote {
                    start: i,
                    end,
                    candidate_types: types,
                    chosen: meta.entity_type.clone(),
                });
            }
            spans.push(Span {
                start: i,
                end,
                entity_type: meta.entity_type.clone(),
                surface: chars[i..end].iter().collect(),
                dict_item_id: meta.item_id,
                origin: Origin::Auto,
            });
            i = end;
        }
        AnnotatedSentence {
            sentence: sentence.clone(),
            spans,
            conflicts,
        }
    }

    /// Annotate in parallel; output order follows input order.
    pub fn annotate_all(&self, sentences: &[Sentence]) -> Vec<AnnotatedSentence> {
        sentences.par_iter().map(|s| self.annotate(s)).collect()
    }
}

fn escape_into(out: &mut String, s: &str) {
    for c in s.chars() {
        match c {
            '<' => out.push_str("&lt;"),
            '&' => out.push_str("&amp;"),
            c => out.push(c),
        }
    }
}

/// Wrap each span as `<em type="TYPE">surface</em>`; `<` and `&` in the
/// text are escaped.
pub fn to_em_markup(a: &AnnotatedSentence) -> String {
    let chars: Vec<char> = a.sentence.text.chars().collect();
    let mut out = String::with_capacity(a.sentence.text.len() + a.spans.len() * 24);
    let mut pos = 0;
    for span in &a.spans {
        let before: String = chars[pos..span.start].iter().collect();
        escape_into(&mut out, &before);
        out.push_str("<em type=\"");
        out.push_str(span.entity_type.as_str());
        out.push_str("\">");
        let inner: String = chars[span.start..span.end].iter().collect();
        escape_into(&mut out, &inner);
        out.push_str("</em>");
        pos = span.end;
    }
    let rest: String = chars[pos..].iter().collect();
    escape_into(&mut out, &rest);
    out
}

/// Inverse of [`to_em_markup`]. Recovered spans are `AUTO` and carry no
/// item id.
pub fn from_em_markup(markup: &str, sentence: &Sentence) -> Result<AnnotatedSentence, MatchError> {
    const OPEN: &str = "<em type=\"";
    const CLOSE: &str = "</em>";
    let malformed = |at: usize, reason| MatchError::MalformedMarkup { at, reason };

    let mut text = String::with_capacity(markup.len());
    let mut text_len = 0usize;
    let mut spans = Vec::new();
    let mut open: Option<(usize, EntityType)> = None;
    let mut rest = markup;
    let mut at = 0usize;
    while let Some(c) = rest.chars().next() {
        if c == '<' {
            if let Some(after) = rest.strip_prefix(OPEN) {
                if open.is_some() {
                    return Err(malformed(at, "nested <em>"));
                }
                let close = after
                    .find("\">")
                    .ok_or(malformed(at, "unterminated <em> tag"))?;
                let ty = EntityType::new(&after[..close])
                    .map_err(|_| malformed(at, "bad entity type"))?;
                open = Some((text_len, ty));
                let consumed = OPEN.len() + close + 2;
                at += rest[..consumed].chars().count();
                rest = &rest[consumed..];
            } else if let Some(after) = rest.strip_prefix(CLOSE) {
                let (start, ty) = open.take().ok_or(malformed(at, "</em> without <em>"))?;
                if start == text_len {
                    return Err(malformed(at, "empty <em> element"));
                }
                let surface: String = text.chars().skip(start).collect();
                spans.push(Span {
                    start,
                    end: text_len,
                    entity_type: ty,
                    surface,
                    dict_item_id: None,
                    origin: Origin::Auto,
                });
                at += CLOSE.len();
                rest = after;
            } else {
                return Err(malformed(at, "unexpected '<'"));
            }
        } else if c == '&' {
            let (ch, len) = if rest.starts_with("&lt;") {
                ('<', 4)
            } else if rest.starts_with("&amp;") {
                ('&', 5)
            } else if rest.starts_with("&gt;") {
                ('>', 4)
            } else {
                return Err(malformed(at, "unknown entity"));
            };
            text.push(ch);
            text_len += 1;
            at += len;
            rest = &rest[len..];
        } else {
            text.push(c);
            text_len += 1;
            at += 1;
            rest = &rest[c.len_utf8()..];
        }
    }
    if open.is_some() {
        return Err(malformed(at, "unclosed <em>"));
    }
    if text != sentence.text {
        return Err(MatchError::MarkupMismatch {
            sent_id: sentence.sent_id.clone(),
        });
    }
    Ok(AnnotatedSentence {
        sentence: sentence.clone(),
        spans,
        conflicts: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ty(s: &str) -> EntityType {
        EntityType::new(s).unwrap()
    }

    fn dict(t: &str, words: &[&str]) -> Dictionary {
        Dictionary::from_surfaces(ty(t), words.iter().copied())
    }

    fn surfaces(a: &AnnotatedSentence) -> Vec<(&str, usize, usize)> {
        a.spans
            .iter()
            .map(|s| (s.surface.as_str(), s.start, s.end))
            .collect()
    }

    #[test]
    fn compile_counts_and_errors() {
        let m = Matcher::compile(
            &[dict("DRINK", &["latte", "caffè latte"])],
            &[ty("DRINK")],
            Default::default(),
        )
        .unwrap();
        assert_eq!(m.pattern_count(), 2);
        assert_eq!(
            Matcher::compile(&[], &[ty("DRINK")], Default::default()).unwrap_err(),
            MatchError::EmptyDictionarySet
        );
        assert_eq!(
            Matcher::compile(
                &[dict("FOOD", &["kue"])],
                &[ty("DRINK")],
                Default::default()
            )
            .unwrap_err(),
            MatchError::UnknownTypeInPriority(ty("FOOD"))
        );
    }

    #[test]
    fn annotated_case() {
        let m = Matcher::compile(
            &[dict(
                "DRINK",
                &["caffè latte", "latte", "coffee", "espresso", "milk"],
            )],
            &[ty("DRINK")],
            Default::default(),
        )
        .unwrap();
        let s = Sentence::new(
            "d#0",
            "Caffè latte often shortened to just latte in English, is a coffee drink made with espresso and steamed milk.",
        );
        let a = m.annotate(&s);
        assert_eq!(
            surfaces(&a),
            [
                ("Caffè latte", 0, 11),
                ("latte", 36, 41),
                ("coffee", 59, 65),
                ("espresso", 82, 90),
                ("milk", 103, 107)
            ]
        );
        assert!(a.spans.iter().all(|s| s.origin == Origin::Auto));
    }

    #[test]
    fn boundary_violation() {
        let m = Matcher::compile(
            &[dict("DRINK", &["mate"])],
            &[ty("DRINK")],
            Default::default(),
        )
        .unwrap();
        assert!(m
            .annotate(&Sentence::new("s", "a checkmate move"))
            .spans
            .is_empty());
        assert!(m.annotate(&Sentence::new("s", "mates")).spans.is_empty());
        assert_eq!(
            m.annotate(&Sentence::new("s", "Mate, please.")).spans.len(),
            1
        );
    }

    #[test]
    fn empty_dictionary() {
        let m =
            Matcher::compile(&[dict("DRINK", &[])], &[ty("DRINK")], Default::default()).unwrap();
        assert!(m
            .annotate(&Sentence::new("s", "latte and coffee"))
            .spans
            .is_empty());
    }

    #[test]
    fn longest_wins() {
        let m = Matcher::compile(
            &[dict("FOOD", &["kue ku", "kue"])],
            &[ty("FOOD")],
            Default::default(),
        )
        .unwrap();
        let a = m.annotate(&Sentence::new("s", "we ate kue ku today"));
        assert_eq!(surfaces(&a), [("kue ku", 7, 13)]);
        // the longer pattern must also end on a boundary
        let a = m.annotate(&Sentence::new("s", "we ate kue kuih today"));
        assert_eq!(surfaces(&a), [("kue", 7, 10)]);
    }

    #[test]
    fn priority_conflict_recorded() {
        let m = Matcher::compile(
            &[dict("SPORT", &["mate"]), dict("DRINK", &["Mate"])],
            &[ty("DRINK"), ty("SPORT")],
            Default::default(),
        )
        .unwrap();
        assert_eq!(m.pattern_count(), 2);
        let a = m.annotate(&Sentence::new("s", "I drink mate daily"));
        assert_eq!(a.spans.len(), 1);
        assert_eq!(a.spans[0].entity_type, ty("DRINK"));
        assert_eq!(
            a.conflicts,
            [ConflictNote {
                start: 8,
                end: 12,
                candidate_types: vec![ty("DRINK"), ty("SPORT")],
                chosen: ty("DRINK"),
            }]
        );
    }

    #[test]
    fn partial_cross_type_overlap() {
        let m = Matcher::compile(
            &[dict("FOOD", &["masala chai"]), dict("DRINK", &["chai"])],
            &[ty("DRINK"), ty("FOOD")],
            Default::default(),
        )
        .unwrap();
        let a = m.annotate(&Sentence::new("s", "hot masala chai"));
        assert_eq!(surfaces(&a), [("masala chai", 4, 15)]);
        assert!(a.conflicts.is_empty());
    }

    #[test]
    fn case_sensitivity_option() {
        let d = [dict("DRINK", &["Latte"])];
        let insensitive = Matcher::compile(&d, &[ty("DRINK")], Default::default()).unwrap();
        let sensitive = Matcher::compile(
            &d,
            &[ty("DRINK")],
            MatcherOptions {
                case_sensitive: true,
            },
        )
        .unwrap();
        let s = Sentence::new("s", "a latte");
        assert_eq!(insensitive.annotate(&s).spans.len(), 1);
        assert!(sensitive.annotate(&s).spans.is_empty());
    }

    #[test]
    fn punctuated_patterns() {
        let m = Matcher::compile(
            &[dict(
                "FOOD",
                &["Kidneys (meat)", "A&W Root Beer", "3 A.M. Vodka"],
            )],
            &[ty("FOOD")],
            Default::default(),
        )
        .unwrap();
        let a = m.annotate(&Sentence::new(
            "s",
            "We had kidneys (meat), A&W root beer and 3 A.M. Vodka.",
        ));
        assert_eq!(
            a.spans
                .iter()
                .map(|s| s.surface.as_str())
                .collect::<Vec<_>>(),
            ["kidneys (meat)", "A&W root beer", "3 A.M. Vodka"]
        );
    }

    #[test]
    fn markup_examples() {
        let m = Matcher::compile(
            &[dict("DRINK", &["latte"])],
            &[ty("DRINK")],
            Default::default(),
        )
        .unwrap();
        let a = m.annotate(&Sentence::new("s", "just latte here"));
        assert_eq!(to_em_markup(&a), r#"just <em type="DRINK">latte</em> here"#);

        let none = m.annotate(&Sentence::new("s", "a < b & c"));
        assert_eq!(to_em_markup(&none), "a &lt; b &amp; c");
        let back = from_em_markup(&to_em_markup(&none), &none.sentence).unwrap();
        assert!(back.spans.is_empty());

        let m = Matcher::compile(
            &[dict("FOOD", &["kue ku", "lapis legit"])],
            &[ty("FOOD")],
            Default::default(),
        )
        .unwrap();
        let a = m.annotate(&Sentence::new("s", "kue ku lapis legit"));
        assert_eq!(
            to_em_markup(&a),
            r#"<em type="FOOD">kue ku</em> <em type="FOOD">lapis legit</em>"#
        );
    }

    #[test]
    fn markup_adjacent_spans() {
        let s = Sentence::new("s", "ab");
        let mk = |start, end, t: &str, surface: &str| Span {
            start,
            end,
            entity_type: ty(t),
            surface: surface.into(),
            dict_item_id: None,
            origin: Origin::Auto,
        };
        let a = AnnotatedSentence {
            sentence: s.clone(),
            spans: vec![mk(0, 1, "X", "a"), mk(1, 2, "Y", "b")],
            conflicts: vec![],
        };
        let markup = to_em_markup(&a);
        assert_eq!(markup, r#"<em type="X">a</em><em type="Y">b</em>"#);
        assert_eq!(from_em_markup(&markup, &s).unwrap().spans, a.spans);
    }

    #[test]
    fn from_markup_offsets_and_errors() {
        let s = Sentence::new("s", "kue ku today");
        let a = from_em_markup(r#"<em type="FOOD">kue ku</em> today"#, &s).unwrap();
        assert_eq!(a.spans[0].key(), (0, 6, &ty("FOOD")));

        assert!(matches!(
            from_em_markup(r#"<em type="FOOD">kue ku</em> todax"#, &s),
            Err(MatchError::MarkupMismatch { .. })
        ));
        for bad in [
            r#"<em type="FOOD">kue ku today"#,
            r#"kue ku</em> today"#,
            r#"<em type="FOOD"><em type="FOOD">kue</em></em> ku today"#,
            r#"<em type="food">kue ku</em> today"#,
            r#"<b>kue ku</b> today"#,
            "kue ku &nbsp;today",
        ] {
            assert!(
                matches!(
                    from_em_markup(bad, &s),
                    Err(MatchError::MalformedMarkup { .. })
                ),
                "{bad}"
            );
        }
    }

    #[test]
    fn astral_offsets() {
        let m = Matcher::compile(
            &[dict("DRINK", &["chai"])],
            &[ty("DRINK")],
            Default::default(),
        )
        .unwrap();
        let s = Sentence::new("s", "𝔸 chai");
        let a = m.annotate(&s);
        assert_eq!(surfaces(&a), [("chai", 2, 6)]);
        assert_eq!(
            from_em_markup(&to_em_markup(&a), &s).unwrap().spans,
            a.spans
        );
    }
}
