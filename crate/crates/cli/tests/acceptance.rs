//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Set `RAPIDNER_KDWD_DIR` to a directory holding the KDWD `statements.csv`
//! and `item.csv` to run the data-gated reproduction check.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use rapidner::dataset::{
    bio_to_spans, bucket_of, spans_to_bio, split_dataset, Bucket, Ratios, TaggedSentence,
};
use rapidner::gazetteer::{build_dictionary, Dictionary, EntryLimits};
use rapidner::kgstore::{
    extract_subgraph, load_items, load_statements, ParseMode, INSTANCE_OF, SUBCLASS_OF,
};
use rapidner::matcher::{Matcher, MatcherOptions};
use rapidner::quality::{cohen_kappa, fleiss_kappa};
use rapidner::review::{default_type_info, Action, ReviewStore, SpanRef};
use rapidner::types::{AnnotatedSentence, EntityType, Origin, Sentence, SourceKind, Span};

// Pinned targets.
const ORACLE_DICTS: usize = 200;
const ORACLE_SENTENCES: usize = 50;
const ORACLE_MAX_ENTRIES: usize = 50;
const ORACLE_TIME_LIMIT: Duration = Duration::from_secs(60);
const COMPOUND_TRIPLES: usize = 1000;
const THROUGHPUT_SENTENCES: usize = 10_000;
const THROUGHPUT_PATTERNS: usize = 3000;
const THROUGHPUT_MAX_MS: f64 = 5.0;
const BIO_CASES: usize = 10_000;
const KAPPA_TOL: f64 = 1e-12;
const SPLIT_IDS: usize = 100_000;
const SPLIT_TOL: f64 = 0.005;
const E2E_TIME_LIMIT: Duration = Duration::from_secs(10);
const JOURNAL_SEQUENCES: usize = 1000;

struct Outcome {
    status: &'static str,
    detail: String,
}

fn pass(detail: impl Into<String>) -> Outcome {
    Outcome {
        status: "PASS",
        detail: detail.into(),
    }
}

fn fail(detail: impl Into<String>) -> Outcome {
    Outcome {
        status: "FAIL",
        detail: detail.into(),
    }
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn ty(s: &str) -> EntityType {
    EntityType::new(s).unwrap()
}

// ---------------------------------------------------------------------------
// random sentences with known token boundaries

const VOCAB: &[&str] = &[
    "tea",
    "teas",
    "te",
    "tea's",
    "green",
    "black",
    "chai",
    "masala",
    "latte",
    "caffè",
    "ice",
    "iced",
    "cream",
    "ice-cream",
    "pho",
    "soup",
    "go",
    "golf",
    "mate",
    "checkmate",
    "o'neil",
    "table",
    "tennis",
    "table-tennis",
    "Ωmega",
    "x2",
];

/// Text plus the `(start, end)` char offsets of every token, computed while
/// generating rather than by the library tokenizer.
struct Generated {
    text: String,
    tokens: Vec<(usize, usize)>,
}

fn recase(rng: &mut StdRng, w: &str) -> String {
    match rng.gen_range(0..4) {
        0 => w.to_uppercase(),
        1 => {
            let mut c = w.chars();
            match c.next() {
                Some(f) => f.to_uppercase().chain(c).collect(),
                None => String::new(),
            }
        }
        _ => w.to_string(),
    }
}

fn gen_sentence(
    rng: &mut StdRng,
    words: &[String],
    len: std::ops::RangeInclusive<usize>,
) -> Generated {
    let n = rng.gen_range(len);
    let mut text = String::new();
    let mut tokens = Vec::new();
    let mut pos = 0usize;
    let mut push = |text: &mut String, s: &str, token: bool, tokens: &mut Vec<(usize, usize)>| {
        let len = s.chars().count();
        if token {
            tokens.push((pos, pos + len));
        }
        text.push_str(s);
        pos += len;
    };
    for i in 0..n {
        if i > 0 {
            match rng.gen_range(0..10) {
                0 => {
                    push(&mut text, ",", true, &mut tokens);
                    push(&mut text, " ", false, &mut tokens);
                }
                1 => {
                    push(&mut text, " ", false, &mut tokens);
                    push(&mut text, "-", true, &mut tokens);
                    push(&mut text, " ", false, &mut tokens);
                }
                2 => push(&mut text, "  ", false, &mut tokens),
                _ => push(&mut text, " ", false, &mut tokens),
            }
        }
        let pick = rng.gen_range(0..words.len());
        let w = recase(rng, &words[pick]);
        push(&mut text, &w, true, &mut tokens);
    }
    match rng.gen_range(0..3) {
        0 => push(&mut text, ".", true, &mut tokens),
        1 => {
            push(&mut text, "!", true, &mut tokens);
            push(&mut text, "?", true, &mut tokens);
        }
        _ => {}
    }
    Generated { text, tokens }
}

fn fold(s: &str) -> String {
    s.chars().flat_map(char::to_lowercase).collect()
}

type Triple = (usize, usize, EntityType);

/// Brute-force leftmost-longest over token-aligned substrings.
fn oracle(
    g: &Generated,
    table: &HashMap<String, Vec<EntityType>>,
    priority: &[EntityType],
) -> Vec<Triple> {
    let chars: Vec<char> = g.text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < g.tokens.len() {
        let mut best = None;
        for j in i..g.tokens.len() {
            let cand: String = chars[g.tokens[i].0..g.tokens[j].1].iter().collect();
            if let Some(types) = table.get(&fold(&cand)) {
                best = Some((j, types));
            }
        }
        match best {
            Some((j, types)) => {
                let winner = priority.iter().find(|p| types.contains(p)).unwrap();
                out.push((g.tokens[i].0, g.tokens[j].1, winner.clone()));
                i = j + 1;
            }
            None => i += 1,
        }
    }
    out
}

fn spans_of(a: &AnnotatedSentence) -> Vec<Triple> {
    a.spans
        .iter()
        .map(|s| (s.start, s.end, s.entity_type.clone()))
        .collect()
}

fn matcher_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(7);
    let vocab: Vec<String> = VOCAB.iter().map(|s| s.to_string()).collect();
    let all_types = [ty("DRINK"), ty("FOOD"), ty("SPORT")];
    let t0 = Instant::now();
    let mut mismatches = 0;
    let mut spans_seen = 0;
    let mut first_bad = None;
    for d in 0..ORACLE_DICTS {
        let n_types = rng.gen_range(1..=3);
        let mut priority = all_types[..n_types].to_vec();
        priority.shuffle(&mut rng);
        let mut surfaces: Vec<Vec<String>> = vec![Vec::new(); n_types];
        let mut table: HashMap<String, Vec<EntityType>> = HashMap::new();
        for _ in 0..rng.gen_range(1..=ORACLE_MAX_ENTRIES) {
            let k = rng.gen_range(0..n_types);
            let n_tok = rng.gen_range(1..=3);
            let words: Vec<String> = (0..n_tok)
                .map(|_| {
                    let pick = rng.gen_range(0..vocab.len());
                    recase(&mut rng, &vocab[pick])
                })
                .collect();
            let surface = words.join(" ");
            let types = table.entry(fold(&surface)).or_default();
            if !types.contains(&all_types[k]) {
                types.push(all_types[k].clone());
            }
            surfaces[k].push(surface);
        }
        let dicts: Vec<Dictionary> = surfaces
            .into_iter()
            .enumerate()
            .map(|(k, s)| Dictionary::from_surfaces(all_types[k].clone(), s))
            .collect();
        let m = Matcher::compile(&dicts, &priority, MatcherOptions::default()).unwrap();
        for s in 0..ORACLE_SENTENCES {
            let g = gen_sentence(&mut rng, &vocab, 1..=14);
            let got = spans_of(&m.annotate(&Sentence::new(format!("d{d}#{s}"), g.text.clone())));
            let want = oracle(&g, &table, &priority);
            spans_seen += want.len();
            if got != want {
                mismatches += 1;
                first_bad.get_or_insert_with(|| {
                    format!(" first: {:?} got {got:?} want {want:?}", g.text)
                });
            }
        }
    }
    let secs = t0.elapsed();
    check(
        mismatches == 0 && secs < ORACLE_TIME_LIMIT,
        format!(
            "{} sentences, {spans_seen} oracle spans, {mismatches} mismatches, {:.2}s (limit {}s){}",
            ORACLE_DICTS * ORACLE_SENTENCES,
            secs.as_secs_f64(),
            ORACLE_TIME_LIMIT.as_secs(),
            first_bad.unwrap_or_default()
        ),
    )
}

fn random_word(rng: &mut StdRng) -> String {
    let n = rng.gen_range(3..=8);
    (0..n).map(|_| rng.gen_range(b'a'..=b'z') as char).collect()
}

fn compound_preservation() -> Outcome {
    let mut rng = StdRng::seed_from_u64(11);
    let types = [ty("DRINK"), ty("FOOD")];
    let mut violations = 0;
    for i in 0..COMPOUND_TRIPLES {
        let a = random_word(&mut rng);
        let b = random_word(&mut rng);
        let compound = format!("{a} {b}");
        let mut surfaces: Vec<Vec<String>> = vec![Vec::new(), Vec::new()];
        for s in [&a, &b, &compound] {
            surfaces[rng.gen_range(0..2)].push(s.clone());
        }
        let dicts: Vec<Dictionary> = surfaces
            .into_iter()
            .zip(&types)
            .map(|(s, t)| Dictionary::from_surfaces(t.clone(), s))
            .collect();
        let m = Matcher::compile(&dicts, &types, MatcherOptions::default()).unwrap();
        let pre = format!("I {} the", random_word(&mut rng));
        let text = format!("{pre} {a} {b} today.");
        let start = pre.chars().count() + 1;
        let end = start + compound.chars().count();
        let got = m.annotate(&Sentence::new(format!("c#{i}"), text));
        let whole = got.spans.iter().any(|s| s.start == start && s.end == end);
        let split = got
            .spans
            .iter()
            .any(|s| s.start >= start && s.end <= end && (s.start, s.end) != (start, end));
        if !whole || split {
            violations += 1;
        }
    }
    check(
        violations == 0,
        format!("{COMPOUND_TRIPLES} triples, {violations} violations"),
    )
}

fn throughput() -> Outcome {
    let mut rng = StdRng::seed_from_u64(13);
    let lexicon: Vec<String> = (0..2000).map(|_| random_word(&mut rng)).collect();
    let types = [ty("DRINK"), ty("FOOD"), ty("SPORT")];
    let mut surfaces: Vec<Vec<String>> = vec![Vec::new(); 3];
    let mut seen = HashSet::new();
    while seen.len() < THROUGHPUT_PATTERNS {
        let n = rng.gen_range(1..=3);
        let s: Vec<&str> = (0..n)
            .map(|_| lexicon[rng.gen_range(0..lexicon.len())].as_str())
            .collect();
        let s = s.join(" ");
        if seen.insert(s.clone()) {
            surfaces[rng.gen_range(0..3)].push(s);
        }
    }
    let dicts: Vec<Dictionary> = surfaces
        .into_iter()
        .zip(&types)
        .map(|(s, t)| Dictionary::from_surfaces(t.clone(), s))
        .collect();
    let m = Matcher::compile(&dicts, &types, MatcherOptions::default()).unwrap();
    let sentences: Vec<Sentence> = (0..THROUGHPUT_SENTENCES)
        .map(|i| {
            let g = gen_sentence(&mut rng, &lexicon, 8..=30);
            Sentence::new(format!("t#{i}"), g.text)
        })
        .collect();
    let t0 = Instant::now();
    let mut spans = 0;
    for s in &sentences {
        spans += m.annotate(s).spans.len();
    }
    let mean_ms = t0.elapsed().as_secs_f64() * 1000.0 / sentences.len() as f64;
    check(
        m.pattern_count() == THROUGHPUT_PATTERNS && mean_ms <= THROUGHPUT_MAX_MS,
        format!(
            "mean {mean_ms:.4} ms/sentence over {} sentences, {} patterns, {spans} spans (limit {THROUGHPUT_MAX_MS} ms)",
            sentences.len(),
            m.pattern_count()
        ),
    )
}

fn bio_round_trip() -> Outcome {
    let mut rng = StdRng::seed_from_u64(17);
    let vocab: Vec<String> = VOCAB.iter().map(|s| s.to_string()).collect();
    let types = [ty("DRINK"), ty("FOOD"), ty("SPORT")];
    let mut violations = 0;
    let mut total_spans = 0;
    for i in 0..BIO_CASES {
        let g = gen_sentence(&mut rng, &vocab, 1..=20);
        let chars: Vec<char> = g.text.chars().collect();
        let mut spans = Vec::new();
        let mut k = 0;
        while k < g.tokens.len() {
            if rng.gen_bool(0.3) {
                let last = (k + rng.gen_range(0..3)).min(g.tokens.len() - 1);
                let (start, end) = (g.tokens[k].0, g.tokens[last].1);
                spans.push(Span {
                    start,
                    end,
                    entity_type: types[rng.gen_range(0..3)].clone(),
                    surface: chars[start..end].iter().collect(),
                    dict_item_id: None,
                    origin: Origin::Auto,
                });
                k = last + 1;
            } else {
                k += 1;
            }
        }
        total_spans += spans.len();
        let a = AnnotatedSentence {
            sentence: Sentence::new(format!("b#{i}"), g.text.clone()),
            spans,
            conflicts: Vec::new(),
        };
        let ok = spans_to_bio(&a)
            .and_then(|t| bio_to_spans(&t, false))
            .map(|d| d.spans == a.spans && d.repaired == 0)
            .unwrap_or(false);
        if !ok {
            violations += 1;
        }
    }
    check(
        violations == 0,
        format!("{BIO_CASES} sentences, {total_spans} spans, {violations} violations"),
    )
}

fn kappa_oracles() -> Outcome {
    let a: Vec<char> = "xxxxxooooo".chars().collect();
    let b: Vec<char> = "xxxxoxoooo".chars().collect();
    let cohen = cohen_kappa(&a, &b).unwrap();
    let same = cohen_kappa(&a, &a).unwrap();
    let f_agree = fleiss_kappa(&[vec![2, 0], vec![0, 2]], 2).unwrap();
    let f_disagree = fleiss_kappa(&[vec![1, 1], vec![1, 1]], 2).unwrap();
    let ok = (cohen - 0.6).abs() <= KAPPA_TOL
        && (same - 1.0).abs() <= KAPPA_TOL
        && (f_agree - 1.0).abs() <= KAPPA_TOL
        && (f_disagree + 1.0).abs() <= KAPPA_TOL;
    check(
        ok,
        format!(
            "cohen {cohen}, identical {same}, fleiss {f_agree} / {f_disagree} (tol {KAPPA_TOL:e})"
        ),
    )
}

fn bare(id: String) -> TaggedSentence {
    TaggedSentence {
        sent_id: id,
        text: String::new(),
        tokens: Vec::new(),
        tags: Vec::new(),
        source: SourceKind::Other,
    }
}

fn split_ratios() -> Outcome {
    let ratios = Ratios::new(0.8, 0.1, 0.1).unwrap();
    let seed = 42;
    let ids: Vec<String> = (0..SPLIT_IDS)
        .map(|i| format!("doc{}#{}", i / 7, i % 7))
        .collect();
    let mut counts = [0usize; 3];
    for id in &ids {
        counts[bucket_of(seed, id, &ratios) as usize] += 1;
    }
    let fracs: Vec<f64> = counts
        .iter()
        .map(|&c| c as f64 / SPLIT_IDS as f64)
        .collect();
    let within = fracs
        .iter()
        .zip([0.8, 0.1, 0.1])
        .all(|(f, t)| (f - t).abs() <= SPLIT_TOL);

    let members = |order: &[String]| -> Vec<BTreeSet<String>> {
        let split = split_dataset(order.iter().cloned().map(bare).collect(), ratios, seed);
        [Bucket::Train, Bucket::Dev, Bucket::Test]
            .iter()
            .map(|&b| split.bucket(b).iter().map(|t| t.sent_id.clone()).collect())
            .collect()
    };
    let first = members(&ids);
    let mut shuffled = ids.clone();
    shuffled.shuffle(&mut StdRng::seed_from_u64(3));
    let second = members(&shuffled);
    let counts_agree = first.iter().map(BTreeSet::len).eq(counts.iter().copied());
    check(
        within && first == second && counts_agree,
        format!(
            "fractions {:.4}/{:.4}/{:.4} (tol ±{SPLIT_TOL}), reruns identical: {}",
            fracs[0],
            fracs[1],
            fracs[2],
            first == second
        ),
    )
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        if entry.file_name() == "out" {
            continue;
        }
        let dst = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &dst);
        } else {
            fs::copy(entry.path(), &dst).unwrap();
        }
    }
}

fn end_to_end() -> Outcome {
    let fixture = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/mini");
    let tmp = tempfile::tempdir().unwrap();
    let project = tmp.path().join("mini");
    copy_dir(&fixture, &project);
    let cfg = project.join("project.toml");
    let t0 = Instant::now();
    for args in [&["run", "--auto-accept"][..], &["finalize"][..]] {
        let out = Command::new(env!("CARGO_BIN_EXE_rapidner"))
            .arg("--config")
            .arg(&cfg)
            .args(args)
            .output()
            .unwrap();
        if !out.status.success() {
            return fail(format!(
                "{args:?}: {}",
                String::from_utf8_lossy(&out.stderr).trim()
            ));
        }
    }
    let secs = t0.elapsed();
    let mut differing = Vec::new();
    for split in ["train", "dev", "test"] {
        let name = format!("{split}.conll");
        let got = fs::read(project.join("out/dataset").join(&name)).ok();
        let want = fs::read(fixture.join("golden").join(&name)).ok();
        if got.is_none() || got != want {
            differing.push(name);
        }
    }
    check(
        differing.is_empty() && secs < E2E_TIME_LIMIT,
        format!(
            "{:.2}s (limit {}s), files differing from golden: {:?}",
            secs.as_secs_f64(),
            E2E_TIME_LIMIT.as_secs(),
            differing
        ),
    )
}

fn random_ref(rng: &mut StdRng, len: usize, types: &[EntityType]) -> SpanRef {
    let start = rng.gen_range(0..len);
    let end = rng.gen_range(start..=len);
    SpanRef {
        start,
        end,
        entity_type: rng
            .gen_bool(0.8)
            .then(|| types[rng.gen_range(0..types.len())].clone()),
    }
}

fn journal_crash_safety() -> Outcome {
    let mut rng = StdRng::seed_from_u64(19);
    let types = [ty("DRINK"), ty("FOOD")];
    let drinks = Dictionary::from_surfaces(types[0].clone(), ["tea", "green tea", "latte"]);
    let foods = Dictionary::from_surfaces(types[1].clone(), ["pho", "ice-cream", "soup"]);
    let m = Matcher::compile(&[drinks, foods], &types, MatcherOptions::default()).unwrap();
    let vocab: Vec<String> = VOCAB.iter().map(|s| s.to_string()).collect();
    let tmp = tempfile::tempdir().unwrap();
    let mut divergences = 0;
    let mut decisions = 0;
    let mut rejected = 0;
    for seq in 0..JOURNAL_SEQUENCES {
        let sentences: Vec<AnnotatedSentence> = (0..3)
            .map(|i| {
                m.annotate(&Sentence::new(
                    format!("s{i}"),
                    gen_sentence(&mut rng, &vocab, 2..=8).text,
                ))
            })
            .collect();
        let path = tmp.path().join(format!("j{seq}.journal"));
        let store = ReviewStore::init(&sentences, default_type_info(&types), &path, false).unwrap();
        for _ in 0..rng.gen_range(1..=8) {
            let a = &sentences[rng.gen_range(0..sentences.len())];
            let len = a.sentence.char_len();
            let existing = |rng: &mut StdRng| match a.spans.choose(rng) {
                Some(s) if rng.gen_bool(0.7) => SpanRef {
                    start: s.start,
                    end: s.end,
                    entity_type: Some(s.entity_type.clone()),
                },
                _ => random_ref(rng, len, &types),
            };
            let action = match rng.gen_range(0..5) {
                0 => Action::Accept,
                1 => Action::Skip,
                2 => Action::AddSpan {
                    span: random_ref(&mut rng, len, &types),
                },
                3 => Action::EditSpan {
                    span: existing(&mut rng),
                    new_span: random_ref(&mut rng, len, &types),
                },
                _ => Action::DeleteSpan {
                    span: existing(&mut rng),
                },
            };
            match store.apply_decision(&a.sentence.sent_id, "tester", None, action) {
                Ok(_) => decisions += 1,
                Err(_) => rejected += 1,
            }
        }
        let live = store.records();
        drop(store);
        let reopened = ReviewStore::open(&path).map(|s| s.records()).ok();
        if reopened.as_ref() != Some(&live) {
            divergences += 1;
        }
    }
    check(
        divergences == 0,
        format!(
            "{JOURNAL_SEQUENCES} sequences, {decisions} decisions applied, {rejected} rejected, {divergences} divergences"
        ),
    )
}

fn kdwd_reproduction() -> Outcome {
    let Some(dir) = std::env::var_os("RAPIDNER_KDWD_DIR").map(PathBuf::from) else {
        return Outcome {
            status: "SKIP",
            detail: "set RAPIDNER_KDWD_DIR to run".into(),
        };
    };
    let (store, _) = match load_statements(
        &dir.join("statements.csv"),
        &[INSTANCE_OF, SUBCLASS_OF].into(),
        ParseMode::Lenient,
    ) {
        Ok(x) => x,
        Err(e) => return fail(e.to_string()),
    };
    let (items, _) = match load_items(&dir.join("item.csv"), ParseMode::Lenient) {
        Ok(x) => x,
        Err(e) => return fail(e.to_string()),
    };
    let p31 = store.count_relation(INSTANCE_OF);
    let p279 = store.count_relation(SUBCLASS_OF);
    let relations: BTreeSet<_> = [INSTANCE_OF, SUBCLASS_OF].into();
    let food_ids = items.ids_for_label("food").to_vec();
    let food = extract_subgraph(&store, 2095, &relations);
    let food_heads = (
        food.heads(INSTANCE_OF).map_or(0, BTreeSet::len),
        food.heads(SUBCLASS_OF).map_or(0, BTreeSet::len),
    );
    let drink_total = match items.ids_for_label("drink") {
        [id] => {
            let sg = extract_subgraph(&store, *id, &relations);
            build_dictionary(&sg, &items, ty("DRINK"), &EntryLimits::default())
                .0
                .len()
        }
        ids => return fail(format!("drink label resolves to {ids:?}")),
    };
    // counts are quoted to the nearest million / hundred thousand
    let ok = (p31 as f64 / 1e6).round() == 26.0
        && (p279 as f64 / 1e5).round() == 17.0
        && food_ids.contains(&2095)
        && food_heads == (1365, 2884)
        && drink_total == 529;
    check(
        ok,
        format!(
            "P31 {p31}, P279 {p279}, food ids {food_ids:?}, food heads {}/{}, drink entries {drink_total}",
            food_heads.0, food_heads.1
        ),
    )
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: &[Criterion] = &[
        ("matcher oracle equivalence", matcher_oracle),
        ("compound preservation", compound_preservation),
        ("annotate throughput", throughput),
        ("BIO round trip", bio_round_trip),
        ("kappa oracles", kappa_oracles),
        ("split determinism and ratios", split_ratios),
        ("end-to-end fixture", end_to_end),
        ("review journal crash safety", journal_crash_safety),
        ("KDWD reproduction", kdwd_reproduction),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let o = f();
        if o.status == "FAIL" {
            failed += 1;
        }
        println!("{} {name}: {}", o.status, o.detail);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
