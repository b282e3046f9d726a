use std::collections::BTreeSet;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use rapidner::corpus::{ingest, read_corpus, CapConfig, SentenceSplitter};
use rapidner::dataset::Ratios;
use rapidner::gazetteer::{self, augment_from_list, build_dictionary, Dictionary, EntryLimits};
use rapidner::io::{read_annotated, read_jsonl, write_annotated, write_atomic, write_jsonl};
use rapidner::kgstore::{
    extract_subgraph, load_items, load_statements, parse_property_list, resolve_topic, ParseMode,
    RelationFilter, SubGraph,
};
use rapidner::matcher::{to_em_markup, Matcher, MatcherOptions};
use rapidner::pipeline::{
    accept_pending, export_dataset, finalize, run_pipeline, FinalizeOptions, Layout, ProjectConfig,
    RunOptions, StratifyBy,
};
use rapidner::quality::{agreement, span_label_sequences, span_prf, token_label_sequences};
use rapidner::review::{default_type_info, ReviewStore};
use rapidner::types::{EntityType, Sentence};

#[derive(Parser)]
#[command(
    name = "rapidner",
    version,
    about = "Build NER datasets from a knowledge graph and raw text"
)]
struct Cli {
    /// Project configuration (TOML or JSON).
    #[arg(long, global = true, default_value = "rapidner.toml")]
    config: PathBuf,
    /// Rerun stages even when outputs are up to date; overwrite existing stores.
    #[arg(long, global = true)]
    force: bool,
    /// Skip malformed input rows instead of failing.
    #[arg(long, global = true)]
    lenient: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Knowledge-graph utilities.
    #[command(subcommand)]
    Kg(KgCmd),
    /// Dictionary construction and set operations.
    #[command(subcommand)]
    Dict(DictCmd),
    /// Corpus ingestion.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Annotate sentences with dictionary matches.
    Annotate(AnnotateArgs),
    /// Human review store and server.
    #[command(subcommand)]
    Review(ReviewCmd),
    /// Convert annotations to BIO and write train/dev/test CoNLL files.
    Export(ExportArgs),
    /// Dataset statistics per entity type and source.
    Stats(StatsArgs),
    /// Inter-annotator agreement.
    Agreement(AgreementArgs),
    /// Span-level precision, recall and F1.
    Eval(EvalArgs),
    /// Run the configured pipeline up to review-store initialization.
    Run(RunArgs),
    /// Export the final dataset after review.
    Finalize(FinalizeArgs),
    /// Check the configuration without running anything.
    Validate,
}

#[derive(Subcommand)]
enum KgCmd {
    /// Extract the heads pointing at a topic item.
    Extract {
        #[arg(long)]
        statements: PathBuf,
        #[arg(long)]
        items: PathBuf,
        /// Topic label, or item id as `Q123` / `123`.
        #[arg(long)]
        topic: String,
        #[arg(long, default_value = "P31,P279")]
        relations: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Count triples per relation.
    Count {
        #[arg(long)]
        statements: PathBuf,
        #[arg(long, default_value = "P31,P279")]
        relations: String,
    },
}

#[derive(Args)]
struct LimitArgs {
    #[arg(long, default_value_t = 2)]
    min_chars: usize,
    #[arg(long, default_value_t = 10)]
    max_tokens: usize,
}

impl LimitArgs {
    fn limits(&self) -> EntryLimits {
        EntryLimits {
            min_chars: self.min_chars,
            max_tokens: self.max_tokens,
        }
    }
}

#[derive(Subcommand)]
enum DictCmd {
    /// Build a dictionary from a sub-graph file.
    Build {
        #[arg(long)]
        subgraph: PathBuf,
        #[arg(long)]
        items: PathBuf,
        #[arg(long = "type")]
        entity_type: EntityType,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        limits: LimitArgs,
    },
    /// Union of two dictionaries; entries of `a` win collisions.
    Union {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long = "type")]
        entity_type: Option<EntityType>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Entries of `a` not in `b`.
    Subtract {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Add surface forms from a text list.
    Augment {
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        list: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        limits: LimitArgs,
    },
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Clean, split and cap documents into sentences.
    Ingest {
        #[arg(long = "in", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 10)]
        per_page_max: usize,
        #[arg(long, default_value_t = 10_000)]
        per_type_max: usize,
        /// Extra abbreviations, one per line.
        #[arg(long)]
        abbreviations: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct AnnotateArgs {
    #[arg(long = "dict", required = true)]
    dicts: Vec<PathBuf>,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated type order for ties; defaults to dictionary order.
    #[arg(long)]
    priority: Option<String>,
    #[arg(long)]
    case_sensitive: bool,
    /// Also write `<em type="...">` markup, one sentence per line.
    #[arg(long)]
    markup: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ReviewCmd {
    /// Create a review store from annotated sentences.
    Init {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        store: PathBuf,
        /// Comma-separated entity types; defaults to the types seen in the input.
        #[arg(long)]
        types: Option<String>,
    },
    /// Serve the review API and UI.
    Serve {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8686")]
        bind: SocketAddr,
        /// Built review-ui bundle served at `/`.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
    /// Write accepted and corrected sentences as annotated JSONL.
    Export {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rewrite the journal as one snapshot per record.
    Compact {
        #[arg(long)]
        store: PathBuf,
    },
    /// Print progress counts.
    Progress {
        #[arg(long)]
        store: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Stratify {
    Source,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "0.8,0.1,0.1")]
    ratios: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    stratify_by: Option<Stratify>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Unit {
    Token,
    Span,
}

#[derive(Args)]
struct AgreementArgs {
    /// Annotated JSONL per annotator (at least two).
    #[arg(long = "gold", required = true, num_args = 1)]
    gold: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "token")]
    unit: Unit,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(Args)]
struct RunArgs {
    /// Accept every pending sentence in the review store (skips human review).
    #[arg(long)]
    auto_accept: bool,
}

#[derive(Args)]
struct FinalizeArgs {
    /// Accept every automatic span without review.
    #[arg(long)]
    auto_accept: bool,
    /// Review journal (default: the project's store).
    #[arg(long)]
    store: Option<PathBuf>,
}

fn mode(lenient: bool) -> ParseMode {
    if lenient {
        ParseMode::Lenient
    } else {
        ParseMode::Strict
    }
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn parse_types(list: &str) -> Result<Vec<EntityType>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| EntityType::new(s.trim()).map_err(Into::into))
        .collect()
}

fn kg(cmd: KgCmd, lenient: bool) -> Result<()> {
    match cmd {
        KgCmd::Extract {
            statements,
            items,
            topic,
            relations,
            out,
        } => {
            let rels = parse_property_list(&relations)?;
            let (store, report) = load_statements(
                &statements,
                &RelationFilter::from(rels.clone()),
                mode(lenient),
            )?;
            log::info!("kept {} of {} statements", report.kept, report.rows);
            let topic_id = match topic.trim_start_matches(['Q', 'q']).parse::<u64>() {
                Ok(id) => id,
                Err(_) => {
                    let (index, _) = load_items(&items, mode(lenient))?;
                    resolve_topic(&index, &topic)?
                }
            };
            let sg: SubGraph = extract_subgraph(&store, topic_id, &rels);
            for (r, heads) in &sg.heads_by_relation {
                println!("P{r}\t{}", heads.len());
            }
            let mut json = serde_json::to_string_pretty(&sg)?;
            json.push('\n');
            write_atomic(&out, json.as_bytes())?;
        }
        KgCmd::Count {
            statements,
            relations,
        } => {
            let rels = parse_property_list(&relations)?;
            let (store, _) = load_statements(
                &statements,
                &RelationFilter::from(rels.clone()),
                mode(lenient),
            )?;
            for r in rels {
                println!("P{r}\t{}", store.count_relation(r));
            }
        }
    }
    Ok(())
}

fn dict(cmd: DictCmd, lenient: bool) -> Result<()> {
    let save = |d: &Dictionary, out: &Path| -> Result<()> {
        d.save(out)?;
        println!(
            "{}\t{} entries\t{}",
            d.entity_type(),
            d.len(),
            out.display()
        );
        Ok(())
    };
    match cmd {
        DictCmd::Build {
            subgraph,
            items,
            entity_type,
            out,
            limits,
        } => {
            let sg: SubGraph = serde_json::from_str(
                &fs::read_to_string(&subgraph)
                    .with_context(|| format!("reading {}", subgraph.display()))?,
            )
            .with_context(|| format!("parsing {}", subgraph.display()))?;
            let (index, _) = load_items(&items, mode(lenient))?;
            let (d, report) = build_dictionary(&sg, &index, entity_type, &limits.limits());
            log::info!("{report:?}");
            save(&d, &out)
        }
        DictCmd::Union {
            a,
            b,
            entity_type,
            out,
        } => {
            let a = Dictionary::load(&a)?;
            let b = Dictionary::load(&b)?;
            let t = entity_type.unwrap_or_else(|| a.entity_type().clone());
            save(&gazetteer::union(&a, &b, t), &out)
        }
        DictCmd::Subtract { a, b, out } => {
            let d = gazetteer::subtract(&Dictionary::load(&a)?, &Dictionary::load(&b)?);
            save(&d, &out)
        }
        DictCmd::Augment {
            dict,
            list,
            out,
            limits,
        } => {
            let (d, report) =
                augment_from_list(&Dictionary::load(&dict)?, &list, &limits.limits())?;
            log::info!("{report:?}");
            save(&d, &out)
        }
    }
}

fn corpus(cmd: CorpusCmd, lenient: bool) -> Result<()> {
    let CorpusCmd::Ingest {
        inputs,
        per_page_max,
        per_type_max,
        abbreviations,
        out,
    } = cmd;
    let mut docs = Vec::new();
    for p in &inputs {
        docs.extend(read_corpus(p, lenient)?);
    }
    let mut splitter = SentenceSplitter::default();
    if let Some(p) = abbreviations {
        for line in fs::read_to_string(&p)?.lines().map(str::trim) {
            if !line.is_empty() && !line.starts_with('#') {
                splitter = splitter.with_abbreviation(line);
            }
        }
    }
    let caps = CapConfig {
        per_page_max,
        per_type_per_source_max: per_type_max,
    };
    let (sentences, report) = ingest(docs, &caps, &splitter);
    write_jsonl(&out, &sentences)?;
    print_json(&report)
}

fn annotate(args: AnnotateArgs) -> Result<()> {
    let dicts = args
        .dicts
        .iter()
        .map(|p| Dictionary::load(p).map_err(anyhow::Error::from))
        .collect::<Result<Vec<_>>>()?;
    let priority = match &args.priority {
        Some(p) => parse_types(p)?,
        None => dicts.iter().map(|d| d.entity_type().clone()).collect(),
    };
    let matcher = Matcher::compile(
        &dicts,
        &priority,
        MatcherOptions {
            case_sensitive: args.case_sensitive,
        },
    )?;
    let sentences: Vec<Sentence> = read_jsonl(&args.input)?;
    let started = std::time::Instant::now();
    let annotated = matcher.annotate_all(&sentences);
    let elapsed = started.elapsed();
    write_annotated(&args.out, &annotated)?;
    if let Some(p) = &args.markup {
        let body: String = annotated.iter().map(|a| to_em_markup(a) + "\n").collect();
        write_atomic(p, body.as_bytes())?;
    }
    let spans: usize = annotated.iter().map(|a| a.spans.len()).sum();
    println!(
        "{} sentences, {} spans, {} patterns, {:.3} ms/sentence",
        annotated.len(),
        spans,
        matcher.pattern_count(),
        elapsed.as_secs_f64() * 1000.0 / annotated.len().max(1) as f64
    );
    Ok(())
}

fn review(cmd: ReviewCmd, force: bool) -> Result<()> {
    match cmd {
        ReviewCmd::Init {
            input,
            store,
            types,
        } => {
            let annotated = read_annotated(&input)?;
            let types = match types {
                Some(t) => parse_types(&t)?,
                None => annotated
                    .iter()
                    .flat_map(|a| a.spans.iter().map(|s| s.entity_type.clone()))
                    .chain(
                        annotated
                            .iter()
                            .filter_map(|a| a.sentence.entity_type_hint.clone()),
                    )
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect(),
            };
            let s = ReviewStore::init(&annotated, default_type_info(&types), &store, force)?;
            println!("{} records in {}", s.len(), store.display());
        }
        ReviewCmd::Serve {
            store,
            bind,
            ui_dir,
        } => {
            let s = Arc::new(ReviewStore::open(&store)?);
            println!("serving {} records on http://{bind}", s.len());
            rapidner::review::serve_blocking(s, bind, ui_dir)?;
        }
        ReviewCmd::Export { store, out } => {
            let verified = ReviewStore::open(&store)?.export_verified();
            write_annotated(&out, &verified)?;
            println!("{} verified sentences", verified.len());
        }
        ReviewCmd::Compact { store } => ReviewStore::open(&store)?.compact()?,
        ReviewCmd::Progress { store } => print_json(&ReviewStore::open(&store)?.progress())?,
    }
    Ok(())
}

fn export(args: ExportArgs) -> Result<()> {
    let annotated = read_annotated(&args.input)?;
    let ratios = Ratios::parse(&args.ratios)?;
    let stratify = args.stratify_by.map(|Stratify::Source| StratifyBy::Source);
    let meta = export_dataset(
        &annotated,
        ratios,
        args.seed,
        stratify,
        "export",
        &args.out_dir,
    )?;
    print_json(&meta)
}

fn stats(args: StatsArgs) -> Result<()> {
    let tagged = read_annotated(&args.input)?
        .iter()
        .map(rapidner::dataset::spans_to_bio)
        .collect::<Result<Vec<_>, _>>()?;
    let report = rapidner::dataset::compute_stats(&tagged);
    match args.format {
        Format::Table => print!("{}", rapidner::dataset::render_stats_table(&report)),
        Format::Json => print_json(&report)?,
    }
    Ok(())
}

fn annotator_name(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn agreement_cmd(args: AgreementArgs) -> Result<()> {
    if args.gold.len() < 2 {
        bail!("agreement needs at least two --gold files");
    }
    let annotators = args
        .gold
        .iter()
        .map(|p| Ok((annotator_name(p), read_annotated(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let (seqs, unit) = match args.unit {
        Unit::Token => (token_label_sequences(&annotators)?, "token"),
        Unit::Span => (span_label_sequences(&annotators)?, "span"),
    };
    let report = agreement(&seqs, unit)?;
    match args.format {
        Format::Table => print!("{}", report.render_table()),
        Format::Json => print_json(&report)?,
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let report = span_prf(&read_annotated(&args.gold)?, &read_annotated(&args.pred)?)?;
    match args.format {
        Format::Table => print!("{}", report.render_table()),
        Format::Json => print_json(&report)?,
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")?;
    }
    let run_opts = RunOptions {
        force: cli.force,
        lenient: cli.lenient,
    };
    match cli.command {
        Command::Kg(c) => kg(c, cli.lenient)?,
        Command::Dict(c) => dict(c, cli.lenient)?,
        Command::Corpus(c) => corpus(c, cli.lenient)?,
        Command::Annotate(a) => annotate(a)?,
        Command::Review(c) => review(c, cli.force)?,
        Command::Export(a) => export(a)?,
        Command::Stats(a) => stats(a)?,
        Command::Agreement(a) => agreement_cmd(a)?,
        Command::Eval(a) => eval(a)?,
        Command::Run(a) => {
            let cfg = ProjectConfig::load(&cli.config)?;
            let report = run_pipeline(&cfg, run_opts)?;
            for s in &report.stages {
                println!(
                    "{:<9} {}",
                    s.stage,
                    if s.ran { "done" } else { "up to date" }
                );
            }
            let journal = Layout::new(&cfg.output_dir).journal();
            if a.auto_accept {
                let n = accept_pending(&journal, "auto")?;
                println!("accepted  {n} pending sentence(s)");
                println!(
                    "\nnext: rapidner --config {} finalize",
                    cli.config.display()
                );
            } else {
                println!(
                    "\nreview with: rapidner review serve --store {}\nthen: rapidner --config {} finalize",
                    journal.display(),
                    cli.config.display()
                );
            }
        }
        Command::Finalize(a) => {
            let cfg = ProjectConfig::load(&cli.config)?;
            let meta = finalize(
                &cfg,
                &FinalizeOptions {
                    auto_accept: a.auto_accept,
                    store: a.store,
                },
            )?;
            print_json(&meta)?;
        }
        Command::Validate => {
            let report = ProjectConfig::load(&cli.config)?.validate();
            if report.is_ok() {
                println!("{}: ok", cli.config.display());
            } else {
                eprint!("{report}");
                bail!(
                    "{} has {} problem(s)",
                    cli.config.display(),
                    report.errors.len()
                );
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;
    use rapidner::kgstore::parse_property;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn parses_global_flags_anywhere() {
        let cli = Cli::try_parse_from([
            "rapidner",
            "run",
            "--config",
            "p.toml",
            "--force",
            "--threads",
            "2",
        ])
        .unwrap();
        assert!(cli.force);
        assert_eq!(cli.threads, Some(2));
        assert_eq!(cli.config, PathBuf::from("p.toml"));
        let cli = Cli::try_parse_from([
            "rapidner",
            "agreement",
            "--gold",
            "a.jsonl",
            "--gold",
            "b.jsonl",
            "--unit",
            "span",
        ])
        .unwrap();
        assert!(matches!(
            cli.command,
            Command::Agreement(AgreementArgs {
                unit: Unit::Span,
                ..
            })
        ));
    }

    #[test]
    fn property_flag_forms() {
        assert_eq!(parse_property("P31").unwrap(), 31);
        assert!(parse_types("DRINK,food").is_err());
    }
}
