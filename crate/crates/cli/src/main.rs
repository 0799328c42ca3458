use std::fs::{File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use slangtriage::adjudicator::http::HttpProvider;
use slangtriage::adjudicator::mock::{MockProvider, MockScript};
use slangtriage::adjudicator::{
    Adjudicator, CompletionProvider, JsonlSink, NullSink, PromptScheme, ProviderConfig, ProviderKind,
    TranscriptSink, DEFAULT_BATCH_SIZE,
};
use slangtriage::annotation::{build_session, AnnotationSession, SamplingPolicy};
use slangtriage::corpus::{self, FilterStep, Format};
use slangtriage::evaluator::report::write_plot_csv;
use slangtriage::evaluator::{agreement_report, GoldLabels, MetricsReport};
use slangtriage::lexicon::{self, examples};
use slangtriage::slang_sim::{build_paired_dataset, SubstitutionMap};
use slangtriage::{Corpus, Lexicon, MatchPolicy, PredictionSet};

#[derive(Parser)]
#[command(name = "slangtriage", version, about = "Lexicon filtering, LLM adjudication and evaluation for rare-topic triage")]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Write the primary result here instead of stdout.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read JSONL or CSV posts into the canonical JSONL corpus format.
    Ingest {
        input: PathBuf,
        #[arg(long)]
        format: Option<Format>,
    },
    /// Keep posts matching a term or a lexicon.
    Filter(FilterArgs),
    /// Label every post by lexicon membership.
    ClassifyLexicon {
        corpus: PathBuf,
        /// Lexicon file, or builtin:example-broad / builtin:example-strict.
        #[arg(long)]
        lexicon: String,
    },
    /// Label posts with the configured language-model provider.
    Adjudicate {
        corpus: PathBuf,
        /// Earlier prediction file; posts already labelled there are skipped.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Append prompt transcripts to this JSONL file.
        #[arg(long)]
        transcripts: Option<PathBuf>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Replace slang terms with fake terms.
    Substitute(SubstituteArgs),
    /// Score prediction files against gold labels.
    Evaluate {
        #[arg(long, required = true, num_args = 1..)]
        predictions: Vec<PathBuf>,
        #[arg(long)]
        gold: PathBuf,
        /// Plain-text tables instead of JSON.
        #[arg(long)]
        text: bool,
        /// Also write long-format metric rows for plotting.
        #[arg(long)]
        plot_csv: Option<PathBuf>,
        /// Second annotator's labels, for the agreement block.
        #[arg(long)]
        agreement_with: Option<PathBuf>,
    },
    /// Inter-annotator agreement between two gold files.
    Agreement {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Build an annotation session from predictions.
    SampleSession {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, conflicts_with = "count")]
        fraction: Option<f64>,
        #[arg(long)]
        count: Option<usize>,
        /// Emit a seeded subset of this many items instead, for a second annotator.
        #[arg(long)]
        subset: Option<usize>,
        /// Store the session here under its id, where `serve` will find it.
        #[arg(long)]
        sessions_dir: Option<PathBuf>,
    },
    /// Run the annotation HTTP service.
    Serve {
        #[arg(long)]
        addr: Option<String>,
        #[arg(long)]
        sessions_dir: Option<PathBuf>,
        /// Environment variable holding the shared bearer token.
        #[arg(long)]
        token_env: Option<String>,
    },
}

#[derive(Args)]
struct FilterArgs {
    corpus: PathBuf,
    #[arg(long, required_unless_present = "lexicon", conflicts_with = "lexicon")]
    term: Option<String>,
    #[arg(long)]
    lexicon: Option<String>,
    /// Keep a seeded random sample of this many matches.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long)]
    case_sensitive: bool,
    #[arg(long)]
    no_word_boundary: bool,
}

#[derive(Args)]
struct SubstituteArgs {
    /// Corpus to substitute as is.
    #[arg(required_unless_present = "opioid", conflicts_with_all = ["opioid", "non_opioid"])]
    corpus: Option<PathBuf>,
    /// Opioid-related posts for a paired dataset.
    #[arg(long, requires = "non_opioid")]
    opioid: Option<PathBuf>,
    #[arg(long, requires = "opioid")]
    non_opioid: Option<PathBuf>,
    /// Paired mode: write the tagged originals here.
    #[arg(long)]
    originals: Option<PathBuf>,
    /// Paired mode: write the class labels as a gold CSV here.
    #[arg(long)]
    gold: Option<PathBuf>,
    #[arg(long)]
    map: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Config {
    provider: Option<ProviderConfig>,
    prompt: PromptScheme,
    batch_size: Option<usize>,
    mock_script: MockScript,
    sampling: Option<SamplingPolicy>,
    /// Substitution map file.
    substitution: Option<PathBuf>,
    server: ServerConfig,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ServerConfig {
    addr: String,
    sessions_dir: PathBuf,
    token_env: Option<String>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            addr: "127.0.0.1:8080".into(),
            sessions_dir: "sessions".into(),
            token_env: None,
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => Config::default(),
    };
    let out = cli.output.as_deref();
    match cli.command {
        Command::Ingest { input, format } => {
            let (corpus, report) = corpus::ingest_path(&input, format)
                .with_context(|| format!("ingesting {}", input.display()))?;
            eprintln!("{}", serde_json::to_string(&report)?);
            write_corpus(&corpus, out)
        }
        Command::Filter(args) => filter(args, cli.seed, out),
        Command::ClassifyLexicon { corpus, lexicon } => {
            let corpus = read_corpus(&corpus)?;
            let lexicon = resolve_lexicon(&lexicon)?;
            let predictions = lexicon::classify_corpus(&corpus, &lexicon);
            write_predictions(&predictions, out)
        }
        Command::Adjudicate {
            corpus,
            resume,
            transcripts,
            batch_size,
        } => adjudicate(&config, &corpus, resume.as_deref(), transcripts.as_deref(), batch_size, out),
        Command::Substitute(args) => substitute(&config, args, out),
        Command::Evaluate {
            predictions,
            gold,
            text,
            plot_csv,
            agreement_with,
        } => {
            let gold_labels = read_gold(&gold)?;
            let agreement = match &agreement_with {
                Some(second) => {
                    let (a, b) = gold_labels.align(&read_gold(second)?);
                    Some(agreement_report(&a, &b)?)
                }
                None => None,
            };
            let mut reports = Vec::new();
            for path in &predictions {
                let set = read_predictions(path)?;
                let mut report = MetricsReport::build(&set, &gold_labels)
                    .with_context(|| format!("evaluating {}", path.display()))?;
                if let Some(a) = &agreement {
                    report = report.with_agreement(a.clone());
                }
                reports.push(report);
            }
            if let Some(path) = plot_csv {
                write_plot_csv(&reports, create(&path)?)?;
            }
            let mut w = sink(out)?;
            if text {
                for r in &reports {
                    writeln!(w, "{}", r.to_text())?;
                }
            } else {
                serde_json::to_writer_pretty(&mut w, &reports)?;
                writeln!(w)?;
            }
            Ok(w.flush()?)
        }
        Command::Agreement { a, b } => {
            let (a, b) = read_gold(&a)?.align(&read_gold(&b)?);
            let report = agreement_report(&a, &b)?;
            write_json(&report, out)
        }
        Command::SampleSession {
            predictions,
            corpus,
            fraction,
            count,
            subset,
            sessions_dir,
        } => {
            let mut policy = config.sampling.clone().unwrap_or_default();
            if let Some(f) = fraction {
                policy.negative_fraction = Some(f);
                policy.negative_count = None;
            }
            if let Some(n) = count {
                policy.negative_count = Some(n);
                policy.negative_fraction = None;
            }
            policy.seed = cli.seed;
            let predictions = read_predictions(&predictions)?;
            let corpus = read_corpus(&corpus)?;
            let mut session = build_session(&predictions, &corpus, &policy)?;
            if let Some(n) = subset {
                session = session.subset(n, cli.seed)?;
            }
            eprintln!("session {} with {} items", session.session_id, session.len());
            match sessions_dir {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    session.save(&dir.join(format!("{}.json", session.session_id)))?;
                    if out.is_some() {
                        write_session(&session, out)?;
                    }
                }
                None => write_session(&session, out)?,
            }
            Ok(())
        }
        Command::Serve {
            addr,
            sessions_dir,
            token_env,
        } => {
            let addr = addr.unwrap_or(config.server.addr);
            let dir = sessions_dir.unwrap_or(config.server.sessions_dir);
            let token = match token_env.or(config.server.token_env) {
                Some(var) => Some(std::env::var(&var).with_context(|| format!("token variable {var} is not set"))?),
                None => None,
            };
            let state = slangtriage_server::state_for(&dir, token)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(slangtriage_server::serve(&addr, state))?;
            Ok(())
        }
    }
}

fn filter(args: FilterArgs, seed: u64, out: Option<&Path>) -> Result<()> {
    let corpus = read_corpus(&args.corpus)?;
    let policy = MatchPolicy {
        case_insensitive: !args.case_sensitive,
        word_boundary: !args.no_word_boundary,
        allow_multiword: true,
    };
    let mut kept = match (&args.term, &args.lexicon) {
        (Some(term), _) => corpus::filter_by_term(&corpus, term, policy)?,
        (None, Some(name)) => {
            let lex = resolve_lexicon(name)?;
            let lex = if args.case_sensitive || args.no_word_boundary {
                Lexicon::new(lex.name(), lex.terms(), policy)?
            } else {
                lex
            };
            let posts = corpus.posts().iter().filter(|p| lex.is_match(&p.text)).cloned().collect();
            corpus.derive(posts, FilterStep::Lexicon { name: lex.name().into() })
        }
        (None, None) => bail!("one of --term or --lexicon is required"),
    };
    log::info!("{} of {} posts matched", kept.len(), corpus.len());
    if let Some(n) = args.sample {
        kept = corpus::sample(&kept, n, seed)?;
    }
    write_corpus(&kept, out)
}

fn adjudicate(
    config: &Config,
    corpus: &Path,
    resume: Option<&Path>,
    transcripts: Option<&Path>,
    batch_size: Option<usize>,
    out: Option<&Path>,
) -> Result<()> {
    let corpus = read_corpus(corpus)?;
    let provider_config = config.provider.clone().unwrap_or_else(|| ProviderConfig::mock("mock"));
    let provider: Arc<dyn CompletionProvider> = match provider_config.kind {
        ProviderKind::Mock => Arc::new(MockProvider::new(provider_config.id.clone(), &config.mock_script)),
        ProviderKind::OpenaiCompatible => Arc::new(HttpProvider::from_config(&provider_config)?),
    };
    let batch_size = batch_size.or(config.batch_size).unwrap_or(DEFAULT_BATCH_SIZE);
    let adjudicator = Adjudicator::new(provider, &provider_config, config.prompt.clone(), batch_size)?;
    let prior = match resume {
        Some(path) if path.exists() => Some(read_predictions(path)?),
        _ => None,
    };
    let mut sink: Box<dyn TranscriptSink> = match transcripts {
        Some(path) => {
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .with_context(|| format!("opening {}", path.display()))?;
            Box::new(JsonlSink(BufWriter::new(file)))
        }
        None => Box::new(NullSink),
    };
    let run = adjudicator.run(&corpus, prior.as_ref(), sink.as_mut())?;
    eprintln!("{}", serde_json::to_string(&run.stats)?);
    write_predictions(&run.predictions, out)
}

fn substitute(config: &Config, args: SubstituteArgs, out: Option<&Path>) -> Result<()> {
    let map = match args.map.as_ref().or(config.substitution.as_ref()) {
        Some(path) => SubstitutionMap::parse(&std::fs::read(path).with_context(|| format!("reading {}", path.display()))?)?,
        None => SubstitutionMap::illustrative(),
    };
    if let Some(path) = args.corpus {
        return write_corpus(&map.substitute_corpus(&read_corpus(&path)?), out);
    }
    let (Some(opioid), Some(non_opioid)) = (args.opioid, args.non_opioid) else {
        bail!("give a corpus or both --opioid and --non-opioid");
    };
    let paired = build_paired_dataset(&read_corpus(&opioid)?, &read_corpus(&non_opioid)?, &map)?;
    if let Some(path) = args.originals {
        write_corpus(&paired.original, Some(&path))?;
    }
    if let Some(path) = args.gold {
        let gold: GoldLabels = paired.classes().into_iter().collect();
        gold.write_csv(create(&path)?)?;
    }
    write_corpus(&paired.modified, out)
}

fn resolve_lexicon(name: &str) -> Result<Lexicon> {
    match name.strip_prefix("builtin:") {
        Some("example-broad") => Ok(examples::broad()),
        Some("example-strict") => Ok(examples::strict()),
        Some(other) => bail!("no builtin lexicon {other:?}; try example-broad or example-strict"),
        None => Lexicon::load(Path::new(name)).with_context(|| format!("loading lexicon {name}")),
    }
}

fn read_corpus(path: &Path) -> Result<Corpus> {
    let (corpus, report) = corpus::ingest_path(path, None).with_context(|| format!("reading {}", path.display()))?;
    if report.warning_count() > 0 {
        log::warn!("{}: skipped {} record(s)", path.display(), report.warning_count());
    }
    Ok(corpus)
}

fn read_predictions(path: &Path) -> Result<PredictionSet> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    PredictionSet::read_jsonl(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn read_gold(path: &Path) -> Result<GoldLabels> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    GoldLabels::read_csv(file).with_context(|| format!("reading {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(create(path)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_corpus(corpus: &Corpus, out: Option<&Path>) -> Result<()> {
    corpus::write_jsonl(corpus.posts(), sink(out)?)?;
    Ok(())
}

fn write_predictions(predictions: &PredictionSet, out: Option<&Path>) -> Result<()> {
    predictions.write_jsonl(sink(out)?)?;
    Ok(())
}

fn write_json<T: serde::Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut w = sink(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(w.flush()?)
}

fn write_session(session: &AnnotationSession, out: Option<&Path>) -> Result<()> {
    let mut w = sink(out)?;
    writeln!(w, "{}", session.to_json())?;
    Ok(w.flush()?)
}
