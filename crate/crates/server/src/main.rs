use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use phishbowl::email_model::EmailContent;
use phishbowl::eval_harness::{
    load_corpus, AnalyzerKind, Balance, ExperimentContext, ExperimentSpec, SyntheticCorpus, TSV_HEADER,
};
use phishbowl::platform::{ClassifyInput, PipelineError, Platform, SystemClock};
use phishbowl_server::config::{PlatformConfig, RemoteEndpoints};
use phishbowl_server::{api, build_clients, open_platform};

#[derive(Parser)]
#[command(name = "phishbowl", version, about = "Adaptive phishing detection service")]
struct Cli {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, short, global = true, env = "PHISHBOWL_CONFIG")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        /// Overrides the configured listen address.
        #[arg(long)]
        listen: Option<SocketAddr>,
    },
    /// Classify one email and print the verdict as JSON.
    Classify(ClassifyArgs),
    /// Add a known phishing email to the bowl.
    Submit {
        #[arg(long)]
        file: PathBuf,
    },
    /// Natural-language search over stored emails, one JSON object per line.
    Search {
        query: String,
        #[arg(short, default_value_t = api::DEFAULT_SEARCH_RESULTS)]
        n: usize,
    },
    /// Bulk-load a labeled corpus (one JSON object per line) into the bowl.
    Preload {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Run a train/test experiment and print a tab-separated result row.
    Eval(EvalArgs),
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct ClassifyArgs {
    /// Email as JSON `{sender?, subject?, body}` or plain body text.
    #[arg(long)]
    file: Option<PathBuf>,
    /// OCR word table (tab-separated, with header row).
    #[arg(long)]
    ocr_file: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BalanceArg {
    Balanced,
    PhishOnly,
}

#[derive(Clone, Copy, ValueEnum)]
enum AnalyzerArg {
    Bowl,
    Gpt,
    Ensemble,
}

#[derive(Args)]
struct EvalArgs {
    /// Labeled corpus; a seeded synthetic corpus is generated when omitted.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 2048)]
    train: usize,
    #[arg(long, default_value_t = 512)]
    test: usize,
    #[arg(long, value_enum, default_value = "balanced")]
    balance: BalanceArg,
    /// Confidence decay rate.
    #[arg(long, conflicts_with = "no_decay")]
    lambda: Option<f64>,
    /// Disable confidence decay.
    #[arg(long)]
    no_decay: bool,
    #[arg(long, value_enum, default_value = "ensemble")]
    analyzer: AnalyzerArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EmailFile {
    sender: Option<String>,
    subject: Option<String>,
    body: String,
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_email(path: &Path) -> anyhow::Result<EmailContent> {
    let raw = read(path)?;
    if raw.trim_start().starts_with('{') {
        let e: EmailFile =
            serde_json::from_str(&raw).with_context(|| format!("parsing {}", path.display()))?;
        Ok(EmailContent {
            sender: e.sender,
            subject: e.subject,
            body: e.body,
        })
    } else {
        Ok(EmailContent::body_only(raw)?)
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<PlatformConfig> {
    match path {
        Some(p) => PlatformConfig::load(p),
        None => Ok(PlatformConfig::default()),
    }
}

fn platform(config: &PlatformConfig) -> anyhow::Result<Platform> {
    let clients = build_clients(config, &RemoteEndpoints::from_env(), Arc::new(SystemClock))?;
    open_platform(config, clients)
}

fn print_json<T: serde::Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Serve { listen } => {
            let addr = listen.unwrap_or(config.listen);
            // Blocking remote clients must be built outside the async runtime.
            let platform = Arc::new(platform(&config)?);
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            runtime.block_on(api::serve(platform, addr))
        }
        Command::Classify(args) => {
            let input = match (args.file, args.ocr_file) {
                (Some(f), _) => ClassifyInput::Text(read_email(&f)?),
                (None, Some(f)) => ClassifyInput::OcrTable(read(&f)?),
                (None, None) => bail!("one of --file or --ocr-file is required"),
            };
            print_json(&platform(&config)?.classify(input)?)
        }
        Command::Submit { file } => {
            let email = read_email(&file)?;
            print_json(&platform(&config)?.submit(&email)?)
        }
        Command::Search { query, n } => {
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            for hit in platform(&config)?.search(&query, n)? {
                writeln!(out, "{}", serde_json::to_string(&hit)?)?;
            }
            Ok(())
        }
        Command::Preload { corpus } => {
            let entries = load_corpus(&corpus)?;
            let p = platform(&config)?;
            let ids = p.preload(entries.iter().map(|e| (e.content(), e.label)))?;
            println!("preloaded {} emails; bowl holds {}", ids.len(), p.bowl().len());
            Ok(())
        }
        Command::Eval(args) => eval(&config, args),
    }
}

fn eval(config: &PlatformConfig, args: EvalArgs) -> anyhow::Result<()> {
    let spec = ExperimentSpec {
        train_size: args.train,
        test_size: args.test,
        balance: match args.balance {
            BalanceArg::Balanced => Balance::Balanced,
            BalanceArg::PhishOnly => Balance::PhishOnly,
        },
        lambda: if args.no_decay {
            None
        } else {
            Some(args.lambda.unwrap_or(config.bowl.lambda))
        },
        analyzer: match args.analyzer {
            AnalyzerArg::Bowl => AnalyzerKind::Bowl,
            AnalyzerArg::Gpt => AnalyzerKind::Gpt,
            AnalyzerArg::Ensemble => AnalyzerKind::Ensemble,
        },
        seed: args.seed,
    };
    let corpus = match &args.corpus {
        Some(path) => load_corpus(path)?,
        None => SyntheticCorpus::default().generate(2 * (args.train + args.test), args.seed),
    };
    let clients = build_clients(config, &RemoteEndpoints::from_env(), Arc::new(SystemClock))?;
    let ctx = ExperimentContext {
        embedder: clients.embedder.as_ref(),
        analyst: clients.analyst.as_ref(),
        converter: config.converter,
        bowl: config.bowl,
        ensemble: config.ensemble,
        verdict_attempts: config.verdict_attempts,
    };
    let result = ctx.run(&spec, &corpus)?;
    println!("{TSV_HEADER}");
    println!("{}", result.tsv_row());
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match e.downcast_ref::<PipelineError>() {
                Some(p) => eprintln!("error [{}]: {}", p.stage, p.message),
                None => eprintln!("error: {e:#}"),
            }
            ExitCode::FAILURE
        }
    }
}
