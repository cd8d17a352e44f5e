use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use holter_core::agent::Role;
use holter_core::domain::{subgroup_key, AgeBands, ArrhythmiaTable, BundleLoader, PatientBundle};
use holter_core::eval::{
    aggregate, export_finetune_dataset, format_mean_std, stability_score, subgroup_csv, to_jsonl, AggregationContext, Dimension,
    Embedder, HashingEmbedder, HttpEmbedder, RatingSet, SealedAliasMap, StdKind,
};
use holter_core::factcheck::{load_guidelines, FactChecker, GuidelineSet};
use holter_core::pipeline::{JobState, Pipeline, PipelineConfig};
use holter_core::prompt::{build_demo_library, ItemParser, PromptTemplates};
use holter_core::report::{parse_report, render, RenderFormat};
use serde_json::json;
use thiserror::Error;

use crate::jobs::{CrashPoint, JobRunner};
use crate::store::FileStore;

/// Exit code 1: the input did not validate. Exit code 2: anything else.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Text,
    Html,
}

#[derive(Debug, Parser)]
#[command(name = "holter", version, about = "Multi-agent Holter ECG report engine")]
pub struct Cli {
    /// Output format; JSON unless stated otherwise.
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Json)]
    pub format: OutputFormat,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the pipeline on one patient bundle and print the report.
    Run {
        /// Bundle JSON file, or a directory with bundle.json or metrics.csv + manifest.json.
        bundle: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Fact-check a report file; exits 1 when a mandatory rule is violated.
    Factcheck {
        report: PathBuf,
        /// Guideline rule file (defaults to the shipped rules).
        #[arg(long)]
        guidelines: Option<PathBuf>,
    },
    /// Demonstration bank commands.
    #[command(subcommand)]
    DemoBank(DemoBankCommand),
    /// Clinical validation commands.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Fine-tuning dataset commands.
    #[command(subcommand)]
    Dataset(DatasetCommand),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "HOLTER_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "HOLTER_BIND", default_value = "127.0.0.1")]
    pub bind: String,
    #[arg(long, env = "HOLTER_STORE")]
    pub store: PathBuf,
    /// Pipeline configuration, as `PATH` (id `default`) or `ID=PATH`. Repeatable.
    #[arg(long = "config", env = "HOLTER_CONFIG", value_delimiter = ',')]
    pub configs: Vec<String>,
    /// Worker threads; defaults to the number of CPU cores.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Require `Authorization: Bearer <token>` on API routes.
    #[arg(long, env = "HOLTER_AUTH_TOKEN", hide_env_values = true)]
    pub auth_token: Option<String>,
    #[arg(long, default_value_t = 8 * 1024 * 1024)]
    pub max_body_bytes: usize,
}

#[derive(Debug, Subcommand)]
pub enum DemoBankCommand {
    /// Build a demo bank from a directory of adjudicated bundles.
    Build {
        dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        guidelines: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Mean and deviation of ratings from a CSV file.
    Aggregate {
        csv: PathBuf,
        /// Comma-separated: model, metric, gender, age_group, class.
        #[arg(long, default_value = "model,metric")]
        group_by: String,
        #[arg(long, value_enum, default_value_t = StdArg::Population)]
        std: StdArg,
        /// JSON array of sealed alias maps, to report real model names.
        #[arg(long)]
        aliases: Option<PathBuf>,
        /// Directory of bundles, for gender / age_group / class groupings.
        #[arg(long)]
        bundles: Option<PathBuf>,
    },
    /// Variance of pairwise cosine similarities over repeated outputs.
    Stability {
        /// Directory with one text file per run.
        dir: PathBuf,
        /// OpenAI-compatible embeddings endpoint; the built-in hashing embedder otherwise.
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long, default_value = "text-embedding")]
        model: String,
        /// Name of the env var holding the API key.
        #[arg(long)]
        api_key_env: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StdArg {
    Population,
    Sample,
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Export (input, output) instruction records for one agent role as JSONL.
    Export {
        dir: PathBuf,
        #[arg(long, value_parser = parse_role)]
        role: Role,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        guidelines: Option<PathBuf>,
    },
}

fn parse_role(s: &str) -> Result<Role, String> {
    serde_json::from_value(json!(s.to_ascii_uppercase())).map_err(|_| format!("unknown role `{s}` (M2F, T2F or F2I)"))
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("HOLTER_LOG").unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn print(bytes: &[u8]) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    out.write_all(bytes).and_then(|_| out.flush()).map_err(internal)
}

fn print_json(value: &serde_json::Value) -> Result<(), CliError> {
    print(format!("{}\n", serde_json::to_string_pretty(value).expect("json")).as_bytes())
}

fn write_or_print(out: Option<&Path>, content: &str) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, content).map_err(|e| internal(format!("{}: {e}", p.display()))),
        None => print(content.as_bytes()),
    }
}

fn guidelines(path: Option<&Path>, parser: &ItemParser) -> Result<GuidelineSet, CliError> {
    match path {
        Some(p) => {
            let raw = fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
            load_guidelines(&raw, parser.vocabulary()).map_err(invalid)
        }
        None => Ok(GuidelineSet::builtin()),
    }
}

/// Bundles in a directory: `*.json` files and sub-directories, by name.
fn load_bundles(dir: &Path) -> Result<Vec<PatientBundle>, CliError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| invalid(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() || p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let loader = BundleLoader::default();
    paths
        .iter()
        .map(|p| loader.load_path(p).map_err(|e| invalid(format!("{}: {e}", p.display()))))
        .collect()
}

pub fn execute(cli: Cli) -> Result<u8, CliError> {
    let format = cli.format;
    match cli.command {
        Command::Run { bundle, config } => run(&bundle, &config, format),
        Command::Serve(args) => serve(args),
        Command::Factcheck { report, guidelines: g } => factcheck(&report, g.as_deref(), format),
        Command::DemoBank(DemoBankCommand::Build { dir, out, guidelines: g }) => {
            let parser = ItemParser::builtin();
            let gl = guidelines(g.as_deref(), &parser)?;
            let bundles = load_bundles(&dir)?;
            let lib = build_demo_library(&bundles, &ArrhythmiaTable::builtin(), &AgeBands::default(), &gl, &parser).map_err(invalid)?;
            write_or_print(out.as_deref(), &lib.to_json())?;
            Ok(0)
        }
        Command::Eval(EvalCommand::Aggregate {
            csv,
            group_by,
            std,
            aliases,
            bundles,
        }) => eval_aggregate(&csv, &group_by, std, aliases.as_deref(), bundles.as_deref(), format),
        Command::Eval(EvalCommand::Stability {
            dir,
            endpoint,
            model,
            api_key_env,
        }) => {
            let mut files: Vec<PathBuf> = fs::read_dir(&dir)
                .map_err(|e| invalid(format!("{}: {e}", dir.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            files.sort();
            let texts = files
                .iter()
                .map(|p| fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display()))))
                .collect::<Result<Vec<_>, _>>()?;
            let embedder: Box<dyn Embedder> = match endpoint {
                Some(url) => Box::new(HttpEmbedder {
                    endpoint_url: url,
                    model,
                    api_key_env,
                    timeout_ms: 60_000,
                }),
                None => Box::new(HashingEmbedder::default()),
            };
            let score = stability_score(&texts, embedder.as_ref()).map_err(|e| match e {
                holter_core::eval::EvalError::Embedding(m) => internal(m),
                other => invalid(other),
            })?;
            match format {
                OutputFormat::Json => print_json(&serde_json::to_value(score).expect("json"))?,
                _ => print(
                    format!(
                        "runs: {}\nvariance: {}\nmean similarity: {}\n",
                        score.n_runs, score.variance, score.mean_similarity
                    )
                    .as_bytes(),
                )?,
            }
            Ok(0)
        }
        Command::Dataset(DatasetCommand::Export {
            dir,
            role,
            out,
            guidelines: g,
        }) => {
            let parser = ItemParser::builtin();
            let gl = guidelines(g.as_deref(), &parser)?;
            let bundles = load_bundles(&dir)?;
            let records = export_finetune_dataset(&bundles, role, &PromptTemplates::builtin(), &gl).map_err(invalid)?;
            write_or_print(out.as_deref(), &to_jsonl(&records))?;
            Ok(0)
        }
    }
}

fn run(bundle: &Path, config: &Path, format: OutputFormat) -> Result<u8, CliError> {
    let config = PipelineConfig::load(config).map_err(invalid)?;
    let pipeline = Pipeline::from_config(&config).map_err(invalid)?;
    let bundle = BundleLoader::default().load_path(bundle).map_err(invalid)?;
    let outcome = pipeline.run(&bundle, &|s| tracing::debug!(state = %s, "transition"));
    for w in outcome.trace.warnings() {
        tracing::warn!("{w}");
    }
    let Some(report) = outcome.report else {
        let reason = match &outcome.state {
            JobState::Failed { reason } => reason.clone(),
            other => other.to_string(),
        };
        return Err(internal(format!("pipeline failed: {reason}")));
    };
    let fmt = match format {
        OutputFormat::Json => RenderFormat::Json,
        OutputFormat::Text => RenderFormat::Text,
        OutputFormat::Html => RenderFormat::Html,
    };
    print(&render(&report, fmt))?;
    Ok(0)
}

fn factcheck(path: &Path, g: Option<&Path>, format: OutputFormat) -> Result<u8, CliError> {
    let bytes = fs::read(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let report = parse_report(&bytes).map_err(invalid)?;
    let parser = ItemParser::builtin();
    let checker = FactChecker::with_parser(guidelines(g, &parser)?, &parser);
    let violations = checker.check(&report.findings, &report.interpretation);
    let blocking = violations.iter().filter(|v| v.is_blocking()).count();
    match format {
        OutputFormat::Json => print_json(&json!({ "violations": violations, "blocking": blocking }))?,
        _ => {
            let mut s = String::new();
            for v in &violations {
                s.push_str(&format!("{:?} {:?}: {}\n", v.severity, v.kind, v.regeneration_instruction));
            }
            s.push_str(&format!("{} violation(s), {blocking} blocking\n", violations.len()));
            print(s.as_bytes())?;
        }
    }
    Ok(if blocking > 0 { 1 } else { 0 })
}

fn eval_aggregate(
    csv: &Path,
    group_by: &str,
    std: StdArg,
    aliases: Option<&Path>,
    bundles: Option<&Path>,
    format: OutputFormat,
) -> Result<u8, CliError> {
    let dims = group_by
        .split(',')
        .map(|s| s.trim().parse::<Dimension>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(invalid)?;
    let raw = fs::read(csv).map_err(|e| invalid(format!("{}: {e}", csv.display())))?;
    let mut set = RatingSet::new();
    let report = set.ingest_csv(&raw);
    for r in &report.rejected {
        tracing::warn!(line = r.line, "rejected rating: {}", r.reason);
    }
    let mut ctx = AggregationContext::default();
    if let Some(p) = aliases {
        let raw = fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
        let maps: Vec<SealedAliasMap> = serde_json::from_str(&raw).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
        for m in maps {
            ctx.alias_maps.insert(m.patient_id, m.aliases);
        }
    }
    if let Some(dir) = bundles {
        let table = ArrhythmiaTable::builtin();
        for b in load_bundles(dir)? {
            let key = subgroup_key(&b, &table, &AgeBands::default()).map_err(invalid)?;
            ctx.subgroups.insert(b.patient_id().to_string(), key);
        }
    }
    let kind = match std {
        StdArg::Population => StdKind::Population,
        StdArg::Sample => StdKind::Sample,
    };
    let rows = aggregate(set.ratings(), &dims, &ctx, kind);
    match format {
        OutputFormat::Json => print_json(&json!({ "group_by": dims, "rows": rows, "ingest": report }))?,
        _ => {
            let mut s = subgroup_csv(&rows, &dims);
            if rows.is_empty() {
                s.push_str(&format!("no ratings ({})\n", format_mean_std(f64::NAN, f64::NAN)));
            }
            print(s.as_bytes())?;
        }
    }
    Ok(if report.rejected.is_empty() { 0 } else { 1 })
}

fn parse_config_arg(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((id, path)) if !id.is_empty() && !id.contains('/') => (id.to_string(), PathBuf::from(path)),
        _ => ("default".to_string(), PathBuf::from(arg)),
    }
}

/// Loads each configuration and builds its pipeline; uploaded images in the
/// store are added to every pipeline's image search path.
pub fn build_pipelines(configs: &[String], store: &FileStore) -> Result<BTreeMap<String, Pipeline>, CliError> {
    let mut out = BTreeMap::new();
    for arg in configs {
        let (id, path) = parse_config_arg(arg);
        let mut config = PipelineConfig::load(&path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        config.image_dirs.push(store.blob_dir("images"));
        let pipeline = Pipeline::from_config(&config).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        if out.insert(id.clone(), pipeline).is_some() {
            return Err(invalid(format!("config id `{id}` given twice")));
        }
    }
    Ok(out)
}

fn serve(args: ServeArgs) -> Result<u8, CliError> {
    let store = FileStore::open(&args.store).map_err(invalid)?;
    let pipelines = build_pipelines(&args.configs, &store)?;
    if pipelines.is_empty() {
        return Err(invalid("at least one --config is required"));
    }
    let crash = std::env::var("HOLTER_CRASH_AFTER").ok().and_then(|s| CrashPoint::parse(&s));
    let workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(internal)?;
    runtime.block_on(async move {
        let runner = JobRunner::start(store, pipelines, workers, crash).map_err(internal)?;
        let state = crate::api::AppState {
            runner,
            auth_token: args.auth_token.filter(|t| !t.is_empty()),
        };
        let app = crate::api::router(state, args.max_body_bytes);
        let listener = tokio::net::TcpListener::bind((args.bind.as_str(), args.port)).await.map_err(internal)?;
        let addr = listener.local_addr().map_err(internal)?;
        print(format!("listening on http://{addr}\n").as_bytes())?;
        tracing::info!(%addr, workers, "serving");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(internal)?;
        Ok(0)
    })
}
