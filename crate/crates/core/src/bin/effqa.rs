use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use effqa::config::{PipelineConfig, CONFIG_ENV};
use effqa::{pipeline, selftest, Error};

/// Phrase-indexed question answering pipeline.
///
/// Any config key can be overridden with `--section.key value`, for
/// example `--beam.s 20 --dual.epochs 5 --seed 3`.
#[derive(Parser, Debug)]
#[command(name = "effqa", version)]
struct Cli {
    /// Config file (falls back to the EFFQA_CONFIG environment variable).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the vocabulary and tokenized caches.
    Ingest,
    /// Train the question-agnostic span extractor.
    TrainExtractor,
    /// Write candidate dumps for the train and dev sets.
    ExtractCandidates,
    /// Train the shared question/candidate encoder.
    TrainEncoder,
    /// Encode dev candidates into a phrase index.
    BuildIndex,
    /// Search the phrase index with a free-text question.
    Query {
        #[arg(long)]
        question: String,
        #[arg(long)]
        context_id: Option<String>,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Answer every dev question from the index and write the report.
    Evaluate,
    /// Run the built-in oracle and property checks.
    Selftest,
}

/// Undotted config keys that may also be given as flags.
const PLAIN_KEYS: [&str; 2] = ["seed", "threads"];

/// Splits `--key value` and `--key=value` config overrides from the
/// arguments clap should see.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), String> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (key, inline) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        if !key.contains('.') && !PLAIN_KEYS.contains(&key.as_str()) {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it.next().ok_or_else(|| format!("missing value for --{key}"))?,
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}

fn load_config(path: Option<PathBuf>, overrides: &[(String, String)]) -> effqa::Result<PipelineConfig> {
    let path = path.or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    let mut cfg = match path {
        Some(p) => PipelineConfig::load(&p)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_overrides(overrides.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    Ok(cfg)
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).unwrap_or_default()
}

fn run(command: Command, cfg: &PipelineConfig) -> effqa::Result<bool> {
    match command {
        Command::Ingest => println!("{}", to_json(&pipeline::ingest(cfg)?)),
        Command::TrainExtractor => {
            let report = pipeline::train_extractor_stage(cfg)?;
            for e in &report.epochs {
                match &e.dev {
                    Some(d) => println!("epoch {}: loss {:.4}, dev EM-recall@{} {:.4}", e.epoch, e.train_loss, d.k, d.em_recall),
                    None => println!("epoch {}: loss {:.4}", e.epoch, e.train_loss),
                }
            }
            println!("kept epoch {:?}; checkpoint {}", report.best_epoch, cfg.paths.extractor().display());
        }
        Command::ExtractCandidates => println!("{}", to_json(&pipeline::extract_candidates_stage(cfg)?)),
        Command::TrainEncoder => {
            let report = pipeline::train_encoder_stage(cfg)?;
            let ts = &report.training_set;
            println!("training set: {} of {} questions (retention {:.3})", ts.kept, ts.questions, ts.retention);
            for e in &report.training.epochs {
                let dev = e.dev_em.map_or(String::new(), |d| format!(", dev EM {d:.2}"));
                println!("epoch {}: loss {:.4}, train top-1 {:.3}{dev}", e.epoch, e.train_loss, e.train_top1);
            }
            println!("kept epoch {:?}; checkpoint {}", report.training.best_epoch, cfg.paths.dual().display());
        }
        Command::BuildIndex => {
            let s = pipeline::build_index_stage(cfg)?;
            println!("{} entries over {} contexts, dim {} -> {}", s.entries, s.contexts, s.dim, cfg.paths.index().display());
        }
        Command::Query { question, context_id, top_k } => {
            let hits = pipeline::query(cfg, &question, context_id.as_deref(), top_k.unwrap_or(cfg.query_top_k))?;
            for h in hits {
                println!("{:>3}  {:>10.4}  {:<8} [{}, {}]  {}", h.rank + 1, h.score, h.ctx_id, h.start, h.end, h.text);
            }
        }
        Command::Evaluate => {
            let ev = pipeline::evaluate_stage(cfg)?;
            println!("{}", ev.report.summary());
            println!("candidate EM-recall@{}: {:.2}", ev.recall.k, 100.0 * ev.recall.em_recall);
            println!("oracle EM: {:.2}", ev.oracle_em);
            println!("report: {}", cfg.paths.report().display());
        }
        Command::Selftest => {
            let outcomes = selftest::run_selftest();
            for o in &outcomes {
                println!("{o}");
            }
            return Ok(outcomes.iter().all(|o| o.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (args, overrides) = match split_overrides(std::env::args().collect()) {
        Ok(v) => v,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = load_config(cli.config, &overrides).and_then(|cfg| run(cli.command, &cfg));
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config { .. } => 1,
                ref e if e.is_data_error() => 2,
                _ => 3,
            })
        }
    }
}
