use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use knowconflict::config::RunConfig;
use knowconflict::corpus::IngestFormat;
use knowconflict::gateway::{serve_mock, MockScript};
use knowconflict::{jsonl, pipeline, validate};

#[derive(Parser)]
#[command(name = "knowconflict", version, about = "Build and evaluate knowledge-conflict preference datasets")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Backend for every stage: `mock`, `mock:<script.json>`, `http:<base-url>#<model>` or `process:<command>`.
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Override any configuration key, e.g. `--set k=6`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run ingest, probe, forge, contexts, negatives, assembly and export.
    Build {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        format: Option<IngestFormat>,
    },
    /// Check every dataset-wide invariant of a built dataset.
    Validate { dataset: Option<PathBuf> },
    /// Score a model, from saved outputs or by generating through the eval backend.
    Evaluate {
        #[arg(long)]
        contexts: PathBuf,
        #[arg(long)]
        outputs: Option<PathBuf>,
    },
    /// Export one balanced dataset per R_error target.
    SweepRatio {
        #[arg(long, value_delimiter = ',')]
        targets: Option<Vec<f64>>,
    },
    /// Re-probe a trained model without context and report how often it answers a_cf.
    Leakage { dataset: Option<PathBuf> },
    /// Conflicting / irrelevant / total counts per dataset.
    Stats {
        #[arg(required = true)]
        datasets: Vec<PathBuf>,
    },
    #[command(hide = true)]
    MockServe {
        #[arg(long)]
        script: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> knowconflict::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| knowconflict::Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    if let Some(b) = &common.backend {
        cfg.backend = b.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> knowconflict::Result<bool> {
    let mut cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Build { corpus, format } => {
            if let Some(c) = corpus {
                cfg.corpus = Some(c);
            }
            if let Some(f) = format {
                cfg.corpus_format = f;
            }
            let outcome = pipeline::cmd_build(&cfg)?;
            print!("{}", outcome.summary());
            if !outcome.reused.is_empty() {
                println!("reused stages: {}", outcome.reused.join(", "));
            }
            Ok(true)
        }
        Command::Validate { dataset } => {
            let report = validate::cmd_validate(&dataset.unwrap_or(cfg.out))?;
            for w in &report.warnings {
                log::warn!("{w}");
            }
            print!("{}", report.render());
            Ok(report.is_clean())
        }
        Command::Evaluate { contexts, outputs } => {
            let report = pipeline::cmd_evaluate(&cfg, &contexts, outputs.as_deref())?;
            print!("{}", report.to_kv());
            eprint!("{}", report.to_table());
            Ok(report.quarantined == 0)
        }
        Command::SweepRatio { targets } => {
            let targets = targets.unwrap_or_else(|| cfg.sweep_targets.clone());
            let entries = pipeline::cmd_sweep_ratio(&cfg, &targets)?;
            print!("{}", pipeline::render_sweep(&entries));
            Ok(entries.iter().all(|e| e.error.is_none()))
        }
        Command::Leakage { dataset } => {
            let dataset = dataset.unwrap_or_else(|| cfg.out.clone());
            let report = pipeline::cmd_leakage(&cfg, &dataset)?;
            match report.rate {
                Some(r) => println!("leakage_rate={r:.6}"),
                None => println!("leakage_rate=absent"),
            }
            println!("matched={} completed={} quarantined={}", report.matched, report.completed, report.quarantined.len());
            Ok(report.quarantined.is_empty())
        }
        Command::Stats { datasets } => {
            print!("{}", pipeline::render_stats(&pipeline::cmd_stats(&datasets)?));
            Ok(true)
        }
        Command::MockServe { script } => {
            let script: MockScript = match script {
                Some(p) => jsonl::read_json(&p)?,
                None => MockScript::default(),
            };
            let stdin = std::io::stdin();
            serve_mock(script, stdin.lock(), std::io::stdout().lock())?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
