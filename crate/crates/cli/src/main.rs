use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;
use voteimpute::backend::remote::{ENV_API_BASE, ENV_API_KEY};
use voteimpute::error::Error;
use voteimpute::run::{self, ReportFormat, RunConfig};
use voteimpute::synthetic::{generate, GeneratorSpec};

/// Vote-choice imputation benchmark.
#[derive(Parser)]
#[command(name = "voteimpute", version)]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment grid described by a config file.
    Run { config: PathBuf },
    /// Rebuild report tables for a finished (or partial) run.
    Report {
        run_dir: PathBuf,
        /// json, csv or markdown
        #[arg(long, default_value = "markdown")]
        format: String,
    },
    /// Draw a synthetic survey from a generator spec.
    Generate {
        /// Generator spec TOML; built-in defaults when omitted.
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec's sample size.
        #[arg(long)]
        n: Option<usize>,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write the fine-tuning files a config would submit.
    ExportFinetune {
        config: PathBuf,
        /// Defaults to `<out_dir>/finetune-export`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn fallback_env(var: &str, fallback: &str) {
    if std::env::var_os(var).is_none() {
        if let Some(v) = std::env::var_os(fallback) {
            std::env::set_var(var, v);
        }
    }
}

fn cmd_run(path: &Path) -> Result<bool, Error> {
    let config = RunConfig::load(path)?;
    let summary = run::run(&config)?;
    println!(
        "{} tasks: {} fitted, {} cached, {} failed",
        summary.tasks,
        summary.fitted,
        summary.cached,
        summary.failures.len()
    );
    for f in &summary.failures {
        eprintln!("failed: {f}");
    }
    println!("report: {}", summary.run_dir.join("reports/report.md").display());
    Ok(summary.failures.is_empty())
}

fn cmd_report(run_dir: &Path, format: &str) -> Result<bool, Error> {
    let format: ReportFormat = format.parse()?;
    for f in run::report(run_dir, format)? {
        println!("{}", f.display());
    }
    Ok(true)
}

fn cmd_generate(spec: Option<&Path>, out: &Path, n: Option<usize>, seed: Option<u64>) -> Result<bool, Error> {
    let mut spec = match spec {
        Some(p) => GeneratorSpec::load(p)?,
        None => GeneratorSpec::default(),
    };
    if let Some(n) = n {
        spec.n = n;
    }
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let g = generate(&spec)?;
    std::fs::create_dir_all(out).map_err(|e| Error::InvalidArgument(format!("{}: {e}", out.display())))?;
    g.dataset.save(&out.join("codebook.toml"), &out.join("responses.csv"))?;
    let write = |name: &str, text: String| {
        let p = out.join(name);
        std::fs::write(&p, text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", p.display())))
    };
    write("draws.json", serde_json::to_string_pretty(&g.log)?)?;
    write("spec.toml", spec.to_toml_string())?;
    println!("{} respondents written to {}", g.dataset.len(), out.display());
    Ok(true)
}

fn cmd_export(path: &Path, out: Option<&Path>) -> Result<bool, Error> {
    let config = RunConfig::load(path)?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| config.out_dir.join("finetune-export"));
    for f in run::export_finetune(&config, &out)? {
        println!("{}", f.display());
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("VOTEIMPUTE_LOG").unwrap_or_else(|_| EnvFilter::new(level)))
        .with_writer(std::io::stderr)
        .init();
    fallback_env(ENV_API_BASE, "OPENAI_BASE_URL");
    fallback_env(ENV_API_KEY, "OPENAI_API_KEY");

    let result = match &cli.command {
        Command::Run { config } => cmd_run(config),
        Command::Report { run_dir, format } => cmd_report(run_dir, format),
        Command::Generate { spec, out, n, seed } => cmd_generate(spec.as_deref(), out, *n, *seed),
        Command::ExportFinetune { config, out } => cmd_export(config, out.as_deref()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
