use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use east_lab::config::parse_config;
use east_lab::run::{run_experiment, RunManifest};

/// Runs one East model experiment described by a `key = value` config file.
#[derive(Debug, Parser)]
#[command(name = "east-lab", version)]
struct Cli {
    /// Experiment configuration file.
    config: PathBuf,
    /// Overrides the `seed` key.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the `out` key (output directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the number of available processors.
    #[arg(long)]
    threads: Option<usize>,
}

fn validation_exit(out: PathBuf, msg: String) -> ExitCode {
    eprintln!("east-lab: invalid configuration: {msg}");
    if let Err(e) = RunManifest::validation_failure(msg).write(&out) {
        eprintln!("east-lab: {e}");
    }
    ExitCode::from(1)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_out = || cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => return validation_exit(default_out(), format!("{}: {e}", cli.config.display())),
    };
    let base = cli.config.parent().map(PathBuf::from).unwrap_or_default();
    let mut cfg = match parse_config(&text, &base) {
        Ok(c) => c,
        Err(e) => return validation_exit(default_out(), e.to_string()),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.echo.insert("seed".into(), seed.to_string());
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
        cfg.echo.insert("out".into(), out.display().to_string());
    }
    if let Some(t) = cli.threads {
        if t == 0 {
            return validation_exit(cfg.out.clone(), "invalid field `threads`: must be >= 1".into());
        }
        cfg.threads = Some(t);
    }
    match run_experiment(&cfg) {
        Ok(m) => {
            for (name, _) in &m.files {
                println!("{}", cfg.out.join(name).display());
            }
            println!("{}", cfg.out.join(east_lab::run::MANIFEST_FILE).display());
            ExitCode::SUCCESS
        }
        Err((_, e)) => {
            eprintln!("east-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
