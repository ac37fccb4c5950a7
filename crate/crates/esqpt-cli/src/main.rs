//! `esqpt`: run, validate, and list spin-boson charge-diagnostic
//! experiments described by TOML config files.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use esqpt_cli::config::{CacheSection, ExperimentConfig, PrecisionTier};
use esqpt_cli::{output, presets, runner, CliError};

#[derive(Parser)]
#[command(
    name = "esqpt",
    version,
    about = "Exact-diagonalization experiments for the spin-boson charge diagnostic"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Worker threads for independent sweep cells (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Numeric tier override: "double" or "quad".
    #[arg(long, global = true)]
    precision: Option<String>,
    /// Enable the eigendecomposition cache in this directory.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute one experiment described by a TOML config file.
    Run { config: PathBuf },
    /// List built-in presets, or print one preset's config as TOML.
    Presets { name: Option<String> },
    /// Parse and validate a config file without running anything.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_with_overrides(path: &Path, cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(p) = &cli.precision {
        cfg.precision = PrecisionTier::parse(p)?;
    }
    if let Some(d) = &cli.cache_dir {
        cfg.cache = Some(CacheSection { dir: d.clone() });
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match &cli.cmd {
        Cmd::Presets { name: None } => {
            for p in presets::PRESETS {
                println!("{:<22} {:<15} {}", p.name, p.config().kind.label(), p.description);
            }
            Ok(())
        }
        Cmd::Presets { name: Some(n) } => {
            let p = presets::find(n)?;
            print!("{}", p.config().to_toml());
            Ok(())
        }
        Cmd::Validate { config } => {
            let cfg = load_with_overrides(config, &cli)?;
            println!("OK: {} ({})", config.display(), cfg.kind.label());
            Ok(())
        }
        Cmd::Run { config } => {
            let cfg = load_with_overrides(config, &cli)?;
            let record = runner::execute(&cfg, cli.workers)?;
            let manifest = output::emit(&record, &cfg.output.dir, cfg.output.gnuplot)?;
            for line in &record.log {
                eprintln!("note: {line}");
            }
            let points: usize = record.series.iter().map(|s| s.rows.len()).sum();
            println!(
                "{}: {points} rows in {} data files under {}",
                cfg.kind.label(),
                manifest.files.len(),
                cfg.output.dir.display()
            );
            println!("content hash {}", manifest.content_hash);
            match &record.failure {
                Some(f) => Err(CliError::Numeric(f.clone())),
                None => Ok(()),
            }
        }
    }
}
