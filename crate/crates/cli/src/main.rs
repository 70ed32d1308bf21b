use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod output;

#[derive(Parser)]
#[command(name = "periscat", version, about = "Acoustic scattering from doubly-periodic multilayered media")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one incidence; writes summary.json and optionally field.csv.
    Solve(Args),
    /// Reflection/transmission over a list of polar angles; writes spectra.csv.
    Sweep(Args),
    /// Repeat the solve along n_src or l; writes convergence.csv.
    Converge(Args),
}

#[derive(clap::Args)]
struct Args {
    config: PathBuf,
    /// Output directory (overrides `output.directory`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long)]
    threads: Option<usize>,
    /// Also solve the unreduced system and compare.
    #[arg(long)]
    full_system_check: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, run): (&Args, fn(&commands::Ctx) -> commands::Outcome) = match &cli.command {
        Command::Solve(a) => (a, commands::solve),
        Command::Sweep(a) => (a, commands::sweep),
        Command::Converge(a) => (a, commands::converge),
    };
    if let Some(n) = args.threads {
        if let Err(e) = periscat::set_threads(n) {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let cfg = match config::parse_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    let out = args.out.clone().unwrap_or_else(|| cfg.output.directory.clone());
    if let Err(e) = std::fs::create_dir_all(&out) {
        eprintln!("error: cannot create {}: {e}", out.display());
        return ExitCode::from(2);
    }
    let ctx = commands::Ctx { cfg, out: out.as_path().to_path_buf(), full_system_check: args.full_system_check };
    match run(&ctx) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure { code, msg }) => {
            eprintln!("error: {msg}");
            report_dir(&ctx.out);
            ExitCode::from(code)
        }
    }
}

fn report_dir(out: &Path) {
    eprintln!("partial output in {}", out.display());
}
