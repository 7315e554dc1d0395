use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fpweak::data::{load_snapshots, write_snapshots};
use fpweak::pipeline::{run_fit, run_report, run_stats, RunConfig};
use fpweak::sim::{simulate, SimConfig};
use fpweak::{DomainConfig, Error, ErrorClass};

#[derive(Parser)]
#[command(name = "fpweak", version, about = "Learn Fokker-Planck models from particle snapshots")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model hierarchy for every configured group.
    Fit {
        #[arg(long)]
        config: PathBuf,
    },
    /// Simulate the particle system and write snapshot CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Empirical diffusion estimates for a snapshot CSV, as JSON.
    Stats {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1000)]
        replicates: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Plot extent along x, cm.
        #[arg(long)]
        length_x: Option<f64>,
        /// Plot extent along y, cm.
        #[arg(long)]
        length_y: Option<f64>,
        /// Output JSON; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Render tables and plot data from a fit directory.
    Report {
        #[arg(long)]
        from: PathBuf,
        /// Destination directory; defaults to `--from`.
        #[arg(long)]
        to: Option<PathBuf>,
    },
}

fn exit_code(class: ErrorClass) -> ExitCode {
    match class {
        ErrorClass::Validation => ExitCode::from(2),
        ErrorClass::Numerical => ExitCode::from(3),
        ErrorClass::Io => ExitCode::from(1),
    }
}

fn write_out(output: Option<&Path>, bytes: &[u8]) -> Result<(), Error> {
    match output {
        Some(p) => std::fs::write(p, bytes)?,
        None => std::io::stdout().lock().write_all(bytes)?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Fit { config } => {
            let cfg = RunConfig::load(&config)?;
            let doc = run_fit(&cfg)?;
            let failed = doc.groups.iter().filter(|g| matches!(g.outcome, fpweak::pipeline::GroupOutcome::Failed(_))).count();
            eprintln!(
                "fitted {} group(s), {failed} failed; results in {}",
                doc.groups.len(),
                cfg.output.display()
            );
            if let Some((group, f)) = doc.first_failure() {
                eprintln!("error: {} failed for group `{group}`: {}", f.stage, f.message);
                return Ok(exit_code(f.class()));
            }
        }
        Command::Simulate { config, output } => {
            let cfg = SimConfig::load(&config)?;
            let set = simulate(&cfg)?;
            let mut buf = Vec::new();
            write_snapshots(&set, &mut buf)?;
            write_out(output.as_deref(), &buf)?;
        }
        Command::Stats {
            input,
            replicates,
            seed,
            length_x,
            length_y,
            output,
        } => {
            let mut domain = DomainConfig::default();
            if let Some(l) = length_x {
                domain.length_x = l;
            }
            if let Some(l) = length_y {
                domain.length_y = l;
            }
            let set = load_snapshots(&input, &domain)?;
            let doc = run_stats(&set, replicates, seed)?;
            let mut text = serde_json::to_string_pretty(&doc)?;
            text.push('\n');
            write_out(output.as_deref(), text.as_bytes())?;
        }
        Command::Report { from, to } => {
            for p in run_report(&from, to.as_deref())? {
                println!("{}", p.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(e.class())
        }
    }
}
