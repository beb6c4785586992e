use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gdt::harness::run::{records_to_csv, write_run, write_sweep};
use gdt::harness::verify::{run_verify, VerifyOptions};
use gdt::harness::{run_preset, sweep, ExperimentConfig};
use gdt::transform::ContrastTable;
use gdt::{GdtError, Result};

#[derive(Parser)]
#[command(name = "gdt", version, about = "Generalized data transformations: verification and synthetic experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the verification suites.
    Verify {
        /// One of: admissibility, counting, enumeration, variance, gradient.
        #[arg(long)]
        suite: Option<String>,
        /// Write the JSON report here.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Also check this 0/1 contrast matrix for admissibility.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Train and evaluate one preset.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for metrics, history and parameters.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate every (preset, seed) pair.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated preset names.
        #[arg(long, value_delimiter = ',', required = true)]
        presets: Vec<String>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        /// CSV output path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("GDT_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| GdtError::Usage(format!("GDT_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| GdtError::Usage(format!("cannot size the thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    configure_threads()?;
    match cli.command {
        Command::Verify { suite, json, table } => {
            let table = match table {
                Some(p) => Some(ContrastTable::parse_matrix(&std::fs::read_to_string(&p)?)?),
                None => None,
            };
            let report = run_verify(&VerifyOptions { suite, table })?;
            for s in &report.suites {
                for c in &s.checks {
                    let tag = if c.pass { "PASS" } else { "FAIL" };
                    println!("{tag} {}: {} (expected {}, observed {})", s.name, c.name, c.expected, c.observed);
                }
                if let Some(d) = &s.details {
                    println!("     {}: {d}", s.name);
                }
            }
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            if let Some(p) = json {
                std::fs::write(p, text + "\n")?;
            }
            Ok(report.pass)
        }
        Command::Train { config, preset, seed, out } => {
            let cfg = load_config(config.as_ref())?;
            let result = run_preset(&cfg, &preset, seed)?;
            write_run(&out, &result)?;
            print!("{}", records_to_csv(&[result.record]));
            Ok(true)
        }
        Command::Sweep { config, presets, seeds, out } => {
            let cfg = load_config(config.as_ref())?;
            let records = sweep(&cfg, &presets, &seeds)?;
            write_sweep(&out, &records)?;
            let failed = records.iter().filter(|r| r.error.is_some()).count();
            eprintln!("{} runs written to {} ({failed} failed)", records.len(), out.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("gdt: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
