use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use josnc_harness::presets::{preset, PRESETS};
use josnc_harness::{compare, run, ExperimentConfig, HarnessError, OUTPUT_DIR_ENV};

#[derive(Parser)]
#[command(name = "josnc", version, about = "Open-set noisy-label training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train per a JSON config and write metrics, checkpoint and manifest.
    Run {
        config: PathBuf,
        /// Output directory; beats the config's `output_dir`.
        #[arg(long, env = OUTPUT_DIR_ENV)]
        output_dir: Option<PathBuf>,
    },
    /// Per-epoch and last-10-epoch deltas between two run directories (B − A).
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Print a preset config.
    GenConfig {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write to a file instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run { config, output_dir } => {
            let text = std::fs::read_to_string(&config).map_err(HarnessError::io(&config))?;
            let cfg = ExperimentConfig::from_json(&text)
                .map_err(|e| HarnessError::Config(format!("{}: {e}", config.display())))?;
            let out = output_dir
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("runs").join(format!("seed{}", cfg.train.seed)));
            let outcome = run(&cfg, &out)?;
            let m = &outcome.manifest;
            println!(
                "{}: {} epochs, final test_acc {:.4}, last-10 mean {:.4}, best {:.4} (epoch {})",
                out.display(),
                m.epochs_completed,
                m.final_test_acc,
                m.last10_test_acc,
                m.best_test_acc,
                m.best_epoch
            );
            if let Some(last) = outcome.rows.last() {
                println!("final clean F1 {:.4}, OOD F1 {:.4}", last.clean_f1, last.ood_f1);
            }
        }
        Command::Compare { run_a, run_b, json } => {
            let report = compare(&run_a, &run_b)?;
            print!("{}", if json { report.to_json() } else { report.to_text() });
        }
        Command::GenConfig { preset: name, seed, output } => {
            let text = preset(&name, seed).expect("validated by clap").to_json();
            match output {
                Some(path) => std::fs::write(&path, text).map_err(HarnessError::io(&path))?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}
