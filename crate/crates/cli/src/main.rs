use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fairfl_cli::commands::{
    cmd_bounds, cmd_finetune, cmd_partition_stats, cmd_pf_compare, cmd_run,
};
use fairfl_cli::verify::run_suites;
use fairfl_cli::{CliError, GlobalOpts};

#[derive(Parser)]
#[command(
    name = "fairfl",
    version,
    about = "Fair federated learning experiments"
)]
struct Cli {
    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run only the seed at this position of `seeds`.
    #[arg(long, global = true)]
    seed_index: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a configuration.
    Run { config: PathBuf },
    /// Train starting from a saved checkpoint.
    Finetune {
        config: PathBuf,
        #[arg(long)]
        init: PathBuf,
    },
    /// Proportional-fairness report of OTHER against BASE.
    PfCompare { base: PathBuf, other: PathBuf },
    /// Estimate smoothness and variance constants and the step-size bounds.
    Bounds { config: PathBuf },
    /// Run the invariant suites.
    Verify {
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Client sizes and label skew of the generated partitions.
    PartitionStats {
        config: PathBuf,
        /// Also write each dataset as CSV with a manifest.
        #[arg(long)]
        export: bool,
    },
}

fn verify(fault: Option<&str>) -> Result<(), CliError> {
    let names = fairfl_cli::verify::suite_names();
    if let Some(f) = fault {
        if !names.contains(&f) {
            return Err(CliError::Usage(format!(
                "unknown suite {f}; known: {}",
                names.join(", ")
            )));
        }
    }
    let mut failed = Vec::new();
    for r in run_suites(fault) {
        match r.outcome {
            Ok(()) => emit(format!("ok      {}", r.name)),
            Err(msg) => {
                emit(format!("FAILED  {}: {msg}", r.name));
                failed.push(r.name.to_string());
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verify(failed))
    }
}

// a closed pipe on stdout is not an error
fn emit(line: impl std::fmt::Display) {
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let opts = GlobalOpts {
        out: cli.out,
        seed_index: cli.seed_index,
    };
    match cli.command {
        Command::Run { config } => {
            let out = cmd_run(&config, &opts)?;
            emit(out.out_dir.display());
        }
        Command::Finetune { config, init } => {
            let out = cmd_finetune(&config, &init, &opts)?;
            emit(out.out_dir.display());
        }
        Command::PfCompare { base, other } => {
            emit(cmd_pf_compare(&base, &other, &opts)?.display());
        }
        Command::Bounds { config } => {
            emit(cmd_bounds(&config, &opts)?.display());
        }
        Command::Verify { inject_fault } => verify(inject_fault.as_deref())?,
        Command::PartitionStats { config, export } => {
            let stats = cmd_partition_stats(&config, &opts, export)?;
            emit(serde_json::to_string_pretty(&stats).expect("json value serializes"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
