use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use adaclip::accountant::{solve_sigma, AccountantKind};
use adaclip_cli::config::ExperimentSpec;
use adaclip_cli::experiments::run_experiment;
use adaclip_cli::output::write_all;
use adaclip_cli::{verify, CliError};

#[derive(Parser)]
#[command(name = "adaclip", version, about = "Differentially private SGD experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a spec file.
    Run {
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print the noise multiplier meeting an (eps, delta) budget.
    Calibrate {
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        q: f64,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value = "rdp")]
        accountant: AccountantKind,
    },
    /// Run the built-in optimality and calibration checks.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { spec, out, seed, threads } => {
            if let Some(k) = threads {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(k)
                    .build_global()
                    .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
            }
            let mut spec = ExperimentSpec::from_file(&spec)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            if let Some(dir) = out {
                spec.output = dir;
            }
            let output = run_experiment(&spec)?;
            for path in write_all(&spec.output, &output.tables, &output.files)? {
                println!("wrote {}", path.display());
            }
            if output.failures > 0 {
                return Err(CliError::RunsFailed(output.failures));
            }
            Ok(())
        }
        Command::Calibrate { eps, delta, q, steps, accountant } => {
            println!("{}", solve_sigma(eps, delta, q, steps, accountant)?);
            Ok(())
        }
        Command::Verify { seed } => {
            let checks = verify::run_all(seed);
            for c in &checks {
                println!("{}", c.line());
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                return Err(CliError::RunsFailed(failed));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("adaclip: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
