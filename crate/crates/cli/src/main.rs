use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use subvar_cli::{config::Suite, init_threads, list_models, profile_table, ScenarioConfig};
use subvar_core::analysis::hopf_nonconstancy_experiment;

#[derive(Parser)]
#[command(name = "subvar", version, about = "Metric variations preserving a Riemannian submersion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run verification suites from a scenario file
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        suite: Option<Suite>,
    },
    /// List models and their special fields
    ListModels {
        /// Probe each field's class tag numerically
        #[arg(long)]
        verify: bool,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Write the Hopf fiber profile as CSV
    Profile {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; the CSV goes to stdout when absent
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Quantity to emit (repeatable): sec-t0, sec-probe, dt-sec, h-norm
        #[arg(long)]
        quantity: Vec<String>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load(config: &std::path::Path, seed: Option<u64>) -> subvar_core::Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> subvar_core::Result<bool> {
    init_threads()?;
    match cli.command {
        Command::Run { config, out, seed, suite } => {
            let mut cfg = load(&config, seed)?;
            if let Some(s) = suite {
                cfg.suite = s;
            }
            let report = subvar_cli::run_scenario(&cfg)?;
            print!("{}", report.summary());
            let dir = out.or(cfg.output.clone()).unwrap_or_else(|| PathBuf::from("subvar-out"));
            report.write(&dir)?;
            println!("reports written to {}", dir.display());
            Ok(report.passed())
        }
        Command::ListModels { verify, seed } => {
            let (text, ok) = list_models(verify, seed)?;
            print!("{text}");
            Ok(ok)
        }
        Command::Profile { config, out, seed, quantity } => {
            let cfg = load(&config, seed)?;
            if cfg.model.id != "hopf-s7" {
                return Err(subvar_core::Error::Invalid("profile needs model id hopf-s7".into()));
            }
            let r = hopf_nonconstancy_experiment(&cfg.hopf, &cfg.analysis())?;
            let table = profile_table(&r, &quantity)?;
            match out {
                Some(dir) => {
                    let path = dir.join("fiber_profile.csv");
                    std::fs::create_dir_all(&dir).map_err(|e| subvar_core::Error::Invalid(e.to_string()))?;
                    let f = std::fs::File::create(&path).map_err(|e| subvar_core::Error::Invalid(e.to_string()))?;
                    table.write_csv(f)?;
                    println!("profile written to {}", path.display());
                }
                None => table.write_csv(std::io::stdout().lock())?,
            }
            Ok(true)
        }
    }
}
