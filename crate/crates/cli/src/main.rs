use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand};
use dpkip_cli::{evaluate_bundle, run_distill, run_sweep, CliError, RunConfig};
use dpkip_core::data::{load_bundle, write_class_grids};
use dpkip_core::privacy::{account, calibrate_sigma, PrivacyParams};

#[derive(Parser)]
#[command(name = "dpkip", version, about = "Differentially private kernel inducing points")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Distill a dataset as described by a JSON config.
    Distill {
        config: PathBuf,
        /// Number of independent seeds (overrides eval.seeds).
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Evaluate a saved bundle on the config's test data.
    Evaluate { bundle: PathBuf, config: PathBuf },
    /// Privacy accounting: epsilon for a given sigma, or sigma for a target epsilon.
    #[command(group(ArgGroup::new("mode").required(true).args(["sigma", "epsilon"])))]
    Account {
        #[arg(long)]
        q: f64,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        steps: u64,
    },
    /// Write per-class PGM/PPM grids of a bundle.
    ExportImages {
        bundle: PathBuf,
        /// Output directory (defaults to the bundle directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a clip-norm grid, optionally crossed with an epsilon grid.
    Sweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        clip_grid: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        epsilon_grid: Vec<f64>,
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Print a config with every default filled in.
    PrintConfig {
        /// Config to complete; the built-in default when omitted.
        config: Option<PathBuf>,
    },
}

fn load_config(path: &std::path::Path, seeds: Option<usize>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::from_file(path)?;
    if let Some(k) = seeds {
        cfg.eval.seeds = k;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Distill { config, seeds } => {
            let cfg = load_config(&config, seeds)?;
            print_json(&run_distill(&cfg)?);
        }
        Command::Evaluate { bundle, config } => {
            let cfg = load_config(&config, None)?;
            print_json(&evaluate_bundle(&bundle, &cfg)?);
        }
        Command::Account {
            q,
            sigma,
            epsilon,
            delta,
            steps,
        } => match (sigma, epsilon) {
            (Some(sigma), _) => {
                let g = account(q, sigma, steps, delta)?;
                print_json(&serde_json::json!({
                    "q": q, "sigma": sigma, "steps": steps, "delta": delta,
                    "epsilon": g.epsilon, "order": g.order,
                }));
            }
            (None, Some(epsilon)) => {
                let sigma = calibrate_sigma(PrivacyParams::new(epsilon, delta)?, q, steps)?;
                let g = account(q, sigma, steps, delta)?;
                print_json(&serde_json::json!({
                    "q": q, "sigma": sigma, "steps": steps, "delta": delta,
                    "target_epsilon": epsilon, "epsilon": g.epsilon, "order": g.order,
                }));
            }
            (None, None) => unreachable!("clap enforces one of --sigma/--epsilon"),
        },
        Command::ExportImages { bundle, out } => {
            let (ds, _) = load_bundle(&bundle)?;
            let dir = out.unwrap_or_else(|| bundle.clone());
            std::fs::create_dir_all(&dir).map_err(|source| CliError::Io {
                path: dir.clone(),
                source,
            })?;
            for p in write_class_grids(&ds, &dir)? {
                println!("{}", p.display());
            }
        }
        Command::Sweep {
            config,
            clip_grid,
            epsilon_grid,
            seeds,
        } => {
            let cfg = load_config(&config, seeds)?;
            let rows = run_sweep(&cfg, &clip_grid, &epsilon_grid)?;
            print_json(&rows);
        }
        Command::PrintConfig { config } => {
            let cfg = match config {
                Some(p) => load_config(&p, None)?,
                None => RunConfig::default(),
            };
            print_json(&cfg);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
