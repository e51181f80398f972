use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sdeid_cli::commands::{self, ModelSource, ReliabilityOutput};
use sdeid_cli::{LoadedConfig, RunConfig};
use sdeid_core::discovery::DiscoveredSde;
use sdeid_core::{Error, ErrorClass};

#[derive(Parser)]
#[command(
    name = "sdeid",
    version,
    about = "Discover Ito SDEs from trajectory ensembles and estimate first-passage failure probabilities"
)]
struct Cli {
    /// Worker threads for simulation and regression (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Override a config value, e.g. `--set simulate.seed=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set simulate.seed=<SEED>`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; falls back to the config, then $SDEID_OUTPUT_DIR.
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured system and write the noisy ensemble.
    Simulate(Common),
    /// Discover drift and diffusion from an ensemble directory.
    Discover {
        #[command(flatten)]
        common: Common,
        /// Ensemble directory (default: <output-dir>/ensemble).
        #[arg(short, long)]
        ensemble: Option<PathBuf>,
    },
    /// First-passage failure curve of a model, optionally compared with a second.
    Reliability {
        #[command(flatten)]
        common: Common,
        /// Built-in system name or model JSON.
        #[arg(short, long)]
        model: String,
        /// Second model; writes a comparison report.
        #[arg(long)]
        compare: Option<String>,
    },
    /// simulate, discover and reliability in sequence.
    Pipeline(Common),
}

fn load(common: &Common) -> Result<(LoadedConfig, PathBuf), Error> {
    let mut overrides = common.overrides.clone();
    if let Some(s) = common.seed {
        overrides.push(format!("simulate.seed={s}"));
    }
    let cfg = RunConfig::load(&common.config, &overrides)?;
    let out = cfg.output_dir(common.output_dir.as_deref());
    Ok((cfg, out))
}

fn print_discovery(found: &DiscoveredSde) {
    for eq in &found.equations {
        let terms: Vec<String> = eq
            .posterior
            .selected
            .iter()
            .map(|&k| {
                format!(
                    "{} (pip {:.3}, w {:.6})",
                    eq.column_names[k], eq.posterior.pip[k], eq.posterior.mu_theta[k]
                )
            })
            .collect();
        let terms = if terms.is_empty() {
            "constant only".to_string()
        } else {
            terms.join(", ")
        };
        println!(
            "{}: intercept {:.6}; {}{}",
            eq.label(),
            eq.posterior.intercept,
            terms,
            if eq.posterior.converged {
                ""
            } else {
                "  [not converged]"
            }
        );
    }
    if !found.provenance.converged {
        eprintln!("warning: at least one regression hit max_iters; see `converged` in the output");
    }
}

fn print_reliability(r: &ReliabilityOutput) {
    for (i, c) in r.curves.iter().enumerate() {
        println!(
            "curve {}: pf(T) = {:.4} over {} paths ({} diverged)",
            i + 1,
            c.final_pf(),
            c.n_paths,
            c.diverged
        );
    }
    if let Some(cmp) = &r.comparison {
        println!(
            "sup_diff = {:.4}, mean_abs_diff = {:.4}",
            cmp.sup_diff, cmp.mean_abs_diff
        );
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate(common) => {
            let (cfg, out) = load(&common)?;
            let ens = commands::cmd_simulate(&cfg, &out)?;
            println!(
                "wrote {} paths x {} rows to {}",
                ens.n_paths(),
                ens.n_rows(),
                out.join(commands::ENSEMBLE_DIR).display()
            );
        }
        Command::Discover { common, ensemble } => {
            let (cfg, out) = load(&common)?;
            let dir = ensemble.unwrap_or_else(|| out.join(commands::ENSEMBLE_DIR));
            let found = commands::cmd_discover(&cfg, &dir, &out)?;
            print_discovery(&found);
            println!("wrote {}", out.join(commands::DISCOVERED_FILE).display());
        }
        Command::Reliability { common, model, compare } => {
            let (cfg, out) = load(&common)?;
            let mut models = vec![ModelSource::resolve(&model)?];
            if let Some(m) = compare {
                models.push(ModelSource::resolve(&m)?);
            }
            let r = commands::cmd_reliability(&cfg, &models, &out)?;
            print_reliability(&r);
        }
        Command::Pipeline(common) => {
            let (cfg, out) = load(&common)?;
            let report = commands::cmd_pipeline(&cfg, &out)?;
            print_discovery(&report.discovered);
            if let Some(r) = &report.reliability {
                print_reliability(r);
            }
            println!("artifacts in {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e.class() {
                ErrorClass::Config => ExitCode::from(2),
                ErrorClass::Numerical => ExitCode::from(3),
            }
        }
    }
}
