use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use surrogacy_cli::config::resolve_threads;
use surrogacy_cli::{cmd_fit, cmd_generate, cmd_report, cmd_simulate, CliError, RunConfig};

#[derive(Parser)]
#[command(name = "surrogacy", version, about = "Surrogate-endpoint simulation and validation workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize one study and write it as IPD CSV
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the two-stage analysis on an IPD CSV
    Fit {
        #[arg(long)]
        ipd: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a simulation grid (resumes from completed scenarios in --out)
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replications: Option<usize>,
        /// Worker threads (default: $SURROGACY_THREADS, else all cores)
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild report tables from a simulation run directory
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn load(config: Option<&PathBuf>, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load_or_default(config.map(|p| p.as_path()))?;
    if seed.is_some() {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { config, seed, out } => {
            let cfg = load(config.as_ref(), seed)?;
            let trials = cmd_generate(&cfg, &out)?;
            let rows: usize = trials.iter().map(|t| t.n()).sum();
            println!("wrote {} trials, {rows} rows to {}", trials.len(), out.display());
        }
        Command::Fit { ipd, config, seed, out } => {
            let cfg = load(config.as_ref(), seed)?;
            let a = cmd_fit(&cfg, &ipd, &out)?;
            let e = &a.estimates;
            println!(
                "theta {:.3} ({:.3}, {:.3})",
                e.global_or.est,
                e.global_or.interval.map_or(f64::NAN, |i| i.0),
                e.global_or.interval.map_or(f64::NAN, |i| i.1)
            );
            for (name, r) in [
                ("r2_copula", &a.trial_level.r2_copula),
                ("r2_wls", &a.trial_level.r2_wls),
                ("r2_adj", &a.trial_level.r2_adj),
            ] {
                println!("{name} {:.3} ({:.3}, {:.3})", r.est, r.interval.lower, r.interval.upper);
            }
            println!("verdict {}", a.verdict.class);
        }
        Command::Simulate {
            config,
            seed,
            replications,
            threads,
            out,
        } => {
            let mut cfg = load(config.as_ref(), seed)?;
            if let Some(r) = replications {
                cfg.simulate.replications = r;
            }
            let threads = resolve_threads(threads)?;
            let o = cmd_simulate(&cfg, &out, threads)?;
            let failed: usize = o.results.iter().map(|r| r.failures()).sum();
            println!(
                "{} scenarios ({} resumed), {failed} failed replicates; reports in {}",
                o.results.len(),
                o.resumed,
                out.display()
            );
        }
        Command::Report { run } => {
            cmd_report(&run)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
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
