use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use rom_uq::config::PipelineConfig;
use rom_uq::pipeline::{self, PipelineError};

#[derive(Parser)]
#[command(name = "rom-uq", version, about = "Reduced-order lift surrogate and PCE uncertainty quantification")]
struct Cli {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sample-level parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Override the output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Training campaign, POD, supremizers and reduced operators.
    Offline,
    /// Reduced solves at query points (default: replay the training set).
    Online {
        /// CSV with alpha_deg,speed and optional cl_fom columns.
        #[arg(long)]
        queries: Option<PathBuf>,
    },
    /// Gaussian campaign with FOM, ROM and PCE comparison.
    Uq,
    /// Recompute and print the comparison table from stored predictions.
    Report,
    /// Print the effective configuration as TOML.
    PrintConfig,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).map_err(PipelineError::Config)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.output_dir {
        cfg.output_dir = d.clone();
    }
    cfg.validate().map_err(PipelineError::Config)?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::PrintConfig => print!("{}", cfg.to_toml()),
        Command::Offline => {
            let s = pipeline::run_offline(&cfg, cli.jobs)?;
            println!(
                "offline: {}/{} samples converged, excluded {:?}; n_u={} n_p={} n_sup={}; artifacts in {}",
                s.converged,
                s.samples,
                s.excluded,
                s.n_u,
                s.n_p,
                s.n_sup,
                s.dir.display()
            );
        }
        Command::Online { queries } => {
            let q = queries.as_deref().map(pipeline::read_queries).transpose()?;
            let r = pipeline::run_online(&cfg, cli.jobs, q)?;
            let flagged = r.rows.iter().filter(|r| r.extrapolated).count();
            let failed = r.rows.iter().filter(|r| !r.converged).count();
            println!("online: {} queries, {flagged} extrapolated, {failed} not converged", r.rows.len());
            if let Some(e) = r.error_percent {
                println!("L2 relative lift error vs FOM: {e:.4}%");
            }
        }
        Command::Uq => {
            let out = pipeline::run_uq(&cfg, cli.jobs)?;
            print!("{}", out.report.to_table());
        }
        Command::Report => {
            let report = pipeline::run_report(&cfg)?;
            print!("{}", report.to_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
