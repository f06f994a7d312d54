//! `hecg` command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hecg::harness::{self, EXIT_OK, EXIT_USAGE};
use hecg::{report, ExperimentConfig, HarnessError, RunOptions};
use hecg_core::Variant;

#[derive(Parser)]
#[command(name = "hecg", version, about = "Run plan-execution experiments on the simulated household")]
struct Cli {
    /// Experiment config (JSON); defaults to the built-in suite with one seed.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the config's seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Episodes run in parallel.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Use the stub planner and scorer whenever an LLM backend fails.
    #[arg(long, global = true)]
    fallback_stub: bool,
    /// Trajectory memory to load before running.
    #[arg(long, global = true)]
    memory_in: Option<PathBuf>,
    /// Where to save the trajectory memory after running.
    #[arg(long, global = true)]
    memory_out: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every scenario for every seed and write logs, report and manifest.
    Run {
        /// Policy variant (full, no_value, no_cost, no_risk, no_llm).
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        /// Prompt on the terminal at L4 escalations instead of aborting.
        #[arg(long)]
        interactive: bool,
    },
    /// Compare policy variants on identical scenarios and seeds.
    Ablate {
        /// Comma-separated variants; overrides the config's list.
        #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
        variants: Vec<Variant>,
    },
    /// Run once per threshold scale.
    Sweep {
        /// Comma-separated scales; overrides the config's list.
        #[arg(long, value_delimiter = ',')]
        scales: Vec<f64>,
    },
    /// Rebuild the report of a run directory from its logs.
    Report {
        /// Run directory; defaults to --out.
        dir: Option<PathBuf>,
    },
    /// Check the config and the initial graph of every scenario.
    Validate,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::from_name(s).ok_or_else(|| format!("unknown variant {s:?}"))
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
        cfg.repetitions = None;
    }
    if let Some(p) = &cli.memory_in {
        cfg.memory_in = Some(p.clone());
    }
    if let Some(p) = &cli.memory_out {
        cfg.memory_out = Some(p.clone());
    }
    if let Some(p) = &cli.out {
        cfg.out_dir = p.clone();
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<i32, HarnessError> {
    let mut cfg = load_config(&cli)?;
    let mut opts = RunOptions { jobs: cli.jobs, fallback_stub: cli.fallback_stub, interactive: false };
    match cli.command {
        Command::Run { variant, interactive } => {
            if let Some(v) = variant {
                cfg.variant = v;
            }
            opts.interactive = interactive;
            let run = harness::cmd_run(&cfg, &opts)?;
            print!("{}", report::text_report(&run.report));
            println!("\n{} episodes, {} failures; written to {}", run.results.len(), run.failures(), run.dir.display());
            Ok(run.exit_code())
        }
        Command::Ablate { variants } => {
            if !variants.is_empty() {
                cfg.variants = variants;
            }
            let a = harness::cmd_ablate(&cfg, &opts)?;
            print!("{}", report::ablation_text(&a.rows));
            Ok(a.exit_code())
        }
        Command::Sweep { scales } => {
            if !scales.is_empty() {
                cfg.epsilon_scales = scales;
            }
            let s = harness::cmd_sweep(&cfg, &opts)?;
            print!("{}", report::sweep_text(&s.rows));
            Ok(s.exit_code())
        }
        Command::Report { dir } => {
            let dir = dir.unwrap_or(cfg.out_dir);
            let r = harness::cmd_report(&dir)?;
            print!("{}", report::text_report(&r));
            Ok(EXIT_OK)
        }
        Command::Validate => {
            for line in harness::cmd_validate(&cfg, &opts)? {
                println!("{line}");
            }
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match dispatch(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    debug_assert!((0..=EXIT_USAGE).contains(&code));
    ExitCode::from(code as u8)
}
