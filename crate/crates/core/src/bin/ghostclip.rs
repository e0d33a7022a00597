use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ghostclip::accountant::{Conversion, PrivacyBudget, SamplingPlan};
use ghostclip::alloc::CountingAlloc;
use ghostclip::clipping::ClippingMode;
use ghostclip::harness::{
    acct, bench, gen_synthetic_task, snr_sweep, train, BenchConfig, BenchDims, CsvTable, RunConfig,
};
use ghostclip::{Error, Result};

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

#[derive(Parser, Debug)]
#[command(
    name = "ghostclip",
    version,
    about = "Private training with per-example clipping, accounting and memory benchmarks"
)]
struct Cli {
    /// Run configuration (flat key = value file).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Clipping mode for train and snr-sweep.
    #[arg(long, global = true)]
    mode: Option<ClippingMode>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train at a fixed privacy budget and write per-step metrics.
    Train {
        /// Extra `key=value` settings applied after the config file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Train across sampling rates at a fixed number of updates.
    SnrSweep {
        #[arg(long, value_delimiter = ',', default_value = "0.002,0.01,0.05,0.2")]
        q_grid: Vec<f64>,
        #[arg(long, default_value_t = 200)]
        steps: u64,
        /// Number of seeds, starting at --seed.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Max batch under a memory budget and throughput for every mode.
    Bench {
        /// Budget in 64-bit reals.
        #[arg(long, default_value_t = 1 << 23)]
        budget: usize,
        /// Model shapes as V:p:T[:K], comma separated.
        #[arg(long, value_delimiter = ',')]
        dims: Vec<BenchDims>,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long)]
        no_timing: bool,
    },
    /// Privacy accountant queries.
    Accountant {
        #[command(subcommand)]
        query: Query,
    },
    /// Write the synthetic dataset described by the config.
    GenData,
}

#[derive(Args, Debug)]
struct PlanArgs {
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    steps: Option<u64>,
    /// Dataset size; with --batch and --epochs instead of --q and --steps.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<u64>,
}

impl PlanArgs {
    fn plan(&self) -> Result<SamplingPlan> {
        match (self.q, self.steps, self.n, self.batch, self.epochs) {
            (Some(q), Some(s), None, None, None) => SamplingPlan::new(q, s),
            (None, None, Some(n), Some(b), Some(e)) => SamplingPlan::from_dataset(n, b, e),
            _ => Err(Error::Parameter(
                "give either --q and --steps, or --n, --batch and --epochs".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Subcommand, Debug)]
enum Query {
    /// ε spent at a given noise multiplier.
    Epsilon {
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        delta: f64,
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long, default_value = "classic")]
        conversion: Conversion,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Smallest noise multiplier for a budget.
    Sigma {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long, default_value = "classic")]
        conversion: Conversion,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Calibrated σ against the square-root rule over q = 2^-k.
    Sweep {
        #[arg(long, default_value_t = 3.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
        #[arg(long, default_value_t = 50)]
        epochs: u64,
        #[arg(long, default_value_t = 12)]
        max_exp: i32,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
}

fn load_config(cli: &Cli, set: &[String]) -> Result<RunConfig> {
    let cfg = build_config(cli, set)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Config file, then `--set`, then the global flags. Not validated.
fn build_config(cli: &Cli, set: &[String]) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for kv in set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Parameter(format!("--set expects key=value, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim()).map_err(Error::Parameter)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(m) = cli.mode {
        cfg.mode = m;
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    Ok(cfg)
}

fn emit(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn render(table: &CsvTable, format: Format) -> String {
    match format {
        Format::Text => table.to_text(),
        Format::Csv => table.to_csv(),
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train { set } => {
            let cfg = load_config(cli, set)?;
            let run = train(&cfg)?;
            emit(cfg.out.as_ref(), &run.table.to_csv())
        }
        Command::SnrSweep {
            q_grid,
            steps,
            seeds,
            set,
        } => {
            let cfg = load_config(cli, set)?;
            let seeds: Vec<u64> = (0..*seeds).map(|i| cfg.seed + i).collect();
            let sweep = snr_sweep(&cfg, q_grid, *steps, &seeds)?;
            emit(cfg.out.as_ref(), &sweep.table.to_csv())
        }
        Command::Bench {
            budget,
            dims,
            reps,
            no_timing,
        } => {
            let mut cfg = BenchConfig {
                float_budget: *budget,
                timing_reps: *reps,
                skip_timing: *no_timing,
                seed: cli.seed.unwrap_or(0),
                ..BenchConfig::default()
            };
            if !dims.is_empty() {
                cfg.dims = dims.clone();
            }
            emit(cli.out.as_ref(), &bench(&cfg)?.table.to_csv())
        }
        Command::Accountant { query } => {
            let (table, format) = match query {
                Query::Epsilon {
                    sigma,
                    delta,
                    plan,
                    conversion,
                    format,
                } => (acct::epsilon_table(*sigma, plan.plan()?, *delta, *conversion)?, *format),
                Query::Sigma {
                    epsilon,
                    delta,
                    plan,
                    conversion,
                    format,
                } => (
                    acct::sigma_table(PrivacyBudget::new(*epsilon, *delta)?, plan.plan()?, *conversion)?,
                    *format,
                ),
                Query::Sweep {
                    epsilon,
                    delta,
                    epochs,
                    max_exp,
                    format,
                } => (
                    acct::sweep_table(PrivacyBudget::new(*epsilon, *delta)?, *epochs, *max_exp)?,
                    *format,
                ),
            };
            emit(cli.out.as_ref(), &render(&table, format))
        }
        Command::GenData => {
            let mut cfg = build_config(cli, &[])?;
            if let Some(s) = cli.seed {
                cfg.task.task_seed = s;
            }
            emit(cfg.out.as_ref(), &gen_synthetic_task(&cfg.task)?.to_csv())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
