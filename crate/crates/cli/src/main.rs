//! `respicast` — weekly regional hospital-discharge forecasting from
//! climate-extremes indices and lagged aerosol optical depth.
//!
//! Single binary, subcommand per stage: generate a synthetic dataset,
//! sanity-check the inputs, dump design matrices, cross-correlate a
//! covariate against the target, grid-search hyperparameters, run the
//! full forecasting protocol, or summarize a finished run. Exit codes
//! are stable: 0 on success, 1 when the computation itself fails, 2 for
//! input or configuration problems.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use respicast_core::config::{load_config, Overrides, RunConfig};
use respicast_core::error::Result;
use respicast_core::metrics::RatioConvention;
use respicast_core::runner;
use respicast_core::synth::SyntheticSpec;

#[derive(Parser)]
#[command(
    name = "respicast",
    version,
    about = "Forecast weekly regional hospital discharges from climate extremes and aerosol optical depth"
)]
struct Cli {
    /// Run configuration file.
    #[arg(long, global = true, default_value = "run.conf")]
    config: PathBuf,

    /// Worker threads for region-parallel stages (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    /// Override the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the configured interval miscoverage level.
    #[arg(long, global = true)]
    alpha: Option<f64>,

    /// Override the relative-ratio convention used in reports.
    #[arg(long, global = true, value_enum)]
    convention: Option<ConventionArg>,

    /// Override the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, ValueEnum)]
enum ConventionArg {
    /// Relative scores as percentages, 100·train/test.
    Table,
    /// Relative scores as plain ratios, test/train.
    Text,
}

impl From<ConventionArg> for RatioConvention {
    fn from(value: ConventionArg) -> Self {
        match value {
            ConventionArg::Table => RatioConvention::Table,
            ConventionArg::Text => RatioConvention::Text,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset plus a ready-to-run config file.
    GenerateSynthetic(GenerateArgs),
    /// Validate the input files and print per-region coverage.
    IngestCheck,
    /// Write each region's design matrix under <out>/features/.
    Features,
    /// Cross-correlate one covariate against discharges at every lag.
    Ccf {
        /// Design-matrix column name, e.g. `aerosol_10` or `tmax_mean_mean`.
        covariate: String,
    },
    /// Grid-search hyperparameters and record each region's winners.
    Tune,
    /// Fit, forecast, evaluate, and attribute every region.
    Run,
    /// Print a text summary of a finished run's artifacts.
    Report,
}

#[derive(Args)]
struct GenerateArgs {
    /// Directory the dataset and its run.conf are written into.
    #[arg(long, default_value = "synthetic")]
    dir: PathBuf,

    #[arg(long, default_value_t = 7)]
    regions: usize,

    /// Grid cells per region.
    #[arg(long, default_value_t = 4)]
    cells: usize,

    /// Aerosol monitoring sites.
    #[arg(long, default_value_t = 12)]
    sites: usize,

    #[arg(long, default_value_t = 2001)]
    start_year: i32,

    #[arg(long, default_value_t = 2019)]
    end_year: i32,

    /// Standard deviation of weekly discharge noise, in counts.
    #[arg(long, default_value_t = 3.0)]
    noise: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();

    if cli.jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
        {
            eprintln!("error: could not size the worker pool: {e}");
            return ExitCode::FAILURE;
        }
    }

    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

/// Loads the config file and applies flag overrides.
fn configured(cli: &Cli) -> Result<RunConfig> {
    let mut config = load_config(&cli.config)?;
    config.apply(&Overrides {
        seed: cli.seed,
        alpha: cli.alpha,
        convention: cli.convention.map(RatioConvention::from),
        out: cli.out.clone(),
    });
    // Flag values go through the same checks as file values.
    config.validate()?;
    Ok(config)
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenerateSynthetic(args) => {
            let spec = SyntheticSpec {
                n_regions: args.regions,
                n_cells_per_region: args.cells,
                n_aod_sites: args.sites,
                start_year: args.start_year,
                end_year: args.end_year,
                seed: cli.seed.unwrap_or(42),
                noise_scale: args.noise,
                ..SyntheticSpec::default()
            };
            for path in runner::cmd_generate_synthetic(&spec, &args.dir)? {
                println!("{}", path.display());
            }
        }
        Command::IngestCheck => {
            let summary = runner::cmd_ingest_check(&configured(cli)?)?;
            print!("{summary}");
        }
        Command::Features => {
            for path in runner::cmd_features(&configured(cli)?)? {
                println!("{}", path.display());
            }
        }
        Command::Ccf { covariate } => {
            let config = configured(cli)?;
            let rows = runner::cmd_ccf(&config, covariate)?;
            for row in rows.iter().filter(|r| r.selected) {
                println!("{}: lag {} (r = {:+.3})", row.region, row.lag, row.r);
            }
            let file = format!("ccf_{}.csv", covariate.replace(['/', '\\'], "_"));
            println!("wrote {}", config.out_dir.join(file).display());
        }
        Command::Tune => {
            let config = configured(cli)?;
            let chosen = runner::cmd_tune(&config)?;
            for (region, methods) in &chosen {
                for (method, bundle) in methods {
                    let detail = serde_json::to_string(bundle)
                        .unwrap_or_else(|e| format!("<unprintable: {e}>"));
                    println!("{region} {method}: {detail}");
                }
            }
            println!(
                "wrote {}",
                config.out_dir.join("hyperparameters.json").display()
            );
        }
        Command::Run => {
            let config = configured(cli)?;
            let artifacts = runner::cmd_run(&config)?;
            for evaluation in &artifacts.evaluations {
                let winner = evaluation
                    .rows
                    .iter()
                    .find(|r| r.selected)
                    .map(|r| r.method.as_str())
                    .unwrap_or("-");
                let tag = if evaluation.relaxed { " (relaxed)" } else { "" };
                println!("{}: selected {winner}{tag}", evaluation.region_id);
            }
            for path in &artifacts.written {
                println!("wrote {}", path.display());
            }
        }
        Command::Report => {
            print!("{}", runner::cmd_report(&configured(cli)?)?);
        }
    }
    Ok(())
}
