use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bilateral_core::harness::{self, Context, ExperimentConfig, Filter, HarnessError};

/// Collect demonstrations, train sequence models, run them autonomously
/// and report.
#[derive(Parser, Debug)]
#[command(name = "bilateral", version)]
struct Cli {
    #[command(subcommand)]
    stage: Stage,
    /// TOML experiment file; defaults apply to anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for trial, training and episode jobs.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Restrict to matching cells, e.g. `scheme=S2SM,k=5,height=45,mode=fb`.
    #[arg(long, global = true)]
    filter: Option<String>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Skip jobs whose outputs already exist with a matching stamp.
    #[arg(long, global = true)]
    resume: bool,
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Stage {
    /// Run the teleoperation trials and write the dataset.
    Collect,
    /// Train every model of the grid.
    Train,
    /// Execute every (model, height, mode) episode.
    Run,
    /// Aggregate episode logs into the report files.
    Report,
    /// All four stages in order.
    All,
}

fn context(cli: &Cli) -> Result<Context, HarnessError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let mut ctx = Context::new(cfg, &cli.out);
    ctx.jobs = cli.jobs.max(1);
    ctx.resume = cli.resume;
    ctx.verbose = !cli.quiet;
    if let Some(f) = &cli.filter {
        ctx.filter = Filter::parse(f).map_err(HarnessError::Validation)?;
    }
    Ok(ctx)
}

fn execute(cli: &Cli) -> Result<(), HarnessError> {
    let ctx = context(cli)?;
    harness::write_config(&ctx)?;
    let reports = match cli.stage {
        Stage::Collect => return harness::collect(&ctx).map(drop),
        Stage::Train => return harness::train_models(&ctx),
        Stage::Run => return harness::run_episodes(&ctx),
        Stage::Report => harness::report(&ctx)?,
        Stage::All => harness::run_all(&ctx)?,
    };
    print!("{}", reports.headline);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
