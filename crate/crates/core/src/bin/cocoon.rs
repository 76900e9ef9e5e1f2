use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cocoon::geometry::Distance;
use cocoon::pipeline::{run, split_list, PipelineConfig, Stage};

/// Measure information cocoons in user consumption sequences.
#[derive(Parser)]
#[command(name = "cocoon", version)]
struct Cli {
    /// Flat `key = value` config file; flags override it.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    flags: Flags,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with planted stickiness.
    Synth {
        /// `cocoon` or `two_block`.
        #[arg(long)]
        preset: Option<String>,
    },
    /// Parse the event log and category tables into corpus.bin.
    Ingest,
    /// Train the user/item embedding into space.tsv.
    Train,
    /// Compute per-user cocoon metrics into metrics.csv.
    Metrics,
    /// Shuffle, retrain and record expected radii into null_ensemble/.
    Null,
    /// Paired test of observed against expected radii.
    Test,
    /// OLS of one metric on covariates into regression.csv.
    Regress {
        /// Dependent variable (a metrics.csv column).
        #[arg(long)]
        dv: Option<String>,
        /// Comma-separated independent variables.
        #[arg(long)]
        iv: Option<String>,
    },
    /// Aggregate metrics, test and regression into summary.json.
    Report,
}

#[derive(Args)]
struct Flags {
    /// Output directory shared by all stages.
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    events: Option<PathBuf>,
    #[arg(long, global = true)]
    categories: Option<PathBuf>,
    #[arg(long, global = true)]
    genres: Option<PathBuf>,
    #[arg(long, global = true)]
    covariates: Option<PathBuf>,
    #[arg(long, global = true)]
    dim: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    min_count: Option<u64>,
    #[arg(long, global = true)]
    negative: Option<usize>,
    #[arg(long, global = true)]
    window: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Null-model repetitions.
    #[arg(long, global = true)]
    reps: Option<usize>,
    #[arg(long, global = true, value_parser = ["euclidean", "cosine"])]
    distance: Option<String>,
    /// Restrict item-level extremes to items each user consumed.
    #[arg(long, global = true)]
    consumed_only: bool,
}

fn configure(cli: &Cli) -> cocoon::Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    config.apply_env()?;
    let f = &cli.flags;
    if let Some(v) = &f.out {
        config.output_dir = v.clone();
    }
    for (slot, v) in [
        (&mut config.events, &f.events),
        (&mut config.categories, &f.categories),
        (&mut config.genres, &f.genres),
        (&mut config.covariates, &f.covariates),
    ] {
        if v.is_some() {
            *slot = v.clone();
        }
    }
    let t = &mut config.training;
    t.dim = f.dim.unwrap_or(t.dim);
    t.epochs = f.epochs.unwrap_or(t.epochs);
    t.min_count = f.min_count.unwrap_or(t.min_count);
    t.negative = f.negative.unwrap_or(t.negative);
    t.window = f.window.unwrap_or(t.window);
    t.seed = f.seed.unwrap_or(t.seed);
    t.workers = f.workers.unwrap_or(t.workers);
    config.reps = f.reps.unwrap_or(config.reps);
    if let Some(d) = &f.distance {
        config.distance = d.parse::<Distance>()?;
    }
    config.consumed_only |= f.consumed_only;
    match &cli.command {
        Command::Synth { preset: Some(p) } => config.synth_preset = p.parse()?,
        Command::Regress { dv, iv } => {
            if let Some(dv) = dv {
                config.dv = dv.clone();
            }
            if let Some(iv) = iv {
                config.iv = split_list(iv);
            }
        }
        _ => {}
    }
    Ok(config)
}

fn stage(command: &Command) -> Stage {
    match command {
        Command::Synth { .. } => Stage::Synth,
        Command::Ingest => Stage::Ingest,
        Command::Train => Stage::Train,
        Command::Metrics => Stage::Metrics,
        Command::Null => Stage::Null,
        Command::Test => Stage::Test,
        Command::Regress { .. } => Stage::Regress,
        Command::Report => Stage::Report,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure(&cli).and_then(|config| run(stage(&cli.command), &config));
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("cocoon: {e}");
            ExitCode::FAILURE
        }
    }
}
