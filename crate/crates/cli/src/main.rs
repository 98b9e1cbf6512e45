use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crystens::cgraph::AtomFeatureSource;
use crystens::ensemble::Strategy;
use crystens::evalrep::{Direction, Report};
use crystens::run::{self, CheckpointSel, RunConfig, RunDir, SplitName};
use crystens::structio::{import_mp_dump, write_dataset, ImportMode};
use crystens::{toy, Error, ErrorKind, Result};

/// Train crystal-graph convolutional networks and ensemble their checkpoints.
#[derive(Parser)]
#[command(name = "crystens", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a run directory.
    Train(Box<TrainArgs>),
    /// Score one checkpoint of a run.
    Evaluate {
        run: PathBuf,
        #[arg(long, default_value = "best")]
        checkpoint: String,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Ensemble the top-n checkpoints and compare against the best one.
    Ensemble {
        run: PathBuf,
        #[arg(long)]
        top_n: Option<usize>,
        #[arg(long, value_enum, default_value_t = StrategyArg::Prediction)]
        strategy: StrategyArg,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Test MAE as a function of ensemble size.
    Sweep {
        run: PathBuf,
        #[arg(long)]
        max_n: Option<usize>,
        #[arg(long, value_enum, default_value_t = SweepStrategy::Both)]
        strategy: SweepStrategy,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// MAE inside cumulative percentile bands of the target distribution.
    Bands {
        run: PathBuf,
        #[arg(long)]
        top_n: Option<usize>,
        #[arg(long, value_enum, default_value_t = StrategyArg::Prediction)]
        strategy: StrategyArg,
        #[arg(long, value_enum, default_value_t = DirectionArg::Both)]
        directions: DirectionArg,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Convert a local Materials Project JSON dump into a dataset directory.
    Import {
        #[arg(long)]
        mp_dump: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep records that lack some properties.
        #[arg(long)]
        permissive: bool,
    },
    /// Write a synthetic dataset.
    MakeToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 300)]
        n: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// JSON run config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Comma-separated property names.
    #[arg(long, value_delimiter = ',')]
    tasks: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    task_weights: Option<Vec<f64>>,
    #[arg(long)]
    n_conv: Option<usize>,
    #[arg(long)]
    d_atom: Option<usize>,
    #[arg(long)]
    d_hidden: Option<usize>,
    /// Sets the init, shuffle and split seeds together.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    init_seed: Option<u64>,
    #[arg(long)]
    train_seed: Option<u64>,
    #[arg(long)]
    split_seed: Option<u64>,
    /// Reuse an existing splits.json.
    #[arg(long)]
    split_file: Option<PathBuf>,
    #[arg(long)]
    cutoff: Option<f64>,
    #[arg(long)]
    max_neighbors: Option<usize>,
    /// JSON map from atomic number to feature vector.
    #[arg(long)]
    atom_features: Option<PathBuf>,
    #[arg(long)]
    top_n: Option<usize>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for SplitName {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => SplitName::Train,
            SplitArg::Val => SplitName::Val,
            SplitArg::Test => SplitName::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Prediction,
    Model,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Prediction => Strategy::Prediction,
            StrategyArg::Model => Strategy::Model,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepStrategy {
    Prediction,
    Model,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    TopBottom,
    BottomTop,
    Both,
}

fn build_config(a: TrainArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = a.data {
        cfg.data = v;
    }
    if let Some(v) = a.out {
        cfg.out = v;
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = a.tasks {
        if v != cfg.arch.tasks {
            // weights and ensemble size follow the task count unless given
            cfg.train.task_weights = None;
            cfg.ensemble.top_n = None;
        }
        cfg.arch.tasks = v;
    }
    if let Some(v) = a.task_weights {
        cfg.train.task_weights = Some(v);
    }
    if let Some(v) = a.n_conv {
        cfg.arch.n_conv = v;
    }
    if let Some(v) = a.d_atom {
        cfg.arch.d_atom = v;
    }
    if let Some(v) = a.d_hidden {
        cfg.arch.d_hidden = v;
    }
    if let Some(v) = a.seed {
        cfg.arch.seed = v;
        cfg.train.seed = v;
        cfg.split.seed = v;
    }
    if let Some(v) = a.init_seed {
        cfg.arch.seed = v;
    }
    if let Some(v) = a.train_seed {
        cfg.train.seed = v;
    }
    if let Some(v) = a.split_seed {
        cfg.split.seed = v;
    }
    if let Some(v) = a.split_file {
        cfg.split.file = Some(v);
    }
    if let Some(v) = a.cutoff {
        cfg.graph.cutoff = v;
    }
    if let Some(v) = a.max_neighbors {
        cfg.graph.max_neighbors = v;
    }
    if let Some(v) = a.atom_features {
        cfg.graph.atom_feat_source = AtomFeatureSource::FeatureFile(v);
    }
    if let Some(v) = a.top_n {
        cfg.ensemble.top_n = Some(v);
    }
    if let Some(v) = a.strategy {
        cfg.ensemble.strategy = v.into();
    }
    Ok(cfg)
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).unwrap_or_default());
}

fn open(run: &Path, split: SplitArg) -> Result<RunDir> {
    RunDir::open(run, split.into())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = build_config(*args)?;
            let out = cfg.out.clone();
            let log = run::cmd_train(&cfg)?;
            let best = log
                .rows
                .iter()
                .min_by(|a, b| {
                    a.val
                        .weighted
                        .total_cmp(&b.val.weighted)
                        .then(a.epoch.cmp(&b.epoch))
                })
                .ok_or_else(|| Error::InvalidInput("no epochs trained".into()))?;
            println!(
                "wrote {} checkpoints to {}; best epoch {} (val_mse {:.6})",
                log.checkpoints.len(),
                out.display(),
                best.epoch,
                best.val.weighted
            );
        }
        Command::Evaluate {
            run,
            checkpoint,
            split,
        } => {
            let dir = open(&run, split)?;
            let out = run::cmd_evaluate(&dir, checkpoint.parse::<CheckpointSel>()?)?;
            for (t, m) in out.result.tasks.iter().zip(&out.result.mae) {
                println!(
                    "{t}: mae {m} (epoch {}, n={})",
                    out.epoch, out.result.n_test
                );
            }
            println!("predictions: {}", out.predictions.display());
        }
        Command::Ensemble {
            run,
            top_n,
            strategy,
            split,
        } => {
            let dir = open(&run, split)?;
            let out = run::cmd_ensemble(&dir, top_n, strategy.into())?;
            print_json(&out.summary.as_slice().to_json());
            println!("predictions: {}", out.predictions.display());
        }
        Command::Sweep {
            run,
            max_n,
            strategy,
            split,
        } => {
            let dir = open(&run, split)?;
            let strategies = match strategy {
                SweepStrategy::Prediction => vec![Strategy::Prediction],
                SweepStrategy::Model => vec![Strategy::Model],
                SweepStrategy::Both => vec![Strategy::Prediction, Strategy::Model],
            };
            let (_, path) = run::cmd_sweep(&dir, max_n, &strategies)?;
            println!("sweep: {}", path.display());
        }
        Command::Bands {
            run,
            top_n,
            strategy,
            directions,
            split,
        } => {
            let dir = open(&run, split)?;
            let dirs = match directions {
                DirectionArg::TopBottom => vec![Direction::TopBottom],
                DirectionArg::BottomTop => vec![Direction::BottomTop],
                DirectionArg::Both => vec![Direction::TopBottom, Direction::BottomTop],
            };
            let (_, path) = run::cmd_bands(&dir, top_n, strategy.into(), &dirs)?;
            println!("bands: {}", path.display());
        }
        Command::Import {
            mp_dump,
            out,
            permissive,
        } => {
            let mode = if permissive {
                ImportMode::Permissive
            } else {
                ImportMode::Complete
            };
            let s = import_mp_dump(&mp_dump, &out, mode)?;
            println!(
                "wrote {} structures to {} (skipped {} incomplete, {} invalid)",
                s.written,
                out.display(),
                s.skipped_incomplete,
                s.skipped_invalid
            );
        }
        Command::MakeToy { out, n, seed } => {
            write_dataset(&toy::generate(n, seed), &out)?;
            println!("wrote {n} structures to {}", out.display());
        }
    }
    Ok(())
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
        ErrorKind::Io => 5,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Ok(v) = std::env::var("CRYSTENS_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                {
                    log::warn!("could not size thread pool: {e}");
                }
            }
            _ => {
                eprintln!("error: CRYSTENS_THREADS must be a positive integer, got `{v}`");
                return ExitCode::from(2);
            }
        }
    }
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
