//! Command-line entry point: data generation, training, forecasting,
//! evaluation, and latency benchmarking as reproducible seeded runs.
//!
//! Flags override config-file values; the effective merged configuration is
//! echoed into every report. `ANYPOSE_LOG={error|warn|info|debug}` controls
//! verbosity. Output files are written atomically, so a failed run leaves no
//! partial outputs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use anypose::bench::{run_bench, BenchConfig, Strategy};
use anypose::data::{
    generate_dataset, load_dataset_dir, load_sequence_csv, save_dataset_dir, sequence_to_csv,
    SpecFamily,
};
use anypose::eval::{evaluate, EvalReport, ZeroVelocity};
use anypose::model::{AnyPoseModel, OdeOrder};
use anypose::pose::{PoseSequence, TimeGrid};
use anypose::train::{train, TrainConfig};
use anypose::util::write_atomic;
use anypose::{Error, Result};

#[derive(Parser)]
#[command(
    name = "anypose",
    about = "Continuous-time pose forecasting: train neural ODE dynamics and query poses at any real-valued future time",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic kinematic dataset (CSV files + split manifest).
    GenData(GenDataArgs),
    /// Train a forecaster on a generated dataset directory.
    Train(TrainArgs),
    /// Forecast poses at arbitrary future times from an observed sequence.
    Forecast(ForecastArgs),
    /// Per-horizon MPJPE table of a checkpoint on a dataset's test split.
    Eval(EvalArgs),
    /// Latency benchmark: anytime queries vs. dense-predict-then-interpolate.
    Bench(BenchArgs),
}

#[derive(Args, Default)]
struct CommonArgs {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every stochastic component of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

/// Optional config file: any section may be partial or absent.
#[derive(Default, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    n_sequences: Option<usize>,
    family: Option<SpecFamily>,
    train: Option<TrainConfig>,
    eval_grid_sec: Option<Vec<f64>>,
    window_start_idx: Option<usize>,
    bench: Option<BenchConfig>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                Ok(serde_json::from_str(&text)?)
            }
        }
    }
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of joints per pose.
    #[arg(long)]
    m_joints: Option<usize>,
    /// Number of sequences (split 80/10/10).
    #[arg(long)]
    n: Option<usize>,
    /// Frame interval in seconds.
    #[arg(long)]
    frame_interval: Option<f64>,
    /// Sequence duration in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dataset directory written by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Model order: 1 (velocity dynamics) or 2 (acceleration dynamics).
    #[arg(long)]
    order: u8,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Hidden layer widths, comma separated (e.g. 128,128).
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// Fixed RK4 step for training solves, seconds.
    #[arg(long)]
    solver_step: Option<f64>,
    /// Epochs without validation improvement before stopping (0 = never).
    #[arg(long)]
    patience: Option<usize>,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Training report JSON path.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ForecastArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint path.
    #[arg(long)]
    model: PathBuf,
    /// Observed pose sequence CSV.
    #[arg(long)]
    observed: PathBuf,
    /// Query times in seconds after the last observed pose (any real
    /// values, e.g. 0.137,0.5,0.93).
    #[arg(long, value_delimiter = ',', required = true)]
    at: Vec<f64>,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    model: PathBuf,
    /// Dataset directory; the test split is evaluated.
    #[arg(long)]
    data: PathBuf,
    /// Horizon grid in seconds, comma separated.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    /// Index of the last observed pose of each evaluation window.
    #[arg(long)]
    window_start: Option<usize>,
    /// Report JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    model: PathBuf,
    /// Observed pose sequence CSV supplying the query context.
    #[arg(long)]
    observed: PathBuf,
    #[arg(long)]
    n_queries: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    warmup: Option<usize>,
    /// Dense baseline grid step, seconds.
    #[arg(long)]
    dense_step: Option<f64>,
    /// Strategies to measure, comma separated (default: all).
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<String>>,
    /// Report JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new()
            .filter("ANYPOSE_LOG")
            .default_filter_or("warn"),
    )
    .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Forecast(args) => cmd_forecast(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let mut family = file.family.unwrap_or_default();
    if let Some(m) = args.m_joints {
        family.m_joints = m;
    }
    if let Some(dt) = args.frame_interval {
        family.frame_interval_sec = dt;
    }
    if let Some(d) = args.duration {
        family.duration_sec = d;
    }
    let n = args.n.or(file.n_sequences).unwrap_or(16);
    let seed = args.common.seed.or(file.seed).unwrap_or(7);

    let split = generate_dataset(&family, n, seed)?;
    save_dataset_dir(&args.out, &split)?;
    println!(
        "wrote {} sequences ({} train / {} validation / {} test) to {}",
        split.n_sequences(),
        split.train.len(),
        split.validation.len(),
        split.test.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let order = OdeOrder::from_u8(args.order)
        .map_err(|_| Error::InvalidInput(format!("--order must be 1 or 2, got {}", args.order)))?;
    let mut cfg = file.train.unwrap_or_default();
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.hidden {
        cfg.hidden_widths = v;
    }
    if let Some(v) = args.solver_step {
        cfg.solver_step_sec = v;
    }
    if let Some(v) = args.patience {
        cfg.patience = v;
    }
    if let Some(v) = args.common.seed.or(file.seed) {
        cfg.seed = v;
    }

    let dataset = load_dataset_dir(&args.data)?;
    let (_, report) = train(order, &dataset, &cfg, Some(&args.out))?;
    if let Some(report_path) = &args.report {
        let json = serde_json::to_string_pretty(&report)?;
        write_atomic(report_path, json.as_bytes())?;
    }
    println!(
        "trained order-{} model for {} epochs; best validation MPJPE {:.3} mm (epoch {}); checkpoint: {}",
        report.order,
        report.epochs_completed,
        report.best_val_mpjpe_mm,
        report.best_epoch,
        args.out.display()
    );
    Ok(())
}

fn cmd_forecast(args: ForecastArgs) -> Result<()> {
    let model = AnyPoseModel::load(&args.model)?;
    let observed = load_sequence_csv(&args.observed)?;
    let (grid, _) = TimeGrid::new(args.at.clone())?.canonicalize();
    let (poses, _) = model.forecast(&observed, &grid)?;

    // Emit in pose CSV format, timestamps continuing the observed sequence.
    let t_last = observed.timestamp_sec(observed.len() - 1);
    let out_seq = PoseSequence::new(poses, model.frame_interval_sec(), 0.0)?;
    let mut lines: Vec<String> = sequence_to_csv(&out_seq)
        .lines()
        .map(str::to_string)
        .collect();
    for (i, &t) in grid.times().iter().enumerate() {
        let rest = lines[i + 1].split_once(',').map(|x| x.1.to_string());
        let rest = rest.unwrap_or_default();
        lines[i + 1] = format!("{},{rest}", anypose::util::fmt_f64(t_last + t));
    }
    let mut csv = lines.join("\n");
    csv.push('\n');

    match &args.out {
        Some(path) => write_atomic(path, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct EvalRunReport {
    model_path: String,
    data_dir: String,
    grid_sec: Vec<f64>,
    window_start_idx: usize,
    model: EvalReport,
    zero_velocity_baseline: EvalReport,
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let model = AnyPoseModel::load(&args.model)?;
    let dataset = load_dataset_dir(&args.data)?;
    let grid_sec = args
        .grid
        .or(file.eval_grid_sec)
        .unwrap_or_else(anypose::train::default_loss_grid_sec);
    let (grid, _) = TimeGrid::new(grid_sec)?.canonicalize();
    let window_start = args.window_start.or(file.window_start_idx).unwrap_or(1);

    let model_report = evaluate(&model, &dataset.test, &grid, window_start)?;
    let zv_report = evaluate(&ZeroVelocity, &dataset.test, &grid, window_start)?;

    println!("model ({} windows):", model_report.n_windows);
    print!("{}", model_report.formatted_table());
    println!("zero-velocity baseline:");
    print!("{}", zv_report.formatted_table());

    if let Some(path) = &args.out {
        let report = EvalRunReport {
            model_path: args.model.display().to_string(),
            data_dir: args.data.display().to_string(),
            grid_sec: grid.times().to_vec(),
            window_start_idx: window_start,
            model: model_report,
            zero_velocity_baseline: zv_report,
        };
        write_atomic(path, serde_json::to_string_pretty(&report)?.as_bytes())?;
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let model = AnyPoseModel::load(&args.model)?;
    let observed = load_sequence_csv(&args.observed)?;
    let mut cfg = file.bench.unwrap_or_default();
    if let Some(v) = args.n_queries {
        cfg.n_queries = v;
    }
    if let Some(v) = args.horizon {
        cfg.horizon_sec = v;
    }
    if let Some(v) = args.warmup {
        cfg.warmup = v;
    }
    if let Some(v) = args.dense_step {
        cfg.dense_grid_step_sec = v;
    }
    if let Some(v) = args.common.seed.or(file.seed) {
        cfg.seed = v;
    }
    if let Some(names) = args.strategies {
        cfg.strategies = names
            .iter()
            .map(|s| s.parse::<Strategy>())
            .collect::<Result<Vec<_>>>()?;
    }

    let report = run_bench(&model, &observed, &cfg)?;
    print!("{}", report.formatted_table());
    if let Some(path) = &args.out {
        write_atomic(path, serde_json::to_string_pretty(&report)?.as_bytes())?;
    }
    Ok(())
}
