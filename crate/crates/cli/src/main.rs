use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cabinseg::config::{parse_config, parse_config_str, EvalConfig, ExperimentConfig, Method, Overrides};
use cabinseg::imgcore::{load_image, save_mask};
use cabinseg::metrics::{write_csv, write_csv_file, MetricsReport};
use cabinseg::pipeline::{evaluate_dirs, overlay_paths, run_experiment, segment_image};
use cabinseg::synth::{load_synth_config, write_dataset};
use cabinseg::{Error, Result};

/// Foreground segmentation of in-cabin imagery.
#[derive(Debug, Parser)]
#[command(name = "cabinseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run(RunArgs),
    /// Background subtraction over a frame directory.
    Gmm(RunArgs),
    /// Morphological active contours without edges.
    Macwe(SnakeArgs),
    /// Morphological geodesic active contours.
    Mgac(SnakeArgs),
    /// Score predicted masks against ground truth.
    Eval(EvalArgs),
    /// Render TP/FP/TN/FN overlays.
    Overlay(OverlayArgs),
    /// Generate a synthetic labeled dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Frame directory.
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Ground-truth directory; enables evaluation.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SnakeArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Segment a single image; `--out` is then the mask file.
    #[arg(long, conflicts_with_all = ["frames", "gt"])]
    image: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Directory of predicted masks.
    #[arg(long, alias = "frames")]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// CSV destination; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OverlayArgs {
    /// Predicted mask file or directory.
    #[arg(long, alias = "frames")]
    pred: PathBuf,
    /// Ground-truth mask file or directory.
    #[arg(long)]
    gt: PathBuf,
    /// Output file (single pair) or directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Dataset description (JSON).
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Replaces the seed from the dataset description.
    #[arg(long)]
    seed: Option<u64>,
}

fn load_config(args: &RunArgs, method: Option<Method>) -> Result<ExperimentConfig> {
    let overrides = Overrides {
        method,
        frames: args.frames.clone(),
        gt: args.gt.clone(),
        output: args.out.clone(),
        seed: args.seed,
    };
    let mut cfg = match &args.config {
        Some(path) => parse_config(path, &overrides)?,
        None if method.is_some() => parse_config_str("{}", &overrides)?,
        None => return Err(Error::Config("run: --config is required".into())),
    };
    if args.gt.is_some() && cfg.eval.is_none() {
        cfg.eval = Some(EvalConfig::default());
    }
    Ok(cfg)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"))
}

fn summary(mean: &MetricsReport) -> String {
    format!(
        "pr={} re={} sp={} acc={} sim={} f1={}",
        fmt_opt(mean.pr),
        fmt_opt(mean.re),
        fmt_opt(mean.sp),
        fmt_opt(mean.acc),
        fmt_opt(mean.sim),
        fmt_opt(mean.f1)
    )
}

fn run(cfg: &ExperimentConfig) -> Result<()> {
    let out = run_experiment(cfg)?;
    let frames = out.manifest.frames.len();
    let dest = cfg.output.as_deref().unwrap_or(Path::new(".")).display();
    match &out.batch {
        Some(b) => println!("{frames} frame(s) -> {dest}; mean {}", summary(&b.mean)),
        None => println!("{frames} frame(s) -> {dest}"),
    }
    if !out.manifest.degenerate_frames.is_empty() {
        eprintln!(
            "cabinseg: warning: degenerate contour in frame(s) {:?}",
            out.manifest.degenerate_frames
        );
    }
    Ok(())
}

fn snake(args: &SnakeArgs, method: Method) -> Result<()> {
    let Some(image) = &args.image else {
        return run(&load_config(&args.run, Some(method))?);
    };
    let out = args
        .run
        .out
        .clone()
        .ok_or_else(|| Error::Config("--out is required with --image".into()))?;
    let cfg = load_config(
        &RunArgs {
            config: args.run.config.clone(),
            frames: None,
            gt: None,
            out: None,
            seed: args.run.seed,
        },
        Some(method),
    )?;
    let img = load_image(image)?;
    let (mask, outcome) = segment_image(&img, &cfg)?;
    save_mask(&mask, &out)?;
    println!(
        "{} -> {}; iterations={} degenerate={}",
        image.display(),
        out.display(),
        outcome.iterations_run,
        outcome.degenerate
    );
    if outcome.degenerate {
        eprintln!("cabinseg: warning: contour became degenerate");
    }
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let (names, batch) = evaluate_dirs(&args.pred, &args.gt)?;
    match &args.out {
        Some(path) => {
            write_csv_file(path, &names, &batch)?;
            println!("{} image(s); mean {}", names.len(), summary(&batch.mean));
        }
        None => write_csv(std::io::stdout().lock(), &names, &batch)?,
    }
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    let mut cfg = load_synth_config(&args.spec)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let frames = write_dataset(&cfg, &args.out)?;
    println!("{} frame(s) -> {}", frames.len(), args.out.display());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run(args) => run(&load_config(args, None)?),
        Command::Gmm(args) => run(&load_config(args, Some(Method::Gmm))?),
        Command::Macwe(args) => snake(args, Method::Macwe),
        Command::Mgac(args) => snake(args, Method::Mgac),
        Command::Eval(args) => eval(args),
        Command::Overlay(args) => {
            let n = overlay_paths(&args.pred, &args.gt, &args.out)?;
            println!("{n} overlay(s) -> {}", args.out.display());
            Ok(())
        }
        Command::Synth(args) => synth(args),
    }
}

fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            let first = first.strip_prefix("error: ").unwrap_or(first);
            eprintln!("cabinseg: error: {}", one_line(first));
            return ExitCode::from(1);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cabinseg: error: {}", one_line(&e.to_string()));
            ExitCode::from(e.exit_code().clamp(1, 255) as u8)
        }
    }
}
