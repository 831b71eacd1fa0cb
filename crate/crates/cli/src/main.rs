use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use freqface::data::ImageU8;
use freqface::train::{
    evaluate, infer, list_images, prepare_data, run, run_gradcheck, write_synthetic_sources, Dataset,
    PrepareOptions, RunConfig, RunPaths, Selector, TrainingState,
};
use freqface::Error;

#[derive(Parser)]
#[command(name = "freqface", version, about = "Frequency-guided face hallucination")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an HR/LR/DCT/structure-target dataset from source images.
    PrepareData(PrepareArgs),
    /// Train the generator and discriminator.
    Train(TrainArgs),
    /// Super-resolve one LR image with a checkpoint.
    Infer(InferArgs),
    /// Y-channel PSNR/SSIM of a checkpoint on a prepared dataset.
    Evaluate(EvalArgs),
    /// Finite-difference gradient verification.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// Directory of source images (PNG or PPM).
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    src: Option<PathBuf>,
    /// Generate this many synthetic faces instead of reading `--src`.
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    scale: usize,
    #[arg(long, default_value_t = 64)]
    hr_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Flat `key = value` run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset applied before the config file and overrides.
    #[arg(long)]
    preset: Option<String>,
    /// Override one config key, e.g. `--set lr=2e-4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Continue from a checkpoint directory; only `--steps` may change.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// CSV destination; printed to stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Border pixels excluded from the metrics.
    #[arg(long, default_value_t = 0)]
    crop: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    /// all, primitives, dct, blocks, losses, generator or corrupted.
    #[arg(long, default_value = "all")]
    select: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
}

/// A failure reported as `error[kind]: message`.
struct Failure {
    kind: String,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        kind: "usage".into(),
        message: message.into(),
    }
}

fn prepare(a: PrepareArgs) -> Result<(), Failure> {
    let opts = PrepareOptions {
        scale: a.scale,
        hr_size: a.hr_size,
        seed: a.seed,
        ..PrepareOptions::default()
    };
    let sources = match (a.synthetic, &a.src) {
        (Some(n), _) => write_synthetic_sources(&a.out.join("sources"), n, a.hr_size, a.seed)?,
        (None, Some(dir)) => list_images(dir)?,
        (None, None) => return Err(usage("one of --src or --synthetic is required")),
    };
    let report = prepare_data(&sources, &a.out, &opts)?;
    println!(
        "prepared {} entries ({} skipped) in {}",
        report.written.len(),
        report.skipped.len(),
        a.out.display()
    );
    Ok(())
}

fn run_config(a: &TrainArgs) -> Result<RunConfig, Failure> {
    let mut text = match &a.config {
        Some(path) => fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?,
        None => String::new(),
    };
    if let Some(p) = &a.preset {
        text.push_str(&format!("\npreset = {p}\n"));
    }
    let mut cfg = RunConfig::parse(&text)?;
    let mut pairs: Vec<(String, String)> = Vec::new();
    for o in &a.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    let direct = [
        ("steps", a.steps.map(|v| v.to_string())),
        ("seed", a.seed.map(|v| v.to_string())),
        ("lr", a.lr.map(|v| v.to_string())),
        ("batch_size", a.batch_size.map(|v| v.to_string())),
        ("checkpoint_every", a.checkpoint_every.map(|v| v.to_string())),
    ];
    pairs.extend(direct.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
    for (k, v) in pairs {
        cfg.set(&k, &v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let data = Dataset::load(&a.data)?;
    let paths = RunPaths { out_dir: a.out.clone() };
    let (mut state, models) = match &a.resume {
        Some(dir) => {
            let changes_config = a.config.is_some()
                || a.preset.is_some()
                || !a.overrides.is_empty()
                || a.seed.is_some()
                || a.lr.is_some()
                || a.batch_size.is_some()
                || a.checkpoint_every.is_some();
            if changes_config {
                return Err(usage("--resume keeps the checkpoint configuration; only --steps may be given"));
            }
            let (mut state, models) = TrainingState::load(dir)?;
            if let Some(steps) = a.steps {
                if steps < state.step {
                    return Err(usage(format!("--steps {steps} is behind the checkpoint step {}", state.step)));
                }
                state.config.steps = steps;
            }
            (state, models)
        }
        None => TrainingState::new(run_config(&a)?)?,
    };
    let logs = run(&mut state, &models, &data, &paths)?;
    match logs.last() {
        Some(last) => println!(
            "trained to step {} (final loss {:.6}); checkpoint at {}",
            state.step,
            last.total,
            paths.final_checkpoint().display()
        ),
        None => println!("already at step {}; checkpoint at {}", state.step, paths.final_checkpoint().display()),
    }
    Ok(())
}

fn infer_cmd(a: InferArgs) -> Result<(), Failure> {
    let (state, models) = TrainingState::load(&a.checkpoint)?;
    let lr = ImageU8::load(&a.input)?;
    let sr = infer(&models, &state.g, &lr)?;
    sr.save(&a.output)?;
    println!("wrote {}x{} image to {}", sr.width(), sr.height(), a.output.display());
    Ok(())
}

fn evaluate_cmd(a: EvalArgs) -> Result<(), Failure> {
    let (state, models) = TrainingState::load(&a.checkpoint)?;
    let data = Dataset::load(&a.data)?;
    let report = evaluate(&models, &state.g, &data, a.crop)?;
    let csv = report.to_csv();
    match &a.output {
        Some(path) => {
            write_text(path, &csv)?;
            let (psnr, ssim, bpsnr, bssim) = report.mean();
            println!("mean psnr {psnr:.4} ssim {ssim:.4} (bicubic {bpsnr:.4} / {bssim:.4}); table at {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| {
        Failure::from(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<(), Failure> {
    let selector: Selector = a.select.parse()?;
    let report = run_gradcheck(selector, a.seed, a.tolerance)?;
    print!("{}", report.to_text());
    let failures = report.failures();
    if failures.is_empty() {
        println!("all {} checks within {:e} (worst {:.3e})", report.results.len(), a.tolerance, report.worst());
        Ok(())
    } else {
        Err(Failure {
            kind: "gradcheck".into(),
            message: format!(
                "{} of {} checks exceed {:e}; worst {:.3e} in {}",
                failures.len(),
                report.results.len(),
                a.tolerance,
                report.worst(),
                failures[0].name
            ),
        })
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let line = text
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("error[usage]: {line}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::PrepareData(a) => prepare(a),
        Command::Train(a) => train(a),
        Command::Infer(a) => infer_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let message = f.message.split_whitespace().collect::<Vec<_>>().join(" ");
            eprintln!("error[{}]: {message}", f.kind);
            ExitCode::FAILURE
        }
    }
}
