use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Mask consistency regularization: corpus synthesis, training, sampling and
/// evaluation for diffusion-based object removal.
#[derive(Parser, Debug)]
#[command(name = "mcr", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic object-removal corpus.
    Synth(SynthArgs),
    /// Apply a mask perturbation to a mask file.
    Perturb(PerturbArgs),
    /// Train a denoiser on a corpus.
    Train(TrainArgs),
    /// Inpaint one image with a trained checkpoint.
    Sample(SampleArgs),
    /// Score inpainting outputs against a corpus.
    Eval(EvalArgs),
    /// Train and compare the four objective arms.
    Ablate(AblateArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    count: u64,
    /// Image size as WxH.
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    size: (usize, usize),
    /// 1 (grayscale) or 3 (RGB).
    #[arg(long, default_value_t = 1, value_parser = parse_channels)]
    channels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum PerturbMode {
    /// Square dilation with radius k.
    Dilate,
    /// Bounding rectangle.
    Rect,
    /// Union with a random free-form mask.
    Random,
    /// The rectangle-or-random mixture.
    Sample,
}

#[derive(Args, Debug)]
struct PerturbArgs {
    #[arg(long)]
    mask: PathBuf,
    #[arg(long, value_enum)]
    mode: PerturbMode,
    /// Dilation radius: an integer, or "auto" to scale with the image width.
    #[arg(long, default_value = "auto")]
    k: String,
    /// Probability of the rectangle branch in sample mode.
    #[arg(long, default_value_t = 0.5)]
    rect_probability: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Training options; each flag overrides the matching config-file key.
#[derive(Args, Debug, Default)]
struct TrainOverrides {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    lambda_cons: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    hidden_width: Option<usize>,
    /// Dilation radius: auto, k, or lo..hi.
    #[arg(long)]
    dilation_k: Option<String>,
    /// Any config key as key=value; repeatable, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint; only --steps may change.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    /// Sampler steps.
    #[arg(long, default_value_t = mcr::diffusion::DEFAULT_SAMPLE_STEPS)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[group(skip)]
#[command(group(ArgGroup::new("source").required(true).args(["ckpt", "images"])))]
struct EvalArgs {
    /// Inpaint with this checkpoint.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Score precomputed outputs named like the corpus truth files.
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = mcr::diffusion::DEFAULT_SAMPLE_STEPS)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Evaluate only the first N triplets.
    #[arg(long)]
    limit: Option<usize>,
    /// Skip the consistency gap.
    #[arg(long)]
    no_gap: bool,
    /// Also write the inpainted images to OUT/images.
    #[arg(long)]
    save_outputs: bool,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Corpus to evaluate on; defaults to the training corpus.
    #[arg(long)]
    eval_corpus: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = mcr::diffusion::DEFAULT_SAMPLE_STEPS)]
    sample_steps: usize,
    #[arg(long, default_value_t = 0)]
    eval_seed: u64,
    #[arg(long)]
    eval_limit: Option<usize>,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1, value_parser = parse_channels)]
    channels: usize,
    #[arg(long, default_value_t = 32)]
    hidden_width: usize,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WxH")?;
    let w = w.parse().map_err(|_| format!("bad width {w:?}"))?;
    let h = h.parse().map_err(|_| format!("bad height {h:?}"))?;
    Ok((w, h))
}

fn parse_channels(s: &str) -> Result<usize, String> {
    match s {
        "1" => Ok(1),
        "3" => Ok(3),
        _ => Err(format!("channels must be 1 or 3, got {s:?}")),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Perturb(a) => commands::perturb(a),
        Command::Train(a) => commands::train(a),
        Command::Sample(a) => commands::sample(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
