use std::fmt;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use mcr::ablation::{run_ablation, AblationConfig};
use mcr::denoiser::{self, DenoiserConfig};
use mcr::diffusion;
use mcr::imagio::{self, Corpus, CorpusConfig};
use mcr::mask::{self, BinaryMask, DilationRadius, PerturbConfig};
use mcr::metrics::{self, DiffusionInpainter, DirectoryOutputs, EvalOptions, Source};
use mcr::rng;
use mcr::train::{self, Checkpoint, TrainConfig, Trainer};

use crate::{
    AblateArgs, EvalArgs, GradcheckArgs, PerturbArgs, PerturbMode, SampleArgs, SynthArgs,
    TrainArgs, TrainOverrides,
};

/// Bad flags or flag combinations.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Debug)]
pub struct GradCheckFailed;

impl fmt::Display for GradCheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("gradient check failed")
    }
}

impl std::error::Error for GradCheckFailed {}

/// 2 usage, 3 I/O, 4 domain, 5 gradient check.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if cause.is::<GradCheckFailed>() {
            return 5;
        }
        if let Some(e) = cause.downcast_ref::<mcr::Error>() {
            return match e {
                mcr::Error::Io(_) => 3,
                mcr::Error::Config(_) => 2,
                _ => 4,
            };
        }
        if cause.is::<std::io::Error>() {
            return 3;
        }
    }
    4
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn echo(pairs: &[(&str, String)]) {
    println!("# resolved configuration");
    for (k, v) in pairs {
        println!("{k} = {v}");
    }
}

fn path(p: &Path) -> String {
    p.display().to_string()
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let cfg = CorpusConfig {
        count: a.count as usize,
        width: a.size.0,
        height: a.size.1,
        channels: a.channels,
        seed: a.seed,
        ..Default::default()
    };
    echo(&[
        ("out", path(&a.out)),
        ("count", cfg.count.to_string()),
        ("size", format!("{}x{}", cfg.width, cfg.height)),
        ("channels", cfg.channels.to_string()),
        ("seed", cfg.seed.to_string()),
    ]);
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let manifest = imagio::make_corpus(&cfg, &a.out)
        .with_context(|| format!("writing corpus to {}", a.out.display()))?;
    println!(
        "wrote {} triplets to {}",
        manifest.entries.len(),
        a.out.display()
    );
    Ok(())
}

fn parse_k(k: &str, width: usize) -> Result<usize> {
    if k == "auto" {
        return Ok(DilationRadius::auto_for_width(width));
    }
    k.parse()
        .map_err(|_| usage(format!("--k expects an integer or auto, got {k:?}")))
}

pub fn perturb(a: PerturbArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.rect_probability) {
        return Err(usage("--rect-probability must lie in [0, 1]"));
    }
    let mask =
        BinaryMask::load(&a.mask).with_context(|| format!("loading {}", a.mask.display()))?;
    let k = parse_k(&a.k, mask.width())?;
    echo(&[
        ("mask", path(&a.mask)),
        ("mode", format!("{:?}", a.mode).to_lowercase()),
        ("k", k.to_string()),
        ("rect_probability", a.rect_probability.to_string()),
        ("seed", a.seed.to_string()),
        ("out", path(&a.out)),
    ]);
    let mut r = rng::seeded(a.seed);
    let cfg = PerturbConfig {
        dilation: DilationRadius::Fixed(k),
        rect_probability: a.rect_probability,
        ..Default::default()
    };
    let out = match a.mode {
        PerturbMode::Dilate => mask.dilate(k),
        PerturbMode::Rect => mask.bounding_rect()?,
        PerturbMode::Random => {
            if mask.is_empty() {
                return Err(mcr::Error::EmptyMask.into());
            }
            let extra = mask::random_mask(mask.width(), mask.height(), &cfg.random, &mut r);
            mask.union(&extra)?
        }
        PerturbMode::Sample => {
            let (m, kind) = mask::reshape_perturb_traced(&mask, &cfg, &mut r)?;
            println!("branch = {kind:?}");
            m
        }
    };
    out.save(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    println!("coverage {:.4} -> {:.4}", mask.coverage(), out.coverage());
    Ok(())
}

/// Default config, then the file, then flags, then `--set` pairs.
fn resolve_config(o: &TrainOverrides) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(file) = &o.config {
        let text =
            fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
        cfg.apply_text(&text)
            .with_context(|| format!("in {}", file.display()))?;
    }
    let flags: [(&str, Option<String>); 9] = [
        ("mode", o.mode.clone()),
        ("steps", o.steps.map(|v| v.to_string())),
        ("batch_size", o.batch_size.map(|v| v.to_string())),
        ("learning_rate", o.learning_rate.map(|v| v.to_string())),
        ("lambda_cons", o.lambda_cons.map(|v| v.to_string())),
        ("seed", o.seed.map(|v| v.to_string())),
        (
            "checkpoint_every",
            o.checkpoint_every.map(|v| v.to_string()),
        ),
        ("hidden_width", o.hidden_width.map(|v| v.to_string())),
        ("dilation_k", o.dilation_k.clone()),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, &v)?;
        }
    }
    for pair in &o.set {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {pair:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn has_overrides(o: &TrainOverrides) -> bool {
    o.config.is_some()
        || o.mode.is_some()
        || o.batch_size.is_some()
        || o.learning_rate.is_some()
        || o.lambda_cons.is_some()
        || o.seed.is_some()
        || o.checkpoint_every.is_some()
        || o.hidden_width.is_some()
        || o.dilation_k.is_some()
        || !o.set.is_empty()
}

fn load_corpus(dir: &Path) -> Result<Corpus> {
    Corpus::load(dir).with_context(|| format!("loading corpus {}", dir.display()))
}

enum Start {
    Fresh(TrainConfig),
    Resume(Checkpoint),
}

pub fn train(a: TrainArgs) -> Result<()> {
    // settle the configuration before touching the corpus
    let start = match &a.resume {
        Some(ckpt_path) => {
            if has_overrides(&a.overrides) {
                return Err(usage(
                    "--resume keeps the checkpoint's configuration; only --steps may be given",
                ));
            }
            let mut ckpt = Checkpoint::load(ckpt_path)
                .with_context(|| format!("loading {}", ckpt_path.display()))?;
            if let Some(steps) = a.overrides.steps {
                ckpt.config.steps = steps;
            }
            Start::Resume(ckpt)
        }
        None => Start::Fresh(resolve_config(&a.overrides)?),
    };
    let corpus = load_corpus(&a.corpus)?;
    let trainer = match start {
        Start::Fresh(cfg) => Trainer::new(cfg, &corpus.triplets)?,
        Start::Resume(ckpt) => Trainer::from_checkpoint(ckpt, &corpus.triplets)?,
    };
    println!("# resolved configuration");
    print!("{}", trainer.config.to_text());
    println!("corpus = {}", a.corpus.display());
    println!("out = {}", a.out.display());
    if let Some(r) = &a.resume {
        println!("resume = {} (step {})", r.display(), trainer.step());
    }
    let outcome = train::run_training(trainer, &a.out)?;
    match (outcome.reports.first(), outcome.reports.last()) {
        (Some(first), Some(last)) => println!(
            "steps {}: rec {:.6} -> {:.6}, cons {:.6} -> {:.6}",
            outcome.reports.len(),
            first.rec,
            last.rec,
            first.cons,
            last.cons
        ),
        _ => println!("no steps run"),
    }
    println!("checkpoint {}", outcome.checkpoint_path.display());
    Ok(())
}

pub fn sample(a: SampleArgs) -> Result<()> {
    let ckpt =
        Checkpoint::load(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
    let image =
        imagio::load_image(&a.image).with_context(|| format!("loading {}", a.image.display()))?;
    let mask =
        BinaryMask::load(&a.mask).with_context(|| format!("loading {}", a.mask.display()))?;
    echo(&[
        ("ckpt", path(&a.ckpt)),
        ("image", path(&a.image)),
        ("mask", path(&a.mask)),
        ("steps", a.steps.to_string()),
        ("seed", a.seed.to_string()),
        ("out", path(&a.out)),
    ]);
    let schedule = ckpt.config.schedule()?;
    let out = diffusion::inpaint(
        &ckpt.params,
        &image,
        &mask,
        &schedule,
        a.steps,
        &mut rng::seeded(a.seed),
    )?;
    imagio::save_image(&out, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn print_summary(report: &metrics::MetricsReport) {
    print!("{}", report.to_text());
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    echo(&[
        (
            "source",
            match (&a.ckpt, &a.images) {
                (Some(c), _) => format!("ckpt {}", c.display()),
                (_, Some(d)) => format!("images {}", d.display()),
                _ => unreachable!("clap enforces one source"),
            },
        ),
        ("corpus", path(&a.corpus)),
        ("out", path(&a.out)),
        ("steps", a.steps.to_string()),
        ("seed", a.seed.to_string()),
        ("limit", a.limit.map_or("all".into(), |l| l.to_string())),
        ("gap", (!a.no_gap).to_string()),
    ]);
    let mut opts = EvalOptions {
        seed: a.seed,
        limit: a.limit,
        gap: None,
        save_outputs: a.save_outputs.then(|| a.out.join("images")),
        config_digest: None,
    };
    let report = match (&a.ckpt, &a.images) {
        (Some(ckpt_path), _) => {
            let ckpt = Checkpoint::load(ckpt_path)
                .with_context(|| format!("loading {}", ckpt_path.display()))?;
            let schedule = ckpt.config.schedule()?;
            let inpainter = DiffusionInpainter {
                model: &ckpt.params,
                schedule: &schedule,
                n_steps: a.steps,
            };
            opts.gap = (!a.no_gap).then(|| ckpt.config.perturb.clone());
            opts.config_digest = Some(metrics::hex(&ckpt.config.digest()));
            metrics::evaluate(&Source::Inpainter(&inpainter), &corpus, &opts)?
        }
        (_, Some(dir)) => {
            let source = Source::Directory(DirectoryOutputs { dir: dir.clone() });
            metrics::evaluate(&source, &corpus, &opts)?
        }
        _ => unreachable!("clap enforces one source"),
    };
    report.write(&a.out)?;
    print_summary(&report);
    Ok(())
}

pub fn ablate(a: AblateArgs) -> Result<()> {
    let base = resolve_config(&a.overrides)?;
    let corpus = load_corpus(&a.corpus)?;
    let eval_corpus = match &a.eval_corpus {
        Some(dir) => load_corpus(dir)?,
        None => corpus.clone(),
    };
    let mut cfg = AblationConfig::new(base, a.seeds.clone());
    cfg.sample_steps = a.sample_steps;
    cfg.eval_seed = a.eval_seed;
    cfg.eval_limit = a.eval_limit;
    println!("# resolved configuration");
    print!("{}", cfg.base.to_text());
    println!("corpus = {}", a.corpus.display());
    println!(
        "eval_corpus = {}",
        a.eval_corpus.as_deref().unwrap_or(&a.corpus).display()
    );
    println!("out = {}", a.out.display());
    println!(
        "seeds = {}",
        a.seeds
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(",")
    );
    println!("sample_steps = {}", cfg.sample_steps);
    println!("eval_seed = {}", cfg.eval_seed);
    println!(
        "eval_limit = {}",
        cfg.eval_limit.map_or("all".into(), |l| l.to_string())
    );
    let table = run_ablation(&cfg, &corpus, &eval_corpus, Some(&a.out), &mut |run| {
        println!(
            "{} seed {}: gap {} psnr_masked {} cons {}",
            run.mode,
            run.seed,
            run.report.consistency_gap.unwrap_or(0.0),
            run.report.psnr_masked.mean,
            run.cons
        );
    })?;
    print!("{}", table.to_tsv());
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let cfg = DenoiserConfig {
        image_channels: a.channels,
        hidden_width: a.hidden_width,
        time_embed_dim: DenoiserConfig::default().time_embed_dim,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    echo(&[
        ("seed", a.seed.to_string()),
        ("channels", cfg.image_channels.to_string()),
        ("hidden_width", cfg.hidden_width.to_string()),
        ("time_embed_dim", cfg.time_embed_dim.to_string()),
    ]);
    let network = denoiser::grad_check(&cfg, a.seed)?;
    let objective = train::objective_grad_check(&cfg, 16, 2, 2.0, 12, a.seed)?;
    for (name, r) in [("network", &network), ("objective", &objective)] {
        println!(
            "{name}: {} coordinates, max relative error {:.3e} (tolerance {:.0e}) {}",
            r.coordinates,
            r.max_rel_error,
            r.tolerance,
            if r.passed { "ok" } else { "FAILED" }
        );
    }
    if network.passed && objective.passed {
        Ok(())
    } else {
        Err(GradCheckFailed.into())
    }
}
