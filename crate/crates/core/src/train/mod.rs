//! The consistency-regularized objective and the training loop.
//!
//! Every step draws, per sample, one timestep `t`, one noise `eps` and one
//! pair of perturbed masks. The noisy sample `x_t` is shared by the original,
//! dilated and reshaped branches, so mask geometry is the only thing that
//! differs between them. The loss is
//!
//! ```text
//! total = rec(eps, ε(x_t, t, z_O)) + λ · [ mse(ε_O, ε_D) + mse(ε_O, ε_R) ]
//! ```
//!
//! with every squared norm reduced by the mean over elements and batch.

mod checkpoint;
mod config;

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;

pub use checkpoint::Checkpoint;
pub use config::{Mode, TrainConfig, CONFIG_KEYS};

use crate::denoiser::{self, DenoiserConfig, DenoiserParams, ForwardCache, GradCheckReport};
use crate::diffusion::{forward_sample, NoisePredictor, NoiseSchedule};
use crate::error::{Error, Result};
use crate::imagio::{ImageTensor, RemovalTriplet};
use crate::mask::{sample_perturbations, BinaryMask, PerturbConfig};
use crate::rng::{self, Rng, RngState};

/// Conditioning `z(x0, M)`: the image with masked pixels zeroed, followed by
/// the mask as a `{0, 1}` channel. `x0` is expected in the model domain.
pub fn cond_encode(x0: &ImageTensor, mask: &BinaryMask) -> Result<ImageTensor> {
    x0.check_mask(mask)?;
    let n = x0.pixels();
    let keep = mask.to_f64();
    let mut data = Vec::with_capacity((x0.channels() + 1) * n);
    for c in 0..x0.channels() {
        data.extend(
            x0.plane(c)
                .iter()
                .zip(mask.bits())
                .map(|(&v, &m)| if m { 0.0 } else { v }),
        );
    }
    data.extend_from_slice(&keep);
    ImageTensor::new(x0.channels() + 1, x0.height(), x0.width(), data)
}

fn mse(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.check_same_shape(b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.len() as f64)
}

/// Reconstruction loss: mean of `(eps − eps_hat)²`.
pub fn rec_loss(eps: &ImageTensor, eps_hat: &ImageTensor) -> Result<f64> {
    mse(eps, eps_hat)
}

/// Consistency loss for `mode`: `mse(O, D)` when the dilated branch is
/// active plus `mse(O, R)` when the reshaped branch is.
pub fn cons_loss_for(
    mode: Mode,
    eps_o: &ImageTensor,
    eps_d: &ImageTensor,
    eps_r: &ImageTensor,
) -> Result<f64> {
    eps_o.check_same_shape(eps_d)?;
    eps_o.check_same_shape(eps_r)?;
    let mut total = 0.0;
    if mode.uses_dilated() {
        total += mse(eps_o, eps_d)?;
    }
    if mode.uses_reshaped() {
        total += mse(eps_o, eps_r)?;
    }
    Ok(total)
}

/// Both consistency terms.
pub fn cons_loss(eps_o: &ImageTensor, eps_d: &ImageTensor, eps_r: &ImageTensor) -> Result<f64> {
    cons_loss_for(Mode::Mcr, eps_o, eps_d, eps_r)
}

pub fn total_loss(rec: f64, cons: f64, lambda_cons: f64) -> f64 {
    rec + lambda_cons * cons
}

/// A noise predictor with parameters that can be trained by [`train_step`].
pub trait Trainable: NoisePredictor {
    type Cache;

    fn forward_cached(
        &self,
        x_t: &ImageTensor,
        t: usize,
        cond: &ImageTensor,
    ) -> Result<(ImageTensor, Self::Cache)>;

    /// Adds `∂⟨grad_out, output⟩/∂θ` into `grad`.
    fn backward_into(
        &self,
        cache: &Self::Cache,
        grad_out: &ImageTensor,
        grad: &mut [f64],
    ) -> Result<()>;

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];
}

impl Trainable for DenoiserParams {
    type Cache = ForwardCache;

    fn forward_cached(
        &self,
        x_t: &ImageTensor,
        t: usize,
        cond: &ImageTensor,
    ) -> Result<(ImageTensor, ForwardCache)> {
        self.forward(x_t, t, cond)
    }

    fn backward_into(
        &self,
        cache: &ForwardCache,
        grad_out: &ImageTensor,
        grad: &mut [f64],
    ) -> Result<()> {
        DenoiserParams::backward_into(self, cache, grad_out, grad)
    }

    fn params(&self) -> &[f64] {
        self.values()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.values_mut()
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with bias correction; no weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Updates applied so far.
    pub t: u64,
}

impl Adam {
    pub fn new(learning_rate: f64, n: usize) -> Self {
        Self {
            learning_rate,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powf(self.t as f64);
        let c2 = 1.0 - ADAM_BETA2.powf(self.t as f64);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Parameters, optimizer and generator: everything a step mutates.
#[derive(Debug, Clone)]
pub struct TrainState<M> {
    pub model: M,
    pub adam: Adam,
    pub rng: Rng,
}

impl<M: Trainable> TrainState<M> {
    pub fn new(model: M, learning_rate: f64, rng: Rng) -> Self {
        let n = model.params().len();
        Self {
            model,
            adam: Adam::new(learning_rate, n),
            rng,
        }
    }

    pub fn step(&self) -> u64 {
        self.adam.t
    }
}

/// The parts of [`TrainConfig`] that shape a single step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepConfig {
    pub mode: Mode,
    pub lambda_cons: f64,
    pub stop_gradient_original: bool,
    pub perturb: PerturbConfig,
}

impl From<&TrainConfig> for StepConfig {
    fn from(cfg: &TrainConfig) -> Self {
        Self {
            mode: cfg.mode,
            lambda_cons: cfg.lambda_cons,
            stop_gradient_original: cfg.stop_gradient_original,
            perturb: cfg.perturb.clone(),
        }
    }
}

/// Batch means of the objective's parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub rec: f64,
    pub cons: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Original,
    Dilated,
    Reshaped,
}

/// One branch evaluation inside a step, exposed for instrumentation.
#[derive(Debug)]
pub struct BranchEvent<'a> {
    pub sample: usize,
    pub branch: Branch,
    pub t: usize,
    pub x_t: &'a ImageTensor,
    pub eps: &'a ImageTensor,
    pub cond: &'a ImageTensor,
}

/// Noisy input and three conditionings for one sample.
#[derive(Debug, Clone)]
pub struct SampleInputs {
    pub t: usize,
    pub eps: ImageTensor,
    pub x_t: ImageTensor,
    pub z_original: ImageTensor,
    pub z_dilated: ImageTensor,
    pub z_reshaped: ImageTensor,
}

/// Draws `t`, `eps` and the perturbed masks for one triplet, in that order.
/// The target is the ground truth; conditioning comes from the composite.
pub fn draw_sample_inputs(
    triplet: &RemovalTriplet,
    perturb: &PerturbConfig,
    sched: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<SampleInputs> {
    let x0 = triplet.ground_truth.to_model_domain();
    let t = rng.random_range(0..sched.len());
    let eps = ImageTensor::standard_normal(x0.channels(), x0.height(), x0.width(), rng);
    let x_t = forward_sample(&x0, t, &eps, sched)?;
    let perturbed = sample_perturbations(&triplet.mask, perturb, rng)?;
    let source = triplet.composite.to_model_domain();
    Ok(SampleInputs {
        t,
        eps,
        x_t,
        z_original: cond_encode(&source, &triplet.mask)?,
        z_dilated: cond_encode(&source, &perturbed.dilated)?,
        z_reshaped: cond_encode(&source, &perturbed.reshaped)?,
    })
}

fn scaled_diff(a: &ImageTensor, b: &ImageTensor, scale: f64) -> ImageTensor {
    a.zip_map(b, |x, y| scale * (x - y))
}

fn add_scaled_diff(into: &mut ImageTensor, a: &ImageTensor, b: &ImageTensor, scale: f64) {
    for ((g, x), y) in into.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
        *g += scale * (x - y);
    }
}

/// Loss of the objective over `samples` and its gradient, accumulated into
/// `grad`. Backward passes run in the fixed order original, dilated,
/// reshaped, sample by sample.
///
/// Branches that `mode` excludes are not evaluated. With `λ = 0` the
/// consistency value is still reported but contributes no gradient, which
/// makes the update identical to the baseline's.
pub fn objective_gradient<M: Trainable>(
    model: &M,
    samples: &[SampleInputs],
    cfg: &StepConfig,
    grad: &mut [f64],
    observer: &mut dyn FnMut(&BranchEvent<'_>),
) -> Result<LossReport> {
    if samples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let batch = samples.len() as f64;
    let (mut rec_sum, mut cons_sum) = (0.0, 0.0);
    let cons_active = cfg.lambda_cons > 0.0;
    for (index, s) in samples.iter().enumerate() {
        let mut run = |branch: Branch, cond: &ImageTensor| -> Result<(ImageTensor, M::Cache)> {
            observer(&BranchEvent {
                sample: index,
                branch,
                t: s.t,
                x_t: &s.x_t,
                eps: &s.eps,
                cond,
            });
            model.forward_cached(&s.x_t, s.t, cond)
        };
        let (out_o, cache_o) = run(Branch::Original, &s.z_original)?;
        let dilated = if cfg.mode.uses_dilated() {
            Some(run(Branch::Dilated, &s.z_dilated)?)
        } else {
            None
        };
        let reshaped = if cfg.mode.uses_reshaped() {
            Some(run(Branch::Reshaped, &s.z_reshaped)?)
        } else {
            None
        };

        rec_sum += rec_loss(&s.eps, &out_o)?;
        for (out, _) in dilated.iter().chain(&reshaped) {
            cons_sum += mse(&out_o, out)?;
        }

        // d mean(x²)/dx = 2x / len, and the batch mean divides once more
        let scale = 2.0 / (out_o.len() as f64 * batch);
        let mut grad_o = scaled_diff(&out_o, &s.eps, scale);
        let mut others = Vec::with_capacity(2);
        if cons_active {
            let lambda_scale = cfg.lambda_cons * scale;
            for (out, cache) in dilated.iter().chain(&reshaped) {
                if !cfg.stop_gradient_original {
                    add_scaled_diff(&mut grad_o, &out_o, out, lambda_scale);
                }
                let g = scaled_diff(out, &out_o, lambda_scale);
                if g.data().iter().any(|&v| v != 0.0) {
                    others.push((cache, g));
                }
            }
        }
        model.backward_into(&cache_o, &grad_o, grad)?;
        for (cache, g) in others {
            model.backward_into(cache, &g, grad)?;
        }
    }
    let rec = rec_sum / batch;
    let cons = cons_sum / batch;
    Ok(LossReport {
        rec,
        cons,
        total: total_loss(rec, cons, cfg.lambda_cons),
    })
}

/// Forward-only evaluation of the same objective.
pub fn objective_value<M: NoisePredictor>(
    model: &M,
    samples: &[SampleInputs],
    mode: Mode,
    lambda_cons: f64,
) -> Result<LossReport> {
    if samples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (mut rec, mut cons) = (0.0, 0.0);
    for s in samples {
        let o = model.predict_noise(&s.x_t, s.t, &s.z_original)?;
        rec += rec_loss(&s.eps, &o)?;
        if mode.uses_dilated() {
            cons += mse(&o, &model.predict_noise(&s.x_t, s.t, &s.z_dilated)?)?;
        }
        if mode.uses_reshaped() {
            cons += mse(&o, &model.predict_noise(&s.x_t, s.t, &s.z_reshaped)?)?;
        }
    }
    let n = samples.len() as f64;
    Ok(LossReport {
        rec: rec / n,
        cons: cons / n,
        total: total_loss(rec / n, cons / n, lambda_cons),
    })
}

/// One optimizer step on `batch`.
pub fn train_step<M: Trainable>(
    state: &mut TrainState<M>,
    batch: &[&RemovalTriplet],
    cfg: &StepConfig,
    sched: &NoiseSchedule,
) -> Result<LossReport> {
    train_step_observed(state, batch, cfg, sched, &mut |_| {})
}

/// [`train_step`] with a callback invoked before every branch forward pass.
pub fn train_step_observed<M: Trainable>(
    state: &mut TrainState<M>,
    batch: &[&RemovalTriplet],
    cfg: &StepConfig,
    sched: &NoiseSchedule,
    observer: &mut dyn FnMut(&BranchEvent<'_>),
) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let samples = batch
        .iter()
        .map(|t| draw_sample_inputs(t, &cfg.perturb, sched, &mut state.rng))
        .collect::<Result<Vec<_>>>()?;
    let mut grad = vec![0.0; state.model.params().len()];
    let report = objective_gradient(&state.model, &samples, cfg, &mut grad, observer)?;
    state.adam.update(state.model.params_mut(), &grad);
    Ok(report)
}

const EPOCH_SALT: u64 = 0x6570_6f63_6873_6875;

/// Corpus indices for `step`: epoch `e` visits a fixed permutation derived
/// from `(seed, e)`, so the order depends only on the step counter.
pub fn batch_indices(corpus_len: usize, batch_size: usize, step: u64, seed: u64) -> Vec<usize> {
    let mut cached: Option<(u64, Vec<usize>)> = None;
    (0..batch_size as u64)
        .map(|b| {
            let j = step * batch_size as u64 + b;
            let (epoch, pos) = (j / corpus_len as u64, (j % corpus_len as u64) as usize);
            if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
                let mut perm: Vec<usize> = (0..corpus_len).collect();
                perm.shuffle(&mut rng::seeded(rng::derive_seed(seed ^ EPOCH_SALT, epoch)));
                cached = Some((epoch, perm));
            }
            cached.as_ref().unwrap().1[pos]
        })
        .collect()
}

pub const LOSS_LOG_HEADER: &str = "step\trec\tcons\ttotal\tseconds";

/// Drives [`train_step`] over a corpus with a fixed configuration.
pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub schedule: NoiseSchedule,
    pub state: TrainState<DenoiserParams>,
    corpus: &'a [RemovalTriplet],
    step_config: StepConfig,
}

impl<'a> Trainer<'a> {
    /// Fresh parameters: the generator seeded from `config.seed` first
    /// initializes the weights and then drives every step.
    pub fn new(config: TrainConfig, corpus: &'a [RemovalTriplet]) -> Result<Self> {
        config.validate()?;
        let first = corpus.first().ok_or(Error::EmptyBatch)?;
        let model_cfg = DenoiserConfig {
            image_channels: first.composite.channels(),
            hidden_width: config.hidden_width,
            time_embed_dim: config.time_embed_dim,
        };
        let mut rng = rng::seeded(config.seed);
        let params = DenoiserParams::init(model_cfg, &mut rng)?;
        let state = TrainState::new(params, config.learning_rate, rng);
        Self::assemble(config, corpus, state)
    }

    pub fn from_checkpoint(ckpt: Checkpoint, corpus: &'a [RemovalTriplet]) -> Result<Self> {
        let first = corpus.first().ok_or(Error::EmptyBatch)?;
        if first.composite.channels() != ckpt.params.config().image_channels {
            return Err(Error::ShapeMismatch(
                "corpus channels differ from checkpoint".into(),
            ));
        }
        let state = TrainState {
            adam: Adam {
                learning_rate: ckpt.config.learning_rate,
                m: ckpt.adam_m,
                v: ckpt.adam_v,
                t: ckpt.step,
            },
            model: ckpt.params,
            rng: ckpt.rng.restore(),
        };
        Self::assemble(ckpt.config, corpus, state)
    }

    fn assemble(
        config: TrainConfig,
        corpus: &'a [RemovalTriplet],
        state: TrainState<DenoiserParams>,
    ) -> Result<Self> {
        Ok(Self {
            schedule: config.schedule()?,
            step_config: StepConfig::from(&config),
            config,
            state,
            corpus,
        })
    }

    pub fn step(&self) -> u64 {
        self.state.step()
    }

    pub fn step_once(&mut self) -> Result<LossReport> {
        let indices = batch_indices(
            self.corpus.len(),
            self.config.batch_size,
            self.step(),
            self.config.seed,
        );
        let batch: Vec<&RemovalTriplet> = indices.iter().map(|&i| &self.corpus[i]).collect();
        train_step(&mut self.state, &batch, &self.step_config, &self.schedule)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.state.model.clone(),
            adam_m: self.state.adam.m.clone(),
            adam_v: self.state.adam.v.clone(),
            step: self.step(),
            rng: RngState::capture(&self.state.rng),
            config: self.config.clone(),
        }
    }
}

/// Result of a [`train`] run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Reports of the steps run by this call, in order.
    pub reports: Vec<LossReport>,
    pub log_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

pub const LOSS_LOG_FILE: &str = "loss.tsv";
pub const FINAL_CHECKPOINT_FILE: &str = "final.mcr";

fn log_row(step: u64, r: &LossReport, seconds: f64) -> String {
    let mut row = String::new();
    writeln!(
        row,
        "{step}\t{}\t{}\t{}\t{seconds:.3}",
        r.rec, r.cons, r.total
    )
    .unwrap();
    row
}

/// Runs `trainer` up to `config.steps`, appending to `out_dir/loss.tsv` and
/// writing periodic plus final checkpoints.
pub fn run_training(mut trainer: Trainer<'_>, out_dir: impl AsRef<Path>) -> Result<TrainOutcome> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let log_path = out_dir.join(LOSS_LOG_FILE);
    let resuming = trainer.step() > 0 && log_path.exists();
    let mut log = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(resuming)
        .truncate(!resuming)
        .open(&log_path)?;
    if !resuming {
        writeln!(log, "{LOSS_LOG_HEADER}")?;
    }
    let start = Instant::now();
    let mut reports = Vec::new();
    while trainer.step() < trainer.config.steps {
        let report = trainer.step_once()?;
        let step = trainer.step();
        let seconds = if trainer.config.log_wall_time {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        };
        log.write_all(log_row(step, &report, seconds).as_bytes())?;
        reports.push(report);
        let every = trainer.config.checkpoint_every;
        if every > 0 && step.is_multiple_of(every) {
            trainer
                .checkpoint()
                .save(out_dir.join(format!("ckpt_{step:06}.mcr")))?;
        }
    }
    log.flush()?;
    let checkpoint = trainer.checkpoint();
    let checkpoint_path = out_dir.join(FINAL_CHECKPOINT_FILE);
    checkpoint.save(&checkpoint_path)?;
    Ok(TrainOutcome {
        checkpoint,
        reports,
        log_path,
        checkpoint_path,
    })
}

/// Trains from scratch on `corpus`.
pub fn train(
    cfg: &TrainConfig,
    corpus: &[RemovalTriplet],
    out_dir: impl AsRef<Path>,
) -> Result<TrainOutcome> {
    run_training(Trainer::new(cfg.clone(), corpus)?, out_dir)
}

/// Finite-difference check of the full objective gradient (all three
/// branches, symmetric gradients) on a random `size×size` instance.
pub fn objective_grad_check(
    model_cfg: &DenoiserConfig,
    size: usize,
    batch: usize,
    lambda_cons: f64,
    per_block: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = rng::seeded(seed);
    let mut params = DenoiserParams::init(*model_cfg, &mut rng)?;
    for l in 0..denoiser::N_LAYERS {
        let [_, bias, proj] = model_cfg.block_ranges(l);
        for i in bias.chain(proj) {
            params.values_mut()[i] = 0.1 * rng::standard_normal(&mut rng);
        }
    }
    let corpus_cfg = crate::imagio::CorpusConfig {
        width: size,
        height: size,
        channels: model_cfg.image_channels,
        seed,
        ..Default::default()
    };
    let sched = NoiseSchedule::default();
    let cfg = StepConfig {
        mode: Mode::Mcr,
        lambda_cons,
        stop_gradient_original: false,
        perturb: PerturbConfig {
            dilation: crate::mask::DilationRadius::Fixed(2),
            ..PerturbConfig::default()
        },
    };
    let samples = (0..batch)
        .map(|i| {
            let triplet = crate::imagio::corpus_triplet(&corpus_cfg, i)?;
            draw_sample_inputs(&triplet, &cfg.perturb, &sched, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut analytic = vec![0.0; params.values().len()];
    objective_gradient(&params, &samples, &cfg, &mut analytic, &mut |_| {})?;
    let coords = denoiser::sample_coordinates(model_cfg, per_block, &mut rng);
    let h = denoiser::GRAD_CHECK_STEP;
    let mut worst = (0.0, 0);
    let mut probe = params.clone();
    for &i in &coords {
        let orig = probe.values()[i];
        probe.values_mut()[i] = orig + h;
        let up = objective_value(&probe, &samples, cfg.mode, lambda_cons)?.total;
        probe.values_mut()[i] = orig - h;
        let down = objective_value(&probe, &samples, cfg.mode, lambda_cons)?.total;
        probe.values_mut()[i] = orig;
        let err = denoiser::relative_error(analytic[i], (up - down) / (2.0 * h));
        if err > worst.0 || err.is_nan() {
            worst = (err, i);
        }
    }
    Ok(GradCheckReport {
        coordinates: coords.len(),
        max_rel_error: worst.0,
        worst_index: worst.1,
        tolerance: denoiser::GRAD_CHECK_TOLERANCE,
        passed: worst.0 < denoiser::GRAD_CHECK_TOLERANCE,
    })
}
