//! Forward noising, the noise schedule and the deterministic strided sampler.
//!
//! The model works in the `[-1, 1]` domain; [`inpaint`] takes and returns
//! `[0, 1]` images.

use crate::error::{Error, Result};
use crate::imagio::ImageTensor;
use crate::mask::BinaryMask;
use crate::rng::Rng;
use crate::train::cond_encode;

pub const DEFAULT_TIMESTEPS: usize = 200;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;
pub const DEFAULT_SAMPLE_STEPS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// `beta` interpolated linearly from `beta_start` at `t = 0` to `beta_end`
    /// at `t = T-1`.
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if timesteps < 2 {
            return Err(Error::InvalidRange(format!(
                "need at least 2 timesteps, got {timesteps}"
            )));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidRange(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let span = (timesteps - 1) as f64;
        let betas = (0..timesteps)
            .map(|t| beta_start + (beta_end - beta_start) * t as f64 / span)
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidRange(format!("beta {b} not in (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bars
            .get(t)
            .copied()
            .ok_or(Error::TimestepOutOfRange { t, len: self.len() })
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_TIMESTEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).unwrap()
    }
}

/// `x_t = sqrt(ᾱ_t)·x0 + sqrt(1−ᾱ_t)·eps`.
pub fn forward_sample(
    x0: &ImageTensor,
    t: usize,
    eps: &ImageTensor,
    sched: &NoiseSchedule,
) -> Result<ImageTensor> {
    x0.check_same_shape(eps)?;
    let ab = sched.alpha_bar(t)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.zip_map(eps, |x, e| a * x + b * e))
}

/// Anything that predicts the injected noise from `(x_t, t, cond)`.
pub trait NoisePredictor {
    fn predict_noise(&self, x_t: &ImageTensor, t: usize, cond: &ImageTensor)
        -> Result<ImageTensor>;
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for &P {
    fn predict_noise(
        &self,
        x_t: &ImageTensor,
        t: usize,
        cond: &ImageTensor,
    ) -> Result<ImageTensor> {
        (**self).predict_noise(x_t, t, cond)
    }
}

/// `n_steps` timesteps evenly spread over `[0, T-1]`, descending, always
/// starting at `T-1` and (for `n_steps ≥ 2`) ending at `0`.
pub fn strided_timesteps(timesteps: usize, n_steps: usize) -> Result<Vec<usize>> {
    if n_steps == 0 || n_steps > timesteps {
        return Err(Error::StepCountInvalid {
            steps: n_steps,
            len: timesteps,
        });
    }
    if n_steps == 1 {
        return Ok(vec![timesteps - 1]);
    }
    let last = timesteps - 1;
    Ok((0..n_steps)
        .rev()
        .map(|i| i * last / (n_steps - 1))
        .collect())
}

/// Clean-image estimate from a noise prediction, clamped to `[-1, 1]`.
pub fn predict_x0(x_t: &ImageTensor, eps_hat: &ImageTensor, alpha_bar: f64) -> ImageTensor {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x_t.zip_map(eps_hat, |x, e| ((x - b * e) / a).clamp(-1.0, 1.0))
}

/// One deterministic (η = 0) update from `t` to `t_prev`. Returns
/// `(x_{t_prev}, x0_hat)`.
pub fn ddim_step(
    x_t: &ImageTensor,
    eps_hat: &ImageTensor,
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
) -> Result<(ImageTensor, ImageTensor)> {
    x_t.check_same_shape(eps_hat)?;
    let x0_hat = predict_x0(x_t, eps_hat, sched.alpha_bar(t)?);
    let ab_prev = sched.alpha_bar(t_prev)?;
    let (a, b) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    let x_prev = x0_hat.zip_map(eps_hat, |x, e| a * x + b * e);
    Ok((x_prev, x0_hat))
}

/// Generates an image for `cond` starting from `x_T ~ N(0, I)` drawn from
/// `rng`. Returns the final clean estimate mapped to `[0, 1]`.
pub fn strided_deterministic_sample(
    model: &impl NoisePredictor,
    cond: &ImageTensor,
    sched: &NoiseSchedule,
    n_steps: usize,
    rng: &mut Rng,
) -> Result<ImageTensor> {
    let steps = strided_timesteps(sched.len(), n_steps)?;
    if cond.channels() < 2 {
        return Err(Error::ShapeMismatch(format!(
            "conditioning {} lacks a mask channel",
            cond.shape_string()
        )));
    }
    let mut x = ImageTensor::standard_normal(cond.channels() - 1, cond.height(), cond.width(), rng);
    let mut x0_hat = x.clone();
    for (i, &t) in steps.iter().enumerate() {
        let eps_hat = model.predict_noise(&x, t, cond)?;
        x.check_same_shape(&eps_hat)?;
        match steps.get(i + 1) {
            Some(&t_prev) => (x, x0_hat) = ddim_step(&x, &eps_hat, t, t_prev, sched)?,
            None => x0_hat = predict_x0(&x, &eps_hat, sched.alpha_bar(t)?),
        }
    }
    Ok(x0_hat.to_image_domain())
}

/// Samples from the masked-image conditioning, then keeps generated pixels
/// only inside `mask`; everything else is copied from `x0` exactly.
pub fn inpaint(
    model: &impl NoisePredictor,
    x0: &ImageTensor,
    mask: &BinaryMask,
    sched: &NoiseSchedule,
    n_steps: usize,
    rng: &mut Rng,
) -> Result<ImageTensor> {
    x0.check_mask(mask)?;
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let cond = cond_encode(&x0.to_model_domain(), mask)?;
    let generated = strided_deterministic_sample(model, &cond, sched, n_steps, rng)?;
    ImageTensor::composite(&generated, x0, mask)
}
