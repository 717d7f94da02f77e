//! Tiny conditional noise predictor with hand-written reverse-mode gradients.
//!
//! Architecture (fixed, part of the checkpoint contract): the noisy sample
//! and the conditioning are concatenated on channels, then three 3×3
//! same-padded convolutions. Each layer adds a per-channel bias plus a learned
//! projection of the sinusoidal timestep embedding; the first two layers are
//! followed by SiLU, the last is affine.
//!
//! All parameters live in one flat `Vec<f64>`. Per layer, in order: kernel
//! `[out][in][3][3]`, bias `[out]`, time projection `[out][embed_dim]`.

use rand::Rng as _;

use crate::conv::{self, MatRef, TAPS};
use crate::diffusion::NoisePredictor;
use crate::error::{Error, Result};
use crate::imagio::ImageTensor;
use crate::rng::{self, Rng};

pub const N_LAYERS: usize = 3;
pub const PARAMS_MAGIC: &[u8; 4] = b"MCR1";
/// Magic plus six little-endian `u32` config fields.
pub const PARAMS_HEADER_BYTES: usize = 4 + 6 * 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenoiserConfig {
    /// Channels of the image being denoised (1 or 3).
    pub image_channels: usize,
    pub hidden_width: usize,
    pub time_embed_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            image_channels: 1,
            hidden_width: 32,
            time_embed_dim: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerLayout {
    in_channels: usize,
    out_channels: usize,
    weight: usize,
    bias: usize,
    proj: usize,
    end: usize,
}

impl DenoiserConfig {
    /// Noisy image plus conditioning (masked image and mask).
    pub fn in_channels(&self) -> usize {
        self.image_channels + self.image_channels + 1
    }

    pub fn n_layers(&self) -> usize {
        N_LAYERS
    }

    pub fn kernel(&self) -> usize {
        conv::KERNEL
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_channels == 0 {
            return Err(Error::InvalidRange(
                "image_channels must be positive".into(),
            ));
        }
        if self.hidden_width < 4 {
            return Err(Error::InvalidRange(format!(
                "hidden_width {} below 4",
                self.hidden_width
            )));
        }
        if self.time_embed_dim < 2 || !self.time_embed_dim.is_multiple_of(2) {
            return Err(Error::InvalidRange(format!(
                "time_embed_dim {} must be even and at least 2",
                self.time_embed_dim
            )));
        }
        Ok(())
    }

    fn layers(&self) -> [LayerLayout; N_LAYERS] {
        let dims = [
            (self.in_channels(), self.hidden_width),
            (self.hidden_width, self.hidden_width),
            (self.hidden_width, self.image_channels),
        ];
        let mut offset = 0;
        dims.map(|(in_channels, out_channels)| {
            let weight = offset;
            let bias = weight + out_channels * in_channels * TAPS;
            let proj = bias + out_channels;
            let end = proj + out_channels * self.time_embed_dim;
            offset = end;
            LayerLayout {
                in_channels,
                out_channels,
                weight,
                bias,
                proj,
                end,
            }
        })
    }

    pub fn param_count(&self) -> usize {
        self.layers()[N_LAYERS - 1].end
    }

    /// Fan-in of each layer's kernel (`in_channels · 9`).
    pub fn fan_in(&self, layer: usize) -> usize {
        self.layers()[layer].in_channels * TAPS
    }

    /// Flat index ranges of `(kernel, bias, time projection)` for `layer`.
    pub fn block_ranges(&self, layer: usize) -> [std::ops::Range<usize>; 3] {
        let l = self.layers()[layer];
        [l.weight..l.bias, l.bias..l.proj, l.proj..l.end]
    }

    pub fn header_fields(&self) -> [u32; 6] {
        [
            self.image_channels as u32,
            self.in_channels() as u32,
            self.hidden_width as u32,
            N_LAYERS as u32,
            conv::KERNEL as u32,
            self.time_embed_dim as u32,
        ]
    }
}

/// Sinusoidal embedding: `[sin(t·ω_i)…, cos(t·ω_i)…]` with `ω_i` geometric
/// from 1 down to 10⁻⁴.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let freqs: Vec<f64> = (0..half)
        .map(|i| {
            if half == 1 {
                1.0
            } else {
                10_000f64.powf(-(i as f64) / (half - 1) as f64)
            }
        })
        .collect();
    let t = t as f64;
    freqs
        .iter()
        .map(|w| (t * w).sin())
        .chain(freqs.iter().map(|w| (t * w).cos()))
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Layers with at most this many output channels skip im2col.
const DIRECT_MAX_OUT: usize = 4;

thread_local! {
    static SCRATCH: std::cell::RefCell<Vec<f64>> = const { std::cell::RefCell::new(Vec::new()) };
}

/// Runs `f` on a reused per-thread buffer of `len` values with unspecified
/// contents.
fn with_scratch<R>(len: usize, f: impl FnOnce(&mut [f64]) -> R) -> R {
    SCRATCH.with(|cell| {
        let mut buf = cell.take();
        if buf.len() < len {
            buf.resize(len, 0.0);
        }
        let r = f(&mut buf[..len]);
        cell.replace(buf);
        r
    })
}

/// Model weights θ.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    config: DenoiserConfig,
    values: Vec<f64>,
}

/// Activations retained by [`DenoiserParams::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    config: DenoiserConfig,
    height: usize,
    width: usize,
    embedding: Vec<f64>,
    /// Each layer's input.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }
}

impl DenoiserParams {
    pub fn zeros(config: DenoiserConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            values: vec![0.0; config.param_count()],
        })
    }

    /// He-normal kernels (`std = sqrt(2 / fan_in)`), zero biases and time
    /// projections.
    pub fn init(config: DenoiserConfig, rng: &mut Rng) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        for layer in 0..N_LAYERS {
            let std = (2.0 / config.fan_in(layer) as f64).sqrt();
            let [kernel, _, _] = config.block_ranges(layer);
            for v in &mut params.values[kernel] {
                *v = std * rng::standard_normal(rng);
            }
        }
        Ok(params)
    }

    pub fn from_values(config: DenoiserConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if values.len() != config.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters for a config needing {}",
                values.len(),
                config.param_count()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidRange("non-finite parameter".into()));
        }
        Ok(Self { config, values })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn check_inputs(&self, x_t: &ImageTensor, cond: &ImageTensor) -> Result<()> {
        let c = self.config.image_channels;
        if x_t.channels() != c || cond.channels() != c + 1 {
            return Err(Error::ShapeMismatch(format!(
                "expected {c} image and {} conditioning channels, got {} and {}",
                c + 1,
                x_t.channels(),
                cond.channels()
            )));
        }
        if x_t.height() != cond.height() || x_t.width() != cond.width() {
            return Err(Error::ShapeMismatch(format!(
                "x_t {} vs cond {}",
                x_t.shape_string(),
                cond.shape_string()
            )));
        }
        Ok(())
    }

    /// Per-channel additive term: bias plus projected time embedding.
    fn channel_offsets(&self, layer: &LayerLayout, embedding: &[f64]) -> Vec<f64> {
        let e = embedding.len();
        (0..layer.out_channels)
            .map(|o| {
                let proj = &self.values[layer.proj + o * e..layer.proj + (o + 1) * e];
                self.values[layer.bias + o]
                    + proj.iter().zip(embedding).map(|(p, v)| p * v).sum::<f64>()
            })
            .collect()
    }

    /// Noise prediction with the same shape as `x_t`, plus the cache needed
    /// by [`backward`](Self::backward).
    pub fn forward(
        &self,
        x_t: &ImageTensor,
        t: usize,
        cond: &ImageTensor,
    ) -> Result<(ImageTensor, ForwardCache)> {
        self.check_inputs(x_t, cond)?;
        let (h, w) = (x_t.height(), x_t.width());
        let n = h * w;
        let embedding = time_embedding(t, self.config.time_embed_dim);
        let mut input = ImageTensor::concat_channels(&[x_t, cond])?.into_data();
        let mut inputs = Vec::with_capacity(N_LAYERS);
        let mut pre = Vec::with_capacity(N_LAYERS - 1);
        let layers = self.config.layers();
        for (index, layer) in layers.iter().enumerate() {
            let k = layer.in_channels * TAPS;
            let mut out = vec![0.0; layer.out_channels * n];
            for (plane, offset) in out
                .chunks_mut(n)
                .zip(self.channel_offsets(layer, &embedding))
            {
                plane.fill(offset);
            }
            let weight = &self.values[layer.weight..layer.bias];
            if layer.out_channels <= DIRECT_MAX_OUT {
                conv::conv_direct_add(
                    &input,
                    layer.in_channels,
                    layer.out_channels,
                    h,
                    w,
                    weight,
                    &mut out,
                );
            } else {
                with_scratch(k * n, |col| {
                    conv::im2col(&input, layer.in_channels, h, w, col);
                    conv::gemm(
                        layer.out_channels,
                        k,
                        n,
                        MatRef::row_major(weight, k),
                        MatRef::row_major(col, n),
                        1.0,
                        &mut out,
                    );
                });
            }
            if index + 1 < N_LAYERS {
                inputs.push(std::mem::replace(
                    &mut input,
                    out.iter().map(|&v| silu(v)).collect(),
                ));
                pre.push(out);
            } else {
                inputs.push(std::mem::replace(&mut input, out));
            }
        }
        let eps_hat = ImageTensor::new(self.config.image_channels, h, w, input)?;
        let cache = ForwardCache {
            config: self.config,
            height: h,
            width: w,
            embedding,
            inputs,
            pre,
        };
        Ok((eps_hat, cache))
    }

    /// Adds `∂⟨grad_out, eps_hat⟩/∂θ` into `grad` (same flat layout as the
    /// parameters).
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        grad_out: &ImageTensor,
        grad: &mut [f64],
    ) -> Result<()> {
        if cache.config != self.config || cache.inputs.len() != N_LAYERS {
            return Err(Error::CacheMismatch(
                "cache was produced by a different architecture".into(),
            ));
        }
        if grad_out.channels() != self.config.image_channels
            || grad_out.height() != cache.height
            || grad_out.width() != cache.width
        {
            return Err(Error::CacheMismatch(format!(
                "grad_out {} does not match cached output {}x{}x{}",
                grad_out.shape_string(),
                self.config.image_channels,
                cache.height,
                cache.width
            )));
        }
        if grad.len() != self.values.len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient buffer of {} for {} parameters",
                grad.len(),
                self.values.len()
            )));
        }
        let (h, w) = (cache.height, cache.width);
        let n = h * w;
        let e = cache.embedding.len();
        let layers = self.config.layers();
        let mut dpre = grad_out.data().to_vec();
        for index in (0..N_LAYERS).rev() {
            let layer = &layers[index];
            let k = layer.in_channels * TAPS;
            let direct = layer.out_channels <= DIRECT_MAX_OUT;
            if direct {
                let g = &mut grad[layer.weight..layer.bias];
                conv::conv_direct_weight_grad(
                    &cache.inputs[index],
                    &dpre,
                    layer.in_channels,
                    layer.out_channels,
                    h,
                    w,
                    g,
                );
            } else {
                with_scratch(k * n, |col| {
                    conv::im2col(&cache.inputs[index], layer.in_channels, h, w, col);
                    conv::gemm(
                        layer.out_channels,
                        n,
                        k,
                        MatRef::row_major(&dpre, n),
                        MatRef::transposed(col, n),
                        1.0,
                        &mut grad[layer.weight..layer.bias],
                    );
                });
            }
            for (o, plane) in dpre.chunks(n).enumerate() {
                let db: f64 = plane.iter().sum();
                grad[layer.bias + o] += db;
                for (g, v) in grad[layer.proj + o * e..layer.proj + (o + 1) * e]
                    .iter_mut()
                    .zip(&cache.embedding)
                {
                    *g += db * v;
                }
            }
            if index == 0 {
                break;
            }
            let weight = &self.values[layer.weight..layer.bias];
            let mut dinput = vec![0.0; layer.in_channels * n];
            if direct {
                conv::conv_direct_input_grad(
                    &dpre,
                    layer.in_channels,
                    layer.out_channels,
                    h,
                    w,
                    weight,
                    &mut dinput,
                );
            } else {
                with_scratch(k * n, |dcol| {
                    conv::gemm(
                        k,
                        layer.out_channels,
                        n,
                        MatRef::transposed(weight, k),
                        MatRef::row_major(&dpre, n),
                        0.0,
                        dcol,
                    );
                    conv::col2im_add(dcol, layer.in_channels, h, w, &mut dinput);
                });
            }
            for (d, &p) in dinput.iter_mut().zip(&cache.pre[index - 1]) {
                *d *= silu_grad(p);
            }
            dpre = dinput;
        }
        Ok(())
    }

    /// Exact gradient of `⟨grad_out, eps_hat⟩` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &ImageTensor) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.values.len()];
        self.backward_into(cache, grad_out, &mut grad)?;
        Ok(grad)
    }

    /// Parameter block: magic, config fields as `u32` LE, then every value
    /// as `f64` LE in layout order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(PARAMS_HEADER_BYTES + 8 * self.values.len());
        out.extend_from_slice(PARAMS_MAGIC);
        for f in self.config.header_fields() {
            out.extend_from_slice(&f.to_le_bytes());
        }
        write_f64s(&mut out, &self.values);
        out
    }

    /// Decodes a parameter block from the front of `bytes`, returning the
    /// parameters and the number of bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        let corrupt = |m: String| Error::CorruptCheckpoint(m);
        if bytes.len() < PARAMS_HEADER_BYTES || &bytes[..4] != PARAMS_MAGIC {
            return Err(corrupt("missing MCR1 header".into()));
        }
        let field =
            |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let config = DenoiserConfig {
            image_channels: field(0),
            hidden_width: field(2),
            time_embed_dim: field(5),
        };
        // caps keep a hostile header from requesting a huge allocation
        if config.image_channels > 4 || config.hidden_width > 4096 || config.time_embed_dim > 4096 {
            return Err(corrupt("config fields out of range".into()));
        }
        config.validate().map_err(|e| corrupt(e.to_string()))?;
        if config.header_fields() != [0, 1, 2, 3, 4, 5].map(|i| field(i) as u32) {
            return Err(corrupt("inconsistent architecture fields".into()));
        }
        let count = config.param_count();
        let end = PARAMS_HEADER_BYTES + 8 * count;
        if bytes.len() < end {
            return Err(corrupt(format!(
                "parameter block truncated: need {end} bytes, have {}",
                bytes.len()
            )));
        }
        let values = read_f64s(&bytes[PARAMS_HEADER_BYTES..end]);
        Self::from_values(config, values)
            .map(|p| (p, end))
            .map_err(|e| corrupt(e.to_string()))
    }
}

impl NoisePredictor for DenoiserParams {
    fn predict_noise(
        &self,
        x_t: &ImageTensor,
        t: usize,
        cond: &ImageTensor,
    ) -> Result<ImageTensor> {
        self.forward(x_t, t, cond).map(|(eps, _)| eps)
    }
}

pub(crate) fn write_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn read_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub coordinates: usize,
    pub max_rel_error: f64,
    /// Parameter index with the largest relative error.
    pub worst_index: usize,
    pub tolerance: f64,
    pub passed: bool,
}

pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;
pub const GRAD_CHECK_STEP: f64 = 1e-4;

/// Relative error with a small floor so that two near-zero values agree.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}

/// Coordinates spread over every parameter block: `per_block` from each
/// kernel, bias and projection, drawn uniformly within the block.
pub fn sample_coordinates(config: &DenoiserConfig, per_block: usize, rng: &mut Rng) -> Vec<usize> {
    (0..N_LAYERS)
        .flat_map(|l| config.block_ranges(l))
        .flat_map(|range| {
            (0..per_block)
                .map(|_| rng.random_range(range.clone()))
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Compares `backward` against central differences of `⟨g, forward(θ)⟩` on a
/// random 8×8 instance with nonzero biases and time projections.
pub fn grad_check(config: &DenoiserConfig, seed: u64) -> Result<GradCheckReport> {
    grad_check_with(config, seed, |params, cache, g| params.backward(cache, g))
}

/// [`grad_check`] with a substitute backward pass.
pub fn grad_check_with<F>(
    config: &DenoiserConfig,
    seed: u64,
    backward: F,
) -> Result<GradCheckReport>
where
    F: Fn(&DenoiserParams, &ForwardCache, &ImageTensor) -> Result<Vec<f64>>,
{
    let mut rng = rng::seeded(seed);
    let mut params = DenoiserParams::init(*config, &mut rng)?;
    for l in 0..N_LAYERS {
        let [_, bias, proj] = config.block_ranges(l);
        for i in bias.chain(proj) {
            params.values[i] = 0.1 * rng::standard_normal(&mut rng);
        }
    }
    let (h, w) = (8, 8);
    let c = config.image_channels;
    let x_t = ImageTensor::standard_normal(c, h, w, &mut rng);
    let cond = ImageTensor::standard_normal(c + 1, h, w, &mut rng);
    let g = ImageTensor::standard_normal(c, h, w, &mut rng);
    let t = rng.random_range(0..200);

    let (_, cache) = params.forward(&x_t, t, &cond)?;
    let analytic = backward(&params, &cache, &g)?;
    let objective = |p: &DenoiserParams| -> Result<f64> {
        let (out, _) = p.forward(&x_t, t, &cond)?;
        Ok(out.data().iter().zip(g.data()).map(|(a, b)| a * b).sum())
    };
    let coords = sample_coordinates(config, 12, &mut rng);
    let mut worst = (0.0, 0);
    let mut probe = params.clone();
    for &i in &coords {
        let orig = probe.values[i];
        probe.values[i] = orig + GRAD_CHECK_STEP;
        let up = objective(&probe)?;
        probe.values[i] = orig - GRAD_CHECK_STEP;
        let down = objective(&probe)?;
        probe.values[i] = orig;
        let numeric = (up - down) / (2.0 * GRAD_CHECK_STEP);
        let err = relative_error(analytic[i], numeric);
        if err > worst.0 || err.is_nan() {
            worst = (err, i);
        }
    }
    Ok(GradCheckReport {
        coordinates: coords.len(),
        max_rel_error: worst.0,
        worst_index: worst.1,
        tolerance: GRAD_CHECK_TOLERANCE,
        passed: worst.0 < GRAD_CHECK_TOLERANCE,
    })
}
