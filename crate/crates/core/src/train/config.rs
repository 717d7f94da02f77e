//! Training configuration and its `key = value` text form.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::diffusion::{NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_TIMESTEPS};
use crate::error::{Error, Result};
use crate::mask::{DilationRadius, Interval, PerturbConfig};

/// Which consistency terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Dilated and reshaped branches.
    Mcr,
    DilateOnly,
    ReshapeOnly,
    /// Reconstruction loss only.
    Baseline,
}

impl Mode {
    pub const ALL: [Mode; 4] = [
        Mode::Mcr,
        Mode::DilateOnly,
        Mode::ReshapeOnly,
        Mode::Baseline,
    ];

    pub fn uses_dilated(self) -> bool {
        matches!(self, Mode::Mcr | Mode::DilateOnly)
    }

    pub fn uses_reshaped(self) -> bool {
        matches!(self, Mode::Mcr | Mode::ReshapeOnly)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Mcr => "mcr",
            Mode::DilateOnly => "dilate_only",
            Mode::ReshapeOnly => "reshape_only",
            Mode::Baseline => "baseline",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown mode {s:?} (expected mcr, dilate_only, reshape_only or baseline)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub lambda_cons: f64,
    pub mode: Mode,
    pub steps: u64,
    pub perturb: PerturbConfig,
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub seed: u64,
    /// Treat the original-mask prediction as a constant inside the
    /// consistency term.
    pub stop_gradient_original: bool,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    pub hidden_width: usize,
    pub time_embed_dim: usize,
    /// When false the log's `seconds` column is written as `0`, making the
    /// whole log a function of the configuration and corpus.
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            batch_size: 2,
            lambda_cons: 2.0,
            mode: Mode::Mcr,
            steps: 2000,
            perturb: PerturbConfig::default(),
            timesteps: DEFAULT_TIMESTEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            seed: 0,
            stop_gradient_original: false,
            checkpoint_every: 0,
            hidden_width: 32,
            time_embed_dim: 16,
            log_wall_time: true,
        }
    }
}

/// Every recognized key, in canonical order.
pub const CONFIG_KEYS: &[&str] = &[
    "mode",
    "steps",
    "batch_size",
    "learning_rate",
    "lambda_cons",
    "stop_gradient_original",
    "seed",
    "checkpoint_every",
    "log_wall_time",
    "timesteps",
    "beta_start",
    "beta_end",
    "hidden_width",
    "time_embed_dim",
    "dilation_k",
    "rect_probability",
    "stroke_count",
    "stroke_width",
    "stroke_vertices",
    "rect_count",
    "rect_size_fraction",
    "coverage_cap",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got {value:?}"
        ))),
    }
}

/// `lo..hi`, or a single value meaning `lo = hi`.
fn parse_interval<T: FromStr + Copy>(key: &str, value: &str) -> Result<Interval<T>> {
    match value.split_once("..") {
        Some((lo, hi)) => Ok(Interval::new(
            parse(key, lo.trim())?,
            parse(key, hi.trim())?,
        )),
        None => {
            let v = parse(key, value)?;
            Ok(Interval::new(v, v))
        }
    }
}

fn parse_dilation(value: &str) -> Result<DilationRadius> {
    if value == "auto" {
        return Ok(DilationRadius::Auto);
    }
    let span: Interval<usize> = parse_interval("dilation_k", value)?;
    Ok(if value.contains("..") {
        DilationRadius::Uniform {
            lo: span.lo,
            hi: span.hi,
        }
    } else {
        DilationRadius::Fixed(span.lo)
    })
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(self.lambda_cons >= 0.0 && self.lambda_cons.is_finite()) {
            return bad(format!(
                "lambda_cons must be nonnegative, got {}",
                self.lambda_cons
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        self.perturb
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.schedule().map_err(|e| Error::Config(e.to_string()))?;
        crate::denoiser::DenoiserConfig {
            image_channels: 1,
            hidden_width: self.hidden_width,
            time_embed_dim: self.time_embed_dim,
        }
        .validate()
        .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.timesteps, self.beta_start, self.beta_end)
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let r = &mut self.perturb.random;
        match key {
            "mode" => self.mode = value.parse()?,
            "steps" => self.steps = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "lambda_cons" => self.lambda_cons = parse(key, value)?,
            "stop_gradient_original" => self.stop_gradient_original = parse_bool(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "log_wall_time" => self.log_wall_time = parse_bool(key, value)?,
            "timesteps" => self.timesteps = parse(key, value)?,
            "beta_start" => self.beta_start = parse(key, value)?,
            "beta_end" => self.beta_end = parse(key, value)?,
            "hidden_width" => self.hidden_width = parse(key, value)?,
            "time_embed_dim" => self.time_embed_dim = parse(key, value)?,
            "dilation_k" => self.perturb.dilation = parse_dilation(value)?,
            "rect_probability" => self.perturb.rect_probability = parse(key, value)?,
            "stroke_count" => r.num_strokes = parse_interval(key, value)?,
            "stroke_width" => r.stroke_width = parse_interval(key, value)?,
            "stroke_vertices" => r.stroke_vertices = parse_interval(key, value)?,
            "rect_count" => r.num_rects = parse_interval(key, value)?,
            "rect_size_fraction" => r.rect_size_fraction = parse_interval(key, value)?,
            "coverage_cap" => r.target_coverage_cap = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment;
    /// unknown keys and duplicate keys are errors.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key {key:?}",
                    n + 1
                )));
            }
            self.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text: every key in [`CONFIG_KEYS`] order. Parsing it back
    /// yields an identical config.
    pub fn to_text(&self) -> String {
        let r = &self.perturb.random;
        let interval = |i: &Interval<usize>| format!("{}..{}", i.lo, i.hi);
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        kv("mode", self.mode.to_string());
        kv("steps", self.steps.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("lambda_cons", self.lambda_cons.to_string());
        kv(
            "stop_gradient_original",
            self.stop_gradient_original.to_string(),
        );
        kv("seed", self.seed.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("log_wall_time", self.log_wall_time.to_string());
        kv("timesteps", self.timesteps.to_string());
        kv("beta_start", self.beta_start.to_string());
        kv("beta_end", self.beta_end.to_string());
        kv("hidden_width", self.hidden_width.to_string());
        kv("time_embed_dim", self.time_embed_dim.to_string());
        kv("dilation_k", self.perturb.dilation.to_string());
        kv(
            "rect_probability",
            self.perturb.rect_probability.to_string(),
        );
        kv("stroke_count", interval(&r.num_strokes));
        kv("stroke_width", interval(&r.stroke_width));
        kv("stroke_vertices", interval(&r.stroke_vertices));
        kv("rect_count", interval(&r.num_rects));
        kv(
            "rect_size_fraction",
            format!("{}..{}", r.rect_size_fraction.lo, r.rect_size_fraction.hi),
        );
        kv("coverage_cap", r.target_coverage_cap.to_string());
        out
    }

    /// SHA-256 of the canonical text.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_text().as_bytes()).into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_training_protocol() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate, 5e-5);
        assert_eq!(c.batch_size, 2);
        assert_eq!(c.lambda_cons, 2.0);
        assert_eq!(c.mode, Mode::Mcr);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn canonical_text_round_trips() {
        let mut c = TrainConfig::default();
        c.apply_text("mode = reshape_only\nlearning_rate = 1.25e-3\ndilation_k = 1..3\nrect_size_fraction = 0.2..0.3\n")
            .unwrap();
        let back = TrainConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.digest(), c.digest());
        assert_eq!(c.perturb.dilation, DilationRadius::Uniform { lo: 1, hi: 3 });
    }

    #[test]
    fn comments_and_whitespace() {
        let c = TrainConfig::from_text(
            "# header\n  steps=10   # trailing\n\nseed = 4\ndilation_k = 3\n",
        )
        .unwrap();
        assert_eq!((c.steps, c.seed), (10, 4));
        assert_eq!(c.perturb.dilation, DilationRadius::Fixed(3));
    }

    #[test]
    fn errors() {
        for bad in [
            "stepz = 1",
            "steps",
            "steps = -1",
            "mode = fancy",
            "steps = 1\nsteps = 2",
            "learning_rate = 0",
            "lambda_cons = -1",
            "batch_size = 0",
            "rect_probability = 2",
            "stop_gradient_original = maybe",
            "stroke_count = 4..1",
            "beta_end = 1.5",
        ] {
            assert!(
                matches!(TrainConfig::from_text(bad), Err(Error::Config(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn digest_tracks_content() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        b.seed = 1;
        assert_ne!(a.digest(), b.digest());
    }
}
