//! Image tensors, PGM/PPM file I/O and the procedural object-removal corpus.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, Interval};
use crate::pnm::{self, Pnm};
use crate::rng::{self, Rng};

/// Channel-major `C×H×W` array of `f64`. Images hold values in `[0, 1]`;
/// model-internal tensors (noise, activations) are unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 || data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {channels}x{height}x{width} tensor",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        assert!(
            channels > 0 && height > 0 && width > 0,
            "tensor dimensions must be positive"
        );
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut t = Self::zeros(channels, height, width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    t.data[(c * height + y) * width + x] = f(c, y, x);
                }
            }
        }
        t
    }

    /// I.i.d. standard normal entries.
    pub fn standard_normal(channels: usize, height: usize, width: usize, rng: &mut Rng) -> Self {
        let mut t = Self::zeros(channels, height, width);
        for v in &mut t.data {
            *v = rng::standard_normal(rng);
        }
        t
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.channels, self.height, self.width)
    }

    pub fn check_same_shape(&self, other: &ImageTensor) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{} vs {}",
                self.shape_string(),
                other.shape_string()
            )))
        }
    }

    pub fn check_mask(&self, mask: &BinaryMask) -> Result<()> {
        if mask.width() == self.width && mask.height() == self.height {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "image {}x{} vs mask {}x{}",
                self.width,
                self.height,
                mask.width(),
                mask.height()
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageTensor {
        ImageTensor {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    /// Pointwise combination; panics on shape mismatch (callers check first).
    pub fn zip_map(&self, other: &ImageTensor, f: impl Fn(f64, f64) -> f64) -> ImageTensor {
        assert!(
            self.same_shape(other),
            "zip_map on {} vs {}",
            self.shape_string(),
            other.shape_string()
        );
        ImageTensor {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            ..*self
        }
    }

    /// `[0, 1]` image values to the model's `[-1, 1]` domain.
    pub fn to_model_domain(&self) -> ImageTensor {
        self.map(|v| 2.0 * v - 1.0)
    }

    pub fn to_image_domain(&self) -> ImageTensor {
        self.map(|v| (v + 1.0) / 2.0)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> ImageTensor {
        self.map(|v| v.clamp(lo, hi))
    }

    /// Stacks tensors with equal spatial size along the channel axis.
    pub fn concat_channels(parts: &[&ImageTensor]) -> Result<ImageTensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::ShapeMismatch("nothing to concatenate".into()))?;
        let mut data = Vec::new();
        let mut channels = 0;
        for p in parts {
            if p.height != first.height || p.width != first.width {
                return Err(Error::ShapeMismatch(format!(
                    "concat {} with {}",
                    first.shape_string(),
                    p.shape_string()
                )));
            }
            channels += p.channels;
            data.extend_from_slice(&p.data);
        }
        ImageTensor::new(channels, first.height, first.width, data)
    }

    pub fn max_abs_diff(&self, other: &ImageTensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Per-pixel channel mean as a single-channel tensor.
    pub fn luminance(&self) -> ImageTensor {
        if self.channels == 1 {
            return self.clone();
        }
        let n = self.pixels();
        let mut out = vec![0.0; n];
        for c in 0..self.channels {
            for (o, v) in out.iter_mut().zip(self.plane(c)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= self.channels as f64;
        }
        ImageTensor::new(1, self.height, self.width, out).unwrap()
    }

    /// Per pixel `mask ? inside : outside`, broadcasting the mask over channels.
    pub fn composite(
        inside: &ImageTensor,
        outside: &ImageTensor,
        mask: &BinaryMask,
    ) -> Result<ImageTensor> {
        inside.check_same_shape(outside)?;
        inside.check_mask(mask)?;
        let n = inside.pixels();
        let mut out = outside.clone();
        for c in 0..inside.channels {
            for (i, &m) in mask.bits().iter().enumerate() {
                if m {
                    out.data[c * n + i] = inside.data[c * n + i];
                }
            }
        }
        Ok(out)
    }

    /// Values quantized to 8 bits after clamping to `[0, 1]`.
    pub fn quantized(&self) -> ImageTensor {
        self.map(|v| quantize(v) as f64 / 255.0)
    }

    pub fn to_pnm_bytes(&self) -> Result<Vec<u8>> {
        let n = self.pixels();
        let samples = match self.channels {
            1 => self.data.iter().map(|&v| quantize(v)).collect(),
            3 => (0..n)
                .flat_map(|i| (0..3).map(move |c| (c, i)))
                .map(|(c, i)| quantize(self.data[c * n + i]))
                .collect(),
            c => {
                return Err(Error::ShapeMismatch(format!(
                    "cannot write a {c}-channel image"
                )))
            }
        };
        Ok(pnm::encode(&Pnm {
            channels: self.channels,
            width: self.width,
            height: self.height,
            samples,
        }))
    }

    pub fn from_pnm_bytes(bytes: &[u8]) -> Result<ImageTensor> {
        let img = pnm::decode(bytes)?;
        let n = img.width * img.height;
        let mut data = vec![0.0; img.channels * n];
        for (i, &s) in img.samples.iter().enumerate() {
            let (pixel, c) = (i / img.channels, i % img.channels);
            data[c * n + pixel] = s as f64 / 255.0;
        }
        ImageTensor::new(img.channels, img.height, img.width, data)
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Reads a `P5` (1 channel) or `P6` (3 channel) file.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    ImageTensor::from_pnm_bytes(&fs::read(path)?)
}

/// Writes a 1-channel image as `P5`, 3-channel as `P6`; values are clamped
/// to `[0, 1]` and rounded to 8 bits.
pub fn save_image(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, img.to_pnm_bytes()?)?;
    Ok(())
}

/// Scene with an object, the same scene without it, and the object's mask.
#[derive(Debug, Clone, PartialEq)]
pub struct RemovalTriplet {
    pub composite: ImageTensor,
    pub ground_truth: ImageTensor,
    pub mask: BinaryMask,
}

impl RemovalTriplet {
    /// Checks shapes, mask nonemptiness and exact agreement outside the mask.
    pub fn validate(&self) -> Result<()> {
        self.composite.check_same_shape(&self.ground_truth)?;
        self.composite.check_mask(&self.mask)?;
        if self.mask.is_empty() {
            return Err(Error::EmptyMask);
        }
        let n = self.composite.pixels();
        for c in 0..self.composite.channels() {
            for (i, &m) in self.mask.bits().iter().enumerate() {
                if !m && self.composite.data[c * n + i] != self.ground_truth.data[c * n + i] {
                    return Err(Error::MalformedFile(format!(
                        "composite differs from ground truth outside the mask at channel {c}, pixel {i}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackgroundKind {
    Gradient,
    Stripes,
    SmoothNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Disc,
    Rectangle,
    Polygon,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub background_kinds: Vec<BackgroundKind>,
    pub shape_kinds: Vec<ShapeKind>,
    pub shape_area_fraction: Interval<f64>,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            count: 200,
            width: 64,
            height: 64,
            channels: 1,
            background_kinds: vec![
                BackgroundKind::Gradient,
                BackgroundKind::Stripes,
                BackgroundKind::SmoothNoise,
            ],
            shape_kinds: vec![ShapeKind::Disc, ShapeKind::Rectangle, ShapeKind::Polygon],
            shape_area_fraction: Interval::new(0.03, 0.15),
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::InvalidRange("count must be at least 1".into()));
        }
        if self.width < 8 || self.height < 8 {
            return Err(Error::InvalidRange(format!(
                "image size {}x{} below 8x8",
                self.width, self.height
            )));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::InvalidRange(format!(
                "channels must be 1 or 3, got {}",
                self.channels
            )));
        }
        if self.background_kinds.is_empty() || self.shape_kinds.is_empty() {
            return Err(Error::InvalidRange(
                "background and shape kinds must be nonempty".into(),
            ));
        }
        let a = self.shape_area_fraction;
        a.validate("shape_area_fraction")?;
        if !(a.lo > 0.0 && a.hi <= 0.5) {
            return Err(Error::InvalidRange(
                "shape_area_fraction must lie in (0, 0.5]".into(),
            ));
        }
        Ok(())
    }
}

/// Attempts at drawing a shape with acceptable area and contrast.
pub const MAX_SYNTH_ATTEMPTS: usize = 100;
/// Minimum per-channel gap between the object and the mean background under it.
pub const MIN_CONTRAST: f64 = 0.2;

fn background_plane(kind: BackgroundKind, w: usize, h: usize, rng: &mut Rng) -> Vec<f64> {
    let (fw, fh) = (w as f64, h as f64);
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (theta.cos(), theta.sin());
    // projection of the pixel center onto the direction, normalized to [0, 1]
    let corners =
        [(0.0, 0.0), (fw, 0.0), (0.0, fh), (fw, fh)].map(|(x, y): (f64, f64)| x * dx + y * dy);
    let pmin = corners.iter().cloned().fold(f64::INFINITY, f64::min);
    let pmax = corners.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let proj = move |x: usize, y: usize| {
        ((x as f64 + 0.5) * dx + (y as f64 + 0.5) * dy - pmin) / (pmax - pmin)
    };

    let mut plane = vec![0.0; w * h];
    match kind {
        BackgroundKind::Gradient => {
            let a = rng.random_range(0.15..0.85);
            let b = rng.random_range(0.15..0.85);
            for y in 0..h {
                for x in 0..w {
                    plane[y * w + x] = a + (b - a) * proj(x, y);
                }
            }
        }
        BackgroundKind::Stripes => {
            let mean = rng.random_range(0.35..0.65);
            let amp = rng.random_range(0.08..0.25);
            let cycles = rng.random_range(1.0..3.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            for y in 0..h {
                for x in 0..w {
                    plane[y * w + x] =
                        mean + amp * (std::f64::consts::TAU * cycles * proj(x, y) + phase).sin();
                }
            }
        }
        BackgroundKind::SmoothNoise => {
            let mean = rng.random_range(0.35..0.65);
            let waves: Vec<(f64, f64, f64, f64)> = (0..3)
                .map(|_| {
                    (
                        rng.random_range(0.0..0.1),
                        rng.random_range(-2.5..2.5),
                        rng.random_range(-2.5..2.5),
                        rng.random_range(0.0..std::f64::consts::TAU),
                    )
                })
                .collect();
            for y in 0..h {
                for x in 0..w {
                    let (u, v) = ((x as f64 + 0.5) / fw, (y as f64 + 0.5) / fh);
                    let s: f64 = waves
                        .iter()
                        .map(|&(amp, fx, fy, ph)| {
                            amp * (std::f64::consts::TAU * (fx * u + fy * v) + ph).cos()
                        })
                        .sum();
                    plane[y * w + x] = mean + s;
                }
            }
        }
    }
    // 8-bit values so that a saved and reloaded triplet is identical in memory
    for v in &mut plane {
        *v = quantize(*v) as f64 / 255.0;
    }
    plane
}

fn shape_mask(
    kind: ShapeKind,
    w: usize,
    h: usize,
    area_fraction: f64,
    rng: &mut Rng,
) -> BinaryMask {
    let (fw, fh) = (w as f64, h as f64);
    let area = area_fraction * fw * fh;
    match kind {
        ShapeKind::Disc => {
            let r = (area / std::f64::consts::PI).sqrt();
            let cx = rng.random_range(r.min(fw / 2.0)..=(fw - r).max(fw / 2.0));
            let cy = rng.random_range(r.min(fh / 2.0)..=(fh - r).max(fh / 2.0));
            BinaryMask::from_fn(w, h, |y, x| {
                let (px, py) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                px * px + py * py <= r * r
            })
        }
        ShapeKind::Rectangle => {
            let aspect: f64 = rng.random_range(0.5..2.0);
            let rw = (area * aspect).sqrt().round().clamp(1.0, fw) as usize;
            let rh = (area / rw as f64).round().clamp(1.0, fh) as usize;
            let x0 = rng.random_range(0..=w - rw);
            let y0 = rng.random_range(0..=h - rh);
            BinaryMask::from_fn(w, h, |y, x| {
                (y0..y0 + rh).contains(&y) && (x0..x0 + rw).contains(&x)
            })
        }
        ShapeKind::Polygon => {
            let n = rng.random_range(5..=8);
            let mut angles: Vec<f64> = (0..n)
                .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                .collect();
            angles.sort_by(f64::total_cmp);
            let radii: Vec<f64> = (0..n).map(|_| rng.random_range(0.6..1.0)).collect();
            // area of the unit star polygon, used to hit the target area
            let unit_area: f64 = (0..n)
                .map(|i| {
                    let j = (i + 1) % n;
                    let mut d = angles[j] - angles[i];
                    if j == 0 {
                        d += std::f64::consts::TAU;
                    }
                    0.5 * radii[i] * radii[j] * d.sin()
                })
                .sum();
            let scale = (area / unit_area.max(1e-3)).sqrt();
            let cx = rng.random_range(scale.min(fw / 2.0)..=(fw - scale).max(fw / 2.0));
            let cy = rng.random_range(scale.min(fh / 2.0)..=(fh - scale).max(fh / 2.0));
            let verts: Vec<(f64, f64)> = angles
                .iter()
                .zip(&radii)
                .map(|(a, r)| (cx + scale * r * a.cos(), cy + scale * r * a.sin()))
                .collect();
            BinaryMask::from_fn(w, h, |y, x| {
                point_in_polygon(x as f64 + 0.5, y as f64 + 0.5, &verts)
            })
        }
    }
}

fn point_in_polygon(px: f64, py: f64, verts: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = verts.len() - 1;
    for i in 0..verts.len() {
        let (xi, yi) = verts[i];
        let (xj, yj) = verts[j];
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// One procedural triplet: smooth background, one high-contrast opaque
/// shape. Shape and color are redrawn until the area fraction lies in the
/// configured interval and every channel contrasts the mean background under
/// the shape by at least [`MIN_CONTRAST`].
pub fn synth_triplet(cfg: &CorpusConfig, rng: &mut Rng) -> Result<RemovalTriplet> {
    let (w, h) = (cfg.width, cfg.height);
    let bg_kind = cfg.background_kinds[rng.random_range(0..cfg.background_kinds.len())];
    let mut truth = Vec::with_capacity(cfg.channels * w * h);
    for _ in 0..cfg.channels {
        truth.extend(background_plane(bg_kind, w, h, rng));
    }
    let ground_truth = ImageTensor::new(cfg.channels, h, w, truth)?;

    for _ in 0..MAX_SYNTH_ATTEMPTS {
        let kind = cfg.shape_kinds[rng.random_range(0..cfg.shape_kinds.len())];
        let target = cfg.shape_area_fraction.lo
            + rng.random::<f64>() * (cfg.shape_area_fraction.hi - cfg.shape_area_fraction.lo);
        let mask = shape_mask(kind, w, h, target, rng);
        let colors: Vec<f64> = (0..cfg.channels)
            .map(|_| rng.random_range(0u8..=255) as f64 / 255.0)
            .collect();
        if mask.is_empty() || !cfg.shape_area_fraction.contains(mask.coverage()) {
            continue;
        }
        let n = mask.count() as f64;
        let contrast_ok = colors.iter().enumerate().all(|(c, &fg)| {
            let plane = ground_truth.plane(c);
            let mean = mask
                .bits()
                .iter()
                .zip(plane)
                .filter(|(m, _)| **m)
                .map(|(_, v)| v)
                .sum::<f64>()
                / n;
            (fg - mean).abs() >= MIN_CONTRAST
        });
        if !contrast_ok {
            continue;
        }
        let object = ImageTensor::from_fn(cfg.channels, h, w, |c, _, _| colors[c]);
        let composite = ImageTensor::composite(&object, &ground_truth, &mask)?;
        return Ok(RemovalTriplet {
            composite,
            ground_truth,
            mask,
        });
    }
    Err(Error::GenerationFailed(MAX_SYNTH_ATTEMPTS))
}

/// Triplet `index` of the corpus, drawn from its own derived stream.
pub fn corpus_triplet(cfg: &CorpusConfig, index: usize) -> Result<RemovalTriplet> {
    synth_triplet(
        cfg,
        &mut rng::seeded(rng::derive_seed(cfg.seed, index as u64)),
    )
}

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub index: usize,
    pub composite: String,
    pub truth: String,
    pub mask: String,
}

impl ManifestEntry {
    /// File names used by [`make_corpus`].
    pub fn standard(index: usize, channels: usize) -> Self {
        let ext = if channels == 3 { "ppm" } else { "pgm" };
        Self {
            index,
            composite: format!("{index:04}_composite.{ext}"),
            truth: format!("{index:04}_truth.{ext}"),
            mask: format!("{index:04}_mask.pgm"),
        }
    }
}

/// Corpus index: `seed=<u64>` then one tab-separated row per triplet with
/// paths relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Manifest> {
        let bad =
            |line: usize, msg: &str| Error::MalformedFile(format!("manifest line {line}: {msg}"));
        let mut lines = text.lines().enumerate();
        let seed = lines
            .next()
            .and_then(|(_, l)| l.strip_prefix("seed="))
            .ok_or_else(|| bad(1, "expected seed=<u64>"))?;
        let seed = seed
            .trim()
            .parse()
            .map_err(|_| bad(1, "seed is not a u64"))?;
        let mut entries = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [index, composite, truth, mask] = fields[..] else {
                return Err(bad(i + 1, "expected 4 tab-separated fields"));
            };
            let index = index
                .parse()
                .map_err(|_| bad(i + 1, "index is not an integer"))?;
            if [composite, truth, mask].iter().any(|p| p.is_empty()) {
                return Err(bad(i + 1, "empty path"));
            }
            entries.push(ManifestEntry {
                index,
                composite: composite.to_string(),
                truth: truth.to_string(),
                mask: mask.to_string(),
            });
        }
        Ok(Manifest { seed, entries })
    }

    pub fn render(&self) -> String {
        let mut out = format!("seed={}\n", self.seed);
        for e in &self.entries {
            writeln!(out, "{}\t{}\t{}\t{}", e.index, e.composite, e.truth, e.mask).unwrap();
        }
        out
    }
}

/// Writes `cfg.count` triplets plus `manifest.txt` into `out_dir`.
pub fn make_corpus(cfg: &CorpusConfig, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let mut entries = Vec::with_capacity(cfg.count);
    for index in 0..cfg.count {
        let triplet = corpus_triplet(cfg, index)?;
        let entry = ManifestEntry::standard(index, cfg.channels);
        save_image(&triplet.composite, out_dir.join(&entry.composite))?;
        save_image(&triplet.ground_truth, out_dir.join(&entry.truth))?;
        triplet.mask.save(out_dir.join(&entry.mask))?;
        entries.push(entry);
    }
    let manifest = Manifest {
        seed: cfg.seed,
        entries,
    };
    fs::write(out_dir.join(MANIFEST_FILE), manifest.render())?;
    Ok(manifest)
}

/// A corpus loaded back from disk.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub triplets: Vec<RemovalTriplet>,
}

impl Corpus {
    /// The corpus [`make_corpus`] would write, kept in memory.
    pub fn generate(cfg: &CorpusConfig) -> Result<Corpus> {
        cfg.validate()?;
        let triplets = (0..cfg.count)
            .map(|i| corpus_triplet(cfg, i))
            .collect::<Result<Vec<_>>>()?;
        let entries = (0..cfg.count)
            .map(|i| ManifestEntry::standard(i, cfg.channels))
            .collect();
        Ok(Corpus {
            dir: PathBuf::new(),
            manifest: Manifest {
                seed: cfg.seed,
                entries,
            },
            triplets,
        })
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Corpus> {
        let dir = dir.as_ref().to_path_buf();
        let manifest = Manifest::parse(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        if manifest.entries.is_empty() {
            return Err(Error::MalformedFile("manifest lists no triplets".into()));
        }
        let mut triplets = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            let triplet = RemovalTriplet {
                composite: load_image(dir.join(&e.composite))?,
                ground_truth: load_image(dir.join(&e.truth))?,
                mask: BinaryMask::load(dir.join(&e.mask))?,
            };
            triplet.validate()?;
            triplets.push(triplet);
        }
        Ok(Corpus {
            dir,
            manifest,
            triplets,
        })
    }

    pub fn channels(&self) -> usize {
        self.triplets[0].composite.channels()
    }
}
