//! Binary masks and the two mask perturbations used by the consistency
//! objective: square-kernel dilation and reshaping (either to the bounding
//! rectangle or by OR-ing in a random free-form mask).
//!
//! Indices are `(row, col)` throughout; storage is row-major.

use std::fmt;
use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::pnm::{self, Pnm};
use crate::rng::Rng;

#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "BinaryMask {}x{} ({} set)",
            self.width,
            self.height,
            self.count()
        )?;
        if self.width * self.height <= 1024 {
            for row in self.bits.chunks(self.width) {
                let line: String = row.iter().map(|&b| if b { '#' } else { '.' }).collect();
                writeln!(f, "{line}")?;
            }
        }
        Ok(())
    }
}

/// Inclusive row/column extent of the set pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bounds {
    pub row_min: usize,
    pub row_max: usize,
    pub col_min: usize,
    pub col_max: usize,
}

impl BinaryMask {
    /// All-zero mask.
    ///
    /// Panics if either dimension is zero.
    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn ones(width: usize, height: usize) -> Self {
        let mut mask = Self::zeros(width, height);
        mask.bits.fill(true);
        mask
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || bits.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {width}x{height} mask",
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    /// Builds a mask from `0`/`1` values; anything else is rejected.
    pub fn from_values(width: usize, height: usize, values: &[u8]) -> Result<Self> {
        let bits = values
            .iter()
            .map(|&v| match v {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::InvalidRange(format!(
                    "mask value {other} is not 0 or 1"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_bits(width, height, bits)
    }

    /// Mask that is set exactly where `pred(row, col)` holds.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut pred: impl FnMut(usize, usize) -> bool,
    ) -> Self {
        let mut mask = Self::zeros(width, height);
        for r in 0..height {
            for c in 0..width {
                mask.bits[r * width + c] = pred(r, c);
            }
        }
        mask
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Fraction of pixels that are set.
    pub fn coverage(&self) -> f64 {
        self.count() as f64 / self.bits.len() as f64
    }

    pub fn same_dims(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// `self ⊆ other` pixelwise. Masks of different sizes are never subsets.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.same_dims(other) && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn bounds(&self) -> Option<Bounds> {
        let mut bounds: Option<Bounds> = None;
        for (r, row) in self.bits.chunks(self.width).enumerate() {
            let (Some(first), Some(last)) =
                (row.iter().position(|&b| b), row.iter().rposition(|&b| b))
            else {
                continue;
            };
            bounds = Some(match bounds {
                None => Bounds {
                    row_min: r,
                    row_max: r,
                    col_min: first,
                    col_max: last,
                },
                Some(b) => Bounds {
                    row_min: b.row_min,
                    row_max: r,
                    col_min: b.col_min.min(first),
                    col_max: b.col_max.max(last),
                },
            });
        }
        bounds
    }

    /// Dilation by the all-ones `(2k+1)×(2k+1)` square, clipped at the image
    /// border: a pixel is set iff some set pixel lies within Chebyshev
    /// distance `k`. `k = 0` is the identity.
    ///
    /// The square kernel is separable, so this runs as a row pass followed by
    /// a column pass, each a sliding-window count.
    pub fn dilate(&self, k: usize) -> BinaryMask {
        if k == 0 {
            return self.clone();
        }
        let (w, h) = (self.width, self.height);
        let mut rows = vec![false; w * h];
        let mut prefix = vec![0usize; w.max(h) + 1];
        for r in 0..h {
            let line = &self.bits[r * w..(r + 1) * w];
            for (c, &b) in line.iter().enumerate() {
                prefix[c + 1] = prefix[c] + b as usize;
            }
            for c in 0..w {
                let lo = c.saturating_sub(k);
                let hi = (c + k).min(w - 1);
                rows[r * w + c] = prefix[hi + 1] > prefix[lo];
            }
        }
        let mut out = vec![false; w * h];
        for c in 0..w {
            for r in 0..h {
                prefix[r + 1] = prefix[r] + rows[r * w + c] as usize;
            }
            for r in 0..h {
                let lo = r.saturating_sub(k);
                let hi = (r + k).min(h - 1);
                out[r * w + c] = prefix[hi + 1] > prefix[lo];
            }
        }
        BinaryMask {
            width: w,
            height: h,
            bits: out,
        }
    }

    /// Tightest axis-aligned filled rectangle covering every set pixel.
    pub fn bounding_rect(&self) -> Result<BinaryMask> {
        let b = self.bounds().ok_or(Error::EmptyMask)?;
        Ok(BinaryMask::from_fn(self.width, self.height, |r, c| {
            (b.row_min..=b.row_max).contains(&r) && (b.col_min..=b.col_max).contains(&c)
        }))
    }

    /// Element-wise OR.
    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        if !self.same_dims(other) {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| a || b)
                .collect(),
        })
    }

    /// Mask values as `0.0`/`1.0`, row-major.
    pub fn to_f64(&self) -> Vec<f64> {
        self.bits
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect()
    }

    /// Decodes a binary PGM; samples `>= 128` are set.
    pub fn from_pgm_bytes(bytes: &[u8]) -> Result<BinaryMask> {
        let img = pnm::decode(bytes)?;
        if img.channels != 1 {
            return Err(Error::MalformedFile(
                "mask must be a single-channel PGM".into(),
            ));
        }
        Ok(BinaryMask {
            width: img.width,
            height: img.height,
            bits: img.samples.iter().map(|&v| v >= 128).collect(),
        })
    }

    /// Encodes as a binary PGM holding only 0 and 255.
    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        pnm::encode(&Pnm {
            channels: 1,
            width: self.width,
            height: self.height,
            samples: self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<BinaryMask> {
        Self::from_pgm_bytes(&std::fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_pgm_bytes())?;
        Ok(())
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval<T> {
    pub lo: T,
    pub hi: T,
}

impl<T> Interval<T> {
    pub const fn new(lo: T, hi: T) -> Self {
        Self { lo, hi }
    }
}

impl<T: PartialOrd + Copy + fmt::Display> Interval<T> {
    pub fn validate(&self, name: &str) -> Result<()> {
        if self.lo <= self.hi {
            Ok(())
        } else {
            Err(Error::InvalidRange(format!(
                "{name}: [{}, {}] is empty",
                self.lo, self.hi
            )))
        }
    }

    pub fn contains(&self, v: T) -> bool {
        self.lo <= v && v <= self.hi
    }
}

impl Interval<usize> {
    fn sample(&self, rng: &mut Rng) -> usize {
        rng.random_range(self.lo..=self.hi)
    }
}

impl Interval<f64> {
    fn sample(&self, rng: &mut Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..self.hi)
        }
    }
}

/// Free-form random mask generator settings: thick polyline strokes plus
/// axis-aligned rectangles.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomMaskParams {
    pub num_strokes: Interval<usize>,
    /// Stroke thickness in pixels.
    pub stroke_width: Interval<usize>,
    pub stroke_vertices: Interval<usize>,
    pub num_rects: Interval<usize>,
    /// Rectangle side as a fraction of the matching image side.
    pub rect_size_fraction: Interval<f64>,
    pub target_coverage_cap: f64,
}

/// Segment length as a fraction of the larger image side.
const SEGMENT_LENGTH_FRACTION: Interval<f64> = Interval { lo: 0.1, hi: 0.35 };

impl Default for RandomMaskParams {
    fn default() -> Self {
        Self {
            num_strokes: Interval::new(1, 4),
            stroke_width: Interval::new(4, 16),
            stroke_vertices: Interval::new(2, 6),
            num_rects: Interval::new(0, 2),
            rect_size_fraction: Interval::new(0.10, 0.35),
            target_coverage_cap: 0.5,
        }
    }
}

impl RandomMaskParams {
    /// Parameters that never draw anything.
    pub fn empty() -> Self {
        Self {
            num_strokes: Interval::new(0, 0),
            num_rects: Interval::new(0, 0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.num_strokes.validate("num_strokes")?;
        self.stroke_width.validate("stroke_width")?;
        self.stroke_vertices.validate("stroke_vertices")?;
        self.num_rects.validate("num_rects")?;
        self.rect_size_fraction.validate("rect_size_fraction")?;
        if self.stroke_vertices.lo < 2 {
            return Err(Error::InvalidRange(
                "stroke_vertices must be at least 2".into(),
            ));
        }
        let f = self.rect_size_fraction;
        if !(f.lo > 0.0 && f.hi < 1.0) {
            return Err(Error::InvalidRange(
                "rect_size_fraction must lie in (0, 1)".into(),
            ));
        }
        if !(self.target_coverage_cap > 0.0 && self.target_coverage_cap <= 1.0) {
            return Err(Error::InvalidRange(
                "target_coverage_cap must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Sets every pixel whose center lies within `radius` of segment `a`–`b`.
fn stamp_capsule(mask: &mut BinaryMask, a: (f64, f64), b: (f64, f64), radius: f64) {
    let (w, h) = (mask.width as f64, mask.height as f64);
    let x_lo = (a.0.min(b.0) - radius).floor().max(0.0) as usize;
    let x_hi = (a.0.max(b.0) + radius).ceil().min(w - 1.0) as usize;
    let y_lo = (a.1.min(b.1) - radius).floor().max(0.0) as usize;
    let y_hi = (a.1.max(b.1) + radius).ceil().min(h - 1.0) as usize;
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let r2 = radius * radius;
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let s = if len2 > 0.0 {
                (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (qx, qy) = (a.0 + s * dx - px, a.1 + s * dy - py);
            if qx * qx + qy * qy <= r2 {
                mask.set(y, x, true);
            }
        }
    }
}

fn random_stroke(
    width: usize,
    height: usize,
    params: &RandomMaskParams,
    rng: &mut Rng,
) -> BinaryMask {
    let mut stroke = BinaryMask::zeros(width, height);
    let (w, h) = (width as f64, height as f64);
    let vertices = params.stroke_vertices.sample(rng);
    let radius = params.stroke_width.sample(rng) as f64 / 2.0;
    let mut p = (rng.random_range(0.0..w), rng.random_range(0.0..h));
    for _ in 1..vertices {
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let len = SEGMENT_LENGTH_FRACTION.sample(rng) * w.max(h);
        let q = (
            (p.0 + len * angle.cos()).clamp(0.0, w),
            (p.1 + len * angle.sin()).clamp(0.0, h),
        );
        stamp_capsule(&mut stroke, p, q, radius);
        p = q;
    }
    stroke
}

fn random_rect(
    width: usize,
    height: usize,
    params: &RandomMaskParams,
    rng: &mut Rng,
) -> BinaryMask {
    let rw =
        ((params.rect_size_fraction.sample(rng) * width as f64).round() as usize).clamp(1, width);
    let rh =
        ((params.rect_size_fraction.sample(rng) * height as f64).round() as usize).clamp(1, height);
    let c0 = rng.random_range(0..=width - rw);
    let r0 = rng.random_range(0..=height - rh);
    BinaryMask::from_fn(width, height, |r, c| {
        (r0..r0 + rh).contains(&r) && (c0..c0 + rw).contains(&c)
    })
}

/// Free-form random mask: strokes first, then rectangles. An element whose
/// addition would push coverage above `target_coverage_cap` is skipped, so
/// the result never exceeds the cap.
pub fn random_mask(
    width: usize,
    height: usize,
    params: &RandomMaskParams,
    rng: &mut Rng,
) -> BinaryMask {
    let mut mask = BinaryMask::zeros(width, height);
    let limit = (params.target_coverage_cap * (width * height) as f64).floor() as usize;
    let add = |mask: &mut BinaryMask, part: BinaryMask| {
        let merged = mask.union(&part).expect("same dimensions");
        if merged.count() <= limit {
            *mask = merged;
        }
    };
    let strokes = params.num_strokes.sample(rng);
    for _ in 0..strokes {
        let stroke = random_stroke(width, height, params, rng);
        add(&mut mask, stroke);
    }
    let rects = params.num_rects.sample(rng);
    for _ in 0..rects {
        let rect = random_rect(width, height, params, rng);
        add(&mut mask, rect);
    }
    mask
}

/// How the dilation radius is chosen for each perturbation draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DilationRadius {
    /// 8 px at 256 px image width, scaled linearly with the width (min 1).
    Auto,
    Fixed(usize),
    /// Redrawn uniformly from `[lo, hi]` on every call.
    Uniform {
        lo: usize,
        hi: usize,
    },
}

impl DilationRadius {
    pub fn auto_for_width(width: usize) -> usize {
        ((8.0 * width as f64 / 256.0).round() as usize).max(1)
    }

    pub fn resolve(&self, width: usize, rng: &mut Rng) -> usize {
        match *self {
            DilationRadius::Auto => Self::auto_for_width(width),
            DilationRadius::Fixed(k) => k,
            DilationRadius::Uniform { lo, hi } => rng.random_range(lo..=hi),
        }
    }
}

impl fmt::Display for DilationRadius {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DilationRadius::Auto => write!(f, "auto"),
            DilationRadius::Fixed(k) => write!(f, "{k}"),
            DilationRadius::Uniform { lo, hi } => write!(f, "{lo}..{hi}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbConfig {
    pub dilation: DilationRadius,
    /// Probability of the bounding-rectangle branch of the reshape.
    pub rect_probability: f64,
    pub random: RandomMaskParams,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            dilation: DilationRadius::Auto,
            rect_probability: 0.5,
            random: RandomMaskParams::default(),
        }
    }
}

impl PerturbConfig {
    /// `k = 0`, never rectangular, random branch draws nothing: every
    /// perturbation returns the input mask.
    pub fn identity() -> Self {
        Self {
            dilation: DilationRadius::Fixed(0),
            rect_probability: 0.0,
            random: RandomMaskParams::empty(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rect_probability) {
            return Err(Error::InvalidRange(format!(
                "rect_probability {} not in [0, 1]",
                self.rect_probability
            )));
        }
        if let DilationRadius::Uniform { lo, hi } = self.dilation {
            Interval::new(lo, hi).validate("dilation")?;
        }
        self.random.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReshapeKind {
    Rect,
    Random,
}

/// Reshape perturbation, also reporting which branch was taken. One uniform
/// draw `u ∈ [0, 1)` decides: `u < rect_probability` picks the rectangle.
pub fn reshape_perturb_traced(
    mask: &BinaryMask,
    cfg: &PerturbConfig,
    rng: &mut Rng,
) -> Result<(BinaryMask, ReshapeKind)> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let u: f64 = rng.random();
    if u < cfg.rect_probability {
        Ok((mask.bounding_rect()?, ReshapeKind::Rect))
    } else {
        let extra = random_mask(mask.width, mask.height, &cfg.random, rng);
        Ok((mask.union(&extra)?, ReshapeKind::Random))
    }
}

pub fn reshape_perturb(
    mask: &BinaryMask,
    cfg: &PerturbConfig,
    rng: &mut Rng,
) -> Result<BinaryMask> {
    reshape_perturb_traced(mask, cfg, rng).map(|(m, _)| m)
}

/// The two perturbed masks for one consistency step.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbations {
    pub dilated: BinaryMask,
    pub reshaped: BinaryMask,
    pub dilation_radius: usize,
    pub reshape_kind: ReshapeKind,
}

/// Dilated and reshaped variants of `mask`. The radius is resolved first,
/// then the reshape is drawn, so the draw order is fixed.
pub fn sample_perturbations(
    mask: &BinaryMask,
    cfg: &PerturbConfig,
    rng: &mut Rng,
) -> Result<Perturbations> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let k = cfg.dilation.resolve(mask.width, rng);
    let dilated = mask.dilate(k);
    let (reshaped, reshape_kind) = reshape_perturb_traced(mask, cfg, rng)?;
    Ok(Perturbations {
        dilated,
        reshaped,
        dilation_radius: k,
        reshape_kind,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn point(w: usize, h: usize, r: usize, c: usize) -> BinaryMask {
        BinaryMask::from_fn(w, h, |rr, cc| rr == r && cc == c)
    }

    #[test]
    fn dilate_empty_stays_empty() {
        assert!(BinaryMask::zeros(8, 8).dilate(3).is_empty());
    }

    #[test]
    fn dilate_point_gives_square() {
        let out = point(5, 5, 2, 2).dilate(1);
        let expected =
            BinaryMask::from_fn(5, 5, |r, c| (1..=3).contains(&r) && (1..=3).contains(&c));
        assert_eq!(out, expected);
    }

    #[test]
    fn dilate_clips_at_border() {
        let out = point(4, 3, 0, 0).dilate(2);
        let expected = BinaryMask::from_fn(4, 3, |r, c| r <= 2 && c <= 2);
        assert_eq!(out, expected);
    }

    #[test]
    fn dilate_zero_is_identity() {
        let m = BinaryMask::from_fn(7, 5, |r, c| (r * 3 + c) % 4 == 0);
        assert_eq!(m.dilate(0), m);
    }

    #[test]
    fn bounding_rect_two_points() {
        let m = BinaryMask::from_fn(6, 6, |r, c| (r, c) == (1, 1) || (r, c) == (3, 4));
        let rect = m.bounding_rect().unwrap();
        assert_eq!(rect.count(), 12);
        assert_eq!(
            rect.bounds(),
            Some(Bounds {
                row_min: 1,
                row_max: 3,
                col_min: 1,
                col_max: 4
            })
        );
    }

    #[test]
    fn bounding_rect_fixed_points() {
        let single = point(9, 4, 3, 7);
        assert_eq!(single.bounding_rect().unwrap(), single);
        let rect = BinaryMask::from_fn(9, 9, |r, c| (2..6).contains(&r) && (1..8).contains(&c));
        assert_eq!(rect.bounding_rect().unwrap(), rect);
    }

    #[test]
    fn bounding_rect_empty_is_error() {
        assert!(matches!(
            BinaryMask::zeros(4, 4).bounding_rect(),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn union_identities_and_mismatch() {
        let m = BinaryMask::from_fn(6, 5, |r, c| r == c);
        assert_eq!(m.union(&BinaryMask::zeros(6, 5)).unwrap(), m);
        assert_eq!(m.union(&m).unwrap(), m);
        assert!(matches!(
            m.union(&BinaryMask::zeros(5, 6)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn from_values_rejects_non_binary() {
        assert!(BinaryMask::from_values(2, 1, &[0, 1]).is_ok());
        assert!(matches!(
            BinaryMask::from_values(2, 1, &[0, 2]),
            Err(Error::InvalidRange(_))
        ));
        assert!(matches!(
            BinaryMask::from_values(3, 1, &[0, 1]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn random_mask_nothing_drawn() {
        let mut rng = seeded(3);
        assert!(random_mask(32, 32, &RandomMaskParams::empty(), &mut rng).is_empty());
    }

    #[test]
    fn random_mask_is_deterministic() {
        let p = RandomMaskParams::default();
        let a = random_mask(64, 48, &p, &mut seeded(11));
        let b = random_mask(64, 48, &p, &mut seeded(11));
        assert_eq!(a, b);
        assert!(!a.is_empty());
    }

    #[test]
    fn random_mask_respects_cap() {
        let p = RandomMaskParams {
            num_strokes: Interval::new(6, 8),
            stroke_width: Interval::new(12, 20),
            target_coverage_cap: 0.2,
            ..RandomMaskParams::default()
        };
        for seed in 0..200 {
            assert!(random_mask(32, 32, &p, &mut seeded(seed)).coverage() <= 0.2);
        }
    }

    #[test]
    fn reshape_degenerate_mixtures() {
        let m = BinaryMask::from_fn(16, 16, |r, c| {
            (r as i32 - 8).pow(2) + (c as i32 - 7).pow(2) < 12
        });
        let mut rng = seeded(5);
        let always_rect = PerturbConfig {
            rect_probability: 1.0,
            ..PerturbConfig::default()
        };
        for _ in 0..20 {
            assert_eq!(
                reshape_perturb(&m, &always_rect, &mut rng).unwrap(),
                m.bounding_rect().unwrap()
            );
        }
        assert_eq!(
            reshape_perturb(&m, &PerturbConfig::identity(), &mut rng).unwrap(),
            m
        );
        assert!(matches!(
            reshape_perturb(&BinaryMask::zeros(16, 16), &always_rect, &mut rng),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn sample_perturbations_identity_and_center_square() {
        let m = BinaryMask::from_fn(12, 10, |r, c| r > 3 && c < 6 && r + c < 11);
        let p = sample_perturbations(&m, &PerturbConfig::identity(), &mut seeded(1)).unwrap();
        assert_eq!(p.dilated, m);
        assert_eq!(p.reshaped, m);

        let center = point(15, 15, 7, 7);
        let cfg = PerturbConfig {
            dilation: DilationRadius::Fixed(2),
            ..PerturbConfig::default()
        };
        let p = sample_perturbations(&center, &cfg, &mut seeded(2)).unwrap();
        assert_eq!(
            p.dilated,
            BinaryMask::from_fn(15, 15, |r, c| (5..=9).contains(&r) && (5..=9).contains(&c))
        );
    }

    #[test]
    fn auto_radius_scales_with_width() {
        assert_eq!(DilationRadius::auto_for_width(256), 8);
        assert_eq!(DilationRadius::auto_for_width(64), 2);
        assert_eq!(DilationRadius::auto_for_width(16), 1);
        assert_eq!(DilationRadius::auto_for_width(1024), 32);
    }

    #[test]
    fn uniform_radius_stays_in_range() {
        let mut rng = seeded(9);
        let d = DilationRadius::Uniform { lo: 1, hi: 3 };
        let mut seen = [false; 4];
        for _ in 0..200 {
            let k = d.resolve(64, &mut rng);
            assert!((1..=3).contains(&k));
            seen[k] = true;
        }
        assert!(seen[1] && seen[2] && seen[3]);
    }

    #[test]
    fn pgm_threshold_and_canonical_output() {
        let bytes = b"P5 3 1 255 \x00\x7f\x80";
        let m = BinaryMask::from_pgm_bytes(bytes).unwrap();
        assert_eq!(m.bits(), &[false, false, true]);
        assert_eq!(m.to_pgm_bytes(), b"P5\n3 1\n255\n\x00\x00\xff".to_vec());
        assert!(BinaryMask::from_pgm_bytes(b"P6 1 1 255 \x00\x00\x00").is_err());
    }

    #[test]
    fn config_validation() {
        assert!(PerturbConfig::default().validate().is_ok());
        let bad = PerturbConfig {
            rect_probability: 1.5,
            ..PerturbConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = PerturbConfig {
            random: RandomMaskParams {
                num_rects: Interval::new(3, 1),
                ..RandomMaskParams::default()
            },
            ..PerturbConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
