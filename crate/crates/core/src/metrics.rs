//! Full-reference quality metrics and the cross-mask consistency probe.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::diffusion::{self, NoisePredictor, NoiseSchedule};
use crate::error::{Error, Result};
use crate::imagio::{load_image, Corpus, ImageTensor, RemovalTriplet};
use crate::mask::{sample_perturbations, BinaryMask, PerturbConfig};
use crate::rng;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

pub fn mse(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.check_same_shape(b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.len() as f64)
}

/// Mean squared error over the pixels inside `mask`, all channels.
pub fn masked_mse(a: &ImageTensor, b: &ImageTensor, mask: &BinaryMask) -> Result<f64> {
    a.check_same_shape(b)?;
    a.check_mask(mask)?;
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut sum = 0.0;
    for c in 0..a.channels() {
        for ((x, y), &m) in a.plane(c).iter().zip(b.plane(c)).zip(mask.bits()) {
            if m {
                sum += (x - y) * (x - y);
            }
        }
    }
    Ok(sum / (mask.count() * a.channels()) as f64)
}

fn psnr_from_mse(mse: f64, max_value: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_value * max_value / mse).log10()
    }
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical inputs.
pub fn psnr(a: &ImageTensor, b: &ImageTensor, max_value: f64) -> Result<f64> {
    if max_value.is_nan() || max_value <= 0.0 {
        return Err(Error::InvalidRange(format!(
            "max_value {max_value} must be positive"
        )));
    }
    Ok(psnr_from_mse(mse(a, b)?, max_value))
}

pub fn masked_psnr(
    a: &ImageTensor,
    b: &ImageTensor,
    mask: &BinaryMask,
    max_value: f64,
) -> Result<f64> {
    if max_value.is_nan() || max_value <= 0.0 {
        return Err(Error::InvalidRange(format!(
            "max_value {max_value} must be positive"
        )));
    }
    Ok(psnr_from_mse(masked_mse(a, b, mask)?, max_value))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = w.iter().sum();
    w.map(|v| v / sum)
}

/// Separable "valid" filtering of an `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&src[x..]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k
                .iter()
                .enumerate()
                .map(|(i, a)| a * rows[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Local SSIM for every fully contained 11×11 window, row-major over the
/// `(h − 10) × (w − 10)` window positions. Multi-channel inputs are reduced
/// to the channel mean first.
pub fn ssim_map(a: &ImageTensor, b: &ImageTensor) -> Result<Vec<f64>> {
    a.check_same_shape(b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::TooSmall {
            width: w,
            height: h,
        });
    }
    let (la, lb) = (a.luminance(), b.luminance());
    let (pa, pb) = (la.data(), lb.data());
    let k = gaussian_window();
    let prod = |f: &dyn Fn(usize) -> f64| (0..h * w).map(f).collect::<Vec<_>>();
    let mu_a = filter_valid(pa, h, w, &k);
    let mu_b = filter_valid(pb, h, w, &k);
    let e_aa = filter_valid(&prod(&|i| pa[i] * pa[i]), h, w, &k);
    let e_bb = filter_valid(&prod(&|i| pb[i] * pb[i]), h, w, &k);
    let e_ab = filter_valid(&prod(&|i| pa[i] * pb[i]), h, w, &k);
    Ok((0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = e_aa[i] - ma * ma;
            let var_b = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (var_a + var_b + SSIM_C2))
        })
        .collect())
}

pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    let map = ssim_map(a, b)?;
    Ok(map.iter().sum::<f64>() / map.len() as f64)
}

/// Mean local SSIM over the windows whose footprint touches `mask`.
pub fn masked_ssim(a: &ImageTensor, b: &ImageTensor, mask: &BinaryMask) -> Result<f64> {
    a.check_mask(mask)?;
    let map = ssim_map(a, b)?;
    let bounds = mask.bounds().ok_or(Error::EmptyMask)?;
    let ow = a.width() - SSIM_WINDOW + 1;
    let oh = a.height() - SSIM_WINDOW + 1;
    // window (y, x) covers rows y..y+11; touching the mask means any covered
    // pixel is set, found through a summed-area table
    let w = mask.width();
    let mut sat = vec![0u32; (mask.height() + 1) * (w + 1)];
    for r in 0..mask.height() {
        for c in 0..w {
            sat[(r + 1) * (w + 1) + c + 1] =
                mask.get(r, c) as u32 + sat[r * (w + 1) + c + 1] + sat[(r + 1) * (w + 1) + c]
                    - sat[r * (w + 1) + c];
        }
    }
    let area = |r0: usize, c0: usize| {
        let (r1, c1) = (r0 + SSIM_WINDOW, c0 + SSIM_WINDOW);
        sat[r1 * (w + 1) + c1] + sat[r0 * (w + 1) + c0]
            - sat[r0 * (w + 1) + c1]
            - sat[r1 * (w + 1) + c0]
    };
    let (mut sum, mut n) = (0.0, 0usize);
    let y_lo = bounds.row_min.saturating_sub(SSIM_WINDOW - 1);
    let x_lo = bounds.col_min.saturating_sub(SSIM_WINDOW - 1);
    for y in y_lo..oh.min(bounds.row_max + 1) {
        for x in x_lo..ow.min(bounds.col_max + 1) {
            if area(y, x) > 0 {
                sum += map[y * ow + x];
                n += 1;
            }
        }
    }
    Ok(sum / n as f64)
}

/// Fills masked pixels of an image. `seed` fixes any sampling randomness, so
/// two calls with the same seed differ only through the mask.
pub trait Inpainter {
    fn inpaint(&self, image: &ImageTensor, mask: &BinaryMask, seed: u64) -> Result<ImageTensor>;
}

/// Strided deterministic sampling with a trained noise predictor.
pub struct DiffusionInpainter<'a, M> {
    pub model: &'a M,
    pub schedule: &'a NoiseSchedule,
    pub n_steps: usize,
}

impl<M: NoisePredictor> Inpainter for DiffusionInpainter<'_, M> {
    fn inpaint(&self, image: &ImageTensor, mask: &BinaryMask, seed: u64) -> Result<ImageTensor> {
        diffusion::inpaint(
            self.model,
            image,
            mask,
            self.schedule,
            self.n_steps,
            &mut rng::seeded(seed),
        )
    }
}

const PERTURB_SALT: u64 = 0x6761_705f_6d61_736b;

/// Sampling seed used for triplet `index`.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    rng::derive_seed(seed, index as u64)
}

/// Gap for one triplet: mean over the dilated and reshaped masks of the
/// squared output difference inside the original mask.
pub fn triplet_gap(
    inpainter: &dyn Inpainter,
    triplet: &RemovalTriplet,
    perturb: &PerturbConfig,
    seed: u64,
    index: usize,
) -> Result<f64> {
    let s = sample_seed(seed, index);
    let mut prng = rng::seeded(rng::derive_seed(seed ^ PERTURB_SALT, index as u64));
    let p = sample_perturbations(&triplet.mask, perturb, &mut prng)?;
    let base = inpainter.inpaint(&triplet.composite, &triplet.mask, s)?;
    let mut total = 0.0;
    for m in [&p.dilated, &p.reshaped] {
        let out = inpainter.inpaint(&triplet.composite, m, s)?;
        total += masked_mse(&base, &out, &triplet.mask)?;
    }
    Ok(total / 2.0)
}

/// Mean of [`triplet_gap`] over `triplets`.
pub fn consistency_gap(
    inpainter: &dyn Inpainter,
    triplets: &[RemovalTriplet],
    perturb: &PerturbConfig,
    seed: u64,
) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut sum = 0.0;
    for (i, t) in triplets.iter().enumerate() {
        sum += triplet_gap(inpainter, t, perturb, seed, i)?;
    }
    Ok(sum / triplets.len() as f64)
}

/// Precomputed outputs read from a directory, one file per triplet named
/// like the triplet's ground-truth file.
pub struct DirectoryOutputs {
    pub dir: PathBuf,
}

impl DirectoryOutputs {
    pub fn load(&self, truth_name: &str) -> Result<ImageTensor> {
        load_image(self.dir.join(truth_name))
    }
}

/// Where evaluated images come from.
pub enum Source<'a> {
    Inpainter(&'a dyn Inpainter),
    Directory(DirectoryOutputs),
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub seed: u64,
    /// Evaluate at most this many triplets, in manifest order.
    pub limit: Option<usize>,
    /// When set and the source is an inpainter, also measure the gap.
    pub gap: Option<PerturbConfig>,
    /// Where inpainted outputs are written, named like the truth files.
    pub save_outputs: Option<PathBuf>,
    /// Digest of the configuration that produced the evaluated model.
    pub config_digest: Option<String>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            limit: None,
            gap: Some(PerturbConfig::default()),
            save_outputs: None,
            config_digest: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageMetrics {
    pub index: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
    pub psnr_masked: f64,
    pub ssim_masked: f64,
    pub gap: Option<f64>,
}

/// Mean over finite values plus the number of infinite ones left out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteMean {
    pub mean: f64,
    pub inf_count: usize,
}

impl FiniteMean {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let (mut sum, mut n, mut inf_count) = (0.0, 0usize, 0usize);
        for v in values {
            if v.is_infinite() {
                inf_count += 1;
            } else {
                sum += v;
                n += 1;
            }
        }
        let mean = if n > 0 {
            sum / n as f64
        } else if inf_count > 0 {
            f64::INFINITY
        } else {
            f64::NAN
        };
        Self { mean, inf_count }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<ImageMetrics>,
    pub psnr: FiniteMean,
    pub ssim: f64,
    pub mse: f64,
    pub psnr_masked: FiniteMean,
    pub ssim_masked: f64,
    pub consistency_gap: Option<f64>,
    pub config_digest: Option<String>,
}

fn fmt_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

pub const METRICS_TSV_HEADER: &str = "index\tpsnr\tssim\tmse\tpsnr_masked\tssim_masked\tgap";
pub const METRICS_TXT_FILE: &str = "metrics.txt";
pub const METRICS_TSV_FILE: &str = "metrics.tsv";

impl MetricsReport {
    pub fn from_rows(rows: Vec<ImageMetrics>, config_digest: Option<String>) -> Self {
        let gaps: Vec<f64> = rows.iter().filter_map(|r| r.gap).collect();
        Self {
            psnr: FiniteMean::of(rows.iter().map(|r| r.psnr)),
            ssim: mean(rows.iter().map(|r| r.ssim)),
            mse: mean(rows.iter().map(|r| r.mse)),
            psnr_masked: FiniteMean::of(rows.iter().map(|r| r.psnr_masked)),
            ssim_masked: mean(rows.iter().map(|r| r.ssim_masked)),
            consistency_gap: (!gaps.is_empty()).then(|| mean(gaps.iter().copied())),
            config_digest,
            rows,
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("{METRICS_TSV_HEADER}\n");
        for r in &self.rows {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.index,
                fmt_value(r.psnr),
                fmt_value(r.ssim),
                fmt_value(r.mse),
                fmt_value(r.psnr_masked),
                fmt_value(r.ssim_masked),
                r.gap.map_or("-".to_string(), fmt_value)
            )
            .unwrap();
        }
        out
    }

    /// SHA-256 of the per-image table, hex encoded.
    pub fn digest(&self) -> String {
        hex(&Sha256::digest(self.to_tsv().as_bytes()))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        kv("count", self.rows.len().to_string());
        kv("psnr", fmt_value(self.psnr.mean));
        kv("psnr_inf_count", self.psnr.inf_count.to_string());
        kv("ssim", fmt_value(self.ssim));
        kv("mse", fmt_value(self.mse));
        kv("psnr_masked", fmt_value(self.psnr_masked.mean));
        kv(
            "psnr_masked_inf_count",
            self.psnr_masked.inf_count.to_string(),
        );
        kv("ssim_masked", fmt_value(self.ssim_masked));
        kv(
            "consistency_gap",
            self.consistency_gap.map_or("-".to_string(), fmt_value),
        );
        kv(
            "config_digest",
            self.config_digest
                .clone()
                .unwrap_or_else(|| "-".to_string()),
        );
        kv("digest", self.digest());
        out
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join(METRICS_TXT_FILE), self.to_text())?;
        fs::write(dir.join(METRICS_TSV_FILE), self.to_tsv())?;
        Ok(())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}

pub fn image_metrics(
    index: usize,
    output: &ImageTensor,
    truth: &ImageTensor,
    mask: &BinaryMask,
) -> Result<ImageMetrics> {
    Ok(ImageMetrics {
        index,
        psnr: psnr(output, truth, 1.0)?,
        ssim: ssim(output, truth)?,
        mse: mse(output, truth)?,
        psnr_masked: masked_psnr(output, truth, mask, 1.0)?,
        ssim_masked: masked_ssim(output, truth, mask)?,
        gap: None,
    })
}

/// Scores every triplet of `corpus` (up to `opts.limit`) in manifest order.
pub fn evaluate(source: &Source<'_>, corpus: &Corpus, opts: &EvalOptions) -> Result<MetricsReport> {
    let n = opts
        .limit
        .map_or(corpus.triplets.len(), |l| l.min(corpus.triplets.len()));
    if let Some(dir) = &opts.save_outputs {
        fs::create_dir_all(dir)?;
    }
    let mut rows = Vec::with_capacity(n);
    for (i, (triplet, entry)) in corpus
        .triplets
        .iter()
        .zip(&corpus.manifest.entries)
        .take(n)
        .enumerate()
    {
        let output = match source {
            Source::Inpainter(p) => {
                p.inpaint(&triplet.composite, &triplet.mask, sample_seed(opts.seed, i))?
            }
            Source::Directory(d) => d.load(&entry.truth)?,
        };
        if let Some(dir) = &opts.save_outputs {
            crate::imagio::save_image(&output, dir.join(&entry.truth))?;
        }
        let mut row = image_metrics(entry.index, &output, &triplet.ground_truth, &triplet.mask)?;
        if let (Source::Inpainter(p), Some(perturb)) = (source, &opts.gap) {
            row.gap = Some(triplet_gap(*p, triplet, perturb, opts.seed, i)?);
        }
        rows.push(row);
    }
    Ok(MetricsReport::from_rows(rows, opts.config_digest.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagio::{corpus_triplet, CorpusConfig};
    use crate::rng::seeded;

    fn noise(c: usize, h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut r = seeded(seed);
        ImageTensor::standard_normal(c, h, w, &mut r).map(|v| (0.5 + 0.2 * v).clamp(0.0, 1.0))
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let a = noise(1, 4, 4, 1);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_constant_offset() {
        let a = ImageTensor::filled(1, 8, 8, 0.25);
        let b = a.map(|v| v + 1.0 / 255.0);
        let expected = 20.0 * 255f64.log10();
        assert!((psnr(&a, &b, 1.0).unwrap() - expected).abs() < 1e-6);
        assert!((expected - 48.1308).abs() < 1e-4);
    }

    #[test]
    fn psnr_matches_direct_formula() {
        let a = noise(3, 9, 7, 2);
        let b = noise(3, 9, 7, 3);
        let mut sq = 0.0;
        for c in 0..3 {
            for y in 0..9 {
                for x in 0..7 {
                    sq += (a.get(c, y, x) - b.get(c, y, x)).powi(2);
                }
            }
        }
        let direct = 10.0 * (1.0 / (sq / 189.0)).log10();
        assert!((psnr(&a, &b, 1.0).unwrap() - direct).abs() < 1e-9);
    }

    #[test]
    fn psnr_rejects_shape_mismatch_and_bad_peak() {
        let a = ImageTensor::zeros(1, 4, 4);
        assert!(matches!(
            psnr(&a, &ImageTensor::zeros(1, 4, 5), 1.0),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(psnr(&a, &a, 0.0).is_err());
    }

    #[test]
    fn ssim_fixed_point_and_symmetry() {
        let a = noise(1, 16, 20, 4);
        let b = noise(1, 16, 20, 5);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        let (c1, c2) = (0.3, 0.7);
        let a = ImageTensor::filled(1, 12, 12, c1);
        let b = ImageTensor::filled(1, 12, 12, c2);
        let expected = (2.0 * c1 * c2 + SSIM_C1) / (c1 * c1 + c2 * c2 + SSIM_C1);
        assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn ssim_too_small() {
        let a = ImageTensor::zeros(1, 10, 20);
        assert!(matches!(
            ssim(&a, &a),
            Err(Error::TooSmall {
                width: 20,
                height: 10
            })
        ));
    }

    #[test]
    fn masked_ssim_touching_windows() {
        let a = noise(1, 16, 16, 6);
        let b = noise(1, 16, 16, 7);
        let full = BinaryMask::ones(16, 16);
        assert!((masked_ssim(&a, &b, &full).unwrap() - ssim(&a, &b).unwrap()).abs() < 1e-12);
        // a corner pixel touches exactly one window
        let mut corner = BinaryMask::zeros(16, 16);
        corner.set(0, 0, true);
        let map = ssim_map(&a, &b).unwrap();
        assert_eq!(masked_ssim(&a, &b, &corner).unwrap(), map[0]);
    }

    #[test]
    fn psnr_decreases_with_noise_amplitude() {
        let a = noise(1, 12, 12, 8);
        let mut r = seeded(9);
        let n = ImageTensor::standard_normal(1, 12, 12, &mut r);
        let values: Vec<f64> = [0.01, 0.02, 0.05, 0.1, 0.2]
            .iter()
            .map(|&amp| psnr(&a, &a.zip_map(&n, |x, e| x + amp * e), 1.0).unwrap())
            .collect();
        assert!(values.windows(2).all(|w| w[0] > w[1]));
    }

    struct TruthLookup(Vec<RemovalTriplet>);

    impl Inpainter for TruthLookup {
        fn inpaint(
            &self,
            image: &ImageTensor,
            _mask: &BinaryMask,
            _seed: u64,
        ) -> Result<ImageTensor> {
            let t = self
                .0
                .iter()
                .find(|t| &t.composite == image)
                .expect("known image");
            Ok(t.ground_truth.clone())
        }
    }

    fn triplets(n: usize) -> Vec<RemovalTriplet> {
        let cfg = CorpusConfig {
            width: 16,
            height: 16,
            ..Default::default()
        };
        (0..n).map(|i| corpus_triplet(&cfg, i).unwrap()).collect()
    }

    #[test]
    fn oracle_inpainter_has_zero_gap() {
        let ts = triplets(3);
        let oracle = TruthLookup(ts.clone());
        assert_eq!(
            consistency_gap(&oracle, &ts, &PerturbConfig::default(), 1).unwrap(),
            0.0
        );
    }

    /// Paints the mask value itself: maximally mask-dependent.
    struct MaskPainter;

    impl Inpainter for MaskPainter {
        fn inpaint(
            &self,
            image: &ImageTensor,
            mask: &BinaryMask,
            seed: u64,
        ) -> Result<ImageTensor> {
            let fill = ImageTensor::filled(
                image.channels(),
                image.height(),
                image.width(),
                (seed % 7) as f64 / 7.0,
            );
            ImageTensor::composite(&fill.map(|v| v + mask.count() as f64 / 1000.0), image, mask)
        }
    }

    #[test]
    fn gap_is_zero_for_identity_perturbation_and_nonnegative_otherwise() {
        let ts = triplets(2);
        assert_eq!(
            consistency_gap(&MaskPainter, &ts, &PerturbConfig::identity(), 3).unwrap(),
            0.0
        );
        assert!(consistency_gap(&MaskPainter, &ts, &PerturbConfig::default(), 3).unwrap() > 0.0);
    }

    #[test]
    fn means_match_rows() {
        let rows = vec![
            ImageMetrics {
                index: 0,
                psnr: 20.0,
                ssim: 0.5,
                mse: 0.01,
                psnr_masked: f64::INFINITY,
                ssim_masked: 1.0,
                gap: Some(0.1),
            },
            ImageMetrics {
                index: 1,
                psnr: 30.0,
                ssim: 0.7,
                mse: 0.001,
                psnr_masked: 10.0,
                ssim_masked: 0.2,
                gap: Some(0.3),
            },
        ];
        let r = MetricsReport::from_rows(rows, None);
        assert_eq!(r.psnr.mean, 25.0);
        assert!((r.ssim - 0.6).abs() < 1e-12);
        assert!((r.mse - 0.0055).abs() < 1e-12);
        assert_eq!(
            r.psnr_masked,
            FiniteMean {
                mean: 10.0,
                inf_count: 1
            }
        );
        assert!((r.consistency_gap.unwrap() - 0.2).abs() < 1e-12);
        assert!(r.to_text().contains("psnr_masked_inf_count = 1\n"));
        assert!(r.to_tsv().contains("\tinf\t"));
    }
}
