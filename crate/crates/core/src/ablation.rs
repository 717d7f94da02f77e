//! Equal-budget comparison of the four training arms.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imagio::Corpus;
use crate::metrics::{evaluate, DiffusionInpainter, EvalOptions, MetricsReport, Source};
use crate::train::{run_training, Checkpoint, LossReport, Mode, TrainConfig, Trainer};

/// Steps at the end of training averaged into the reported consistency loss.
pub const CONS_WINDOW: usize = 50;

#[derive(Debug, Clone)]
pub struct AblationConfig {
    /// Shared by every arm; `mode` and `seed` are overwritten per run.
    pub base: TrainConfig,
    pub seeds: Vec<u64>,
    pub arms: Vec<Mode>,
    pub sample_steps: usize,
    pub eval_seed: u64,
    pub eval_limit: Option<usize>,
}

impl AblationConfig {
    pub fn new(base: TrainConfig, seeds: Vec<u64>) -> Self {
        Self {
            base,
            seeds,
            arms: Mode::ALL.to_vec(),
            sample_steps: crate::diffusion::DEFAULT_SAMPLE_STEPS,
            eval_seed: 0,
            eval_limit: None,
        }
    }
}

/// One trained and evaluated `(arm, seed)` pair.
#[derive(Debug, Clone)]
pub struct ArmRun {
    pub mode: Mode,
    pub seed: u64,
    pub checkpoint: Checkpoint,
    pub report: MetricsReport,
    /// Mean training consistency loss over the last [`CONS_WINDOW`] steps.
    pub cons: f64,
}

/// Per-arm means over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmSummary {
    pub mode: Mode,
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
    pub psnr_masked: f64,
    pub ssim_masked: f64,
    pub gap: f64,
    pub cons: f64,
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub rows: Vec<ArmSummary>,
    pub runs: Vec<ArmRun>,
}

pub const ABLATION_TSV_HEADER: &str = "arm\tpsnr\tssim\tmse\tpsnr_masked\tssim_masked\tgap\tcons";

impl AblationTable {
    pub fn row(&self, mode: Mode) -> Option<&ArmSummary> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("{ABLATION_TSV_HEADER}\n");
        for r in &self.rows {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.mode, r.psnr, r.ssim, r.mse, r.psnr_masked, r.ssim_masked, r.gap, r.cons
            )
            .unwrap();
        }
        out
    }
}

fn window_cons(reports: &[LossReport]) -> f64 {
    let tail = &reports[reports.len().saturating_sub(CONS_WINDOW)..];
    if tail.is_empty() {
        return 0.0;
    }
    tail.iter().map(|r| r.cons).sum::<f64>() / tail.len() as f64
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Trains every arm for every seed on `train` and scores each on `eval`.
/// With `out_dir`, each run's log, checkpoints and metrics go to
/// `out_dir/<arm>/seed_<seed>/`.
pub fn run_ablation(
    cfg: &AblationConfig,
    train: &Corpus,
    eval: &Corpus,
    out_dir: Option<&Path>,
    progress: &mut dyn FnMut(&ArmRun),
) -> Result<AblationTable> {
    if cfg.seeds.is_empty() || cfg.arms.is_empty() {
        return Err(Error::Config(
            "ablation needs at least one seed and one arm".into(),
        ));
    }
    let mut runs = Vec::new();
    for &mode in &cfg.arms {
        for &seed in &cfg.seeds {
            let run_cfg = TrainConfig {
                mode,
                seed,
                ..cfg.base.clone()
            };
            let trainer = Trainer::new(run_cfg.clone(), &train.triplets)?;
            let run_dir = out_dir.map(|d| d.join(mode.as_str()).join(format!("seed_{seed}")));
            let (checkpoint, reports) = match &run_dir {
                Some(dir) => {
                    let outcome = run_training(trainer, dir)?;
                    (outcome.checkpoint, outcome.reports)
                }
                None => {
                    let mut trainer = trainer;
                    let mut reports = Vec::new();
                    while trainer.step() < run_cfg.steps {
                        reports.push(trainer.step_once()?);
                    }
                    (trainer.checkpoint(), reports)
                }
            };
            let schedule = run_cfg.schedule()?;
            let inpainter = DiffusionInpainter {
                model: &checkpoint.params,
                schedule: &schedule,
                n_steps: cfg.sample_steps,
            };
            let opts = EvalOptions {
                seed: cfg.eval_seed,
                limit: cfg.eval_limit,
                gap: Some(cfg.base.perturb.clone()),
                save_outputs: None,
                config_digest: Some(crate::metrics::hex(&run_cfg.digest())),
            };
            let report = evaluate(&Source::Inpainter(&inpainter), eval, &opts)?;
            if let Some(dir) = &run_dir {
                report.write(dir)?;
            }
            let run = ArmRun {
                mode,
                seed,
                checkpoint,
                report,
                cons: window_cons(&reports),
            };
            progress(&run);
            runs.push(run);
        }
    }
    let rows = cfg
        .arms
        .iter()
        .map(|&mode| {
            let of = || runs.iter().filter(move |r| r.mode == mode);
            ArmSummary {
                mode,
                psnr: mean(of().map(|r| r.report.psnr.mean)),
                ssim: mean(of().map(|r| r.report.ssim)),
                mse: mean(of().map(|r| r.report.mse)),
                psnr_masked: mean(of().map(|r| r.report.psnr_masked.mean)),
                ssim_masked: mean(of().map(|r| r.report.ssim_masked)),
                gap: mean(of().map(|r| r.report.consistency_gap.unwrap_or(0.0))),
                cons: mean(of().map(|r| r.cons)),
            }
        })
        .collect();
    let table = AblationTable { rows, runs };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("ablation.tsv"), table.to_tsv())?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagio::CorpusConfig;
    use crate::mask::PerturbConfig;

    fn small() -> (Corpus, TrainConfig) {
        let corpus = Corpus::generate(&CorpusConfig {
            count: 3,
            width: 16,
            height: 16,
            ..Default::default()
        })
        .unwrap();
        let base = TrainConfig {
            steps: 3,
            hidden_width: 8,
            log_wall_time: false,
            ..Default::default()
        };
        (corpus, base)
    }

    #[test]
    fn table_has_one_row_per_arm_and_baseline_cons_is_zero() {
        let (corpus, base) = small();
        let mut cfg = AblationConfig::new(base, vec![1]);
        cfg.sample_steps = 2;
        let table = run_ablation(&cfg, &corpus, &corpus, None, &mut |_| {}).unwrap();
        assert_eq!(table.rows.len(), 4);
        assert_eq!(table.row(Mode::Baseline).unwrap().cons, 0.0);
        assert!(table.row(Mode::Mcr).unwrap().cons > 0.0);
        let tsv = table.to_tsv();
        assert_eq!(tsv.lines().count(), 5);
        assert!(tsv.starts_with(ABLATION_TSV_HEADER));
    }

    #[test]
    fn degenerate_perturbations_make_arms_identical() {
        let (corpus, base) = small();
        let base = TrainConfig {
            perturb: PerturbConfig::identity(),
            ..base
        };
        let mut cfg = AblationConfig::new(base, vec![4]);
        cfg.sample_steps = 2;
        cfg.eval_limit = Some(1);
        let table = run_ablation(&cfg, &corpus, &corpus, None, &mut |_| {}).unwrap();
        let first = table.runs[0].checkpoint.state_bytes();
        for run in &table.runs[1..] {
            assert_eq!(run.checkpoint.state_bytes(), first, "{}", run.mode);
        }
    }
}
