use mcr::denoiser::{DenoiserConfig, DenoiserParams};
use mcr::diffusion::{NoisePredictor, NoiseSchedule};
use mcr::error::{Error, Result};
use mcr::imagio::{corpus_triplet, CorpusConfig, ImageTensor, RemovalTriplet};
use mcr::mask::{BinaryMask, PerturbConfig};
use mcr::rng::seeded;
use mcr::train::{
    cond_encode, cons_loss, cons_loss_for, rec_loss, total_loss, train_step_observed, Checkpoint,
    Mode, StepConfig, TrainConfig, TrainState, Trainable, Trainer,
};
use proptest::prelude::*;

fn tensor(values: &[f64]) -> ImageTensor {
    ImageTensor::new(1, 1, values.len(), values.to_vec()).unwrap()
}

#[test]
fn rec_loss_examples() {
    let e = tensor(&[0.3, -1.2, 2.0]);
    assert_eq!(rec_loss(&e, &e).unwrap(), 0.0);
    let zeros = ImageTensor::zeros(1, 4, 4);
    let ones = ImageTensor::filled(1, 4, 4, 1.0);
    assert_eq!(rec_loss(&zeros, &ones).unwrap(), 1.0);
    assert!(matches!(
        rec_loss(&zeros, &tensor(&[1.0])),
        Err(Error::ShapeMismatch(_))
    ));
}

#[test]
fn rec_loss_matches_two_pass_oracle() {
    let mut r = seeded(8);
    let a = ImageTensor::standard_normal(3, 9, 11, &mut r);
    let b = ImageTensor::standard_normal(3, 9, 11, &mut r);
    let diffs: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    let mut acc = 0.0;
    for d in &diffs {
        acc += d * d;
    }
    let oracle = acc / diffs.len() as f64;
    assert!((rec_loss(&a, &b).unwrap() - oracle).abs() < 1e-12);
}

#[test]
fn cons_loss_examples() {
    let o = ImageTensor::zeros(1, 3, 3);
    let d = ImageTensor::filled(1, 3, 3, 1.0);
    let r = ImageTensor::filled(1, 3, 3, 2.0);
    assert_eq!(cons_loss(&o, &d, &r).unwrap(), 5.0);
    assert_eq!(cons_loss(&o, &r, &d).unwrap(), 5.0);
    assert_eq!(cons_loss_for(Mode::DilateOnly, &o, &d, &r).unwrap(), 1.0);
    assert_eq!(cons_loss_for(Mode::ReshapeOnly, &o, &d, &r).unwrap(), 4.0);
    assert_eq!(cons_loss_for(Mode::Baseline, &o, &d, &r).unwrap(), 0.0);
}

#[test]
fn total_loss_examples() {
    assert_eq!(total_loss(0.5, 0.25, 2.0), 1.0);
    assert_eq!(total_loss(0.7, 3.0, 0.0), 0.7);
    assert_eq!(total_loss(0.7, 0.0, 2.0), 0.7);
}

#[test]
fn cond_encode_edge_masks() {
    let mut r = seeded(2);
    let x = ImageTensor::standard_normal(3, 5, 6, &mut r);
    let z = cond_encode(&x, &BinaryMask::zeros(6, 5)).unwrap();
    for c in 0..3 {
        assert_eq!(z.plane(c), x.plane(c));
    }
    assert!(z.plane(3).iter().all(|&v| v == 0.0));
    let z = cond_encode(&x, &BinaryMask::ones(6, 5)).unwrap();
    assert!(z.data()[..3 * 30].iter().all(|&v| v == 0.0));
    assert!(z.plane(3).iter().all(|&v| v == 1.0));
    assert!(matches!(
        cond_encode(&x, &BinaryMask::zeros(5, 5)),
        Err(Error::ShapeMismatch(_)) | Err(Error::DimensionMismatch(_))
    ));
}

proptest! {
    #[test]
    fn cond_encode_ignores_masked_content(seed in any::<u64>(), density in 0.0f64..1.0) {
        let mut r = seeded(seed);
        let x = ImageTensor::standard_normal(1, 8, 8, &mut r);
        let mask = BinaryMask::from_fn(8, 8, |_, _| rand::Rng::random::<f64>(&mut r) < density);
        let noise = ImageTensor::standard_normal(1, 8, 8, &mut r);
        let y = ImageTensor::composite(&noise, &x, &mask).unwrap();
        prop_assert_eq!(cond_encode(&x, &mask).unwrap(), cond_encode(&y, &mask).unwrap());
    }

    #[test]
    fn losses_are_ordered(seed in any::<u64>(), lambda in 0.0f64..10.0) {
        let mut r = seeded(seed);
        let [e, o, d, rr] = [(); 4].map(|_| ImageTensor::standard_normal(1, 4, 4, &mut r));
        let rec = rec_loss(&e, &o).unwrap();
        let cons = cons_loss(&o, &d, &rr).unwrap();
        prop_assert!(cons >= 0.0);
        prop_assert!(total_loss(rec, cons, lambda) >= rec);
    }
}

/// `ε̂ = θ · x_t`, ignoring the time and conditioning.
#[derive(Clone)]
struct Scalar(Vec<f64>);

impl NoisePredictor for Scalar {
    fn predict_noise(
        &self,
        x_t: &ImageTensor,
        _t: usize,
        _cond: &ImageTensor,
    ) -> Result<ImageTensor> {
        Ok(x_t.map(|v| self.0[0] * v))
    }
}

impl Trainable for Scalar {
    type Cache = ImageTensor;

    fn forward_cached(
        &self,
        x_t: &ImageTensor,
        t: usize,
        cond: &ImageTensor,
    ) -> Result<(ImageTensor, ImageTensor)> {
        Ok((self.predict_noise(x_t, t, cond)?, x_t.clone()))
    }

    fn backward_into(
        &self,
        x_t: &ImageTensor,
        grad_out: &ImageTensor,
        grad: &mut [f64],
    ) -> Result<()> {
        grad[0] += x_t
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(a, b)| a * b)
            .sum::<f64>();
        Ok(())
    }

    fn params(&self) -> &[f64] {
        &self.0
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

fn triplets(n: usize, size: usize) -> Vec<RemovalTriplet> {
    let cfg = CorpusConfig {
        width: size,
        height: size,
        ..Default::default()
    };
    (0..n).map(|i| corpus_triplet(&cfg, i).unwrap()).collect()
}

#[test]
fn scalar_model_adam_step_matches_closed_form() {
    let corpus = triplets(2, 8);
    let batch: Vec<&RemovalTriplet> = corpus.iter().collect();
    let theta0 = 0.3;
    let lr = 1e-2;
    let mut state = TrainState::new(Scalar(vec![theta0]), lr, seeded(5));
    let cfg = StepConfig::from(&TrainConfig::default());
    let sched = NoiseSchedule::default();
    let mut seen = Vec::new();
    let report = train_step_observed(&mut state, &batch, &cfg, &sched, &mut |e| {
        seen.push((e.x_t.clone(), e.eps.clone()));
    })
    .unwrap();
    // the model ignores the mask, so every branch agrees and cons is zero
    assert_eq!(report.cons, 0.0);
    let originals: Vec<_> = seen.chunks(3).map(|c| c[0].clone()).collect();
    let mut g = 0.0;
    let mut rec = 0.0;
    for (x, e) in &originals {
        let n = x.len() as f64;
        for (xv, ev) in x.data().iter().zip(e.data()) {
            g += 2.0 * (theta0 * xv - ev) * xv / n / 2.0;
            rec += (ev - theta0 * xv).powi(2) / n / 2.0;
        }
    }
    assert!((report.rec - rec).abs() < 1e-12);
    // first Adam step: m̂ = g and v̂ = g², so the step is lr · g / (|g| + ε)
    let expected = theta0 - lr * g / (g.abs() + 1e-8);
    assert!(
        (state.model.0[0] - expected).abs() < 1e-12,
        "{} vs {expected}",
        state.model.0[0]
    );
}

fn small_config() -> TrainConfig {
    TrainConfig {
        steps: 6,
        hidden_width: 8,
        log_wall_time: false,
        ..Default::default()
    }
}

#[test]
fn zero_steps_leave_initialization() {
    let corpus = triplets(2, 16);
    let cfg = TrainConfig {
        steps: 0,
        ..small_config()
    };
    let dir = tempfile::tempdir().unwrap();
    let out = mcr::train::train(&cfg, &corpus, dir.path()).unwrap();
    let mut r = seeded(cfg.seed);
    let init = DenoiserParams::init(
        DenoiserConfig {
            image_channels: 1,
            hidden_width: 8,
            time_embed_dim: 16,
        },
        &mut r,
    )
    .unwrap();
    assert_eq!(out.checkpoint.params, init);
    assert_eq!(out.checkpoint.step, 0);
    assert!(out.checkpoint.adam_m.iter().all(|&v| v == 0.0));
}

#[test]
fn identical_configs_give_identical_checkpoints() {
    let corpus = triplets(3, 16);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = small_config();
    mcr::train::train(&cfg, &corpus, a.path()).unwrap();
    mcr::train::train(&cfg, &corpus, b.path()).unwrap();
    for f in ["final.mcr", "loss.tsv"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap()
        );
    }
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let corpus = triplets(2, 16);
    let mut t = Trainer::new(small_config(), &corpus).unwrap();
    t.step_once().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.mcr");
    t.checkpoint().save(&p).unwrap();
    let loaded = Checkpoint::load(&p).unwrap();
    let q = dir.path().join("b.mcr");
    loaded.save(&q).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    assert_eq!(bytes, std::fs::read(&q).unwrap());
    for cut in [0, 3, 27, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(
                Checkpoint::from_bytes(&bytes[..cut]),
                Err(Error::CorruptCheckpoint(_))
            ),
            "cut {cut}"
        );
    }
}

#[test]
fn resume_through_disk_and_log_append() {
    let corpus = triplets(3, 16);
    let full_dir = tempfile::tempdir().unwrap();
    let full = mcr::train::train(&small_config(), &corpus, full_dir.path()).unwrap();

    let split_dir = tempfile::tempdir().unwrap();
    let half = TrainConfig {
        steps: 3,
        ..small_config()
    };
    let first = mcr::train::train(&half, &corpus, split_dir.path()).unwrap();
    let mut ckpt = Checkpoint::load(&first.checkpoint_path).unwrap();
    ckpt.config.steps = 6;
    let resumed = mcr::train::run_training(
        Trainer::from_checkpoint(ckpt, &corpus).unwrap(),
        split_dir.path(),
    )
    .unwrap();
    assert_eq!(
        resumed.checkpoint.state_bytes(),
        full.checkpoint.state_bytes()
    );
    assert_eq!(
        std::fs::read(&resumed.log_path).unwrap(),
        std::fs::read(&full.log_path).unwrap()
    );
}

#[test]
fn uniform_dilation_is_reproducible() {
    let corpus = triplets(2, 16);
    let cfg = TrainConfig {
        perturb: PerturbConfig {
            dilation: mcr::mask::DilationRadius::Uniform { lo: 1, hi: 3 },
            ..Default::default()
        },
        ..small_config()
    };
    let run = || {
        let mut t = Trainer::new(cfg.clone(), &corpus).unwrap();
        (0..3)
            .map(|_| t.step_once().unwrap().total)
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}
