//! Replays the checked-in fuzz corpus through the same checks the fuzz
//! targets make, and throws arbitrary bytes at every decoder.

use std::fs;
use std::path::Path;

use mcr::denoiser::DenoiserParams;
use mcr::imagio::{ImageTensor, Manifest};
use mcr::mask::BinaryMask;
use mcr::pnm;
use mcr::train::{Checkpoint, TrainConfig};
use proptest::prelude::*;

fn check_pnm(data: &[u8]) {
    if let Ok(p) = pnm::decode(data) {
        assert_eq!(pnm::decode(&pnm::encode(&p)).unwrap(), p);
    }
    if let Ok(img) = ImageTensor::from_pnm_bytes(data) {
        assert_eq!(
            ImageTensor::from_pnm_bytes(&img.to_pnm_bytes().unwrap()).unwrap(),
            img
        );
    }
}

fn check_mask(data: &[u8]) {
    if let Ok(m) = BinaryMask::from_pgm_bytes(data) {
        assert_eq!(BinaryMask::from_pgm_bytes(&m.to_pgm_bytes()).unwrap(), m);
        if !m.is_empty() {
            assert!(m.is_subset_of(&m.bounding_rect().unwrap()));
        }
    }
}

fn check_checkpoint(data: &[u8]) {
    if let Ok(c) = Checkpoint::from_bytes(data) {
        let bytes = c.to_bytes();
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap().to_bytes(), bytes);
    }
    if let Ok((p, used)) = DenoiserParams::from_bytes(data) {
        assert!(used <= data.len());
        assert_eq!(p.to_bytes(), data[..used]);
    }
}

fn check_config(data: &[u8]) {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = TrainConfig::from_text(text) {
            assert_eq!(TrainConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        }
    }
}

fn check_manifest(data: &[u8]) {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = Manifest::parse(text) {
            assert_eq!(Manifest::parse(&m.render()).unwrap(), m);
        }
    }
}

type Target = (&'static str, fn(&[u8]));

const TARGETS: [Target; 5] = [
    ("pnm_decode", check_pnm),
    ("mask_decode", check_mask),
    ("checkpoint_decode", check_checkpoint),
    ("config_parse", check_config),
    ("manifest_parse", check_manifest),
];

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().into_string().unwrap(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn every_target_has_seeds_and_they_pass() {
    for (target, check) in TARGETS {
        let seeds = seeds(target);
        assert!(seeds.len() >= 2, "{target} has {} seeds", seeds.len());
        for (name, data) in &seeds {
            let r = std::panic::catch_unwind(|| check(data));
            assert!(r.is_ok(), "{target}/{name}");
        }
    }
}

#[test]
fn seeds_include_valid_inputs() {
    assert!(seeds("pnm_decode")
        .iter()
        .any(|(_, d)| pnm::decode(d).is_ok()));
    assert!(seeds("mask_decode")
        .iter()
        .any(|(_, d)| BinaryMask::from_pgm_bytes(d).is_ok()));
    assert!(seeds("checkpoint_decode")
        .iter()
        .any(|(_, d)| Checkpoint::from_bytes(d).is_ok()));
    assert!(seeds("manifest_parse")
        .iter()
        .any(|(_, d)| Manifest::parse(std::str::from_utf8(d).unwrap()).is_ok()));
    assert!(seeds("config_parse")
        .iter()
        .any(|(_, d)| TrainConfig::from_text(std::str::from_utf8(d).unwrap()).is_ok()));
}

/// Single-byte corruptions of a valid checkpoint never panic and are
/// either rejected or re-encode to themselves.
#[test]
fn checkpoint_byte_flips() {
    let (_, valid) = seeds("checkpoint_decode")
        .into_iter()
        .find(|(_, d)| Checkpoint::from_bytes(d).is_ok())
        .unwrap();
    for i in (0..valid.len()).step_by(37) {
        let mut data = valid.clone();
        data[i] ^= 0x5a;
        check_checkpoint(&data);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn arbitrary_bytes_never_panic(data in prop::collection::vec(any::<u8>(), 0..256)) {
        for (_, check) in TARGETS {
            check(&data);
        }
    }

    #[test]
    fn mutated_headers_never_panic(
        w in 0usize..20,
        h in 0usize..20,
        max in 0u32..70000,
        magic in prop::sample::select(vec!["P5", "P6", "P2", "P5#", ""]),
        body in prop::collection::vec(any::<u8>(), 0..1300),
    ) {
        let mut data = format!("{magic} {w} {h} {max}\n").into_bytes();
        data.extend(body);
        check_pnm(&data);
        check_mask(&data);
    }

    #[test]
    fn config_lines_never_panic(
        key in prop::sample::select(mcr::train::CONFIG_KEYS.to_vec()),
        value in "[ -~]{0,24}",
    ) {
        check_config(format!("{key} = {value}\n").as_bytes());
    }
}
