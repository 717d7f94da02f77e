use mcr::mask::{
    random_mask, reshape_perturb, reshape_perturb_traced, sample_perturbations, BinaryMask,
    DilationRadius, PerturbConfig, RandomMaskParams, ReshapeKind,
};
use mcr::rng::seeded;
use proptest::prelude::*;

mod common;
use common::{dilate_oracle, rect_oracle};

fn mask_strategy(w: usize, h: usize, density: f64) -> impl Strategy<Value = BinaryMask> {
    prop::collection::vec(prop::bool::weighted(density), w * h)
        .prop_map(move |bits| BinaryMask::from_bits(w, h, bits).unwrap())
}

fn nonempty_mask(w: usize, h: usize) -> impl Strategy<Value = BinaryMask> {
    (mask_strategy(w, h, 0.08), 0..w, 0..h).prop_map(|(mut m, c, r)| {
        m.set(r, c, true);
        m
    })
}

/// A sparse mask whose set pixels stay `margin` away from every border.
fn interior_mask(size: usize, margin: usize) -> impl Strategy<Value = BinaryMask> {
    let inner = size - 2 * margin;
    mask_strategy(inner, inner, 0.1).prop_map(move |m| {
        BinaryMask::from_fn(size, size, |r, c| {
            r >= margin
                && c >= margin
                && r < size - margin
                && c < size - margin
                && m.get(r - margin, c - margin)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn dilate_matches_oracle(m in mask_strategy(16, 16, 0.05), k in 1usize..=3) {
        prop_assert_eq!(m.dilate(k), dilate_oracle(&m, k));
    }

    #[test]
    fn bounding_rect_matches_oracle(m in nonempty_mask(16, 16)) {
        prop_assert_eq!(m.bounding_rect().unwrap(), rect_oracle(&m));
    }

    #[test]
    fn union_matches_per_pixel_max(a in mask_strategy(16, 16, 0.3), b in mask_strategy(16, 16, 0.3)) {
        let u = a.union(&b).unwrap();
        for (i, &bit) in u.bits().iter().enumerate() {
            prop_assert_eq!(bit as u8, (a.bits()[i] as u8).max(b.bits()[i] as u8));
        }
    }

    #[test]
    fn containment(m in nonempty_mask(16, 16), other in mask_strategy(16, 16, 0.2), k in 0usize..5) {
        prop_assert!(m.is_subset_of(&m.dilate(k)));
        prop_assert!(m.is_subset_of(&m.bounding_rect().unwrap()));
        prop_assert!(m.is_subset_of(&m.union(&other).unwrap()));
        prop_assert!(other.is_subset_of(&m.union(&other).unwrap()));
    }

    #[test]
    fn monotonicity(m in nonempty_mask(16, 16), extra in mask_strategy(16, 16, 0.1), k in 0usize..4) {
        let bigger = m.union(&extra).unwrap();
        prop_assert!(m.dilate(k).is_subset_of(&bigger.dilate(k)));
        prop_assert!(m.bounding_rect().unwrap().is_subset_of(&bigger.bounding_rect().unwrap()));
    }

    #[test]
    fn composition_on_interior_masks(m in interior_mask(20, 6), k1 in 0usize..=3, k2 in 0usize..=3) {
        prop_assert_eq!(m.dilate(k1).dilate(k2), m.dilate(k1 + k2));
    }

    #[test]
    fn rectangle_is_minimal(m in nonempty_mask(16, 16)) {
        let rect = m.bounding_rect().unwrap();
        let b = rect.bounds().unwrap();
        // dropping any edge row or column of the rectangle uncovers a set pixel of m
        let row_hit = |r: usize| (0..16).any(|c| m.get(r, c));
        let col_hit = |c: usize| (0..16).any(|r| m.get(r, c));
        prop_assert!(row_hit(b.row_min) && row_hit(b.row_max));
        prop_assert!(col_hit(b.col_min) && col_hit(b.col_max));
        prop_assert_eq!(rect.count(), (b.row_max - b.row_min + 1) * (b.col_max - b.col_min + 1));
    }

    #[test]
    fn perturbations_are_supersets_and_deterministic(m in nonempty_mask(24, 24), seed in any::<u64>()) {
        let cfg = PerturbConfig::default();
        let p = sample_perturbations(&m, &cfg, &mut seeded(seed)).unwrap();
        prop_assert!(m.is_subset_of(&p.dilated));
        prop_assert!(m.is_subset_of(&p.reshaped));
        prop_assert_eq!(&p, &sample_perturbations(&m, &cfg, &mut seeded(seed)).unwrap());
    }

    #[test]
    fn random_mask_stays_under_cap(seed in any::<u64>(), cap in 0.05f64..=1.0) {
        let params = RandomMaskParams { target_coverage_cap: cap, ..Default::default() };
        let m = random_mask(32, 32, &params, &mut seeded(seed));
        prop_assert!(m.coverage() <= cap);
        prop_assert_eq!(m, random_mask(32, 32, &params, &mut seeded(seed)));
    }
}

#[test]
fn random_mask_mean_coverage_regression() {
    let params = RandomMaskParams::default();
    let total: usize = (0..1000u64)
        .map(|seed| random_mask(64, 64, &params, &mut seeded(seed)).count())
        .sum();
    let mean = total as f64 / (1000.0 * 64.0 * 64.0);
    assert!((0.05..=params.target_coverage_cap).contains(&mean));
    assert!(
        (mean - 0.2417685546875).abs() < 1e-12,
        "mean coverage {mean}"
    );
}

#[test]
fn reshape_branch_frequency_is_balanced() {
    let mut m = BinaryMask::zeros(32, 32);
    m.set(10, 12, true);
    m.set(14, 20, true);
    let cfg = PerturbConfig::default();
    let mut rng = seeded(42);
    let rects = (0..10_000)
        .filter(|_| reshape_perturb_traced(&m, &cfg, &mut rng).unwrap().1 == ReshapeKind::Rect)
        .count();
    assert!((4700..=5300).contains(&rects), "{rects}");
}

#[test]
fn reshape_with_certain_rectangle() {
    let m = BinaryMask::from_fn(12, 12, |r, c| (r == 2 && c == 3) || (r == 7 && c == 9));
    let cfg = PerturbConfig {
        rect_probability: 1.0,
        ..Default::default()
    };
    let mut rng = seeded(1);
    for _ in 0..50 {
        assert_eq!(
            reshape_perturb(&m, &cfg, &mut rng).unwrap(),
            rect_oracle(&m)
        );
    }
}

#[test]
fn auto_radius_at_reference_width() {
    assert_eq!(DilationRadius::auto_for_width(256), 8);
    assert_eq!(DilationRadius::auto_for_width(64), 2);
}
