use proptest::prelude::*;
use rpfnet_core::imaging::Plane;
use rpfnet_core::metrics::{correlation_cc, entropy, psd_analyze, ror_rank, scd, spatial_frequency, std_dev};

fn triple(max_side: usize) -> impl Strategy<Value = (Plane, Plane, Plane)> {
    (2..=max_side, 2..=max_side).prop_flat_map(|(h, w)| {
        let v = || proptest::collection::vec(0.0..=1.0f64, h * w);
        (v(), v(), v()).prop_map(move |(a, b, c)| {
            (Plane::new(h, w, a).unwrap(), Plane::new(h, w, b).unwrap(), Plane::new(h, w, c).unwrap())
        })
    })
}

fn shuffled(p: &Plane, seed: u64) -> Plane {
    let mut d = p.data().to_vec();
    let mut s = seed | 1;
    for i in (1..d.len()).rev() {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        d.swap(i, (s >> 33) as usize % (i + 1));
    }
    Plane::new(p.height(), p.width(), d).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn entropy_and_sd_ignore_pixel_order((p, _, _) in triple(24), seed in any::<u64>()) {
        let q = shuffled(&p, seed);
        prop_assert!((entropy(&p) - entropy(&q)).abs() < 1e-12);
        prop_assert!((std_dev(&p) - std_dev(&q)).abs() < 1e-9);
        let en = entropy(&p);
        prop_assert!((0.0..=8.0).contains(&en));
    }

    #[test]
    fn cc_and_scd_ignore_positive_affine_rescaling((f, ir, vis) in triple(20), a in 0.1..10.0f64, b in -5.0..5.0f64) {
        let g = |p: &Plane| p.map(|v| a * v + b);
        let (cc, sc) = (correlation_cc(&f, &ir, &vis).unwrap(), scd(&f, &ir, &vis).unwrap());
        prop_assert!((correlation_cc(&g(&f), &ir, &vis).unwrap() - cc).abs() < 1e-9);
        prop_assert!((correlation_cc(&f, &g(&ir), &vis).unwrap() - cc).abs() < 1e-9);
        // SCD differences mix operands, so every operand is rescaled together.
        prop_assert!((scd(&g(&f), &g(&ir), &g(&vis)).unwrap() - sc).abs() < 1e-9);
    }

    #[test]
    fn ror_ignores_monotone_transforms(
        table in proptest::collection::vec(proptest::collection::vec(0.01..10.0f64, 4), 2..8),
    ) {
        let hib = [true, false, true, false];
        let base = ror_rank(&table, &hib).unwrap();
        let warped: Vec<Vec<f64>> = table
            .iter()
            .map(|r| vec![r[0].ln(), r[1].powi(3), 2.0 * r[2] + 7.0, r[3].sqrt()])
            .collect();
        prop_assert_eq!(ror_rank(&warped, &hib).unwrap(), base);
    }

    #[test]
    fn psd_satisfies_parseval((p, _, _) in triple(32)) {
        let r = psd_analyze(&p);
        let n = p.len() as f64;
        let var = (std_dev(&p)).powi(2);
        let total: f64 = r.psd2d.iter().sum();
        prop_assert!(r.psd2d.iter().all(|&v| v >= 0.0));
        prop_assert!((total - var * n).abs() <= 1e-6 * (var * n).max(1e-12));
    }
}

#[test]
fn shuffling_changes_spatial_frequency() {
    let p = Plane::from_fn(16, 16, |y, x| (y + x) as f64 / 30.0);
    let q = shuffled(&p, 99);
    assert!(spatial_frequency(&q) > 2.0 * spatial_frequency(&p));
}

#[test]
fn full_ramp_has_eight_bits() {
    let p = Plane::from_fn(16, 16, |y, x| (y * 16 + x) as f64 / 255.0);
    assert!((entropy(&p) - 8.0).abs() < 1e-12);
}

#[test]
fn white_noise_spectrum_is_near_flat() {
    let (h, w) = (128, 128);
    let mut s = 0x9e3779b97f4a7c15u64;
    let p = Plane::from_fn(h, w, |_, _| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64
    });
    let bound = ((h * w) as f64).log2();
    let e = psd_analyze(&p).spectral_entropy;
    assert!(e <= bound && e >= 0.95 * bound, "{e} vs {bound}");
    // Periodogram bins of white noise are exponential, which costs (1 − γ)/ln 2 bits.
    let expected = bound - (1.0 - 0.577_215_664_901_532_9) / std::f64::consts::LN_2;
    assert!((e - expected).abs() < 0.05, "{e} vs {expected}");
}

#[test]
fn radial_profile_reaches_the_corner() {
    for (h, w) in [(16, 16), (15, 20), (7, 3)] {
        let r = psd_analyze(&Plane::from_fn(h, w, |y, x| ((y * 7 + x * 3) % 5) as f64 / 4.0));
        let corner = ((h / 2) as f64).hypot((w / 2) as f64).round() as usize;
        assert_eq!(r.radial_profile.len(), corner + 1);
    }
}
