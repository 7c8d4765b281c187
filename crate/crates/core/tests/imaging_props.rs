use proptest::prelude::*;
use rpfnet_core::fft::{fft2, ifft2, ifft2_real};
use rpfnet_core::imaging::{adaptive_weight, compute_residual, sobel_gradient, standardize, MaskSet, Plane};

fn plane(max_side: usize) -> impl Strategy<Value = Plane> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(h, w)| {
        proptest::collection::vec(0.0..=1.0f64, h * w).prop_map(move |d| Plane::new(h, w, d).unwrap())
    })
}

fn plane_pair(max_side: usize) -> impl Strategy<Value = (Plane, Plane)> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(h, w)| {
        let v = || proptest::collection::vec(0.0..=1.0f64, h * w);
        (v(), v()).prop_map(move |(a, b)| (Plane::new(h, w, a).unwrap(), Plane::new(h, w, b).unwrap()))
    })
}

fn binary(p: &Plane) -> bool {
    p.data().iter().all(|&v| v == 0.0 || v == 1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masks_are_binary_and_weights_complementary((ir, vis) in plane_pair(24)) {
        let m = MaskSet::compute(&ir, &vis).unwrap();
        for p in m.all() {
            prop_assert!(binary(p));
        }
        for (a, b) in m.weight.data().iter().zip(m.weight_complement.data()) {
            prop_assert_eq!(a + b, 1.0);
        }
    }

    #[test]
    fn residual_is_antisymmetric((a, b) in plane_pair(24)) {
        let ab = compute_residual(&a, &b).unwrap();
        let ba = compute_residual(&b, &a).unwrap();
        for (x, y) in ab.0.data().iter().zip(ba.0.data()) {
            prop_assert_eq!(*x, -*y);
        }
    }

    #[test]
    fn sobel_is_non_negative(p in plane(24)) {
        prop_assert!(sobel_gradient(&p).data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn sobel_vanishes_on_constants(h in 1usize..20, w in 1usize..20, v in 0.0..=1.0f64) {
        prop_assert!(sobel_gradient(&Plane::filled(h, w, v)).data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn weight_ignores_affine_rescaling_of_ir((ir, vis) in plane_pair(20), a in 0.5..4.0f64, b in -1.0..1.0f64) {
        prop_assume!(ir.std() > 1e-3);
        let scaled = ir.map(|v| a * v + b);
        let (s0, s1) = (standardize(&ir), standardize(&scaled));
        for (x, y) in s0.data().iter().zip(s1.data()) {
            prop_assert!((x - y).abs() < 1e-6);
        }
        // The residual is held fixed so only the IR rescaling is under test.
        let r = compute_residual(&ir, &vis).unwrap();
        let (w0, _) = adaptive_weight(&ir, &r).unwrap();
        let (w1, _) = adaptive_weight(&scaled, &r).unwrap();
        let flips = w0.data().iter().zip(w1.data()).filter(|(x, y)| x != y).count();
        // Ties at the threshold may flip under rounding; nothing else may.
        prop_assert!(flips <= 1, "{} flips", flips);
    }

    #[test]
    fn fft_round_trip(p in plane(40)) {
        let (h, w) = p.dims();
        let back = ifft2_real(&fft2(p.data(), h, w).unwrap(), h, w).unwrap();
        for (a, b) in p.data().iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn fft_is_linear((a, b) in plane_pair(24), k in -3.0..3.0f64) {
        let (h, w) = a.dims();
        let combo: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x + k * y).collect();
        let (fa, fb, fc) = (fft2(a.data(), h, w).unwrap(), fft2(b.data(), h, w).unwrap(), fft2(&combo, h, w).unwrap());
        for i in 0..fc.len() {
            prop_assert!((fc[i] - (fa[i] + fb[i] * k)).norm_sqr().sqrt() < 1e-9 * (h * w) as f64);
        }
    }
}

#[test]
fn round_trip_holds_up_to_256_square() {
    let mut s = 0x2545f4914f6cdd1du64;
    for (h, w) in [(256, 256), (255, 256), (97, 131), (1, 256), (256, 3), (200, 150)] {
        let data: Vec<f64> = (0..h * w)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                (s >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        let back = ifft2_real(&fft2(&data, h, w).unwrap(), h, w).unwrap();
        let err = data.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{h}x{w}: {err}");
    }
}

#[test]
fn local_phase_change_spreads_over_the_whole_image() {
    let (h, w) = (32, 32);
    let img: Vec<f64> = (0..h * w).map(|i| ((i * 37 % 101) as f64) / 100.0).collect();
    let mut spec = fft2(&img, h, w).unwrap();
    // Rotate the phase of one conjugate-symmetric pair of bins.
    let (k, kc) = (3 * w + 5, (h - 3) * w + (w - 5));
    let rot = num_complex::Complex64::new(1f64.cos(), 1f64.sin());
    spec[k] *= rot;
    spec[kc] *= rot.conj();
    let out = ifft2(&spec, h, w).unwrap();
    let changed = out.iter().zip(&img).filter(|(o, i)| (o.re - **i).abs() > 1e-9).count();
    assert!(changed as f64 > 0.9 * (h * w) as f64, "{changed}");
    assert!(out.iter().all(|z| z.im.abs() < 1e-9));
}

#[test]
fn degenerate_inputs_give_empty_structure_masks() {
    for v in [0.0, 0.25, 0.5, 1.0] {
        let c = Plane::filled(9, 7, v);
        let m = MaskSet::compute(&c, &c).unwrap();
        assert!(m.texture.data().iter().all(|&x| x == 0.0));
        assert!(m.thermal.data().iter().all(|&x| x == 0.0));
    }
}
