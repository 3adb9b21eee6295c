mod common;

use candle_core::Tensor;
use common::{bilinear_zero, cpu, reference_homography};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textstyle::sampler::{resize_bilinear, sample_perspective, warp_perspective};

/// Warp output against an independently solved homography and a plain
/// bilinear sampler.
fn assert_matches_reference(values: Vec<f64>, size: usize, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = sample_perspective(size, size, scale, &mut rng);
    let t = Tensor::from_vec(values.clone(), (1, 3, size, size), &cpu()).unwrap();
    let out: Vec<f64> = warp_perspective(&t, &[p])
        .unwrap()
        .flatten_all()
        .unwrap()
        .to_vec1()
        .unwrap();
    let [a, b, c, d, e, f, g, h] = reference_homography(&p);
    let plane = size * size;
    for ch in 0..3 {
        let img = &values[ch * plane..(ch + 1) * plane];
        for y in 0..size {
            for x in 0..size {
                let (u, v) = (x as f64 + 0.5, y as f64 + 0.5);
                let den = g * u + h * v + 1.0;
                let sx = (a * u + b * v + c) / den - 0.5;
                let sy = (d * u + e * v + f) / den - 0.5;
                let want = bilinear_zero(img, size, size, sx, sy);
                let got = out[ch * plane + y * size + x];
                assert!((got - want).abs() < 1e-9, "pixel ({x},{y},{ch}): {got} vs {want}");
            }
        }
    }
}

#[test]
fn constant_patch_warp_matches_reference() {
    for seed in 0..5 {
        assert_matches_reference(vec![0.7; 3 * 24 * 24], 24, 0.5, seed);
    }
}

#[test]
fn constant_patch_keeps_value_where_fully_inside() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = sample_perspective(32, 32, 0.5, &mut rng);
    let t = Tensor::full(0.25f64, (1, 3, 32, 32), &cpu()).unwrap();
    let out: Vec<f64> = warp_perspective(&t, &[p])
        .unwrap()
        .flatten_all()
        .unwrap()
        .to_vec1()
        .unwrap();
    // the centre always maps to an interior source point
    let centre = out[16 * 32 + 16];
    assert!((centre - 0.25).abs() < 1e-12);
    assert!(out.iter().all(|v| (0.0..=0.25 + 1e-12).contains(v)));
}

#[test]
fn random_patch_warp_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..5 {
        let values: Vec<f64> = (0..3 * 20 * 20).map(|_| rng.random()).collect();
        assert_matches_reference(values, 20, 1.0, seed);
    }
}

/// On a linear ramp, a symmetric untruncated filter returns its centre. Taps
/// sit symmetrically around the centre when upsampling or when the
/// downscale factor is an integer.
#[test]
fn resize_of_ramp_is_linear_in_the_interior() {
    for (n_in, n_out) in [(16, 40), (48, 16), (256, 64), (30, 224), (7, 7)] {
        let ramp: Vec<f64> = (0..n_in).map(|j| j as f64).collect();
        let t = Tensor::from_vec(ramp, (1, 1, 1, n_in), &cpu()).unwrap();
        let out: Vec<f64> = resize_bilinear(&t, 1, n_out)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        let scale = n_in as f64 / n_out as f64;
        let support = scale.max(1.0);
        for (i, got) in out.iter().enumerate() {
            let centre = (i as f64 + 0.5) * scale;
            if centre - support >= 0.0 && centre + support <= n_in as f64 {
                let want = centre - 0.5;
                assert!((got - want).abs() < 1e-9, "{n_in}->{n_out} at {i}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn resize_keeps_range_and_constants() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let v: Vec<f32> = (0..3 * 37 * 23).map(|_| rng.random()).collect();
    let t = Tensor::from_vec(v, (1, 3, 37, 23), &cpu()).unwrap();
    for (h, w) in [(224, 224), (8, 5), (37, 23)] {
        let out: Vec<f32> = resize_bilinear(&t, h, w)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        assert!(out.iter().all(|x| (-1e-6..=1.0 + 1e-6).contains(x)));
    }
    let c = Tensor::full(0.3f64, (2, 3, 13, 9), &cpu()).unwrap();
    let out: Vec<f64> = resize_bilinear(&c, 224, 224)
        .unwrap()
        .flatten_all()
        .unwrap()
        .to_vec1()
        .unwrap();
    assert!(out.iter().all(|x| (x - 0.3).abs() < 1e-12));
}
