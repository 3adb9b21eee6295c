use candle_core::{Device, Tensor};
use proptest::prelude::*;
use textstyle::config::{default_config, Mode, TrainConfig};
use textstyle::encoders::Embedding;
use textstyle::losses::{
    directional_loss, global_clip_loss, patch_clip_loss, patch_loss_tensor, reject_and_average, DirectionPair,
};
use textstyle::Image;

fn vector(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim).prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
}

fn embeddings(n: usize, dim: usize) -> impl Strategy<Value = Vec<Embedding>> {
    prop::collection::vec(vector(dim).prop_map(|v| Embedding::new(v).normalized()), 1..=n)
}

/// Literal reading of the rejection rule: drop values at or under tau,
/// divide the rest by the full count.
fn brute_force(per_patch: &[f64], tau: f64) -> f64 {
    let mut sum = 0.0;
    for l in per_patch {
        sum += if *l <= tau { 0.0 } else { *l };
    }
    sum / per_patch.len() as f64
}

proptest! {
    #[test]
    fn cosine_losses_in_range(a in vector(8), b in vector(8)) {
        let (a, b) = (Embedding::new(a), Embedding::new(b));
        let g = global_clip_loss(&a.normalized(), &b.normalized());
        prop_assert!((-1e-12..=2.0 + 1e-12).contains(&g));
        let d = directional_loss(&DirectionPair { delta_t: a, delta_i: b }).unwrap();
        prop_assert!((-1e-12..=2.0 + 1e-12).contains(&d));
    }

    #[test]
    fn rejection_matches_brute_force(values in prop::collection::vec(0.0f64..2.0, 1..=8), tau in 0.0f64..2.0) {
        let (got, mask) = reject_and_average(&values, tau);
        prop_assert!((got - brute_force(&values, tau)).abs() <= 1e-9);
        prop_assert_eq!(mask.iter().filter(|r| **r).count(), values.iter().filter(|l| **l <= tau).count());
    }

    #[test]
    fn raising_tau_never_increases(values in prop::collection::vec(0.0f64..2.0, 1..=16), t1 in 0.0f64..2.0, t2 in 0.0f64..2.0) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(reject_and_average(&values, hi).0 <= reject_and_average(&values, lo).0);
    }

    #[test]
    fn patch_loss_permutation_invariant(
        patches in embeddings(8, 6),
        content in vector(6),
        dt in vector(6),
        tau in 0.0f64..2.0,
        rot in 0usize..8,
    ) {
        let content = Embedding::new(content).normalized();
        let dt = Embedding::new(dt);
        let a = patch_clip_loss(&patches, &content, &dt, tau).unwrap();
        let mut shuffled = patches.clone();
        shuffled.reverse();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        let b = patch_clip_loss(&shuffled, &content, &dt, tau).unwrap();
        prop_assert!((a.value - b.value).abs() <= 1e-12);
    }

    #[test]
    fn patch_loss_invariant_to_direction_scale(
        patches in embeddings(8, 6),
        content in vector(6),
        dt in vector(6),
        scale in 1e-3f64..1e3,
    ) {
        let content = Embedding::new(content).normalized();
        let dt = Embedding::new(dt);
        let a = patch_clip_loss(&patches, &content, &dt, 0.7).unwrap();
        let b = patch_clip_loss(&patches, &content, &dt.scale(scale), 0.7).unwrap();
        for (x, y) in a.per_patch.iter().zip(&b.per_patch) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
        prop_assert!((a.value - b.value).abs() <= 1e-9);
    }

    #[test]
    fn tensor_patch_loss_agrees(values in prop::collection::vec(0.0f64..2.0, 1..=8), tau in 0.0f64..2.0) {
        let t = Tensor::new(values.as_slice(), &Device::Cpu).unwrap();
        let (loss, back, mask) = patch_loss_tensor(&t, tau).unwrap();
        let (want, want_mask) = reject_and_average(&values, tau);
        prop_assert!((loss.to_scalar::<f64>().unwrap() - want).abs() <= 1e-12);
        prop_assert_eq!(back, values);
        prop_assert_eq!(mask, want_mask);
    }

    #[test]
    fn config_round_trips(
        lambdas in prop::array::uniform4(0.0f64..1e4),
        tau in 0.0f64..2.0,
        patch in 8usize..512,
        n in 1usize..256,
        lr in 1e-6f64..1e-1,
        seed in any::<u64>(),
        distortion in 0.0f64..1.0,
    ) {
        let mut c: TrainConfig = default_config(Mode::SingleImage);
        [c.lambda_dir, c.lambda_patch, c.lambda_content, c.lambda_tv] = lambdas;
        c.tau = tau;
        c.patch_size = patch;
        c.num_patches = n;
        c.lr = lr;
        c.seed = seed;
        c.distortion_scale = distortion;
        c.content_layers = vec!["conv4_2".into()];
        let back = TrainConfig::parse(&c.to_config_string(), Mode::FastTransfer).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn image_tensor_round_trip(w in 1usize..12, h in 1usize..12, seed in any::<u32>()) {
        let im = Image::from_fn(w, h, |x, y| {
            let v = ((x * 31 + y * 17 + seed as usize) % 256) as f32 / 255.0;
            [v, 1.0 - v, 0.5]
        });
        let back = Image::from_tensor(&im.to_tensor(candle_core::DType::F32, &Device::Cpu).unwrap()).unwrap();
        prop_assert_eq!(back, im);
    }
}
