mod common;

use candle_core::DType;
use common::{cpu, gradient_rel_error, smooth_image, LossFixture, Term};

const TOLERANCE: f64 = 1e-3;

fn check(term: Term) {
    let fx = LossFixture::new(16, 7);
    let x0 = smooth_image(16, 16, 99).to_tensor(DType::F64, &cpu()).unwrap();
    let err = gradient_rel_error(|x| fx.loss(term, x), &x0, 24, 3);
    assert!(err < TOLERANCE, "{} gradient relative error {err:.3e}", term.name());
}

#[test]
fn global_matches_finite_differences() {
    check(Term::Global);
}

#[test]
fn directional_matches_finite_differences() {
    check(Term::Directional);
}

#[test]
fn patch_matches_finite_differences() {
    check(Term::Patch);
}

#[test]
fn content_matches_finite_differences() {
    check(Term::Content);
}

#[test]
fn tv_matches_finite_differences() {
    check(Term::Tv);
}

#[test]
fn rejected_patches_get_zero_gradient() {
    let mut fx = LossFixture::new(16, 7);
    fx.tau = 2.0;
    let x0 = smooth_image(16, 16, 99).to_tensor(DType::F64, &cpu()).unwrap();
    let var = candle_core::Var::from_tensor(&x0).unwrap();
    let loss = fx.loss(Term::Patch, var.as_tensor()).unwrap();
    assert_eq!(common::scalar(&loss), 0.0);
    let grads = loss.backward().unwrap();
    if let Some(g) = grads.get(var.as_tensor()) {
        let g: Vec<f64> = g.flatten_all().unwrap().to_vec1().unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }
}
