//! Objective terms.
//!
//! Each cosine-based term comes in two forms: a plain `f64` version over
//! [`Embedding`]s, and a tensor version used inside training that stays on
//! the autodiff graph. Both share [`reject_and_average`] for the patch
//! threshold.

use candle_core::Tensor;

use crate::config::TrainConfig;
use crate::encoders::{Embedding, FeatureMap};
use crate::error::{Error, Result};
use crate::report::LossReport;

/// Norm floor for direction vectors. It enters squared under the root, so a
/// zero image direction has effective length `DIRECTION_EPS` and a cosine of
/// exactly zero, while non-degenerate directions are unaffected.
pub const DIRECTION_EPS: f64 = 1e-8;

/// Text direction `delta_t` and image direction `delta_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionPair {
    pub delta_t: Embedding,
    pub delta_i: Embedding,
}

fn soft_norm(e: &Embedding) -> f64 {
    (e.dot(e) + DIRECTION_EPS * DIRECTION_EPS).sqrt()
}

/// `1 - cos(out, text)`.
pub fn global_clip_loss(out_embed: &Embedding, text_embed: &Embedding) -> f64 {
    1.0 - out_embed.dot(text_embed) / (soft_norm(out_embed) * soft_norm(text_embed))
}

/// `1 - cos(delta_i, delta_t)`; a vanishing image direction scores 1.
pub fn directional_loss(pair: &DirectionPair) -> Result<f64> {
    check_text_direction(&pair.delta_t)?;
    Ok(1.0 - pair.delta_i.dot(&pair.delta_t) / (soft_norm(&pair.delta_i) * soft_norm(&pair.delta_t)))
}

pub fn check_text_direction(delta_t: &Embedding) -> Result<()> {
    if delta_t.norm() <= DIRECTION_EPS {
        return Err(Error::invalid(
            "text direction is zero: style text and source text embed identically",
        ));
    }
    Ok(())
}

/// Text direction `E_T(style) - E_T(source)`.
pub fn text_direction(style: &Embedding, source: &Embedding) -> Result<Embedding> {
    let d = style.sub(source);
    check_text_direction(&d)?;
    Ok(d)
}

/// Threshold rule: losses at or below `tau` become 0. Returns the mean over
/// *all* entries and the rejection mask.
pub fn reject_and_average(per_patch: &[f64], tau: f64) -> (f64, Vec<bool>) {
    let rejected: Vec<bool> = per_patch.iter().map(|l| *l <= tau).collect();
    let kept: f64 = per_patch
        .iter()
        .zip(&rejected)
        .filter(|(_, r)| !**r)
        .map(|(l, _)| *l)
        .sum();
    (kept / per_patch.len() as f64, rejected)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchLoss {
    pub value: f64,
    pub per_patch: Vec<f64>,
    pub rejected: Vec<bool>,
}

/// Patch-wise directional loss with threshold rejection.
pub fn patch_clip_loss(
    patch_embeds: &[Embedding],
    content_embed: &Embedding,
    delta_t: &Embedding,
    tau: f64,
) -> Result<PatchLoss> {
    if patch_embeds.is_empty() {
        return Err(Error::invalid("patch loss needs at least one patch"));
    }
    check_tau(tau)?;
    let per_patch = patch_embeds
        .iter()
        .map(|e| {
            directional_loss(&DirectionPair {
                delta_t: delta_t.clone(),
                delta_i: e.sub(content_embed),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (value, rejected) = reject_and_average(&per_patch, tau);
    Ok(PatchLoss {
        value,
        per_patch,
        rejected,
    })
}

fn check_tau(tau: f64) -> Result<()> {
    if !(0.0..=2.0).contains(&tau) {
        return Err(Error::invalid(format!("tau must lie in [0, 2], got {tau}")));
    }
    Ok(())
}

/// Row-wise `1 - cos(a_i, b)` for `(N, D)` `a` and `(1, D)` or `(N, D)` `b`.
pub fn cosine_distance_rows(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let eps2 = DIRECTION_EPS * DIRECTION_EPS;
    let dot = a.broadcast_mul(b)?.sum(1)?;
    let na = (a.sqr()?.sum(1)? + eps2)?.sqrt()?;
    let nb = (b.sqr()?.sum(1)? + eps2)?.sqrt()?;
    let cos = dot.broadcast_div(&na.broadcast_mul(&nb)?)?;
    Ok(cos.neg()?.affine(1.0, 1.0)?)
}

/// Differentiable patch loss from a per-patch loss vector `(N,)`. The mask
/// is a constant, so rejected patches receive exactly zero gradient.
pub fn patch_loss_tensor(per_patch: &Tensor, tau: f64) -> Result<(Tensor, Vec<f64>, Vec<bool>)> {
    check_tau(tau)?;
    let values: Vec<f64> = per_patch.to_dtype(candle_core::DType::F64)?.to_vec1()?;
    if values.is_empty() {
        return Err(Error::invalid("patch loss needs at least one patch"));
    }
    let (_, rejected) = reject_and_average(&values, tau);
    let keep: Vec<f64> = rejected.iter().map(|r| if *r { 0.0 } else { 1.0 }).collect();
    let mask = Tensor::from_vec(keep, values.len(), per_patch.device())?.to_dtype(per_patch.dtype())?;
    let loss = per_patch.mul(&mask)?.sum_all()?;
    let loss = (loss / values.len() as f64)?;
    Ok((loss, values, rejected))
}

/// Mean over layers of the per-layer mean squared feature difference.
pub fn content_loss(content_feats: &[FeatureMap], output_feats: &[FeatureMap]) -> Result<Tensor> {
    if content_feats.is_empty() || content_feats.len() != output_feats.len() {
        return Err(Error::Dimension(format!(
            "content loss needs matching non-empty layer lists, got {} and {}",
            content_feats.len(),
            output_feats.len()
        )));
    }
    let mut total: Option<Tensor> = None;
    for (c, o) in content_feats.iter().zip(output_feats) {
        if c.layer_name != o.layer_name || c.tensor.dims() != o.tensor.dims() {
            return Err(Error::Dimension(format!(
                "feature mismatch: {} {:?} vs {} {:?}",
                c.layer_name,
                c.tensor.dims(),
                o.layer_name,
                o.tensor.dims()
            )));
        }
        let mse = (&o.tensor - &c.tensor)?.sqr()?.mean_all()?;
        total = Some(match total {
            Some(t) => (t + mse)?,
            None => mse,
        });
    }
    Ok((total.expect("non-empty") / content_feats.len() as f64)?)
}

/// Squared anisotropic total variation of `(B, C, H, W)`: mean squared
/// horizontal forward difference plus mean squared vertical forward
/// difference. An axis of length 1 contributes nothing.
pub fn tv_loss(t: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = t.dims4()?;
    if h < 2 && w < 2 {
        return Err(Error::Dimension("total variation of a 1x1 image is undefined".into()));
    }
    let zero = t.sum_all()?.zeros_like()?;
    let dx = if w >= 2 {
        (t.narrow(3, 1, w - 1)? - t.narrow(3, 0, w - 1)?)?.sqr()?.mean_all()?
    } else {
        zero.clone()
    };
    let dy = if h >= 2 {
        (t.narrow(2, 1, h - 1)? - t.narrow(2, 0, h - 1)?)?.sqr()?.mean_all()?
    } else {
        zero
    };
    Ok((dx + dy)?)
}

/// Scalar values of every term for one step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub global: f64,
    pub dir: f64,
    pub patch: f64,
    pub content: f64,
    pub tv: f64,
}

/// Weighted sum of the terms. Any non-finite term is an error naming it.
pub fn total_loss(
    terms: LossTerms,
    per_patch: Vec<f64>,
    rejected: Vec<bool>,
    config: &TrainConfig,
) -> Result<LossReport> {
    for (name, v) in [
        ("global", terms.global),
        ("directional", terms.dir),
        ("patch", terms.patch),
        ("content", terms.content),
        ("tv", terms.tv),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                term: name.into(),
                iteration: None,
            });
        }
    }
    let mut report = LossReport {
        l_global: terms.global,
        l_dir: terms.dir,
        l_patch: terms.patch,
        l_content: terms.content,
        l_tv: terms.tv,
        l_total: 0.0,
        per_patch,
        rejected,
    };
    report.l_total = report.recomposed_total(config);
    if !report.l_total.is_finite() {
        return Err(Error::NonFinite {
            term: "total".into(),
            iteration: None,
        });
    }
    Ok(report)
}
