//! Optimization loops.

mod dataset;
mod fast;
mod single;

use std::io::Write;
use std::path::Path;

use candle_core::Tensor;
use candle_nn::{AdamW, ParamsAdamW};

pub use dataset::TextureDataset;
pub use fast::{train_fast, FastOutcome, FastSession};
pub use single::{train_single, SingleImageSession, SingleOutcome};

use crate::config::TrainConfig;
use crate::encoders::{embed_prompt_ensemble, Embedding, TextImageEncoder};
use crate::error::{Error, Result};
use crate::losses::{text_direction, total_loss, LossTerms};
use crate::prompt::StylePrompt;
use crate::report::LossReport;

/// Consecutive fully-rejected steps before a warning is logged.
pub const REJECTION_WARN_STREAK: usize = 10;

/// Step-decay learning rate: `lr * factor^floor(step / decay_step)`.
pub fn lr_schedule(step: usize, config: &TrainConfig) -> f64 {
    config.lr * config.lr_decay_factor.powi((step / config.lr_decay_step) as i32)
}

/// Adam with β1 = 0.9, β2 = 0.999, ε = 1e-8 and no weight decay.
pub(crate) fn adam(vars: Vec<candle_core::Var>, lr: f64) -> Result<AdamW> {
    Ok(candle_nn::Optimizer::new(
        vars,
        ParamsAdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )?)
}

/// Text-side targets of one prompt.
#[derive(Debug, Clone)]
pub struct TextTargets {
    pub style: Embedding,
    pub source: Embedding,
    pub direction: Embedding,
}

impl TextTargets {
    /// Both texts go through the same template ensemble.
    pub fn new(encoder: &dyn TextImageEncoder, prompt: &StylePrompt, templates: &[String]) -> Result<Self> {
        let style = embed_prompt_ensemble(encoder, prompt.style_text(), templates)?;
        let source = embed_prompt_ensemble(encoder, prompt.source_text(), templates)?;
        let direction = text_direction(&style, &source)?;
        Ok(Self {
            style,
            source,
            direction,
        })
    }
}

pub(crate) fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.mean_all()?.to_scalar::<f64>()?)
}

/// Differentiable graph total plus the checked report.
pub(crate) struct StepLosses {
    pub global: Tensor,
    pub dir: Tensor,
    pub patch: Tensor,
    pub content: Tensor,
    pub tv: Tensor,
    pub per_patch: Vec<f64>,
    pub rejected: Vec<bool>,
}

impl StepLosses {
    pub fn combine(self, config: &TrainConfig, iteration: usize) -> Result<(Tensor, LossReport)> {
        let terms = LossTerms {
            global: scalar(&self.global)?,
            dir: scalar(&self.dir)?,
            patch: scalar(&self.patch)?,
            content: scalar(&self.content)?,
            tv: scalar(&self.tv)?,
        };
        let report = total_loss(terms, self.per_patch, self.rejected, config).map_err(|e| match e {
            Error::NonFinite { term, .. } => Error::NonFinite {
                term,
                iteration: Some(iteration),
            },
            other => other,
        })?;
        let total = ((self.dir * config.lambda_dir)?
            + (self.patch * config.lambda_patch)?
            + (self.content * config.lambda_content)?
            + (self.tv * config.lambda_tv)?
            + (self.global * config.lambda_global)?)?;
        Ok((total, report))
    }
}

pub(crate) struct RejectionMonitor {
    streak: usize,
}

impl RejectionMonitor {
    pub fn new() -> Self {
        Self { streak: 0 }
    }

    pub fn observe(&mut self, report: &LossReport, iteration: usize) {
        if !report.rejected.is_empty() && report.rejected.iter().all(|r| *r) {
            self.streak += 1;
            if self.streak == REJECTION_WARN_STREAK {
                log::warn!(
                    "every patch has been rejected for {REJECTION_WARN_STREAK} consecutive iterations (up to iteration {iteration}); the patch term is not training"
                );
            }
        } else {
            self.streak = 0;
        }
    }
}

/// Writes a loss history as CSV.
pub fn write_history_csv(path: impl AsRef<Path>, history: &[LossReport], config: &TrainConfig) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{}", LossReport::CSV_HEADER)?;
    for (i, r) in history.iter().enumerate() {
        writeln!(f, "{}", r.csv_row(i, lr_schedule(i, config)))?;
    }
    f.flush()?;
    Ok(())
}
