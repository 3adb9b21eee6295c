//! Per-image optimization of a fresh U-Net.

use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer};

use super::{adam, lr_schedule, RejectionMonitor, StepLosses, TextTargets};
use crate::config::{Mode, TrainConfig};
use crate::encoders::{FeatureMap, PerceptualExtractor, TextImageEncoder};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::{content_loss, cosine_distance_rows, patch_loss_tensor, tv_loss};
use crate::network::{StyleNetwork, UNetStyler};
use crate::prompt::StylePrompt;
use crate::report::LossReport;
use crate::rng::{SeedStreams, Stream, StreamRng};
use crate::sampler::{augment_batch, crop_patches, prepare_encoder_batch, resize_bilinear};

/// Stepwise single-image optimization. Each [`step`](Self::step) runs one
/// forward pass, one loss evaluation and one Adam update.
pub struct SingleImageSession<'a> {
    encoder: &'a dyn TextImageEncoder,
    extractor: &'a dyn PerceptualExtractor,
    config: TrainConfig,
    net: StyleNetwork,
    optimizer: AdamW,
    content: Tensor,
    content_embed: Tensor,
    content_feats: Vec<FeatureMap>,
    style_t: Tensor,
    delta_t: Tensor,
    crop_rng: StreamRng,
    aug_rng: StreamRng,
    monitor: RejectionMonitor,
    history: Vec<LossReport>,
}

impl<'a> SingleImageSession<'a> {
    pub fn new(
        content: &Image,
        prompt: &StylePrompt,
        config: &TrainConfig,
        encoder: &'a dyn TextImageEncoder,
        extractor: &'a dyn PerceptualExtractor,
    ) -> Result<Self> {
        config.validate()?;
        if config.mode != Mode::SingleImage {
            return Err(Error::invalid("single-image training needs a single_image config"));
        }
        config.check_content_size(content.height(), content.width())?;
        let dtype = encoder.dtype();
        let device = encoder.device().clone();
        let targets = TextTargets::new(encoder, prompt, &config.templates)?;

        let streams = SeedStreams::new(config.seed);
        let net = UNetStyler::new(config.seed, dtype, &device)?;
        let optimizer = adam(net.trainable_vars(), config.lr)?;

        let content_t = content.to_tensor(dtype, &device)?;
        let r = encoder.input_resolution();
        let content_embed = encoder.encode_images(&resize_bilinear(&content_t, r, r)?)?.detach();
        let content_feats = extractor
            .extract(&content_t, &config.content_layers)?
            .into_iter()
            .map(|f| FeatureMap {
                tensor: f.tensor.detach(),
                ..f
            })
            .collect();

        Ok(Self {
            encoder,
            extractor,
            config: config.clone(),
            net: net.into(),
            optimizer,
            content: content_t,
            content_embed,
            content_feats,
            style_t: targets.style.to_tensor(dtype, &device)?,
            delta_t: targets.direction.to_tensor(dtype, &device)?,
            crop_rng: streams.rng(Stream::Crop),
            aug_rng: streams.rng(Stream::Augment),
            monitor: RejectionMonitor::new(),
            history: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn network(&self) -> &StyleNetwork {
        &self.net
    }

    pub fn history(&self) -> &[LossReport] {
        &self.history
    }

    /// Number of completed steps.
    pub fn iteration(&self) -> usize {
        self.history.len()
    }

    pub fn is_done(&self) -> bool {
        self.iteration() >= self.config.iterations
    }

    fn losses(&mut self, out: &Tensor) -> Result<StepLosses> {
        let r = self.encoder.input_resolution();
        let out_embed = self.encoder.encode_images(&resize_bilinear(out, r, r)?)?;
        let global = cosine_distance_rows(&out_embed, &self.style_t)?.mean_all()?;
        let delta_i = out_embed.broadcast_sub(&self.content_embed)?;
        let dir = cosine_distance_rows(&delta_i, &self.delta_t)?.mean_all()?;

        let batch = crop_patches(out, self.config.patch_size, self.config.num_patches, &mut self.crop_rng)?;
        let batch = augment_batch(batch, self.config.distortion_scale, &mut self.aug_rng)?;
        let batch = prepare_encoder_batch(batch, r)?;
        let patch_embed = self.encoder.encode_images(&batch.patches)?;
        let patch_delta = patch_embed.broadcast_sub(&self.content_embed)?;
        let per_patch = cosine_distance_rows(&patch_delta, &self.delta_t)?;
        let (patch, per_patch, rejected) = patch_loss_tensor(&per_patch, self.config.tau)?;

        let feats = self.extractor.extract(out, &self.config.content_layers)?;
        let content = content_loss(&self.content_feats, &feats)?;
        let tv = tv_loss(out)?;
        Ok(StepLosses {
            global,
            dir,
            patch,
            content,
            tv,
            per_patch,
            rejected,
        })
    }

    /// One optimization step. A non-finite loss aborts before the update, so
    /// the network keeps its last finite parameters.
    pub fn step(&mut self) -> Result<LossReport> {
        let iteration = self.iteration();
        self.optimizer.set_learning_rate(lr_schedule(iteration, &self.config));
        let out = self.net.forward(&self.content)?;
        let (total, report) = self.losses(&out)?.combine(&self.config, iteration)?;
        let grads = total.backward()?;
        self.optimizer.step(&grads)?;
        self.monitor.observe(&report, iteration);
        log::debug!("iteration {iteration}: total {:.6}", report.l_total);
        self.history.push(report.clone());
        Ok(report)
    }

    /// Current network output for the content image.
    pub fn stylized(&self) -> Result<Image> {
        Image::from_tensor(&self.net.detached().forward(&self.content)?)
    }

    pub fn into_outcome(self) -> Result<SingleOutcome> {
        let image = self.stylized()?;
        Ok(SingleOutcome {
            network: self.net,
            image,
            history: self.history,
        })
    }
}

#[derive(Debug)]
pub struct SingleOutcome {
    pub network: StyleNetwork,
    pub image: Image,
    pub history: Vec<LossReport>,
}

/// Runs every configured iteration and returns the trained network, the
/// stylized image and the per-step losses.
pub fn train_single(
    content: &Image,
    prompt: &StylePrompt,
    config: &TrainConfig,
    encoder: &dyn TextImageEncoder,
    extractor: &dyn PerceptualExtractor,
) -> Result<SingleOutcome> {
    let mut session = SingleImageSession::new(content, prompt, config, encoder, extractor)?;
    while !session.is_done() {
        session.step()?;
    }
    session.into_outcome()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_config;
    use crate::encoders::Backends;
    use candle_core::{DType, Device};

    fn small_config() -> TrainConfig {
        let mut c = default_config(Mode::SingleImage);
        c.patch_size = 16;
        c.num_patches = 4;
        c.iterations = 3;
        c
    }

    fn gradient_image() -> Image {
        Image::from_fn(24, 24, |x, y| [x as f32 / 23.0, y as f32 / 23.0, 0.5])
    }

    #[test]
    fn steps_record_consistent_reports() {
        let b = Backends::stub(DType::F32, &Device::Cpu).unwrap();
        let prompt = StylePrompt::new("fire").unwrap();
        let c = small_config();
        let out = train_single(&gradient_image(), &prompt, &c, b.encoder.as_ref(), b.extractor.as_ref()).unwrap();
        assert_eq!(out.history.len(), 3);
        assert_eq!((out.image.width(), out.image.height()), (24, 24));
        for r in &out.history {
            assert_eq!(r.per_patch.len(), 4);
            assert!(r.is_consistent(&c, 1e-5));
        }
    }

    #[test]
    fn rejects_oversized_patch() {
        let b = Backends::stub(DType::F32, &Device::Cpu).unwrap();
        let prompt = StylePrompt::new("fire").unwrap();
        let mut c = small_config();
        c.patch_size = 32;
        let err = SingleImageSession::new(&gradient_image(), &prompt, &c, b.encoder.as_ref(), b.extractor.as_ref());
        assert!(matches!(err, Err(Error::ConfigRange { .. })));
    }
}
