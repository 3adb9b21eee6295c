//! Decoder training for feed-forward transfer.

use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer};

use super::{adam, lr_schedule, RejectionMonitor, StepLosses, TextTargets, TextureDataset};
use crate::config::{Mode, TrainConfig};
use crate::encoders::{FeatureMap, PerceptualExtractor, TextImageEncoder};
use crate::error::{Error, Result};
use crate::losses::{content_loss, cosine_distance_rows, patch_loss_tensor, tv_loss};
use crate::network::{FastStyler, StyleNetwork};
use crate::prompt::StylePrompt;
use crate::report::LossReport;
use crate::rng::{SeedStreams, Stream, StreamRng};
use crate::sampler::{augment_batch, resize_bilinear, CropRect, PatchBatch, Perspective};

/// Stepwise decoder training over a texture dataset. Only decoder weights
/// are handed to the optimizer.
pub struct FastSession<'a> {
    encoder: &'a dyn TextImageEncoder,
    extractor: &'a dyn PerceptualExtractor,
    config: TrainConfig,
    dataset: TextureDataset,
    net: StyleNetwork,
    optimizer: AdamW,
    style_t: Tensor,
    delta_t: Tensor,
    data_rng: StreamRng,
    aug_rng: StreamRng,
    monitor: RejectionMonitor,
    history: Vec<LossReport>,
}

impl<'a> FastSession<'a> {
    pub fn new(
        net: FastStyler,
        dataset: TextureDataset,
        prompt: &StylePrompt,
        config: &TrainConfig,
        encoder: &'a dyn TextImageEncoder,
        extractor: &'a dyn PerceptualExtractor,
    ) -> Result<Self> {
        config.validate()?;
        if config.mode != Mode::FastTransfer {
            return Err(Error::invalid("fast training needs a fast_transfer config"));
        }
        let dtype = encoder.dtype();
        let device = encoder.device().clone();
        let targets = TextTargets::new(encoder, prompt, &config.templates)?;
        let streams = SeedStreams::new(config.seed);
        let optimizer = adam(net.trainable_vars(), config.lr)?;
        Ok(Self {
            encoder,
            extractor,
            config: config.clone(),
            dataset,
            net: net.into(),
            optimizer,
            style_t: targets.style.to_tensor(dtype, &device)?,
            delta_t: targets.direction.to_tensor(dtype, &device)?,
            data_rng: streams.rng(Stream::Data),
            aug_rng: streams.rng(Stream::Augment),
            monitor: RejectionMonitor::new(),
            history: Vec::new(),
        })
    }

    pub fn network(&self) -> &StyleNetwork {
        &self.net
    }

    pub fn history(&self) -> &[LossReport] {
        &self.history
    }

    pub fn iteration(&self) -> usize {
        self.history.len()
    }

    pub fn is_done(&self) -> bool {
        self.iteration() >= self.config.iterations
    }

    fn losses(&mut self, source: &Tensor, out: &Tensor) -> Result<StepLosses> {
        let r = self.encoder.input_resolution();
        let (b, _, s, _) = out.dims4()?;
        let source_embed = self.encoder.encode_images(&resize_bilinear(source, r, r)?)?.detach();
        let out_embed = self.encoder.encode_images(&resize_bilinear(out, r, r)?)?;
        let global = cosine_distance_rows(&out_embed, &self.style_t)?.mean_all()?;
        let delta_i = (&out_embed - &source_embed)?;
        let dir = cosine_distance_rows(&delta_i, &self.delta_t)?.mean_all()?;

        // every output patch is seen under several independent warps
        let views = self.config.augmentations;
        let idx: Vec<u32> = (0..b as u32).flat_map(|i| std::iter::repeat_n(i, views)).collect();
        let idx = Tensor::new(idx.as_slice(), out.device())?;
        let repeated = PatchBatch {
            patches: out.index_select(&idx, 0)?,
            crops: vec![CropRect { x: 0, y: 0, size: s }; b * views],
            aug_params: vec![Perspective::identity(s, s); b * views],
        };
        let warped = augment_batch(repeated, self.config.distortion_scale, &mut self.aug_rng)?;
        let view_embed = self.encoder.encode_images(&resize_bilinear(&warped.patches, r, r)?)?;
        let anchor = source_embed.index_select(&idx, 0)?;
        let per_patch = cosine_distance_rows(&(view_embed - anchor)?, &self.delta_t)?;
        let (patch, per_patch, rejected) = patch_loss_tensor(&per_patch, self.config.tau)?;

        let source_feats: Vec<FeatureMap> = self
            .extractor
            .extract(source, &self.config.content_layers)?
            .into_iter()
            .map(|f| FeatureMap {
                tensor: f.tensor.detach(),
                ..f
            })
            .collect();
        let out_feats = self.extractor.extract(out, &self.config.content_layers)?;
        let content = content_loss(&source_feats, &out_feats)?;
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

    pub fn step(&mut self) -> Result<LossReport> {
        let iteration = self.iteration();
        self.optimizer.set_learning_rate(lr_schedule(iteration, &self.config));
        let source = self
            .dataset
            .next_batch(&mut self.data_rng, self.encoder.dtype(), self.encoder.device())?;
        let out = self.net.forward(&source)?;
        let (total, report) = self.losses(&source, &out)?.combine(&self.config, iteration)?;
        let grads = total.backward()?;
        self.optimizer.step(&grads)?;
        self.monitor.observe(&report, iteration);
        log::debug!("iteration {iteration}: total {:.6}", report.l_total);
        self.history.push(report.clone());
        Ok(report)
    }

    pub fn into_outcome(self) -> FastOutcome {
        FastOutcome {
            network: self.net,
            history: self.history,
        }
    }
}

#[derive(Debug)]
pub struct FastOutcome {
    pub network: StyleNetwork,
    pub history: Vec<LossReport>,
}

pub fn train_fast(
    net: FastStyler,
    dataset: TextureDataset,
    prompt: &StylePrompt,
    config: &TrainConfig,
    encoder: &dyn TextImageEncoder,
    extractor: &dyn PerceptualExtractor,
) -> Result<FastOutcome> {
    let mut session = FastSession::new(net, dataset, prompt, config, encoder, extractor)?;
    while !session.is_done() {
        session.step()?;
    }
    Ok(session.into_outcome())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_config;
    use crate::encoders::Backends;
    use crate::image::Image;
    use candle_core::{DType, Device};

    #[test]
    fn encoder_untouched_decoder_moves() {
        let b = Backends::stub(DType::F32, &Device::Cpu).unwrap();
        let mut c = default_config(Mode::FastTransfer);
        c.patch_size = 16;
        c.batch_size = 2;
        c.augmentations = 2;
        c.num_patches = 4;
        c.iterations = 2;
        c.lr = 1e-3;
        let net = FastStyler::stub(0, DType::F32, &Device::Cpu).unwrap();
        let enc_before = net.encoder_snapshot().unwrap();
        let dec_before = StyleNetwork::from(net.clone()).parameter_snapshot().unwrap();
        let ims = vec![Image::from_fn(32, 32, |x, y| [x as f32 / 31.0, y as f32 / 31.0, 0.3])];
        let ds = TextureDataset::from_images(ims, 16, 2).unwrap();
        let prompt = StylePrompt::new("fire").unwrap();
        let out = train_fast(net, ds, &prompt, &c, b.encoder.as_ref(), b.extractor.as_ref()).unwrap();
        assert_eq!(out.history.len(), 2);
        assert_eq!(out.history[0].per_patch.len(), 4);
        let StyleNetwork::Fast(trained) = &out.network else {
            panic!("wrong kind")
        };
        assert_eq!(trained.encoder_snapshot().unwrap(), enc_before);
        assert_ne!(out.network.parameter_snapshot().unwrap(), dec_before);
    }
}
