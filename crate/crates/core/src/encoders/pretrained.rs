use std::path::Path;

use candle_core::{DType, Device, Tensor};
use candle_nn::VarBuilder;
use candle_transformers::models::clip::{ClipConfig, ClipModel};
use tokenizers::Tokenizer;

use super::{
    check_resolution, normalize_rows, standardize_pixels, Embedding, TextImageEncoder, EMBED_DIM, INPUT_RESOLUTION,
};
use crate::error::{Error, Result};

const MAX_TOKENS: usize = 77;

/// Pre-trained ViT-B/32 joint text–image encoder.
pub struct ClipEncoder {
    model: ClipModel,
    tokenizer: Tokenizer,
    device: Device,
}

impl ClipEncoder {
    pub fn load(weights: impl AsRef<Path>, tokenizer: impl AsRef<Path>, device: &Device) -> Result<Self> {
        let (weights, tokenizer) = (weights.as_ref(), tokenizer.as_ref());
        for p in [weights, tokenizer] {
            if !p.exists() {
                return Err(Error::BackendUnavailable(format!("missing {}", p.display())));
            }
        }
        let tokenizer =
            Tokenizer::from_file(tokenizer).map_err(|e| Error::BackendUnavailable(format!("tokenizer: {e}")))?;
        // SAFETY: the file is memory-mapped read-only and not modified while mapped.
        let vb = unsafe { VarBuilder::from_mmaped_safetensors(&[weights], DType::F32, device)? };
        let model = ClipModel::new(vb, &ClipConfig::vit_base_patch32())?;
        Ok(Self {
            model,
            tokenizer,
            device: device.clone(),
        })
    }
}

impl TextImageEncoder for ClipEncoder {
    fn name(&self) -> String {
        "clip-vit-b32".into()
    }

    fn input_resolution(&self) -> usize {
        INPUT_RESOLUTION
    }

    fn embed_dim(&self) -> usize {
        EMBED_DIM
    }

    fn dtype(&self) -> DType {
        DType::F32
    }

    fn device(&self) -> &Device {
        &self.device
    }

    fn encode_text(&self, text: &str) -> Result<Embedding> {
        let encoding = self
            .tokenizer
            .encode(text, true)
            .map_err(|e| Error::invalid(format!("tokenizer: {e}")))?;
        let mut ids = encoding.get_ids().to_vec();
        ids.truncate(MAX_TOKENS);
        let ids = Tensor::new(ids.as_slice(), &self.device)?.unsqueeze(0)?;
        let features = normalize_rows(&self.model.get_text_features(&ids)?)?;
        Ok(Embedding::rows(&features)?.remove(0))
    }

    fn encode_images(&self, images: &Tensor) -> Result<Tensor> {
        check_resolution(images, INPUT_RESOLUTION)?;
        let x = standardize_pixels(&images.to_dtype(DType::F32)?)?;
        normalize_rows(&self.model.get_image_features(&x)?)
    }
}
