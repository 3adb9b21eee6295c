//! Frozen VGG encoder (through `relu4_1`) with a trainable mirrored decoder.

use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};

use super::layers::{reflect_pad_to_multiple, sigmoid, upsample2x, Conv2d, LayerBuilder, ParamStore};
use crate::encoders::vgg::{VggFeatures, VGG19_WIDTHS};
use crate::error::Result;
use crate::rng::{SeedStreams, Stream};

pub const ENCODER_TAP: &str = "relu4_1";
/// Narrow widths for the offline stand-in encoder.
pub const STUB_ENCODER_WIDTHS: [usize; 4] = [8, 16, 32, 64];
const STUB_ENCODER_SEED: u64 = 0xFA57_0E4C;

#[derive(Debug, Clone)]
struct DecoderLayer {
    conv: Conv2d,
    upsample_after: bool,
}

#[derive(Debug, Clone)]
pub struct FastStyler {
    encoder: VggFeatures,
    params: ParamStore,
    decoder: Vec<DecoderLayer>,
}

impl FastStyler {
    /// Decoder initialized from `seed` on top of the given frozen encoder.
    pub fn new(encoder: VggFeatures, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        let [c1, c2, c3, c4] = encoder.widths();
        let plan: [(&str, usize, usize, bool); 9] = [
            ("dec4_1", c4, c3, true),
            ("dec3_4", c3, c3, false),
            ("dec3_3", c3, c3, false),
            ("dec3_2", c3, c3, false),
            ("dec3_1", c3, c2, true),
            ("dec2_2", c2, c2, false),
            ("dec2_1", c2, c1, true),
            ("dec1_2", c1, c1, false),
            ("dec1_1", c1, 3, false),
        ];
        let mut rng = SeedStreams::new(seed).rng(Stream::Init);
        let mut params = ParamStore::new();
        let mut b = LayerBuilder::trainable(&mut rng, &mut params, dtype, device);
        let decoder = plan
            .iter()
            .map(|(name, cin, cout, up)| {
                Ok(DecoderLayer {
                    conv: b.conv(name, *cin, *cout, 3, 1)?,
                    upsample_after: *up,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            encoder,
            params,
            decoder,
        })
    }

    /// Seeded narrow stand-in encoder, for offline use.
    pub fn stub(seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        let encoder = VggFeatures::random(STUB_ENCODER_WIDTHS, ENCODER_TAP, STUB_ENCODER_SEED, dtype, device)?;
        Self::new(encoder, seed, dtype, device)
    }

    /// Pre-trained VGG-19 encoder from a safetensors file.
    pub fn pretrained(vgg_weights: impl AsRef<Path>, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        let encoder = VggFeatures::load(vgg_weights, ENCODER_TAP, dtype, device)?;
        debug_assert_eq!(encoder.widths(), VGG19_WIDTHS);
        Self::new(encoder, seed, dtype, device)
    }

    pub fn encoder(&self) -> &VggFeatures {
        &self.encoder
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Decoder parameters only; the encoder is never handed to an optimizer.
    pub fn trainable_vars(&self) -> Vec<Var> {
        self.params.vars()
    }

    /// Flat copy of every encoder weight, for exact before/after comparison.
    pub fn encoder_snapshot(&self) -> Result<Vec<Vec<f64>>> {
        self.encoder
            .named_tensors()
            .iter()
            .map(|(_, t)| Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?))
            .collect()
    }

    /// Inference copy whose forward pass records no graph.
    pub fn detached(&self) -> Self {
        Self {
            encoder: self.encoder.clone(),
            params: self.params.clone(),
            decoder: self
                .decoder
                .iter()
                .map(|l| DecoderLayer {
                    conv: l.conv.detached(),
                    upsample_after: l.upsample_after,
                })
                .collect(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (padded, (h, w)) = reflect_pad_to_multiple(x, 8)?;
        let mut z = self
            .encoder
            .taps(&padded, &[ENCODER_TAP.to_string()])?
            .remove(0)
            .detach();
        let last = self.decoder.len() - 1;
        for (i, layer) in self.decoder.iter().enumerate() {
            z = layer.conv.forward(&z)?;
            if i < last {
                z = z.relu()?;
            }
            if layer.upsample_after {
                z = upsample2x(&z)?;
            }
        }
        Ok(sigmoid(&z)?.narrow(2, 0, h)?.narrow(3, 0, w)?)
    }
}
