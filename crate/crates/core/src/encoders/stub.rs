//! Seeded offline stand-ins for the pre-trained encoders.
//!
//! Both stub encoders end in the same frozen projection `head: H -> D`, so
//! text and image embeddings share one `H`-dimensional subspace of the
//! joint space and image directions can actually align with text
//! directions during training.
//!
//! * text: signed feature hashing of byte trigrams into `H` buckets,
//!   projected through `head`, normalized.
//! * image: the pre-trained encoder's pixel standardization, 4x average
//!   pool, a stride-2 3x3 conv and two 1x1 convs with `tanh`, global mean
//!   pool, `head`, normalized. Smooth everywhere. The pointwise layers keep
//!   the embedding close to a local-statistics summary, so crops of a
//!   uniformly stylized image embed near the whole image.

use candle_core::{DType, Device, Tensor};

use super::{
    check_resolution, normalize_rows, standardize_pixels, Embedding, FeatureMap, PerceptualExtractor, TextImageEncoder,
};
use super::{EMBED_DIM, INPUT_RESOLUTION};
use crate::error::{Error, Result};
use crate::network::layers::{Conv2d, LayerBuilder};
use crate::rng::{SeedStreams, Stream};

pub const STUB_SEED: u64 = 0x5EED_C11B;
/// Width of the shared pre-projection space.
pub const STUB_HIDDEN: usize = 64;

pub struct StubEncoder {
    seed: u64,
    convs: [Conv2d; 3],
    head: Tensor,
    head_f64: Vec<f64>,
    dtype: DType,
    device: Device,
}

impl StubEncoder {
    pub fn new(seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        let mut rng = SeedStreams::new(seed).rng(Stream::Init);
        let mut b = LayerBuilder::frozen(&mut rng, DType::F64, device);
        let convs = [
            b.conv("conv1", 3, 16, 3, 2)?,
            b.conv("conv2", 16, 32, 1, 1)?,
            b.conv("conv3", 32, STUB_HIDDEN, 1, 1)?,
        ];
        let head = b.linear("head", STUB_HIDDEN, EMBED_DIM)?;
        let head_f64 = head.flatten_all()?.to_vec1()?;
        let cast = |c: &Conv2d| -> Result<Conv2d> {
            Ok(Conv2d::new(
                c.weight().to_dtype(dtype)?,
                c.bias().map(|b| b.to_dtype(dtype)).transpose()?,
                c.stride(),
                c.padding(),
            ))
        };
        Ok(Self {
            seed,
            convs: [cast(&convs[0])?, cast(&convs[1])?, cast(&convs[2])?],
            head: head.to_dtype(dtype)?,
            head_f64,
            dtype,
            device: device.clone(),
        })
    }

    /// Hashed trigram features of `text`, unit norm, length `STUB_HIDDEN`.
    fn text_features(&self, text: &str) -> Vec<f64> {
        let mut bytes = vec![0x02u8];
        bytes.extend_from_slice(text.as_bytes());
        bytes.push(0x03);
        let mut h = vec![0.0; STUB_HIDDEN];
        for window in bytes.windows(3) {
            let hash = fnv1a(self.seed, window);
            let bucket = (hash % STUB_HIDDEN as u64) as usize;
            let sign = if hash >> 63 == 0 { 1.0 } else { -1.0 };
            h[bucket] += sign;
        }
        let n = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            h.iter_mut().for_each(|v| *v /= n);
        }
        h
    }
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // final avalanche so the top bit is usable as a sign
    hash ^= hash >> 33;
    hash = hash.wrapping_mul(0xff51_afd7_ed55_8ccd);
    hash ^ (hash >> 33)
}

impl TextImageEncoder for StubEncoder {
    fn name(&self) -> String {
        format!("stub-encoder(seed={:#x})", self.seed)
    }

    fn input_resolution(&self) -> usize {
        INPUT_RESOLUTION
    }

    fn embed_dim(&self) -> usize {
        EMBED_DIM
    }

    fn dtype(&self) -> DType {
        self.dtype
    }

    fn device(&self) -> &Device {
        &self.device
    }

    fn encode_text(&self, text: &str) -> Result<Embedding> {
        if text.is_empty() {
            return Err(Error::invalid("cannot encode empty text"));
        }
        let h = self.text_features(text);
        let mut out = vec![0.0; EMBED_DIM];
        for (i, hv) in h.iter().enumerate() {
            let row = &self.head_f64[i * EMBED_DIM..(i + 1) * EMBED_DIM];
            for (o, w) in out.iter_mut().zip(row) {
                *o += hv * w;
            }
        }
        Ok(Embedding::new(out).normalized())
    }

    fn encode_images(&self, images: &Tensor) -> Result<Tensor> {
        check_resolution(images, INPUT_RESOLUTION)?;
        let mut x = standardize_pixels(&images.to_dtype(self.dtype)?)?.avg_pool2d(4)?;
        for conv in &self.convs {
            x = conv.forward(&x)?.tanh()?;
        }
        let pooled = x.mean((2, 3))?;
        normalize_rows(&pooled.matmul(&self.head)?)
    }
}

/// Three frozen random conv layers exposing taps under VGG-style names.
pub struct StubPerceptual {
    seed: u64,
    convs: [Conv2d; 3],
    dtype: DType,
}

const STUB_LAYERS: [&str; 3] = ["conv3_1", "conv4_2", "conv5_2"];

impl StubPerceptual {
    pub fn new(seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        let mut rng = SeedStreams::new(seed ^ 0x9e37_79b9).rng(Stream::Init);
        let mut b = LayerBuilder::frozen(&mut rng, dtype, device);
        Ok(Self {
            seed,
            convs: [
                b.conv("conv1", 3, 8, 3, 1)?,
                b.conv("conv2", 8, 16, 3, 2)?,
                b.conv("conv3", 16, 16, 3, 2)?,
            ],
            dtype,
        })
    }
}

impl PerceptualExtractor for StubPerceptual {
    fn name(&self) -> String {
        format!("stub-perceptual(seed={:#x})", self.seed)
    }

    fn supported_layers(&self) -> Vec<String> {
        STUB_LAYERS.iter().map(|s| s.to_string()).collect()
    }

    fn extract(&self, images: &Tensor, layers: &[String]) -> Result<Vec<FeatureMap>> {
        let mut deepest = 0;
        for l in layers {
            let pos = STUB_LAYERS
                .iter()
                .position(|s| s == l)
                .ok_or_else(|| Error::UnknownLayer(l.clone()))?;
            deepest = deepest.max(pos);
        }
        let mut x = ((images.to_dtype(self.dtype)? - 0.5)? * 4.0)?;
        let mut taps = Vec::with_capacity(3);
        for conv in self.convs.iter().take(deepest + 1) {
            x = conv.forward(&x)?.tanh()?;
            taps.push(x.clone());
        }
        Ok(layers
            .iter()
            .map(|l| {
                let pos = STUB_LAYERS.iter().position(|s| s == l).expect("checked above");
                FeatureMap {
                    layer_name: l.clone(),
                    tensor: taps[pos].clone(),
                }
            })
            .collect())
    }
}
