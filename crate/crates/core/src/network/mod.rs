//! Trainable image-to-image style networks.

pub mod checkpoint;
mod fast;
pub mod layers;
mod unet;

use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};

pub use fast::{FastStyler, ENCODER_TAP, STUB_ENCODER_WIDTHS};
pub use unet::{UNetStyler, UNET_CHANNELS};

use crate::encoders::vgg::VggFeatures;
use crate::error::{CheckpointError, Error, Result};
use crate::image::Image;
use checkpoint::{CheckpointData, NetKind};

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum StyleNetwork {
    UNet(UNetStyler),
    Fast(FastStyler),
}

impl From<UNetStyler> for StyleNetwork {
    fn from(n: UNetStyler) -> Self {
        StyleNetwork::UNet(n)
    }
}

impl From<FastStyler> for StyleNetwork {
    fn from(n: FastStyler) -> Self {
        StyleNetwork::Fast(n)
    }
}

impl StyleNetwork {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            StyleNetwork::UNet(n) => n.forward(x),
            StyleNetwork::Fast(n) => n.forward(x),
        }
    }

    /// Inference copy; see [`UNetStyler::detached`].
    pub fn detached(&self) -> Self {
        match self {
            StyleNetwork::UNet(n) => StyleNetwork::UNet(n.detached()),
            StyleNetwork::Fast(n) => StyleNetwork::Fast(n.detached()),
        }
    }

    pub fn trainable_vars(&self) -> Vec<Var> {
        match self {
            StyleNetwork::UNet(n) => n.trainable_vars(),
            StyleNetwork::Fast(n) => n.trainable_vars(),
        }
    }

    fn params(&self) -> &layers::ParamStore {
        match self {
            StyleNetwork::UNet(n) => n.params(),
            StyleNetwork::Fast(n) => n.params(),
        }
    }

    /// Flat copy of every trainable parameter, in registration order.
    pub fn parameter_snapshot(&self) -> Result<Vec<Vec<f64>>> {
        self.params()
            .named()
            .iter()
            .map(|(_, v)| Ok(v.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?))
            .collect()
    }

    fn dtype(&self) -> DType {
        self.params().named()[0].1.dtype()
    }

    pub fn to_checkpoint(&self) -> CheckpointData {
        let params: Vec<(String, Tensor)> = self
            .params()
            .named()
            .iter()
            .map(|(n, v)| (n.clone(), v.as_tensor().clone()))
            .collect();
        match self {
            StyleNetwork::UNet(_) => CheckpointData {
                kind: NetKind::UNet,
                dtype: self.dtype(),
                channels: UNET_CHANNELS.iter().map(|c| *c as u32).collect(),
                tensors: params,
            },
            StyleNetwork::Fast(n) => {
                let mut tensors: Vec<(String, Tensor)> = n
                    .encoder()
                    .named_tensors()
                    .into_iter()
                    .map(|(k, t)| (format!("encoder.{k}"), t))
                    .collect();
                tensors.extend(params.into_iter().map(|(k, t)| (format!("decoder.{k}"), t)));
                CheckpointData {
                    kind: NetKind::Fast,
                    dtype: self.dtype(),
                    channels: n.encoder().widths().iter().map(|c| *c as u32).collect(),
                    tensors,
                }
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::write(path, &self.to_checkpoint())
    }

    pub fn load(path: impl AsRef<Path>, device: &Device) -> Result<Self> {
        Self::from_checkpoint(&checkpoint::read(path, device)?, device)
    }

    pub fn from_checkpoint(data: &CheckpointData, device: &Device) -> Result<Self> {
        let malformed = |m: String| Error::Checkpoint(CheckpointError::Malformed(m));
        match data.kind {
            NetKind::UNet => {
                if data.channels.iter().map(|c| *c as usize).ne(UNET_CHANNELS) {
                    return Err(malformed(format!("unsupported U-Net channels {:?}", data.channels)));
                }
                let net = UNetStyler::new(0, data.dtype, device)?;
                assign_all(net.params(), data.tensors.iter().map(|(k, t)| (k.as_str(), t)))?;
                Ok(StyleNetwork::UNet(net))
            }
            NetKind::Fast => {
                let widths: [usize; 4] = data
                    .channels
                    .iter()
                    .map(|c| *c as usize)
                    .collect::<Vec<_>>()
                    .try_into()
                    .map_err(|_| malformed("fast network needs four channel widths".into()))?;
                let encoder_tensors = data
                    .tensors
                    .iter()
                    .filter_map(|(k, t)| k.strip_prefix("encoder.").map(|k| (k.to_string(), t.clone())))
                    .collect();
                let encoder = VggFeatures::from_named(widths, ENCODER_TAP, &encoder_tensors, data.dtype, device)
                    .map_err(|e| malformed(e.to_string()))?;
                let net = FastStyler::new(encoder, 0, data.dtype, device)?;
                assign_all(
                    net.params(),
                    data.tensors
                        .iter()
                        .filter_map(|(k, t)| k.strip_prefix("decoder.").map(|k| (k, t))),
                )?;
                Ok(StyleNetwork::Fast(net))
            }
        }
    }
}

fn assign_all<'a>(params: &layers::ParamStore, tensors: impl Iterator<Item = (&'a str, &'a Tensor)>) -> Result<()> {
    let mut seen = 0;
    for (name, t) in tensors {
        params
            .assign(name, t)
            .map_err(|e| Error::Checkpoint(CheckpointError::Malformed(e.to_string())))?;
        seen += 1;
    }
    if seen != params.named().len() {
        return Err(Error::Checkpoint(CheckpointError::Malformed(format!(
            "expected {} parameters, found {seen}",
            params.named().len()
        ))));
    }
    Ok(())
}

/// Runs the network on one image. Output has the input's size.
pub fn stylize(net: &StyleNetwork, content: &Image) -> Result<Image> {
    let dtype = net.dtype();
    let device = net.trainable_vars()[0].device().clone();
    let out = net.detached().forward(&content.to_tensor(dtype, &device)?)?;
    Image::from_tensor(&out)
}
