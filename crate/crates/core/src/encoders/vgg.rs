//! VGG-19 convolutional trunk with named feature taps.
//!
//! Weights load from a safetensors file using the usual
//! `features.<index>.weight|bias` naming, or are drawn from a seed for the
//! narrow offline stand-in. Taps are named `convB_L` (equivalently
//! `reluB_L`) and return the post-ReLU activation of that conv.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};
use crate::network::layers::{Conv2d, LayerBuilder};
use crate::rng::{SeedStreams, Stream};

/// Published per-channel input statistics of the pre-trained network.
pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

pub const VGG19_WIDTHS: [usize; 4] = [64, 128, 256, 512];

/// Convs per block in VGG-19.
const BLOCK_DEPTHS: [usize; 5] = [2, 2, 4, 4, 4];

#[derive(Debug, Clone, PartialEq, Eq)]
struct ConvSpec {
    name: String,
    /// Index in the `features` sequential of the reference layout.
    index: usize,
    cin: usize,
    cout: usize,
    /// A 2x2 max-pool follows this conv.
    pool_after: bool,
}

fn plan(widths: [usize; 4], last: &str) -> Result<Vec<ConvSpec>> {
    let mut specs = Vec::new();
    let mut index = 0;
    let mut cin = 3;
    for (block, depth) in BLOCK_DEPTHS.iter().enumerate() {
        let cout = widths[block.min(3)];
        for layer in 0..*depth {
            let name = format!("conv{}_{}", block + 1, layer + 1);
            let pool_after = layer + 1 == *depth;
            specs.push(ConvSpec {
                name: name.clone(),
                index,
                cin,
                cout,
                pool_after,
            });
            index += 2;
            if pool_after {
                index += 1;
            }
            cin = cout;
            if name == last {
                return Ok(specs);
            }
        }
    }
    Err(Error::UnknownLayer(last.to_string()))
}

/// Maps `reluB_L` to `convB_L`; other names pass through.
pub fn canonical_layer(name: &str) -> String {
    match name.strip_prefix("relu") {
        Some(rest) => format!("conv{rest}"),
        None => name.to_string(),
    }
}

#[derive(Debug, Clone)]
pub struct VggFeatures {
    widths: [usize; 4],
    specs: Vec<ConvSpec>,
    convs: Vec<Conv2d>,
    mean: Tensor,
    std: Tensor,
}

impl VggFeatures {
    /// Frozen random weights from `seed` with the given block widths, up to
    /// and including layer `last`.
    pub fn random(widths: [usize; 4], last: &str, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        let specs = plan(widths, &canonical_layer(last))?;
        let mut rng = SeedStreams::new(seed).rng(Stream::Init);
        let mut b = LayerBuilder::frozen(&mut rng, dtype, device);
        let convs = specs
            .iter()
            .map(|s| b.conv(&s.name, s.cin, s.cout, 3, 1))
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(widths, specs, convs, dtype, device)
    }

    /// Loads pre-trained weights (reference `features.<i>` naming).
    pub fn load(path: impl AsRef<Path>, last: &str, dtype: DType, device: &Device) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::BackendUnavailable(format!(
                "VGG-19 weights not found at {}",
                path.display()
            )));
        }
        let tensors = candle_core::safetensors::load(path, device)?;
        let renamed = plan(VGG19_WIDTHS, &canonical_layer(last))?
            .into_iter()
            .flat_map(|s| {
                [
                    (format!("features.{}.weight", s.index), format!("{}.weight", s.name)),
                    (format!("features.{}.bias", s.index), format!("{}.bias", s.name)),
                ]
            })
            .map(|(from, to)| {
                tensors
                    .get(&from)
                    .cloned()
                    .map(|t| (to, t))
                    .ok_or_else(|| Error::BackendUnavailable(format!("VGG-19 weights lack `{from}`")))
            })
            .collect::<Result<HashMap<_, _>>>()?;
        Self::from_named(VGG19_WIDTHS, last, &renamed, dtype, device)
    }

    /// Rebuilds the trunk from tensors named `<conv>.weight` / `<conv>.bias`.
    pub fn from_named(
        widths: [usize; 4],
        last: &str,
        tensors: &HashMap<String, Tensor>,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        let specs = plan(widths, &canonical_layer(last))?;
        let mut convs = Vec::with_capacity(specs.len());
        for s in &specs {
            let fetch = |suffix: &str, dims: &[usize]| -> Result<Tensor> {
                let key = format!("{}.{suffix}", s.name);
                let t = tensors
                    .get(&key)
                    .ok_or_else(|| Error::invalid(format!("missing tensor `{key}`")))?;
                if t.dims() != dims {
                    return Err(Error::Dimension(format!(
                        "`{key}` has shape {:?}, expected {dims:?}",
                        t.dims()
                    )));
                }
                Ok(t.to_dtype(dtype)?.to_device(device)?)
            };
            let w = fetch("weight", &[s.cout, s.cin, 3, 3])?;
            let bias = fetch("bias", &[s.cout])?;
            convs.push(Conv2d::new(w, Some(bias), 1, 1));
        }
        Self::assemble(widths, specs, convs, dtype, device)
    }

    fn assemble(
        widths: [usize; 4],
        specs: Vec<ConvSpec>,
        convs: Vec<Conv2d>,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        let stat =
            |v: [f32; 3]| -> Result<Tensor> { Ok(Tensor::from_slice(&v, (1, 3, 1, 1), device)?.to_dtype(dtype)?) };
        Ok(Self {
            widths,
            specs,
            convs,
            mean: stat(IMAGENET_MEAN)?,
            std: stat(IMAGENET_STD)?,
        })
    }

    pub fn widths(&self) -> [usize; 4] {
        self.widths
    }

    pub fn last_layer(&self) -> &str {
        &self.specs.last().expect("plan is never empty").name
    }

    pub fn out_channels(&self) -> usize {
        self.specs.last().expect("plan is never empty").cout
    }

    pub fn layer_names(&self) -> Vec<String> {
        self.specs.iter().map(|s| s.name.clone()).collect()
    }

    /// Named weight tensors, in layer order.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.specs
            .iter()
            .zip(&self.convs)
            .flat_map(|(s, c)| {
                [
                    (format!("{}.weight", s.name), c.weight().clone()),
                    (
                        format!("{}.bias", s.name),
                        c.bias().expect("vgg convs have bias").clone(),
                    ),
                ]
            })
            .collect()
    }

    /// Runs `images` (`(B, 3, H, W)` in `[0, 1]`) up to the deepest requested
    /// tap and returns the taps in request order.
    pub fn taps(&self, images: &Tensor, layers: &[String]) -> Result<Vec<Tensor>> {
        let wanted: Vec<String> = layers.iter().map(|l| canonical_layer(l)).collect();
        let mut deepest = 0;
        for l in &wanted {
            let pos = self
                .specs
                .iter()
                .position(|s| s.name == *l)
                .ok_or_else(|| Error::UnknownLayer(l.clone()))?;
            deepest = deepest.max(pos);
        }
        let mut found: HashMap<&str, Tensor> = HashMap::new();
        let mut x = images.broadcast_sub(&self.mean)?.broadcast_div(&self.std)?;
        for (spec, conv) in self.specs.iter().zip(&self.convs).take(deepest + 1) {
            x = conv.forward(&x)?.relu()?;
            if wanted.contains(&spec.name) {
                found.insert(&spec.name, x.clone());
            }
            if spec.pool_after {
                x = x.max_pool2d(2)?;
            }
        }
        Ok(wanted.iter().map(|l| found[l.as_str()].clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_indices() {
        let p = plan(VGG19_WIDTHS, "conv5_2").unwrap();
        let idx: HashMap<_, _> = p.iter().map(|s| (s.name.as_str(), s.index)).collect();
        assert_eq!(idx["conv1_1"], 0);
        assert_eq!(idx["conv2_1"], 5);
        assert_eq!(idx["conv3_1"], 10);
        assert_eq!(idx["conv4_1"], 19);
        assert_eq!(idx["conv4_2"], 21);
        assert_eq!(idx["conv5_2"], 30);
        assert_eq!(p.last().unwrap().cin, 512);
    }

    #[test]
    fn relu_alias() {
        assert_eq!(canonical_layer("relu4_1"), "conv4_1");
        assert!(plan(VGG19_WIDTHS, "conv9_9").is_err());
    }

    #[test]
    fn tap_shapes() {
        let v = VggFeatures::random([4, 8, 8, 16], "relu4_1", 1, DType::F32, &Device::Cpu).unwrap();
        let x = Tensor::rand(0f32, 1f32, (2, 3, 32, 32), &Device::Cpu).unwrap();
        let t = v.taps(&x, &["conv4_1".into(), "conv1_1".into()]).unwrap();
        assert_eq!(t[0].dims(), &[2, 16, 4, 4]);
        assert_eq!(t[1].dims(), &[2, 4, 32, 32]);
        assert!(matches!(v.taps(&x, &["conv5_2".into()]), Err(Error::UnknownLayer(_))));
    }
}
