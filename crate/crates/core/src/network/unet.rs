//! Lightweight residual U-Net used for per-image stylization.
//!
//! ```text
//! stem   3 -> 16   (H)        ──────────────────────────────┐ skip0
//! down1 16 -> 32   (H/2, s=2) ───────────────────────┐ skip1│
//! down2 32 -> 64   (H/4, s=2) ────────────────┐ skip2│      │
//! down3 64 -> 128  (H/8, s=2) + 2 residual    │      │      │
//! up3  128 -> 64   concat skip2 -> 64 + res ◄─┘      │      │
//! up2   64 -> 32   concat skip1 -> 32 + res ◄────────┘      │
//! up1   32 -> 16   concat skip0 -> 16 + res ◄───────────────┘
//! head  16 + 3 (input) -> 3, sigmoid
//! ```
//! 3x3 kernels throughout, instance norm + ReLU after every conv but the
//! head. Inputs whose sides are not multiples of 8 are reflect-padded and
//! the output cropped back.

use candle_core::{DType, Device, Tensor, Var};

use super::layers::{
    reflect_pad_to_multiple, sigmoid, upsample2x, Conv2d, InstanceNorm, LayerBuilder, ParamStore, ResidualBlock,
};
use crate::error::Result;
use crate::rng::{SeedStreams, Stream};

/// Channel widths of the stem, the two intermediate scales and the bottleneck.
pub const UNET_CHANNELS: [usize; 4] = [16, 32, 64, 128];

#[derive(Debug, Clone)]
struct ConvNorm {
    conv: Conv2d,
    norm: InstanceNorm,
}

impl ConvNorm {
    fn new(b: &mut LayerBuilder<'_>, name: &str, cin: usize, cout: usize, stride: usize) -> Result<Self> {
        Ok(Self {
            conv: b.conv(&format!("{name}.conv"), cin, cout, 3, stride)?,
            norm: b.instance_norm(&format!("{name}.norm"), cout)?,
        })
    }

    fn detached(&self) -> Self {
        Self {
            conv: self.conv.detached(),
            norm: self.norm.detached(),
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.norm.forward(&self.conv.forward(x)?)?.relu()?)
    }
}

#[derive(Debug, Clone)]
struct UpStage {
    reduce: ConvNorm,
    fuse: ConvNorm,
    res: ResidualBlock,
}

impl UpStage {
    fn new(b: &mut LayerBuilder<'_>, name: &str, cin: usize, cout: usize) -> Result<Self> {
        Ok(Self {
            reduce: ConvNorm::new(b, &format!("{name}.reduce"), cin, cout, 1)?,
            fuse: ConvNorm::new(b, &format!("{name}.fuse"), 2 * cout, cout, 1)?,
            res: ResidualBlock::new(b, &format!("{name}.res"), cout)?,
        })
    }

    fn detached(&self) -> Self {
        Self {
            reduce: self.reduce.detached(),
            fuse: self.fuse.detached(),
            res: self.res.detached(),
        }
    }

    fn forward(&self, x: &Tensor, skip: &Tensor) -> Result<Tensor> {
        let up = self.reduce.forward(&upsample2x(x)?)?;
        let fused = self.fuse.forward(&Tensor::cat(&[&up, skip], 1)?)?;
        self.res.forward(&fused)
    }
}

#[derive(Debug, Clone)]
pub struct UNetStyler {
    params: ParamStore,
    stem: ConvNorm,
    down1: ConvNorm,
    down2: ConvNorm,
    down3: ConvNorm,
    bottleneck: [ResidualBlock; 2],
    up3: UpStage,
    up2: UpStage,
    up1: UpStage,
    head: Conv2d,
}

impl UNetStyler {
    /// Deterministic initialization from the `Init` stream of `seed`.
    pub fn new(seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        let mut rng = SeedStreams::new(seed).rng(Stream::Init);
        let mut params = ParamStore::new();
        let [c0, c1, c2, c3] = UNET_CHANNELS;
        let mut b = LayerBuilder::trainable(&mut rng, &mut params, dtype, device);
        let stem = ConvNorm::new(&mut b, "stem", 3, c0, 1)?;
        let down1 = ConvNorm::new(&mut b, "down1", c0, c1, 2)?;
        let down2 = ConvNorm::new(&mut b, "down2", c1, c2, 2)?;
        let down3 = ConvNorm::new(&mut b, "down3", c2, c3, 2)?;
        let bottleneck = [
            ResidualBlock::new(&mut b, "bottleneck.0", c3)?,
            ResidualBlock::new(&mut b, "bottleneck.1", c3)?,
        ];
        let up3 = UpStage::new(&mut b, "up3", c3, c2)?;
        let up2 = UpStage::new(&mut b, "up2", c2, c1)?;
        let up1 = UpStage::new(&mut b, "up1", c1, c0)?;
        let head = b.conv("head", c0 + 3, 3, 3, 1)?;
        Ok(Self {
            params,
            stem,
            down1,
            down2,
            down3,
            bottleneck,
            up3,
            up2,
            up1,
            head,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn trainable_vars(&self) -> Vec<Var> {
        self.params.vars()
    }

    /// Inference copy whose forward pass records no graph. Shares storage
    /// with the trainable parameters.
    pub fn detached(&self) -> Self {
        Self {
            params: self.params.clone(),
            stem: self.stem.detached(),
            down1: self.down1.detached(),
            down2: self.down2.detached(),
            down3: self.down3.detached(),
            bottleneck: [self.bottleneck[0].detached(), self.bottleneck[1].detached()],
            up3: self.up3.detached(),
            up2: self.up2.detached(),
            up1: self.up1.detached(),
            head: self.head.detached(),
        }
    }

    /// `(B, 3, H, W)` in `[0, 1]` to `(B, 3, H, W)` in `(0, 1)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (padded, (h, w)) = reflect_pad_to_multiple(x, 8)?;
        let s0 = self.stem.forward(&padded)?;
        let s1 = self.down1.forward(&s0)?;
        let s2 = self.down2.forward(&s1)?;
        let mut z = self.down3.forward(&s2)?;
        for block in &self.bottleneck {
            z = block.forward(&z)?;
        }
        let z = self.up3.forward(&z, &s2)?;
        let z = self.up2.forward(&z, &s1)?;
        let z = self.up1.forward(&z, &s0)?;
        let out = sigmoid(&self.head.forward(&Tensor::cat(&[&z, &padded], 1)?)?)?;
        Ok(out.narrow(2, 0, h)?.narrow(3, 0, w)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lightweight() {
        let net = UNetStyler::new(0, DType::F32, &Device::Cpu).unwrap();
        let n = net.params().num_parameters();
        assert!(n <= 2_000_000, "{n} parameters");
        assert!(n > 100_000);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = UNetStyler::new(5, DType::F32, &Device::Cpu).unwrap();
        let b = UNetStyler::new(5, DType::F32, &Device::Cpu).unwrap();
        let c = UNetStyler::new(6, DType::F32, &Device::Cpu).unwrap();
        let mut any_diff = false;
        for ((na, va), ((nb, vb), (_, vc))) in a
            .params()
            .named()
            .iter()
            .zip(b.params().named().iter().zip(c.params().named()))
        {
            assert_eq!(na, nb);
            let va: Vec<f32> = va.flatten_all().unwrap().to_vec1().unwrap();
            let vb: Vec<f32> = vb.flatten_all().unwrap().to_vec1().unwrap();
            let vc: Vec<f32> = vc.flatten_all().unwrap().to_vec1().unwrap();
            assert_eq!(va, vb);
            any_diff |= va != vc;
        }
        assert!(any_diff);
    }

    #[test]
    fn odd_sizes_keep_shape() {
        let net = UNetStyler::new(0, DType::F32, &Device::Cpu).unwrap();
        let x = Tensor::rand(0f32, 1f32, (1, 3, 13, 21), &Device::Cpu).unwrap();
        let y = net.forward(&x).unwrap();
        assert_eq!(y.dims(), &[1, 3, 13, 21]);
    }
}
