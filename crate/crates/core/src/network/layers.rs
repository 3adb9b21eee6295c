//! Parameter registry and the handful of layers the style networks use.

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Ordered, named trainable parameters.
#[derive(Debug, Default, Clone)]
pub struct ParamStore {
    entries: Vec<(String, Var)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn register(&mut self, name: String, value: Tensor) -> Result<Tensor> {
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(Error::invalid(format!("duplicate parameter name `{name}`")));
        }
        let var = Var::from_tensor(&value)?;
        let t = var.as_tensor().clone();
        self.entries.push((name, var));
        Ok(t)
    }

    pub fn named(&self) -> &[(String, Var)] {
        &self.entries
    }

    pub fn vars(&self) -> Vec<Var> {
        self.entries.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn num_parameters(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// Overwrites a parameter in place; every tensor handed out for it sees
    /// the new value.
    pub fn assign(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .get(name)
            .ok_or_else(|| Error::invalid(format!("no parameter named `{name}`")))?;
        if var.dims() != value.dims() {
            return Err(Error::Dimension(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                var.dims(),
                value.dims()
            )));
        }
        var.set(&value.to_dtype(var.dtype())?)?;
        Ok(())
    }
}

/// How initial weights are scaled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScale {
    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual conv default.
    Default,
    /// U(-sqrt(3/fan_in), sqrt(3/fan_in)): unit-variance propagation, used
    /// for the frozen random stand-in encoders.
    Lecun,
}

/// Creates layer weights from a seeded stream, registering them as trainable
/// parameters when a store is attached and leaving them as frozen tensors
/// otherwise.
pub struct LayerBuilder<'a> {
    rng: &'a mut StreamRng,
    store: Option<&'a mut ParamStore>,
    dtype: DType,
    device: Device,
    scale: InitScale,
}

impl<'a> LayerBuilder<'a> {
    pub fn trainable(rng: &'a mut StreamRng, store: &'a mut ParamStore, dtype: DType, device: &Device) -> Self {
        Self {
            rng,
            store: Some(store),
            dtype,
            device: device.clone(),
            scale: InitScale::Default,
        }
    }

    pub fn frozen(rng: &'a mut StreamRng, dtype: DType, device: &Device) -> Self {
        Self {
            rng,
            store: None,
            dtype,
            device: device.clone(),
            scale: InitScale::Lecun,
        }
    }

    pub fn with_scale(mut self, scale: InitScale) -> Self {
        self.scale = scale;
        self
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn bound(&self, fan_in: usize) -> f64 {
        match self.scale {
            InitScale::Default => 1.0 / (fan_in as f64).sqrt(),
            InitScale::Lecun => (3.0 / fan_in as f64).sqrt(),
        }
    }

    pub fn uniform(&mut self, name: &str, dims: &[usize], bound: f64) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        let values: Vec<f64> = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.constant(name, values, dims)
    }

    pub fn constant(&mut self, name: &str, values: Vec<f64>, dims: &[usize]) -> Result<Tensor> {
        let t = Tensor::from_vec(values, dims, &self.device)?.to_dtype(self.dtype)?;
        match self.store.as_deref_mut() {
            Some(store) => store.register(name.to_string(), t),
            None => Ok(t),
        }
    }

    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize) -> Result<Conv2d> {
        let fan_in = cin * kernel * kernel;
        let bound = self.bound(fan_in);
        let weight = self.uniform(&format!("{name}.weight"), &[cout, cin, kernel, kernel], bound)?;
        let bias = self.uniform(&format!("{name}.bias"), &[cout], 1.0 / (fan_in as f64).sqrt())?;
        Ok(Conv2d::new(weight, Some(bias), stride, kernel / 2))
    }

    pub fn instance_norm(&mut self, name: &str, channels: usize) -> Result<InstanceNorm> {
        let gamma = self.constant(&format!("{name}.weight"), vec![1.0; channels], &[channels])?;
        let beta = self.constant(&format!("{name}.bias"), vec![0.0; channels], &[channels])?;
        Ok(InstanceNorm { gamma, beta, eps: 1e-5 })
    }

    pub fn linear(&mut self, name: &str, din: usize, dout: usize) -> Result<Tensor> {
        let bound = self.bound(din);
        self.uniform(&format!("{name}.weight"), &[din, dout], bound)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(weight: Tensor, bias: Option<Tensor>, stride: usize, padding: usize) -> Self {
        Self {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Tensor> {
        self.bias.as_ref()
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    /// Same weights, cut from the autodiff graph.
    pub fn detached(&self) -> Self {
        Self {
            weight: self.weight.detach(),
            bias: self.bias.as_ref().map(Tensor::detach),
            ..*self
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?,
            None => y,
        })
    }
}

/// Per-sample, per-channel normalization with a learned affine transform.
#[derive(Debug, Clone)]
pub struct InstanceNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl InstanceNorm {
    pub fn detached(&self) -> Self {
        Self {
            gamma: self.gamma.detach(),
            beta: self.beta.detach(),
            eps: self.eps,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = x.dim(1)?;
        let mean = x.mean_keepdim((2, 3))?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim((2, 3))?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(&self.gamma.reshape((1, c, 1, 1))?)?
            .broadcast_add(&self.beta.reshape((1, c, 1, 1))?)?)
    }
}

/// conv -> IN -> ReLU -> conv -> IN, added back onto the input.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    conv1: Conv2d,
    norm1: InstanceNorm,
    conv2: Conv2d,
    norm2: InstanceNorm,
}

impl ResidualBlock {
    pub fn new(b: &mut LayerBuilder<'_>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            conv1: b.conv(&format!("{name}.conv1"), channels, channels, 3, 1)?,
            norm1: b.instance_norm(&format!("{name}.norm1"), channels)?,
            conv2: b.conv(&format!("{name}.conv2"), channels, channels, 3, 1)?,
            norm2: b.instance_norm(&format!("{name}.norm2"), channels)?,
        })
    }

    pub fn detached(&self) -> Self {
        Self {
            conv1: self.conv1.detached(),
            norm1: self.norm1.detached(),
            conv2: self.conv2.detached(),
            norm2: self.norm2.detached(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.norm1.forward(&self.conv1.forward(x)?)?.relu()?;
        let h = self.norm2.forward(&self.conv2.forward(&h)?)?;
        Ok((x + h)?)
    }
}

/// Logistic function written through `tanh`, whose gradient stays finite
/// for large-magnitude inputs.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((((x * 0.5)?.tanh()? + 1.0)? * 0.5)?)
}

/// Nearest-neighbour 2x upsampling of a `(B, C, H, W)` tensor.
pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    Ok(x.reshape((b, c, h, 1, w, 1))?
        .broadcast_as((b, c, h, 2, w, 2))?
        .reshape((b, c, 2 * h, 2 * w))?)
}

/// Reflect-pads the bottom and right edges so both spatial sizes become
/// multiples of `multiple`. Returns the padded tensor and the original size.
pub fn reflect_pad_to_multiple(x: &Tensor, multiple: usize) -> Result<(Tensor, (usize, usize))> {
    let (_, _, h, w) = x.dims4()?;
    let ph = h.div_ceil(multiple) * multiple;
    let pw = w.div_ceil(multiple) * multiple;
    if ph == h && pw == w {
        return Ok((x.clone(), (h, w)));
    }
    let device = x.device();
    let rows = Tensor::new(reflect_indices(h, ph)?.as_slice(), device)?;
    let cols = Tensor::new(reflect_indices(w, pw)?.as_slice(), device)?;
    let padded = x.index_select(&rows, 2)?.index_select(&cols, 3)?;
    Ok((padded, (h, w)))
}

fn reflect_indices(len: usize, target: usize) -> Result<Vec<u32>> {
    if len == 1 {
        return Ok(vec![0; target]);
    }
    let period = 2 * (len - 1);
    Ok((0..target)
        .map(|i| {
            let m = i % period;
            (if m < len { m } else { period - m }) as u32
        })
        .collect())
}
