//! RGB float rasters and their conversion to and from tensors and files.

use std::path::Path;

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};

/// An RGB image with channel values in `[0, 1]`, stored row-major, channels
/// interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "image must be at least 1x1, got {width}x{height}"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(Error::Dimension(format!(
                "expected {} values for a {width}x{height} RGB image, got {}",
                width * height * 3,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { width, height, data })
    }

    /// Builds an image from a per-pixel function; values are clamped.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        assert!(width > 0 && height > 0, "image must be at least 1x1");
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(x, y).iter().map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Self { width, height, data }
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn crop(&self, x: usize, y: usize, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 || x + width > self.width || y + height > self.height {
            return Err(Error::Dimension(format!(
                "crop {width}x{height}+{x}+{y} outside {}x{} image",
                self.width, self.height
            )));
        }
        Ok(Self::from_fn(width, height, |cx, cy| self.pixel(x + cx, y + cy)))
    }

    /// Decodes by content, so a mislabelled extension still loads.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let rgb = image::ImageReader::open(path.as_ref())?
            .with_guessed_format()?
            .decode()?
            .to_rgb8();
        let (w, h) = rgb.dimensions();
        let data = rgb.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
        Self::new(w as usize, h as usize, data)
    }

    /// 8-bit quantization used for PNG output.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
            .expect("buffer length matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    /// `(1, 3, H, W)` tensor.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let t = Tensor::from_slice(&self.data, (self.height, self.width, 3), device)?
            .permute((2, 0, 1))?
            .unsqueeze(0)?
            .to_dtype(dtype)?
            .contiguous()?;
        Ok(t)
    }

    /// Accepts `(3, H, W)` or `(1, 3, H, W)`; values are clamped to `[0, 1]`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let t = match t.rank() {
            4 if t.dim(0)? == 1 => t.squeeze(0)?,
            3 => t.clone(),
            _ => {
                return Err(Error::Dimension(format!(
                    "expected a (1,3,H,W) or (3,H,W) tensor, got {:?}",
                    t.dims()
                )))
            }
        };
        let (c, h, w) = t.dims3()?;
        if c != 3 {
            return Err(Error::Dimension(format!("expected 3 channels, got {c}")));
        }
        let data: Vec<f32> = t.permute((1, 2, 0))?.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
        let data = data
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Self::new(w, h, data)
    }

    /// Per-channel linear contrast stretch between the 1st and 99th
    /// percentiles. Display-only post-processing.
    pub fn enhance_contrast(&self) -> Self {
        let n = self.width * self.height;
        let mut bounds = [(0.0f32, 1.0f32); 3];
        for (c, bound) in bounds.iter_mut().enumerate() {
            let mut values: Vec<f32> = (0..n).map(|i| self.data[i * 3 + c]).collect();
            values.sort_by(f32::total_cmp);
            let lo = values[(n - 1) / 100];
            let hi = values[(n - 1) - (n - 1) / 100];
            *bound = (lo, hi);
        }
        let mut out = self.clone();
        for (i, v) in out.data.iter_mut().enumerate() {
            let (lo, hi) = bounds[i % 3];
            if hi - lo > 1e-6 {
                *v = ((*v - lo) / (hi - lo)).clamp(0.0, 1.0);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_and_empty() {
        assert!(Image::new(1, 1, vec![0.0, 0.5, 1.5]).is_err());
        assert!(Image::new(0, 1, vec![]).is_err());
        assert!(Image::new(2, 1, vec![0.0; 3]).is_err());
    }

    #[test]
    fn tensor_round_trip() {
        let img = Image::from_fn(5, 3, |x, y| [x as f32 / 4.0, y as f32 / 2.0, 0.25]);
        let t = img.to_tensor(DType::F32, &Device::Cpu).unwrap();
        assert_eq!(t.dims(), &[1, 3, 3, 5]);
        assert_eq!(Image::from_tensor(&t).unwrap(), img);
        // channel-major layout: red channel of pixel (4, 0)
        let v: f32 = t
            .get(0)
            .unwrap()
            .get(0)
            .unwrap()
            .get(0)
            .unwrap()
            .get(4)
            .unwrap()
            .to_scalar()
            .unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn png_round_trip_is_lossless_at_8_bits() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(7, 4, |x, y| [(x * 30) as f32 / 255.0, (y * 50) as f32 / 255.0, 1.0]);
        let path = dir.path().join("a.png");
        img.save_png(&path).unwrap();
        let back = Image::load(&path).unwrap();
        assert_eq!(back.to_rgb8(), img.to_rgb8());
    }

    #[test]
    fn crop_bounds() {
        let img = Image::filled(4, 4, [0.5; 3]);
        assert!(img.crop(2, 2, 2, 2).is_ok());
        assert!(img.crop(3, 0, 2, 2).is_err());
    }

    #[test]
    fn contrast_stretch_spans_unit_range() {
        let img = Image::from_fn(10, 10, |x, _| [0.4 + x as f32 * 0.01; 3]);
        let e = img.enhance_contrast();
        let max = e.data().iter().cloned().fold(0.0, f32::max);
        let min = e.data().iter().cloned().fold(1.0, f32::min);
        assert!(max > 0.99 && min < 0.01);
    }
}
