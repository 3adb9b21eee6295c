//! Texture images for fast-transfer training.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::Rng;

use crate::error::{Error, Result};
use crate::image::Image;

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// In-memory pool of images from which random square crops are batched.
#[derive(Debug, Clone)]
pub struct TextureDataset {
    images: Vec<Image>,
    crop_size: usize,
    batch_size: usize,
}

impl TextureDataset {
    /// Keeps only images at least `crop_size` on each side.
    pub fn from_images(images: Vec<Image>, crop_size: usize, batch_size: usize) -> Result<Self> {
        if crop_size == 0 || batch_size == 0 {
            return Err(Error::invalid("crop and batch size must be positive"));
        }
        let total = images.len();
        let images: Vec<Image> = images
            .into_iter()
            .filter(|im| im.width() >= crop_size && im.height() >= crop_size)
            .collect();
        if images.len() < total {
            log::warn!(
                "skipped {} texture image(s) smaller than {crop_size}x{crop_size}",
                total - images.len()
            );
        }
        if images.is_empty() {
            return Err(Error::invalid(format!(
                "no texture image is at least {crop_size}x{crop_size}"
            )));
        }
        Ok(Self {
            images,
            crop_size,
            batch_size,
        })
    }

    /// Loads every PNG or JPEG file in `dir`, sorted by name.
    pub fn from_dir(dir: impl AsRef<Path>, crop_size: usize, batch_size: usize) -> Result<Self> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(Error::invalid(format!("{} is not a directory", dir.display())));
        }
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.iter().any(|x| e.eq_ignore_ascii_case(x)))
            })
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::invalid(format!("no images found in {}", dir.display())));
        }
        let images = paths.iter().map(Image::load).collect::<Result<Vec<_>>>()?;
        Self::from_images(images, crop_size, batch_size)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn crop_size(&self) -> usize {
        self.crop_size
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// `(batch, 3, crop, crop)` of random crops from random images.
    pub fn next_batch<R: Rng + ?Sized>(&self, rng: &mut R, dtype: DType, device: &Device) -> Result<Tensor> {
        let s = self.crop_size;
        let crops = (0..self.batch_size)
            .map(|_| {
                let im = &self.images[rng.random_range(0..self.images.len())];
                let x = rng.random_range(0..=im.width() - s);
                let y = rng.random_range(0..=im.height() - s);
                im.crop(x, y, s, s)?.to_tensor(dtype, device)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::cat(&crops, 0)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeedStreams, Stream};

    #[test]
    fn batches_have_requested_shape() {
        let ims = vec![Image::filled(40, 30, [0.2, 0.4, 0.6]), Image::filled(10, 10, [0.0; 3])];
        let ds = TextureDataset::from_images(ims, 24, 3).unwrap();
        assert_eq!(ds.len(), 1);
        let mut rng = SeedStreams::new(1).rng(Stream::Data);
        let b = ds.next_batch(&mut rng, DType::F32, &Device::Cpu).unwrap();
        assert_eq!(b.dims(), &[3, 3, 24, 24]);
    }

    #[test]
    fn all_too_small_is_an_error() {
        assert!(TextureDataset::from_images(vec![Image::filled(8, 8, [0.0; 3])], 24, 1).is_err());
    }

    #[test]
    fn loads_directory() {
        let dir = tempfile::tempdir().unwrap();
        Image::filled(32, 32, [1.0, 0.0, 0.0])
            .save_png(dir.path().join("a.png"))
            .unwrap();
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let ds = TextureDataset::from_dir(dir.path(), 16, 2).unwrap();
        assert_eq!(ds.len(), 1);
        assert!(TextureDataset::from_dir(dir.path().join("missing"), 16, 2).is_err());
    }
}
