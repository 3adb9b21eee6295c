//! Patch-wise text similarity and content preservation metrics.

use std::fmt;
use std::io::Write;
use std::path::Path;

use candle_core::Tensor;
use rand::Rng;

use crate::encoders::{encode_text, Embedding, PerceptualExtractor, TextImageEncoder};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::content_loss;
use crate::sampler::{extract_crops, resize_bilinear, CropRect};

/// Crop side range used by default, inclusive.
pub const DEFAULT_SIZE_RANGE: (usize, usize) = (64, 224);
pub const DEFAULT_EVAL_PATCHES: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mean_clip_score: f64,
    pub per_patch_scores: Vec<f64>,
    /// Feature distance to the content image, when one was given.
    pub content_mse: Option<f64>,
    pub n_patches: usize,
    pub size_range: (usize, usize),
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("patch,clip_score\n");
        for (i, v) in self.per_patch_scores.iter().enumerate() {
            s.push_str(&format!("{i},{v}\n"));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "patch-wise CLIP score : {:.4}", self.mean_clip_score)?;
        writeln!(f, "patches               : {}", self.n_patches)?;
        writeln!(
            f,
            "crop sizes            : {}..={}",
            self.size_range.0, self.size_range.1
        )?;
        match self.content_mse {
            Some(v) => writeln!(f, "content feature MSE   : {v:.6}"),
            None => writeln!(f, "content feature MSE   : n/a"),
        }
    }
}

/// Cosine similarity of each embedding to the text embedding, and their mean.
pub fn scores_from_embeddings(patches: &[Embedding], text: &Embedding) -> Result<(f64, Vec<f64>)> {
    if patches.is_empty() {
        return Err(Error::invalid("no patch embeddings to score"));
    }
    let scores: Vec<f64> = patches.iter().map(|p| p.cosine(text)).collect();
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    Ok((mean, scores))
}

/// Scores `n` random square crops with sides uniform in `size_range` against
/// the raw (template-free) text embedding.
pub fn patchwise_clip_score<R: Rng + ?Sized>(
    output: &Image,
    style_text: &str,
    encoder: &dyn TextImageEncoder,
    n: usize,
    size_range: (usize, usize),
    rng: &mut R,
) -> Result<EvalReport> {
    let (lo, hi) = size_range;
    if n == 0 || lo == 0 || lo > hi {
        return Err(Error::invalid(format!(
            "bad evaluation setup: n={n}, sizes {lo}..={hi}"
        )));
    }
    if output.width() < hi || output.height() < hi {
        return Err(Error::Dimension(format!(
            "image {}x{} is smaller than the largest crop {hi}",
            output.width(),
            output.height()
        )));
    }
    let text = encode_text(encoder, style_text)?;
    let r = encoder.input_resolution();
    let image = output.to_tensor(encoder.dtype(), encoder.device())?;
    let crops: Vec<Tensor> = (0..n)
        .map(|_| {
            let size = rng.random_range(lo..=hi);
            let crop = CropRect {
                x: rng.random_range(0..=output.width() - size),
                y: rng.random_range(0..=output.height() - size),
                size,
            };
            resize_bilinear(&extract_crops(&image, &[crop])?, r, r)
        })
        .collect::<Result<Vec<_>>>()?;
    let embeds = Embedding::rows(&encoder.encode_images(&Tensor::cat(&crops, 0)?)?)?;
    let (mean, scores) = scores_from_embeddings(&embeds, &text)?;
    Ok(EvalReport {
        mean_clip_score: mean,
        per_patch_scores: scores,
        content_mse: None,
        n_patches: n,
        size_range,
    })
}

/// Perceptual feature MSE between content and output at `layers`.
pub fn content_preservation(
    content: &Image,
    output: &Image,
    extractor: &dyn PerceptualExtractor,
    layers: &[String],
) -> Result<f64> {
    if (content.width(), content.height()) != (output.width(), output.height()) {
        return Err(Error::Dimension(format!(
            "content is {}x{} but output is {}x{}",
            content.width(),
            content.height(),
            output.width(),
            output.height()
        )));
    }
    let dtype = candle_core::DType::F64;
    let device = candle_core::Device::Cpu;
    let c = extractor.extract(&content.to_tensor(dtype, &device)?, layers)?;
    let o = extractor.extract(&output.to_tensor(dtype, &device)?, layers)?;
    Ok(content_loss(&c, &o)?.to_dtype(dtype)?.to_scalar::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{StubEncoder, StubPerceptual, STUB_SEED};
    use crate::rng::{SeedStreams, Stream};
    use candle_core::{DType, Device};

    fn layers() -> Vec<String> {
        vec!["conv4_2".into(), "conv5_2".into()]
    }

    fn textured(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| {
            let v = ((x * 7 + y * 3) % 17) as f32 / 16.0;
            [v, 1.0 - v, (x % 5) as f32 / 4.0]
        })
    }

    #[test]
    fn scores_in_range_and_counted() {
        let enc = StubEncoder::new(STUB_SEED, DType::F32, &Device::Cpu).unwrap();
        let mut rng = SeedStreams::new(0).rng(Stream::Eval);
        let r = patchwise_clip_score(&textured(240, 230), "Fire", &enc, 8, (64, 224), &mut rng).unwrap();
        assert_eq!(r.per_patch_scores.len(), 8);
        assert!((-1.0..=1.0).contains(&r.mean_clip_score));
        let mut rng = SeedStreams::new(0).rng(Stream::Eval);
        let again = patchwise_clip_score(&textured(240, 230), "Fire", &enc, 8, (64, 224), &mut rng).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn too_small_for_largest_crop() {
        let enc = StubEncoder::new(STUB_SEED, DType::F32, &Device::Cpu).unwrap();
        let mut rng = SeedStreams::new(0).rng(Stream::Eval);
        let err = patchwise_clip_score(&textured(100, 300), "Fire", &enc, 4, (64, 224), &mut rng);
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    #[test]
    fn identical_embedding_scores_one() {
        let t = Embedding::new(vec![0.6, 0.8, 0.0]);
        let (mean, s) = scores_from_embeddings(&[t.clone(), Embedding::new(vec![0.0, 0.0, 1.0])], &t).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-12);
        assert!(s[1].abs() < 1e-12);
        assert!((mean - 0.5).abs() < 1e-12);
    }

    #[test]
    fn content_preservation_cases() {
        let ext = StubPerceptual::new(STUB_SEED, DType::F64, &Device::Cpu).unwrap();
        let c = textured(32, 32);
        assert_eq!(content_preservation(&c, &c, &ext, &layers()).unwrap(), 0.0);
        let inv = Image::from_fn(32, 32, |x, y| c.pixel(x, y).map(|v| 1.0 - v));
        assert!(content_preservation(&c, &inv, &ext, &layers()).unwrap() > 0.0);
        assert!(content_preservation(&c, &textured(32, 16), &ext, &layers()).is_err());
    }
}
