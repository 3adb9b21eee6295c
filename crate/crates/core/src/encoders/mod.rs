//! Joint text–image embedding backends and perceptual feature extractors.
//!
//! Two families sit behind the same traits: pre-trained networks loaded from
//! weight files, and small seeded stand-ins that run offline and are smooth
//! enough for finite-difference gradient checks.

#[cfg(feature = "pretrained")]
mod pretrained;
mod stub;
pub mod vgg;

use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};
use crate::image::Image;

#[cfg(feature = "pretrained")]
pub use pretrained::ClipEncoder;
pub use stub::{StubEncoder, StubPerceptual, STUB_HIDDEN, STUB_SEED};
pub use vgg::VggFeatures;

/// Width of the joint embedding space.
pub const EMBED_DIM: usize = 512;
/// Side length the image encoders accept.
pub const INPUT_RESOLUTION: usize = 224;
/// Environment variable naming the directory with pre-trained weights.
pub const WEIGHTS_ENV: &str = "TEXTSTYLE_WEIGHTS";
pub const CLIP_WEIGHTS_FILE: &str = "clip-vit-base-patch32.safetensors";
pub const CLIP_TOKENIZER_FILE: &str = "clip-tokenizer.json";
pub const VGG_WEIGHTS_FILE: &str = "vgg19.safetensors";

const NORM_EPS: f64 = 1e-12;

/// A vector in the joint embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn normalized(&self) -> Embedding {
        let n = self.norm().max(NORM_EPS);
        Embedding(self.0.iter().map(|v| v / n).collect())
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        self.dot(other) / (self.norm() * other.norm()).max(NORM_EPS)
    }

    pub fn sub(&self, other: &Embedding) -> Embedding {
        Embedding(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, s: f64) -> Embedding {
        Embedding(self.0.iter().map(|v| v * s).collect())
    }

    /// `(1, D)` tensor.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        Ok(Tensor::from_slice(&self.0, (1, self.0.len()), device)?.to_dtype(dtype)?)
    }

    /// Reads every row of an `(N, D)` tensor.
    pub fn rows(t: &Tensor) -> Result<Vec<Embedding>> {
        let rows: Vec<Vec<f64>> = t.to_dtype(DType::F64)?.to_vec2()?;
        Ok(rows.into_iter().map(Embedding).collect())
    }
}

/// Text and image encoders sharing one embedding space.
pub trait TextImageEncoder: Send + Sync {
    fn name(&self) -> String;
    fn input_resolution(&self) -> usize;
    fn embed_dim(&self) -> usize;
    fn dtype(&self) -> DType;
    fn device(&self) -> &Device;
    /// Unit-norm text embedding.
    fn encode_text(&self, text: &str) -> Result<Embedding>;
    /// `(N, 3, R, R)` images in `[0, 1]` to `(N, D)` unit-norm rows. Stays on
    /// the autodiff graph.
    fn encode_images(&self, images: &Tensor) -> Result<Tensor>;
}

#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub layer_name: String,
    /// `(B, C, H', W')`
    pub tensor: Tensor,
}

/// Perceptual feature extractor used by the content-preservation term.
pub trait PerceptualExtractor: Send + Sync {
    fn name(&self) -> String;
    fn supported_layers(&self) -> Vec<String>;
    /// Differentiable features of `(B, 3, H, W)` images in `[0, 1]`.
    fn extract(&self, images: &Tensor, layers: &[String]) -> Result<Vec<FeatureMap>>;
}

pub fn encode_text(backend: &dyn TextImageEncoder, text: &str) -> Result<Embedding> {
    if text.trim().is_empty() {
        return Err(Error::invalid("cannot encode empty text"));
    }
    backend.encode_text(text)
}

/// Encodes one image already resized to the backend's input resolution.
pub fn encode_image(backend: &dyn TextImageEncoder, image: &Image) -> Result<Embedding> {
    let r = backend.input_resolution();
    if image.width() != r || image.height() != r {
        return Err(Error::Dimension(format!(
            "encoder expects {r}x{r} input, got {}x{}",
            image.width(),
            image.height()
        )));
    }
    let t = image.to_tensor(backend.dtype(), backend.device())?;
    let e = backend.encode_images(&t)?;
    Ok(Embedding::rows(&e)?.remove(0))
}

/// Mean of the template-filled text embeddings, renormalized.
pub fn embed_prompt_ensemble(backend: &dyn TextImageEncoder, text: &str, templates: &[String]) -> Result<Embedding> {
    if templates.is_empty() {
        return Err(Error::invalid("prompt ensemble needs at least one template"));
    }
    let mut sum = vec![0.0; backend.embed_dim()];
    for template in templates {
        if !template.contains("{}") {
            return Err(Error::invalid(format!(
                "template `{template}` lacks a `{{}}` placeholder"
            )));
        }
        let e = encode_text(backend, &template.replacen("{}", text, 1))?;
        for (s, v) in sum.iter_mut().zip(e.as_slice()) {
            *s += v;
        }
    }
    let n = templates.len() as f64;
    Ok(Embedding::new(sum.into_iter().map(|v| v / n).collect()).normalized())
}

pub fn content_features(
    extractor: &dyn PerceptualExtractor,
    image: &Image,
    layers: &[String],
    dtype: DType,
    device: &Device,
) -> Result<Vec<FeatureMap>> {
    extractor.extract(&image.to_tensor(dtype, device)?, layers)
}

/// Divides each row of an `(N, D)` tensor by its L2 norm.
pub fn normalize_rows(t: &Tensor) -> Result<Tensor> {
    let norm = (t.sqr()?.sum_keepdim(1)? + NORM_EPS)?.sqrt()?;
    Ok(t.broadcast_div(&norm)?)
}

const PIXEL_MEAN: [f64; 3] = [0.481_454_66, 0.457_827_5, 0.408_210_73];
const PIXEL_STD: [f64; 3] = [0.268_629_54, 0.261_302_58, 0.275_777_11];

/// Per-channel standardization applied to encoder input in `[0, 1]`.
pub(crate) fn standardize_pixels(images: &Tensor) -> Result<Tensor> {
    let (dtype, device) = (images.dtype(), images.device());
    let mean = Tensor::new(&PIXEL_MEAN, device)?
        .to_dtype(dtype)?
        .reshape((1, 3, 1, 1))?;
    let std = Tensor::new(&PIXEL_STD, device)?
        .to_dtype(dtype)?
        .reshape((1, 3, 1, 1))?;
    Ok(images.broadcast_sub(&mean)?.broadcast_div(&std)?)
}

pub(crate) fn check_resolution(images: &Tensor, r: usize) -> Result<()> {
    let (_, c, h, w) = images.dims4()?;
    if c != 3 || h != r || w != r {
        return Err(Error::Dimension(format!(
            "encoder expects (N, 3, {r}, {r}) input, got {:?}",
            images.dims()
        )));
    }
    Ok(())
}

/// Pre-trained VGG-19 features (`conv4_2`, `conv5_2`, ...).
pub struct VggExtractor {
    trunk: VggFeatures,
}

impl VggExtractor {
    pub fn load(path: impl AsRef<Path>, dtype: DType, device: &Device) -> Result<Self> {
        Ok(Self {
            trunk: VggFeatures::load(path, "conv5_4", dtype, device)?,
        })
    }
}

impl PerceptualExtractor for VggExtractor {
    fn name(&self) -> String {
        "vgg19".into()
    }

    fn supported_layers(&self) -> Vec<String> {
        self.trunk.layer_names()
    }

    fn extract(&self, images: &Tensor, layers: &[String]) -> Result<Vec<FeatureMap>> {
        let taps = self.trunk.taps(images, layers)?;
        Ok(layers
            .iter()
            .cloned()
            .zip(taps)
            .map(|(layer_name, tensor)| FeatureMap { layer_name, tensor })
            .collect())
    }
}

/// Which encoder family to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Real,
    Stub,
}

/// A text–image encoder paired with a perceptual extractor.
pub struct Backends {
    pub kind: BackendKind,
    pub encoder: Box<dyn TextImageEncoder>,
    pub extractor: Box<dyn PerceptualExtractor>,
    /// Location of pre-trained VGG weights (real backend only), reused by
    /// fast-transfer training for its frozen encoder.
    pub vgg_weights: Option<PathBuf>,
}

impl Backends {
    /// Seeded stand-ins; runs anywhere without weight files.
    pub fn stub(dtype: DType, device: &Device) -> Result<Self> {
        Ok(Self {
            kind: BackendKind::Stub,
            encoder: Box::new(StubEncoder::new(stub::STUB_SEED, dtype, device)?),
            extractor: Box::new(StubPerceptual::new(stub::STUB_SEED, dtype, device)?),
            vgg_weights: None,
        })
    }

    /// Pre-trained backends from `weights_dir`, or from `$TEXTSTYLE_WEIGHTS`.
    pub fn real(weights_dir: Option<&Path>, device: &Device) -> Result<Self> {
        let dir = match weights_dir {
            Some(d) => d.to_path_buf(),
            None => std::env::var_os(WEIGHTS_ENV).map(PathBuf::from).ok_or_else(|| {
                Error::BackendUnavailable(format!("no weights directory given and ${WEIGHTS_ENV} is not set"))
            })?,
        };
        let vgg_path = dir.join(VGG_WEIGHTS_FILE);
        let encoder = load_clip(&dir, device)?;
        let extractor = VggExtractor::load(&vgg_path, DType::F32, device)?;
        Ok(Self {
            kind: BackendKind::Real,
            encoder,
            extractor: Box::new(extractor),
            vgg_weights: Some(vgg_path),
        })
    }

    pub fn identity(&self) -> String {
        format!("{}+{}", self.encoder.name(), self.extractor.name())
    }
}

#[cfg(feature = "pretrained")]
fn load_clip(dir: &Path, device: &Device) -> Result<Box<dyn TextImageEncoder>> {
    Ok(Box::new(ClipEncoder::load(
        dir.join(CLIP_WEIGHTS_FILE),
        dir.join(CLIP_TOKENIZER_FILE),
        device,
    )?))
}

#[cfg(not(feature = "pretrained"))]
fn load_clip(_dir: &Path, _device: &Device) -> Result<Box<dyn TextImageEncoder>> {
    Err(Error::BackendUnavailable(
        "this build was compiled without the `pretrained` feature".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_math() {
        let a = Embedding::new(vec![3.0, 4.0]);
        assert_eq!(a.norm(), 5.0);
        assert!((a.normalized().norm() - 1.0).abs() < 1e-12);
        let b = Embedding::new(vec![-4.0, 3.0]);
        assert_eq!(a.cosine(&b), 0.0);
    }

    #[test]
    fn real_backend_without_weights_is_a_distinct_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = Backends::real(Some(dir.path()), &Device::Cpu).err().unwrap();
        assert!(matches!(err, Error::BackendUnavailable(_)), "{err}");
        assert!(err.to_string().contains("--backend stub"));
    }
}
