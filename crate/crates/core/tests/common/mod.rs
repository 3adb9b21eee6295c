#![allow(dead_code)]

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textstyle::encoders::{Backends, FeatureMap};
use textstyle::losses::{content_loss, cosine_distance_rows, patch_loss_tensor, tv_loss};
use textstyle::sampler::{
    extract_crops, resize_bilinear, sample_crops, sample_perspective, warp_perspective, CropRect, Perspective,
};
use textstyle::trainer::TextTargets;
use textstyle::{Image, StylePrompt};

pub fn cpu() -> Device {
    Device::Cpu
}

/// Smooth, seeded test image with values inside (0, 1).
pub fn smooth_image(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases: Vec<f32> = (0..9).map(|_| rng.random_range(0.0..std::f32::consts::TAU)).collect();
    Image::from_fn(width, height, |x, y| {
        let (u, v) = (x as f32 / width as f32, y as f32 / height as f32);
        std::array::from_fn(|c| {
            let p = &phases[3 * c..3 * c + 3];
            0.5 + 0.2 * (5.0 * u + p[0]).sin() + 0.15 * (7.0 * v + p[1]).cos() + 0.1 * (3.0 * (u + v) + p[2]).sin()
        })
    })
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64)
        .unwrap()
        .mean_all()
        .unwrap()
        .to_scalar::<f64>()
        .unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Global,
    Directional,
    Patch,
    Content,
    Tv,
}

impl Term {
    pub const ALL: [Term; 5] = [Term::Global, Term::Directional, Term::Patch, Term::Content, Term::Tv];

    pub fn name(self) -> &'static str {
        match self {
            Term::Global => "global",
            Term::Directional => "directional",
            Term::Patch => "patch",
            Term::Content => "content",
            Term::Tv => "tv",
        }
    }
}

/// Frozen pieces of one objective evaluation, so that the loss is a pure
/// function of the image being differentiated.
pub struct LossFixture {
    pub backends: Backends,
    pub style_t: Tensor,
    pub delta_t: Tensor,
    pub content_embed: Tensor,
    pub content_feats: Vec<FeatureMap>,
    pub crops: Vec<CropRect>,
    pub warps: Vec<Perspective>,
    pub layers: Vec<String>,
    pub tau: f64,
}

impl LossFixture {
    /// f64 stub backends, 16x16 content, four 8x8 warped patches.
    pub fn new(size: usize, seed: u64) -> Self {
        let device = cpu();
        let backends = Backends::stub(DType::F64, &device).unwrap();
        let prompt = StylePrompt::new("Fire").unwrap();
        let templates = vec!["a photo of {}".to_string(), "{}".to_string()];
        let targets = TextTargets::new(backends.encoder.as_ref(), &prompt, &templates).unwrap();
        let content = smooth_image(size, size, seed).to_tensor(DType::F64, &device).unwrap();
        let r = backends.encoder.input_resolution();
        let content_embed = backends
            .encoder
            .encode_images(&resize_bilinear(&content, r, r).unwrap())
            .unwrap();
        let layers = vec!["conv4_2".to_string(), "conv5_2".to_string()];
        let content_feats = backends.extractor.extract(&content, &layers).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FFEE);
        let patch = size / 2;
        let crops = sample_crops(size, size, patch, 4, &mut rng).unwrap();
        let warps = (0..4)
            .map(|_| sample_perspective(patch, patch, 0.5, &mut rng))
            .collect();
        Self {
            style_t: targets.style.to_tensor(DType::F64, &device).unwrap(),
            delta_t: targets.direction.to_tensor(DType::F64, &device).unwrap(),
            backends,
            content_embed,
            content_feats,
            crops,
            warps,
            layers,
            tau: 0.0,
        }
    }

    pub fn loss(&self, term: Term, x: &Tensor) -> textstyle::Result<Tensor> {
        let enc = self.backends.encoder.as_ref();
        let r = enc.input_resolution();
        Ok(match term {
            Term::Global => {
                cosine_distance_rows(&enc.encode_images(&resize_bilinear(x, r, r)?)?, &self.style_t)?.mean_all()?
            }
            Term::Directional => {
                let e = enc.encode_images(&resize_bilinear(x, r, r)?)?;
                cosine_distance_rows(&e.broadcast_sub(&self.content_embed)?, &self.delta_t)?.mean_all()?
            }
            Term::Patch => {
                let patches = warp_perspective(&extract_crops(x, &self.crops)?, &self.warps)?;
                let e = enc.encode_images(&resize_bilinear(&patches, r, r)?)?;
                let per = cosine_distance_rows(&e.broadcast_sub(&self.content_embed)?, &self.delta_t)?;
                patch_loss_tensor(&per, self.tau)?.0
            }
            Term::Content => content_loss(&self.content_feats, &self.backends.extractor.extract(x, &self.layers)?)?,
            Term::Tv => tv_loss(x)?,
        })
    }
}

/// Relative error `|g - fd| / max(|g|, |fd|)` between the autodiff gradient
/// and central finite differences, over `samples` random coordinates.
pub fn gradient_rel_error(
    f: impl Fn(&Tensor) -> textstyle::Result<Tensor>,
    x0: &Tensor,
    samples: usize,
    seed: u64,
) -> f64 {
    let var = Var::from_tensor(x0).unwrap();
    let loss = f(var.as_tensor()).unwrap();
    let grads = loss.backward().unwrap();
    let g: Vec<f64> = grads
        .get(var.as_tensor())
        .expect("loss depends on the image")
        .flatten_all()
        .unwrap()
        .to_vec1()
        .unwrap();
    let base: Vec<f64> = x0.flatten_all().unwrap().to_vec1().unwrap();
    let dims = x0.dims().to_vec();
    let h = 1e-5;
    let eval = |k: usize, delta: f64| {
        let mut v = base.clone();
        v[k] += delta;
        scalar(&f(&Tensor::from_vec(v, dims.as_slice(), x0.device()).unwrap()).unwrap())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut diff, mut norm) = (0.0f64, 0.0f64);
    for _ in 0..samples {
        let k = rng.random_range(0..base.len());
        let fd = (eval(k, h) - eval(k, -h)) / (2.0 * h);
        diff += (g[k] - fd).powi(2);
        norm += g[k].powi(2).max(fd.powi(2));
    }
    if norm == 0.0 {
        0.0
    } else {
        (diff / norm).sqrt()
    }
}

/// Direct Gaussian elimination for the output-to-input homography.
pub fn reference_homography(p: &Perspective) -> [f64; 8] {
    let mut m = [[0.0f64; 9]; 8];
    for i in 0..4 {
        let (x, y) = (p.end[i][0], p.end[i][1]);
        let (u, v) = (p.start[i][0], p.start[i][1]);
        m[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        m[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }
    for col in 0..8 {
        let pivot = (col..8)
            .max_by(|a, b| m[*a][col].abs().total_cmp(&m[*b][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        for row in 0..8 {
            if row != col {
                let factor = m[row][col] / m[col][col];
                let pivot_row = m[col];
                for (cell, p) in m[row].iter_mut().zip(pivot_row).skip(col) {
                    *cell -= factor * p;
                }
            }
        }
    }
    std::array::from_fn(|i| m[i][8] / m[i][i])
}

/// Bilinear sample of a single-channel `w`x`h` grid with zero outside.
pub fn bilinear_zero(img: &[f64], w: usize, h: usize, sx: f64, sy: f64) -> f64 {
    let (x0, y0) = (sx.floor(), sy.floor());
    let (fx, fy) = (sx - x0, sy - y0);
    let at = |x: f64, y: f64| {
        if x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 {
            0.0
        } else {
            img[y as usize * w + x as usize]
        }
    };
    at(x0, y0) * (1.0 - fx) * (1.0 - fy)
        + at(x0 + 1.0, y0) * fx * (1.0 - fy)
        + at(x0, y0 + 1.0) * (1.0 - fx) * fy
        + at(x0 + 1.0, y0 + 1.0) * fx * fy
}
