//! Patch cropping, random perspective augmentation and resizing.
//!
//! Every operation on tensors here is a fixed linear map of its input
//! (crop = slice, warp = gather with bilinear weights, resize = two
//! matrix products), so gradients flow from encoder inputs back to the
//! style network output. Only the sampling geometry is random, and it is
//! drawn from the injected RNG.

use candle_core::{DType, Device, Tensor};
use nalgebra::{SMatrix, SVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::image::Image;

/// Square source rectangle of a crop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropRect {
    pub x: usize,
    pub y: usize,
    pub size: usize,
}

/// Four corner correspondences (top-left, top-right, bottom-right,
/// bottom-left) of a projective warp, in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perspective {
    pub start: [[f64; 2]; 4],
    pub end: [[f64; 2]; 4],
}

impl Perspective {
    pub fn identity(width: usize, height: usize) -> Self {
        let corners = corners(width, height);
        Self {
            start: corners,
            end: corners,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.start == self.end
    }

    /// Largest corner displacement along x and along y.
    pub fn max_displacement(&self) -> (f64, f64) {
        self.start.iter().zip(&self.end).fold((0.0, 0.0), |(mx, my), (s, e)| {
            (mx.max((s[0] - e[0]).abs()), my.max((s[1] - e[1]).abs()))
        })
    }

    /// Coefficients `(a, b, c, d, e, f, g, h)` of the map taking output
    /// coordinates to input coordinates:
    /// `x' = (a x + b y + c) / (g x + h y + 1)`, `y' = (d x + e y + f) / (g x + h y + 1)`.
    pub fn coefficients(&self) -> Result<[f64; 8]> {
        let mut a = SMatrix::<f64, 8, 8>::zeros();
        let mut b = SVector::<f64, 8>::zeros();
        for (i, (p, q)) in self.end.iter().zip(&self.start).enumerate() {
            let row = [p[0], p[1], 1.0, 0.0, 0.0, 0.0, -q[0] * p[0], -q[0] * p[1]];
            let row2 = [0.0, 0.0, 0.0, p[0], p[1], 1.0, -q[1] * p[0], -q[1] * p[1]];
            for k in 0..8 {
                a[(2 * i, k)] = row[k];
                a[(2 * i + 1, k)] = row2[k];
            }
            b[2 * i] = q[0];
            b[2 * i + 1] = q[1];
        }
        let sol = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::invalid("degenerate perspective corners"))?;
        Ok(std::array::from_fn(|i| sol[i]))
    }
}

fn corners(width: usize, height: usize) -> [[f64; 2]; 4] {
    let (w, h) = ((width - 1) as f64, (height - 1) as f64);
    [[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]]
}

/// Cropped (and possibly augmented / resized) patches with their geometry.
#[derive(Debug, Clone)]
pub struct PatchBatch {
    /// `(N, 3, S, S)`
    pub patches: Tensor,
    pub crops: Vec<CropRect>,
    pub aug_params: Vec<Perspective>,
}

impl PatchBatch {
    pub fn len(&self) -> usize {
        self.crops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.crops.is_empty()
    }
}

/// `n` uniformly placed `size`x`size` rectangles inside a `width`x`height` image.
pub fn sample_crops<R: Rng + ?Sized>(
    width: usize,
    height: usize,
    size: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<CropRect>> {
    if size == 0 || size > width.min(height) {
        return Err(Error::Dimension(format!(
            "patch size {size} does not fit in a {width}x{height} image"
        )));
    }
    if n == 0 {
        return Err(Error::invalid("need at least one patch"));
    }
    Ok((0..n)
        .map(|_| CropRect {
            x: rng.random_range(0..=width - size),
            y: rng.random_range(0..=height - size),
            size,
        })
        .collect())
}

/// Crops `n` random `patch_size` squares from a `(1, 3, H, W)` tensor.
pub fn crop_patches<R: Rng + ?Sized>(image: &Tensor, patch_size: usize, n: usize, rng: &mut R) -> Result<PatchBatch> {
    let (b, _, h, w) = image.dims4()?;
    if b != 1 {
        return Err(Error::Dimension(format!("expected a single image, got batch of {b}")));
    }
    let crops = sample_crops(w, h, patch_size, n, rng)?;
    let patches = extract_crops(image, &crops)?;
    Ok(PatchBatch {
        patches,
        aug_params: vec![Perspective::identity(patch_size, patch_size); crops.len()],
        crops,
    })
}

pub fn extract_crops(image: &Tensor, crops: &[CropRect]) -> Result<Tensor> {
    let parts = crops
        .iter()
        .map(|c| Ok(image.narrow(2, c.y, c.size)?.narrow(3, c.x, c.size)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::cat(&parts, 0)?)
}

/// Random corner displacements: each corner moves inward by an integer
/// amount up to `distortion_scale` times the half extent.
pub fn sample_perspective<R: Rng + ?Sized>(
    width: usize,
    height: usize,
    distortion_scale: f64,
    rng: &mut R,
) -> Perspective {
    let dx = (distortion_scale * (width / 2) as f64).floor() as i64;
    let dy = (distortion_scale * (height / 2) as f64).floor() as i64;
    let (w, h) = (width as i64, height as i64);
    let mut pick = |lo: i64, hi: i64| rng.random_range(lo..hi) as f64;
    let top_left = [pick(0, dx + 1), pick(0, dy + 1)];
    let top_right = [pick(w - dx - 1, w), pick(0, dy + 1)];
    let bottom_right = [pick(w - dx - 1, w), pick(h - dy - 1, h)];
    let bottom_left = [pick(0, dx + 1), pick(h - dy - 1, h)];
    Perspective {
        start: corners(width, height),
        end: [top_left, top_right, bottom_right, bottom_left],
    }
}

/// Applies per-patch projective warps to `(N, C, H, W)` patches with
/// bilinear sampling; samples falling outside the source read as 0.
pub fn warp_perspective(patches: &Tensor, params: &[Perspective]) -> Result<Tensor> {
    let (n, c, h, w) = patches.dims4()?;
    if params.len() != n {
        return Err(Error::Dimension(format!(
            "{} warp parameter sets for {n} patches",
            params.len()
        )));
    }
    if params.iter().all(Perspective::is_identity) {
        return Ok(patches.clone());
    }
    let hw = h * w;
    let mut idx: [Vec<u32>; 4] = Default::default();
    let mut wts: [Vec<f64>; 4] = Default::default();
    for (p, param) in params.iter().enumerate() {
        let base = p * hw;
        if param.is_identity() {
            for k in 0..hw {
                idx[0].push((base + k) as u32);
                wts[0].push(1.0);
                for corner in 1..4 {
                    idx[corner].push(base as u32);
                    wts[corner].push(0.0);
                }
            }
            continue;
        }
        let [a, b, cc, d, e, f, g, hh] = param.coefficients()?;
        for y in 0..h {
            for x in 0..w {
                let (u, v) = (x as f64 + 0.5, y as f64 + 0.5);
                let den = g * u + hh * v + 1.0;
                let sx = (a * u + b * v + cc) / den - 0.5;
                let sy = (d * u + e * v + f) / den - 0.5;
                let (x0, y0) = (sx.floor(), sy.floor());
                let (fx, fy) = (sx - x0, sy - y0);
                let taps = [
                    (x0, y0, (1.0 - fx) * (1.0 - fy)),
                    (x0 + 1.0, y0, fx * (1.0 - fy)),
                    (x0, y0 + 1.0, (1.0 - fx) * fy),
                    (x0 + 1.0, y0 + 1.0, fx * fy),
                ];
                for (corner, (tx, ty, wt)) in taps.into_iter().enumerate() {
                    let inside = tx >= 0.0 && ty >= 0.0 && tx <= (w - 1) as f64 && ty <= (h - 1) as f64;
                    if inside && den.is_finite() {
                        idx[corner].push((base + ty as usize * w + tx as usize) as u32);
                        wts[corner].push(wt);
                    } else {
                        idx[corner].push(base as u32);
                        wts[corner].push(0.0);
                    }
                }
            }
        }
    }
    let device = patches.device();
    let dtype = patches.dtype();
    // (N, C, H*W) -> (C, N*H*W) so one gather per corner covers the batch.
    let flat = patches.reshape((n, c, hw))?.transpose(0, 1)?.reshape((c, n * hw))?;
    let mut out: Option<Tensor> = None;
    for corner in 0..4 {
        let index = Tensor::from_slice(&idx[corner], n * hw, device)?;
        let weight = Tensor::from_slice(&wts[corner], (1, n * hw), device)?.to_dtype(dtype)?;
        let term = flat.index_select(&index, 1)?.broadcast_mul(&weight)?;
        out = Some(match out {
            Some(acc) => (acc + term)?,
            None => term,
        });
    }
    let out = out.expect("four corners");
    Ok(out.reshape((c, n, h, w))?.transpose(0, 1)?.contiguous()?)
}

/// Warps every patch of `batch` with a freshly drawn perspective.
/// `distortion_scale == 0` returns the batch unchanged.
pub fn augment_batch<R: Rng + ?Sized>(batch: PatchBatch, distortion_scale: f64, rng: &mut R) -> Result<PatchBatch> {
    if distortion_scale == 0.0 {
        return Ok(batch);
    }
    let (_, _, h, w) = batch.patches.dims4()?;
    let params: Vec<Perspective> = (0..batch.len())
        .map(|_| sample_perspective(w, h, distortion_scale, rng))
        .collect();
    let patches = warp_perspective(&batch.patches, &params)?;
    Ok(PatchBatch {
        patches,
        crops: batch.crops,
        aug_params: params,
    })
}

/// Image-level perspective augmentation.
pub fn perspective_augment<R: Rng + ?Sized>(patch: &Image, distortion_scale: f64, rng: &mut R) -> Result<Image> {
    if !(0.0..=1.0).contains(&distortion_scale) {
        return Err(Error::invalid(format!(
            "distortion scale must lie in [0, 1], got {distortion_scale}"
        )));
    }
    if distortion_scale == 0.0 {
        return Ok(patch.clone());
    }
    let params = sample_perspective(patch.width(), patch.height(), distortion_scale, rng);
    let t = patch.to_tensor(DType::F64, &Device::Cpu)?;
    Image::from_tensor(&warp_perspective(&t, &[params])?)
}

/// Row-stochastic `(out_len, in_len)` resampling matrix: a triangle
/// (bilinear) filter on pixel centres, widened when shrinking so every
/// input pixel contributes.
pub fn resize_weights(in_len: usize, out_len: usize) -> Vec<f64> {
    let scale = in_len as f64 / out_len as f64;
    let support = scale.max(1.0);
    let mut m = vec![0.0; out_len * in_len];
    for i in 0..out_len {
        let center = (i as f64 + 0.5) * scale;
        let lo = ((center - support).floor().max(0.0)) as usize;
        let hi = ((center + support).ceil() as usize).min(in_len);
        let row = &mut m[i * in_len..(i + 1) * in_len];
        let mut total = 0.0;
        for (j, cell) in row.iter_mut().enumerate().take(hi).skip(lo) {
            let wt = (1.0 - ((j as f64 + 0.5 - center) / support).abs()).max(0.0);
            *cell = wt;
            total += wt;
        }
        if total > 0.0 {
            row.iter_mut().for_each(|v| *v /= total);
        } else {
            row[center.floor().min((in_len - 1) as f64) as usize] = 1.0;
        }
    }
    m
}

/// Bilinear resize of `(N, C, H, W)` to `(N, C, out_h, out_w)`.
/// Weights are non-negative and rows sum to one, so `[0, 1]` inputs stay in
/// `[0, 1]`.
pub fn resize_bilinear(t: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (_, _, h, w) = t.dims4()?;
    if h == out_h && w == out_w {
        return Ok(t.clone());
    }
    let device = t.device();
    let dtype = t.dtype();
    let rows = Tensor::from_vec(resize_weights(h, out_h), (out_h, h), device)?.to_dtype(dtype)?;
    let cols = Tensor::from_vec(resize_weights(w, out_w), (out_w, w), device)?
        .to_dtype(dtype)?
        .t()?
        .contiguous()?;
    let y = rows.broadcast_matmul(&t.contiguous()?)?;
    Ok(y.broadcast_matmul(&cols)?)
}

pub fn resize_image(image: &Image, width: usize, height: usize) -> Result<Image> {
    let t = image.to_tensor(DType::F64, &Device::Cpu)?;
    Image::from_tensor(&resize_bilinear(&t, height, width)?)
}

/// Resizes every patch to `resolution`x`resolution` for the encoder.
pub fn prepare_encoder_batch(batch: PatchBatch, resolution: usize) -> Result<PatchBatch> {
    let patches = resize_bilinear(&batch.patches, resolution, resolution)?;
    Ok(PatchBatch { patches, ..batch })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeedStreams, Stream};

    fn dev() -> Device {
        Device::Cpu
    }

    #[test]
    fn full_size_crop_is_whole_image() {
        let mut rng = SeedStreams::new(0).rng(Stream::Crop);
        let img = Tensor::rand(0f32, 1f32, (1, 3, 128, 128), &dev()).unwrap();
        let batch = crop_patches(&img, 128, 4, &mut rng).unwrap();
        assert!(batch.crops.iter().all(|c| *c == CropRect { x: 0, y: 0, size: 128 }));
        for i in 0..4 {
            let diff = (batch.patches.get(i).unwrap() - img.get(0).unwrap())
                .unwrap()
                .abs()
                .unwrap();
            assert_eq!(diff.max_all().unwrap().to_scalar::<f32>().unwrap(), 0.0);
        }
    }

    #[test]
    fn crops_in_bounds_and_seeded() {
        let a = sample_crops(512, 512, 128, 64, &mut SeedStreams::new(3).rng(Stream::Crop)).unwrap();
        let b = sample_crops(512, 512, 128, 64, &mut SeedStreams::new(3).rng(Stream::Crop)).unwrap();
        assert_eq!(a.len(), 64);
        assert_eq!(a, b);
        assert!(a.iter().all(|c| c.x + c.size <= 512 && c.y + c.size <= 512));
        assert!(sample_crops(100, 512, 128, 1, &mut SeedStreams::new(3).rng(Stream::Crop)).is_err());
    }

    #[test]
    fn zero_distortion_is_identity() {
        let img = Image::from_fn(32, 32, |x, y| [x as f32 / 31.0, y as f32 / 31.0, 0.5]);
        let mut rng = SeedStreams::new(0).rng(Stream::Augment);
        assert_eq!(perspective_augment(&img, 0.0, &mut rng).unwrap(), img);
        // sampled parameters at scale 0 are also the identity
        assert!(sample_perspective(32, 32, 0.0, &mut rng).is_identity());
    }

    #[test]
    fn displacement_bounded_by_half_extent() {
        let mut rng = SeedStreams::new(9).rng(Stream::Augment);
        for _ in 0..200 {
            let p = sample_perspective(128, 96, 0.5, &mut rng);
            let (mx, my) = p.max_displacement();
            assert!(mx <= 0.5 * 64.0 && my <= 0.5 * 48.0, "{mx} {my}");
        }
    }

    #[test]
    fn coefficients_map_end_corners_to_start_corners() {
        let mut rng = SeedStreams::new(2).rng(Stream::Augment);
        let p = sample_perspective(64, 64, 0.5, &mut rng);
        let [a, b, c, d, e, f, g, h] = p.coefficients().unwrap();
        for (end, start) in p.end.iter().zip(&p.start) {
            let den = g * end[0] + h * end[1] + 1.0;
            assert!(((a * end[0] + b * end[1] + c) / den - start[0]).abs() < 1e-9);
            assert!(((d * end[0] + e * end[1] + f) / den - start[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn zeros_stay_zero() {
        let img = Tensor::zeros((4, 3, 40, 40), DType::F32, &dev()).unwrap();
        let mut rng = SeedStreams::new(1).rng(Stream::Crop);
        let batch = crop_patches(&img.get(0).unwrap().unsqueeze(0).unwrap(), 16, 4, &mut rng).unwrap();
        let batch = augment_batch(batch, 0.5, &mut rng).unwrap();
        assert_eq!(
            batch
                .patches
                .abs()
                .unwrap()
                .max_all()
                .unwrap()
                .to_scalar::<f32>()
                .unwrap(),
            0.0
        );
    }

    #[test]
    fn resize_identity_and_constant() {
        let t = Tensor::rand(0f64, 1f64, (1, 3, 224, 224), &dev()).unwrap();
        let same = resize_bilinear(&t, 224, 224).unwrap();
        assert_eq!(
            (same - &t)
                .unwrap()
                .abs()
                .unwrap()
                .max_all()
                .unwrap()
                .to_scalar::<f64>()
                .unwrap(),
            0.0
        );
        let c = (Tensor::ones((2, 3, 128, 128), DType::F64, &dev()).unwrap() * 0.37).unwrap();
        let up = resize_bilinear(&c, 224, 224).unwrap();
        let err = (up - 0.37)
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        assert!(err < 1e-12);
    }

    #[test]
    fn resize_rows_are_stochastic() {
        for (i, o) in [(128, 224), (512, 224), (7, 3), (3, 7)] {
            let m = resize_weights(i, o);
            for r in 0..o {
                let row = &m[r * i..(r + 1) * i];
                assert!(row.iter().all(|v| *v >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
