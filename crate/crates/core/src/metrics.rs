//! Reconstruction quality (MSE, PSNR, MS-SSIM) and bandwidth ratio.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{FeatureTensor, ImageBatch};

/// Per-scale exponents for five-scale MS-SSIM, coarsest last.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
/// BT.601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn check_pair<T: Scalar>(a: &ImageBatch<T>, b: &ImageBatch<T>) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("batch sizes differ: {} vs {}", a.len(), b.len())));
    }
    for (x, y) in a.images().iter().zip(b.images()) {
        x.check_same_shape(y)?;
    }
    Ok(())
}

/// Mean squared error over every value of every image.
pub fn mse<T: Scalar>(a: &ImageBatch<T>, b: &ImageBatch<T>) -> Result<T> {
    check_pair(a, b)?;
    let sse: T = a
        .images()
        .iter()
        .zip(b.images())
        .map(|(x, y)| x.data().iter().zip(y.data()).map(|(&p, &q)| (p - q) * (p - q)).sum::<T>())
        .sum();
    Ok(sse / T::from_usize_lossy(a.value_count()))
}

/// `10·log10(max²/mse)`; `+∞` when the MSE is exactly zero.
pub fn psnr_from_mse<T: Scalar>(mse: T, max_val: T) -> T {
    if mse == T::zero() {
        return T::infinity();
    }
    T::lit(10.0) * (max_val * max_val / mse).log10()
}

pub fn psnr<T: Scalar>(a: &ImageBatch<T>, b: &ImageBatch<T>, max_val: T) -> Result<T> {
    if !(max_val > T::zero()) {
        return Err(Error::Argument(format!("max_val must be positive, got {max_val}")));
    }
    Ok(psnr_from_mse(mse(a, b)?, max_val))
}

/// Channel bandwidth ratio: complex channel uses per source value. `K` real
/// payload values occupy `K/2` complex uses, so the ratio is `K / (2·N·3·H·W)`.
pub fn cbr_for(k: usize, n: usize, height: usize, width: usize) -> f64 {
    k as f64 / (2 * n * 3 * height * width) as f64
}

pub fn cbr<T: Scalar>(k: usize, batch: &ImageBatch<T>) -> f64 {
    cbr_for(k, batch.len(), batch.height(), batch.width())
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Number of dyadic scales at which an 11×11 window still fits.
pub fn feasible_scales(height: usize, width: usize) -> usize {
    let (mut h, mut w, mut m) = (height, width, 0);
    while h >= SSIM_WINDOW && w >= SSIM_WINDOW {
        m += 1;
        h /= 2;
        w /= 2;
    }
    m
}

/// Luma plane of a 3-channel image.
pub fn luma<T: Scalar>(img: &FeatureTensor<T>) -> Result<Vec<T>> {
    if img.channels() != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {}", img.channels())));
    }
    let p = img.plane();
    let d = img.data();
    Ok((0..p)
        .map(|i| T::lit(LUMA[0]) * d[i] + T::lit(LUMA[1]) * d[p + i] + T::lit(LUMA[2]) * d[2 * p + i])
        .collect())
}

struct Plane<T> {
    h: usize,
    w: usize,
    v: Vec<T>,
}

impl<T: Scalar> Plane<T> {
    fn downsample(&self) -> Self {
        let (h, w) = (self.h / 2, self.w / 2);
        let q = T::lit(0.25);
        let v = (0..h * w)
            .map(|i| {
                let (y, x) = (2 * (i / w), 2 * (i % w));
                let at = |yy: usize, xx: usize| self.v[yy * self.w + xx];
                q * (at(y, x) + at(y, x + 1) + at(y + 1, x) + at(y + 1, x + 1))
            })
            .collect();
        Self { h, w, v }
    }

    /// Separable valid-mode Gaussian filtering.
    fn filter(&self, taps: &[T]) -> Self {
        let k = taps.len();
        let ow = self.w + 1 - k;
        let oh = self.h + 1 - k;
        let mut tmp = vec![T::zero(); self.h * ow];
        for y in 0..self.h {
            for x in 0..ow {
                let row = &self.v[y * self.w + x..y * self.w + x + k];
                tmp[y * ow + x] = row.iter().zip(taps).map(|(&a, &t)| a * t).sum();
            }
        }
        let mut out = vec![T::zero(); oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                out[y * ow + x] = taps.iter().enumerate().map(|(j, &t)| tmp[(y + j) * ow + x] * t).sum();
            }
        }
        Self { h: oh, w: ow, v: out }
    }

    fn product(&self, other: &Self) -> Self {
        Self { h: self.h, w: self.w, v: self.v.iter().zip(&other.v).map(|(&a, &b)| a * b).collect() }
    }
}

/// Mean contrast-structure and mean full SSIM at one scale.
fn ssim_terms<T: Scalar>(x: &Plane<T>, y: &Plane<T>, taps: &[T]) -> (T, T) {
    let c1 = T::lit(K1 * K1);
    let c2 = T::lit(K2 * K2);
    let mx = x.filter(taps);
    let my = y.filter(taps);
    let sxx = x.product(x).filter(taps);
    let syy = y.product(y).filter(taps);
    let sxy = x.product(y).filter(taps);
    let two = T::lit(2.0);
    let n = T::from_usize_lossy(mx.v.len());
    let (mut cs_sum, mut ssim_sum) = (T::zero(), T::zero());
    for i in 0..mx.v.len() {
        let (ux, uy) = (mx.v[i], my.v[i]);
        let vx = sxx.v[i] - ux * ux;
        let vy = syy.v[i] - uy * uy;
        let cov = sxy.v[i] - ux * uy;
        let cs = (two * cov + c2) / (vx + vy + c2);
        let l = (two * ux * uy + c1) / (ux * ux + uy * uy + c1);
        cs_sum += cs;
        ssim_sum += l * cs;
    }
    (cs_sum / n, ssim_sum / n)
}

/// MS-SSIM of one image pair on luma with `scales` dyadic levels. The first
/// `scales` standard weights are used, renormalized to sum to one.
pub fn ms_ssim_pair<T: Scalar>(a: &FeatureTensor<T>, b: &FeatureTensor<T>, scales: usize) -> Result<T> {
    a.check_same_shape(b)?;
    if scales == 0 || scales > MS_SSIM_WEIGHTS.len() {
        return Err(Error::Argument(format!("scale count must be in 1..=5, got {scales}")));
    }
    let available = feasible_scales(a.height(), a.width());
    if scales > available {
        return Err(Error::Argument(format!(
            "{}x{} images support at most {available} MS-SSIM scales, {scales} requested",
            a.height(),
            a.width()
        )));
    }
    let wsum: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let taps: Vec<T> = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA).into_iter().map(T::lit).collect();
    let mut x = Plane { h: a.height(), w: a.width(), v: luma(a)? };
    let mut y = Plane { h: b.height(), w: b.width(), v: luma(b)? };
    let mut acc = T::one();
    for (j, &w) in MS_SSIM_WEIGHTS[..scales].iter().enumerate() {
        let (cs, ssim) = ssim_terms(&x, &y, &taps);
        let term = if j + 1 == scales { ssim } else { cs };
        acc *= term.max(T::zero()).powf(T::lit(w / wsum));
        if j + 1 < scales {
            x = x.downsample();
            y = y.downsample();
        }
    }
    Ok(acc.max(T::zero()).min(T::one()))
}

/// Batch MS-SSIM with an explicit number of scales, averaged over pairs.
pub fn ms_ssim_with_scales<T: Scalar>(a: &ImageBatch<T>, b: &ImageBatch<T>, scales: usize) -> Result<T> {
    check_pair(a, b)?;
    let vals: Vec<T> = a
        .images()
        .par_iter()
        .zip(b.images().par_iter())
        .map(|(x, y)| ms_ssim_pair(x, y, scales))
        .collect::<Result<_>>()?;
    Ok(vals.iter().copied().sum::<T>() / T::from_usize_lossy(vals.len()))
}

/// Standard five-scale MS-SSIM. Errors when the images are too small.
pub fn ms_ssim<T: Scalar>(a: &ImageBatch<T>, b: &ImageBatch<T>) -> Result<T> {
    ms_ssim_with_scales(a, b, MS_SSIM_WEIGHTS.len())
}

/// MS-SSIM using as many scales as the image size allows (at most five).
pub fn ms_ssim_auto<T: Scalar>(a: &ImageBatch<T>, b: &ImageBatch<T>) -> Result<T> {
    let m = feasible_scales(a.height(), a.width()).min(MS_SSIM_WEIGHTS.len());
    ms_ssim_with_scales(a, b, m)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QualityReport {
    pub mse: f64,
    /// Computed with peak value 1.0; `+∞` for a perfect reconstruction.
    pub psnr: f64,
    pub ms_ssim: f64,
    pub cbr: f64,
}

impl QualityReport {
    pub fn evaluate<T: Scalar>(reference: &ImageBatch<T>, recon: &ImageBatch<T>, transmitted: usize) -> Result<Self> {
        let m = mse(reference, recon)?.to_f64_lossy();
        Ok(Self {
            mse: m,
            psnr: psnr_from_mse(m, 1.0),
            ms_ssim: ms_ssim_auto(reference, recon)?.to_f64_lossy(),
            cbr: cbr(transmitted, reference),
        })
    }
}
