//! SSIM, RMSE and the Wilcoxon signed-rank test.

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::raster::{gaussian_kernel, to_gray};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const DYNAMIC_RANGE: f64 = 255.0;
/// Largest sample size evaluated by exact enumeration.
pub const WILCOXON_EXACT_MAX: usize = 12;
pub const WILCOXON_MIN_N: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("images differ in size: {0:?} vs {1:?}")]
    SizeMismatch((u32, u32), (u32, u32)),
    #[error("image {0:?} is smaller than the 11x11 SSIM window")]
    TooSmall((u32, u32)),
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("{0} non-zero differences, need at least {WILCOXON_MIN_N}")]
    TooFewDifferences(usize),
}

/// 11×11 Gaussian window (σ 1.5) summing to one.
fn window() -> Vec<f64> {
    let k = gaussian_kernel(SSIM_SIGMA);
    let r = (k.len() - SSIM_WINDOW) / 2;
    let k = &k[r..r + SSIM_WINDOW];
    let s: f64 = k.iter().sum();
    k.iter().map(|v| v / s).collect()
}

/// Separable filtering over the region where the window fits entirely.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of two planes of equal size.
pub fn ssim_planes(a: &[f64], b: &[f64], w: usize, h: usize) -> Result<f64, MetricsError> {
    let dims = (w as u32, h as u32);
    if a.len() != w * h || b.len() != w * h {
        return Err(MetricsError::SizeMismatch(dims, dims));
    }
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricsError::TooSmall(dims));
    }
    let k = window();
    let prod = |f: &dyn Fn(usize) -> f64| (0..w * h).map(f).collect::<Vec<f64>>();
    let mu_a = filter_valid(a, w, h, &k);
    let mu_b = filter_valid(b, w, h, &k);
    let aa = filter_valid(&prod(&|i| a[i] * a[i]), w, h, &k);
    let bb = filter_valid(&prod(&|i| b[i] * b[i]), w, h, &k);
    let ab = filter_valid(&prod(&|i| a[i] * b[i]), w, h, &k);
    let c1 = (K1 * DYNAMIC_RANGE).powi(2);
    let c2 = (K2 * DYNAMIC_RANGE).powi(2);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

fn plane(img: &GrayImage) -> Vec<f64> {
    img.as_raw().iter().map(|&v| f64::from(v)).collect()
}

pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f64, MetricsError> {
    if a.dimensions() != b.dimensions() {
        return Err(MetricsError::SizeMismatch(a.dimensions(), b.dimensions()));
    }
    let (w, h) = a.dimensions();
    ssim_planes(&plane(a), &plane(b), w as usize, h as usize)
}

/// SSIM of the luminance of two colour images.
pub fn ssim_rgb(a: &RgbImage, b: &RgbImage) -> Result<f64, MetricsError> {
    ssim(&to_gray(a), &to_gray(b))
}

/// Root mean squared difference over every sample of two equally sized
/// 8-bit images.
pub fn rmse<P: image::Pixel<Subpixel = u8>>(
    a: &image::ImageBuffer<P, Vec<u8>>,
    b: &image::ImageBuffer<P, Vec<u8>>,
) -> Result<f64, MetricsError> {
    if a.dimensions() != b.dimensions() {
        return Err(MetricsError::SizeMismatch(a.dimensions(), b.dimensions()));
    }
    let (ra, rb) = (a.as_raw(), b.as_raw());
    if ra.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = ra
        .iter()
        .zip(rb)
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum();
    Ok((sum / ra.len() as f64).sqrt())
}

/// SSIM between the bottom band of `a` and the top band of `b` once `b` is
/// aligned by `(dy, dx)`. Band height is `h - round(dy)`, at least 11 rows.
pub fn overlap_ssim(a: &RgbImage, b: &RgbImage, dy: f64, dx: f64) -> Result<f64, MetricsError> {
    if a.dimensions() != b.dimensions() {
        return Err(MetricsError::SizeMismatch(a.dimensions(), b.dimensions()));
    }
    let (w, h) = a.dimensions();
    if h < SSIM_WINDOW as u32 {
        return Err(MetricsError::TooSmall((w, h)));
    }
    let step = dy.round().clamp(0.0, f64::from(h)) as u32;
    let band = (h - step).max(SSIM_WINDOW as u32);
    let shift = dx.round() as i64;
    let (ga, gb) = (to_gray(a), to_gray(b));
    let top = GrayImage::from_fn(w, band, |x, y| *ga.get_pixel(x, h - band + y));
    let bottom = GrayImage::from_fn(w, band, |x, y| {
        let u = (i64::from(x) + shift).rem_euclid(i64::from(w)) as u32;
        *gb.get_pixel(u, y)
    });
    ssim(&top, &bottom)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub p_value: f64,
    /// Non-zero differences used.
    pub n: usize,
    pub exact: bool,
}

/// Ranks of `values` (1-based), ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let avg = (start + 1 + end) as f64 / 2.0;
        for &k in &idx[start..end] {
            ranks[k] = avg;
        }
        start = end;
    }
    ranks
}

/// Two-sided Wilcoxon signed-rank test on paired samples. Zero differences
/// are dropped; `n ≤ 12` uses exact enumeration, larger samples a normal
/// approximation with tie and continuity corrections.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<WilcoxonResult, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n < WILCOXON_MIN_N {
        return Err(MetricsError::TooFewDifferences(n));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let total: f64 = ranks.iter().sum();
    let w_plus: f64 = ranks.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let statistic = w_plus.min(total - w_plus);
    if n <= WILCOXON_EXACT_MAX {
        let tol = 1e-9;
        let mut extreme = 0u64;
        for mask in 0u32..(1 << n) {
            let plus: f64 = (0..n).filter(|&k| mask >> k & 1 == 1).map(|k| ranks[k]).sum();
            if plus.min(total - plus) <= statistic + tol {
                extreme += 1;
            }
        }
        let p_value = (extreme as f64 / f64::from(1u32 << n)).min(1.0);
        return Ok(WilcoxonResult {
            statistic,
            p_value,
            n,
            exact: true,
        });
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut ties = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut k = 0;
    while k < sorted.len() {
        let mut j = k + 1;
        while j < sorted.len() && sorted[j] == sorted[k] {
            j += 1;
        }
        let t = (j - k) as f64;
        ties += t * t * t - t;
        k = j;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
    let z = ((mean - statistic - 0.5).max(0.0)) / var.sqrt();
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let p_value = (2.0 * (1.0 - std_normal.cdf(z))).clamp(f64::MIN_POSITIVE, 1.0);
    Ok(WilcoxonResult {
        statistic,
        p_value,
        n,
        exact: false,
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pair_ssim: Vec<f64>,
    pub mean_ssim: Option<f64>,
    pub rmse_reference: Option<f64>,
    pub ssim_reference: Option<f64>,
    pub wilcoxon: Option<WilcoxonResult>,
}

impl MetricsReport {
    pub fn with_pairs(pair_ssim: Vec<f64>) -> Self {
        let mean_ssim =
            (!pair_ssim.is_empty()).then(|| pair_ssim.iter().sum::<f64>() / pair_ssim.len() as f64);
        Self {
            pair_ssim,
            mean_ssim,
            ..Self::default()
        }
    }
}
