//! Difference-of-Gaussians blobs with a gradient-weighted patch descriptor.
//!
//! A lightweight stand-in for SIFT-class detectors: one DoG layer per octave,
//! spatial extrema only, upright descriptors (unfolded frames do not rotate).

use image::GrayImage;

use super::{check_size, Descriptor, FeatureError, Keypoint};
use crate::config::FeatureConfig;
use crate::raster::{downsample2, gaussian_blur, Raster};

const OCTAVES: u32 = 3;
const SIGMA_FINE: f64 = 1.6;
const SIGMA_COARSE: f64 = 2.26;
/// Principal-curvature ratio bound for rejecting edge responses.
const EDGE_RATIO: f64 = 10.0;
const GRID: usize = 8;
/// Descriptor grid spacing in octave pixels.
const GRID_STEP: f64 = 1.5;
const BORDER: u32 = 8;

fn descriptor(smooth: &Raster<f32>, x: f64, y: f64) -> Option<Box<[f32; 64]>> {
    let half = (GRID as f64 - 1.0) / 2.0;
    let mut intensity = [0.0f64; 64];
    let mut grad = [0.0f64; 64];
    for gy in 0..GRID {
        for gx in 0..GRID {
            let sx = x + (gx as f64 - half) * GRID_STEP;
            let sy = y + (gy as f64 - half) * GRID_STEP;
            let k = gy * GRID + gx;
            intensity[k] = smooth.sample(sx, sy);
            let ix = smooth.sample(sx + 1.0, sy) - smooth.sample(sx - 1.0, sy);
            let iy = smooth.sample(sx, sy + 1.0) - smooth.sample(sx, sy - 1.0);
            grad[k] = 0.5 * ix.hypot(iy);
        }
    }
    let mean_i = intensity.iter().sum::<f64>() / 64.0;
    let mean_g = grad.iter().sum::<f64>() / 64.0;
    if mean_g <= 1e-9 {
        return None;
    }
    let values: Vec<f64> = intensity
        .iter()
        .zip(&grad)
        .map(|(i, g)| (i - mean_i) * (g / mean_g))
        .collect();
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 1e-9 {
        return None;
    }
    let mut out = Box::new([0.0f32; 64]);
    for (o, v) in out.iter_mut().zip(&values) {
        *o = (v / norm) as f32;
    }
    Some(out)
}

/// Parabolic peak offset from three samples, clamped to half a pixel.
fn parabola(m: f64, c: f64, p: f64) -> f64 {
    let denom = m - 2.0 * c + p;
    if denom.abs() < 1e-12 {
        0.0
    } else {
        (0.5 * (m - p) / denom).clamp(-0.5, 0.5)
    }
}

/// DoG extrema over three octaves (σ 1.6 / 2.26 per octave), refined to
/// subpixel precision; responses below `cfg.dog_contrast` gray levels and
/// edge-like responses are dropped.
pub fn detect_dog(image: &GrayImage, cfg: &FeatureConfig) -> Result<Vec<Keypoint>, FeatureError> {
    let (w, h) = image.dimensions();
    check_size(w, h)?;
    let mut base = Raster::from_gray(image);
    let mut found: Vec<Keypoint> = Vec::new();
    for octave in 0..OCTAVES {
        if octave > 0 {
            base = downsample2(&base);
        }
        let (ow, oh) = base.dimensions();
        if ow <= 2 * BORDER + 2 || oh <= 2 * BORDER + 2 {
            break;
        }
        let fine = gaussian_blur(&base, SIGMA_FINE);
        let coarse = gaussian_blur(&base, SIGMA_COARSE);
        let dog = Raster::from_fn(ow, oh, |x, y| coarse.get(x, y) - fine.get(x, y));
        let scale = f64::from(1u32 << octave);
        for y in BORDER..oh - BORDER {
            for x in BORDER..ow - BORDER {
                let c = dog.get(x, y);
                if f64::from(c.abs()) < cfg.dog_contrast {
                    continue;
                }
                let mut extremum = true;
                'nbr: for dy in -1i32..=1 {
                    for dx in -1i32..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let n = dog.get((x as i32 + dx) as u32, (y as i32 + dy) as u32);
                        if (c > 0.0 && n >= c) || (c < 0.0 && n <= c) {
                            extremum = false;
                            break 'nbr;
                        }
                    }
                }
                if !extremum {
                    continue;
                }
                let d = |dx: i32, dy: i32| {
                    f64::from(dog.get((x as i32 + dx) as u32, (y as i32 + dy) as u32))
                };
                let dxx = d(1, 0) - 2.0 * d(0, 0) + d(-1, 0);
                let dyy = d(0, 1) - 2.0 * d(0, 0) + d(0, -1);
                let dxy = 0.25 * (d(1, 1) - d(1, -1) - d(-1, 1) + d(-1, -1));
                let det = dxx * dyy - dxy * dxy;
                let tr = dxx + dyy;
                if det <= 0.0 || tr * tr * EDGE_RATIO >= (EDGE_RATIO + 1.0).powi(2) * det {
                    continue;
                }
                let ox = f64::from(x) + parabola(d(-1, 0), d(0, 0), d(1, 0));
                let oy = f64::from(y) + parabola(d(0, -1), d(0, 0), d(0, 1));
                let Some(desc) = descriptor(&fine, ox, oy) else {
                    continue;
                };
                let fx = (ox + 0.5) * scale - 0.5;
                let fy = (oy + 0.5) * scale - 0.5;
                if fx < 0.0 || fy < 0.0 || fx >= f64::from(w) || fy >= f64::from(h) {
                    continue;
                }
                found.push(Keypoint {
                    x: fx,
                    y: fy,
                    response: f64::from(c.abs()),
                    orientation: 0.0,
                    descriptor: Descriptor::Float(desc),
                });
            }
        }
    }
    found.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
    });
    found.truncate(cfg.max_keypoints);
    Ok(found)
}
