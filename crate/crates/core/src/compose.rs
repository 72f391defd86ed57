//! Cylindrical projection, feathered compositing and width adjustment.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dwho::StitchParams;
use crate::raster::{quantize, sample_rgb};

#[derive(Debug, Error, PartialEq)]
pub enum ComposeError {
    #[error("focal length must be positive, got {0}")]
    FocalLength(f64),
    #[error("{params} offset records for {frames} frames (expected frames - 1)")]
    CountMismatch { params: usize, frames: usize },
    #[error("frame {index} is {got:?}, expected {expected:?}")]
    SizeMismatch {
        index: usize,
        got: (u32, u32),
        expected: (u32, u32),
    },
    #[error("nothing to composite")]
    NoFrames,
    #[error("maximum width must be at least 1")]
    ZeroWidth,
}

/// A frame after cylindrical projection, with the pixels that had a source.
#[derive(Debug, Clone, PartialEq)]
pub struct Projected {
    pub image: RgbImage,
    pub valid: Vec<bool>,
}

impl Projected {
    /// Every pixel valid.
    pub fn unmasked(image: RgbImage) -> Self {
        let n = (image.width() * image.height()) as usize;
        Self {
            image,
            valid: vec![true; n],
        }
    }
}

/// Source coordinate sampled for destination `(x, y)`.
pub fn cylindrical_source(x: f64, y: f64, cx: f64, cy: f64, f: f64) -> (f64, f64) {
    let sx = cx + f * ((x - cx) / f).tan();
    let sy = cy + (y - cy) * (sx - cx).hypot(f) / f;
    (sx, sy)
}

/// Inverse cylindrical warp about the image centre `((w-1)/2, (h-1)/2)`.
/// Sources further than half a pixel outside the raster are left black and
/// marked invalid.
pub fn cylindrical_project(image: &RgbImage, focal_length: f64) -> Result<Projected, ComposeError> {
    if !(focal_length > 0.0) || !focal_length.is_finite() {
        return Err(ComposeError::FocalLength(focal_length));
    }
    let (w, h) = image.dimensions();
    let (cx, cy) = ((f64::from(w) - 1.0) / 2.0, (f64::from(h) - 1.0) / 2.0);
    let mut out = RgbImage::new(w, h);
    let mut valid = vec![false; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let angle = (f64::from(x) - cx) / focal_length;
            if angle.abs() >= std::f64::consts::FRAC_PI_2 {
                continue;
            }
            let (sx, sy) = cylindrical_source(f64::from(x), f64::from(y), cx, cy, focal_length);
            let inside = sx >= -0.5
                && sy >= -0.5
                && sx <= f64::from(w) - 0.5
                && sy <= f64::from(h) - 0.5;
            if inside {
                out.put_pixel(x, y, Rgb(sample_rgb(image, sx, sy).map(quantize)));
                valid[(y * w + x) as usize] = true;
            }
        }
    }
    Ok(Projected { image: out, valid })
}

/// Where one frame lands in the panorama.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub frame: u32,
    /// Top row in the panorama.
    pub y: i64,
    /// Columns move left by this amount, modulo the width.
    pub x_shift: i64,
    /// Horizontal compression factor in force when this frame was placed.
    pub compression: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub placements: Vec<Placement>,
    /// Column resampling factor of the width adjustment (1 when unchanged).
    pub width_scale: f64,
    /// Panorama pixels covered by no frame.
    pub uncovered_pixels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panorama {
    pub image: RgbImage,
    /// Number of frames contributing to each pixel.
    pub coverage: Vec<u16>,
    pub provenance: Provenance,
}

impl Panorama {
    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }
}

/// Rounded placements from cumulative offsets. Fractions carry forward
/// because the running sums are rounded, not the steps. Once the running
/// horizontal offset exceeds `horizontal_threshold`, later steps are scaled
/// by `threshold / |offset|`.
pub fn placements(frame_ids: &[u32], params: &StitchParams, horizontal_threshold: f64) -> Vec<Placement> {
    let mut out = Vec::with_capacity(frame_ids.len());
    let (mut y, mut x, mut factor) = (0.0f64, 0.0f64, 1.0f64);
    for (k, &frame) in frame_ids.iter().enumerate() {
        if k > 0 {
            let r = &params.records[k - 1];
            y += r.dy;
            x += r.dx * factor;
            if x.abs() > horizontal_threshold && horizontal_threshold > 0.0 {
                factor *= horizontal_threshold / x.abs();
            }
        }
        out.push(Placement {
            frame,
            y: y.round() as i64,
            x_shift: x.round() as i64,
            compression: factor,
        });
    }
    let top = out.iter().map(|p| p.y).min().unwrap_or(0);
    for p in &mut out {
        p.y -= top;
    }
    out
}

/// Feather weight of row `v` in a frame of height `h`.
fn feather(v: u32, h: u32) -> f64 {
    f64::from((v + 1).min(h - v))
}

/// Renders frames at the given placements.
pub fn render(frames: &[Projected], placed: &[Placement]) -> Result<Panorama, ComposeError> {
    let first = frames.first().ok_or(ComposeError::NoFrames)?;
    let (w, h) = first.image.dimensions();
    for (index, f) in frames.iter().enumerate() {
        if f.image.dimensions() != (w, h) {
            return Err(ComposeError::SizeMismatch {
                index,
                got: f.image.dimensions(),
                expected: (w, h),
            });
        }
    }
    if placed.len() != frames.len() {
        return Err(ComposeError::CountMismatch {
            params: placed.len().saturating_sub(1),
            frames: frames.len(),
        });
    }
    let pan_h = placed.iter().map(|p| p.y).max().unwrap_or(0) as u32 + h;
    let n = (w * pan_h) as usize;
    let mut acc = vec![[0.0f64; 3]; n];
    let mut wsum = vec![0.0f64; n];
    let mut coverage = vec![0u16; n];
    let wi = i64::from(w);
    for (f, p) in frames.iter().zip(placed) {
        for v in 0..h {
            let row = (p.y as u32 + v) * w;
            let fw = feather(v, h);
            for u in 0..w {
                if !f.valid[(v * w + u) as usize] {
                    continue;
                }
                let col = (i64::from(u) - p.x_shift).rem_euclid(wi) as u32;
                let idx = (row + col) as usize;
                let px = f.image.get_pixel(u, v).0;
                for c in 0..3 {
                    acc[idx][c] += fw * f64::from(px[c]);
                }
                wsum[idx] += fw;
                coverage[idx] += 1;
            }
        }
    }
    let mut image = RgbImage::new(w, pan_h);
    for (idx, px) in image.pixels_mut().enumerate() {
        if wsum[idx] > 0.0 {
            *px = Rgb(acc[idx].map(|s| (s / wsum[idx]).round().clamp(0.0, 255.0) as u8));
        }
    }
    let uncovered_pixels = coverage.iter().filter(|&&c| c == 0).count();
    Ok(Panorama {
        image,
        coverage,
        provenance: Provenance {
            placements: placed.to_vec(),
            width_scale: 1.0,
            uncovered_pixels,
        },
    })
}

/// Places frame `k+1` at the cumulative offsets of records `0..=k` and
/// blends overlaps with vertical feathering.
pub fn composite(
    frames: &[Projected],
    frame_ids: &[u32],
    params: &StitchParams,
    horizontal_threshold: f64,
) -> Result<Panorama, ComposeError> {
    if frames.is_empty() {
        return Err(ComposeError::NoFrames);
    }
    if params.records.len() + 1 != frames.len() || frame_ids.len() != frames.len() {
        return Err(ComposeError::CountMismatch {
            params: params.records.len(),
            frames: frames.len(),
        });
    }
    render(frames, &placements(frame_ids, params, horizontal_threshold))
}

/// Area-averaged column resampling down to `max_width`; identity when the
/// panorama already fits.
pub fn post_stitch_adjust(pan: Panorama, max_width: u32) -> Result<Panorama, ComposeError> {
    if max_width == 0 {
        return Err(ComposeError::ZeroWidth);
    }
    let (w, h) = pan.image.dimensions();
    if w <= max_width {
        return Ok(pan);
    }
    let scale = f64::from(w) / f64::from(max_width);
    let mut image = RgbImage::new(max_width, h);
    let mut coverage = vec![0u16; (max_width * h) as usize];
    for j in 0..max_width {
        let (lo, hi) = (f64::from(j) * scale, f64::from(j + 1) * scale);
        let spans: Vec<(u32, f64)> = (lo.floor() as u32..(hi.ceil() as u32).min(w))
            .map(|s| (s, (hi.min(f64::from(s + 1)) - lo.max(f64::from(s))).max(0.0)))
            .filter(|(_, a)| *a > 0.0)
            .collect();
        for y in 0..h {
            let mut acc = [0.0f64; 3];
            let mut cov = 0u16;
            for &(s, a) in &spans {
                let px = pan.image.get_pixel(s, y).0;
                for c in 0..3 {
                    acc[c] += a * f64::from(px[c]);
                }
                cov = cov.max(pan.coverage[(y * w + s) as usize]);
            }
            image.put_pixel(j, y, Rgb(acc.map(|v| (v / scale).round().clamp(0.0, 255.0) as u8)));
            coverage[(y * max_width + j) as usize] = cov;
        }
    }
    let mut provenance = pan.provenance;
    provenance.width_scale = 1.0 / scale;
    provenance.uncovered_pixels = coverage.iter().filter(|&&c| c == 0).count();
    Ok(Panorama {
        image,
        coverage,
        provenance,
    })
}
