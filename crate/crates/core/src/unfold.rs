//! Depth-centred polar unwrapping of circular tube views.
//!
//! Each frame's depth centre (the interior pixel of minimum depth) anchors an
//! annulus between a fixed inner radius and the largest radius that still
//! fits inside the frame. The annulus is resampled onto a rectangle whose
//! columns walk around the tube wall and whose rows walk from the outer to
//! the inner radius.

use std::f64::consts::TAU;

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{PipelineConfig, RadialMapping};
use crate::frame::{Frame, FrameSequence};
use crate::raster::{gaussian_blur, median3x3, quantize, sample_rgb, Raster};

/// Fraction of the frame width a smoothed centre may move between frames.
pub const MAX_JUMP_FRACTION: f64 = 0.1;
/// Weight of the newest observation in the centre moving average.
pub const EMA_ALPHA: f64 = 0.5;
/// Blur applied to luminance when it stands in for depth.
pub const FALLBACK_SIGMA: f64 = 5.0;

#[derive(Debug, Error, PartialEq)]
pub enum UnfoldError {
    #[error("frame {0} has no depth map and the luminance fallback is disabled")]
    NoDepth(u32),
    #[error("margin {margin} leaves no interior in a {width}x{height} frame")]
    EmptyInterior { margin: u32, width: u32, height: u32 },
    #[error("empty centre trajectory")]
    EmptyTrajectory,
    #[error("radii out of order: r_inner {r_inner} must be >= 0 and < r_outer {r_outer}")]
    RadiiOrder { r_inner: f64, r_outer: f64 },
    #[error("outer radius {r_outer} around ({cx}, {cy}) leaves the {width}x{height} frame")]
    OuterRadiusOutside {
        cx: f64,
        cy: f64,
        r_outer: f64,
        width: u32,
        height: u32,
    },
    #[error("unwrap size {width}x{height} is degenerate (need width >= 1, height >= 2)")]
    DegenerateOutput { width: u32, height: u32 },
}

/// Per-frame centres, the smoothed trajectory and the annulus radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthTrack {
    pub centers_raw: Vec<(f64, f64)>,
    pub centers_smoothed: Vec<(f64, f64)>,
    pub r_outer: Vec<f64>,
    pub r_inner: f64,
    /// Frames whose centre came from the luminance proxy.
    pub fallback_used: Vec<bool>,
    /// Original frame dimensions.
    pub frame_size: (u32, u32),
}

impl DepthTrack {
    /// Distance between the smoothed centres of frame `k` and `k + 1` (0-based).
    pub fn center_offset(&self, k: usize) -> f64 {
        let (ax, ay) = self.centers_smoothed[k];
        let (bx, by) = self.centers_smoothed[k + 1];
        (bx - ax).hypot(by - ay)
    }

    pub fn geometry(&self, k: usize, config: &PipelineConfig) -> AnnulusGeometry {
        AnnulusGeometry {
            center: self.centers_smoothed[k],
            r_inner: self.r_inner,
            r_outer: self.r_outer[k],
            out_w: config.unwrap_width,
            out_h: config.unwrap_height,
            mapping: config.radial_mapping,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnfoldedFrame {
    pub index: u32,
    pub raster: RgbImage,
    pub center_used: (f64, f64),
    pub radii_used: (f64, f64),
}

/// Annulus geometry shared by the forward unwrap and the inverse mapping of
/// original-frame points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnulusGeometry {
    pub center: (f64, f64),
    pub r_inner: f64,
    pub r_outer: f64,
    pub out_w: u32,
    pub out_h: u32,
    pub mapping: RadialMapping,
}

impl AnnulusGeometry {
    /// Radius sampled by unfolded row `v` (row 0 is the outer radius).
    pub fn radius_at_row(&self, v: f64) -> f64 {
        let t = v / f64::from(self.out_h - 1);
        match self.mapping {
            RadialMapping::Linear => self.r_outer - (self.r_outer - self.r_inner) * t,
            RadialMapping::Perspective => {
                let inv = 1.0 / self.r_outer + (1.0 / self.r_inner - 1.0 / self.r_outer) * t;
                1.0 / inv
            }
        }
    }

    pub fn row_at_radius(&self, r: f64) -> f64 {
        let h1 = f64::from(self.out_h - 1);
        match self.mapping {
            RadialMapping::Linear => (self.r_outer - r) / (self.r_outer - self.r_inner) * h1,
            RadialMapping::Perspective => {
                (1.0 / r - 1.0 / self.r_outer) / (1.0 / self.r_inner - 1.0 / self.r_outer) * h1
            }
        }
    }

    /// Angle of column `u`; 0 on the +x axis, counter-clockwise on screen.
    pub fn angle_at_column(&self, u: f64) -> f64 {
        TAU * u / f64::from(self.out_w)
    }

    /// Source-image position sampled by unfolded pixel `(u, v)`.
    pub fn source_point(&self, u: f64, v: f64) -> (f64, f64) {
        let theta = self.angle_at_column(u);
        let r = self.radius_at_row(v);
        (
            self.center.0 + r * theta.cos(),
            self.center.1 - r * theta.sin(),
        )
    }

    /// Inverse of [`source_point`](Self::source_point); `None` outside the annulus.
    pub fn unfolded_point(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let dx = x - self.center.0;
        let dy = self.center.1 - y;
        let r = dx.hypot(dy);
        if r < self.r_inner || r > self.r_outer {
            return None;
        }
        let theta = dy.atan2(dx).rem_euclid(TAU);
        let u = theta / TAU * f64::from(self.out_w);
        let u = if u >= f64::from(self.out_w) { 0.0 } else { u };
        Some((u, self.row_at_radius(r)))
    }
}

/// Index of the minimum over the interior, ties to the smallest row then column.
/// Mean of the clamped 3×3 neighbourhood.
fn mean3x3(src: &Raster<f32>, x: u32, y: u32) -> f64 {
    let (w, h) = src.dimensions();
    let mut sum = 0.0;
    for dy in -1..=1i64 {
        for dx in -1..=1i64 {
            let sx = (i64::from(x) + dx).clamp(0, i64::from(w) - 1) as u32;
            let sy = (i64::from(y) + dy).clamp(0, i64::from(h) - 1) as u32;
            sum += f64::from(src.get(sx, sy));
        }
    }
    sum / 9.0
}

/// Interior argmin of the median-filtered plane. Equal medians are ordered
/// by the raw 3×3 mean (so a flat minimum resolves to its middle), then by
/// row, then by column.
fn interior_argmin(raw: &Raster<f32>, margin: u32) -> Result<(u32, u32), UnfoldError> {
    let (w, h) = raw.dimensions();
    if w < 2 * margin + 1 || h < 2 * margin + 1 {
        return Err(UnfoldError::EmptyInterior {
            margin,
            width: w,
            height: h,
        });
    }
    let plane = median3x3(raw);
    let mut best = (margin, margin);
    let mut best_v = (f32::INFINITY, f64::INFINITY);
    for y in margin..h - margin {
        for x in margin..w - margin {
            let v = plane.get(x, y);
            if v > best_v.0 {
                continue;
            }
            let m = mean3x3(raw, x, y);
            if v < best_v.0 || m < best_v.1 {
                best_v = (v, m);
                best = (x, y);
            }
        }
    }
    Ok(best)
}

/// Result of depth-centre search on one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterLocation {
    pub x: u32,
    pub y: u32,
    pub from_fallback: bool,
}

/// Interior pixel of minimum (3×3 median filtered) depth. Without a depth
/// plane and with `allow_fallback`, the darkest pixel of the σ=5 blurred
/// luminance is used instead.
pub fn locate_depth_center(
    frame: &Frame,
    margin: u32,
    allow_fallback: bool,
) -> Result<CenterLocation, UnfoldError> {
    let blurred;
    let (plane, from_fallback) = match &frame.depth {
        Some(d) => (d, false),
        None if allow_fallback => {
            blurred = gaussian_blur(&Raster::from_gray(&frame.gray), FALLBACK_SIGMA);
            (&blurred, true)
        }
        None => return Err(UnfoldError::NoDepth(frame.index)),
    };
    let (x, y) = interior_argmin(plane, margin)?;
    Ok(CenterLocation {
        x,
        y,
        from_fallback,
    })
}

/// Exponential moving average of the centres with a per-step jump clamp of
/// [`MAX_JUMP_FRACTION`] of the frame width.
pub fn smooth_trajectory(
    raw: &[(f64, f64)],
    frame_width: u32,
) -> Result<Vec<(f64, f64)>, UnfoldError> {
    let (&first, rest) = raw.split_first().ok_or(UnfoldError::EmptyTrajectory)?;
    let max_jump = MAX_JUMP_FRACTION * f64::from(frame_width);
    let mut out = Vec::with_capacity(raw.len());
    out.push(first);
    let mut prev = first;
    for &(x, y) in rest {
        let mut s = (
            EMA_ALPHA * x + (1.0 - EMA_ALPHA) * prev.0,
            EMA_ALPHA * y + (1.0 - EMA_ALPHA) * prev.1,
        );
        let jump = (s.0 - prev.0).hypot(s.1 - prev.1);
        if jump > max_jump {
            let k = max_jump / jump;
            s = (prev.0 + (s.0 - prev.0) * k, prev.1 + (s.1 - prev.1) * k);
        }
        out.push(s);
        prev = s;
    }
    Ok(out)
}

/// Largest whole radius around `center` that stays inside the frame.
pub fn outer_radius(center: (f64, f64), width: u32, height: u32) -> f64 {
    let (cx, cy) = center;
    cx.min(cy)
        .min(f64::from(width - 1) - cx)
        .min(f64::from(height - 1) - cy)
        .floor()
}

fn check_radii(r_inner: f64, r_outer: f64) -> Result<(), UnfoldError> {
    if !(r_inner >= 0.0 && r_inner < r_outer) {
        return Err(UnfoldError::RadiiOrder { r_inner, r_outer });
    }
    Ok(())
}

/// Resamples the annulus onto an `out_w × out_h` rectangle with bilinear
/// interpolation (edge-clamped).
pub fn unwrap_annulus(
    frame: &Frame,
    geometry: AnnulusGeometry,
) -> Result<UnfoldedFrame, UnfoldError> {
    let AnnulusGeometry {
        center: (cx, cy),
        r_inner,
        r_outer,
        out_w,
        out_h,
        ..
    } = geometry;
    check_radii(r_inner, r_outer)?;
    if out_w < 1 || out_h < 2 {
        return Err(UnfoldError::DegenerateOutput {
            width: out_w,
            height: out_h,
        });
    }
    let (w, h) = (frame.width(), frame.height());
    let slack = 1e-9;
    if cx - r_outer < -slack
        || cy - r_outer < -slack
        || cx + r_outer > f64::from(w - 1) + slack
        || cy + r_outer > f64::from(h - 1) + slack
    {
        return Err(UnfoldError::OuterRadiusOutside {
            cx,
            cy,
            r_outer,
            width: w,
            height: h,
        });
    }
    let raster = RgbImage::from_fn(out_w, out_h, |u, v| {
        let (x, y) = geometry.source_point(f64::from(u), f64::from(v));
        let [r, g, b] = sample_rgb(&frame.color, x, y);
        Rgb([quantize(r), quantize(g), quantize(b)])
    });
    Ok(UnfoldedFrame {
        index: frame.index,
        raster,
        center_used: (cx, cy),
        radii_used: (r_inner, r_outer),
    })
}

/// Pixels of a midpoint-rasterized circle of integer radius, unclipped.
pub fn midpoint_circle(cx: i64, cy: i64, r: i64) -> Vec<(i64, i64)> {
    let mut pts = Vec::new();
    if r == 0 {
        pts.push((cx, cy));
        return pts;
    }
    let (mut x, mut y, mut err) = (r, 0i64, 1 - r);
    while x >= y {
        for (px, py) in [
            (x, y),
            (y, x),
            (-y, x),
            (-x, y),
            (-x, -y),
            (-y, -x),
            (y, -x),
            (x, -y),
        ] {
            pts.push((cx + px, cy + py));
        }
        y += 1;
        if err < 0 {
            err += 2 * y + 1;
        } else {
            x -= 1;
            err += 2 * (y - x) + 1;
        }
    }
    pts.sort_unstable();
    pts.dedup();
    pts
}

/// Copy of the frame with the outer (red) and inner (green) boundaries drawn.
pub fn annotate_original(
    frame: &Frame,
    center: (f64, f64),
    r_inner: f64,
    r_outer: f64,
) -> Result<RgbImage, UnfoldError> {
    check_radii(r_inner, r_outer)?;
    let mut out = frame.color.clone();
    let (cx, cy) = (center.0.round() as i64, center.1.round() as i64);
    let (w, h) = (i64::from(out.width()), i64::from(out.height()));
    for (radius, color) in [(r_outer, Rgb([255, 0, 0])), (r_inner, Rgb([0, 255, 0]))] {
        for (x, y) in midpoint_circle(cx, cy, radius.round() as i64) {
            if (0..w).contains(&x) && (0..h).contains(&y) {
                out.put_pixel(x as u32, y as u32, color);
            }
        }
    }
    Ok(out)
}

/// Copy of the frame with everything outside the annulus blacked out.
pub fn annular_region(frame: &Frame, center: (f64, f64), r_inner: f64, r_outer: f64) -> RgbImage {
    let mut out = frame.color.clone();
    for (x, y, px) in out.enumerate_pixels_mut() {
        let r = (f64::from(x) - center.0).hypot(f64::from(y) - center.1);
        if r < r_inner || r > r_outer {
            *px = Rgb([0, 0, 0]);
        }
    }
    out
}

/// Everything the unfold stage produces for a sequence.
#[derive(Debug, Clone)]
pub struct UnfoldOutput {
    pub track: DepthTrack,
    pub frames: Vec<UnfoldedFrame>,
}

impl UnfoldOutput {
    pub fn geometry(&self, k: usize, config: &PipelineConfig) -> AnnulusGeometry {
        self.track.geometry(k, config)
    }
}

/// Locates, smooths and unwraps every frame of the sequence.
pub fn unfold_sequence(
    seq: &FrameSequence,
    config: &PipelineConfig,
) -> Result<UnfoldOutput, (usize, UnfoldError)> {
    let (width, height) = seq
        .dimensions()
        .ok_or((0, UnfoldError::EmptyTrajectory))?;
    let located: Vec<CenterLocation> = seq
        .frames
        .par_iter()
        .enumerate()
        .map(|(k, f)| {
            locate_depth_center(f, config.margin, config.depth_fallback).map_err(|e| (k, e))
        })
        .collect::<Result<_, _>>()?;
    let raw: Vec<(f64, f64)> = located
        .iter()
        .map(|c| (f64::from(c.x), f64::from(c.y)))
        .collect();
    let smoothed = smooth_trajectory(&raw, width).map_err(|e| (0, e))?;
    let r_outer: Vec<f64> = smoothed
        .iter()
        .map(|&c| outer_radius(c, width, height))
        .collect();
    let track = DepthTrack {
        centers_raw: raw,
        centers_smoothed: smoothed,
        r_outer,
        r_inner: config.r_inner,
        fallback_used: located.iter().map(|c| c.from_fallback).collect(),
        frame_size: (width, height),
    };
    let frames = seq
        .frames
        .par_iter()
        .enumerate()
        .map(|(k, f)| unwrap_annulus(f, track.geometry(k, config)).map_err(|e| (k, e)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(UnfoldOutput { track, frames })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::DepthMap;
    use std::collections::BTreeSet;

    fn frame_with_depth(depth: DepthMap) -> Frame {
        let (w, h) = depth.dimensions();
        Frame::new(1, RgbImage::new(w, h), Some(depth))
    }

    fn geom(center: (f64, f64), ri: f64, ro: f64, w: u32, h: u32) -> AnnulusGeometry {
        AnnulusGeometry {
            center,
            r_inner: ri,
            r_outer: ro,
            out_w: w,
            out_h: h,
            mapping: RadialMapping::Linear,
        }
    }

    #[test]
    fn unique_minimum_plateau() {
        let mut d = DepthMap::filled(100, 100, 1.0);
        for y in 59..=61 {
            for x in 39..=41 {
                d.set(x, y, 0.1);
            }
        }
        let c = locate_depth_center(&frame_with_depth(d), 10, false).unwrap();
        assert_eq!((c.x, c.y), (40, 60));
        assert!(!c.from_fallback);
    }

    #[test]
    fn constant_depth_ties_to_origin() {
        let c = locate_depth_center(&frame_with_depth(DepthMap::filled(5, 5, 2.0)), 0, false)
            .unwrap();
        assert_eq!((c.x, c.y), (0, 0));
    }

    #[test]
    fn border_minimum_is_excluded_by_margin() {
        // Border minimum at (0, 3) and an interior minimum plateau centred at (7, 7).
        let mut d = DepthMap::filled(12, 12, 5.0);
        for y in 2..=4 {
            d.set(0, y, -10.0);
            d.set(1, y, -10.0);
        }
        for y in 6..=8 {
            for x in 6..=8 {
                d.set(x, y, 0.5);
            }
        }
        d.set(7, 7, 0.25);
        // Brute-force oracle over the median-filtered interior.
        let filtered = median3x3(&d);
        let key = |x: u32, y: u32| {
            let mut s = 0.0f64;
            for yy in y - 1..=y + 1 {
                for xx in x - 1..=x + 1 {
                    s += f64::from(d.get(xx, yy));
                }
            }
            (filtered.get(x, y), s / 9.0, y, x)
        };
        let mut all: Vec<_> = (2..10).flat_map(|y| (2..10).map(move |x| (x, y))).collect();
        all.sort_by(|p, q| key(p.0, p.1).partial_cmp(&key(q.0, q.1)).unwrap());
        let best = all[0];
        let c = locate_depth_center(&frame_with_depth(d), 2, false).unwrap();
        assert_eq!((c.x, c.y), best);
        assert_eq!(best, (7, 7));
    }

    #[test]
    fn missing_depth_and_empty_interior() {
        let f = Frame::new(3, RgbImage::new(10, 10), None);
        assert_eq!(
            locate_depth_center(&f, 1, false),
            Err(UnfoldError::NoDepth(3))
        );
        assert!(matches!(
            locate_depth_center(&frame_with_depth(DepthMap::filled(10, 10, 1.0)), 5, false),
            Err(UnfoldError::EmptyInterior { .. })
        ));
    }

    #[test]
    fn fallback_finds_dark_lumen() {
        let img = RgbImage::from_fn(64, 64, |x, y| {
            let r = (f64::from(x) - 40.0).hypot(f64::from(y) - 25.0);
            let v = (r * 6.0).min(255.0) as u8;
            Rgb([v, v, v])
        });
        let c = locate_depth_center(&Frame::new(1, img, None), 8, true).unwrap();
        assert!(c.from_fallback);
        assert!((i64::from(c.x) - 40).abs() <= 1 && (i64::from(c.y) - 25).abs() <= 1);
    }

    #[test]
    fn smoothing_examples() {
        let s = smooth_trajectory(&[(50.0, 50.0); 5], 200).unwrap();
        assert!(s.iter().all(|&p| p == (50.0, 50.0)));
        let s = smooth_trajectory(&[(0.0, 0.0), (4.0, 0.0)], 200).unwrap();
        assert_eq!(s, vec![(0.0, 0.0), (2.0, 0.0)]);
        let s = smooth_trajectory(&[(0.0, 0.0), (100.0, 0.0)], 200).unwrap();
        assert!((s[1].0 - 20.0).abs() < 1e-12 && s[1].1 == 0.0);
        assert_eq!(smooth_trajectory(&[], 10), Err(UnfoldError::EmptyTrajectory));
    }

    #[test]
    fn outer_radius_never_leaves_frame() {
        for w in [9u32, 10, 17] {
            for h in [9u32, 12] {
                for cy in 0..h {
                    for cx in 0..w {
                        let c = (f64::from(cx), f64::from(cy));
                        let r = outer_radius(c, w, h);
                        let true_min = c.0.min(c.1).min(f64::from(w - 1) - c.0).min(f64::from(h - 1) - c.1);
                        assert!(r <= true_min);
                        assert!(r > true_min - 1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn constant_frame_unwraps_constant() {
        let f = Frame::new(1, RgbImage::from_pixel(64, 64, Rgb([9, 80, 200])), None);
        let u = unwrap_annulus(&f, geom((32.0, 32.0), 5.0, 30.0, 90, 20)).unwrap();
        assert_eq!(u.raster.dimensions(), (90, 20));
        assert!(u.raster.pixels().all(|p| *p == Rgb([9, 80, 200])));
    }

    #[test]
    fn radial_ramp_rows_are_constant() {
        let (cx, cy) = (64.0, 64.0);
        let f_of_r = |r: f64| 2.0 * r + 10.0;
        let img = RgbImage::from_fn(129, 129, |x, y| {
            let v = f_of_r((f64::from(x) - cx).hypot(f64::from(y) - cy)).round() as u8;
            Rgb([v, v, v])
        });
        let g = geom((cx, cy), 10.0, 60.0, 256, 51);
        let u = unwrap_annulus(&Frame::new(1, img, None), g).unwrap();
        for v in 0..51 {
            let row: Vec<f64> = (0..256)
                .map(|x| f64::from(u.raster.get_pixel(x, v).0[0]))
                .collect();
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            let expected = f_of_r(g.radius_at_row(f64::from(v)));
            assert!((mean - expected).abs() <= 1.0, "row {v}: {mean} vs {expected}");
            // Bilinear interpolation of a cone is not exact off-axis; rows stay
            // within one gray level of their mean.
            assert!(row.iter().all(|x| (x - mean).abs() <= 1.0 + 1e-9), "row {v}");
        }
    }

    #[test]
    fn radial_ramp_row_variance_exact_on_quantized_rings() {
        // Value depends only on the rounded radius, sampled exactly on pixel
        // centres by using 4 columns (angles 0, 90, 180, 270 degrees).
        let img = RgbImage::from_fn(101, 101, |x, y| {
            let r = (f64::from(x) - 50.0).hypot(f64::from(y) - 50.0);
            let v = (r * 3.0).round().min(255.0) as u8;
            Rgb([v, v, v])
        });
        let u = unwrap_annulus(&Frame::new(1, img, None), geom((50.0, 50.0), 10.0, 40.0, 4, 31))
            .unwrap();
        for v in 0..31 {
            let row: Vec<f64> = (0..4).map(|x| f64::from(u.raster.get_pixel(x, v).0[0])).collect();
            let mean = row.iter().sum::<f64>() / 4.0;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(var < 1e-6, "row {v} variance {var}");
        }
    }

    #[test]
    fn bright_pixel_lands_at_quarter_turn() {
        let (cx, cy, ri, ro) = (50.0, 50.0, 10.0, 40.0);
        let (w, h) = (200u32, 61u32);
        let rm = (ri + ro) / 2.0;
        // theta = pi/2 is straight up on screen.
        let (px, py) = (cx as u32, (cy - rm) as u32);
        let mut img = RgbImage::new(101, 101);
        img.put_pixel(px, py, Rgb([255, 255, 255]));
        let u = unwrap_annulus(&Frame::new(1, img, None), geom((cx, cy), ri, ro, w, h)).unwrap();
        let (mut best, mut bv) = ((0, 0), 0);
        for (x, y, p) in u.raster.enumerate_pixels() {
            if p.0[0] > bv {
                bv = p.0[0];
                best = (x, y);
            }
        }
        let ecol = (f64::from(w) / 4.0).round() as i64;
        let erow = (f64::from(h - 1) / 2.0).round() as i64;
        assert!((i64::from(best.0) - ecol).abs() <= 1, "{best:?}");
        assert!((i64::from(best.1) - erow).abs() <= 1, "{best:?}");
    }

    #[test]
    fn rotation_by_quarter_turn_shifts_columns() {
        // Smooth angular pattern; rotating the frame 90 degrees about the
        // centre shifts the unfolded raster by out_w / 4 columns.
        let n = 121u32;
        let c = 60.0;
        let img = RgbImage::from_fn(n, n, |x, y| {
            let dx = f64::from(x) - c;
            let dy = c - f64::from(y);
            let th = dy.atan2(dx);
            let r = dx.hypot(dy);
            let v = 128.0 + 60.0 * (3.0 * th).sin() + 40.0 * (r / 6.0).cos();
            Rgb([quantize(v), quantize(255.0 - v), 90])
        });
        // Counter-clockwise on screen: new(x, y) = old(rotated back).
        let rotated = RgbImage::from_fn(n, n, |x, y| *img.get_pixel(n - 1 - y, x));
        let g = geom((c, c), 8.0, 55.0, 240, 48);
        let a = unwrap_annulus(&Frame::new(1, img, None), g).unwrap();
        let b = unwrap_annulus(&Frame::new(1, rotated, None), g).unwrap();
        let shift = 240 / 4;
        let mut total = 0.0;
        let mut count = 0.0;
        for v in 0..48 {
            for u in 0..240 {
                let pa = a.raster.get_pixel(u, v);
                let pb = b.raster.get_pixel((u + shift) % 240, v);
                for ch in 0..3 {
                    total += (f64::from(pa.0[ch]) - f64::from(pb.0[ch])).abs();
                    count += 1.0;
                }
            }
        }
        assert!(total / count < 2.0, "mean abs diff {}", total / count);
    }

    #[test]
    fn radius_mapping_is_strictly_monotone() {
        for mapping in [RadialMapping::Linear, RadialMapping::Perspective] {
            let g = AnnulusGeometry {
                mapping,
                ..geom((0.0, 0.0), 12.0, 90.0, 64, 40)
            };
            assert!((g.radius_at_row(0.0) - 90.0).abs() < 1e-9);
            assert!((g.radius_at_row(39.0) - 12.0).abs() < 1e-9);
            for v in 0..39 {
                assert!(g.radius_at_row(f64::from(v + 1)) < g.radius_at_row(f64::from(v)));
                let r = g.radius_at_row(f64::from(v) + 0.3);
                assert!((g.row_at_radius(r) - (f64::from(v) + 0.3)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn inverse_mapping_round_trips() {
        let g = AnnulusGeometry {
            mapping: RadialMapping::Perspective,
            ..geom((40.5, 38.0), 10.0, 35.0, 180, 32)
        };
        for (u, v) in [(0.0, 0.0), (17.25, 3.5), (90.0, 31.0), (179.5, 12.0)] {
            let (x, y) = g.source_point(u, v);
            let (u2, v2) = g.unfolded_point(x, y).unwrap();
            assert!((u - u2).abs() < 1e-9 && (v - v2).abs() < 1e-9, "{u},{v} -> {u2},{v2}");
        }
        assert!(g.unfolded_point(40.5, 38.0).is_none());
    }

    #[test]
    fn unwrap_errors() {
        let f = Frame::new(1, RgbImage::new(50, 50), None);
        assert!(matches!(
            unwrap_annulus(&f, geom((25.0, 25.0), 20.0, 20.0, 10, 10)),
            Err(UnfoldError::RadiiOrder { .. })
        ));
        assert!(matches!(
            unwrap_annulus(&f, geom((25.0, 25.0), 5.0, 20.0, 10, 1)),
            Err(UnfoldError::DegenerateOutput { .. })
        ));
        assert!(matches!(
            unwrap_annulus(&f, geom((10.0, 25.0), 5.0, 20.0, 10, 10)),
            Err(UnfoldError::OuterRadiusOutside { .. })
        ));
    }

    /// Independent enumeration: in the first octant the midpoint rule picks
    /// x = round(sqrt(r^2 - y^2)); the rest follows by symmetry.
    fn circle_oracle(cx: i64, cy: i64, r: i64) -> BTreeSet<(i64, i64)> {
        let mut s = BTreeSet::new();
        let mut y = 0;
        loop {
            let x = ((r * r - y * y) as f64).sqrt().round() as i64;
            if x < y {
                break;
            }
            for (a, b) in [(x, y), (y, x)] {
                for (sa, sb) in [(1, 1), (-1, 1), (1, -1), (-1, -1)] {
                    s.insert((cx + sa * a, cy + sb * b));
                }
            }
            y += 1;
        }
        s
    }

    #[test]
    fn midpoint_matches_oracle() {
        for r in 1..60 {
            let got: BTreeSet<_> = midpoint_circle(0, 0, r).into_iter().collect();
            assert_eq!(got, circle_oracle(0, 0, r), "radius {r}");
        }
    }

    #[test]
    fn annotation_changes_exactly_circle_pixels() {
        let f = Frame::new(1, RgbImage::new(101, 101), None);
        let a = annotate_original(&f, (50.0, 50.0), 10.0, 40.0).unwrap();
        let mut expected = circle_oracle(50, 50, 40);
        expected.extend(circle_oracle(50, 50, 10));
        let changed: BTreeSet<(i64, i64)> = a
            .enumerate_pixels()
            .filter(|(_, _, p)| p.0 != [0, 0, 0])
            .map(|(x, y, _)| (i64::from(x), i64::from(y)))
            .collect();
        assert_eq!(changed, expected);
        assert_eq!(*a.get_pixel(90, 50), Rgb([255, 0, 0]));
        assert_eq!(*a.get_pixel(60, 50), Rgb([0, 255, 0]));

        let twice = annotate_original(&Frame::new(1, a.clone(), None), (50.0, 50.0), 10.0, 40.0)
            .unwrap();
        assert_eq!(twice, a);
        assert!(annotate_original(&f, (50.0, 50.0), 20.0, 20.0).is_err());
    }
}
