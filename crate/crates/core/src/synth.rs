//! Synthetic tube sequences with exact ground truth.
//!
//! A textured cylinder of radius `R` is viewed along its axis by a pinhole
//! camera with focal length `f` (pixels). A ray leaving the principal point
//! at image radius `ρ` meets the wall at axial distance `z = f·R/ρ`, so the
//! unfolded row of a wall point follows from `z` alone and forward motion
//! appears as a vertical shift under the perspective radial mapping.
//! Lateral camera offsets are modelled as a shift of the principal point.

use std::f64::consts::TAU;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{PipelineConfig, RadialMapping};
use crate::frame::{Frame, FrameSequence};
use crate::raster::{bilinear, quantize, DepthMap};
use crate::unfold::AnnulusGeometry;

pub const FRAME_SIZE: u32 = 257;
pub const FOCAL: f64 = 128.0;
pub const CYLINDER_RADIUS: f64 = 1.0;
pub const R_INNER: f64 = 64.0;
pub const R_OUTER: f64 = 128.0;
pub const UNWRAP_WIDTH: u32 = 512;
pub const UNWRAP_HEIGHT: u32 = 128;
/// Image radius (pixels) inside which the wall is beyond the visible depth.
pub const LUMEN_RADIUS: f64 = 12.0;
const SUPERSAMPLE: u32 = 4;
const GRID_SPACING: f64 = 32.0;
const GRID_WIDTH: f64 = 1.0;
const GRID_DARKENING: f64 = 0.35;
/// (lattice spacing in texels, amplitude) per value-noise octave.
const OCTAVES: [(usize, f64); 4] = [(8, 0.15), (16, 0.25), (32, 0.3), (64, 0.3)];
/// Texture rows kept beyond the deepest and nearest visible wall points.
const TEXTURE_PAD: f64 = 8.0;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("camera path is empty")]
    EmptyPath,
    #[error("camera axial positions must increase strictly (pose {0})")]
    NotIncreasing(usize),
    #[error("lateral offset {offset:?} at pose {index} leaves the annulus outside the frame")]
    OffsetTooLarge { index: usize, offset: (f64, f64) },
    #[error("texture {0}x{1} is smaller than 256x64")]
    TextureTooSmall(u32, u32),
    #[error("frame {0} out of range")]
    IndexOutOfRange(usize),
    #[error("motion lists differ in length")]
    MotionLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    /// Position along the cylinder axis, world units.
    pub axial: f64,
    /// Roll about the axis, radians.
    pub twist: f64,
    /// Principal point shift in pixels.
    pub offset: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    /// Unrolled wall: columns span the full turn, rows the axial direction.
    pub texture: RgbImage,
    /// Axial length of one texture row.
    pub texel_axial: f64,
    /// Axial coordinate of texture row 0.
    pub axial_origin: f64,
    pub cylinder_radius: f64,
    pub focal: f64,
    pub max_depth: f64,
    pub camera_path: Vec<CameraPose>,
    pub frame_size: u32,
    pub noise_sigma: f64,
}

/// Per-pair truth in unfolded pixels plus the covered texture strip.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub centers: Vec<(f64, f64)>,
    pub dy: Vec<f64>,
    pub dx: Vec<f64>,
    /// Wall texture in the first frame's unfolded coordinates, tall enough
    /// for every frame.
    pub strip: RgbImage,
}

/// `groundtruth.json` contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub centers: Vec<(f64, f64)>,
    pub dy: Vec<f64>,
    pub dx: Vec<f64>,
    pub strip: String,
}

/// One rendered view with inverse depth (as stored in `.dmap`) and metric
/// axial depth.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub color: RgbImage,
    pub inverse_depth: DepthMap,
    pub depth: DepthMap,
}

/// Axial depth seen at unfolded row `v` under the perspective mapping is
/// `z0 + dz·v`; returns `(z0, dz)`.
pub fn row_depth_line(focal: f64, radius: f64) -> (f64, f64) {
    let z0 = focal * radius / R_OUTER;
    let dz = focal * radius * (1.0 / R_INNER - 1.0 / R_OUTER) / f64::from(UNWRAP_HEIGHT - 1);
    (z0, dz)
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Periodic-in-x value noise plus a grid of soft dark lines.
pub fn procedural_texture(width: u32, height: u32, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers: Vec<(usize, f64, Vec<f64>, usize)> = OCTAVES
        .iter()
        .map(|&(spacing, amp)| {
            let cols = (width as usize).div_ceil(spacing);
            let rows = height as usize / spacing + 2;
            let lattice = (0..cols * rows).map(|_| rng.random::<f64>()).collect();
            (spacing, amp, lattice, cols)
        })
        .collect();
    let tint: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
    let total_amp: f64 = OCTAVES.iter().map(|o| o.1).sum();
    let value = |x: u32, y: u32| -> f64 {
        let mut v = 0.0;
        for (spacing, amp, lattice, cols) in &layers {
            let s = *spacing as f64;
            let (fx, fy) = (f64::from(x) / s, f64::from(y) / s);
            let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
            let (tx, ty) = (smoothstep(fx.fract()), smoothstep(fy.fract()));
            let at = |i: usize, j: usize| lattice[j * cols + i % cols];
            let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
            let bottom = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
            v += amp * (top * (1.0 - ty) + bottom * ty);
        }
        v / total_amp
    };
    let grid = |c: u32| {
        let d = (f64::from(c) % GRID_SPACING).min(GRID_SPACING - f64::from(c) % GRID_SPACING);
        (-d * d / (2.0 * GRID_WIDTH * GRID_WIDTH)).exp()
    };
    RgbImage::from_fn(width, height, |x, y| {
        let n = value(x, y);
        let shade = 1.0 - GRID_DARKENING * grid(x).max(grid(y));
        let t = tint[((x / 64) as usize + 8 * (y / 64) as usize) % tint.len()];
        Rgb([
            quantize((60.0 + 170.0 * n) * shade),
            quantize((35.0 + 100.0 * n + 30.0 * t) * shade),
            quantize((30.0 + 90.0 * n) * shade),
        ])
    })
}

/// Motion of each pair in unfolded pixels, converted to camera poses.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSpec {
    /// Per-pair vertical shift.
    pub dy: Vec<f64>,
    /// Per-pair horizontal content shift.
    pub dx: Vec<f64>,
    /// Per-frame principal point shift (pixels); one entry per frame.
    pub offsets: Vec<(f64, f64)>,
}

impl MotionSpec {
    pub fn constant(frames: usize, dy: f64, dx: f64) -> Self {
        Self {
            dy: vec![dy; frames.saturating_sub(1)],
            dx: vec![dx; frames.saturating_sub(1)],
            offsets: vec![(0.0, 0.0); frames],
        }
    }

    /// Uniformly drawn per-pair motion.
    pub fn random(frames: usize, dy: (f64, f64), dx: (f64, f64), seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = frames.saturating_sub(1);
        let dys = (0..pairs).map(|_| rng.random_range(dy.0..=dy.1)).collect();
        let dxs = (0..pairs).map(|_| rng.random_range(dx.0..=dx.1)).collect();
        Self {
            dy: dys,
            dx: dxs,
            offsets: vec![(0.0, 0.0); frames],
        }
    }

    /// Principal point moving on `(a·sin, a·cos)` with the given period.
    pub fn with_sinusoidal_offset(mut self, amplitude: f64, period: f64) -> Self {
        for (k, o) in self.offsets.iter_mut().enumerate() {
            let phase = TAU * k as f64 / period;
            *o = (amplitude * phase.sin(), amplitude * phase.cos());
        }
        self
    }
}

impl SynthScene {
    /// Scene whose frames realise `motion` exactly, with a procedural
    /// texture sized to cover every visible wall point.
    pub fn from_motion(motion: &MotionSpec, noise_sigma: f64, texture_seed: u64) -> Result<Self, SynthError> {
        if motion.dy.len() != motion.dx.len() || motion.offsets.len() != motion.dy.len() + 1 {
            return Err(SynthError::MotionLength);
        }
        let (z0, dz) = row_depth_line(FOCAL, CYLINDER_RADIUS);
        let mut path = Vec::with_capacity(motion.offsets.len());
        let (mut axial, mut twist) = (0.0, 0.0);
        for (k, &offset) in motion.offsets.iter().enumerate() {
            if k > 0 {
                axial += motion.dy[k - 1] * dz;
                twist += TAU * motion.dx[k - 1] / f64::from(UNWRAP_WIDTH);
            }
            path.push(CameraPose { axial, twist, offset });
        }
        let max_depth = FOCAL * CYLINDER_RADIUS / LUMEN_RADIUS;
        let corner = f64::from(FRAME_SIZE) * std::f64::consts::SQRT_2;
        let nearest = FOCAL * CYLINDER_RADIUS / corner;
        // Whole rows below z0 so texture rows coincide with unfolded rows.
        let axial_origin = z0 - dz * (((z0 - nearest) / dz).ceil() + TEXTURE_PAD);
        let deepest = axial + max_depth + TEXTURE_PAD * dz;
        let rows = ((deepest - axial_origin) / dz).ceil() as u32 + 2;
        let scene = Self {
            texture: procedural_texture(UNWRAP_WIDTH, rows, texture_seed),
            texel_axial: dz,
            axial_origin,
            cylinder_radius: CYLINDER_RADIUS,
            focal: FOCAL,
            max_depth,
            camera_path: path,
            frame_size: FRAME_SIZE,
            noise_sigma,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.camera_path.is_empty() {
            return Err(SynthError::EmptyPath);
        }
        let (tw, th) = self.texture.dimensions();
        if tw < 256 || th < 64 {
            return Err(SynthError::TextureTooSmall(tw, th));
        }
        let limit = f64::from(self.frame_size) / 4.0;
        for (k, pose) in self.camera_path.iter().enumerate() {
            if k > 0 && pose.axial <= self.camera_path[k - 1].axial {
                return Err(SynthError::NotIncreasing(k));
            }
            if pose.offset.0.hypot(pose.offset.1) >= limit {
                return Err(SynthError::OffsetTooLarge {
                    index: k,
                    offset: pose.offset,
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.camera_path.len()
    }

    pub fn is_empty(&self) -> bool {
        self.camera_path.is_empty()
    }

    /// Principal point of frame `k`.
    pub fn center(&self, k: usize) -> (f64, f64) {
        let c = f64::from(self.frame_size - 1) / 2.0;
        let o = self.camera_path[k].offset;
        (c + o.0, c + o.1)
    }

    /// Texture colour at wall angle `psi` and axial coordinate `s`.
    pub fn wall_color(&self, psi: f64, s: f64) -> [f64; 3] {
        let (tw, th) = self.texture.dimensions();
        let tx = (psi / TAU).rem_euclid(1.0) * f64::from(tw);
        let ty = (s - self.axial_origin) / self.texel_axial;
        let x0 = tx.floor();
        let fx = tx - x0;
        let (xa, xb) = (x0 as u32 % tw, (x0 as u32 + 1) % tw);
        let mut out = [0.0; 3];
        for (c, slot) in out.iter_mut().enumerate() {
            let col = |x: u32| {
                bilinear(tw, th, 0.0, ty, |_, yi| f64::from(self.texture.get_pixel(x, yi).0[c]))
            };
            *slot = col(xa) * (1.0 - fx) + col(xb) * fx;
        }
        out
    }

    fn frame_geometry(&self, k: usize) -> AnnulusGeometry {
        AnnulusGeometry {
            center: self.center(k),
            r_inner: R_INNER,
            r_outer: R_OUTER,
            out_w: UNWRAP_WIDTH,
            out_h: UNWRAP_HEIGHT,
            mapping: RadialMapping::Perspective,
        }
    }

    /// Renders frame `k` with 4×4 supersampling; `seed` drives the noise.
    pub fn render_frame(&self, k: usize, seed: u64) -> Result<RenderedFrame, SynthError> {
        let pose = *self.camera_path.get(k).ok_or(SynthError::IndexOutOfRange(k))?;
        let (px, py) = self.center(k);
        let fr = self.focal * self.cylinder_radius;
        let lumen = fr / self.max_depth;
        let n = self.frame_size;
        let mut color = RgbImage::new(n, n);
        let sub = f64::from(SUPERSAMPLE);
        for y in 0..n {
            for x in 0..n {
                let mut acc = [0.0; 3];
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let xs = f64::from(x) + (f64::from(sx) + 0.5) / sub - 0.5;
                        let ys = f64::from(y) + (f64::from(sy) + 0.5) / sub - 0.5;
                        let (dx, dy) = (xs - px, py - ys);
                        let rho = dx.hypot(dy);
                        if rho <= lumen {
                            continue;
                        }
                        let psi = dy.atan2(dx) - pose.twist;
                        let c = self.wall_color(psi, pose.axial + fr / rho);
                        for i in 0..3 {
                            acc[i] += c[i];
                        }
                    }
                }
                color.put_pixel(x, y, Rgb(acc.map(|v| quantize(v / (sub * sub)))));
            }
        }
        if self.noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add((k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)));
            let normal = Normal::new(0.0, self.noise_sigma).expect("finite sigma");
            for p in color.pixels_mut() {
                for c in p.0.iter_mut() {
                    *c = quantize(f64::from(*c) + normal.sample(&mut rng));
                }
            }
        }
        let rho_at = |x: u32, y: u32| (f64::from(x) - px).hypot(f64::from(y) - py);
        let inverse_depth = DepthMap::from_fn(n, n, |x, y| (rho_at(x, y) / fr) as f32);
        let depth = DepthMap::from_fn(n, n, |x, y| {
            let r = rho_at(x, y);
            if r <= lumen {
                self.max_depth as f32
            } else {
                (fr / r) as f32
            }
        });
        Ok(RenderedFrame {
            color,
            inverse_depth,
            depth,
        })
    }

    /// Exact unfolded view of frame `k` straight from the texture.
    pub fn ground_truth_unfold(&self, k: usize) -> Result<RgbImage, SynthError> {
        let pose = *self.camera_path.get(k).ok_or(SynthError::IndexOutOfRange(k))?;
        let g = self.frame_geometry(k);
        let fr = self.focal * self.cylinder_radius;
        Ok(RgbImage::from_fn(UNWRAP_WIDTH, UNWRAP_HEIGHT, |u, v| {
            let psi = g.angle_at_column(f64::from(u)) - pose.twist;
            let s = pose.axial + fr / g.radius_at_row(f64::from(v));
            Rgb(self.wall_color(psi, s).map(quantize))
        }))
    }

    pub fn ground_truth(&self) -> GroundTruth {
        let (z0, dz) = row_depth_line(self.focal, self.cylinder_radius);
        let path = &self.camera_path;
        let dy: Vec<f64> = path.windows(2).map(|p| (p[1].axial - p[0].axial) / dz).collect();
        let dx: Vec<f64> = path
            .windows(2)
            .map(|p| f64::from(UNWRAP_WIDTH) * (p[1].twist - p[0].twist) / TAU)
            .collect();
        let total: f64 = dy.iter().sum();
        let rows = UNWRAP_HEIGHT + total.round() as u32;
        let first = path[0];
        let strip = RgbImage::from_fn(UNWRAP_WIDTH, rows, |u, p| {
            let psi = TAU * f64::from(u) / f64::from(UNWRAP_WIDTH) - first.twist;
            let s = first.axial + z0 + dz * f64::from(p);
            Rgb(self.wall_color(psi, s).map(quantize))
        });
        GroundTruth {
            centers: (0..path.len()).map(|k| self.center(k)).collect(),
            dy,
            dx,
            strip,
        }
    }

    /// Pipeline settings matching the scene's unfold geometry.
    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            r_inner: R_INNER,
            unwrap_width: UNWRAP_WIDTH,
            unwrap_height: UNWRAP_HEIGHT,
            radial_mapping: RadialMapping::Perspective,
            horizontal_threshold: f64::from(UNWRAP_WIDTH),
            ..PipelineConfig::default()
        }
    }
}

/// Renders every frame (in parallel) with inverse depth attached.
pub fn render_sequence(scene: &SynthScene, seed: u64) -> Result<(FrameSequence, GroundTruth), SynthError> {
    scene.validate()?;
    let frames = (0..scene.len())
        .into_par_iter()
        .map(|k| {
            let r = scene.render_frame(k, seed)?;
            Ok(Frame::new(k as u32 + 1, r.color, Some(r.inverse_depth)))
        })
        .collect::<Result<Vec<_>, SynthError>>()?;
    Ok((FrameSequence::new(frames), scene.ground_truth()))
}
