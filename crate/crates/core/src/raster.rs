//! Minimal raster containers and sampling helpers shared by every stage.
//!
//! 8-bit color and luminance images use the `image` crate types directly;
//! [`Raster`] covers the float planes (depth maps, blurred luminance,
//! scale-space layers) that the `image` crate does not model well.

use image::{GrayImage, Rgb, RgbImage};

pub use image::{GrayImage as Gray8, RgbImage as Rgb8};

/// Row-major single-channel raster, top-left origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    width: u32,
    height: u32,
    data: Vec<T>,
}

/// Per-pixel depth values (float32, same layout as the `.dmap` file).
pub type DepthMap = Raster<f32>;

impl<T: Copy> Raster<T> {
    pub fn filled(width: u32, height: u32, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    /// Wraps an existing buffer; returns `None` if the length does not match.
    pub fn from_vec(width: u32, height: u32, data: Vec<T>) -> Option<Self> {
        (data.len() == width as usize * height as usize).then_some(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> T) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> T {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: T) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl Raster<f32> {
    /// Bilinear sample with edge clamping.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        bilinear(self.width, self.height, x, y, |xi, yi| {
            f64::from(self.get(xi, yi))
        })
    }

    pub fn from_gray(img: &GrayImage) -> Self {
        let (w, h) = img.dimensions();
        Self {
            width: w,
            height: h,
            data: img.as_raw().iter().map(|&v| f32::from(v)).collect(),
        }
    }
}

/// Luminance by the fixed Rec.601 weights, rounded to nearest.
pub fn luminance(px: Rgb<u8>) -> u8 {
    let [r, g, b] = px.0;
    let y = 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b);
    y.round().clamp(0.0, 255.0) as u8
}

pub fn to_gray(img: &RgbImage) -> GrayImage {
    let (w, h) = img.dimensions();
    GrayImage::from_fn(w, h, |x, y| image::Luma([luminance(*img.get_pixel(x, y))]))
}

/// Bilinear interpolation over an abstract pixel accessor; coordinates
/// outside the raster are clamped to the nearest edge.
#[inline]
pub fn bilinear(width: u32, height: u32, x: f64, y: f64, at: impl Fn(u32, u32) -> f64) -> f64 {
    let max_x = f64::from(width - 1);
    let max_y = f64::from(height - 1);
    let x = x.clamp(0.0, max_x);
    let y = y.clamp(0.0, max_y);
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let x0 = x0 as u32;
    let y0 = y0 as u32;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Bilinear RGB sample, clamped at the edges, returned as floats.
pub fn sample_rgb(img: &RgbImage, x: f64, y: f64) -> [f64; 3] {
    let (w, h) = img.dimensions();
    let mut out = [0.0; 3];
    for (c, slot) in out.iter_mut().enumerate() {
        *slot = bilinear(w, h, x, y, |xi, yi| f64::from(img.get_pixel(xi, yi).0[c]));
    }
    out
}

pub fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with clamped borders.
pub fn gaussian_blur(src: &Raster<f32>, sigma: f64) -> Raster<f32> {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let (w, h) = src.dimensions();
    let (wi, hi) = (i64::from(w), i64::from(h));
    let mut tmp = Raster::filled(w, h, 0.0f32);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let sx = (i64::from(x) + k as i64 - radius).clamp(0, wi - 1);
                acc += kv * f64::from(src.get(sx as u32, y));
            }
            tmp.set(x, y, acc as f32);
        }
    }
    let mut out = Raster::filled(w, h, 0.0f32);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let sy = (i64::from(y) + k as i64 - radius).clamp(0, hi - 1);
                acc += kv * f64::from(tmp.get(x, sy as u32));
            }
            out.set(x, y, acc as f32);
        }
    }
    out
}

/// 3×3 median with clamped borders.
pub fn median3x3(src: &Raster<f32>) -> Raster<f32> {
    let (w, h) = src.dimensions();
    let (wi, hi) = (i64::from(w), i64::from(h));
    Raster::from_fn(w, h, |x, y| {
        let mut win = [0.0f32; 9];
        let mut n = 0;
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let sx = (i64::from(x) + dx).clamp(0, wi - 1) as u32;
                let sy = (i64::from(y) + dy).clamp(0, hi - 1) as u32;
                win[n] = src.get(sx, sy);
                n += 1;
            }
        }
        win.sort_by(f32::total_cmp);
        win[4]
    })
}

/// Halves resolution by 2×2 box averaging (odd trailing row/column dropped).
pub fn downsample2(src: &Raster<f32>) -> Raster<f32> {
    let w = (src.width() / 2).max(1);
    let h = (src.height() / 2).max(1);
    Raster::from_fn(w, h, |x, y| {
        let (sx, sy) = (2 * x, 2 * y);
        let x1 = (sx + 1).min(src.width() - 1);
        let y1 = (sy + 1).min(src.height() - 1);
        0.25 * (src.get(sx, sy) + src.get(x1, sy) + src.get(sx, y1) + src.get(x1, y1))
    })
}
