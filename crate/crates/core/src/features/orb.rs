//! Oriented FAST corners with steered BRIEF descriptors.

use std::sync::OnceLock;

use image::GrayImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{check_size, Descriptor, FeatureError, Keypoint};
use crate::config::FeatureConfig;
use crate::raster::{gaussian_blur, Raster};

/// Bresenham circle of radius 3, clockwise from 12 o'clock.
const FAST_CIRCLE: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];
const FAST_ARC: usize = 9;
const ORIENTATION_RADIUS: i32 = 15;
const PATTERN_RADIUS: i32 = 13;
const BORDER: u32 = 16;
const HARRIS_HALF_WINDOW: i32 = 3;
const BRIEF_SMOOTHING: f64 = 2.0;
/// Seed of the generator that draws the BRIEF sampling pattern.
pub const BRIEF_PATTERN_SEED: u64 = 0;

/// Sampling offsets `(p, q)` of one BRIEF intensity test.
pub type BriefPair = ((i32, i32), (i32, i32));

/// 256 point pairs drawn from an isotropic Gaussian (σ = 31/5) and clipped
/// to a disk of radius 13 by rejection.
pub fn brief_pattern() -> &'static [BriefPair; 256] {
    static PATTERN: OnceLock<[BriefPair; 256]> = OnceLock::new();
    PATTERN.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(BRIEF_PATTERN_SEED);
        let normal = Normal::new(0.0f64, 31.0 / 5.0).expect("valid sigma");
        let draw = |rng: &mut ChaCha8Rng| loop {
            let x = normal.sample(rng).round() as i32;
            let y = normal.sample(rng).round() as i32;
            if x * x + y * y <= PATTERN_RADIUS * PATTERN_RADIUS {
                return (x, y);
            }
        };
        let mut out = [((0, 0), (0, 0)); 256];
        for slot in out.iter_mut() {
            *slot = loop {
                let p = draw(&mut rng);
                let q = draw(&mut rng);
                if p != q {
                    break (p, q);
                }
            };
        }
        out
    })
}

fn is_fast_corner(img: &GrayImage, x: u32, y: u32, threshold: u8) -> bool {
    let p = i32::from(img.get_pixel(x, y).0[0]);
    let t = i32::from(threshold);
    let ring: [i32; 16] = std::array::from_fn(|k| {
        let (dx, dy) = FAST_CIRCLE[k];
        i32::from(
            img.get_pixel((x as i32 + dx) as u32, (y as i32 + dy) as u32)
                .0[0],
        )
    });
    let mut brighter = 0;
    let mut darker = 0;
    for k in 0..16 + FAST_ARC - 1 {
        let v = ring[k % 16];
        if v > p + t {
            brighter += 1;
            darker = 0;
        } else if v < p - t {
            darker += 1;
            brighter = 0;
        } else {
            brighter = 0;
            darker = 0;
        }
        if brighter >= FAST_ARC || darker >= FAST_ARC {
            return true;
        }
    }
    false
}

/// Integer Sobel gradients; exact so that symmetric structures tie exactly.
fn sobel(img: &GrayImage) -> (Raster<i32>, Raster<i32>) {
    let (w, h) = img.dimensions();
    let at = |x: i64, y: i64| -> i32 {
        let xc = x.clamp(0, i64::from(w) - 1) as u32;
        let yc = y.clamp(0, i64::from(h) - 1) as u32;
        i32::from(img.get_pixel(xc, yc).0[0])
    };
    let gx = Raster::from_fn(w, h, |x, y| {
        let (x, y) = (i64::from(x), i64::from(y));
        (at(x + 1, y - 1) + 2 * at(x + 1, y) + at(x + 1, y + 1))
            - (at(x - 1, y - 1) + 2 * at(x - 1, y) + at(x - 1, y + 1))
    });
    let gy = Raster::from_fn(w, h, |x, y| {
        let (x, y) = (i64::from(x), i64::from(y));
        (at(x - 1, y + 1) + 2 * at(x, y + 1) + at(x + 1, y + 1))
            - (at(x - 1, y - 1) + 2 * at(x, y - 1) + at(x + 1, y - 1))
    });
    (gx, gy)
}

fn harris(gx: &Raster<i32>, gy: &Raster<i32>, x: u32, y: u32, k: f64) -> f64 {
    let (mut sxx, mut syy, mut sxy) = (0i64, 0i64, 0i64);
    for dy in -HARRIS_HALF_WINDOW..=HARRIS_HALF_WINDOW {
        for dx in -HARRIS_HALF_WINDOW..=HARRIS_HALF_WINDOW {
            let (px, py) = ((x as i32 + dx) as u32, (y as i32 + dy) as u32);
            let (ix, iy) = (i64::from(gx.get(px, py)), i64::from(gy.get(px, py)));
            sxx += ix * ix;
            syy += iy * iy;
            sxy += ix * iy;
        }
    }
    let (sxx, syy, sxy) = (sxx as f64, syy as f64, sxy as f64);
    sxx * syy - sxy * sxy - k * (sxx + syy) * (sxx + syy)
}

/// Intensity-centroid angle over a disk of radius 15.
fn orientation(img: &GrayImage, x: u32, y: u32) -> f64 {
    let (mut m10, mut m01) = (0i64, 0i64);
    let r = ORIENTATION_RADIUS;
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy > r * r {
                continue;
            }
            let v = i64::from(img.get_pixel((x as i32 + dx) as u32, (y as i32 + dy) as u32).0[0]);
            m10 += i64::from(dx) * v;
            m01 += i64::from(dy) * v;
        }
    }
    (m01 as f64).atan2(m10 as f64)
}

fn steered_brief(smooth: &Raster<f32>, x: u32, y: u32, angle: f64) -> [u64; 4] {
    let (s, c) = angle.sin_cos();
    let at = |(px, py): (i32, i32)| -> f32 {
        let (fx, fy) = (f64::from(px), f64::from(py));
        let rx = (c * fx - s * fy).round() as i32;
        let ry = (s * fx + c * fy).round() as i32;
        smooth.get((x as i32 + rx) as u32, (y as i32 + ry) as u32)
    };
    let mut bits = [0u64; 4];
    for (i, &(p, q)) in brief_pattern().iter().enumerate() {
        if at(p) < at(q) {
            bits[i / 64] |= 1 << (i % 64);
        }
    }
    bits
}

/// FAST-9 corners ranked by Harris response, thinned by non-maximum
/// suppression (equal responses all survive), oriented by intensity
/// centroid and described with steered BRIEF. When fewer than
/// `max_keypoints` corners pass `fast_threshold`, the scan is repeated at
/// `fast_min_threshold`.
pub fn detect_orb(image: &GrayImage, cfg: &FeatureConfig) -> Result<Vec<Keypoint>, FeatureError> {
    let (w, h) = image.dimensions();
    check_size(w, h)?;
    if w <= 2 * BORDER || h <= 2 * BORDER {
        return Ok(Vec::new());
    }
    let scan = |threshold: u8| {
        let mut corners = Vec::new();
        for y in BORDER..h - BORDER {
            for x in BORDER..w - BORDER {
                if is_fast_corner(image, x, y, threshold) {
                    corners.push((x, y));
                }
            }
        }
        corners
    };
    let mut corners = scan(cfg.fast_threshold);
    if corners.len() < cfg.max_keypoints && cfg.fast_min_threshold < cfg.fast_threshold {
        corners = scan(cfg.fast_min_threshold);
    }
    if corners.is_empty() {
        return Ok(Vec::new());
    }
    let (gx, gy) = sobel(image);
    let mut scored: Vec<(f64, u32, u32)> = corners
        .iter()
        .map(|&(x, y)| (harris(&gx, &gy, x, y, cfg.harris_k), x, y))
        .collect();

    let r2 = cfg.nms_radius * cfg.nms_radius;
    let reach = cfg.nms_radius.ceil() as i64;
    let mut response = Raster::filled(w, h, f64::NEG_INFINITY);
    for &(s, x, y) in &scored {
        response.set(x, y, s);
    }
    scored.retain(|&(s, x, y)| {
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                if (dx * dx + dy * dy) as f64 > r2 || (dx == 0 && dy == 0) {
                    continue;
                }
                let (nx, ny) = (i64::from(x) + dx, i64::from(y) + dy);
                if nx < 0 || ny < 0 || nx >= i64::from(w) || ny >= i64::from(h) {
                    continue;
                }
                if response.get(nx as u32, ny as u32) > s {
                    return false;
                }
            }
        }
        true
    });
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));
    scored.truncate(cfg.max_keypoints);

    let smooth = gaussian_blur(&Raster::from_gray(image), BRIEF_SMOOTHING);
    Ok(scored
        .into_iter()
        .map(|(response, x, y)| {
            let angle = orientation(image, x, y);
            Keypoint {
                x: f64::from(x),
                y: f64::from(y),
                response,
                orientation: angle,
                descriptor: Descriptor::Binary(steered_brief(&smooth, x, y, angle)),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::hamming;
    use image::Luma;
    use rand::Rng;

    fn textured(w: u32, h: u32, seed: u64) -> GrayImage {
        // Sum of a few random blobs: corners with well defined orientation.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blobs: Vec<(f64, f64, f64, f64)> = (0..60)
            .map(|_| {
                (
                    rng.random_range(0.0..f64::from(w)),
                    rng.random_range(0.0..f64::from(h)),
                    rng.random_range(2.0..6.0),
                    rng.random_range(-120.0..120.0),
                )
            })
            .collect();
        GrayImage::from_fn(w, h, |x, y| {
            let mut v = 128.0;
            for &(bx, by, s, a) in &blobs {
                let d2 = (f64::from(x) - bx).powi(2) + (f64::from(y) - by).powi(2);
                v += a * (-d2 / (2.0 * s * s)).exp();
            }
            Luma([v.round().clamp(0.0, 255.0) as u8])
        })
    }

    #[test]
    fn pattern_is_deterministic_and_bounded() {
        let p = brief_pattern();
        assert!(p.iter().all(|&((a, b), (c, d))| a * a + b * b <= 169 && c * c + d * d <= 169));
        assert!(p.iter().all(|&(a, b)| a != b));
        assert_eq!(p[0], brief_pattern()[0]);
    }

    #[test]
    fn constant_image_has_no_keypoints() {
        let img = GrayImage::from_pixel(64, 64, Luma([77]));
        assert!(detect_orb(&img, &FeatureConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn too_small_is_rejected() {
        let img = GrayImage::new(31, 64);
        assert!(matches!(
            detect_orb(&img, &FeatureConfig::default()),
            Err(FeatureError::TooSmall { .. })
        ));
    }

    #[test]
    fn small_square_corners() {
        let mut img = GrayImage::new(200, 200);
        for y in 100..104 {
            for x in 100..104 {
                img.put_pixel(x, y, Luma([255]));
            }
        }
        let kps = detect_orb(&img, &FeatureConfig::default()).unwrap();
        assert!(kps.len() >= 4, "{} keypoints", kps.len());
        let corners = [(99.5, 99.5), (103.5, 99.5), (99.5, 103.5), (103.5, 103.5)];
        for k in &kps {
            let d = corners
                .iter()
                .map(|&(cx, cy)| (k.x - cx).hypot(k.y - cy))
                .fold(f64::INFINITY, f64::min);
            assert!(d <= 6.0, "keypoint ({}, {}) is {d} px from a corner", k.x, k.y);
        }
    }

    #[test]
    fn descriptors_survive_quarter_rotation() {
        let n = 160u32;
        let img = textured(n, n, 5);
        // Clockwise quarter turn: (x, y) -> (n - 1 - y, x).
        let rot = GrayImage::from_fn(n, n, |x, y| *img.get_pixel(y, n - 1 - x));
        let cfg = FeatureConfig {
            max_keypoints: 200,
            ..FeatureConfig::default()
        };
        let ka = detect_orb(&img, &cfg).unwrap();
        let kb = detect_orb(&rot, &cfg).unwrap();
        assert!(ka.len() >= 10);
        let mut compared = 0;
        for a in &ka {
            let (ex, ey) = (f64::from(n - 1) - a.y, a.x);
            let Some(b) = kb.iter().find(|b| b.x == ex && b.y == ey) else {
                continue;
            };
            let (Descriptor::Binary(da), Descriptor::Binary(db)) = (&a.descriptor, &b.descriptor)
            else {
                unreachable!()
            };
            let d = hamming(da, db);
            assert!(d <= 40, "hamming {d} at ({}, {})", a.x, a.y);
            compared += 1;
        }
        assert!(compared >= 5, "only {compared} counterparts found");
    }

    #[test]
    fn deterministic() {
        let img = textured(128, 96, 9);
        let cfg = FeatureConfig::default();
        assert_eq!(detect_orb(&img, &cfg).unwrap(), detect_orb(&img, &cfg).unwrap());
    }
}
