//! Normalized DLT, MSAC and horizontal density weights.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::MsacConfig;
use crate::features::Point;

pub type Mat3 = Matrix3<f64>;

/// Relative gap below which the two smallest singular values of the DLT
/// system count as equal (rank-deficient configuration).
const DEGENERACY_TOL: f64 = 1e-9;
/// Minimum triangle area (pixels²) for three points of a sample.
const MIN_SAMPLE_AREA: f64 = 1e-6;
/// Degenerate samples tolerated per allowed iteration.
const SKIP_FACTOR: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum HomographyError {
    #[error("need at least {need} correspondences, got {got}")]
    TooFew { got: usize, need: usize },
    #[error("source and destination point counts differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("degenerate point configuration")]
    Degenerate,
    #[error("homography has zero projective scale")]
    ZeroScale,
    #[error("best model has {best} inliers, need {need}")]
    NoConsensus { best: usize, need: usize },
    #[error("x = {x} lies outside [0, {width})")]
    OutOfRange { x: f64, width: f64 },
    #[error("density weights need at least one point and one bin")]
    EmptyHistogram,
}

pub fn apply(h: &Mat3, p: Point) -> Option<Point> {
    let v = h * Vector3::new(p.x, p.y, 1.0);
    (v.z.abs() > f64::EPSILON * (v.x.abs() + v.y.abs() + 1.0))
        .then(|| Point::new(v.x / v.z, v.y / v.z))
}

/// Similarity taking the points to centroid 0, mean distance √2.
fn normalizer(pts: &[Point]) -> Result<Mat3, HomographyError> {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.y).sum::<f64>() / n;
    let mean = pts.iter().map(|p| (p.x - cx).hypot(p.y - cy)).sum::<f64>() / n;
    if mean <= f64::EPSILON {
        return Err(HomographyError::Degenerate);
    }
    let s = std::f64::consts::SQRT_2 / mean;
    Ok(Mat3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn normalize_scale(h: Mat3) -> Result<Mat3, HomographyError> {
    let z = h[(2, 2)];
    if z.abs() <= 1e-12 * h.norm() {
        return Err(HomographyError::ZeroScale);
    }
    let h = h / z;
    if (h[(0, 0)] * h[(1, 1)] - h[(0, 1)] * h[(1, 0)]).abs() <= f64::EPSILON {
        return Err(HomographyError::Degenerate);
    }
    Ok(h)
}

/// Hartley-normalized DLT for `H · src ≃ dst`, scaled so `H[2][2] = 1`.
pub fn dlt_homography(src: &[Point], dst: &[Point]) -> Result<Mat3, HomographyError> {
    if src.len() != dst.len() {
        return Err(HomographyError::LengthMismatch(src.len(), dst.len()));
    }
    if src.len() < 4 {
        return Err(HomographyError::TooFew {
            got: src.len(),
            need: 4,
        });
    }
    let ts = normalizer(src)?;
    let td = normalizer(dst)?;
    let rows = (2 * src.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (k, (p, q)) in src.iter().zip(dst).enumerate() {
        let p = ts * Vector3::new(p.x, p.y, 1.0);
        let q = td * Vector3::new(q.x, q.y, 1.0);
        let (x, y, u, v) = (p.x, p.y, q.x, q.y);
        let r = 2 * k;
        for (c, val) in [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u].into_iter().enumerate() {
            a[(r, c)] = val;
        }
        for (c, val) in [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v].into_iter().enumerate() {
            a[(r + 1, c)] = val;
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let (s0, s1) = (svd.singular_values[order[0]], svd.singular_values[order[1]]);
    let smax = svd.singular_values[order[8]];
    if s1 - s0 <= DEGENERACY_TOL * smax {
        return Err(HomographyError::Degenerate);
    }
    let h = v_t.row(order[0]);
    let hn = Mat3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td.try_inverse().ok_or(HomographyError::Degenerate)?;
    normalize_scale(td_inv * hn * ts)
}

/// Root mean square of the forward (`H·src` vs `dst`) and backward
/// (`H⁻¹·dst` vs `src`) transfer distances; infinite if either side maps
/// to infinity.
pub fn symmetric_transfer_error(h: &Mat3, h_inv: &Mat3, src: Point, dst: Point) -> f64 {
    match (apply(h, src), apply(h_inv, dst)) {
        (Some(f), Some(b)) => {
            let (df, db) = (f.distance(dst), b.distance(src));
            ((df * df + db * db) / 2.0).sqrt()
        }
        _ => f64::INFINITY,
    }
}

fn twice_area(a: Point, b: Point, c: Point) -> f64 {
    ((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)).abs()
}

fn has_collinear_triple(p: [Point; 4]) -> bool {
    [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)]
        .iter()
        .any(|&(i, j, k)| twice_area(p[i], p[j], p[k]) / 2.0 < MIN_SAMPLE_AREA)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsacFit {
    pub h: Mat3,
    pub inlier_mask: Vec<bool>,
    pub confidence: f64,
    pub iterations: usize,
}

impl MsacFit {
    pub fn inlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|&&b| b).count()
    }
}

/// Total truncated cost and inlier mask of `h` over all correspondences.
fn score_model(h: &Mat3, src: &[Point], dst: &[Point], t2: f64) -> Option<(f64, Vec<bool>)> {
    let h_inv = h.try_inverse()?;
    let mut cost = 0.0;
    let mask = src
        .iter()
        .zip(dst)
        .map(|(&p, &q)| {
            let e = symmetric_transfer_error(h, &h_inv, p, q);
            let e2 = e * e;
            cost += e2.min(t2);
            e2 < t2
        })
        .collect();
    Some((cost, mask))
}

fn required_iterations(inlier_ratio: f64, confidence: f64, cap: usize) -> usize {
    if inlier_ratio >= 1.0 {
        return 1;
    }
    let good = inlier_ratio.powi(4);
    if good <= 0.0 {
        return cap;
    }
    let n = (1.0 - confidence).ln() / (1.0 - good).ln();
    if n.is_finite() {
        (n.ceil() as usize).clamp(1, cap)
    } else {
        cap
    }
}

/// MSAC over 4-point samples, followed by a DLT refit on the inliers.
pub fn msac_homography(
    src: &[Point],
    dst: &[Point],
    cfg: &MsacConfig,
    seed: u64,
) -> Result<MsacFit, HomographyError> {
    if src.len() != dst.len() {
        return Err(HomographyError::LengthMismatch(src.len(), dst.len()));
    }
    let need = cfg.min_inliers.max(4);
    let n = src.len();
    if n < need {
        return Err(HomographyError::TooFew { got: n, need });
    }
    let t2 = cfg.inlier_threshold * cfg.inlier_threshold;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Mat3, Vec<bool>)> = None;
    let mut limit = cfg.max_iterations;
    let (mut iterations, mut skipped) = (0, 0);
    while iterations < limit && skipped <= SKIP_FACTOR * cfg.max_iterations {
        let idx = rand::seq::index::sample(&mut rng, n, 4);
        let s = [0, 1, 2, 3].map(|k| src[idx.index(k)]);
        let d = [0, 1, 2, 3].map(|k| dst[idx.index(k)]);
        if has_collinear_triple(s) || has_collinear_triple(d) {
            skipped += 1;
            continue;
        }
        iterations += 1;
        let Ok(h) = dlt_homography(&s, &d) else {
            continue;
        };
        let Some((cost, mask)) = score_model(&h, src, dst, t2) else {
            continue;
        };
        if best.as_ref().is_none_or(|b| cost < b.0) {
            let ratio = mask.iter().filter(|&&b| b).count() as f64 / n as f64;
            limit = required_iterations(ratio, cfg.confidence_target, cfg.max_iterations);
            best = Some((cost, h, mask));
        }
    }
    let (cost, mut h, mut mask) = best.ok_or(HomographyError::NoConsensus { best: 0, need })?;
    let inliers = |m: &[bool]| m.iter().filter(|&&b| b).count();
    let (s_in, d_in): (Vec<Point>, Vec<Point>) = src
        .iter()
        .zip(dst)
        .zip(&mask)
        .filter(|(_, &keep)| keep)
        .map(|((&p, &q), _)| (p, q))
        .unzip();
    if let Ok(refit) = dlt_homography(&s_in, &d_in) {
        if let Some((c2, m2)) = score_model(&refit, src, dst, t2) {
            if c2 <= cost || inliers(&m2) >= inliers(&mask) {
                h = refit;
                mask = m2;
            }
        }
    }
    let count = inliers(&mask);
    if count < need {
        return Err(HomographyError::NoConsensus { best: count, need });
    }
    Ok(MsacFit {
        h,
        confidence: count as f64 / n as f64,
        inlier_mask: mask,
        iterations,
    })
}

/// Inverse-count weights from an equal-width histogram of `xs` over
/// `[0, width)`, rescaled to mean 1.
pub fn density_weights(xs: &[f64], bins: usize, width: f64) -> Result<Vec<f64>, HomographyError> {
    if xs.is_empty() || bins == 0 {
        return Err(HomographyError::EmptyHistogram);
    }
    let bin_of = |x: f64| -> Result<usize, HomographyError> {
        if !(0.0..width).contains(&x) {
            return Err(HomographyError::OutOfRange { x, width });
        }
        Ok(((x / width * bins as f64) as usize).min(bins - 1))
    };
    let idx: Vec<usize> = xs.iter().map(|&x| bin_of(x)).collect::<Result<_, _>>()?;
    let mut counts = vec![0usize; bins];
    for &b in &idx {
        counts[b] += 1;
    }
    let raw: Vec<f64> = idx.iter().map(|&b| 1.0 / counts[b] as f64).collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    Ok(raw.into_iter().map(|w| w / mean).collect())
}

/// One provider's (or the pool's) fitted model with its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct HomographyEstimate {
    pub h: Mat3,
    pub inlier_mask: Vec<bool>,
    pub confidence: f64,
    /// Density weight per input correspondence.
    pub weights: Vec<f64>,
    pub provider: String,
}

impl HomographyEstimate {
    pub fn inlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|&&b| b).count()
    }

    /// Mean density weight over the inliers.
    pub fn inlier_weight(&self) -> f64 {
        let (sum, n) = self
            .weights
            .iter()
            .zip(&self.inlier_mask)
            .filter(|(_, &m)| m)
            .fold((0.0, 0usize), |(s, n), (w, _)| (s + w, n + 1));
        if n == 0 {
            1.0
        } else {
            sum / n as f64
        }
    }

    /// Vertical translation element `H[1][2]`.
    pub fn vertical_translation(&self) -> f64 {
        self.h[(1, 2)]
    }
}

/// Fits `H · pb ≃ pa` by MSAC and attaches density weights of the `xa`
/// coordinates.
pub fn estimate_homography(
    pa: &[Point],
    pb: &[Point],
    cfg: &MsacConfig,
    seed: u64,
    provider: &str,
    bins: usize,
    width: f64,
) -> Result<HomographyEstimate, HomographyError> {
    let fit = msac_homography(pb, pa, cfg, seed)?;
    let xs: Vec<f64> = pa.iter().map(|p| p.x).collect();
    let weights = density_weights(&xs, bins, width)?;
    Ok(HomographyEstimate {
        h: fit.h,
        inlier_mask: fit.inlier_mask,
        confidence: fit.confidence,
        weights,
        provider: provider.to_string(),
    })
}

/// `homographies.json` entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomographyRecord {
    pub frame_a: u32,
    pub provider: String,
    pub h: [f64; 9],
    pub confidence: f64,
    pub inliers: usize,
    pub matches: usize,
}

impl HomographyRecord {
    pub fn new(frame_a: u32, est: &HomographyEstimate) -> Self {
        let mut h = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                h[3 * r + c] = est.h[(r, c)];
            }
        }
        Self {
            frame_a,
            provider: est.provider.clone(),
            h,
            confidence: est.confidence,
            inliers: est.inlier_count(),
            matches: est.inlier_mask.len(),
        }
    }
}
