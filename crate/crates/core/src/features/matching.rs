use super::{hamming, Descriptor, FeatureError, Keypoint};

/// Index pair produced by [`match_descriptors`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescriptorMatch {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
    /// `1 - distance / max_distance`.
    pub score: f64,
}

fn distance(a: &Descriptor, b: &Descriptor) -> f64 {
    match (a, b) {
        (Descriptor::Binary(x), Descriptor::Binary(y)) => f64::from(hamming(x, y)),
        (Descriptor::Float(x), Descriptor::Float(y)) => x
            .iter()
            .zip(y.iter())
            .map(|(p, q)| {
                let d = f64::from(*p) - f64::from(*q);
                d * d
            })
            .sum::<f64>()
            .sqrt(),
        _ => unreachable!("kinds checked by caller"),
    }
}

/// (best index, best distance, second best distance) per row.
#[allow(clippy::needless_range_loop)]
fn nearest(dist: &[Vec<f64>], rows: usize, cols: usize, transpose: bool) -> Vec<(usize, f64, f64)> {
    (0..rows)
        .map(|i| {
            let mut best = (usize::MAX, f64::INFINITY);
            let mut second = f64::INFINITY;
            for j in 0..cols {
                let d = if transpose { dist[j][i] } else { dist[i][j] };
                if d < best.1 {
                    second = best.1;
                    best = (j, d);
                } else if d < second {
                    second = d;
                }
            }
            (best.0, best.1, second)
        })
        .collect()
}

/// Mutual nearest neighbours that pass the ratio test in both directions.
///
/// Applying the ratio test on both sides keeps the result symmetric:
/// swapping the inputs swaps the endpoints of the same pair set.
pub fn match_descriptors(
    ka: &[Keypoint],
    kb: &[Keypoint],
    ratio: f64,
) -> Result<Vec<DescriptorMatch>, FeatureError> {
    let binary = ka
        .iter()
        .chain(kb)
        .next()
        .map(|k| k.descriptor.is_binary());
    let Some(binary) = binary else {
        return Ok(Vec::new());
    };
    if ka.iter().chain(kb).any(|k| k.descriptor.is_binary() != binary) {
        return Err(FeatureError::MixedDescriptors);
    }
    if ka.is_empty() || kb.is_empty() {
        return Ok(Vec::new());
    }
    let max_distance = if binary { 256.0 } else { 2.0 };
    let dist: Vec<Vec<f64>> = ka
        .iter()
        .map(|a| kb.iter().map(|b| distance(&a.descriptor, &b.descriptor)).collect())
        .collect();
    let from_a = nearest(&dist, ka.len(), kb.len(), false);
    let from_b = nearest(&dist, kb.len(), ka.len(), true);
    let passes = |(_, d1, d2): (usize, f64, f64)| d2.is_infinite() || d1 < ratio * d2;
    Ok(from_a
        .iter()
        .enumerate()
        .filter_map(|(i, &fa)| {
            let j = fa.0;
            let fb = from_b[j];
            (fb.0 == i && passes(fa) && passes(fb)).then(|| DescriptorMatch {
                a: i,
                b: j,
                distance: fa.1,
                score: (1.0 - fa.1 / max_distance).clamp(0.0, 1.0),
            })
        })
        .collect())
}
