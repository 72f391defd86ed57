//! Point correspondence providers between consecutive unfolded frames.

mod dog;
mod import;
mod matching;
mod orb;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dog::detect_dog;
pub use import::{
    import_matches, parse_match_lines, read_match_dir, write_matches, CoordSpace, ImportBounds,
    ImportReport, ImportedMatch, MatchRecord,
};
pub use matching::match_descriptors;
pub use orb::{brief_pattern, detect_orb};

/// Smallest image side the detectors accept.
pub const MIN_DETECT_SIZE: u32 = 32;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("image {width}x{height} is smaller than {MIN_DETECT_SIZE}x{MIN_DETECT_SIZE}")]
    TooSmall { width: u32, height: u32 },
    #[error("cannot match binary descriptors against float descriptors")]
    MixedDescriptors,
    #[error("{file}:{line}: malformed match record: {reason}")]
    Malformed {
        file: String,
        line: usize,
        reason: String,
    },
    #[error("{file}:{line}: record is for pair ({a}, {b}), expected ({expected}, {})", expected + 1)]
    WrongPair {
        file: String,
        line: usize,
        a: u32,
        b: u32,
        expected: u32,
    },
    #[error("i/o error on {file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Descriptor {
    /// 256 bits, least significant bit of word 0 first.
    Binary([u64; 4]),
    /// 64 floats with unit L2 norm.
    Float(Box<[f32; 64]>),
}

impl Descriptor {
    pub fn is_binary(&self) -> bool {
        matches!(self, Descriptor::Binary(_))
    }
}

pub fn hamming(a: &[u64; 4], b: &[u64; 4]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub response: f64,
    pub orientation: f64,
    pub descriptor: Descriptor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Self) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// One correspondence between frame `frame_a` and `frame_b = frame_a + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMatch {
    pub frame_a: u32,
    pub frame_b: u32,
    pub pa: Point,
    pub pb: Point,
    pub score: f64,
    pub provider: String,
}

fn check_size(width: u32, height: u32) -> Result<(), FeatureError> {
    if width < MIN_DETECT_SIZE || height < MIN_DETECT_SIZE {
        return Err(FeatureError::TooSmall { width, height });
    }
    Ok(())
}

/// Detect-and-match helper used by the built-in providers.
pub fn keypoint_matches(
    frame_a: u32,
    ka: &[Keypoint],
    kb: &[Keypoint],
    ratio: f64,
    provider: &str,
) -> Result<Vec<RawMatch>, FeatureError> {
    Ok(match_descriptors(ka, kb, ratio)?
        .into_iter()
        .map(|m| RawMatch {
            frame_a,
            frame_b: frame_a + 1,
            pa: Point::new(ka[m.a].x, ka[m.a].y),
            pb: Point::new(kb[m.b].x, kb[m.b].y),
            score: m.score,
            provider: provider.to_string(),
        })
        .collect())
}
