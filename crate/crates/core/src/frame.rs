use image::RgbImage;

use crate::raster::{to_gray, DepthMap, Gray8};

/// One video frame with its derived luminance and optional depth plane.
///
/// Depth follows the relative inverse-depth convention of monocular depth
/// networks: smaller values are farther from the camera, so the lumen of a
/// tube holds the minimum.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: u32,
    pub color: RgbImage,
    pub gray: Gray8,
    pub depth: Option<DepthMap>,
}

impl Frame {
    pub fn new(index: u32, color: RgbImage, depth: Option<DepthMap>) -> Self {
        let gray = to_gray(&color);
        Self {
            index,
            color,
            gray,
            depth,
        }
    }

    pub fn width(&self) -> u32 {
        self.color.width()
    }

    pub fn height(&self) -> u32 {
        self.color.height()
    }
}

/// Frames `F(1)..F(N)` of one video, all the same size, indices contiguous.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameSequence {
    pub frames: Vec<Frame>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>) -> Self {
        Self { frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dimensions(&self) -> Option<(u32, u32)> {
        self.frames.first().map(|f| (f.width(), f.height()))
    }
}
