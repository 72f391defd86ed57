//! File formats: frame directories, `.dmap` depth planes, rasters and JSON
//! artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat, RgbImage};
use serde::Serialize;
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::frame::{Frame, FrameSequence};
use crate::raster::DepthMap;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("frame directory {0} does not exist")]
    MissingDirectory(PathBuf),
    #[error("no frame_%06d.png / .ppm files found in {0}")]
    NoFrames(PathBuf),
    #[error("frame indices are not contiguous: expected {expected}, found {found} ({file})")]
    NonContiguous {
        expected: u32,
        found: u32,
        file: PathBuf,
    },
    #[error("dimension mismatch: {first} is {first_dims:?} but {second} is {second_dims:?}")]
    DimensionMismatch {
        first: PathBuf,
        first_dims: (u32, u32),
        second: PathBuf,
        second_dims: (u32, u32),
    },
    #[error("corrupt file {file}: {reason}")]
    Corrupt { file: PathBuf, reason: String },
    #[error("frame {file} is too small for margin {margin}")]
    TooSmall { file: PathBuf, margin: u32 },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn corrupt(path: &Path, reason: impl Into<String>) -> IoError {
    IoError::Corrupt {
        file: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn frame_file_name(index: u32, ext: &str) -> String {
    format!("frame_{index:06}.{ext}")
}

pub fn dmap_file_name(index: u32) -> String {
    format!("frame_{index:06}.dmap")
}

fn parse_frame_index(name: &str) -> Option<u32> {
    let rest = name.strip_prefix("frame_")?;
    let (num, ext) = rest.split_once('.')?;
    if num.len() != 6 || !num.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    matches!(ext, "png" | "ppm").then(|| num.parse().ok())?
}

/// Reads an RGB raster from PNG or PPM, converting other color types.
pub fn read_rgb(path: &Path) -> Result<RgbImage, IoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let format = ImageFormat::from_path(path)
        .or_else(|_| image::guess_format(&bytes))
        .map_err(|e| corrupt(path, e.to_string()))?;
    let img = image::load_from_memory_with_format(&bytes, format)
        .map_err(|e| corrupt(path, e.to_string()))?;
    Ok(img.to_rgb8())
}

pub fn read_gray(path: &Path) -> Result<GrayImage, IoError> {
    let img = image::open(path).map_err(|e| corrupt(path, e.to_string()))?;
    Ok(img.to_luma8())
}

/// Writes PNG, binary PPM (`.ppm`) or, for grayscale, PGM (`.pgm`) by extension.
pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<(), IoError> {
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => ImageFormat::Pnm,
        _ => ImageFormat::Png,
    };
    img.save_with_format(path, format)
        .map_err(|e| corrupt(path, e.to_string()))
}

pub fn write_gray(path: &Path, img: &GrayImage) -> Result<(), IoError> {
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => ImageFormat::Pnm,
        _ => ImageFormat::Png,
    };
    img.save_with_format(path, format)
        .map_err(|e| corrupt(path, e.to_string()))
}

/// Serializes a depth plane: `DMAP1\n<w> <h>\n` then row-major f32 LE.
pub fn encode_dmap(depth: &DepthMap) -> Vec<u8> {
    let header = format!("DMAP1\n{} {}\n", depth.width(), depth.height());
    let mut out = Vec::with_capacity(header.len() + depth.as_slice().len() * 4);
    out.extend_from_slice(header.as_bytes());
    for v in depth.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_dmap(path: &Path, bytes: &[u8]) -> Result<DepthMap, IoError> {
    let magic = b"DMAP1\n";
    if !bytes.starts_with(magic) {
        return Err(corrupt(path, "missing DMAP1 header"));
    }
    let rest = &bytes[magic.len()..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| corrupt(path, "missing dimension line"))?;
    let dims = std::str::from_utf8(&rest[..nl]).map_err(|_| corrupt(path, "non-ascii header"))?;
    let mut parts = dims.split_ascii_whitespace();
    let mut dim = || -> Result<u32, IoError> {
        parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| corrupt(path, format!("bad dimension line `{dims}`")))
    };
    let (w, h) = (dim()?, dim()?);
    let payload = &rest[nl + 1..];
    let expected = w as usize * h as usize * 4;
    if payload.len() != expected {
        return Err(corrupt(
            path,
            format!("expected {expected} payload bytes, found {}", payload.len()),
        ));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if data.iter().any(|v| v.is_nan()) {
        return Err(corrupt(path, "depth contains NaN"));
    }
    Ok(DepthMap::from_vec(w, h, data).expect("length checked"))
}

pub fn read_dmap(path: &Path) -> Result<DepthMap, IoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_dmap(path, &bytes)
}

pub fn write_dmap(path: &Path, depth: &DepthMap) -> Result<(), IoError> {
    fs::write(path, encode_dmap(depth)).map_err(io_err(path))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn ensure_dir(path: &Path) -> Result<(), IoError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

/// Loads `frame_%06d.{png,ppm}` (plus optional `frame_%06d.dmap`) from `dir`.
pub fn load_sequence(dir: &Path, config: &PipelineConfig) -> Result<FrameSequence, IoError> {
    if !dir.is_dir() {
        return Err(IoError::MissingDirectory(dir.to_path_buf()));
    }
    let mut entries: Vec<(u32, PathBuf)> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name();
            parse_frame_index(name.to_str()?).map(|i| (i, e.path()))
        })
        .collect();
    if entries.is_empty() {
        return Err(IoError::NoFrames(dir.to_path_buf()));
    }
    entries.sort();

    let mut frames: Vec<Frame> = Vec::with_capacity(entries.len());
    let mut first: Option<(PathBuf, (u32, u32))> = None;
    for (k, (index, path)) in entries.iter().enumerate() {
        let expected = entries[0].0 + k as u32;
        if *index != expected {
            return Err(IoError::NonContiguous {
                expected,
                found: *index,
                file: path.clone(),
            });
        }
        let color = read_rgb(path)?;
        let dims = color.dimensions();
        match &first {
            None => first = Some((path.clone(), dims)),
            Some((fp, fd)) if *fd != dims => {
                return Err(IoError::DimensionMismatch {
                    first: fp.clone(),
                    first_dims: *fd,
                    second: path.clone(),
                    second_dims: dims,
                })
            }
            _ => {}
        }
        if dims.0 <= 2 * config.margin || dims.1 <= 2 * config.margin {
            return Err(IoError::TooSmall {
                file: path.clone(),
                margin: config.margin,
            });
        }
        let dpath = dir.join(dmap_file_name(*index));
        let depth = if dpath.exists() {
            let d = read_dmap(&dpath)?;
            if d.dimensions() != dims {
                return Err(IoError::DimensionMismatch {
                    first: path.clone(),
                    first_dims: dims,
                    second: dpath,
                    second_dims: d.dimensions(),
                });
            }
            Some(d)
        } else {
            None
        };
        frames.push(Frame::new(*index, color, depth));
    }
    Ok(FrameSequence::new(frames))
}

/// Writes a sequence in the layout `load_sequence` reads.
pub fn save_sequence(dir: &Path, seq: &FrameSequence) -> Result<(), IoError> {
    ensure_dir(dir)?;
    for f in &seq.frames {
        write_rgb(&dir.join(frame_file_name(f.index, "png")), &f.color)?;
        if let Some(d) = &f.depth {
            write_dmap(&dir.join(dmap_file_name(f.index)), d)?;
        }
    }
    Ok(())
}
