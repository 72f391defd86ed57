//! End-to-end orchestration and the on-disk artifact layout.
//!
//! The stages are plain functions over in-memory data. `stitch_unfolded`
//! starts from unfolded rasters plus the depth track, which is exactly what
//! the unfold stage writes to disk, so a split run and a single run go
//! through the same code on the same bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::compose::{self, ComposeError, Panorama};
use crate::config::{ConfigError, PipelineConfig, ProviderSpec, StitchMethod};
use crate::dwho::{
    horizontal_displacement, run_dwho, run_single_provider, DwhoCandidate, DwhoError, DwhoReport,
    PairInput, StitchEntry, StitchParams,
};
use crate::features::{
    detect_dog, detect_orb, keypoint_matches, read_match_dir, write_matches, CoordSpace,
    FeatureError, ImportBounds, Keypoint, Point, RawMatch,
};
use crate::frame::FrameSequence;
use crate::homography::{
    density_weights, estimate_homography, HomographyError, HomographyEstimate, HomographyRecord,
};
use crate::io::{self, IoError};
use crate::matchpool::{pool_pair, wrapped_dx, PairPoolReport, PoolError, POOLED_TAG};
use crate::metrics::{self, MetricsError, MetricsReport};
use crate::raster::to_gray;
use crate::unfold::{annotate_original, annular_region, unfold_sequence, DepthTrack, UnfoldError, UnfoldOutput};

pub const DEPTH_TRACK_FILE: &str = "depthtrack.json";
pub const STITCH_PARAMS_FILE: &str = "panorama.stitch.json";
pub const PANORAMA_FILE: &str = "panorama.png";
pub const METRICS_FILE: &str = "metrics.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Load,
    Unfold,
    Match,
    Pool,
    Homography,
    Dwho,
    Compose,
    Metrics,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Load => "load",
            Stage::Unfold => "unfold",
            Stage::Match => "match",
            Stage::Pool => "pool",
            Stage::Homography => "homography",
            Stage::Dwho => "dwho",
            Stage::Compose => "compose",
            Stage::Metrics => "metrics",
            Stage::Write => "write",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum StageFailure {
    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Unfold(#[from] UnfoldError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Homography(#[from] HomographyError),
    #[error(transparent)]
    Dwho(#[from] DwhoError),
    #[error(transparent)]
    Compose(#[from] ComposeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Inconsistent(String),
}

/// A module error tagged with the stage and, where known, the frame index.
#[derive(Debug, Error)]
#[error("{stage} stage failed{}: {failure}", frame.map(|f| format!(" at frame {f}")).unwrap_or_default())]
pub struct PipelineError {
    pub stage: Stage,
    pub frame: Option<u32>,
    #[source]
    pub failure: StageFailure,
}

impl PipelineError {
    pub fn new(stage: Stage, frame: Option<u32>, failure: impl Into<StageFailure>) -> Self {
        Self {
            stage,
            frame,
            failure: failure.into(),
        }
    }
}

fn at<E: Into<StageFailure>>(stage: Stage, frame: Option<u32>) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::new(stage, frame, e)
}

/// Raw correspondences of one consecutive pair, one list per provider tag.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMatches {
    pub frame_a: u32,
    pub lists: Vec<Vec<RawMatch>>,
    /// Imported records dropped for bounds, score or annulus reasons.
    pub import_warnings: usize,
}

/// Pool outcome for one pair; pairs whose pool came out empty keep the reason.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoolOutcome {
    pub frame_a: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<PairPoolReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Everything derived from the unfolded frames.
#[derive(Debug, Clone)]
pub struct StitchRun {
    pub frame_ids: Vec<u32>,
    pub matches: Vec<PairMatches>,
    pub pool: Vec<PoolOutcome>,
    /// Pooled survivors per pair, as raw matches tagged `pooled`.
    pub pooled: Vec<Vec<RawMatch>>,
    pub homographies: Vec<HomographyRecord>,
    pub params: StitchParams,
    pub report: DwhoReport,
    pub panorama: Panorama,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub unfold: UnfoldOutput,
    pub stitch: StitchRun,
}

fn check_config(config: &PipelineConfig) -> Result<(), PipelineError> {
    config.validate().map_err(at(Stage::Load, None))
}

fn check_len(n: usize, stage: Stage) -> Result<(), PipelineError> {
    if n < 2 {
        return Err(PipelineError::new(stage, None, StageFailure::TooFewFrames(n)));
    }
    Ok(())
}

pub fn unfold_stage(seq: &FrameSequence, config: &PipelineConfig) -> Result<UnfoldOutput, PipelineError> {
    unfold_sequence(seq, config).map_err(|(k, e)| {
        let frame = seq.frames.get(k).map(|f| f.index);
        PipelineError::new(Stage::Unfold, frame, e)
    })
}

#[derive(Default)]
struct FrameKeypoints {
    orb: Option<Vec<Keypoint>>,
    dog: Option<Vec<Keypoint>>,
}

fn detect_all(images: &[RgbImage], ids: &[u32], config: &PipelineConfig) -> Result<Vec<FrameKeypoints>, PipelineError> {
    let want_orb = config.providers.contains(&ProviderSpec::Orb);
    let want_dog = config.providers.contains(&ProviderSpec::Dog);
    images
        .par_iter()
        .zip(ids)
        .map(|(img, &id)| {
            let gray = to_gray(img);
            let err = at(Stage::Match, Some(id));
            let orb = want_orb.then(|| detect_orb(&gray, &config.features)).transpose();
            let dog = want_dog.then(|| detect_dog(&gray, &config.features)).transpose();
            match (orb, dog) {
                (Ok(orb), Ok(dog)) => Ok(FrameKeypoints { orb, dog }),
                (Err(e), _) | (_, Err(e)) => Err(err(e)),
            }
        })
        .collect()
}

/// Imported matches for pair `k`, converted to unfolded coordinates and
/// split by provider tag.
fn imported_lists(
    dir: &Path,
    k: usize,
    frame_a: u32,
    track: &DepthTrack,
    config: &PipelineConfig,
) -> Result<(Vec<Vec<RawMatch>>, usize), PipelineError> {
    let bounds = ImportBounds {
        unfolded: (config.unwrap_width, config.unwrap_height),
        original: Some(track.frame_size),
    };
    let report = read_match_dir(dir, frame_a, &bounds).map_err(at(Stage::Match, Some(frame_a)))?;
    let (ga, gb) = (track.geometry(k, config), track.geometry(k + 1, config));
    let mut warnings = report.warnings;
    let mut by_tag: BTreeMap<String, Vec<RawMatch>> = BTreeMap::new();
    for m in report.matches {
        let mut raw = m.raw;
        if m.space == CoordSpace::Original {
            let mapped = ga
                .unfolded_point(raw.pa.x, raw.pa.y)
                .zip(gb.unfolded_point(raw.pb.x, raw.pb.y));
            match mapped {
                Some(((xa, ya), (xb, yb))) => {
                    raw.pa = Point::new(xa, ya);
                    raw.pb = Point::new(xb, yb);
                }
                None => {
                    warnings += 1;
                    continue;
                }
            }
        }
        by_tag.entry(raw.provider.clone()).or_default().push(raw);
    }
    Ok((by_tag.into_values().collect(), warnings))
}

/// Runs every configured provider on every consecutive pair.
pub fn match_stage(
    images: &[RgbImage],
    ids: &[u32],
    track: &DepthTrack,
    config: &PipelineConfig,
) -> Result<Vec<PairMatches>, PipelineError> {
    let keypoints = detect_all(images, ids, config)?;
    let ratio = config.features.ratio;
    (0..ids.len().saturating_sub(1))
        .into_par_iter()
        .map(|k| {
            let frame_a = ids[k];
            let err = |e: FeatureError| PipelineError::new(Stage::Match, Some(frame_a), e);
            let mut pair = PairMatches {
                frame_a,
                lists: Vec::new(),
                import_warnings: 0,
            };
            for provider in &config.providers {
                match provider {
                    ProviderSpec::Orb | ProviderSpec::Dog => {
                        let pick = |f: &FrameKeypoints| match provider {
                            ProviderSpec::Orb => f.orb.clone().unwrap_or_default(),
                            _ => f.dog.clone().unwrap_or_default(),
                        };
                        let (ka, kb) = (pick(&keypoints[k]), pick(&keypoints[k + 1]));
                        let list = keypoint_matches(frame_a, &ka, &kb, ratio, &provider.tag()).map_err(err)?;
                        pair.lists.push(list);
                    }
                    ProviderSpec::Import(dir) => {
                        let (lists, warnings) = imported_lists(dir, k, frame_a, track, config)?;
                        pair.lists.extend(lists);
                        pair.import_warnings += warnings;
                    }
                }
            }
            Ok(pair)
        })
        .collect()
}

fn points(matches: &[RawMatch]) -> (Vec<Point>, Vec<Point>) {
    matches.iter().map(|m| (m.pa, m.pb)).unzip()
}

/// Homography fit whose failure only removes a candidate.
fn try_estimate(
    matches: &[RawMatch],
    provider: &str,
    seed: u64,
    config: &PipelineConfig,
) -> Result<Option<HomographyEstimate>, PipelineError> {
    let frame_a = matches.first().map(|m| m.frame_a);
    let (pa, pb) = points(matches);
    let width = f64::from(config.unwrap_width);
    match estimate_homography(&pa, &pb, &config.msac, seed, provider, config.density_bins, width) {
        Ok(est) => Ok(Some(est)),
        Err(
            e @ (HomographyError::TooFew { .. }
            | HomographyError::NoConsensus { .. }
            | HomographyError::Degenerate
            | HomographyError::ZeroScale),
        ) => {
            log::debug!("pair {frame_a:?}, provider {provider}: no homography ({e})");
            Ok(None)
        }
        Err(e) => Err(PipelineError::new(Stage::Homography, frame_a, e)),
    }
}

struct PairEstimate {
    pool: PoolOutcome,
    pooled: Vec<RawMatch>,
    estimates: Vec<HomographyEstimate>,
    input: PairInput,
}

fn estimate_pair(
    k: usize,
    pair: &PairMatches,
    track: &DepthTrack,
    config: &PipelineConfig,
) -> Result<PairEstimate, PipelineError> {
    let frame_a = pair.frame_a;
    let width = f64::from(config.unwrap_width);
    let seed = config.seed ^ k as u64;
    let lists: Vec<Vec<RawMatch>> = pair.lists.iter().filter(|l| !l.is_empty()).cloned().collect();

    let (pool, pooled) = match pool_pair(frame_a, &lists, track.center_offset(k), &config.pool, width) {
        Ok((set, report)) => {
            let raw: Vec<RawMatch> = set.matches.iter().map(|m| m.to_raw(frame_a)).collect();
            let outcome = PoolOutcome {
                frame_a,
                report: Some(report),
                failure: None,
            };
            (outcome, raw)
        }
        Err(e @ (PoolError::Empty(_) | PoolError::AllFiltered(_))) => {
            let outcome = PoolOutcome {
                frame_a,
                report: None,
                failure: Some(e.to_string()),
            };
            (outcome, Vec::new())
        }
        Err(e) => return Err(PipelineError::new(Stage::Pool, Some(frame_a), e)),
    };

    let mut estimates = Vec::new();
    match config.stitch_method {
        StitchMethod::Dwho => {
            for list in &lists {
                estimates.extend(try_estimate(list, &list[0].provider, seed, config)?);
            }
            if !pooled.is_empty() {
                estimates.extend(try_estimate(&pooled, POOLED_TAG, seed, config)?);
            }
        }
        StitchMethod::SingleProvider => {
            if let Some(first) = pair.lists.first().filter(|l| !l.is_empty()) {
                estimates.extend(try_estimate(first, &first[0].provider, seed, config)?);
            }
        }
    }

    let displacement = if pooled.is_empty() {
        None
    } else {
        let d: Vec<f64> = pooled.iter().map(|m| wrapped_dx(m.pa, m.pb, width)).collect();
        let xs: Vec<f64> = pooled.iter().map(|m| m.pa.x).collect();
        let w = density_weights(&xs, config.density_bins, width)
            .map_err(at(Stage::Dwho, Some(frame_a)))?;
        Some(horizontal_displacement(&d, &w).map_err(at(Stage::Dwho, Some(frame_a)))?)
    };
    let input = PairInput {
        frame_a,
        candidates: estimates.iter().map(DwhoCandidate::from_estimate).collect(),
        displacement,
    };
    Ok(PairEstimate {
        pool,
        pooled,
        estimates,
        input,
    })
}

/// Matching through compositing and pair metrics, starting from unfolded
/// rasters.
pub fn stitch_unfolded(
    images: &[RgbImage],
    ids: &[u32],
    track: &DepthTrack,
    config: &PipelineConfig,
) -> Result<StitchRun, PipelineError> {
    check_config(config)?;
    check_len(images.len(), Stage::Match)?;
    if ids.len() != images.len() || track.centers_smoothed.len() != images.len() {
        let msg = format!(
            "{} unfolded frames, {} indices, {} track entries",
            images.len(),
            ids.len(),
            track.centers_smoothed.len()
        );
        return Err(PipelineError::new(Stage::Load, None, StageFailure::Inconsistent(msg)));
    }
    let matches = match_stage(images, ids, track, config)?;
    let estimated = matches
        .par_iter()
        .enumerate()
        .map(|(k, pair)| estimate_pair(k, pair, track, config))
        .collect::<Result<Vec<_>, _>>()?;

    let inputs: Vec<PairInput> = estimated.iter().map(|e| e.input.clone()).collect();
    let dwho_result = match config.stitch_method {
        StitchMethod::Dwho => run_dwho(&inputs, config.epsilon, config.dwho_gain),
        StitchMethod::SingleProvider => run_single_provider(&inputs),
    };
    let (params, report) = dwho_result.map_err(|e| {
        let frame = match &e {
            DwhoError::Unbridgeable(f) => Some(*f),
            _ => None,
        };
        PipelineError::new(Stage::Dwho, frame, e)
    })?;

    let panorama = compose_stage(images, ids, &params, config)?;
    let metrics = pair_metrics(images, &params)?;

    let mut homographies = Vec::new();
    let mut pool = Vec::with_capacity(estimated.len());
    let mut pooled = Vec::with_capacity(estimated.len());
    for e in estimated {
        homographies.extend(e.estimates.iter().map(|est| HomographyRecord::new(e.input.frame_a, est)));
        pool.push(e.pool);
        pooled.push(e.pooled);
    }
    Ok(StitchRun {
        frame_ids: ids.to_vec(),
        matches,
        pool,
        pooled,
        homographies,
        params,
        report,
        panorama,
        metrics,
    })
}

/// Cylindrical projection of every unfolded frame, compositing and the
/// optional width cap.
pub fn compose_stage(
    images: &[RgbImage],
    ids: &[u32],
    params: &StitchParams,
    config: &PipelineConfig,
) -> Result<Panorama, PipelineError> {
    let projected = images
        .par_iter()
        .zip(ids)
        .map(|(img, &id)| compose::cylindrical_project(img, config.focal_length).map_err(at(Stage::Compose, Some(id))))
        .collect::<Result<Vec<_>, _>>()?;
    let pan = compose::composite(&projected, ids, params, config.horizontal_threshold)
        .map_err(at(Stage::Compose, None))?;
    match config.max_panorama_width {
        Some(w) => compose::post_stitch_adjust(pan, w).map_err(at(Stage::Compose, None)),
        None => Ok(pan),
    }
}

/// Overlap-band SSIM of every adjacent pair under the chosen offsets.
pub fn pair_metrics(images: &[RgbImage], params: &StitchParams) -> Result<MetricsReport, PipelineError> {
    if params.records.len() + 1 != images.len() {
        let msg = format!("{} offset records for {} frames", params.records.len(), images.len());
        return Err(PipelineError::new(Stage::Metrics, None, StageFailure::Inconsistent(msg)));
    }
    let pair_ssim = params
        .records
        .par_iter()
        .enumerate()
        .map(|(k, r)| {
            metrics::overlap_ssim(&images[k], &images[k + 1], r.dy, r.dx).map_err(at(Stage::Metrics, Some(r.frame_a)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MetricsReport::with_pairs(pair_ssim))
}

/// Unfold and stitch a loaded sequence, keeping every intermediate.
pub fn run_full(seq: &FrameSequence, config: &PipelineConfig) -> Result<PipelineRun, PipelineError> {
    check_config(config)?;
    check_len(seq.len(), Stage::Load)?;
    let unfold = unfold_stage(seq, config)?;
    let images: Vec<RgbImage> = unfold.frames.iter().map(|f| f.raster.clone()).collect();
    let ids: Vec<u32> = unfold.frames.iter().map(|f| f.index).collect();
    let stitch = stitch_unfolded(&images, &ids, &unfold.track, config)?;
    Ok(PipelineRun { unfold, stitch })
}

pub fn run_pipeline(seq: &FrameSequence, config: &PipelineConfig) -> Result<(Panorama, MetricsReport), PipelineError> {
    let run = run_full(seq, config)?;
    Ok((run.stitch.panorama, run.stitch.metrics))
}

/// Crops panorama and reference to their common top-left region and fills
/// the reference fields of `report`.
pub fn compare_reference(
    report: &mut MetricsReport,
    panorama: &RgbImage,
    reference: &RgbImage,
) -> Result<(), PipelineError> {
    let w = panorama.width().min(reference.width());
    let h = panorama.height().min(reference.height());
    let crop = |img: &RgbImage| image::imageops::crop_imm(img, 0, 0, w, h).to_image();
    let (a, b) = (crop(panorama), crop(reference));
    report.rmse_reference = Some(metrics::rmse(&a, &b).map_err(at(Stage::Metrics, None))?);
    report.ssim_reference = Some(metrics::ssim_rgb(&a, &b).map_err(at(Stage::Metrics, None))?);
    Ok(())
}

// ---------------------------------------------------------------------------
// Artifacts

pub fn unfolded_file_name(index: u32) -> String {
    format!("unfolded_{index:06}.png")
}

fn write_err(e: impl Into<StageFailure>) -> PipelineError {
    PipelineError::new(Stage::Write, None, e)
}

/// `unfolded_*`, `annular_*`, `annotated_*` rasters and `depthtrack.json`.
pub fn write_unfold_artifacts(dir: &Path, seq: &FrameSequence, out: &UnfoldOutput) -> Result<(), PipelineError> {
    io::ensure_dir(dir).map_err(write_err)?;
    seq.frames
        .par_iter()
        .zip(&out.frames)
        .enumerate()
        .try_for_each(|(k, (frame, unfolded))| {
            let (ri, ro) = (out.track.r_inner, out.track.r_outer[k]);
            let c = out.track.centers_smoothed[k];
            let i = frame.index;
            let annotated = annotate_original(frame, c, ri, ro).map_err(at(Stage::Unfold, Some(i)))?;
            io::write_rgb(&dir.join(unfolded_file_name(i)), &unfolded.raster).map_err(write_err)?;
            io::write_rgb(&dir.join(format!("annular_{i:06}.png")), &annular_region(frame, c, ri, ro))
                .map_err(write_err)?;
            io::write_rgb(&dir.join(format!("annotated_{i:06}.png")), &annotated).map_err(write_err)
        })?;
    io::write_json(&dir.join(DEPTH_TRACK_FILE), &out.track).map_err(write_err)
}

/// Reads what `write_unfold_artifacts` wrote: frame indices, rasters and track.
pub fn load_unfolded(dir: &Path) -> Result<(Vec<u32>, Vec<RgbImage>, DepthTrack), PipelineError> {
    let load = |e: IoError| PipelineError::new(Stage::Load, None, e);
    let text = io::read_text(&dir.join(DEPTH_TRACK_FILE)).map_err(load)?;
    let track: DepthTrack = serde_json::from_str(&text).map_err(|e| {
        load(IoError::Corrupt {
            file: dir.join(DEPTH_TRACK_FILE),
            reason: e.to_string(),
        })
    })?;
    let entries = fs::read_dir(dir).map_err(|source| {
        load(IoError::Io {
            path: dir.to_path_buf(),
            source,
        })
    })?;
    let mut ids: Vec<u32> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let num = name.strip_prefix("unfolded_")?.strip_suffix(".png")?;
            (num.len() == 6).then(|| num.parse().ok()).flatten()
        })
        .collect();
    ids.sort_unstable();
    let images = ids
        .par_iter()
        .map(|&i| io::read_rgb(&dir.join(unfolded_file_name(i))).map_err(at(Stage::Load, Some(i))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((ids, images, track))
}

/// One `<provider>_<frame_a>.matches.jsonl` file per provider tag and pair.
pub fn write_match_artifacts(dir: &Path, pairs: &[PairMatches]) -> Result<Vec<PathBuf>, PipelineError> {
    io::ensure_dir(dir).map_err(write_err)?;
    let mut written = Vec::new();
    for pair in pairs {
        let mut by_tag: BTreeMap<&str, Vec<RawMatch>> = BTreeMap::new();
        for m in pair.lists.iter().flatten() {
            by_tag.entry(m.provider.as_str()).or_default().push(m.clone());
        }
        for (tag, list) in by_tag {
            let safe: String = tag
                .chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '-' })
                .collect();
            let path = dir.join(format!("{safe}_{:06}.matches.jsonl", pair.frame_a));
            write_matches(&path, &list).map_err(write_err)?;
            written.push(path);
        }
    }
    Ok(written)
}

pub fn read_stitch_params(path: &Path) -> Result<StitchParams, PipelineError> {
    let text = io::read_text(path).map_err(at(Stage::Load, None))?;
    let entries: Vec<StitchEntry> = serde_json::from_str(&text).map_err(|e| {
        PipelineError::new(
            Stage::Load,
            None,
            IoError::Corrupt {
                file: path.to_path_buf(),
                reason: e.to_string(),
            },
        )
    })?;
    Ok(StitchParams::from_entries(&entries))
}

/// Match files, pooled survivors, reports, stitch params, panorama and metrics.
pub fn write_stitch_artifacts(dir: &Path, run: &StitchRun) -> Result<(), PipelineError> {
    io::ensure_dir(dir).map_err(write_err)?;
    write_match_artifacts(&dir.join("matches"), &run.matches)?;
    let pooled_dir = dir.join("pooled");
    io::ensure_dir(&pooled_dir).map_err(write_err)?;
    for (pair, pooled) in run.matches.iter().zip(&run.pooled) {
        let path = pooled_dir.join(format!("{POOLED_TAG}_{:06}.matches.jsonl", pair.frame_a));
        write_matches(&path, pooled).map_err(write_err)?;
    }
    let json = |name: &str| dir.join(name);
    io::write_json(&json("pool_report.json"), &run.pool).map_err(write_err)?;
    io::write_json(&json("homographies.json"), &run.homographies).map_err(write_err)?;
    io::write_json(&json(STITCH_PARAMS_FILE), &run.params.entries()).map_err(write_err)?;
    io::write_json(&json("dwho_report.json"), &run.report).map_err(write_err)?;
    io::write_json(&json("provenance.json"), &run.panorama.provenance).map_err(write_err)?;
    io::write_json(&json(METRICS_FILE), &run.metrics).map_err(write_err)?;
    io::write_rgb(&dir.join(PANORAMA_FILE), &run.panorama.image).map_err(write_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::Frame;
    use crate::synth::{render_sequence, MotionSpec, SynthScene};

    fn synthetic(frames: usize, dy: f64, dx: f64) -> (FrameSequence, PipelineConfig) {
        let scene = SynthScene::from_motion(&MotionSpec::constant(frames, dy, dx), 0.0, 5).unwrap();
        let (seq, _) = render_sequence(&scene, 1).unwrap();
        (seq, scene.pipeline_config())
    }

    #[test]
    fn single_frame_is_rejected() {
        let (seq, cfg) = synthetic(1, 0.0, 0.0);
        let err = run_pipeline(&seq, &cfg).unwrap_err();
        assert!(err.to_string().contains("need at least 2 frames"), "{err}");
        assert!(matches!(err.failure, StageFailure::TooFewFrames(1)));
    }

    #[test]
    fn identical_frames_give_unit_pair_ssim() {
        let (seq, cfg) = synthetic(1, 0.0, 0.0);
        let f = seq.frames[0].clone();
        let seq = FrameSequence::new(vec![f.clone(), Frame::new(2, f.color, f.depth)]);
        let run = run_full(&seq, &cfg).unwrap();
        let r = &run.stitch.params.records[0];
        assert!(r.dy.abs() < 0.5 && r.dx.abs() < 0.5, "{r:?}");
        assert!((run.stitch.metrics.pair_ssim[0] - 1.0).abs() < 1e-9);
        let unfolded = &run.unfold.frames[0].raster;
        assert_eq!(run.stitch.panorama.image.dimensions(), unfolded.dimensions());
    }

    #[test]
    fn errors_carry_stage_and_frame() {
        let (mut seq, mut cfg) = synthetic(2, 10.0, 0.0);
        seq.frames[1].depth = None;
        cfg.depth_fallback = false;
        let err = run_full(&seq, &cfg).unwrap_err();
        assert_eq!(err.stage, Stage::Unfold);
        assert_eq!(err.frame, Some(seq.frames[1].index));
    }

    #[test]
    fn unfolded_round_trip_reproduces_stitch() {
        let (seq, cfg) = synthetic(4, 10.0, 2.0);
        let run = run_full(&seq, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_unfold_artifacts(dir.path(), &seq, &run.unfold).unwrap();
        let (ids, images, track) = load_unfolded(dir.path()).unwrap();
        assert_eq!(track, run.unfold.track);
        let again = stitch_unfolded(&images, &ids, &track, &cfg).unwrap();
        assert_eq!(again.panorama.image, run.stitch.panorama.image);
        assert_eq!(again.params, run.stitch.params);
    }

    #[test]
    fn match_files_are_importable() {
        let (seq, mut cfg) = synthetic(3, 10.0, 0.0);
        let run = run_full(&seq, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_match_artifacts(dir.path(), &run.stitch.matches).unwrap();
        cfg.providers = vec![ProviderSpec::Import(dir.path().to_path_buf())];
        let ids = &run.stitch.frame_ids;
        let images: Vec<RgbImage> = run.unfold.frames.iter().map(|f| f.raster.clone()).collect();
        let imported = match_stage(&images, ids, &run.unfold.track, &cfg).unwrap();
        for (a, b) in imported.iter().zip(&run.stitch.matches) {
            assert_eq!(a.import_warnings, 0);
            let mut flat_a: Vec<_> = a.lists.iter().flatten().cloned().collect();
            let mut flat_b: Vec<_> = b.lists.iter().flatten().cloned().collect();
            let key = |m: &RawMatch| (m.provider.clone(), m.pa.x.to_bits(), m.pa.y.to_bits());
            flat_a.sort_by_key(key);
            flat_b.sort_by_key(key);
            assert_eq!(flat_a, flat_b);
        }
    }
}
