//! Density-weighted homography optimisation: per-pair vertical and
//! horizontal offsets chosen among candidate homographies.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::homography::HomographyEstimate;
use crate::matchpool::POOLED_TAG;

#[derive(Debug, Error, PartialEq)]
pub enum DwhoError {
    #[error("displacement inputs differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("displacement needs at least one match")]
    Empty,
    #[error("weights sum to {0}, expected a positive total")]
    ZeroWeight(f64),
    #[error("no candidate homographies")]
    NoCandidates,
    #[error("candidate {0} has a non-finite vertical translation")]
    NonFinite(String),
    #[error("no pair has a usable candidate (first pair {0})")]
    Unbridgeable(u32),
}

/// Weighted mean `D = Σ d·w / Σ w` together with its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementEstimate {
    pub value: f64,
    pub d: Vec<f64>,
    pub w: Vec<f64>,
    pub n: usize,
}

/// Sums left to right so the stored inputs reproduce `value` exactly.
pub fn horizontal_displacement(d: &[f64], w: &[f64]) -> Result<DisplacementEstimate, DwhoError> {
    if d.len() != w.len() {
        return Err(DwhoError::LengthMismatch(d.len(), w.len()));
    }
    if d.is_empty() {
        return Err(DwhoError::Empty);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (di, wi) in d.iter().zip(w) {
        num += di * wi;
        den += wi;
    }
    if !(den > 0.0) {
        return Err(DwhoError::ZeroWeight(den));
    }
    Ok(DisplacementEstimate {
        value: num / den,
        d: d.to_vec(),
        w: w.to_vec(),
        n: d.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwhoCandidate {
    pub provider: String,
    /// Vertical translation element of the homography.
    pub h_y: f64,
    /// Horizontal translation element; only the single-provider baseline
    /// reads it.
    pub h_x: f64,
    pub confidence: f64,
    pub weight: f64,
}

impl DwhoCandidate {
    pub fn from_estimate(est: &HomographyEstimate) -> Self {
        Self {
            provider: est.provider.clone(),
            h_y: est.h[(1, 2)],
            h_x: est.h[(0, 2)],
            confidence: est.confidence,
            weight: est.inlier_weight(),
        }
    }
}

/// `ε (1 − gain + gain·c)`, which is `ε(3c − 2)` for the default gain.
pub fn vertical_target(confidence: f64, epsilon: f64, gain: f64) -> f64 {
    epsilon * (1.0 - gain + gain * confidence)
}

pub fn candidate_score(c: &DwhoCandidate, epsilon: f64, gain: f64, displacement: f64) -> f64 {
    c.weight * (c.h_y - vertical_target(c.confidence, epsilon, gain)).abs() + displacement.abs()
}

/// Index of the winning candidate and its score. Ties prefer the pooled
/// candidate, then the lexicographically smallest tag.
pub fn optimal_offset(
    candidates: &[DwhoCandidate],
    epsilon: f64,
    gain: f64,
    displacement: f64,
) -> Result<(usize, f64), DwhoError> {
    if let Some(bad) = candidates.iter().find(|c| !c.h_y.is_finite()) {
        return Err(DwhoError::NonFinite(bad.provider.clone()));
    }
    // |D| is shared by every candidate, so selection uses the weighted
    // residual alone and rounding in the sum cannot reorder candidates.
    let residual = |c: &DwhoCandidate| c.weight * (c.h_y - vertical_target(c.confidence, epsilon, gain)).abs();
    let k = (0..candidates.len())
        .min_by(|&i, &j| {
            let (a, b) = (&candidates[i], &candidates[j]);
            residual(a)
                .total_cmp(&residual(b))
                .then((a.provider != POOLED_TAG).cmp(&(b.provider != POOLED_TAG)))
                .then(a.provider.cmp(&b.provider))
        })
        .ok_or(DwhoError::NoCandidates)?;
    Ok((k, candidate_score(&candidates[k], epsilon, gain, displacement)))
}

/// One record per consecutive frame pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetRecord {
    pub frame_a: u32,
    pub dy: f64,
    pub dx: f64,
    pub provider: String,
    pub score: f64,
    pub bridged: bool,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StitchParams {
    pub records: Vec<OffsetRecord>,
}

/// `.stitch.json` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StitchEntry {
    pub frame: u32,
    pub dy: f64,
    pub dx: f64,
}

impl StitchParams {
    pub fn entries(&self) -> Vec<StitchEntry> {
        self.records
            .iter()
            .map(|r| StitchEntry {
                frame: r.frame_a,
                dy: r.dy,
                dx: r.dx,
            })
            .collect()
    }

    /// Offsets read back from `.stitch.json`; provider and score are not
    /// part of that format.
    pub fn from_entries(entries: &[StitchEntry]) -> Self {
        Self {
            records: entries
                .iter()
                .map(|e| OffsetRecord {
                    frame_a: e.frame,
                    dy: e.dy,
                    dx: e.dx,
                    provider: String::new(),
                    score: 0.0,
                    bridged: false,
                    clamped: false,
                })
                .collect(),
        }
    }
}

/// Inputs for one frame pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairInput {
    pub frame_a: u32,
    pub candidates: Vec<DwhoCandidate>,
    /// `None` when the pooled set was empty or fully filtered.
    pub displacement: Option<DisplacementEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRow {
    pub provider: String,
    pub h_y: f64,
    pub confidence: f64,
    pub weight: f64,
    pub target: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub frame_a: u32,
    pub displacement: Option<f64>,
    pub matches: usize,
    pub chosen: String,
    pub score: f64,
    pub candidates: Vec<CandidateRow>,
    pub bridged: bool,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DwhoReport {
    pub epsilon: f64,
    pub gain: f64,
    pub pairs: Vec<PairReport>,
    pub bridged: usize,
    /// Pairs whose negative vertical offset (backward motion) was clamped to 0.
    pub backward_motion_clamped: usize,
}

/// Fills pairs without a record: each repeats the previous record, and
/// leading ones repeat the first usable record. All are flagged as bridged.
fn bridge(
    pairs: &[PairInput],
    chosen: Vec<Option<OffsetRecord>>,
    report: &mut DwhoReport,
) -> Result<StitchParams, DwhoError> {
    if pairs.is_empty() {
        return Ok(StitchParams::default());
    }
    let first = chosen
        .iter()
        .flatten()
        .next()
        .cloned()
        .ok_or(DwhoError::Unbridgeable(pairs.first().map_or(0, |p| p.frame_a)))?;
    let mut params = StitchParams::default();
    let mut prev = first;
    for ((pair, record), row) in pairs.iter().zip(chosen).zip(&mut report.pairs) {
        let record = record.unwrap_or_else(|| {
            report.bridged += 1;
            OffsetRecord {
                frame_a: pair.frame_a,
                bridged: true,
                ..prev.clone()
            }
        });
        row.chosen = record.provider.clone();
        row.score = record.score;
        row.bridged = record.bridged;
        prev = record.clone();
        params.records.push(record);
    }
    Ok(params)
}

/// Forward pass over the pairs. A pair without candidates or displacement
/// is bridged; negative `dy` is clamped to zero afterwards.
pub fn run_dwho(
    pairs: &[PairInput],
    epsilon: f64,
    gain: f64,
) -> Result<(StitchParams, DwhoReport), DwhoError> {
    let mut report = DwhoReport {
        epsilon,
        gain,
        ..DwhoReport::default()
    };
    let mut chosen = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let displacement = pair.displacement.as_ref().map_or(0.0, |d| d.value);
        let rows: Vec<CandidateRow> = pair
            .candidates
            .iter()
            .map(|c| CandidateRow {
                provider: c.provider.clone(),
                h_y: c.h_y,
                confidence: c.confidence,
                weight: c.weight,
                target: vertical_target(c.confidence, epsilon, gain),
                score: candidate_score(c, epsilon, gain, displacement),
            })
            .collect();
        let record = match (&pair.displacement, pair.candidates.is_empty()) {
            (Some(d), false) => {
                let (k, score) = optimal_offset(&pair.candidates, epsilon, gain, d.value)?;
                Some(OffsetRecord {
                    frame_a: pair.frame_a,
                    dy: pair.candidates[k].h_y,
                    dx: d.value,
                    provider: pair.candidates[k].provider.clone(),
                    score,
                    bridged: false,
                    clamped: false,
                })
            }
            _ => None,
        };
        report.pairs.push(PairReport {
            frame_a: pair.frame_a,
            displacement: pair.displacement.as_ref().map(|d| d.value),
            matches: pair.displacement.as_ref().map_or(0, |d| d.n),
            chosen: String::new(),
            score: 0.0,
            candidates: rows,
            bridged: false,
            clamped: false,
        });
        chosen.push(record);
    }
    let mut params = bridge(pairs, chosen, &mut report)?;
    clamp_backward(&mut params, &mut report);
    Ok((params, report))
}

fn clamp_backward(params: &mut StitchParams, report: &mut DwhoReport) {
    for (rec, rep) in params.records.iter_mut().zip(&mut report.pairs) {
        if rec.dy < 0.0 {
            rec.dy = 0.0;
            rec.clamped = true;
            rep.clamped = true;
            report.backward_motion_clamped += 1;
        }
    }
}

/// Baseline without pooling or selection: the first candidate's
/// translation elements are used directly.
pub fn run_single_provider(pairs: &[PairInput]) -> Result<(StitchParams, DwhoReport), DwhoError> {
    let mut report = DwhoReport::default();
    let mut chosen = Vec::with_capacity(pairs.len());
    for pair in pairs {
        chosen.push(pair.candidates.first().map(|c| OffsetRecord {
            frame_a: pair.frame_a,
            dy: c.h_y,
            dx: -c.h_x,
            provider: c.provider.clone(),
            score: 0.0,
            bridged: false,
            clamped: false,
        }));
        report.pairs.push(PairReport {
            frame_a: pair.frame_a,
            displacement: None,
            matches: 0,
            chosen: String::new(),
            score: 0.0,
            candidates: Vec::new(),
            bridged: false,
            clamped: false,
        });
    }
    let mut params = bridge(pairs, chosen, &mut report)?;
    clamp_backward(&mut params, &mut report);
    Ok((params, report))
}
