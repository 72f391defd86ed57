//! Pooling of correspondences from several providers and the horizontal
//! consistency filter.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PoolConfig;
use crate::features::{Point, RawMatch};

/// Provider tag written on pooled matches.
pub const POOLED_TAG: &str = "pooled";

#[derive(Debug, Error, PartialEq)]
pub enum PoolError {
    #[error("match lists disagree on the frame pair: ({0}, {1}) vs ({2}, {3})")]
    MismatchedPairs(u32, u32, u32, u32),
    #[error("pair {0}: no matches to filter")]
    Empty(u32),
    #[error("pair {0}: insufficient consistent matches (all removed by the horizontal filter)")]
    AllFiltered(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledMatch {
    pub pa: Point,
    pub pb: Point,
    /// Highest score in the merged group.
    pub score: f64,
    pub providers: BTreeSet<String>,
}

impl PooledMatch {
    pub fn to_raw(&self, frame_a: u32) -> RawMatch {
        RawMatch {
            frame_a,
            frame_b: frame_a + 1,
            pa: self.pa,
            pb: self.pb,
            score: self.score,
            provider: POOLED_TAG.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledMatchSet {
    pub frame_a: u32,
    pub matches: Vec<PooledMatch>,
    pub center_offset: f64,
    pub threshold_used: f64,
    pub median_dx: f64,
}

/// Per-pair counts written to `pool_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPoolReport {
    pub frame_a: u32,
    pub raw_per_provider: BTreeMap<String, usize>,
    pub merged: usize,
    pub survived: usize,
    pub threshold: f64,
    pub center_offset: f64,
}

/// Horizontal displacement `xb - xa`, wrapped into `[-period/2, period/2)`
/// when `period` is positive (unfolded columns are periodic).
pub fn wrapped_dx(pa: Point, pb: Point, period: f64) -> f64 {
    let d = pb.x - pa.x;
    if period > 0.0 {
        (d + period / 2.0).rem_euclid(period) - period / 2.0
    } else {
        d
    }
}

/// Lower-middle order statistic; `None` for an empty slice.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

/// Greedy agglomeration across providers.
///
/// Matches are visited in descending score order (input order on ties).
/// Each unassigned match seeds a group and absorbs, from every other list,
/// the best-scoring unassigned match whose endpoints both lie within
/// `colocate_radius` of the seed's. Coordinates of a group are averaged.
/// Output follows the input position of each group's seed.
pub fn pool_matches(lists: &[Vec<RawMatch>], cfg: &PoolConfig) -> Result<Vec<PooledMatch>, PoolError> {
    let flat: Vec<(usize, &RawMatch)> = lists
        .iter()
        .enumerate()
        .flat_map(|(li, l)| l.iter().map(move |m| (li, m)))
        .collect();
    if let Some((_, first)) = flat.first() {
        if let Some((_, bad)) = flat
            .iter()
            .find(|(_, m)| (m.frame_a, m.frame_b) != (first.frame_a, first.frame_b))
        {
            return Err(PoolError::MismatchedPairs(
                first.frame_a,
                first.frame_b,
                bad.frame_a,
                bad.frame_b,
            ));
        }
    }
    let mut order: Vec<usize> = (0..flat.len()).collect();
    order.sort_by(|&i, &j| flat[j].1.score.total_cmp(&flat[i].1.score).then(i.cmp(&j)));
    let mut taken = vec![false; flat.len()];
    let mut groups: Vec<(usize, PooledMatch)> = Vec::new();
    for (pos, &seed) in order.iter().enumerate() {
        if taken[seed] {
            continue;
        }
        taken[seed] = true;
        let (seed_list, s) = flat[seed];
        let mut members = vec![s];
        let mut lists_used = vec![seed_list];
        for &cand in &order[pos + 1..] {
            let (li, m) = flat[cand];
            if taken[cand] || lists_used.contains(&li) {
                continue;
            }
            if m.pa.distance(s.pa) <= cfg.colocate_radius && m.pb.distance(s.pb) <= cfg.colocate_radius {
                taken[cand] = true;
                lists_used.push(li);
                members.push(m);
            }
        }
        let n = members.len() as f64;
        let mean = |f: fn(&RawMatch) -> f64| members.iter().map(|m| f(m)).sum::<f64>() / n;
        groups.push((
            seed,
            PooledMatch {
                pa: Point::new(mean(|m| m.pa.x), mean(|m| m.pa.y)),
                pb: Point::new(mean(|m| m.pb.x), mean(|m| m.pb.y)),
                score: s.score,
                providers: members.iter().map(|m| m.provider.clone()).collect(),
            },
        ));
    }
    groups.sort_by_key(|g| g.0);
    Ok(groups.into_iter().map(|g| g.1).collect())
}

/// Keeps matches whose wrapped `Δx` lies within `τ = max(tau_min,
/// k_offset · center_offset)` of the lower median `Δx`. The median is taken
/// once, before filtering.
pub fn filter_by_center_offset(
    frame_a: u32,
    merged: Vec<PooledMatch>,
    center_offset: f64,
    cfg: &PoolConfig,
    period: f64,
) -> Result<PooledMatchSet, PoolError> {
    let dx: Vec<f64> = merged.iter().map(|m| wrapped_dx(m.pa, m.pb, period)).collect();
    let median = lower_median(&dx).ok_or(PoolError::Empty(frame_a))?;
    let tau = cfg.tau_min.max(cfg.k_offset * center_offset);
    let matches: Vec<PooledMatch> = merged
        .into_iter()
        .zip(&dx)
        .filter(|(_, d)| (*d - median).abs() <= tau)
        .map(|(m, _)| m)
        .collect();
    if matches.is_empty() {
        return Err(PoolError::AllFiltered(frame_a));
    }
    Ok(PooledMatchSet {
        frame_a,
        matches,
        center_offset,
        threshold_used: tau,
        median_dx: median,
    })
}

/// Pools and filters one pair, returning the surviving set and its report.
pub fn pool_pair(
    frame_a: u32,
    lists: &[Vec<RawMatch>],
    center_offset: f64,
    cfg: &PoolConfig,
    period: f64,
) -> Result<(PooledMatchSet, PairPoolReport), PoolError> {
    let mut raw_per_provider = BTreeMap::new();
    for m in lists.iter().flatten() {
        *raw_per_provider.entry(m.provider.clone()).or_insert(0) += 1;
    }
    let merged = pool_matches(lists, cfg)?;
    let n_merged = merged.len();
    let set = filter_by_center_offset(frame_a, merged, center_offset, cfg, period)?;
    let report = PairPoolReport {
        frame_a,
        raw_per_provider,
        merged: n_merged,
        survived: set.matches.len(),
        threshold: set.threshold_used,
        center_offset,
    };
    Ok((set, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rm(provider: &str, xa: f64, ya: f64, xb: f64, yb: f64, score: f64) -> RawMatch {
        RawMatch {
            frame_a: 0,
            frame_b: 1,
            pa: Point::new(xa, ya),
            pb: Point::new(xb, yb),
            score,
            provider: provider.into(),
        }
    }

    fn pm(dx: f64) -> PooledMatch {
        PooledMatch {
            pa: Point::new(100.0, 10.0),
            pb: Point::new(100.0 + dx, 12.0),
            score: 1.0,
            providers: BTreeSet::from(["p".to_string()]),
        }
    }

    #[test]
    fn single_provider_passes_through() {
        let l = vec![rm("orb", 1.0, 1.0, 2.0, 2.0, 0.5), rm("orb", 2.0, 1.0, 3.0, 2.0, 0.9)];
        let out = pool_matches(std::slice::from_ref(&l), &PoolConfig::default()).unwrap();
        assert_eq!(out.len(), 2);
        for (o, i) in out.iter().zip(&l) {
            assert_eq!((o.pa, o.pb, o.score), (i.pa, i.pb, i.score));
            assert_eq!(o.providers, BTreeSet::from(["orb".to_string()]));
        }
    }

    #[test]
    fn identical_matches_merge() {
        let a = vec![rm("p1", 5.0, 6.0, 7.0, 8.0, 0.3)];
        let b = vec![rm("p2", 5.0, 6.0, 7.0, 8.0, 0.8)];
        let out = pool_matches(&[a, b], &PoolConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].pa, Point::new(5.0, 6.0));
        assert_eq!(out[0].pb, Point::new(7.0, 8.0));
        assert_eq!(out[0].score, 0.8);
        assert_eq!(out[0].providers.len(), 2);
    }

    #[test]
    fn nearby_x_is_averaged() {
        let a = vec![rm("A", 10.0, 5.0, 10.0, 9.0, 0.5)];
        let b = vec![rm("B", 12.0, 5.0, 12.0, 9.0, 0.5)];
        let out = pool_matches(&[a, b], &PoolConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].pa.x, 11.0);
        assert_eq!(out[0].pb.x, 11.0);
    }

    #[test]
    fn mismatched_pairs_error() {
        let mut b = rm("B", 0.0, 0.0, 0.0, 0.0, 0.5);
        b.frame_a = 3;
        b.frame_b = 4;
        assert!(matches!(
            pool_matches(&[vec![rm("A", 0.0, 0.0, 0.0, 0.0, 0.5)], vec![b]], &PoolConfig::default()),
            Err(PoolError::MismatchedPairs(0, 1, 3, 4))
        ));
    }

    #[test]
    fn outlier_dx_removed() {
        let cfg = PoolConfig {
            tau_min: 3.0,
            k_offset: 0.0,
            ..PoolConfig::default()
        };
        let set = filter_by_center_offset(0, [5.0, 5.0, 5.0, 50.0].map(pm).to_vec(), 0.0, &cfg, 0.0)
            .unwrap();
        assert_eq!(set.matches.len(), 3);
        assert_eq!(set.threshold_used, 3.0);
    }

    #[test]
    fn floor_applies_without_offset() {
        let set =
            filter_by_center_offset(0, vec![pm(1.0)], 0.0, &PoolConfig::default(), 0.0).unwrap();
        assert_eq!(set.threshold_used, 2.0);
    }

    #[test]
    fn even_count_uses_lower_middle_median() {
        let cfg = PoolConfig {
            k_offset: 1.0,
            tau_min: 2.0,
            ..PoolConfig::default()
        };
        let set = filter_by_center_offset(0, vec![pm(4.0), pm(6.0)], 10.0, &cfg, 0.0).unwrap();
        assert_eq!(set.threshold_used, 10.0);
        assert_eq!(set.median_dx, 4.0);
        assert_eq!(set.matches.len(), 2);
    }

    #[test]
    fn empty_and_all_filtered() {
        let cfg = PoolConfig::default();
        assert_eq!(filter_by_center_offset(2, vec![], 0.0, &cfg, 0.0), Err(PoolError::Empty(2)));
        // Lower median of {0, 100} is 0, so with τ = 2 the far match goes; a
        // single remaining match always survives, so all-filtered needs NaN.
        let set = filter_by_center_offset(2, vec![pm(0.0), pm(100.0)], 0.0, &cfg, 0.0).unwrap();
        assert_eq!(set.matches.len(), 1);
        assert_eq!(
            filter_by_center_offset(2, vec![pm(f64::NAN)], 0.0, &cfg, 0.0),
            Err(PoolError::AllFiltered(2))
        );
    }

    #[test]
    fn dx_wraps_across_seam() {
        let d = wrapped_dx(Point::new(510.0, 0.0), Point::new(3.0, 0.0), 512.0);
        assert_eq!(d, 5.0);
        assert_eq!(wrapped_dx(Point::new(3.0, 0.0), Point::new(510.0, 0.0), 512.0), -5.0);
        assert_eq!(wrapped_dx(Point::new(0.0, 0.0), Point::new(256.0, 0.0), 512.0), -256.0);
    }

    fn arb_lists() -> impl Strategy<Value = Vec<Vec<RawMatch>>> {
        let one = |tag: &'static str| {
            proptest::collection::vec(
                (0.0f64..40.0, 0.0f64..20.0, -6.0f64..6.0, -2.0f64..4.0, 0.0f64..1.0),
                0..25,
            )
            .prop_map(move |v| {
                v.into_iter()
                    .map(|(x, y, dx, dy, s)| rm(tag, x, y, x + dx, y + dy, s))
                    .collect::<Vec<_>>()
            })
        };
        (one("a"), one("b"), one("c")).prop_map(|(a, b, c)| vec![a, b, c])
    }

    proptest! {
        #[test]
        fn merge_conservation(lists in arb_lists()) {
            let total: usize = lists.iter().map(Vec::len).sum();
            let out = pool_matches(&lists, &PoolConfig::default()).unwrap();
            prop_assert!(out.len() <= total);
            let tags: BTreeSet<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
            for m in &out {
                prop_assert!(!m.providers.is_empty());
                prop_assert!(m.providers.is_subset(&tags));
            }
            let members: usize = out.iter().map(|m| m.providers.len()).sum();
            prop_assert_eq!(members, total);
        }

        #[test]
        fn filter_soundness_and_monotonicity(lists in arb_lists(), offset in 0.0f64..5.0,
                                             t1 in 0.1f64..4.0, t2 in 0.1f64..4.0) {
            let merged = pool_matches(&lists, &PoolConfig::default()).unwrap();
            prop_assume!(!merged.is_empty());
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let run = |tau_min| {
                let cfg = PoolConfig { tau_min, k_offset: 0.5, ..PoolConfig::default() };
                filter_by_center_offset(0, merged.clone(), offset, &cfg, 512.0).unwrap()
            };
            let (a, b) = (run(lo), run(hi));
            for set in [&a, &b] {
                for m in &set.matches {
                    prop_assert!((wrapped_dx(m.pa, m.pb, 512.0) - set.median_dx).abs() <= set.threshold_used);
                }
            }
            prop_assert!(a.matches.len() <= b.matches.len());
        }
    }
}
