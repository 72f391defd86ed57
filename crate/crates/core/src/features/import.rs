//! `.matches.jsonl` interchange: one JSON object per line,
//! `{"a","b","xa","ya","xb","yb","score","provider"}` plus an optional
//! `"space"` of `"unfolded"` (default) or `"original"`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{FeatureError, Point, RawMatch};

/// Coordinate frame of an imported record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordSpace {
    #[default]
    Unfolded,
    /// Pixels of the original circular frame; mapped through the unfold
    /// geometry before use.
    Original,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchRecord {
    pub a: u32,
    pub b: u32,
    pub xa: f64,
    pub ya: f64,
    pub xb: f64,
    pub yb: f64,
    pub score: f64,
    pub provider: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<CoordSpace>,
}

impl From<&RawMatch> for MatchRecord {
    fn from(m: &RawMatch) -> Self {
        Self {
            a: m.frame_a,
            b: m.frame_b,
            xa: m.pa.x,
            ya: m.pa.y,
            xb: m.pb.x,
            yb: m.pb.y,
            score: m.score,
            provider: m.provider.clone(),
            space: None,
        }
    }
}

/// Raster sizes used to bounds-check imported coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImportBounds {
    pub unfolded: (u32, u32),
    pub original: Option<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportedMatch {
    pub raw: RawMatch,
    pub space: CoordSpace,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImportReport {
    pub matches: Vec<ImportedMatch>,
    /// Lines dropped for out-of-range coordinates or scores.
    pub warnings: usize,
}

impl ImportReport {
    pub fn raw_matches(&self) -> Vec<RawMatch> {
        self.matches.iter().map(|m| m.raw.clone()).collect()
    }
}

fn inside(x: f64, y: f64, (w, h): (u32, u32)) -> bool {
    x.is_finite() && y.is_finite() && x >= 0.0 && y >= 0.0 && x < f64::from(w) && y < f64::from(h)
}

/// Parses match lines for pair `(frame_a, frame_a + 1)`.
///
/// Malformed JSON and records for another pair are hard errors; records
/// with coordinates outside the raster or a score outside `[0, 1]` are
/// dropped and counted.
pub fn parse_match_lines(
    file: &str,
    text: &str,
    frame_a: u32,
    bounds: &ImportBounds,
) -> Result<ImportReport, FeatureError> {
    let mut report = ImportReport::default();
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MatchRecord =
            serde_json::from_str(line).map_err(|e| FeatureError::Malformed {
                file: file.to_string(),
                line: line_no,
                reason: e.to_string(),
            })?;
        if rec.a != frame_a || rec.b != frame_a + 1 {
            return Err(FeatureError::WrongPair {
                file: file.to_string(),
                line: line_no,
                a: rec.a,
                b: rec.b,
                expected: frame_a,
            });
        }
        let space = rec.space.unwrap_or_default();
        let dims = match space {
            CoordSpace::Unfolded => Some(bounds.unfolded),
            CoordSpace::Original => bounds.original,
        };
        let ok = dims.is_some_and(|d| inside(rec.xa, rec.ya, d) && inside(rec.xb, rec.yb, d))
            && (0.0..=1.0).contains(&rec.score);
        if !ok {
            report.warnings += 1;
            continue;
        }
        report.matches.push(ImportedMatch {
            raw: RawMatch {
                frame_a: rec.a,
                frame_b: rec.b,
                pa: Point::new(rec.xa, rec.ya),
                pb: Point::new(rec.xb, rec.yb),
                score: rec.score,
                provider: rec.provider,
            },
            space,
        });
    }
    Ok(report)
}

pub fn import_matches(
    path: &Path,
    frame_a: u32,
    bounds: &ImportBounds,
) -> Result<ImportReport, FeatureError> {
    let text = fs::read_to_string(path).map_err(|source| FeatureError::Io {
        file: path.display().to_string(),
        source,
    })?;
    parse_match_lines(&path.display().to_string(), &text, frame_a, bounds)
}

pub fn write_matches(path: &Path, matches: &[RawMatch]) -> Result<(), FeatureError> {
    let io = |source| FeatureError::Io {
        file: path.display().to_string(),
        source,
    };
    let mut out = Vec::new();
    for m in matches {
        serde_json::to_writer(&mut out, &MatchRecord::from(m)).expect("record serializes");
        out.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(io)
}

/// Match files in `dir` for the pair starting at `frame_a`: files named
/// `<frame_a:06>.matches.jsonl` or `<anything>_<frame_a:06>.matches.jsonl`,
/// in file-name order.
pub fn read_match_dir(
    dir: &Path,
    frame_a: u32,
    bounds: &ImportBounds,
) -> Result<ImportReport, FeatureError> {
    let suffix = format!("{frame_a:06}.matches.jsonl");
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|source| FeatureError::Io {
            file: dir.display().to_string(),
            source,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n == suffix || n.ends_with(&format!("_{suffix}")))
        })
        .collect();
    files.sort();
    let mut report = ImportReport::default();
    for f in files {
        let r = import_matches(&f, frame_a, bounds)?;
        report.warnings += r.warnings;
        report.matches.extend(r.matches);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const BOUNDS: ImportBounds = ImportBounds {
        unfolded: (512, 128),
        original: Some((257, 257)),
    };

    #[test]
    fn parses_valid_lines() {
        let text = r#"{"a":1,"b":2,"xa":10.0,"ya":5.5,"xb":11.0,"yb":2.0,"score":0.9,"provider":"loftr"}
{"a":1,"b":2,"xa":20.0,"ya":15.5,"xb":21.0,"yb":12.0,"score":0.5,"provider":"sift"}

{"a":1,"b":2,"xa":30.0,"ya":25.5,"xb":31.0,"yb":22.0,"score":1.0,"provider":"loftr"}
"#;
        let r = parse_match_lines("t", text, 1, &BOUNDS).unwrap();
        assert_eq!(r.warnings, 0);
        let tags: Vec<&str> = r.matches.iter().map(|m| m.raw.provider.as_str()).collect();
        assert_eq!(tags, ["loftr", "sift", "loftr"]);
        assert_eq!(r.matches[1].raw.pa, Point::new(20.0, 15.5));
    }

    #[test]
    fn out_of_bounds_line_is_dropped_with_warning() {
        let text = r#"{"a":1,"b":2,"xa":-5.0,"ya":5.5,"xb":11.0,"yb":2.0,"score":0.9,"provider":"x"}
{"a":1,"b":2,"xa":5.0,"ya":5.5,"xb":11.0,"yb":2.0,"score":0.9,"provider":"x"}"#;
        let r = parse_match_lines("t", text, 1, &BOUNDS).unwrap();
        assert_eq!(r.warnings, 1);
        assert_eq!(r.matches.len(), 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"a\":1,\"b\":2,\"xa\":1,\"ya\":1,\"xb\":1,\"yb\":1,\"score\":1,\"provider\":\"x\"}\n{oops}\n";
        match parse_match_lines("f.jsonl", text, 1, &BOUNDS) {
            Err(FeatureError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let unknown = r#"{"a":1,"b":2,"xa":1,"ya":1,"xb":1,"yb":1,"score":1,"provider":"x","extra":3}"#;
        assert!(parse_match_lines("f", unknown, 1, &BOUNDS).is_err());
    }

    #[test]
    fn wrong_pair_is_an_error() {
        let text = r#"{"a":3,"b":4,"xa":1,"ya":1,"xb":1,"yb":1,"score":1,"provider":"x"}"#;
        assert!(matches!(
            parse_match_lines("f", text, 1, &BOUNDS),
            Err(FeatureError::WrongPair { a: 3, b: 4, .. })
        ));
    }

    #[test]
    fn original_space_uses_original_bounds() {
        let text = r#"{"a":1,"b":2,"xa":200.0,"ya":200.0,"xb":201.0,"yb":199.0,"score":0.7,"provider":"loftr","space":"original"}"#;
        let r = parse_match_lines("f", text, 1, &BOUNDS).unwrap();
        assert_eq!(r.matches[0].space, CoordSpace::Original);
        let no_orig = ImportBounds {
            original: None,
            ..BOUNDS
        };
        assert_eq!(parse_match_lines("f", text, 1, &no_orig).unwrap().warnings, 1);
    }

    #[test]
    fn directory_lookup_by_pair() {
        let dir = tempfile::tempdir().unwrap();
        let m = RawMatch {
            frame_a: 2,
            frame_b: 3,
            pa: Point::new(1.0, 2.0),
            pb: Point::new(3.0, 4.0),
            score: 0.25,
            provider: "loftr".into(),
        };
        write_matches(&dir.path().join("loftr_000002.matches.jsonl"), std::slice::from_ref(&m)).unwrap();
        write_matches(&dir.path().join("loftr_000003.matches.jsonl"), &[]).unwrap();
        let r = read_match_dir(dir.path(), 2, &BOUNDS).unwrap();
        assert_eq!(r.raw_matches(), vec![m]);
        assert!(read_match_dir(dir.path(), 7, &BOUNDS).unwrap().matches.is_empty());
    }

    fn arb_match() -> impl Strategy<Value = RawMatch> {
        (
            0.0f64..512.0,
            0.0f64..128.0,
            0.0f64..512.0,
            0.0f64..128.0,
            0.0f64..=1.0,
            "[a-z]{1,8}",
        )
            .prop_map(|(xa, ya, xb, yb, score, provider)| RawMatch {
                frame_a: 4,
                frame_b: 5,
                pa: Point::new(xa, ya),
                pb: Point::new(xb, yb),
                score,
                provider,
            })
    }

    proptest! {
        #[test]
        fn export_import_round_trip(list in proptest::collection::vec(arb_match(), 0..40)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p_000004.matches.jsonl");
            write_matches(&path, &list).unwrap();
            let back = import_matches(&path, 4, &BOUNDS).unwrap();
            prop_assert_eq!(back.warnings, 0);
            prop_assert_eq!(back.raw_matches(), list);
        }
    }
}
