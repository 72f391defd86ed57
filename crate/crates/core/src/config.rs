//! Run configuration. A whole run is described by one JSON document so it
//! can be archived next to its outputs and replayed.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("invalid config field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("unknown provider `{0}` (expected orb, dog or import:<dir>)")]
    UnknownProvider(String),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

/// How unfolded rows map to radii inside the annulus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadialMapping {
    /// Radius falls linearly from `r_outer` (row 0) to `r_inner` (last row).
    #[default]
    Linear,
    /// Inverse radius rises linearly, so rows are equally spaced in depth
    /// along a cylinder viewed axially by a pinhole camera.
    Perspective,
}

/// How per-pair stitch offsets are derived from the matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StitchMethod {
    /// Pooled, offset-filtered matches with density-weighted offset selection.
    #[default]
    Dwho,
    /// Translation of the first provider's own MSAC homography, no pooling.
    SingleProvider,
}

/// A source of point correspondences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderSpec {
    Orb,
    Dog,
    /// Externally computed matches read from `.matches.jsonl` files in a directory.
    Import(PathBuf),
}

impl ProviderSpec {
    pub fn tag(&self) -> String {
        match self {
            ProviderSpec::Orb => "orb".into(),
            ProviderSpec::Dog => "dog".into(),
            ProviderSpec::Import(p) => format!("import:{}", p.display()),
        }
    }
}

impl fmt::Display for ProviderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

impl FromStr for ProviderSpec {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "orb" => Ok(ProviderSpec::Orb),
            "dog" => Ok(ProviderSpec::Dog),
            other => match other.strip_prefix("import:") {
                Some(path) if !path.is_empty() => Ok(ProviderSpec::Import(PathBuf::from(path))),
                _ => Err(ConfigError::UnknownProvider(other.to_string())),
            },
        }
    }
}

impl Serialize for ProviderSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.tag())
    }
}

impl<'de> Deserialize<'de> for ProviderSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parses a comma separated provider list such as `orb,dog,import:/data/loftr`.
pub fn parse_provider_list(s: &str) -> Result<Vec<ProviderSpec>, ConfigError> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MsacConfig {
    /// Symmetric transfer error bound, pixels.
    pub inlier_threshold: f64,
    pub max_iterations: usize,
    pub confidence_target: f64,
    pub min_inliers: usize,
}

impl Default for MsacConfig {
    fn default() -> Self {
        Self {
            inlier_threshold: 2.0,
            max_iterations: 2000,
            confidence_target: 0.999,
            min_inliers: 8,
        }
    }
}

impl MsacConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.inlier_threshold > 0.0) {
            return Err(invalid("msac.inlier_threshold", "must be > 0"));
        }
        if self.max_iterations < 1 {
            return Err(invalid("msac.max_iterations", "must be >= 1"));
        }
        if !(self.confidence_target > 0.0 && self.confidence_target < 1.0) {
            return Err(invalid("msac.confidence_target", "must lie in (0, 1)"));
        }
        if self.min_inliers < 4 {
            return Err(invalid("msac.min_inliers", "must be >= 4"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolConfig {
    pub colocate_radius: f64,
    pub k_offset: f64,
    pub tau_min: f64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            colocate_radius: 3.0,
            k_offset: 1.0,
            tau_min: 2.0,
        }
    }
}

impl PoolConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.colocate_radius >= 0.0) {
            return Err(invalid("pool.colocate_radius", "must be >= 0"));
        }
        if !(self.k_offset >= 0.0) {
            return Err(invalid("pool.k_offset", "must be >= 0"));
        }
        if !(self.tau_min > 0.0) {
            return Err(invalid("pool.tau_min", "must be > 0"));
        }
        Ok(())
    }
}

/// Detector and matcher constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub max_keypoints: usize,
    pub fast_threshold: u8,
    /// Retry threshold used when too few corners pass `fast_threshold`.
    pub fast_min_threshold: u8,
    pub nms_radius: f64,
    pub harris_k: f64,
    pub ratio: f64,
    pub dog_contrast: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            max_keypoints: 600,
            fast_threshold: 20,
            fast_min_threshold: 7,
            nms_radius: 4.0,
            harris_k: 0.04,
            ratio: 0.8,
            dog_contrast: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub r_inner: f64,
    pub margin: u32,
    pub focal_length: f64,
    pub unwrap_width: u32,
    pub unwrap_height: u32,
    pub radial_mapping: RadialMapping,
    pub horizontal_threshold: f64,
    /// Final panorama width cap; `None` keeps the unwrap width.
    pub max_panorama_width: Option<u32>,
    pub epsilon: f64,
    pub dwho_gain: f64,
    pub density_bins: usize,
    pub stitch_method: StitchMethod,
    /// Use blurred luminance as a depth proxy when a frame has no depth map.
    pub depth_fallback: bool,
    pub features: FeatureConfig,
    pub msac: MsacConfig,
    pub pool: PoolConfig,
    pub providers: Vec<ProviderSpec>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            r_inner: 40.0,
            margin: 8,
            focal_length: 10_000.0,
            unwrap_width: 512,
            unwrap_height: 128,
            radial_mapping: RadialMapping::Linear,
            horizontal_threshold: 128.0,
            max_panorama_width: None,
            epsilon: 12.0,
            dwho_gain: 3.0,
            density_bins: 16,
            stitch_method: StitchMethod::Dwho,
            depth_fallback: true,
            features: FeatureConfig::default(),
            msac: MsacConfig::default(),
            pool: PoolConfig::default(),
            providers: vec![ProviderSpec::Orb, ProviderSpec::Dog],
            seed: 42,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.r_inner >= 1.0) {
            return Err(invalid("r_inner", "must be >= 1"));
        }
        if !(self.focal_length > 0.0) {
            return Err(invalid("focal_length", "must be > 0"));
        }
        if self.unwrap_width < 8 || self.unwrap_height < 8 {
            return Err(invalid("unwrap_width/unwrap_height", "must be >= 8"));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid("epsilon", "must be > 0"));
        }
        if !(self.horizontal_threshold > 0.0) {
            return Err(invalid("horizontal_threshold", "must be > 0"));
        }
        if !self.dwho_gain.is_finite() {
            return Err(invalid("dwho_gain", "must be finite"));
        }
        if self.density_bins < 1 {
            return Err(invalid("density_bins", "must be >= 1"));
        }
        if self.max_panorama_width == Some(0) {
            return Err(invalid("max_panorama_width", "must be >= 1"));
        }
        if self.providers.is_empty() {
            return Err(invalid("providers", "at least one provider is required"));
        }
        self.msac.validate()?;
        self.pool.validate()
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_validate() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn provider_parsing() {
        let list = parse_provider_list("orb,dog,import:/tmp/loftr").unwrap();
        assert_eq!(
            list,
            vec![
                ProviderSpec::Orb,
                ProviderSpec::Dog,
                ProviderSpec::Import("/tmp/loftr".into())
            ]
        );
        assert!(parse_provider_list("sift").is_err());
        assert!(parse_provider_list("import:").is_err());
    }

    #[test]
    fn rejects_bad_fields() {
        let d = PipelineConfig::default;
        assert!(PipelineConfig { r_inner: 0.5, ..d() }.validate().is_err());
        assert!(PipelineConfig { epsilon: 0.0, ..d() }.validate().is_err());
        let mut c = d();
        c.msac.min_inliers = 3;
        assert!(c.validate().is_err());
        assert!(PipelineConfig { unwrap_height: 7, ..d() }.validate().is_err());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c = PipelineConfig::from_json(r#"{"epsilon": 9.5, "providers": ["orb"]}"#).unwrap();
        assert_eq!(c.epsilon, 9.5);
        assert_eq!(c.providers, vec![ProviderSpec::Orb]);
        assert_eq!(c.seed, 42);
        assert!(PipelineConfig::from_json(r#"{"epsilonn": 1}"#).is_err());
    }

    proptest! {
        #[test]
        fn json_round_trip(
            r_inner in 1.0f64..500.0,
            margin in 0u32..64,
            focal in 1e-3f64..1e7,
            eps in 1e-3f64..100.0,
            seed in any::<u64>(),
            thr in 0.1f64..1000.0,
            perspective in any::<bool>(),
        ) {
            let mut c = PipelineConfig {
                r_inner,
                margin,
                focal_length: focal,
                epsilon: eps,
                seed,
                horizontal_threshold: thr,
                radial_mapping: if perspective { RadialMapping::Perspective } else { RadialMapping::Linear },
                ..PipelineConfig::default()
            };
            c.providers.push(ProviderSpec::Import("some/dir".into()));
            let back = PipelineConfig::from_json(&c.to_json()).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
