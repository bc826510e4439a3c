//! Stride downsampling with forced retention of key frames, and a simple
//! smoothness measure for before/after comparisons.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keypose::{turning_angle, KeyPoseReport};
use crate::model::Demonstration;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid filter configuration: {0}")]
    InvalidConfig(String),
}

pub const DEFAULT_STRIDE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Keep frames `0, stride, 2·stride, …`.
    pub stride: usize,
    pub always_keep_endpoints: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            stride: DEFAULT_STRIDE,
            always_keep_endpoints: true,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        if self.stride == 0 {
            return Err(FilterError::InvalidConfig("stride K must be >= 1".into()));
        }
        Ok(())
    }
}

/// Indexes retained by [`downsample`], ascending.
pub fn kept_indexes(
    frame_count: usize,
    key_indexes: &[usize],
    cfg: &FilterConfig,
) -> Result<Vec<usize>, FilterError> {
    cfg.validate()?;
    if let Some(&bad) = key_indexes.iter().find(|&&i| i >= frame_count) {
        return Err(FilterError::InvalidInput(format!(
            "key index {bad} out of range for {frame_count} frames"
        )));
    }
    let mut keep = vec![false; frame_count];
    for i in (0..frame_count).step_by(cfg.stride) {
        keep[i] = true;
    }
    for &i in key_indexes {
        keep[i] = true;
    }
    if cfg.always_keep_endpoints && frame_count > 0 {
        keep[0] = true;
        keep[frame_count - 1] = true;
    }
    Ok(keep
        .iter()
        .enumerate()
        .filter_map(|(i, &k)| k.then_some(i))
        .collect())
}

/// Keeps every `stride`-th frame plus every key frame (and the endpoints
/// when configured). Kept frames are copied unchanged.
pub fn downsample(
    d: &Demonstration,
    report: &KeyPoseReport,
    cfg: &FilterConfig,
) -> Result<Demonstration, FilterError> {
    if report.frame_count != d.len() {
        return Err(FilterError::InvalidInput(format!(
            "report covers {} frames but the demonstration has {}",
            report.frame_count,
            d.len()
        )));
    }
    let kept = kept_indexes(d.len(), &report.key_indexes, cfg)?;
    if kept.len() < 2 {
        return Err(FilterError::InvalidInput(format!(
            "downsampling keeps {} frame(s); a demonstration needs at least 2",
            kept.len()
        )));
    }
    Ok(d.select(&kept))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessReport {
    /// Mean turning angle over interior frames (3-frame window), radians.
    pub mean_abs_turning_angle: f64,
    pub path_length: f64,
    pub frame_count: usize,
}

pub fn smoothness(d: &Demonstration) -> Result<SmoothnessReport, FilterError> {
    let n = d.len();
    if n < 3 {
        return Err(FilterError::InvalidInput(format!(
            "smoothness needs at least 3 frames, got {n}"
        )));
    }
    let points = d.positions();
    let total: f64 = points
        .windows(3)
        .map(|w| turning_angle(&w[0], &w[1], &w[2]).turning)
        .sum();
    let path_length = points.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    Ok(SmoothnessReport {
        mean_abs_turning_angle: total / (n - 2) as f64,
        path_length,
        frame_count: n,
    })
}
