//! Key data point detection.
//!
//! A frame is a geometric key point when the path turns sharply there *and*
//! the hand moves slowly around it. Both predicates are evaluated over a
//! window of `window_length` frames centered on the candidate:
//!
//! * the **turning angle** at `p[i]` is `π − ∠(p[i−h] − p[i], p[i+h] − p[i])`
//!   with `h = ⌊window_length / 2⌋`. It is 0 for straight motion and π for a
//!   full reversal, so "angle above threshold" means "sharp turn".
//! * the **density score** is the mean Euclidean distance over all unordered
//!   pairs in the window. Slow motion packs frames together, so a score
//!   *below* the threshold means "dense".
//!
//! Frames without a full window are never windowed key points. Gripper
//! transitions (`g[i] != g[i−1]`) are always key points.
//!
//! Both comparison directions can be flipped through [`AngleConvention`] and
//! [`DensityComparison`] to reproduce the literal inequalities
//! (interior angle above threshold, density score above threshold).

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Demonstration;

#[derive(Debug, Error, PartialEq)]
pub enum KeyPoseError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid detector configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AngleConvention {
    /// `π − interior`; fires on turns.
    #[default]
    Turning,
    /// The interior angle itself.
    Interior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityComparison {
    /// Dense when the mean pairwise distance is below the threshold.
    #[default]
    Below,
    /// Dense when the mean pairwise distance is above the threshold.
    Above,
}

/// Dense-region threshold, either in meters or relative to the trajectory's
/// own mean frame spacing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenseThreshold {
    Meters(f64),
    /// `factor × mean frame spacing × window_length`.
    SpacingRelative(f64),
}

impl Default for DenseThreshold {
    fn default() -> Self {
        DenseThreshold::SpacingRelative(DEFAULT_DENSE_FACTOR)
    }
}

pub const DEFAULT_WINDOW_LENGTH: usize = 9;
pub const DEFAULT_SHARP_TURN_THRESHOLD: f64 = PI / 3.0;
pub const DEFAULT_DENSE_FACTOR: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub window_length: usize,
    /// Radians.
    pub sharp_turn_threshold: f64,
    pub dense_region_threshold: DenseThreshold,
    pub angle_convention: AngleConvention,
    pub density_comparison: DensityComparison,
    /// Union gripper open/close transitions into the key set.
    pub gripper_events: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window_length: DEFAULT_WINDOW_LENGTH,
            sharp_turn_threshold: DEFAULT_SHARP_TURN_THRESHOLD,
            dense_region_threshold: DenseThreshold::default(),
            angle_convention: AngleConvention::default(),
            density_comparison: DensityComparison::default(),
            gripper_events: true,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), KeyPoseError> {
        if self.window_length < 3 || self.window_length.is_multiple_of(2) {
            return Err(KeyPoseError::InvalidConfig(format!(
                "window_length must be odd and >= 3, got {}",
                self.window_length
            )));
        }
        if !(self.sharp_turn_threshold.is_finite() && self.sharp_turn_threshold > 0.0) {
            return Err(KeyPoseError::InvalidConfig(format!(
                "sharp_turn_threshold must be positive, got {}",
                self.sharp_turn_threshold
            )));
        }
        let dense = match self.dense_region_threshold {
            DenseThreshold::Meters(v) | DenseThreshold::SpacingRelative(v) => v,
        };
        if !(dense.is_finite() && dense > 0.0) {
            return Err(KeyPoseError::InvalidConfig(format!(
                "dense_region_threshold must be positive, got {dense}"
            )));
        }
        Ok(())
    }

    pub fn half_window(&self) -> usize {
        self.window_length / 2
    }

    /// The dense-region threshold in meters for this trajectory.
    pub fn resolve_dense_threshold(&self, points: &[Vector3<f64>]) -> f64 {
        match self.dense_region_threshold {
            DenseThreshold::Meters(m) => m,
            DenseThreshold::SpacingRelative(factor) => {
                factor * mean_spacing(points) * self.window_length as f64
            }
        }
    }
}

/// Path length divided by the number of steps; 0 for fewer than 2 points.
pub fn mean_spacing(points: &[Vector3<f64>]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let length: f64 = points.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    length / (points.len() - 1) as f64
}

/// Output of [`compute_angle`]. `degenerate` is set when a ray has zero
/// length; the angle is then reported as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowAngle {
    pub turning: f64,
    pub degenerate: bool,
}

impl WindowAngle {
    pub fn interior(&self) -> f64 {
        if self.degenerate {
            PI
        } else {
            PI - self.turning
        }
    }
}

fn window_bounds(len: usize, idx: usize, window_length: usize) -> Result<(usize, usize), KeyPoseError> {
    if window_length < 3 || window_length.is_multiple_of(2) {
        return Err(KeyPoseError::InvalidInput(format!(
            "window_length must be odd and >= 3, got {window_length}"
        )));
    }
    let half = window_length / 2;
    if idx < half || idx + half >= len {
        return Err(KeyPoseError::InvalidInput(format!(
            "window of {window_length} around index {idx} does not fit in {len} points"
        )));
    }
    Ok((idx - half, idx + half))
}

/// Turning angle at `points[idx]` between the rays to the window's first
/// and last points. Always in `[0, π]`.
pub fn compute_angle(
    points: &[Vector3<f64>],
    idx: usize,
    window_length: usize,
) -> Result<WindowAngle, KeyPoseError> {
    let (start, end) = window_bounds(points.len(), idx, window_length)?;
    Ok(turning_angle(&points[start], &points[idx], &points[end]))
}

/// Turning angle at `mid` for the path `prev → mid → next`.
pub fn turning_angle(prev: &Vector3<f64>, mid: &Vector3<f64>, next: &Vector3<f64>) -> WindowAngle {
    let a = prev - mid;
    let b = next - mid;
    if a.norm_squared() == 0.0 || b.norm_squared() == 0.0 {
        return WindowAngle {
            turning: 0.0,
            degenerate: true,
        };
    }
    // atan2 stays accurate near 0 and π where acos loses precision.
    let interior = a.cross(&b).norm().atan2(a.dot(&b));
    WindowAngle {
        turning: (PI - interior).clamp(0.0, PI),
        degenerate: false,
    }
}

/// Mean pairwise Euclidean distance over the window centered on `idx`.
pub fn compute_density(
    points: &[Vector3<f64>],
    idx: usize,
    window_length: usize,
) -> Result<f64, KeyPoseError> {
    let (start, end) = window_bounds(points.len(), idx, window_length)?;
    Ok(mean_pairwise_distance(&points[start..=end]))
}

pub fn mean_pairwise_distance(points: &[Vector3<f64>]) -> f64 {
    let n = points.len();
    if n < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += (points[i] - points[j]).norm();
        }
    }
    sum / (n * (n - 1) / 2) as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KeyPoseReport {
    pub frame_count: usize,
    pub sharp_turn_indexes: Vec<usize>,
    pub dense_region_indexes: Vec<usize>,
    pub gripper_event_indexes: Vec<usize>,
    pub key_indexes: Vec<usize>,
}

impl KeyPoseReport {
    /// A report that marks nothing as key, e.g. for a disabled detector.
    pub fn empty(frame_count: usize) -> Self {
        Self {
            frame_count,
            ..Default::default()
        }
    }

    pub fn is_key(&self, idx: usize) -> bool {
        self.key_indexes.binary_search(&idx).is_ok()
    }
}

/// Gripper transitions: every `i > 0` whose state differs from frame `i − 1`.
pub fn gripper_events(d: &Demonstration) -> Vec<usize> {
    d.frames
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0].gripper != w[1].gripper)
        .map(|(i, _)| i + 1)
        .collect()
}

/// Runs the detector over a demonstration.
pub fn detect_key_poses(d: &Demonstration, cfg: &DetectorConfig) -> Result<KeyPoseReport, KeyPoseError> {
    cfg.validate()?;
    let n = d.len();
    if n < cfg.window_length {
        return Err(KeyPoseError::InvalidInput(format!(
            "demonstration has {n} frames, fewer than window_length {}",
            cfg.window_length
        )));
    }
    let points = d.positions();
    let dense_threshold = cfg.resolve_dense_threshold(&points);
    let half = cfg.half_window();

    let mut sharp = Vec::new();
    let mut dense = Vec::new();
    for idx in half..n - half {
        let angle = turning_angle(&points[idx - half], &points[idx], &points[idx + half]);
        let value = match cfg.angle_convention {
            AngleConvention::Turning => angle.turning,
            AngleConvention::Interior => angle.interior(),
        };
        if value > cfg.sharp_turn_threshold {
            sharp.push(idx);
        }
        let score = mean_pairwise_distance(&points[idx - half..=idx + half]);
        let is_dense = match cfg.density_comparison {
            DensityComparison::Below => score < dense_threshold,
            DensityComparison::Above => score > dense_threshold,
        };
        if is_dense {
            dense.push(idx);
        }
    }

    let events = if cfg.gripper_events {
        gripper_events(d)
    } else {
        Vec::new()
    };
    let key_indexes = merge_sorted(&intersect_sorted(&sharp, &dense), &events);
    Ok(KeyPoseReport {
        frame_count: n,
        sharp_turn_indexes: sharp,
        dense_region_indexes: dense,
        gripper_event_indexes: events,
        key_indexes,
    })
}

fn intersect_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

fn merge_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = a.iter().chain(b).copied().collect();
    out.sort_unstable();
    out.dedup();
    out
}
