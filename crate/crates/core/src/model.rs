//! Demonstration data model: pose frames, demonstrations, raw hand frames,
//! and gripper-state derivation from pinch distance.

use std::fmt;

use nalgebra::{Quaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `|q| - 1` for orientation quaternions.
pub const UNIT_QUATERNION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Binary gripper state. Serialized as `0` (open) and `1` (closed).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Gripper {
    #[default]
    Open,
    Closed,
}

impl Gripper {
    pub fn as_u8(self) -> u8 {
        match self {
            Gripper::Open => 0,
            Gripper::Closed => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Gripper::Open),
            1 => Some(Gripper::Closed),
            _ => None,
        }
    }

    pub fn is_closed(self) -> bool {
        self == Gripper::Closed
    }
}

impl Serialize for Gripper {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for Gripper {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        Gripper::from_u8(v)
            .ok_or_else(|| serde::de::Error::custom(format!("gripper must be 0 or 1, got {v}")))
    }
}

/// One timestep of a demonstration: end-effector pose, joint vector and
/// gripper state, stamped with time in seconds.
///
/// `orientation` is stored scalar-first in the wire and file formats
/// (`w, x, y, z`); `q` and `-q` describe the same orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseFrame {
    pub t: f64,
    pub position: Vector3<f64>,
    pub orientation: Quaternion<f64>,
    pub joints: Vec<f64>,
    pub gripper: Gripper,
}

impl PoseFrame {
    /// Orientation as `[w, x, y, z]`.
    pub fn orientation_wxyz(&self) -> [f64; 4] {
        wxyz(&self.orientation)
    }

    /// True when the two frames' orientations agree up to quaternion sign.
    pub fn same_orientation(&self, other: &PoseFrame, tol: f64) -> bool {
        let a = &self.orientation.coords;
        let b = &other.orientation.coords;
        (a - b).norm() <= tol || (a + b).norm() <= tol
    }
}

/// A raw hand-tracking sample as produced by the headset before any joint
/// solution is available.
#[derive(Debug, Clone, PartialEq)]
pub struct RawHandFrame {
    pub t: f64,
    pub hand_position: Vector3<f64>,
    pub hand_orientation: Quaternion<f64>,
    /// Pointer-finger to thumb distance in meters.
    pub pinch_distance: f64,
}

/// An ordered sequence of pose frames recorded during one task execution.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub id: String,
    pub joint_count: usize,
    pub frequency_hz: f64,
    pub task_tag: Option<String>,
    pub frames: Vec<PoseFrame>,
}

impl Demonstration {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.frames.iter().map(|f| f.position).collect()
    }

    pub fn gripper_timeline(&self) -> Vec<Gripper> {
        self.frames.iter().map(|f| f.gripper).collect()
    }

    /// Copy of this demonstration restricted to `indexes` (ascending).
    pub fn select(&self, indexes: &[usize]) -> Demonstration {
        Demonstration {
            id: self.id.clone(),
            joint_count: self.joint_count,
            frequency_hz: self.frequency_hz,
            task_tag: self.task_tag.clone(),
            frames: indexes.iter().map(|&i| self.frames[i].clone()).collect(),
        }
    }
}

/// The rule a [`Violation`] breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    UnitQuaternion,
    MonotoneTime,
    JointCount,
    Finite,
    MinFrames,
    Frequency,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::UnitQuaternion => "unit-quaternion",
            Rule::MonotoneTime => "monotone-time",
            Rule::JointCount => "joint-count",
            Rule::Finite => "finite",
            Rule::MinFrames => "min-frames",
            Rule::Frequency => "frequency",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A broken invariant. `frame` is `None` for demonstration-level rules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub frame: Option<usize>,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.frame {
            Some(i) => write!(f, "frame {i}: {}", self.rule),
            None => write!(f, "demonstration: {}", self.rule),
        }
    }
}

/// Checks one frame in isolation against `joint_count`. Time ordering is
/// checked by [`validate_demonstration`].
pub fn frame_violations(frame: &PoseFrame, joint_count: usize) -> Vec<Rule> {
    let mut rules = Vec::new();
    let finite = frame.t.is_finite()
        && frame.position.iter().all(|v| v.is_finite())
        && frame.orientation.coords.iter().all(|v| v.is_finite())
        && frame.joints.iter().all(|v| v.is_finite());
    if !finite {
        rules.push(Rule::Finite);
    }
    if !is_unit_quaternion(&frame.orientation) {
        rules.push(Rule::UnitQuaternion);
    }
    if frame.joints.len() != joint_count {
        rules.push(Rule::JointCount);
    }
    rules
}

/// Lists every broken invariant; an empty list means `d` is well formed.
pub fn validate_demonstration(d: &Demonstration) -> Vec<Violation> {
    let mut out = Vec::new();
    if !(d.frequency_hz.is_finite() && d.frequency_hz > 0.0) {
        out.push(Violation {
            frame: None,
            rule: Rule::Frequency,
        });
    }
    if d.frames.len() < 2 {
        out.push(Violation {
            frame: None,
            rule: Rule::MinFrames,
        });
    }
    for (i, frame) in d.frames.iter().enumerate() {
        for rule in frame_violations(frame, d.joint_count) {
            out.push(Violation {
                frame: Some(i),
                rule,
            });
        }
        if i > 0 && frame.t < d.frames[i - 1].t {
            out.push(Violation {
                frame: Some(i),
                rule: Rule::MonotoneTime,
            });
        }
    }
    out
}

pub fn is_unit_quaternion(q: &Quaternion<f64>) -> bool {
    (q.norm() - 1.0).abs() <= UNIT_QUATERNION_TOLERANCE
}

/// Builds a quaternion from scalar-first components.
pub fn quat_from_wxyz(q: [f64; 4]) -> Quaternion<f64> {
    Quaternion::new(q[0], q[1], q[2], q[3])
}

pub fn wxyz(q: &Quaternion<f64>) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

/// Which side of the pinch band means "closed".
///
/// `SmallIsClosed` matches a physical pinch grasp. `LargeIsClosed` follows
/// the literal reading "distance exceeds threshold means pick up".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PinchPolarity {
    #[default]
    SmallIsClosed,
    LargeIsClosed,
}

/// Two-threshold hysteresis band for pinch-distance gripper detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinchThresholds {
    pub close_threshold: f64,
    pub open_threshold: f64,
    #[serde(default)]
    pub polarity: PinchPolarity,
}

impl Default for PinchThresholds {
    fn default() -> Self {
        Self {
            close_threshold: 0.02,
            open_threshold: 0.04,
            polarity: PinchPolarity::SmallIsClosed,
        }
    }
}

impl PinchThresholds {
    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = self.close_threshold.is_finite()
            && self.open_threshold.is_finite()
            && 0.0 < self.close_threshold
            && self.close_threshold < self.open_threshold;
        if ok {
            Ok(())
        } else {
            Err(ModelError::InvalidConfig(format!(
                "need 0 < close_threshold < open_threshold, got {} and {}",
                self.close_threshold, self.open_threshold
            )))
        }
    }

    /// Next gripper state for `pinch_distance` given the previous state.
    pub fn next_state(&self, pinch_distance: f64, prev: Gripper) -> Result<Gripper, ModelError> {
        self.validate()?;
        if !pinch_distance.is_finite() || pinch_distance < 0.0 {
            return Err(ModelError::InvalidInput(format!(
                "pinch distance must be finite and non-negative, got {pinch_distance}"
            )));
        }
        let (below, above) = match self.polarity {
            PinchPolarity::SmallIsClosed => (Gripper::Closed, Gripper::Open),
            PinchPolarity::LargeIsClosed => (Gripper::Open, Gripper::Closed),
        };
        Ok(if pinch_distance < self.close_threshold {
            below
        } else if pinch_distance > self.open_threshold {
            above
        } else {
            prev
        })
    }
}

/// Gripper state from pinch distance with a hysteresis band: closed below
/// `close_threshold`, open above `open_threshold`, unchanged in between.
pub fn derive_gripper_state(
    pinch_distance: f64,
    prev_state: Gripper,
    close_threshold: f64,
    open_threshold: f64,
) -> Result<Gripper, ModelError> {
    PinchThresholds {
        close_threshold,
        open_threshold,
        polarity: PinchPolarity::SmallIsClosed,
    }
    .next_state(pinch_distance, prev_state)
}

/// Runs [`PinchThresholds::next_state`] over a pinch sequence starting open.
pub fn derive_gripper_timeline(
    pinch: &[f64],
    thresholds: &PinchThresholds,
) -> Result<Vec<Gripper>, ModelError> {
    let mut state = Gripper::Open;
    pinch
        .iter()
        .map(|&p| {
            state = thresholds.next_state(p, state)?;
            Ok(state)
        })
        .collect()
}
