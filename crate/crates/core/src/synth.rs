//! Synthetic hand demonstrations with ground-truth key moments.
//!
//! Generation is joints-first: the task is turned into a sequence of
//! Cartesian targets, each straight segment is timed with a trapezoidal
//! speed profile, and every step is tracked in joint space with damped
//! least-squares updates while the tool orientation is held at its start
//! value. Recorded poses are forward kinematics of the recorded joints, so
//! `(position, joints, gripper)` stay mutually consistent.
//!
//! Tremor is AR(1) noise on the end-effector position, mapped into joint
//! space through the local Jacobian at each step.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use nalgebra::{Isometry3, UnitQuaternion, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demofile::{write_demo_file, DemoFileError, DEMO_EXTENSION};
use crate::model::{Demonstration, Gripper, PoseFrame};
use crate::sim::{damped_step, forward_kinematics, jacobian, ArmModel, SimError, Task, TaskSpec};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth configuration: {0}")]
    InvalidConfig(String),
    #[error("{name} at ({x:.3}, {y:.3}, {z:.3}) is outside the arm workspace", x = position.x, y = position.y, z = position.z)]
    Unreachable { name: String, position: Vector3<f64> },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    File(#[from] DemoFileError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub task: TaskSpec,
    pub seed: u64,
    pub frequency_hz: f64,
    /// Per-axis standard deviation of the positional tremor, meters.
    pub tremor_amplitude: f64,
    /// First-order autocorrelation of the tremor, in `[0, 1)`.
    pub tremor_correlation: f64,
    /// Stationary frames added after arriving at each intermediate target.
    pub dwell_frames: usize,
    /// Average hand speed along a segment, m/s.
    pub mean_speed: f64,
    /// Share of each segment spent accelerating, and again decelerating.
    #[serde(default = "default_ramp_fraction")]
    pub ramp_fraction: f64,
    /// Clearance used for approach, lift and retreat moves, meters.
    pub approach_height: f64,
    /// Start configuration; the arm's ready pose when absent.
    #[serde(default)]
    pub start_joints: Option<Vec<f64>>,
}

pub const DEFAULT_FREQUENCY_HZ: f64 = 60.0;
pub const DEFAULT_TREMOR_AMPLITUDE: f64 = 0.002;
pub const DEFAULT_TREMOR_CORRELATION: f64 = 0.9;
pub const DEFAULT_DWELL_FRAMES: usize = 10;
pub const DEFAULT_MEAN_SPEED: f64 = 0.08;
pub const DEFAULT_RAMP_FRACTION: f64 = 0.1;

fn default_ramp_fraction() -> f64 {
    DEFAULT_RAMP_FRACTION
}
pub const DEFAULT_APPROACH_HEIGHT: f64 = 0.15;

const MIN_SEGMENT_FRAMES: usize = 12;
const IK_DAMPING: f64 = 1e-3;
const IK_MAX_ITERS: usize = 200;
const POSITION_TOLERANCE: f64 = 1e-12;
const ROTATION_TOLERANCE: f64 = 1e-10;

impl SynthConfig {
    pub fn new(task: TaskSpec, seed: u64) -> Self {
        Self {
            task,
            seed,
            frequency_hz: DEFAULT_FREQUENCY_HZ,
            tremor_amplitude: DEFAULT_TREMOR_AMPLITUDE,
            tremor_correlation: DEFAULT_TREMOR_CORRELATION,
            dwell_frames: DEFAULT_DWELL_FRAMES,
            mean_speed: DEFAULT_MEAN_SPEED,
            ramp_fraction: DEFAULT_RAMP_FRACTION,
            approach_height: DEFAULT_APPROACH_HEIGHT,
            start_joints: None,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if !(self.frequency_hz.is_finite() && self.frequency_hz > 0.0) {
            return bad(format!("frequency_hz must be positive, got {}", self.frequency_hz));
        }
        if !(self.tremor_amplitude.is_finite() && self.tremor_amplitude >= 0.0) {
            return bad(format!("tremor_amplitude must be >= 0, got {}", self.tremor_amplitude));
        }
        if !(0.0..1.0).contains(&self.tremor_correlation) {
            return bad(format!(
                "tremor_correlation must be in [0, 1), got {}",
                self.tremor_correlation
            ));
        }
        if !(self.mean_speed.is_finite() && self.mean_speed > 0.0) {
            return bad(format!("mean_speed must be positive, got {}", self.mean_speed));
        }
        if !(0.0..=0.5).contains(&self.ramp_fraction) {
            return bad(format!("ramp_fraction must be in [0, 0.5], got {}", self.ramp_fraction));
        }
        if !(self.approach_height.is_finite() && self.approach_height > 0.0) {
            return bad(format!("approach_height must be positive, got {}", self.approach_height));
        }
        self.task.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub corner_frames: Vec<usize>,
    pub grasp_frames: Vec<usize>,
    pub release_frames: Vec<usize>,
}

impl GroundTruth {
    /// Every annotated frame, sorted and deduplicated.
    pub fn all_events(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .corner_frames
            .iter()
            .chain(&self.grasp_frames)
            .chain(&self.release_frames)
            .copied()
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Event {
    Grasp,
    Release,
}

#[derive(Debug, Clone)]
struct Target {
    name: String,
    position: Vector3<f64>,
    event: Option<Event>,
}

/// Cartesian targets for a task, in visiting order. Every target except the
/// last is a corner.
fn plan_targets(task: &TaskSpec, home: Vector3<f64>, approach: f64) -> Vec<Target> {
    let up = Vector3::new(0.0, 0.0, approach);
    let t = |name: &str, position: Vector3<f64>, event: Option<Event>| Target {
        name: name.to_string(),
        position,
        event,
    };
    match &task.task {
        Task::Reach { waypoints } => vec![
            t("waypoint 1", waypoints[0], None),
            t("waypoint 2", waypoints[1], None),
            t("waypoint 3", waypoints[2], None),
            t("home", home, None),
        ],
        Task::Push {
            object_start,
            goal,
            contact_radius,
            push_height,
        } => {
            let travel = (goal - object_start).xy();
            let dir = if travel.norm() > 0.0 {
                travel.normalize()
            } else {
                nalgebra::Vector2::x()
            };
            let behind = Vector3::new(dir.x, dir.y, 0.0) * (0.5 * contact_radius);
            let z = 0.5 * push_height;
            let pre = Vector3::new(object_start.x, object_start.y, z) - behind;
            let end = Vector3::new(goal.x, goal.y, z) - behind;
            vec![
                t("above push start", pre + up, None),
                t("push start", pre, None),
                t("push end", end, None),
                t("retreat", end + up, None),
            ]
        }
        Task::PickAndPlace { object_start, goal, .. } => vec![
            t("above object", object_start + up, None),
            t("object", *object_start, Some(Event::Grasp)),
            t("lift", object_start + up, None),
            t("above goal", goal + up, None),
            t("goal", *goal, Some(Event::Release)),
            t("retreat", goal + up, None),
        ],
    }
}

/// Normalized arc length of a trapezoidal speed profile whose
/// acceleration and deceleration phases each last `ramp` of the segment.
fn trapezoid(tau: f64, ramp: f64) -> f64 {
    if ramp <= 0.0 {
        return tau;
    }
    let peak = 1.0 / (1.0 - ramp);
    if tau < ramp {
        peak * tau * tau / (2.0 * ramp)
    } else if tau <= 1.0 - ramp {
        peak * (tau - ramp / 2.0)
    } else {
        1.0 - peak * (1.0 - tau).powi(2) / (2.0 * ramp)
    }
}

/// Moves `q` until the tool reaches `position` with rotation `rotation`.
fn track(
    arm: &ArmModel,
    q: &mut [f64],
    position: &Vector3<f64>,
    rotation: &UnitQuaternion<f64>,
) -> Result<bool, SimError> {
    for _ in 0..IK_MAX_ITERS {
        let pose = forward_kinematics(arm, q)?;
        let ep = position - pose.translation.vector;
        let er = (rotation * pose.rotation.inverse()).scaled_axis();
        if ep.norm() <= POSITION_TOLERANCE && er.norm() <= ROTATION_TOLERANCE {
            return Ok(true);
        }
        let err = Vector6::new(ep.x, ep.y, ep.z, er.x, er.y, er.z);
        let step = damped_step(&jacobian(arm, q)?, &err, IK_DAMPING);
        for (qi, dq) in q.iter_mut().zip(step.iter()) {
            *qi += dq;
        }
    }
    let pose = forward_kinematics(arm, q)?;
    Ok((position - pose.translation.vector).norm() <= POSITION_TOLERANCE * 10.0)
}

/// Seed configurations for a target: FK samples of the arm, nearest first.
fn workspace_seeds(arm: &ArmModel, position: &Vector3<f64>, count: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut samples: Vec<(f64, Vec<f64>)> = (0..2048)
        .map(|_| {
            let q: Vec<f64> = arm
                .joints
                .iter()
                .map(|j| rng.random_range(j.limits[0] * 0.9..j.limits[1] * 0.9))
                .collect();
            let p = forward_kinematics(arm, &q)
                .map(|t| t.translation.vector)
                .unwrap_or_else(|_| Vector3::repeat(f64::INFINITY));
            ((p - position).norm(), q)
        })
        .collect();
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    samples.into_iter().take(count).map(|(_, q)| q).collect()
}

fn resolve_target(
    arm: &ArmModel,
    from: &[f64],
    target: &Target,
    rotation: &UnitQuaternion<f64>,
) -> Result<Vec<f64>, SynthError> {
    let mut q = from.to_vec();
    if track(arm, &mut q, &target.position, rotation).unwrap_or(false) {
        return Ok(q);
    }
    for mut seed in workspace_seeds(arm, &target.position, 8) {
        if track(arm, &mut seed, &target.position, rotation).unwrap_or(false) {
            return Ok(seed);
        }
    }
    Err(SynthError::Unreachable {
        name: target.name.clone(),
        position: target.position,
    })
}

/// Full synthesis output, including the noise-free positions.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub demo: Demonstration,
    pub truth: GroundTruth,
    /// Tool positions before tremor was added, one per frame.
    pub clean_positions: Vec<Vector3<f64>>,
}

/// Generates one demonstration and its ground truth.
pub fn generate(cfg: &SynthConfig, arm: &ArmModel) -> Result<(Demonstration, GroundTruth), SynthError> {
    generate_detailed(cfg, arm).map(|o| (o.demo, o.truth))
}

pub fn generate_detailed(cfg: &SynthConfig, arm: &ArmModel) -> Result<SynthOutput, SynthError> {
    cfg.validate()?;
    arm.validate()?;
    let start = match &cfg.start_joints {
        Some(q) => q.clone(),
        None if arm.joint_count() == 7 => ArmModel::default_ready_joints(),
        None => vec![0.0; arm.joint_count()],
    };
    let start_pose: Isometry3<f64> = forward_kinematics(arm, &start)?;
    let rotation = start_pose.rotation;
    let home = start_pose.translation.vector;
    let targets = plan_targets(&cfg.task, home, cfg.approach_height);

    // Clean joint trajectory.
    let mut joints: Vec<Vec<f64>> = vec![start.clone()];
    let mut positions: Vec<Vector3<f64>> = vec![home];
    let mut gripper: Vec<Gripper> = vec![Gripper::Open];
    let mut truth = GroundTruth::default();
    let mut state = Gripper::Open;
    let mut q = start;
    let mut from = home;
    for (ti, target) in targets.iter().enumerate() {
        // Fails early, naming the target, when it is outside the workspace.
        resolve_target(arm, &q, target, &rotation)?;
        let distance = (target.position - from).norm();
        let frames = ((distance / cfg.mean_speed * cfg.frequency_hz).ceil() as usize).max(MIN_SEGMENT_FRAMES);
        for s in 1..=frames {
            let p = if s == frames {
                target.position
            } else {
                from + (target.position - from) * trapezoid(s as f64 / frames as f64, cfg.ramp_fraction)
            };
            let reached = track(arm, &mut q, &p, &rotation).map_err(SynthError::Sim)?;
            if !reached {
                return Err(SynthError::Unreachable {
                    name: target.name.clone(),
                    position: p,
                });
            }
            joints.push(q.clone());
            positions.push(p);
            gripper.push(state);
        }
        let arrival = joints.len() - 1;
        let is_last = ti + 1 == targets.len();
        if is_last {
            break;
        }
        let center = arrival + cfg.dwell_frames / 2;
        truth.corner_frames.push(center);
        for _ in 0..cfg.dwell_frames {
            joints.push(q.clone());
            positions.push(target.position);
            gripper.push(state);
        }
        if let Some(event) = target.event {
            state = match event {
                Event::Grasp => {
                    truth.grasp_frames.push(center);
                    Gripper::Closed
                }
                Event::Release => {
                    truth.release_frames.push(center);
                    Gripper::Open
                }
            };
            for g in &mut gripper[center..] {
                *g = state;
            }
        }
        from = target.position;
    }

    // Tremor.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rho = cfg.tremor_correlation;
    let innovation = (1.0 - rho * rho).sqrt();
    let mut noise = Vector3::<f64>::zeros();
    let mut frames = Vec::with_capacity(joints.len());
    for (i, (q_clean, g)) in joints.iter().zip(&gripper).enumerate() {
        let draw = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        ) * cfg.tremor_amplitude;
        noise = if i == 0 { draw } else { noise * rho + draw * innovation };
        let q_noisy: Vec<f64> = if cfg.tremor_amplitude == 0.0 {
            q_clean.clone()
        } else {
            let err = Vector6::new(noise.x, noise.y, noise.z, 0.0, 0.0, 0.0);
            let dq = damped_step(&jacobian(arm, q_clean)?, &err, IK_DAMPING);
            q_clean.iter().zip(dq.iter()).map(|(a, b)| a + b).collect()
        };
        let pose = forward_kinematics(arm, &q_noisy)?;
        frames.push(PoseFrame {
            t: i as f64 / cfg.frequency_hz,
            position: pose.translation.vector,
            orientation: *pose.rotation.quaternion(),
            joints: q_noisy,
            gripper: *g,
        });
    }

    let tag = cfg.task.tag();
    Ok(SynthOutput {
        demo: Demonstration {
            id: format!("{tag}-{:04}", cfg.seed),
            joint_count: arm.joint_count(),
            frequency_hz: cfg.frequency_hz,
            task_tag: Some(tag.to_string()),
            frames,
        },
        truth,
        clean_positions: positions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the manifest's directory.
    pub file: String,
    pub seed: u64,
    pub frame_count: usize,
    pub task: TaskSpec,
    pub ground_truth: GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub base: SynthConfig,
    pub count: usize,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl CorpusManifest {
    pub fn read(path: &Path) -> Result<Self, SynthError> {
        let text = fs::read_to_string(path).map_err(|source| SynthError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| SynthError::Io {
            path: path.to_path_buf(),
            source: io::Error::new(io::ErrorKind::InvalidData, e),
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), SynthError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|source| SynthError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Generates `count` demonstrations in memory with seeds `base.seed ..`.
pub fn generate_batch(
    base: &SynthConfig,
    count: usize,
    arm: &ArmModel,
) -> Result<Vec<(Demonstration, GroundTruth)>, SynthError> {
    (0..count as u64)
        .into_par_iter()
        .map(|k| {
            let cfg = SynthConfig {
                seed: base.seed + k,
                ..base.clone()
            };
            generate(&cfg, arm)
        })
        .collect()
}

/// Writes `count` demonstration files plus `manifest.json` into `output_dir`.
pub fn generate_corpus(
    base: &SynthConfig,
    count: usize,
    output_dir: &Path,
    arm: &ArmModel,
) -> Result<CorpusManifest, SynthError> {
    if count == 0 {
        return Err(SynthError::InvalidConfig("corpus count must be >= 1".into()));
    }
    fs::create_dir_all(output_dir).map_err(|source| SynthError::Io {
        path: output_dir.to_path_buf(),
        source,
    })?;
    let batch = generate_batch(base, count, arm)?;
    let mut entries = Vec::with_capacity(count);
    for (k, (demo, truth)) in batch.into_iter().enumerate() {
        let file = format!("{}.{DEMO_EXTENSION}", demo.id);
        write_demo_file(&demo, &output_dir.join(&file))?;
        entries.push(ManifestEntry {
            file,
            seed: base.seed + k as u64,
            frame_count: demo.len(),
            task: base.task.clone(),
            ground_truth: truth,
        });
    }
    let manifest = CorpusManifest {
        base: base.clone(),
        count,
        entries,
    };
    manifest.write(&output_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
