//! Serial-chain kinematics, delta-joint actions, and a kinematic replay
//! simulator with Reach, Push and Pick-And-Place success predicates.
//!
//! The chain convention is "rotate, then translate": joint `i` rotates about
//! its axis (expressed in the frame left by joint `i − 1`), then the link
//! offset is applied in the rotated frame. With all joints at zero the end
//! effector sits at `base · Σ offsets`.

use std::io::{self, Write};

use nalgebra::{DVector, Isometry3, Matrix6, Matrix6xX, Vector6, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Demonstration, Gripper};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid arm model: {0}")]
    InvalidArm(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("joint limits violated at joints {joints:?}")]
    JointLimit { joints: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    /// Rotation axis in the parent frame; unit length.
    pub axis: Vector3<f64>,
    /// Link offset applied after the rotation, meters.
    pub offset: Vector3<f64>,
    /// `[min, max]` in radians.
    pub limits: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub base: Isometry3<f64>,
    pub joints: Vec<JointSpec>,
}

impl ArmModel {
    /// A generic 7-DOF chain (alternating yaw/pitch joints) with a 0.333 m
    /// shoulder, 0.316 m upper arm, 0.384 m forearm and 0.207 m wrist-to-tool.
    pub fn default_seven_dof() -> Self {
        let z = Vector3::z();
        let y = Vector3::y();
        let joint = |axis: Vector3<f64>, length: f64, limit: f64| JointSpec {
            axis,
            offset: Vector3::new(0.0, 0.0, length),
            limits: [-limit, limit],
        };
        ArmModel {
            base: Isometry3::translation(0.0, 0.0, 0.333),
            joints: vec![
                joint(z, 0.0, 2.9),
                joint(y, 0.316, 2.9),
                joint(z, 0.0, 2.9),
                joint(y, 0.384, 2.9),
                joint(z, 0.0, 2.9),
                joint(y, 0.207, 2.9),
                joint(z, 0.0, 2.9),
            ],
        }
    }

    /// A non-singular start pose for [`ArmModel::default_seven_dof`] with the
    /// tool pointing straight down at roughly (0.46, 0, 0.30).
    pub fn default_ready_joints() -> Vec<f64> {
        vec![0.0, 0.3, 0.0, 1.6, 0.0, std::f64::consts::PI - 1.9, 0.0]
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.joints.is_empty() {
            return Err(SimError::InvalidArm("arm has no joints".into()));
        }
        for (i, j) in self.joints.iter().enumerate() {
            if (j.axis.norm() - 1.0).abs() > 1e-9 {
                return Err(SimError::InvalidArm(format!("joint {i} axis is not unit length")));
            }
            if j.limits[0].partial_cmp(&j.limits[1]) != Some(std::cmp::Ordering::Less) {
                return Err(SimError::InvalidArm(format!("joint {i} limits are not min < max")));
            }
        }
        Ok(())
    }

    /// Indexes of joints outside their limits.
    pub fn limit_violations(&self, joints: &[f64]) -> Vec<usize> {
        self.joints
            .iter()
            .zip(joints)
            .enumerate()
            .filter(|(_, (spec, &q))| !(q >= spec.limits[0] && q <= spec.limits[1]))
            .map(|(i, _)| i)
            .collect()
    }

    fn check_len(&self, joints: &[f64]) -> Result<(), SimError> {
        if joints.len() != self.joint_count() {
            return Err(SimError::InvalidInput(format!(
                "expected {} joints, got {}",
                self.joint_count(),
                joints.len()
            )));
        }
        Ok(())
    }

    /// Pose of the frame *before* each joint rotates, followed by the tool pose.
    fn chain_frames(&self, joints: &[f64]) -> Vec<Isometry3<f64>> {
        let mut frames = Vec::with_capacity(joints.len() + 1);
        let mut t = self.base;
        for (spec, &q) in self.joints.iter().zip(joints) {
            frames.push(t);
            let rot = UnitQuaternion::from_axis_angle(&Unit::new_unchecked(spec.axis), q);
            t = t * Isometry3::from_parts(Translation3::identity(), rot) * Translation3::from(spec.offset);
        }
        frames.push(t);
        frames
    }
}

/// End-effector pose for `joints`; fails if any joint is outside its limits.
pub fn forward_kinematics(arm: &ArmModel, joints: &[f64]) -> Result<Isometry3<f64>, SimError> {
    arm.check_len(joints)?;
    let bad = arm.limit_violations(joints);
    if !bad.is_empty() {
        return Err(SimError::JointLimit { joints: bad });
    }
    Ok(*arm.chain_frames(joints).last().expect("chain has a tool frame"))
}

/// Geometric Jacobian (rows: linear xyz, angular xyz) at `joints`.
pub fn jacobian(arm: &ArmModel, joints: &[f64]) -> Result<Matrix6xX<f64>, SimError> {
    arm.check_len(joints)?;
    let frames = arm.chain_frames(joints);
    let tool = frames[joints.len()].translation.vector;
    let mut jac = Matrix6xX::zeros(joints.len());
    for (i, spec) in arm.joints.iter().enumerate() {
        let axis = frames[i].rotation * spec.axis;
        let origin = frames[i].translation.vector;
        let linear = axis.cross(&(tool - origin));
        jac.fixed_view_mut::<3, 1>(0, i).copy_from(&linear);
        jac.fixed_view_mut::<3, 1>(3, i).copy_from(&axis);
    }
    Ok(jac)
}

/// Damped least-squares step `Jᵀ (J Jᵀ + λ² I)⁻¹ e` for a 6-vector error
/// `[linear; angular]`.
pub fn damped_step(jac: &Matrix6xX<f64>, error: &Vector6<f64>, damping: f64) -> DVector<f64> {
    let jjt = jac * jac.transpose() + Matrix6::identity() * (damping * damping);
    let y = jjt.lu().solve(error).unwrap_or_else(Vector6::zeros);
    jac.transpose() * y
}

/// Replay actions: the first joint vector and per-step joint differences.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSequence {
    pub initial_joints: Vec<f64>,
    pub deltas: Vec<Vec<f64>>,
}

impl ActionSequence {
    /// Joint vectors obtained by accumulating the deltas onto the start.
    pub fn joint_trajectory(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.deltas.len() + 1);
        let mut q = self.initial_joints.clone();
        out.push(q.clone());
        for d in &self.deltas {
            for (qi, di) in q.iter_mut().zip(d) {
                *qi += di;
            }
            out.push(q.clone());
        }
        out
    }
}

/// `deltas[i] = j[i+1] − j[i]`, starting from `j[0]`.
pub fn to_actions(d: &Demonstration) -> Result<ActionSequence, SimError> {
    if d.len() < 2 {
        return Err(SimError::InvalidInput(format!(
            "need at least 2 frames to form actions, got {}",
            d.len()
        )));
    }
    let deltas = d
        .frames
        .windows(2)
        .map(|w| w[1].joints.iter().zip(&w[0].joints).map(|(b, a)| b - a).collect())
        .collect();
    Ok(ActionSequence {
        initial_joints: d.frames[0].joints.clone(),
        deltas,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Task {
    /// Visit three waypoints in order.
    Reach { waypoints: [Vector3<f64>; 3] },
    /// Slide an object along the desk. The end effector pushes while it is
    /// within `contact_radius` (horizontally) of the object and no higher
    /// than `push_height`.
    Push {
        object_start: Vector3<f64>,
        goal: Vector3<f64>,
        contact_radius: f64,
        push_height: f64,
    },
    /// Grasp the object, carry it and release it at the goal. A grasp takes
    /// when the gripper closes within `grasp_radius` of the object.
    PickAndPlace {
        object_start: Vector3<f64>,
        goal: Vector3<f64>,
        grasp_radius: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    #[serde(flatten)]
    pub task: Task,
    /// Success radius ε, meters.
    pub success_radius: f64,
}

impl TaskSpec {
    pub fn tag(&self) -> &'static str {
        match self.task {
            Task::Reach { .. } => "reach",
            Task::Push { .. } => "push",
            Task::PickAndPlace { .. } => "pick-and-place",
        }
    }

    pub fn default_reach() -> Self {
        TaskSpec {
            task: Task::Reach {
                waypoints: [
                    Vector3::new(0.45, 0.20, 0.25),
                    Vector3::new(0.60, 0.00, 0.15),
                    Vector3::new(0.45, -0.20, 0.25),
                ],
            },
            success_radius: 0.02,
        }
    }

    pub fn default_push() -> Self {
        TaskSpec {
            task: Task::Push {
                object_start: Vector3::new(0.42, -0.10, 0.03),
                goal: Vector3::new(0.60, -0.10, 0.03),
                contact_radius: 0.05,
                push_height: 0.08,
            },
            success_radius: 0.02,
        }
    }

    pub fn default_pick_and_place() -> Self {
        TaskSpec {
            task: Task::PickAndPlace {
                object_start: Vector3::new(0.50, 0.15, 0.03),
                goal: Vector3::new(0.50, -0.15, 0.03),
                grasp_radius: 0.03,
            },
            success_radius: 0.02,
        }
    }

    /// Default task for a tag as written by [`TaskSpec::tag`].
    pub fn default_for_tag(tag: &str) -> Option<Self> {
        match tag {
            "reach" => Some(Self::default_reach()),
            "push" => Some(Self::default_push()),
            "pick-and-place" => Some(Self::default_pick_and_place()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(SimError::InvalidTask(format!("{name} must be positive, got {v}")))
            }
        };
        positive("success_radius", self.success_radius)?;
        match &self.task {
            Task::Reach { .. } => Ok(()),
            Task::Push {
                contact_radius,
                push_height,
                ..
            } => {
                positive("contact_radius", *contact_radius)?;
                if push_height.is_finite() {
                    Ok(())
                } else {
                    Err(SimError::InvalidTask("push_height must be finite".into()))
                }
            }
            Task::PickAndPlace { grasp_radius, .. } => positive("grasp_radius", *grasp_radius),
        }
    }

    fn object_start(&self) -> Option<Vector3<f64>> {
        match self.task {
            Task::Reach { .. } => None,
            Task::Push { object_start, .. } | Task::PickAndPlace { object_start, .. } => Some(object_start),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub joints: Vec<f64>,
    pub ee_pose: Isometry3<f64>,
    pub gripper: Gripper,
    pub object_position: Option<Vector3<f64>>,
    pub attached: bool,
    /// Step index at which each Reach waypoint was first entered, in order.
    pub waypoints_hit: Vec<usize>,
}

impl SimState {
    pub fn ee_position(&self) -> Vector3<f64> {
        self.ee_pose.translation.vector
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FailureReason {
    JointLimit { step: usize, joints: Vec<usize> },
    WaypointsMissed { hit: usize },
    NeverGrasped,
    StillHeld,
    ObjectNotAtGoal { distance: f64 },
}

impl FailureReason {
    pub fn code(&self) -> &'static str {
        match self {
            FailureReason::JointLimit { .. } => "joint-limit",
            FailureReason::WaypointsMissed { .. } => "waypoints-missed",
            FailureReason::NeverGrasped => "never-grasped",
            FailureReason::StillHeld => "still-held",
            FailureReason::ObjectNotAtGoal { .. } => "object-not-at-goal",
        }
    }
}

impl std::fmt::Display for FailureReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FailureReason::JointLimit { step, joints } => {
                write!(f, "joint-limit at step {step} (joints {joints:?})")
            }
            FailureReason::WaypointsMissed { hit } => write!(f, "waypoints-missed ({hit}/3 reached)"),
            FailureReason::ObjectNotAtGoal { distance } => {
                write!(f, "object-not-at-goal ({distance:.4} m away)")
            }
            other => f.write_str(other.code()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub success: bool,
    pub trace: Vec<SimState>,
    pub failure: Option<FailureReason>,
}

fn horizontal_distance(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    (a.xy() - b.xy()).norm()
}

/// Applies the deltas one per step and evaluates the task predicate.
pub fn replay(
    arm: &ArmModel,
    actions: &ActionSequence,
    gripper_timeline: &[Gripper],
    task: &TaskSpec,
) -> Result<SimResult, SimError> {
    task.validate()?;
    arm.check_len(&actions.initial_joints)?;
    let steps = actions.deltas.len();
    if gripper_timeline.len() != steps + 1 {
        return Err(SimError::InvalidInput(format!(
            "gripper timeline has {} entries, expected {}",
            gripper_timeline.len(),
            steps + 1
        )));
    }
    if let Some(i) = actions.deltas.iter().position(|d| d.len() != arm.joint_count()) {
        return Err(SimError::InvalidInput(format!("delta {i} has the wrong length")));
    }

    let mut joints = actions.initial_joints.clone();
    let fail = |trace: Vec<SimState>, reason| SimResult {
        success: false,
        trace,
        failure: Some(reason),
    };
    let ee = match forward_kinematics(arm, &joints) {
        Ok(ee) => ee,
        Err(SimError::JointLimit { joints }) => {
            return Ok(fail(Vec::new(), FailureReason::JointLimit { step: 0, joints }))
        }
        Err(e) => return Err(e),
    };
    let mut state = SimState {
        joints: joints.clone(),
        ee_pose: ee,
        gripper: gripper_timeline[0],
        object_position: task.object_start(),
        attached: false,
        waypoints_hit: Vec::new(),
    };
    let mut ever_attached = false;
    mark_waypoints(&mut state, task, 0);
    let mut trace = vec![state.clone()];

    for (k, delta) in actions.deltas.iter().enumerate() {
        let step = k + 1;
        for (q, d) in joints.iter_mut().zip(delta) {
            *q += d;
        }
        let ee = match forward_kinematics(arm, &joints) {
            Ok(ee) => ee,
            Err(SimError::JointLimit { joints }) => {
                return Ok(fail(trace, FailureReason::JointLimit { step, joints }))
            }
            Err(e) => return Err(e),
        };
        let prev = &trace[k];
        let mut next = SimState {
            joints: joints.clone(),
            ee_pose: ee,
            gripper: gripper_timeline[step],
            object_position: prev.object_position,
            attached: prev.attached,
            waypoints_hit: prev.waypoints_hit.clone(),
        };
        let ee_prev = prev.ee_position();
        let ee_next = next.ee_position();
        match &task.task {
            Task::Reach { .. } => mark_waypoints(&mut next, task, step),
            Task::Push {
                contact_radius,
                push_height,
                ..
            } => {
                let obj = next.object_position.as_mut().expect("push has an object");
                if ee_prev.z <= *push_height && horizontal_distance(&ee_prev, obj) <= *contact_radius {
                    obj.x += ee_next.x - ee_prev.x;
                    obj.y += ee_next.y - ee_prev.y;
                }
            }
            Task::PickAndPlace { grasp_radius, .. } => {
                let obj = next.object_position.as_mut().expect("pick-and-place has an object");
                if next.attached {
                    *obj = ee_next;
                }
                match (prev.gripper, next.gripper) {
                    (Gripper::Open, Gripper::Closed)
                        if !next.attached && (ee_next - *obj).norm() <= *grasp_radius =>
                    {
                        next.attached = true;
                        ever_attached = true;
                        *obj = ee_next;
                    }
                    (Gripper::Closed, Gripper::Open) => next.attached = false,
                    _ => {}
                }
            }
        }
        trace.push(next);
    }

    let last = trace.last().expect("trace has the initial state");
    let failure = match &task.task {
        Task::Reach { .. } => {
            (last.waypoints_hit.len() < 3).then_some(FailureReason::WaypointsMissed {
                hit: last.waypoints_hit.len(),
            })
        }
        Task::Push { goal, .. } => {
            let distance = (last.object_position.expect("object") - goal).norm();
            (distance > task.success_radius).then_some(FailureReason::ObjectNotAtGoal { distance })
        }
        Task::PickAndPlace { goal, .. } => {
            let distance = (last.object_position.expect("object") - goal).norm();
            if !ever_attached {
                Some(FailureReason::NeverGrasped)
            } else if last.attached || last.gripper.is_closed() {
                Some(FailureReason::StillHeld)
            } else if distance > task.success_radius {
                Some(FailureReason::ObjectNotAtGoal { distance })
            } else {
                None
            }
        }
    };
    Ok(SimResult {
        success: failure.is_none(),
        trace,
        failure,
    })
}

fn mark_waypoints(state: &mut SimState, task: &TaskSpec, step: usize) {
    if let Task::Reach { waypoints } = &task.task {
        let ee = state.ee_position();
        while let Some(wp) = waypoints.get(state.waypoints_hit.len()) {
            if (ee - wp).norm() <= task.success_radius {
                state.waypoints_hit.push(step);
            } else {
                break;
            }
        }
    }
}

/// Replays a demonstration's own joints and gripper timeline.
pub fn replay_demo(arm: &ArmModel, d: &Demonstration, task: &TaskSpec) -> Result<SimResult, SimError> {
    let actions = to_actions(d)?;
    replay(arm, &actions, &d.gripper_timeline(), task)
}

/// Writes a replay trace as CSV:
/// `t, j0..j{J-1}, ee_x, ee_y, ee_z, obj_x, obj_y, obj_z, gripper`.
/// Object columns are empty for tasks without an object. `timestamps`
/// must match the trace length when given; otherwise the step index is used.
pub fn write_trace_csv<W: Write>(trace: &[SimState], timestamps: Option<&[f64]>, mut out: W) -> io::Result<()> {
    let joint_count = trace.first().map_or(0, |s| s.joints.len());
    let mut header = vec!["t".to_string()];
    header.extend((0..joint_count).map(|i| format!("j{i}")));
    header.extend(["ee_x", "ee_y", "ee_z", "obj_x", "obj_y", "obj_z", "gripper"].map(String::from));
    writeln!(out, "{}", header.join(","))?;
    for (i, s) in trace.iter().enumerate() {
        let t = timestamps.and_then(|ts| ts.get(i).copied()).unwrap_or(i as f64);
        let mut row = vec![t.to_string()];
        row.extend(s.joints.iter().map(|q| q.to_string()));
        let ee = s.ee_position();
        row.extend([ee.x, ee.y, ee.z].map(|v| v.to_string()));
        match s.object_position {
            Some(o) => row.extend([o.x, o.y, o.z].map(|v| v.to_string())),
            None => row.extend(std::iter::repeat_n(String::new(), 3)),
        }
        row.push(s.gripper.as_u8().to_string());
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
