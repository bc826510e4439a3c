mod common;

use common::oracle_fk;
use demokit::model::Gripper;
use demokit::sim::{forward_kinematics, jacobian, replay, replay_demo, to_actions, ArmModel, FailureReason, TaskSpec};
use demokit::synth::{generate, SynthConfig};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_joints(arm: &ArmModel, rng: &mut ChaCha8Rng) -> Vec<f64> {
    arm.joints.iter().map(|j| rng.random_range(j.limits[0]..j.limits[1])).collect()
}

#[test]
fn fk_matches_homogeneous_oracle() {
    let arm = ArmModel::default_seven_dof();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..2000 {
        let q = random_joints(&arm, &mut rng);
        let got = forward_kinematics(&arm, &q).unwrap().to_homogeneous();
        let want = oracle_fk(&arm, &q);
        for i in 0..4 {
            for j in 0..4 {
                assert!((got[(i, j)] - want[i][j]).abs() < 1e-9, "{q:?} ({i},{j})");
            }
        }
    }
}

#[test]
fn fk_matches_oracle_on_skewed_axes() {
    let mut arm = ArmModel::default_seven_dof();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for j in &mut arm.joints {
        j.axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            .normalize();
        j.offset = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
    }
    arm.validate().unwrap();
    for _ in 0..500 {
        let q = random_joints(&arm, &mut rng);
        let got = forward_kinematics(&arm, &q).unwrap().to_homogeneous();
        let want = oracle_fk(&arm, &q);
        for i in 0..3 {
            for j in 0..4 {
                assert!((got[(i, j)] - want[i][j]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn zero_joints_stack_the_offsets() {
    let arm = ArmModel::default_seven_dof();
    let p = forward_kinematics(&arm, &[0.0; 7]).unwrap().translation.vector;
    assert!((p - Vector3::new(0.0, 0.0, 0.333 + 0.316 + 0.384 + 0.207)).norm() < 1e-12);
}

#[test]
fn jacobian_position_rows_match_finite_differences() {
    let arm = ArmModel::default_seven_dof();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let q: Vec<f64> = random_joints(&arm, &mut rng).iter().map(|v| v * 0.9).collect();
        let jac = jacobian(&arm, &q).unwrap();
        let h = 1e-6;
        for k in 0..7 {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[k] += h;
            qm[k] -= h;
            let d = (forward_kinematics(&arm, &qp).unwrap().translation.vector
                - forward_kinematics(&arm, &qm).unwrap().translation.vector)
                / (2.0 * h);
            for r in 0..3 {
                assert!((jac[(r, k)] - d[r]).abs() < 1e-7);
            }
        }
    }
}

#[test]
fn replay_reconstructs_recorded_joints() {
    let arm = ArmModel::default_seven_dof();
    for task in [TaskSpec::default_reach(), TaskSpec::default_push(), TaskSpec::default_pick_and_place()] {
        let (demo, _) = generate(&SynthConfig::new(task.clone(), 21), &arm).unwrap();
        let actions = to_actions(&demo).unwrap();
        assert_eq!(actions.deltas.len(), demo.len() - 1);
        for (q, f) in actions.joint_trajectory().iter().zip(&demo.frames) {
            for (a, b) in q.iter().zip(&f.joints) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
        let result = replay(&arm, &actions, &demo.gripper_timeline(), &task).unwrap();
        assert!(result.success, "{:?}", result.failure);
        assert_eq!(result.trace.len(), demo.len());
        for (s, f) in result.trace.iter().zip(&demo.frames) {
            let fk = forward_kinematics(&arm, &s.joints).unwrap();
            assert!((fk.translation.vector - s.ee_position()).norm() < 1e-15);
            assert!((s.ee_position() - f.position).norm() < 1e-9);
            if s.attached {
                assert_eq!(s.object_position, Some(s.ee_position()));
            }
        }
    }
}

#[test]
fn object_moves_only_when_attached_or_pushed() {
    let arm = ArmModel::default_seven_dof();
    let task = TaskSpec::default_pick_and_place();
    let (demo, _) = generate(&SynthConfig::new(task.clone(), 4), &arm).unwrap();
    let result = replay_demo(&arm, &demo, &task).unwrap();
    for w in result.trace.windows(2) {
        if w[0].object_position != w[1].object_position {
            assert!(w[0].attached || w[1].attached);
        }
    }
}

#[test]
fn never_closing_the_gripper_fails_pick_and_place() {
    let arm = ArmModel::default_seven_dof();
    let task = TaskSpec::default_pick_and_place();
    let (mut demo, _) = generate(&SynthConfig::new(task.clone(), 8), &arm).unwrap();
    for f in &mut demo.frames {
        f.gripper = Gripper::Open;
    }
    let result = replay_demo(&arm, &demo, &task).unwrap();
    assert_eq!(result.failure, Some(FailureReason::NeverGrasped));
}

#[test]
fn reversed_reach_misses_waypoint_order() {
    let arm = ArmModel::default_seven_dof();
    let task = TaskSpec::default_reach();
    let (mut demo, _) = generate(&SynthConfig::new(task.clone(), 2), &arm).unwrap();
    demo.frames.reverse();
    for (i, f) in demo.frames.iter_mut().enumerate() {
        f.t = i as f64;
    }
    let result = replay_demo(&arm, &demo, &task).unwrap();
    assert!(!result.success);
    assert_eq!(result.failure.unwrap().code(), "waypoints-missed");
}
