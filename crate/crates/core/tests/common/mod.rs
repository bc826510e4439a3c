#![allow(dead_code)]

use std::collections::BTreeSet;
use std::f64::consts::PI;

use demokit::model::{Demonstration, Gripper, PoseFrame};
use demokit::sim::ArmModel;
use nalgebra::{Quaternion, Vector3};
use proptest::prelude::*;
use rand::Rng;

pub fn frame(t: f64, p: Vector3<f64>, q: Quaternion<f64>, joints: Vec<f64>, g: Gripper) -> PoseFrame {
    PoseFrame {
        t,
        position: p,
        orientation: q,
        joints,
        gripper: g,
    }
}

pub fn demo_from_positions(points: &[Vector3<f64>], grippers: &[Gripper]) -> Demonstration {
    Demonstration {
        id: "test".into(),
        joint_count: 0,
        frequency_hz: 60.0,
        task_tag: None,
        frames: points
            .iter()
            .zip(grippers)
            .enumerate()
            .map(|(i, (p, g))| frame(i as f64 / 60.0, *p, Quaternion::identity(), vec![], *g))
            .collect(),
    }
}

fn unit_quaternion(w: f64, x: f64, y: f64, z: f64) -> Quaternion<f64> {
    let q = Quaternion::new(w, x, y, z);
    let n = q.norm();
    if n < 1e-3 {
        Quaternion::identity()
    } else {
        q / n
    }
}

prop_compose! {
    fn arb_frame(joints: usize)(
        dt in 1e-4f64..0.1,
        p in prop::array::uniform3(-2.0f64..2.0),
        q in prop::array::uniform4(-1.0f64..1.0),
        j in prop::collection::vec(-3.0f64..3.0, joints),
        closed in any::<bool>(),
    ) -> (f64, PoseFrame) {
        let g = if closed { Gripper::Closed } else { Gripper::Open };
        (dt, frame(0.0, Vector3::from(p), unit_quaternion(q[0], q[1], q[2], q[3]), j, g))
    }
}

/// Valid demonstrations with arbitrary (not necessarily smooth) values.
pub fn arb_demo(max_frames: usize) -> impl Strategy<Value = Demonstration> {
    (0usize..8, any::<u64>(), 1.0f64..240.0).prop_flat_map(move |(joints, t0, hz)| {
        prop::collection::vec(arb_frame(joints), 2..=max_frames).prop_map(move |steps| {
            let mut t = (t0 % 1000) as f64 * 0.001;
            let frames = steps
                .into_iter()
                .map(|(dt, mut f)| {
                    f.t = t;
                    t += dt;
                    f
                })
                .collect();
            Demonstration {
                id: format!("demo-{t0}"),
                joint_count: joints,
                frequency_hz: hz,
                task_tag: (t0 % 2 == 0).then(|| "reach".to_string()),
                frames,
            }
        })
    })
}

/// A random walk that occasionally stalls and turns, with gripper flips.
pub fn random_trajectory<R: Rng>(rng: &mut R, n: usize) -> (Vec<Vector3<f64>>, Vec<Gripper>) {
    let mut p = Vector3::zeros();
    let mut dir = Vector3::new(1.0, 0.0, 0.0);
    let mut g = Gripper::Open;
    let mut points = Vec::with_capacity(n);
    let mut grippers = Vec::with_capacity(n);
    for _ in 0..n {
        if rng.random_bool(0.1) {
            dir = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
        }
        let speed = if rng.random_bool(0.2) { 0.0005 } else { rng.random_range(0.001..0.02) };
        let jitter = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ) * 0.002;
        p += dir * speed + jitter;
        if rng.random_bool(0.03) {
            g = if g.is_closed() { Gripper::Open } else { Gripper::Closed };
        }
        points.push(p);
        grippers.push(g);
    }
    (points, grippers)
}

/// Brute-force key-pose detection: direct loops over every index and
/// every ordered pair, interior angle from `acos` of the normalized dot.
pub fn oracle_key_poses(
    points: &[Vector3<f64>],
    grippers: &[Gripper],
    window: usize,
    sharp: f64,
    dense_factor: f64,
) -> Vec<usize> {
    let n = points.len();
    let h = window / 2;
    let mut spacing = 0.0;
    for i in 1..n {
        spacing += (points[i] - points[i - 1]).norm();
    }
    let threshold = dense_factor * spacing / (n - 1) as f64 * window as f64;
    let mut keys = BTreeSet::new();
    for i in 0..n {
        if i < h || i + h >= n {
            continue;
        }
        let a = points[i - h] - points[i];
        let b = points[i + h] - points[i];
        let turning = if a.norm() == 0.0 || b.norm() == 0.0 {
            0.0
        } else {
            let c = (a.dot(&b) / (a.norm() * b.norm())).clamp(-1.0, 1.0);
            PI - c.acos()
        };
        let mut total = 0.0;
        let mut pairs = 0usize;
        for j in i - h..=i + h {
            for k in i - h..=i + h {
                if j != k {
                    total += (points[j] - points[k]).norm();
                    pairs += 1;
                }
            }
        }
        if turning > sharp && total / (pairs as f64) < threshold {
            keys.insert(i);
        }
    }
    for i in 1..n {
        if grippers[i] != grippers[i - 1] {
            keys.insert(i);
        }
    }
    keys.into_iter().collect()
}

type Mat4 = [[f64; 4]; 4];

fn matmul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

fn rodrigues(axis: &Vector3<f64>, angle: f64) -> Mat4 {
    let (x, y, z) = (axis.x, axis.y, axis.z);
    let (s, c) = angle.sin_cos();
    let v = 1.0 - c;
    [
        [c + x * x * v, x * y * v - z * s, x * z * v + y * s, 0.0],
        [y * x * v + z * s, c + y * y * v, y * z * v - x * s, 0.0],
        [z * x * v - y * s, z * y * v + x * s, c + z * z * v, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

fn translation(v: &Vector3<f64>) -> Mat4 {
    [
        [1.0, 0.0, 0.0, v.x],
        [0.0, 1.0, 0.0, v.y],
        [0.0, 0.0, 1.0, v.z],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

/// Tool transform as a homogeneous matrix product.
pub fn oracle_fk(arm: &ArmModel, q: &[f64]) -> Mat4 {
    let base = arm.base.to_homogeneous();
    let mut t: Mat4 = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            t[i][j] = base[(i, j)];
        }
    }
    for (spec, &qi) in arm.joints.iter().zip(q) {
        t = matmul(&t, &rodrigues(&spec.axis, qi));
        t = matmul(&t, &translation(&spec.offset));
    }
    t
}
