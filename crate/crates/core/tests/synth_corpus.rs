use demokit::demofile::read_demo_file;
use demokit::keypose::{detect_key_poses, DetectorConfig};
use demokit::model::validate_demonstration;
use demokit::sim::{forward_kinematics, replay_demo, ArmModel, Task, TaskSpec};
use demokit::synth::{generate, generate_corpus, generate_detailed, CorpusManifest, SynthConfig, SynthError, MANIFEST_FILE};
use nalgebra::Vector3;

fn tasks() -> [TaskSpec; 3] {
    [TaskSpec::default_reach(), TaskSpec::default_push(), TaskSpec::default_pick_and_place()]
}

#[test]
fn same_seed_same_demo() {
    let arm = ArmModel::default_seven_dof();
    for task in tasks() {
        let a = generate(&SynthConfig::new(task.clone(), 42), &arm).unwrap();
        let b = generate(&SynthConfig::new(task.clone(), 42), &arm).unwrap();
        let c = generate(&SynthConfig::new(task, 43), &arm).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0.frames, c.0.frames);
        assert_eq!(a.1, c.1);
    }
}

#[test]
fn generated_demos_are_valid_and_consistent() {
    let arm = ArmModel::default_seven_dof();
    for task in tasks() {
        let (d, truth) = generate(&SynthConfig::new(task.clone(), 1), &arm).unwrap();
        assert!(validate_demonstration(&d).is_empty());
        assert_eq!(d.task_tag.as_deref(), Some(task.tag()));
        for f in &d.frames {
            let fk = forward_kinematics(&arm, &f.joints).unwrap();
            assert_eq!(fk.translation.vector, f.position);
        }
        let events = demokit::keypose::gripper_events(&d);
        let mut marked: Vec<usize> = truth.grasp_frames.iter().chain(&truth.release_frames).copied().collect();
        marked.sort_unstable();
        assert_eq!(events, marked);
        assert!(detect_key_poses(&d, &DetectorConfig::default()).is_ok());
    }
}

#[test]
fn tremor_statistics_match_configuration() {
    let arm = ArmModel::default_seven_dof();
    let mut residuals: Vec<Vector3<f64>> = Vec::new();
    let mut seed = 100;
    while residuals.len() < 12_000 {
        let out = generate_detailed(&SynthConfig::new(TaskSpec::default_push(), seed), &arm).unwrap();
        for (f, clean) in out.demo.frames.iter().zip(&out.clean_positions) {
            residuals.push(f.position - clean);
        }
        seed += 1;
    }
    let n = residuals.len() as f64;
    for axis in 0..3 {
        let mean = residuals.iter().map(|r| r[axis]).sum::<f64>() / n;
        let var = residuals.iter().map(|r| (r[axis] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let std = var.sqrt();
        assert!((std - 0.002).abs() <= 0.2 * 0.002, "axis {axis}: {std}");
    }
    // Lag-1 autocorrelation follows the configured coefficient.
    let lagged: f64 = residuals.windows(2).map(|w| w[0].x * w[1].x).sum::<f64>() / (n - 1.0);
    let var: f64 = residuals.iter().map(|r| r.x * r.x).sum::<f64>() / n;
    assert!((lagged / var - 0.9).abs() < 0.05, "{}", lagged / var);
}

#[test]
fn noise_free_path_hits_every_target() {
    let arm = ArmModel::default_seven_dof();
    for task in tasks() {
        let mut cfg = SynthConfig::new(task.clone(), 0);
        cfg.tremor_amplitude = 0.0;
        let (d, truth) = generate(&cfg, &arm).unwrap();
        let points: Vec<Vector3<f64>> = match &task.task {
            Task::Reach { waypoints } => waypoints.to_vec(),
            Task::Push { goal, .. } => vec![*goal],
            Task::PickAndPlace { object_start, goal, .. } => vec![*object_start, *goal],
        };
        for p in points {
            let best = d.frames.iter().map(|f| (f.position - p).norm()).fold(f64::INFINITY, f64::min);
            let tol = if matches!(task.task, Task::Push { .. }) { 0.05 } else { 1e-6 };
            assert!(best <= tol, "{} misses {p:?} by {best}", task.tag());
        }
        // Corners are stationary without tremor.
        for &c in &truth.corner_frames {
            assert!((d.frames[c].position - d.frames[c - 1].position).norm() < 1e-12);
        }
        assert!(replay_demo(&arm, &d, &task).unwrap().success);
    }
}

#[test]
fn corpus_files_match_manifest() {
    let arm = ArmModel::default_seven_dof();
    let dir = tempfile::tempdir().unwrap();
    let base = SynthConfig::new(TaskSpec::default_reach(), 7);
    let manifest = generate_corpus(&base, 3, dir.path(), &arm).unwrap();
    assert_eq!(manifest.entries.len(), 3);
    let loaded = CorpusManifest::read(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(loaded, manifest);
    for (k, e) in loaded.entries.iter().enumerate() {
        assert_eq!(e.seed, 7 + k as u64);
        let d = read_demo_file(&dir.path().join(&e.file)).unwrap();
        assert_eq!(d.len(), e.frame_count);
        let (again, truth) = generate(&SynthConfig { seed: e.seed, ..base.clone() }, &arm).unwrap();
        assert_eq!(d, again);
        assert_eq!(truth, e.ground_truth);
    }
}

#[test]
fn unreachable_target_is_named() {
    let arm = ArmModel::default_seven_dof();
    let mut task = TaskSpec::default_reach();
    if let Task::Reach { waypoints } = &mut task.task {
        waypoints[1] = Vector3::new(3.0, 0.0, 0.2);
    }
    match generate(&SynthConfig::new(task, 0), &arm) {
        Err(SynthError::Unreachable { name, .. }) => assert!(name.contains('2'), "{name}"),
        other => panic!("expected unreachable, got {:?}", other.map(|d| d.0.len())),
    }
}

#[test]
fn invalid_configuration_is_rejected() {
    let arm = ArmModel::default_seven_dof();
    let mut cfg = SynthConfig::new(TaskSpec::default_push(), 0);
    cfg.tremor_correlation = 1.0;
    assert!(matches!(generate(&cfg, &arm), Err(SynthError::InvalidConfig(_))));
    cfg.tremor_correlation = 0.9;
    cfg.tremor_amplitude = -1.0;
    assert!(matches!(generate(&cfg, &arm), Err(SynthError::InvalidConfig(_))));
}
