use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::time::{Duration, Instant};

use demokit::demofile::{read_demo_file, write_demo_file};
use demokit::ingest::{replay_client, IngestError, Server, ServeConfig, SessionResult, SessionStatus, StreamClient};
use demokit::model::{Gripper, RawHandFrame};
use demokit::sim::{ArmModel, TaskSpec};
use demokit::synth::{generate, SynthConfig};
use demokit::wire::{codes, Hello, StreamMode, WireFrame, WireMessage};
use demokit::Demonstration;
use nalgebra::{Quaternion, Vector3};

fn sample_demo(frames: usize) -> Demonstration {
    let arm = ArmModel::default_seven_dof();
    let (mut d, _) = generate(&SynthConfig::new(TaskSpec::default_pick_and_place(), 5), &arm).unwrap();
    d.frames.truncate(frames);
    d
}

fn hello_for(d: &Demonstration) -> WireMessage {
    WireMessage::Hello(Hello {
        mode: StreamMode::Pose,
        joint_count: d.joint_count as u32,
        frequency_hz: d.frequency_hz,
        id: d.id.clone(),
        task_tag: d.task_tag.clone(),
    })
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

fn wait_for<F: Fn() -> bool>(f: F) {
    let start = Instant::now();
    while !f() {
        assert!(start.elapsed() < Duration::from_secs(10), "timed out");
        std::thread::sleep(Duration::from_millis(10));
    }
}

#[test]
fn streamed_file_matches_source_exactly() {
    let src_dir = tempfile::tempdir().unwrap();
    let out_dir = tempfile::tempdir().unwrap();
    let demo = sample_demo(100);
    let src = src_dir.path().join("src.jsonl");
    write_demo_file(&demo, &src).unwrap();

    let server = Server::bind("127.0.0.1:0", out_dir.path(), ServeConfig::default()).unwrap().spawn().unwrap();
    let reply = replay_client(&src, server.addr, f64::INFINITY).unwrap();
    let SessionResult::Acked { count, file } = reply else {
        panic!("expected ACK, got {reply:?}")
    };
    assert_eq!(count, 100);
    let outcomes = server.stop().unwrap();
    assert_eq!(outcomes.len(), 1);
    assert_eq!(outcomes[0].status, SessionStatus::Completed);

    let stored = out_dir.path().join(&file);
    assert_eq!(fs::read(&stored).unwrap(), fs::read(&src).unwrap());
    assert_eq!(read_demo_file(&stored).unwrap(), demo);
    assert_eq!(files(out_dir.path()), vec![file]);
}

#[test]
fn frame_before_hello_is_refused() {
    let out_dir = tempfile::tempdir().unwrap();
    let server = Server::bind("127.0.0.1:0", out_dir.path(), ServeConfig::default()).unwrap().spawn().unwrap();
    let demo = sample_demo(3);
    let mut client = StreamClient::connect(server.addr).unwrap();
    client.send(&WireMessage::Frame(WireFrame::Pose(demo.frames[0].clone()))).unwrap();
    match client.read_reply().unwrap() {
        SessionResult::Rejected { code, .. } => assert_eq!(code, codes::UNEXPECTED_MESSAGE),
        other => panic!("expected ERROR, got {other:?}"),
    }
    let outcomes = server.stop().unwrap();
    assert!(matches!(outcomes[0].status, SessionStatus::Rejected(_)));
    assert!(files(out_dir.path()).is_empty());
}

#[test]
fn disconnect_leaves_partial_file() {
    let out_dir = tempfile::tempdir().unwrap();
    let server = Server::bind("127.0.0.1:0", out_dir.path(), ServeConfig::default()).unwrap().spawn().unwrap();
    let demo = sample_demo(100);
    let mut client = StreamClient::connect(server.addr).unwrap();
    client.send(&hello_for(&demo)).unwrap();
    for f in &demo.frames[..40] {
        client.send(&WireMessage::Frame(WireFrame::Pose(f.clone()))).unwrap();
    }
    client.abort();
    wait_for(|| files(out_dir.path()).iter().any(|f| f.ends_with(".partial")));
    let outcomes = server.stop().unwrap();
    assert_eq!(outcomes[0].frames, 40);
    assert!(matches!(outcomes[0].status, SessionStatus::Partial(_)));
    let names = files(out_dir.path());
    assert_eq!(names.len(), 1);
    assert!(names[0].ends_with(".jsonl.partial"), "{names:?}");
    let partial = read_demo_file(&out_dir.path().join(&names[0])).unwrap();
    assert_eq!(partial.frames, demo.frames[..40].to_vec());
}

#[test]
fn count_mismatch_is_refused() {
    let out_dir = tempfile::tempdir().unwrap();
    let server = Server::bind("127.0.0.1:0", out_dir.path(), ServeConfig::default()).unwrap().spawn().unwrap();
    let demo = sample_demo(10);
    let mut client = StreamClient::connect(server.addr).unwrap();
    client.send(&hello_for(&demo)).unwrap();
    for f in &demo.frames {
        client.send(&WireMessage::Frame(WireFrame::Pose(f.clone()))).unwrap();
    }
    client.send(&WireMessage::End { count: 11 }).unwrap();
    match client.read_reply().unwrap() {
        SessionResult::Rejected { code, .. } => assert_eq!(code, codes::COUNT_MISMATCH),
        other => panic!("expected ERROR, got {other:?}"),
    }
    server.stop().unwrap();
    assert!(files(out_dir.path()).iter().all(|f| f.ends_with(".partial")));
}

#[test]
fn invalid_frame_is_refused() {
    let out_dir = tempfile::tempdir().unwrap();
    let server = Server::bind("127.0.0.1:0", out_dir.path(), ServeConfig::default()).unwrap().spawn().unwrap();
    let demo = sample_demo(5);
    let mut client = StreamClient::connect(server.addr).unwrap();
    client.send(&hello_for(&demo)).unwrap();
    let mut bad = demo.frames[0].clone();
    bad.orientation = Quaternion::new(2.0, 0.0, 0.0, 0.0);
    client.send(&WireMessage::Frame(WireFrame::Pose(bad))).unwrap();
    match client.read_reply().unwrap() {
        SessionResult::Rejected { code, message } => {
            assert_eq!(code, codes::INVALID_FRAME);
            assert!(message.contains("unit-quaternion"), "{message}");
        }
        other => panic!("expected ERROR, got {other:?}"),
    }
    server.stop().unwrap();
}

#[test]
fn raw_hand_stream_derives_gripper() {
    let out_dir = tempfile::tempdir().unwrap();
    let server = Server::bind("127.0.0.1:0", out_dir.path(), ServeConfig::default()).unwrap().spawn().unwrap();
    let mut client = StreamClient::connect(server.addr).unwrap();
    client
        .send(&WireMessage::Hello(Hello {
            mode: StreamMode::RawHand,
            joint_count: 0,
            frequency_hz: 30.0,
            id: "hand".into(),
            task_tag: None,
        }))
        .unwrap();
    let pinch = [0.05, 0.03, 0.01, 0.03, 0.05, 0.03];
    for (i, p) in pinch.iter().enumerate() {
        client
            .send(&WireMessage::Frame(WireFrame::RawHand(RawHandFrame {
                t: i as f64 / 30.0,
                hand_position: Vector3::new(0.1 * i as f64, 0.0, 0.0),
                hand_orientation: Quaternion::identity(),
                pinch_distance: *p,
            })))
            .unwrap();
    }
    let SessionResult::Acked { file, .. } = client.finish().unwrap() else {
        panic!("expected ACK")
    };
    server.stop().unwrap();
    let d = read_demo_file(&out_dir.path().join(file)).unwrap();
    assert_eq!(d.joint_count, 0);
    use Gripper::*;
    assert_eq!(d.gripper_timeline(), vec![Open, Open, Closed, Closed, Open, Open]);
}

#[test]
fn concurrent_sessions_get_distinct_files() {
    let src_dir = tempfile::tempdir().unwrap();
    let out_dir = tempfile::tempdir().unwrap();
    let src = src_dir.path().join("src.jsonl");
    write_demo_file(&sample_demo(20), &src).unwrap();
    let cfg = ServeConfig {
        max_sessions: Some(3),
        ..ServeConfig::default()
    };
    let server = Server::bind("127.0.0.1:0", out_dir.path(), cfg).unwrap().spawn().unwrap();
    let addr = server.addr;
    let clients: Vec<_> = (0..3)
        .map(|_| {
            let src = src.clone();
            std::thread::spawn(move || replay_client(&src, addr, f64::INFINITY))
        })
        .collect();
    let mut names: Vec<String> = clients
        .into_iter()
        .map(|c| match c.join().unwrap().unwrap() {
            SessionResult::Acked { file, .. } => file,
            other => panic!("{other:?}"),
        })
        .collect();
    let outcomes = server.join().unwrap();
    assert_eq!(outcomes.len(), 3);
    names.sort();
    names.dedup();
    assert_eq!(names.len(), 3);
    assert_eq!(files(out_dir.path()), names);
}

#[test]
fn closed_port_is_a_transport_error() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("d.jsonl");
    write_demo_file(&sample_demo(5), &src).unwrap();
    let err = replay_client(&src, ("127.0.0.1", port), f64::INFINITY).unwrap_err();
    assert!(matches!(err, IngestError::Transport(_)), "{err}");
}

#[test]
fn busy_port_is_a_bind_error() {
    let holder = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = holder.local_addr().unwrap();
    let dir = tempfile::tempdir().unwrap();
    match Server::bind(addr, dir.path(), ServeConfig::default()) {
        Err(IngestError::Bind { addr: a, .. }) => assert!(a.contains(&addr.port().to_string())),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("bind unexpectedly succeeded"),
    }
}
