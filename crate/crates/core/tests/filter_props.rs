mod common;

use common::arb_demo;
use demokit::filter::{downsample, kept_indexes, smoothness, FilterConfig};
use demokit::keypose::{gripper_events, KeyPoseReport};
use demokit::model::Demonstration;
use proptest::prelude::*;
use proptest::strategy::ValueTree;

fn report_with(d: &Demonstration, keys: Vec<usize>) -> KeyPoseReport {
    let mut keys: Vec<usize> = keys.into_iter().filter(|&k| k < d.len()).collect();
    keys.extend(gripper_events(d));
    keys.sort_unstable();
    keys.dedup();
    KeyPoseReport {
        frame_count: d.len(),
        key_indexes: keys,
        ..KeyPoseReport::default()
    }
}

fn arb_case() -> impl Strategy<Value = (Demonstration, Vec<usize>, usize, bool)> {
    (
        arb_demo(80),
        prop::collection::vec(0usize..80, 0..10),
        1usize..12,
        any::<bool>(),
    )
}

proptest! {
    #[test]
    fn output_is_an_ordered_subsequence((d, keys, k, ends) in arb_case()) {
        let r = report_with(&d, keys);
        let cfg = FilterConfig { stride: k, always_keep_endpoints: ends };
        let kept = kept_indexes(d.len(), &r.key_indexes, &cfg).unwrap();
        prop_assume!(kept.len() >= 2);
        let out = downsample(&d, &r, &cfg).unwrap();
        prop_assert_eq!(out.len(), kept.len());
        prop_assert!(kept.windows(2).all(|w| w[0] < w[1]));
        for (f, &i) in out.frames.iter().zip(&kept) {
            prop_assert_eq!(f, &d.frames[i]);
        }
        for &key in &r.key_indexes {
            prop_assert!(kept.contains(&key));
        }
        prop_assert!(kept.contains(&0));
        if ends {
            prop_assert_eq!(*kept.last().unwrap(), d.len() - 1);
        }
    }

    #[test]
    fn stride_one_is_identity((d, keys, _k, ends) in arb_case()) {
        let r = report_with(&d, keys);
        let out = downsample(&d, &r, &FilterConfig { stride: 1, always_keep_endpoints: ends }).unwrap();
        prop_assert_eq!(out, d);
    }

    #[test]
    fn larger_stride_never_keeps_more((d, keys, k, ends) in arb_case(), extra in 1usize..10) {
        let r = report_with(&d, keys);
        let small = kept_indexes(d.len(), &r.key_indexes, &FilterConfig { stride: k, always_keep_endpoints: ends }).unwrap();
        let large = kept_indexes(d.len(), &r.key_indexes, &FilterConfig { stride: k * extra, always_keep_endpoints: ends }).unwrap();
        prop_assert!(large.len() <= small.len());
        prop_assert!(large.iter().all(|i| small.contains(i)));
    }

    #[test]
    fn gripper_transitions_survive((d, keys, k, ends) in arb_case()) {
        let r = report_with(&d, keys);
        let cfg = FilterConfig { stride: k, always_keep_endpoints: ends };
        prop_assume!(kept_indexes(d.len(), &r.key_indexes, &cfg).unwrap().len() >= 2);
        let out = downsample(&d, &r, &cfg).unwrap();
        // Each input transition appears as a transition between adjacent
        // output frames with the same timestamp on the new side.
        for i in gripper_events(&d) {
            let j = out.frames.iter().position(|f| f.t == d.frames[i].t).unwrap();
            prop_assert!(j > 0);
            prop_assert_eq!(out.frames[j - 1].gripper, d.frames[i - 1].gripper);
            prop_assert_eq!(out.frames[j].gripper, d.frames[i].gripper);
        }
        prop_assert_eq!(gripper_events(&out).len(), gripper_events(&d).len());
    }

    #[test]
    fn path_length_bounds_displacement(d in arb_demo(60)) {
        prop_assume!(d.len() >= 3);
        let s = smoothness(&d).unwrap();
        let chord = (d.frames.last().unwrap().position - d.frames[0].position).norm();
        prop_assert!(s.path_length + 1e-12 >= chord);
        prop_assert!((0.0..=std::f64::consts::PI).contains(&s.mean_abs_turning_angle));
    }
}

#[test]
fn out_of_range_report_is_rejected() {
    let mut runner = proptest::test_runner::TestRunner::default();
    let d = arb_demo(10).new_tree(&mut runner).unwrap().current();
    let r = KeyPoseReport {
        frame_count: d.len(),
        key_indexes: vec![d.len()],
        ..Default::default()
    };
    assert!(downsample(&d, &r, &FilterConfig::default()).is_err());
    let r = KeyPoseReport::empty(d.len() + 1);
    assert!(downsample(&d, &r, &FilterConfig::default()).is_err());
}
