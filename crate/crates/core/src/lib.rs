//! Demonstration capture and processing for robot imitation learning.
//!
//! The pipeline records streamed end-effector/joint/gripper trajectories
//! ([`ingest`]), stores them as line-delimited files ([`demofile`]), marks
//! key frames where the hand turns sharply while moving slowly or where the
//! gripper opens or closes ([`keypose`]), decimates trajectories while
//! keeping those frames ([`filter`]), and checks the result by replaying
//! delta-joint actions on a kinematic arm ([`sim`]). [`synth`] produces
//! demonstrations with known key frames for testing, and [`eval`] ties the
//! stages together for corpus-level metrics.

pub mod demofile;
pub mod eval;
pub mod filter;
pub mod ingest;
pub mod keypose;
pub mod model;
pub mod sim;
pub mod synth;
pub mod wire;

pub use demofile::{read_demo_file, write_demo_file, DemoFileError};
pub use filter::{downsample, smoothness, FilterConfig, SmoothnessReport};
pub use keypose::{compute_angle, compute_density, detect_key_poses, DetectorConfig, KeyPoseReport};
pub use model::{derive_gripper_state, validate_demonstration, Demonstration, Gripper, PoseFrame, RawHandFrame};
pub use sim::{forward_kinematics, replay, to_actions, ArmModel, TaskSpec};
pub use synth::{generate, generate_corpus, GroundTruth, SynthConfig};
