//! Pipeline configuration file (TOML). Every section is optional; command
//! line flags override whatever the file sets.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use demokit::filter::FilterConfig;
use demokit::ingest::DEFAULT_PORT;
use demokit::keypose::DetectorConfig;
use demokit::model::PinchThresholds;
use demokit::sim::{ArmModel, TaskSpec};
use demokit::synth::{
    SynthConfig, DEFAULT_APPROACH_HEIGHT, DEFAULT_DWELL_FRAMES, DEFAULT_FREQUENCY_HZ, DEFAULT_MEAN_SPEED,
    DEFAULT_RAMP_FRACTION, DEFAULT_TREMOR_AMPLITUDE, DEFAULT_TREMOR_CORRELATION,
};
use demokit::wire::DEFAULT_MAX_FRAME_LEN;
use serde::Deserialize;

use crate::DataError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// JSON arm description; the built-in 7-DoF arm when absent.
    pub arm_model: Option<PathBuf>,
    /// Default output directory for `record` and `synth`.
    pub output_dir: Option<PathBuf>,
    /// Default manifest for `eval`.
    pub corpus_manifest: Option<PathBuf>,
}

/// Generator settings without the task and seed, which are chosen per run.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub count: usize,
    pub frequency_hz: f64,
    pub tremor_amplitude: f64,
    pub tremor_correlation: f64,
    pub dwell_frames: usize,
    pub mean_speed: f64,
    pub ramp_fraction: f64,
    pub approach_height: f64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            count: 1,
            frequency_hz: DEFAULT_FREQUENCY_HZ,
            tremor_amplitude: DEFAULT_TREMOR_AMPLITUDE,
            tremor_correlation: DEFAULT_TREMOR_CORRELATION,
            dwell_frames: DEFAULT_DWELL_FRAMES,
            mean_speed: DEFAULT_MEAN_SPEED,
            ramp_fraction: DEFAULT_RAMP_FRACTION,
            approach_height: DEFAULT_APPROACH_HEIGHT,
        }
    }
}

impl SynthSettings {
    pub fn to_config(&self, task: TaskSpec, seed: u64) -> SynthConfig {
        SynthConfig {
            task,
            seed,
            frequency_hz: self.frequency_hz,
            tremor_amplitude: self.tremor_amplitude,
            tremor_correlation: self.tremor_correlation,
            dwell_frames: self.dwell_frames,
            mean_speed: self.mean_speed,
            ramp_fraction: self.ramp_fraction,
            approach_height: self.approach_height,
            start_joints: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSettings {
    pub addr: String,
    pub max_frame_len: usize,
    pub pinch: PinchThresholds,
    pub max_sessions: Option<usize>,
}

impl Default for ServerSettings {
    fn default() -> Self {
        Self {
            addr: format!("127.0.0.1:{DEFAULT_PORT}"),
            max_frame_len: DEFAULT_MAX_FRAME_LEN,
            pinch: PinchThresholds::default(),
            max_sessions: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub paths: Paths,
    pub detector: DetectorConfig,
    pub filter: FilterConfig,
    pub synth: SynthSettings,
    /// Task geometry used in place of the built-in default of the same kind.
    pub task: Option<TaskSpec>,
    pub server: ServerSettings,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: PipelineConfig = toml::from_str(&text)
            .map_err(|e| DataError(format!("config {}: {e}", path.display())))?;
        cfg.validate().with_context(|| format!("config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("paths.arm_model", &self.paths.arm_model),
            ("paths.corpus_manifest", &self.paths.corpus_manifest),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    bail!(DataError(format!("{name}: {} does not exist", p.display())));
                }
            }
        }
        self.detector.validate()?;
        self.filter.validate()?;
        self.server.pinch.validate()?;
        if self.server.max_frame_len == 0 {
            bail!(DataError("server.max_frame_len must be positive".into()));
        }
        if let Some(t) = &self.task {
            t.validate()?;
        }
        self.synth.to_config(TaskSpec::default_reach(), 0).validate()?;
        Ok(())
    }

    /// The configured task if it has this tag, otherwise the built-in one.
    pub fn task_for(&self, tag: &str) -> Option<TaskSpec> {
        match &self.task {
            Some(t) if t.tag() == tag => Some(t.clone()),
            _ => TaskSpec::default_for_tag(tag),
        }
    }

    pub fn arm(&self, flag: Option<&Path>) -> Result<ArmModel> {
        match flag.or(self.paths.arm_model.as_deref()) {
            None => Ok(ArmModel::default_seven_dof()),
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading arm model {}", p.display()))?;
                let arm: ArmModel = serde_json::from_str(&text)
                    .map_err(|e| DataError(format!("arm model {}: {e}", p.display())))?;
                arm.validate()?;
                Ok(arm)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_config_matches_the_defaults() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/pipeline.toml");
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.detector, DetectorConfig::default());
        assert_eq!(cfg.filter, FilterConfig::default());
        assert_eq!(cfg.server.pinch, PinchThresholds::default());
        assert_eq!(cfg.task, Some(TaskSpec::default_pick_and_place()));
        assert_eq!(cfg.synth.to_config(TaskSpec::default_reach(), 3), SynthConfig::new(TaskSpec::default_reach(), 3));
    }

    #[test]
    fn empty_config_is_all_defaults() {
        let cfg: PipelineConfig = toml::from_str("").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.detector, DetectorConfig::default());
        assert!(cfg.task.is_none());
        assert_eq!(cfg.task_for("push"), Some(TaskSpec::default_push()));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<PipelineConfig>("[filter]\nstrid = 3\n").is_err());
    }

    #[test]
    fn invalid_sections_fail_validation() {
        let cfg: PipelineConfig = toml::from_str("[detector]\nwindow_length = 8\n").unwrap();
        assert!(cfg.validate().is_err());
        let cfg: PipelineConfig = toml::from_str("[synth]\nramp_fraction = 0.7\n").unwrap();
        assert!(cfg.validate().is_err());
    }
}
