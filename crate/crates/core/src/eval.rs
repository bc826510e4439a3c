//! Before/after metrics over a corpus: key-point precision and recall
//! against ground truth, smoothness, replay success and frame reduction.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demofile::{read_demo_file, DemoFileError};
use crate::filter::{downsample, smoothness, FilterConfig, FilterError};
use crate::keypose::{detect_key_poses, DetectorConfig, KeyPoseError, KeyPoseReport};
use crate::model::Demonstration;
use crate::sim::{replay_demo, ArmModel, SimError, TaskSpec};
use crate::synth::{CorpusManifest, GroundTruth};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("missing corpus files: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    Missing(Vec<PathBuf>),
    #[error(transparent)]
    File(#[from] DemoFileError),
    #[error(transparent)]
    KeyPose(#[from] KeyPoseError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalConfig {
    pub detector: DetectorConfig,
    pub filter: FilterConfig,
    /// When false no frame is treated as key, gripper events included.
    pub detector_disabled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoMetrics {
    pub id: String,
    pub task: String,
    pub frames_raw: usize,
    pub frames_filtered: usize,
    pub key_count: usize,
    /// Share of key frames within tolerance of a ground-truth event.
    pub precision: Option<f64>,
    /// Share of ground-truth events with a key frame within tolerance.
    pub recall: Option<f64>,
    pub corner_recall: Option<f64>,
    pub smooth_raw: f64,
    pub smooth_filtered: f64,
    pub success_raw: bool,
    pub success_filtered: bool,
    pub failure_raw: Option<String>,
    pub failure_filtered: Option<String>,
}

impl DemoMetrics {
    pub fn reduction(&self) -> f64 {
        1.0 - self.frames_filtered as f64 / self.frames_raw as f64
    }
}

fn near(idx: usize, targets: &[usize], tol: usize) -> bool {
    targets.iter().any(|&t| idx.abs_diff(t) <= tol)
}

/// Fraction of `events` that have some index of `found` within `tol`.
pub fn recall_within(events: &[usize], found: &[usize], tol: usize) -> Option<f64> {
    if events.is_empty() {
        return None;
    }
    let hit = events.iter().filter(|&&e| near(e, found, tol)).count();
    Some(hit as f64 / events.len() as f64)
}

pub fn evaluate_demo(
    arm: &ArmModel,
    demo: &Demonstration,
    truth: &GroundTruth,
    task: &TaskSpec,
    cfg: &EvalConfig,
) -> Result<DemoMetrics, EvalError> {
    let report = if cfg.detector_disabled {
        KeyPoseReport::empty(demo.len())
    } else {
        detect_key_poses(demo, &cfg.detector)?
    };
    let filtered = downsample(demo, &report, &cfg.filter)?;
    let tol = cfg.detector.half_window();
    let events = truth.all_events();
    let keys = &report.key_indexes;
    let precision = (!keys.is_empty())
        .then(|| keys.iter().filter(|&&k| near(k, &events, tol)).count() as f64 / keys.len() as f64);
    let raw = replay_demo(arm, demo, task)?;
    let after = replay_demo(arm, &filtered, task)?;
    Ok(DemoMetrics {
        id: demo.id.clone(),
        task: task.tag().to_string(),
        frames_raw: demo.len(),
        frames_filtered: filtered.len(),
        key_count: keys.len(),
        precision,
        recall: recall_within(&events, keys, tol),
        corner_recall: recall_within(&truth.corner_frames, keys, tol),
        smooth_raw: smoothness(demo)?.mean_abs_turning_angle,
        smooth_filtered: smoothness(&filtered)?.mean_abs_turning_angle,
        success_raw: raw.success,
        success_filtered: after.success,
        failure_raw: raw.failure.map(|f| f.to_string()),
        failure_filtered: after.failure.map(|f| f.to_string()),
    })
}

/// Evaluates every manifest entry; fails up front if any file is missing.
pub fn evaluate_corpus(
    manifest: &CorpusManifest,
    corpus_dir: &Path,
    arm: &ArmModel,
    cfg: &EvalConfig,
) -> Result<Vec<DemoMetrics>, EvalError> {
    let missing: Vec<PathBuf> = manifest
        .entries
        .iter()
        .map(|e| corpus_dir.join(&e.file))
        .filter(|p| !p.is_file())
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::Missing(missing));
    }
    manifest
        .entries
        .par_iter()
        .map(|e| {
            let demo = read_demo_file(&corpus_dir.join(&e.file))?;
            evaluate_demo(arm, &demo, &e.ground_truth, &e.task, cfg)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub task: String,
    pub demos: usize,
    pub success_rate_raw: f64,
    pub success_rate_filtered: f64,
    pub mean_precision: Option<f64>,
    pub mean_recall: Option<f64>,
    pub mean_smooth_raw: f64,
    pub mean_smooth_filtered: f64,
    /// Share of demos whose filtered smoothness is strictly lower.
    pub smoother_share: f64,
    pub mean_reduction: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn aggregate(task: &str, rows: &[&DemoMetrics]) -> Aggregate {
    let n = rows.len().max(1) as f64;
    let share = |f: &dyn Fn(&DemoMetrics) -> bool| rows.iter().filter(|m| f(m)).count() as f64 / n;
    Aggregate {
        task: task.to_string(),
        demos: rows.len(),
        success_rate_raw: share(&|m| m.success_raw),
        success_rate_filtered: share(&|m| m.success_filtered),
        mean_precision: mean(rows.iter().filter_map(|m| m.precision)),
        mean_recall: mean(rows.iter().filter_map(|m| m.recall)),
        mean_smooth_raw: mean(rows.iter().map(|m| m.smooth_raw)).unwrap_or(0.0),
        mean_smooth_filtered: mean(rows.iter().map(|m| m.smooth_filtered)).unwrap_or(0.0),
        smoother_share: share(&|m| m.smooth_filtered < m.smooth_raw),
        mean_reduction: mean(rows.iter().map(|m| m.reduction())).unwrap_or(0.0),
    }
}

/// One aggregate per task (in first-seen order) followed by the overall row.
pub fn aggregate_by_task(rows: &[DemoMetrics]) -> Vec<Aggregate> {
    let mut tasks: Vec<&str> = Vec::new();
    for r in rows {
        if !tasks.contains(&r.task.as_str()) {
            tasks.push(&r.task);
        }
    }
    let mut out: Vec<Aggregate> = tasks
        .iter()
        .map(|t| aggregate(t, &rows.iter().filter(|r| r.task == *t).collect::<Vec<_>>()))
        .collect();
    out.push(aggregate("all", &rows.iter().collect::<Vec<_>>()));
    out
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}

pub const METRICS_CSV_HEADER: &str = "id,task,frames_raw,frames_filtered,reduction,key_count,precision,recall,corner_recall,smooth_raw,smooth_filtered,success_raw,success_filtered,failure_raw,failure_filtered";

pub fn write_metrics_csv<W: Write>(rows: &[DemoMetrics], mut out: W) -> io::Result<()> {
    writeln!(out, "{METRICS_CSV_HEADER}")?;
    for m in rows {
        writeln!(
            out,
            "{},{},{},{},{:.6},{},{},{},{},{:.6},{:.6},{},{},{},{}",
            m.id,
            m.task,
            m.frames_raw,
            m.frames_filtered,
            m.reduction(),
            m.key_count,
            opt(m.precision),
            opt(m.recall),
            opt(m.corner_recall),
            m.smooth_raw,
            m.smooth_filtered,
            u8::from(m.success_raw),
            u8::from(m.success_filtered),
            m.failure_raw.as_deref().unwrap_or(""),
            m.failure_filtered.as_deref().unwrap_or(""),
        )?;
    }
    Ok(())
}

/// Fixed-width summary table.
pub fn format_summary(aggs: &[Aggregate]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<16} {:>5} {:>9} {:>9} {:>9} {:>9} {:>10} {:>10} {:>8} {:>9}",
        "task", "demos", "succ_raw", "succ_filt", "precision", "recall", "turn_raw", "turn_filt", "smoother", "reduction"
    );
    for a in aggs {
        let _ = writeln!(
            s,
            "{:<16} {:>5} {:>9.3} {:>9.3} {:>9} {:>9} {:>10.4} {:>10.4} {:>8.3} {:>9.3}",
            a.task,
            a.demos,
            a.success_rate_raw,
            a.success_rate_filtered,
            a.mean_precision.map_or("-".into(), |v| format!("{v:.3}")),
            a.mean_recall.map_or("-".into(), |v| format!("{v:.3}")),
            a.mean_smooth_raw,
            a.mean_smooth_filtered,
            a.smoother_share,
            a.mean_reduction,
        );
    }
    s
}
