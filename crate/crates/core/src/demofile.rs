//! Line-delimited demonstration files.
//!
//! Line 1 is a JSON header object with `id`, `joint_count`, `frequency_hz`
//! and `task_tag` (string or null). Every following line is one JSON frame
//! object:
//!
//! ```text
//! {"id":"reach-0001","joint_count":7,"frequency_hz":60.0,"task_tag":"reach"}
//! {"t":0.0,"position":[0.45,0.0,0.30],"orientation":[1.0,0.0,0.0,0.0],"joints":[...],"gripper":0}
//! ```
//!
//! Floats are written in shortest round-trip form, so reading a written file
//! reproduces every field bit for bit.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{quat_from_wxyz, validate_demonstration, Demonstration, Gripper, PoseFrame, Violation};

/// Extension used for completed demonstration files.
pub const DEMO_EXTENSION: &str = "jsonl";

#[derive(Debug, Error)]
pub enum DemoFileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid demonstration: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

impl DemoFileError {
    fn io(path: &Path, source: io::Error) -> Self {
        DemoFileError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoHeader {
    pub id: String,
    pub joint_count: usize,
    pub frequency_hz: f64,
    pub task_tag: Option<String>,
}

impl DemoHeader {
    pub fn of(d: &Demonstration) -> Self {
        Self {
            id: d.id.clone(),
            joint_count: d.joint_count,
            frequency_hz: d.frequency_hz,
            task_tag: d.task_tag.clone(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    t: f64,
    position: [f64; 3],
    orientation: [f64; 4],
    joints: Vec<f64>,
    gripper: Gripper,
}

impl From<&PoseFrame> for FrameRecord {
    fn from(f: &PoseFrame) -> Self {
        Self {
            t: f.t,
            position: [f.position.x, f.position.y, f.position.z],
            orientation: f.orientation_wxyz(),
            joints: f.joints.clone(),
            gripper: f.gripper,
        }
    }
}

impl From<FrameRecord> for PoseFrame {
    fn from(r: FrameRecord) -> Self {
        Self {
            t: r.t,
            position: Vector3::from(r.position),
            orientation: quat_from_wxyz(r.orientation),
            joints: r.joints,
            gripper: r.gripper,
        }
    }
}

/// Appends frames to a demonstration stream, one line per frame.
pub struct DemoWriter<W: Write> {
    out: W,
    frames: usize,
}

impl<W: Write> DemoWriter<W> {
    pub fn new(mut out: W, header: &DemoHeader) -> io::Result<Self> {
        serde_json::to_writer(&mut out, header)?;
        out.write_all(b"\n")?;
        Ok(Self { out, frames: 0 })
    }

    pub fn append(&mut self, frame: &PoseFrame) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, &FrameRecord::from(frame))?;
        self.out.write_all(b"\n")?;
        self.frames += 1;
        Ok(())
    }

    pub fn frames_written(&self) -> usize {
        self.frames
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl DemoWriter<BufWriter<File>> {
    pub fn create(path: &Path, header: &DemoHeader) -> Result<Self, DemoFileError> {
        let file = File::create(path).map_err(|e| DemoFileError::io(path, e))?;
        DemoWriter::new(BufWriter::new(file), header).map_err(|e| DemoFileError::io(path, e))
    }
}

/// Serializes a valid demonstration into `out`.
pub fn write_demo<W: Write>(d: &Demonstration, out: W) -> Result<W, DemoFileError> {
    let violations = validate_demonstration(d);
    if !violations.is_empty() {
        return Err(DemoFileError::Invalid(violations));
    }
    let to_err = |e: io::Error| DemoFileError::Io {
        path: PathBuf::new(),
        source: e,
    };
    let mut w = DemoWriter::new(out, &DemoHeader::of(d)).map_err(to_err)?;
    for f in &d.frames {
        w.append(f).map_err(to_err)?;
    }
    w.flush().map_err(to_err)?;
    Ok(w.into_inner())
}

pub fn demo_to_string(d: &Demonstration) -> Result<String, DemoFileError> {
    let bytes = write_demo(d, Vec::new())?;
    Ok(String::from_utf8(bytes).expect("serde_json emits UTF-8"))
}

pub fn write_demo_file(d: &Demonstration, path: &Path) -> Result<(), DemoFileError> {
    // Validate before touching the filesystem.
    let violations = validate_demonstration(d);
    if !violations.is_empty() {
        return Err(DemoFileError::Invalid(violations));
    }
    let mut w = DemoWriter::create(path, &DemoHeader::of(d))?;
    for f in &d.frames {
        w.append(f).map_err(|e| DemoFileError::io(path, e))?;
    }
    w.flush().map_err(|e| DemoFileError::io(path, e))
}

/// Parses a demonstration stream and validates the result.
pub fn read_demo<R: BufRead>(input: R) -> Result<Demonstration, DemoFileError> {
    let mut header: Option<DemoHeader> = None;
    let mut frames = Vec::new();
    let mut last_line = 0;
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        last_line = line_no;
        let line = line.map_err(|e| DemoFileError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let parse_err = |e: serde_json::Error| DemoFileError::Parse {
            line: line_no,
            message: e.to_string(),
        };
        match &header {
            None => header = Some(serde_json::from_str(&line).map_err(parse_err)?),
            Some(h) => {
                let rec: FrameRecord = serde_json::from_str(&line).map_err(parse_err)?;
                if rec.joints.len() != h.joint_count {
                    return Err(DemoFileError::Parse {
                        line: line_no,
                        message: format!(
                            "expected {} joints, found {}",
                            h.joint_count,
                            rec.joints.len()
                        ),
                    });
                }
                frames.push(PoseFrame::from(rec));
            }
        }
    }
    let Some(header) = header else {
        return Err(DemoFileError::Parse {
            line: 1,
            message: "empty file: missing header and frames (need at least 2 frames)".into(),
        });
    };
    if frames.len() < 2 {
        return Err(DemoFileError::Parse {
            line: last_line,
            message: format!("need at least 2 frames, found {}", frames.len()),
        });
    }
    let d = Demonstration {
        id: header.id,
        joint_count: header.joint_count,
        frequency_hz: header.frequency_hz,
        task_tag: header.task_tag,
        frames,
    };
    let violations = validate_demonstration(&d);
    if violations.is_empty() {
        Ok(d)
    } else {
        Err(DemoFileError::Invalid(violations))
    }
}

pub fn read_demo_file(path: &Path) -> Result<Demonstration, DemoFileError> {
    let file = File::open(path).map_err(|e| DemoFileError::io(path, e))?;
    read_demo(BufReader::new(file))
}
