//! Length-prefixed binary messages for streaming demonstrations over TCP.
//!
//! Every message is
//!
//! ```text
//! u32 LE  length      number of bytes that follow (kind byte + payload), >= 1
//! u8      kind        0x01 HELLO, 0x02 FRAME, 0x03 END, 0x04 ACK, 0x05 ERROR
//! ...     payload     fixed-order little-endian fields
//! ```
//!
//! Field encodings: integers are little-endian, `f64` is IEEE-754 binary64
//! little-endian, `str` is a `u32` byte count followed by UTF-8 bytes.
//!
//! ```text
//! HELLO  mode:u8 (0 pose, 1 raw hand)  joint_count:u32  frequency_hz:f64
//!        id:str  has_tag:u8 (0|1)  [task_tag:str]
//! FRAME  variant:u8 (0 pose, 1 raw hand), then
//!        pose: t:f64 px py pz:f64 qw qx qy qz:f64 n:u32 joints:f64×n gripper:u8 (0|1)
//!        raw:  t:f64 px py pz:f64 qw qx qy qz:f64 pinch:f64
//! END    count:u64
//! ACK    count:u64  file:str
//! ERROR  code:u16  message:str
//! ```

use nalgebra::Vector3;
use thiserror::Error;

use crate::model::{quat_from_wxyz, wxyz, Gripper, PoseFrame, RawHandFrame};

/// Default cap on the length prefix (1 MiB).
pub const DEFAULT_MAX_FRAME_LEN: usize = 1 << 20;

pub const KIND_HELLO: u8 = 0x01;
pub const KIND_FRAME: u8 = 0x02;
pub const KIND_END: u8 = 0x03;
pub const KIND_ACK: u8 = 0x04;
pub const KIND_ERROR: u8 = 0x05;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("framing error: {0}")]
    Framing(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamMode {
    Pose,
    RawHand,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hello {
    pub mode: StreamMode,
    pub joint_count: u32,
    pub frequency_hz: f64,
    pub id: String,
    pub task_tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WireFrame {
    Pose(PoseFrame),
    RawHand(RawHandFrame),
}

#[derive(Debug, Clone, PartialEq)]
pub enum WireMessage {
    Hello(Hello),
    Frame(WireFrame),
    End { count: u64 },
    Ack { count: u64, file: String },
    Error { code: u16, message: String },
}

/// Error codes carried by `ERROR` replies.
pub mod codes {
    pub const UNEXPECTED_MESSAGE: u16 = 1;
    pub const INVALID_FRAME: u16 = 2;
    pub const COUNT_MISMATCH: u16 = 3;
    pub const MALFORMED: u16 = 4;
    pub const STORAGE: u16 = 5;
    pub const TOO_FEW_FRAMES: u16 = 6;
}

impl WireMessage {
    pub fn kind(&self) -> u8 {
        match self {
            WireMessage::Hello(_) => KIND_HELLO,
            WireMessage::Frame(_) => KIND_FRAME,
            WireMessage::End { .. } => KIND_END,
            WireMessage::Ack { .. } => KIND_ACK,
            WireMessage::Error { .. } => KIND_ERROR,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            WireMessage::Hello(_) => "HELLO",
            WireMessage::Frame(_) => "FRAME",
            WireMessage::End { .. } => "END",
            WireMessage::Ack { .. } => "ACK",
            WireMessage::Error { .. } => "ERROR",
        }
    }
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_pose_common(out: &mut Vec<u8>, t: f64, p: &Vector3<f64>, q: [f64; 4]) {
    put_f64(out, t);
    for v in p.iter().chain(q.iter()) {
        put_f64(out, *v);
    }
}

/// Encodes one message including its length prefix.
pub fn encode_message(m: &WireMessage) -> Vec<u8> {
    let mut body = vec![m.kind()];
    match m {
        WireMessage::Hello(h) => {
            body.push(match h.mode {
                StreamMode::Pose => 0,
                StreamMode::RawHand => 1,
            });
            body.extend_from_slice(&h.joint_count.to_le_bytes());
            put_f64(&mut body, h.frequency_hz);
            put_str(&mut body, &h.id);
            match &h.task_tag {
                Some(tag) => {
                    body.push(1);
                    put_str(&mut body, tag);
                }
                None => body.push(0),
            }
        }
        WireMessage::Frame(WireFrame::Pose(f)) => {
            body.push(0);
            put_pose_common(&mut body, f.t, &f.position, f.orientation_wxyz());
            body.extend_from_slice(&(f.joints.len() as u32).to_le_bytes());
            for j in &f.joints {
                put_f64(&mut body, *j);
            }
            body.push(f.gripper.as_u8());
        }
        WireMessage::Frame(WireFrame::RawHand(f)) => {
            body.push(1);
            put_pose_common(&mut body, f.t, &f.hand_position, wxyz(&f.hand_orientation));
            put_f64(&mut body, f.pinch_distance);
        }
        WireMessage::End { count } => body.extend_from_slice(&count.to_le_bytes()),
        WireMessage::Ack { count, file } => {
            body.extend_from_slice(&count.to_le_bytes());
            put_str(&mut body, file);
        }
        WireMessage::Error { code, message } => {
            body.extend_from_slice(&code.to_le_bytes());
            put_str(&mut body, message);
        }
    }
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(&body);
    out
}

/// Result of trying to decode from the front of a buffer.
#[derive(Debug, Clone, PartialEq)]
pub enum Decoded {
    /// A full message and the number of bytes it occupied.
    Message(WireMessage, usize),
    /// The buffer does not yet hold a complete message.
    Incomplete,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() - self.pos < n {
            return Err(WireError::Protocol("payload shorter than its fields".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String, WireError> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| WireError::Protocol("string is not UTF-8".into()))
    }

    fn vec3(&mut self) -> Result<Vector3<f64>, WireError> {
        Ok(Vector3::new(self.f64()?, self.f64()?, self.f64()?))
    }

    fn quat(&mut self) -> Result<[f64; 4], WireError> {
        Ok([self.f64()?, self.f64()?, self.f64()?, self.f64()?])
    }

    fn finish(&self) -> Result<(), WireError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(WireError::Protocol(format!(
                "{} trailing byte(s) after payload",
                self.buf.len() - self.pos
            )))
        }
    }
}

fn decode_body(body: &[u8]) -> Result<WireMessage, WireError> {
    let mut c = Cursor { buf: body, pos: 1 };
    let msg = match body[0] {
        KIND_HELLO => {
            let mode = match c.u8()? {
                0 => StreamMode::Pose,
                1 => StreamMode::RawHand,
                other => return Err(WireError::Protocol(format!("unknown stream mode {other}"))),
            };
            let joint_count = c.u32()?;
            let frequency_hz = c.f64()?;
            let id = c.str()?;
            let task_tag = match c.u8()? {
                0 => None,
                1 => Some(c.str()?),
                other => return Err(WireError::Protocol(format!("bad task tag flag {other}"))),
            };
            WireMessage::Hello(Hello {
                mode,
                joint_count,
                frequency_hz,
                id,
                task_tag,
            })
        }
        KIND_FRAME => match c.u8()? {
            0 => {
                let t = c.f64()?;
                let position = c.vec3()?;
                let q = c.quat()?;
                let n = c.u32()? as usize;
                if n > (body.len() - c.pos) / 8 {
                    return Err(WireError::Protocol(format!("joint count {n} exceeds payload")));
                }
                let joints = (0..n).map(|_| c.f64()).collect::<Result<Vec<_>, _>>()?;
                let g = c.u8()?;
                let gripper = Gripper::from_u8(g)
                    .ok_or_else(|| WireError::Protocol(format!("gripper byte {g} is not 0 or 1")))?;
                WireMessage::Frame(WireFrame::Pose(PoseFrame {
                    t,
                    position,
                    orientation: quat_from_wxyz(q),
                    joints,
                    gripper,
                }))
            }
            1 => {
                let t = c.f64()?;
                let hand_position = c.vec3()?;
                let q = c.quat()?;
                let pinch_distance = c.f64()?;
                WireMessage::Frame(WireFrame::RawHand(RawHandFrame {
                    t,
                    hand_position,
                    hand_orientation: quat_from_wxyz(q),
                    pinch_distance,
                }))
            }
            other => return Err(WireError::Protocol(format!("unknown frame variant {other}"))),
        },
        KIND_END => WireMessage::End { count: c.u64()? },
        KIND_ACK => WireMessage::Ack {
            count: c.u64()?,
            file: c.str()?,
        },
        KIND_ERROR => WireMessage::Error {
            code: c.u16()?,
            message: c.str()?,
        },
        other => return Err(WireError::Protocol(format!("unknown message kind 0x{other:02X}"))),
    };
    c.finish()?;
    Ok(msg)
}

/// Decodes the first message in `buf`, if it is complete.
pub fn decode_message(buf: &[u8], max_frame_len: usize) -> Result<Decoded, WireError> {
    if buf.len() < 4 {
        return Ok(Decoded::Incomplete);
    }
    let len = u32::from_le_bytes(buf[..4].try_into().unwrap()) as usize;
    if len == 0 {
        return Err(WireError::Framing("zero-length message".into()));
    }
    if len > max_frame_len {
        return Err(WireError::Framing(format!(
            "length prefix {len} exceeds maximum {max_frame_len}"
        )));
    }
    if buf.len() < 4 + len {
        return Ok(Decoded::Incomplete);
    }
    let msg = decode_body(&buf[4..4 + len])?;
    Ok(Decoded::Message(msg, 4 + len))
}

/// Accumulates bytes from a stream and yields complete messages.
#[derive(Debug)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    max_frame_len: usize,
}

impl Default for FrameDecoder {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_FRAME_LEN)
    }
}

impl FrameDecoder {
    pub fn new(max_frame_len: usize) -> Self {
        Self {
            buf: Vec::new(),
            max_frame_len,
        }
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Bytes received but not yet consumed by a complete message.
    pub fn pending(&self) -> usize {
        self.buf.len()
    }

    pub fn next_message(&mut self) -> Result<Option<WireMessage>, WireError> {
        match decode_message(&self.buf, self.max_frame_len)? {
            Decoded::Message(m, used) => {
                self.buf.drain(..used);
                Ok(Some(m))
            }
            Decoded::Incomplete => Ok(None),
        }
    }
}
