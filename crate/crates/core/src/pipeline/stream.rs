//! Line-delimited JSON motion streams.
//!
//! Each line is one frame:
//!
//! ```json
//! {"t":0.005,"links":{"l_hand":{"quat":[1.0,0.0,0.0,0.0],"omega":[0.0,0.0,0.0]}}}
//! ```
//!
//! Quaternions are `[w, x, y, z]` and must be unit to within 1e-6; angular
//! velocities are world-frame rad/s. Blank lines are ignored so streams can
//! be concatenated or hand-edited.

use std::collections::BTreeMap;
use std::error::Error;
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::retarget::{LinkMotion, MotionFrame};
use crate::so3::{Rotation, So3Error};

#[derive(Debug)]
pub enum StreamError {
    /// A line failed to parse as a frame; `line` counts from 1.
    BadLine { line: usize, detail: String },
    /// A link carried a quaternion too far from unit norm.
    BadQuaternion { line: usize, link: String, norm: f64 },
    Io(std::io::Error),
}

impl fmt::Display for StreamError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StreamError::BadLine { line, detail } => {
                write!(f, "stream line {line}: {detail}")
            }
            StreamError::BadQuaternion { line, link, norm } => write!(
                f,
                "stream line {line}: link '{link}' quaternion norm {norm:.3e} is not unit"
            ),
            StreamError::Io(e) => write!(f, "stream i/o error: {e}"),
        }
    }
}

impl Error for StreamError {
    fn source(&self) -> Option<&(dyn Error + 'static)> {
        match self {
            StreamError::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for StreamError {
    fn from(e: std::io::Error) -> Self {
        StreamError::Io(e)
    }
}

#[derive(Serialize, Deserialize)]
struct FrameLine {
    t: f64,
    links: BTreeMap<String, LinkLine>,
}

#[derive(Serialize, Deserialize)]
struct LinkLine {
    quat: [f64; 4],
    omega: [f64; 3],
}

/// Parses one stream line. `line_no` is only used for error reporting.
pub fn parse_frame(text: &str, line_no: usize) -> Result<MotionFrame, StreamError> {
    let raw: FrameLine = serde_json::from_str(text).map_err(|e| StreamError::BadLine {
        line: line_no,
        detail: e.to_string(),
    })?;
    let mut links = BTreeMap::new();
    for (name, link) in raw.links {
        let [w, x, y, z] = link.quat;
        let orientation = Rotation::from_quaternion(w, x, y, z).map_err(|e| match e {
            So3Error::BadQuaternionNorm { norm } => StreamError::BadQuaternion {
                line: line_no,
                link: name.clone(),
                norm,
            },
            other => StreamError::BadLine {
                line: line_no,
                detail: other.to_string(),
            },
        })?;
        let [ox, oy, oz] = link.omega;
        links.insert(
            name,
            LinkMotion {
                orientation,
                angular_velocity: nalgebra::Vector3::new(ox, oy, oz),
            },
        );
    }
    Ok(MotionFrame { t: raw.t, links })
}

/// Serializes one frame as a single JSON line (no trailing newline).
pub fn format_frame(frame: &MotionFrame) -> String {
    let links = frame
        .links
        .iter()
        .map(|(name, motion)| {
            let [w, x, y, z] = motion.orientation.to_quaternion();
            let o = motion.angular_velocity;
            (
                name.clone(),
                LinkLine {
                    quat: [w, x, y, z],
                    omega: [o.x, o.y, o.z],
                },
            )
        })
        .collect();
    let line = FrameLine { t: frame.t, links };
    serde_json::to_string(&line).expect("frame serialization cannot fail")
}

/// Reads a whole stream, skipping blank lines.
pub fn read_stream(reader: impl BufRead) -> Result<Vec<MotionFrame>, StreamError> {
    FrameReader::new(reader).collect()
}

/// Writes `frames` as one JSON line each.
pub fn write_stream(
    frames: &[MotionFrame],
    mut out: impl std::io::Write,
) -> Result<(), StreamError> {
    for frame in frames {
        writeln!(out, "{}", format_frame(frame))?;
    }
    Ok(())
}

/// Incremental frame reader for live input.
pub struct FrameReader<R> {
    reader: R,
    line_no: usize,
    buf: String,
}

impl<R: BufRead> FrameReader<R> {
    pub fn new(reader: R) -> Self {
        FrameReader {
            reader,
            line_no: 0,
            buf: String::new(),
        }
    }
}

impl<R: BufRead> Iterator for FrameReader<R> {
    type Item = Result<MotionFrame, StreamError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {
                    self.line_no += 1;
                    let text = self.buf.trim();
                    if text.is_empty() {
                        continue;
                    }
                    return Some(parse_frame(text, self.line_no));
                }
                Err(e) => return Some(Err(e.into())),
            }
        }
    }
}
