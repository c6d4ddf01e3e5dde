//! MOT challenge text files.
//!
//! Detections: `frame,id,bb_left,bb_top,bb_width,bb_height,conf,x,y,z`.
//! Ground truth: `frame,id,bb_left,bb_top,bb_width,bb_height,flag,class,visibility`.
//! Frames are 1-based on disk and 0-based in memory.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::eval::{GroundTruth, GtBox};
use crate::propagation::{Detection, DetectionSet};

#[derive(Debug, Error)]
pub enum MotError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn parse_err(line: usize, msg: impl Into<String>) -> MotError {
    MotError::Parse {
        line,
        msg: msg.into(),
    }
}

/// Splits a data line into trimmed comma-separated fields. Blank lines yield `None`.
fn fields(line: &str) -> Option<Vec<&str>> {
    let line = line.trim();
    (!line.is_empty()).then(|| line.split(',').map(str::trim).collect())
}

fn num<T: std::str::FromStr>(cols: &[&str], i: usize, line: usize, name: &str) -> Result<T, MotError> {
    let tok = cols
        .get(i)
        .ok_or_else(|| parse_err(line, format!("missing column '{name}'")))?;
    tok.parse()
        .map_err(|_| parse_err(line, format!("invalid {name} '{tok}'")))
}

fn frame_of(cols: &[&str], line: usize) -> Result<usize, MotError> {
    let frame: i64 = num(cols, 0, line, "frame")?;
    if frame < 1 {
        return Err(parse_err(line, format!("frame numbers start at 1, got {frame}")));
    }
    Ok(frame as usize - 1)
}

/// Per-frame detections in file order. Frames without rows are absent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionTable {
    frames: BTreeMap<usize, Vec<Detection>>,
}

impl DetectionTable {
    pub fn from_sets<'a>(sets: impl IntoIterator<Item = &'a DetectionSet>) -> Self {
        let mut frames: BTreeMap<usize, Vec<Detection>> = BTreeMap::new();
        for s in sets {
            frames.entry(s.frame_index).or_default().extend_from_slice(&s.detections);
        }
        Self { frames }
    }

    /// The frame's detections; an absent frame gives an empty set.
    pub fn get(&self, frame_index: usize) -> DetectionSet {
        DetectionSet::new(
            frame_index,
            self.frames.get(&frame_index).cloned().unwrap_or_default(),
        )
    }

    pub fn last_frame(&self) -> Option<usize> {
        self.frames.keys().next_back().copied()
    }

    pub fn frames(&self) -> impl Iterator<Item = (usize, &[Detection])> {
        self.frames.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    /// Total number of boxes.
    pub fn len(&self) -> usize {
        self.frames.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn read_detections<R: BufRead>(reader: R) -> Result<DetectionTable, MotError> {
    let mut frames: BTreeMap<usize, Vec<Detection>> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let ln = i + 1;
        let line = line?;
        let Some(cols) = fields(&line) else { continue };
        if cols.len() < 7 {
            return Err(parse_err(ln, format!("expected at least 7 columns, got {}", cols.len())));
        }
        let frame = frame_of(&cols, ln)?;
        let d = Detection::new(
            num(&cols, 2, ln, "bb_left")?,
            num(&cols, 3, ln, "bb_top")?,
            num(&cols, 4, ln, "bb_width")?,
            num(&cols, 5, ln, "bb_height")?,
            num(&cols, 6, ln, "conf")?,
            0,
        )
        .map_err(|e| parse_err(ln, e.to_string()))?;
        frames.entry(frame).or_default().push(d);
    }
    Ok(DetectionTable { frames })
}

pub fn write_detections<'a, W: Write>(
    sets: impl IntoIterator<Item = &'a DetectionSet>,
    mut sink: W,
) -> Result<(), MotError> {
    for s in sets {
        for d in &s.detections {
            writeln!(
                sink,
                "{},-1,{},{},{},{},{},-1,-1,-1",
                s.frame_index + 1,
                d.x,
                d.y,
                d.w,
                d.h,
                d.score
            )?;
        }
    }
    sink.flush()?;
    Ok(())
}

/// Rows with `flag == 0` become ignore regions.
pub fn read_ground_truth<R: BufRead>(reader: R) -> Result<GroundTruth, MotError> {
    let mut rows: Vec<(usize, GtBox)> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let ln = i + 1;
        let line = line?;
        let Some(cols) = fields(&line) else { continue };
        if cols.len() < 7 {
            return Err(parse_err(ln, format!("expected at least 7 columns, got {}", cols.len())));
        }
        let frame = frame_of(&cols, ln)?;
        let flag: f64 = num(&cols, 6, ln, "flag")?;
        let b = GtBox {
            id: num(&cols, 1, ln, "id")?,
            x: num(&cols, 2, ln, "bb_left")?,
            y: num(&cols, 3, ln, "bb_top")?,
            w: num(&cols, 4, ln, "bb_width")?,
            h: num(&cols, 5, ln, "bb_height")?,
            ignore: flag == 0.0,
        };
        if !(b.w > 0.0 && b.h > 0.0) {
            return Err(parse_err(ln, format!("box size must be positive, got {}x{}", b.w, b.h)));
        }
        rows.push((frame, b));
    }
    let num_frames = rows.iter().map(|(f, _)| f + 1).max().unwrap_or(0);
    let mut frames = vec![Vec::new(); num_frames];
    for (f, b) in rows {
        frames[f].push(b);
    }
    Ok(GroundTruth::new(frames))
}

pub fn write_ground_truth<W: Write>(gt: &GroundTruth, mut sink: W) -> Result<(), MotError> {
    for (frame, boxes) in gt.frames().iter().enumerate() {
        for b in boxes {
            writeln!(
                sink,
                "{},{},{},{},{},{},{},1,1",
                frame + 1,
                b.id,
                b.x,
                b.y,
                b.w,
                b.h,
                if b.ignore { 0 } else { 1 }
            )?;
        }
    }
    sink.flush()?;
    Ok(())
}
