//! Sparse detection propagation: move boxes along the motion vectors they enclose.

mod buffer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::motion::{MotionVector, MotionVectorField};

pub use buffer::{replay, FlowBuffer, DEFAULT_BUFFER_CAPACITY};

#[derive(Debug, Error, PartialEq)]
pub enum PropagationError {
    #[error("detection set is at frame {got} but the field starts at frame {expected}")]
    FrameMismatch { expected: usize, got: usize },
    #[error("field with src_index {got} is not consecutive to buffer tail (expected {expected})")]
    NonConsecutive { expected: usize, got: usize },
    #[error("flow buffer overflow: capacity {capacity} fields")]
    Overflow { capacity: usize },
    #[error("flow buffer has no field starting at frame {needed}")]
    MissingField { needed: usize },
    #[error("invalid detection: {0}")]
    InvalidDetection(String),
}

/// Axis-aligned scored box, top-left anchored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
    pub class_id: i64,
}

impl Detection {
    pub fn new(x: f64, y: f64, w: f64, h: f64, score: f64, class_id: i64) -> Result<Self, PropagationError> {
        let d = Self {
            x,
            y,
            w,
            h,
            score,
            class_id,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), PropagationError> {
        if !(self.x.is_finite() && self.y.is_finite()) {
            return Err(PropagationError::InvalidDetection(format!(
                "non-finite position ({}, {})",
                self.x, self.y
            )));
        }
        if !(self.w > 0.0 && self.h > 0.0 && self.w.is_finite() && self.h.is_finite()) {
            return Err(PropagationError::InvalidDetection(format!(
                "size must be positive, got {}x{}",
                self.w, self.h
            )));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(PropagationError::InvalidDetection(format!(
                "score {} outside [0, 1]",
                self.score
            )));
        }
        Ok(())
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionSet {
    pub frame_index: usize,
    pub detections: Vec<Detection>,
}

impl DetectionSet {
    pub fn new(frame_index: usize, detections: Vec<Detection>) -> Self {
        Self {
            frame_index,
            detections,
        }
    }

    pub fn empty(frame_index: usize) -> Self {
        Self::new(frame_index, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    /// Same boxes relabelled to another frame.
    pub fn at_frame(&self, frame_index: usize) -> Self {
        Self::new(frame_index, self.detections.clone())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum AggregationKind {
    #[default]
    MedianXY,
    MeanXY,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Displacement {
    pub dx: f64,
    pub dy: f64,
}

/// Vectors of blocks whose center lies in the box; falls back to blocks that
/// overlap the box, then to nothing.
pub fn enclosed_vectors(d: &Detection, f: &MotionVectorField) -> Vec<MotionVector> {
    let bs = f.block_size() as f64;
    let (x0, x1) = (d.x.max(0.0), d.right().min(f.frame_w() as f64));
    let (y0, y1) = (d.y.max(0.0), d.bottom().min(f.frame_h() as f64));
    if x1 <= x0 || y1 <= y0 {
        return Vec::new();
    }
    // Only blocks that intersect the box can qualify under either rule.
    let gx_range = (x0 / bs).floor() as usize..((x1 / bs).ceil() as usize).min(f.grid_w());
    let gy_range = (y0 / bs).floor() as usize..((y1 / bs).ceil() as usize).min(f.grid_h());

    let mut centered = Vec::new();
    let mut overlapping = Vec::new();
    for gy in gy_range {
        for gx in gx_range.clone() {
            let (bx, by, bw, bh) = f.block_rect(gx, gy);
            let (bx, by, bw, bh) = (bx as f64, by as f64, bw as f64, bh as f64);
            let (cx, cy) = (bx + bw / 2.0, by + bh / 2.0);
            let v = f.get(gx, gy);
            if d.x <= cx && cx < d.right() && d.y <= cy && cy < d.bottom() {
                centered.push(v);
            } else if bx < d.right() && d.x < bx + bw && by < d.bottom() && d.y < by + bh {
                overlapping.push(v);
            }
        }
    }
    if centered.is_empty() {
        overlapping
    } else {
        centered
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Reduces a set of vectors to one displacement; empty input gives zero.
pub fn aggregate_vectors(vectors: &[MotionVector], kind: AggregationKind) -> Displacement {
    if vectors.is_empty() {
        return Displacement::default();
    }
    let mut xs: Vec<f64> = vectors.iter().map(|v| v.dx as f64).collect();
    let mut ys: Vec<f64> = vectors.iter().map(|v| v.dy as f64).collect();
    match kind {
        AggregationKind::MedianXY => Displacement {
            dx: median(&mut xs),
            dy: median(&mut ys),
        },
        AggregationKind::MeanXY => Displacement {
            dx: mean(&xs),
            dy: mean(&ys),
        },
    }
}

pub fn aggregate(d: &Detection, f: &MotionVectorField, kind: AggregationKind) -> Displacement {
    aggregate_vectors(&enclosed_vectors(d, f), kind)
}

/// Clamps `[start, start+len)` to `[0, limit)`. Spans fully inside keep their
/// length bit-for-bit.
fn clamp_span(start: f64, len: f64, limit: f64) -> Option<(f64, f64)> {
    if start >= 0.0 && start + len <= limit {
        return Some((start, len));
    }
    let lo = start.max(0.0);
    let hi = (start + len).min(limit);
    (hi > lo).then_some((lo, hi - lo))
}

/// Moves every box one frame forward along `f`.
pub fn propagate(
    ds: &DetectionSet,
    f: &MotionVectorField,
    kind: AggregationKind,
) -> Result<DetectionSet, PropagationError> {
    if ds.frame_index != f.src_index() {
        return Err(PropagationError::FrameMismatch {
            expected: f.src_index(),
            got: ds.frame_index,
        });
    }
    let (fw, fh) = (f.frame_w() as f64, f.frame_h() as f64);
    let detections = ds
        .detections
        .iter()
        .filter_map(|d| {
            let shift = aggregate(d, f, kind);
            let (x, w) = clamp_span(d.x + shift.dx, d.w, fw)?;
            let (y, h) = clamp_span(d.y + shift.dy, d.h, fh)?;
            Some(Detection { x, y, w, h, ..*d })
        })
        .collect();
    Ok(DetectionSet::new(f.dst_index(), detections))
}
