//! Detection scoring: IoU, greedy matching and all-point average precision.

mod baseline;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::propagation::{Detection, DetectionSet};

pub use baseline::hold_last_baseline;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("predictions reference frame {frame} but ground truth covers {num_frames} frames")]
    Misaligned { frame: usize, num_frames: usize },
    #[error("predictions contain frame {0} more than once")]
    DuplicateFrame(usize),
    #[error("iou threshold must be in (0, 1], got {0}")]
    InvalidThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<&Detection> for Rect {
    fn from(d: &Detection) -> Self {
        Rect {
            x: d.x,
            y: d.y,
            w: d.w,
            h: d.h,
        }
    }
}

impl From<&GtBox> for Rect {
    fn from(b: &GtBox) -> Self {
        Rect {
            x: b.x,
            y: b.y,
            w: b.w,
            h: b.h,
        }
    }
}

pub fn iou(a: Rect, b: Rect) -> Result<f64, EvalError> {
    for r in [a, b] {
        if !(r.w > 0.0 && r.h > 0.0) {
            return Err(EvalError::InvalidBox(format!("non-positive size {}x{}", r.w, r.h)));
        }
    }
    Ok(iou_unchecked(a, b))
}

fn iou_unchecked(a: Rect, b: Rect) -> f64 {
    let iw = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let ih = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    inter / (a.w * a.h + b.w * b.h - inter)
}

/// One annotated box. `ignore` marks regions that absorb matches without scoring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtBox {
    pub id: i64,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub ignore: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    frames: Vec<Vec<GtBox>>,
}

impl GroundTruth {
    pub fn new(frames: Vec<Vec<GtBox>>) -> Self {
        Self { frames }
    }

    /// Treats every detection as a scored ground-truth box.
    pub fn from_detection_sets(sets: &[DetectionSet], num_frames: usize) -> Self {
        let mut frames = vec![Vec::new(); num_frames];
        for s in sets {
            for (k, d) in s.detections.iter().enumerate() {
                frames[s.frame_index].push(GtBox {
                    id: k as i64 + 1,
                    x: d.x,
                    y: d.y,
                    w: d.w,
                    h: d.h,
                    ignore: false,
                });
            }
        }
        Self { frames }
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn frames(&self) -> &[Vec<GtBox>] {
        &self.frames
    }

    pub fn num_scored(&self) -> usize {
        self.frames.iter().flatten().filter(|b| !b.ignore).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

impl From<[f64; 2]> for PrPoint {
    fn from([recall, precision]: [f64; 2]) -> Self {
        Self { recall, precision }
    }
}

impl From<PrPoint> for [f64; 2] {
    fn from(p: PrPoint) -> Self {
        [p.recall, p.precision]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub ap: f64,
    pub iou_threshold: f64,
    pub curve: Vec<PrPoint>,
    pub tp: usize,
    pub fp: usize,
    pub num_gt: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    TruePositive,
    FalsePositive,
    Ignored,
}

/// Greedy match of one prediction: best IoU among unmatched scored boxes,
/// ties to the lower index; otherwise an ignore region may absorb it.
fn match_one(pred: Rect, gts: &[GtBox], taken: &mut [bool], thr: f64) -> Outcome {
    let mut best: Option<(usize, f64)> = None;
    for (k, g) in gts.iter().enumerate() {
        if g.ignore || taken[k] {
            continue;
        }
        let v = iou_unchecked(pred, g.into());
        if v >= thr && best.is_none_or(|(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    if let Some((k, _)) = best {
        taken[k] = true;
        return Outcome::TruePositive;
    }
    if gts.iter().any(|g| g.ignore && iou_unchecked(pred, g.into()) >= thr) {
        Outcome::Ignored
    } else {
        Outcome::FalsePositive
    }
}

/// Class-agnostic AP over all frames with all-point interpolation.
pub fn average_precision(
    preds: &[DetectionSet],
    gt: &GroundTruth,
    iou_threshold: f64,
) -> Result<ApReport, EvalError> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(EvalError::InvalidThreshold(iou_threshold));
    }
    let mut seen = vec![false; gt.num_frames()];
    for s in preds {
        if s.frame_index >= gt.num_frames() {
            return Err(EvalError::Misaligned {
                frame: s.frame_index,
                num_frames: gt.num_frames(),
            });
        }
        if std::mem::replace(&mut seen[s.frame_index], true) {
            return Err(EvalError::DuplicateFrame(s.frame_index));
        }
        for d in &s.detections {
            if !(d.w > 0.0 && d.h > 0.0) {
                return Err(EvalError::InvalidBox(format!(
                    "frame {}: non-positive size {}x{}",
                    s.frame_index, d.w, d.h
                )));
            }
        }
    }

    let mut order: Vec<&DetectionSet> = preds.iter().collect();
    order.sort_by_key(|s| s.frame_index);
    let mut ranked: Vec<(usize, &Detection)> = order
        .iter()
        .flat_map(|s| s.detections.iter().map(move |d| (s.frame_index, d)))
        .collect();
    // Stable: equal scores keep frame order, then in-frame order.
    ranked.sort_by(|a, b| b.1.score.total_cmp(&a.1.score));

    let mut taken: Vec<Vec<bool>> = gt.frames().iter().map(|f| vec![false; f.len()]).collect();
    let num_gt = gt.num_scored();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = Vec::with_capacity(ranked.len());
    let mut is_tp = Vec::with_capacity(ranked.len());
    for (frame, d) in ranked {
        let outcome = match_one(d.into(), &gt.frames()[frame], &mut taken[frame], iou_threshold);
        match outcome {
            Outcome::Ignored => continue,
            Outcome::TruePositive => tp += 1,
            Outcome::FalsePositive => fp += 1,
        }
        is_tp.push(outcome == Outcome::TruePositive);
        curve.push(PrPoint {
            recall: if num_gt == 0 { 0.0 } else { tp as f64 / num_gt as f64 },
            precision: tp as f64 / (tp + fp) as f64,
        });
    }

    // Recall rises by exactly 1/num_gt at each true positive, so the area
    // under the precision envelope is the envelope summed at those points.
    let mut envelope = 0.0f64;
    let mut area = 0.0f64;
    for (p, hit) in curve.iter().zip(&is_tp).rev() {
        envelope = envelope.max(p.precision);
        if *hit {
            area += envelope;
        }
    }
    let ap = if num_gt == 0 { 0.0 } else { area / num_gt as f64 };
    Ok(ApReport {
        ap,
        iou_threshold,
        curve,
        tp,
        fp,
        num_gt,
    })
}
