//! Object detector endpoints.
//!
//! No model ships here: detectors are either an oracle replaying a MOT
//! detection file or a scripted mock. Both sit behind the same
//! request/response contract a model server would implement, and latency is
//! simulated at delivery time.

mod worker;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::motion::Frame;
use crate::mot::{read_detections, DetectionTable};
use crate::propagation::{Detection, DetectionSet};

pub use worker::DetectorWorker;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("detector configuration: {0}")]
    Config(String),
    #[error("detector worker disconnected")]
    Disconnected,
    #[error("response for frame {got} does not match in-flight request for frame {expected}")]
    Mismatch { expected: usize, got: usize },
}

/// How long a request takes before its response becomes visible.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LatencyModel {
    /// Response visible at `request_frame + n`.
    FixedFrames(usize),
    FixedWallClock { ms: u64 },
    /// Per-request delays in ms, cycled when exhausted.
    PerRequestSchedule(Vec<u64>),
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel::FixedFrames(0)
    }
}

impl LatencyModel {
    /// Reads one non-negative integer millisecond value per line.
    pub fn load_schedule(path: &Path) -> Result<Self, DetectorError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DetectorError::Config(format!("{}: {e}", path.display())))?;
        let mut delays = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            delays.push(line.parse::<u64>().map_err(|_| {
                DetectorError::Config(format!("{}: line {}: invalid delay '{line}'", path.display(), i + 1))
            })?);
        }
        if delays.is_empty() {
            return Err(DetectorError::Config(format!("{}: empty latency schedule", path.display())));
        }
        Ok(LatencyModel::PerRequestSchedule(delays))
    }

    pub fn frames(&self) -> Option<usize> {
        match self {
            LatencyModel::FixedFrames(n) => Some(*n),
            _ => None,
        }
    }

    /// Wall-clock delay for the `n`-th request (0-based).
    pub fn wall_delay(&self, n: usize) -> Duration {
        match self {
            LatencyModel::FixedFrames(_) => Duration::ZERO,
            LatencyModel::FixedWallClock { ms } => Duration::from_millis(*ms),
            LatencyModel::PerRequestSchedule(d) => Duration::from_millis(d[n % d.len()]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DetectorKind {
    FileOracle { path: PathBuf, score_threshold: f64 },
    ScriptedMock { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSpec {
    pub kind: DetectorKind,
    pub latency: LatencyModel,
}

impl DetectorSpec {
    /// Loads whatever backs the detector. All file problems surface here.
    pub fn build(&self) -> Result<Box<dyn Detector>, DetectorError> {
        match &self.kind {
            DetectorKind::FileOracle { path, score_threshold } => {
                let file = File::open(path).map_err(|e| DetectorError::Config(format!("{}: {e}", path.display())))?;
                let table = read_detections(BufReader::new(file))
                    .map_err(|e| DetectorError::Config(format!("{}: {e}", path.display())))?;
                Ok(Box::new(OracleDetector::new(table, *score_threshold)))
            }
            DetectorKind::ScriptedMock { path } => Ok(Box::new(ScriptedMock::load(path)?)),
        }
    }
}

/// Something that turns an image into detections. Runs on one worker at a time.
pub trait Detector: Send {
    fn detect(&mut self, img: &Frame) -> DetectionSet;
}

/// Replays pre-computed detections, filtered by score.
#[derive(Debug, Clone)]
pub struct OracleDetector {
    table: DetectionTable,
    score_threshold: f64,
}

impl OracleDetector {
    pub fn new(table: DetectionTable, score_threshold: f64) -> Self {
        Self { table, score_threshold }
    }
}

impl Detector for OracleDetector {
    fn detect(&mut self, img: &Frame) -> DetectionSet {
        let mut set = self.table.get(img.index());
        set.detections.retain(|d| d.score >= self.score_threshold);
        set
    }
}

/// Returns a fixed detection set per frame; unlisted frames give nothing.
#[derive(Debug, Clone, Default)]
pub struct ScriptedMock {
    script: BTreeMap<usize, Vec<Detection>>,
}

impl ScriptedMock {
    pub fn new(sets: impl IntoIterator<Item = DetectionSet>) -> Self {
        let mut script: BTreeMap<usize, Vec<Detection>> = BTreeMap::new();
        for s in sets {
            script.entry(s.frame_index).or_default().extend(s.detections);
        }
        Self { script }
    }

    /// Script files are a JSON array of `{"frame_index": n, "detections": [...]}`.
    pub fn load(path: &Path) -> Result<Self, DetectorError> {
        let cfg = |e: &dyn std::fmt::Display| DetectorError::Config(format!("{}: {e}", path.display()));
        let file = File::open(path).map_err(|e| cfg(&e))?;
        let sets: Vec<DetectionSet> = serde_json::from_reader(BufReader::new(file)).map_err(|e| cfg(&e))?;
        for s in &sets {
            for d in &s.detections {
                d.validate()
                    .map_err(|e| cfg(&format!("frame {}: {e}", s.frame_index)))?;
            }
        }
        Ok(Self::new(sets))
    }
}

impl Detector for ScriptedMock {
    fn detect(&mut self, img: &Frame) -> DetectionSet {
        DetectionSet::new(img.index(), self.script.get(&img.index()).cloned().unwrap_or_default())
    }
}

#[derive(Debug, Clone)]
pub struct DetectorRequest {
    pub frame: Frame,
}

impl DetectorRequest {
    pub fn frame_index(&self) -> usize {
        self.frame.index()
    }
}

#[derive(Debug, Clone)]
pub struct DetectorResponse {
    pub detections: DetectionSet,
    /// Detector-side time including any simulated delay.
    pub latency: Duration,
}

impl DetectorResponse {
    pub fn frame_index(&self) -> usize {
        self.detections.frame_index
    }
}

/// Hook for model-specific input preparation; oracle and mock detectors need none.
pub fn preprocess_image(img: Frame) -> Frame {
    img
}

/// Serves one request without any simulated delay.
pub fn detect(detector: &mut dyn Detector, req: DetectorRequest) -> DetectorResponse {
    let start = std::time::Instant::now();
    let index = req.frame_index();
    let img = preprocess_image(req.frame);
    let mut detections = detector.detect(&img);
    detections.frame_index = index;
    DetectorResponse {
        detections,
        latency: start.elapsed(),
    }
}

/// For each frame, the request frame whose response becomes the prior at that
/// frame under a frame-count latency, if any.
///
/// Frame 0 waits for its own request. Afterwards the worker polls once per
/// frame and submits the current frame whenever nothing is in flight, so a
/// request made at frame `s` lands at `s + latency`; with zero latency the
/// response lands at the frame that made it.
pub fn delivery_schedule(num_frames: usize, latency: usize) -> Vec<Option<usize>> {
    let mut out = vec![None; num_frames];
    if num_frames == 0 {
        return out;
    }
    out[0] = Some(0);
    let mut inflight: Option<usize> = None;
    for (i, slot) in out.iter_mut().enumerate().skip(1) {
        if let Some(s) = inflight {
            if s + latency <= i {
                *slot = Some(s);
                inflight = None;
            }
        }
        if inflight.is_none() {
            if latency == 0 {
                *slot = Some(i);
            } else {
                inflight = Some(i);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> DetectionTable {
        read_detections("2,-1,1,2,3,4,0.9,-1,-1,-1\n2,-1,5,5,5,5,0.3,-1,-1,-1\n".as_bytes()).unwrap()
    }

    #[test]
    fn oracle_echoes_file() {
        let mut d = OracleDetector::new(table(), 0.0);
        let img = Frame::filled(1, 8, 8, 0).unwrap();
        let resp = detect(&mut d, DetectorRequest { frame: img });
        assert_eq!(resp.frame_index(), 1);
        assert_eq!(resp.detections, table().get(1));
        assert!(d.detect(&Frame::filled(0, 8, 8, 0).unwrap()).is_empty());
    }

    #[test]
    fn oracle_threshold() {
        let img = Frame::filled(1, 8, 8, 0).unwrap();
        assert_eq!(OracleDetector::new(table(), 0.5).detect(&img).len(), 1);
        assert!(OracleDetector::new(table(), 1.1).detect(&img).is_empty());
    }

    #[test]
    fn preprocess_is_identity() {
        let f = Frame::new(3, 2, 2, vec![1, 2, 3, 4]).unwrap();
        let once = preprocess_image(f.clone());
        assert_eq!(once, f);
        assert_eq!((once.width(), once.height()), (2, 2));
        assert_eq!(preprocess_image(once.clone()), once);
    }

    #[test]
    fn schedule_fixed_frames() {
        let s = delivery_schedule(20, 5);
        assert_eq!(s[0], Some(0));
        // Submitted at 1 -> lands at 6 -> resubmitted at 6 -> lands at 11 ...
        assert_eq!(s[6], Some(1));
        assert_eq!(s[11], Some(6));
        assert_eq!(s[16], Some(11));
        assert_eq!(s.iter().filter(|x| x.is_some()).count(), 4);
    }

    #[test]
    fn schedule_zero_latency_delivers_every_frame() {
        let s = delivery_schedule(6, 0);
        assert_eq!(s, (0..6).map(Some).collect::<Vec<_>>());
    }

    #[test]
    fn latency_models() {
        let m = LatencyModel::PerRequestSchedule(vec![5, 1]);
        assert_eq!(m.wall_delay(2), Duration::from_millis(5));
        assert_eq!(m.wall_delay(3), Duration::from_millis(1));
        assert_eq!(LatencyModel::FixedFrames(4).frames(), Some(4));
        assert_eq!(LatencyModel::FixedWallClock { ms: 3 }.frames(), None);
    }

    #[test]
    fn config_errors_at_build() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("det.txt");
        std::fs::write(&bad, "1,-1,a,b\n").unwrap();
        let spec = DetectorSpec {
            kind: DetectorKind::FileOracle {
                path: bad,
                score_threshold: 0.0,
            },
            latency: LatencyModel::FixedFrames(0),
        };
        assert!(matches!(spec.build(), Err(DetectorError::Config(_))));
        let missing = DetectorSpec {
            kind: DetectorKind::ScriptedMock {
                path: dir.path().join("nope.json"),
            },
            latency: LatencyModel::FixedFrames(0),
        };
        assert!(matches!(missing.build(), Err(DetectorError::Config(_))));
        let sched = dir.path().join("sched.txt");
        std::fs::write(&sched, "3\n\n7\n").unwrap();
        assert_eq!(LatencyModel::load_schedule(&sched).unwrap(), LatencyModel::PerRequestSchedule(vec![3, 7]));
        std::fs::write(&sched, "3\n-1\n").unwrap();
        assert!(LatencyModel::load_schedule(&sched).is_err());
    }

    #[test]
    fn scripted_mock_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mock.json");
        std::fs::write(
            &path,
            r#"[{"frame_index": 2, "detections": [{"x": 1, "y": 2, "w": 3, "h": 4, "score": 0.5, "class_id": 7}]}]"#,
        )
        .unwrap();
        let mut m = ScriptedMock::load(&path).unwrap();
        let out = m.detect(&Frame::filled(2, 4, 4, 0).unwrap());
        assert_eq!(out.detections, vec![Detection::new(1.0, 2.0, 3.0, 4.0, 0.5, 7).unwrap()]);
        assert!(m.detect(&Frame::filled(3, 4, 4, 0).unwrap()).is_empty());
        std::fs::write(&path, r#"[{"frame_index": 0, "detections": [{"x": 1, "y": 2, "w": -3, "h": 4, "score": 0.5, "class_id": 7}]}]"#).unwrap();
        assert!(ScriptedMock::load(&path).is_err());
    }
}
