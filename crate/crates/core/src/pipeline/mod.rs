//! Optimistic propagation loop.
//!
//! The propagation worker owns the frame loop and emits detections for every
//! frame without waiting on the detector. The detector answers one request at
//! a time; when an answer lands, the flow fields buffered since that request
//! are replayed onto it to bring it up to the current frame.

mod latency;
mod state;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::detectors::{
    detect, Detector, DetectorError, DetectorRequest, DetectorResponse, DetectorSpec, DetectorWorker, LatencyModel,
};
use crate::motion::{estimate_motion, read_mvf, Frame, MotionError, MotionEstimatorParams, MotionVectorField};
use crate::propagation::{AggregationKind, DetectionSet, PropagationError, DEFAULT_BUFFER_CAPACITY};

pub use latency::{measure_latency, Distribution, EmptyResults, LatencySummary, PriorAgeStats};
pub use state::{PipelineState, Transition};

#[derive(Debug, Error)]
pub enum PipelineErrorKind {
    #[error("motion: {0}")]
    Motion(#[from] MotionError),
    #[error("detector: {0}")]
    Detector(#[from] DetectorError),
    #[error("propagation: {0}")]
    Propagation(#[from] PropagationError),
    #[error("pipeline state: {0}")]
    State(String),
    #[error("config: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
#[error("frame {frame}: {kind}")]
pub struct PipelineError {
    pub frame: usize,
    pub kind: PipelineErrorKind,
}

trait AtFrame<T> {
    fn at(self, frame: usize) -> Result<T, PipelineError>;
}

impl<T, E: Into<PipelineErrorKind>> AtFrame<T> for Result<T, E> {
    fn at(self, frame: usize) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError {
            frame,
            kind: e.into(),
        })
    }
}

#[derive(Debug, Clone)]
pub enum FlowSource {
    Estimator(MotionEstimatorParams),
    Sidecar(PathBuf),
    /// Fields already in memory, e.g. estimated once and reused across runs.
    Precomputed(Arc<Vec<MotionVectorField>>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ExecutionMode {
    /// Detector on its own thread; wall-clock latencies.
    RealTime,
    /// One thread; latency counted in frames, output fully reproducible.
    #[default]
    Deterministic,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub aggregation: AggregationKind,
    pub flow_source: FlowSource,
    pub detector: DetectorSpec,
    pub buffer_capacity: usize,
    pub mode: ExecutionMode,
}

impl PipelineConfig {
    pub fn new(flow_source: FlowSource, detector: DetectorSpec) -> Self {
        Self {
            aggregation: AggregationKind::default(),
            flow_source,
            detector,
            buffer_capacity: DEFAULT_BUFFER_CAPACITY,
            mode: ExecutionMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub frame_index: usize,
    pub detections: DetectionSet,
    /// Propagation-worker time for this frame, excluding detector waits.
    pub step_latency: Duration,
    pub prior_age: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub frames: Vec<FrameResult>,
    /// Detector-side time per request, including simulated delay.
    pub detector_latencies: Vec<Duration>,
}

enum Flow {
    Estimator(MotionEstimatorParams),
    Lookup(HashMap<usize, MotionVectorField>),
}

impl Flow {
    fn open(source: &FlowSource) -> Result<Self, PipelineErrorKind> {
        let index = |fields: &[MotionVectorField]| {
            Flow::Lookup(fields.iter().map(|f| (f.src_index(), f.clone())).collect())
        };
        Ok(match source {
            FlowSource::Estimator(p) => {
                p.validate()?;
                Flow::Estimator(*p)
            }
            FlowSource::Sidecar(path) => {
                let file = std::fs::File::open(path)
                    .map_err(|e| PipelineErrorKind::Config(format!("{}: {e}", path.display())))?;
                let fields = read_mvf(std::io::BufReader::new(file))
                    .map_err(|e| PipelineErrorKind::Config(format!("{}: {e}", path.display())))?;
                index(&fields)
            }
            FlowSource::Precomputed(fields) => index(fields),
        })
    }

    fn field(&self, prev: &Frame, cur: &Frame) -> Result<MotionVectorField, MotionError> {
        match self {
            Flow::Estimator(p) => estimate_motion(prev, cur, p),
            Flow::Lookup(map) => {
                let f = map.get(&prev.index()).ok_or_else(|| {
                    MotionError::InvalidField(format!("no flow field for frame {} -> {}", prev.index(), cur.index()))
                })?;
                if (f.frame_w(), f.frame_h()) != (cur.width(), cur.height()) {
                    return Err(MotionError::InvalidField(format!(
                        "field is {}x{} but frames are {}x{}",
                        f.frame_w(),
                        f.frame_h(),
                        cur.width(),
                        cur.height()
                    )));
                }
                Ok(f.clone())
            }
        }
    }
}

fn check_sequence(frames: &[Frame]) -> Result<(), PipelineError> {
    let first = frames.first().ok_or(PipelineError {
        frame: 0,
        kind: PipelineErrorKind::Config("empty frame sequence".into()),
    })?;
    for (k, f) in frames.iter().enumerate() {
        if f.index() != first.index() + k {
            return Err(PipelineError {
                frame: f.index(),
                kind: PipelineErrorKind::Config(format!(
                    "frame indices must increase by one, found {} after {}",
                    f.index(),
                    frames[k - 1].index()
                )),
            });
        }
        if (f.width(), f.height()) != (first.width(), first.height()) {
            return Err(MotionError::DimensionMismatch(first.width(), first.height(), f.width(), f.height()))
                .at(f.index());
        }
    }
    Ok(())
}

/// Runs the loop over `frames` with the detector described by `cfg`.
pub fn run_pipeline(frames: &[Frame], cfg: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    let first = frames.first().map_or(0, Frame::index);
    let detector = cfg.detector.build().at(first)?;
    run_pipeline_with(frames, cfg, detector)
}

/// Same as [`run_pipeline`] with an already constructed detector.
pub fn run_pipeline_with(
    frames: &[Frame],
    cfg: &PipelineConfig,
    detector: Box<dyn Detector>,
) -> Result<PipelineOutput, PipelineError> {
    check_sequence(frames)?;
    if cfg.buffer_capacity == 0 {
        return Err(PipelineErrorKind::Config("buffer capacity must be at least 1".into())).at(frames[0].index());
    }
    let flow = Flow::open(&cfg.flow_source).at(frames[0].index())?;
    match cfg.mode {
        ExecutionMode::Deterministic => {
            let Some(latency) = cfg.detector.latency.frames() else {
                return Err(PipelineErrorKind::Config(
                    "deterministic mode needs a frame-count detector latency".into(),
                ))
                .at(frames[0].index());
            };
            run_deterministic(frames, cfg, &flow, detector, latency)
        }
        ExecutionMode::RealTime => run_realtime(frames, cfg, &flow, detector),
    }
}

fn request(frame: &Frame) -> DetectorRequest {
    DetectorRequest { frame: frame.clone() }
}

fn run_deterministic(
    frames: &[Frame],
    cfg: &PipelineConfig,
    flow: &Flow,
    mut detector: Box<dyn Detector>,
    latency: usize,
) -> Result<PipelineOutput, PipelineError> {
    let mut detector_latencies = Vec::new();
    let mut serve = |frame: &Frame| {
        let resp = detect(detector.as_mut(), request(frame));
        detector_latencies.push(resp.latency);
        resp
    };

    let first = serve(&frames[0]);
    let start = Instant::now();
    let mut state = PipelineState::new(first.detections, cfg.aggregation, cfg.buffer_capacity);
    let mut results = vec![FrameResult {
        frame_index: frames[0].index(),
        detections: state.current().clone(),
        step_latency: start.elapsed(),
        prior_age: 0,
    }];
    let mut pending: Option<(usize, DetectorResponse)> = None;

    for pair in frames.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        let i = cur.index();
        let start = Instant::now();
        let field = flow.field(prev, cur).at(i)?;
        let due = pending.take_if(|(due, _)| *due <= i).map(|(_, r)| r.detections);
        let mut t = state.step(field, due).at(i)?;
        let mut step_latency = start.elapsed();

        if let Some(s) = t.submit {
            let resp = serve(cur);
            if s + latency <= i {
                let start = Instant::now();
                t = t.state.receive(resp.detections).at(i)?;
                step_latency += start.elapsed();
            } else {
                pending = Some((s + latency, resp));
            }
        }
        state = t.state;
        results.push(FrameResult {
            frame_index: i,
            detections: t.emitted,
            step_latency,
            prior_age: t.prior_age,
        });
    }
    Ok(PipelineOutput {
        frames: results,
        detector_latencies,
    })
}

fn tagged(resp: DetectorResponse, expected: usize) -> Result<DetectorResponse, DetectorError> {
    if resp.frame_index() != expected {
        return Err(DetectorError::Mismatch {
            expected,
            got: resp.frame_index(),
        });
    }
    Ok(resp)
}

fn run_realtime(
    frames: &[Frame],
    cfg: &PipelineConfig,
    flow: &Flow,
    detector: Box<dyn Detector>,
) -> Result<PipelineOutput, PipelineError> {
    let latency: LatencyModel = cfg.detector.latency.clone();
    let frame_latency = latency.frames();
    let worker = DetectorWorker::spawn(detector, latency);
    let mut detector_latencies = Vec::new();

    let i0 = frames[0].index();
    worker.submit(request(&frames[0])).at(i0)?;
    let first = tagged(worker.recv().at(i0)?, i0).at(i0)?;
    detector_latencies.push(first.latency);
    let start = Instant::now();
    let mut state = PipelineState::new(first.detections, cfg.aggregation, cfg.buffer_capacity);
    let mut results = vec![FrameResult {
        frame_index: i0,
        detections: state.current().clone(),
        step_latency: start.elapsed(),
        prior_age: 0,
    }];

    for pair in frames.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        let i = cur.index();
        let start = Instant::now();
        let mut waited = Duration::ZERO;
        let field = flow.field(prev, cur).at(i)?;

        let result = match state.inflight() {
            None => None,
            Some(s) => {
                let resp = match frame_latency {
                    // Frame-count latency: the response is due now, so collect it.
                    Some(l) if s + l <= i => {
                        let w = Instant::now();
                        let r = worker.recv().at(i)?;
                        waited += w.elapsed();
                        Some(r)
                    }
                    Some(_) => None,
                    None => worker.try_recv().at(i)?,
                };
                resp.map(|r| tagged(r, s)).transpose().at(i)?
            }
        };
        if let Some(r) = &result {
            detector_latencies.push(r.latency);
        }
        let mut t = state.step(field, result.map(|r| r.detections)).at(i)?;
        if let Some(s) = t.submit {
            worker.submit(request(cur)).at(i)?;
            if frame_latency == Some(0) {
                let w = Instant::now();
                let r = tagged(worker.recv().at(i)?, s).at(i)?;
                waited += w.elapsed();
                detector_latencies.push(r.latency);
                t = t.state.receive(r.detections).at(i)?;
            }
        }
        state = t.state;
        results.push(FrameResult {
            frame_index: i,
            detections: t.emitted,
            step_latency: start.elapsed().saturating_sub(waited),
            prior_age: t.prior_age,
        });
    }
    Ok(PipelineOutput {
        frames: results,
        detector_latencies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectors::{DetectorKind, ScriptedMock};
    use crate::motion::MotionVector;
    use crate::propagation::Detection;

    fn frames(n: usize) -> Vec<Frame> {
        (0..n).map(|i| Frame::filled(i, 64, 64, 100).unwrap()).collect()
    }

    fn mock_spec(latency: LatencyModel) -> DetectorSpec {
        DetectorSpec {
            kind: DetectorKind::ScriptedMock { path: "unused".into() },
            latency,
        }
    }

    fn one_box_per_frame(n: usize) -> ScriptedMock {
        ScriptedMock::new(
            (0..n).map(|i| DetectionSet::new(i, vec![Detection::new(i as f64, 1.0, 4.0, 4.0, 0.5, 0).unwrap()])),
        )
    }

    fn uniform_fields(n: usize, v: MotionVector) -> FlowSource {
        FlowSource::Precomputed(Arc::new(
            (0..n).map(|s| MotionVectorField::uniform(s, 64, 64, 16, v).unwrap()).collect(),
        ))
    }

    #[test]
    fn single_frame() {
        let cfg = PipelineConfig::new(
            FlowSource::Estimator(Default::default()),
            mock_spec(LatencyModel::FixedFrames(3)),
        );
        let out = run_pipeline_with(&frames(1), &cfg, Box::new(one_box_per_frame(1))).unwrap();
        assert_eq!(out.frames.len(), 1);
        assert_eq!(out.frames[0].detections, one_box_per_frame(1).detect(&frames(1)[0]));
    }

    #[test]
    fn deterministic_needs_frame_latency() {
        let cfg = PipelineConfig::new(
            uniform_fields(3, MotionVector::ZERO),
            mock_spec(LatencyModel::FixedWallClock { ms: 1 }),
        );
        let err = run_pipeline_with(&frames(3), &cfg, Box::new(ScriptedMock::default())).unwrap_err();
        assert!(matches!(err.kind, PipelineErrorKind::Config(_)));
    }

    #[test]
    fn missing_sidecar_field_names_frame() {
        let cfg = PipelineConfig::new(uniform_fields(2, MotionVector::ZERO), mock_spec(LatencyModel::FixedFrames(1)));
        let err = run_pipeline_with(&frames(4), &cfg, Box::new(ScriptedMock::default())).unwrap_err();
        assert_eq!(err.frame, 3);
        assert!(err.to_string().starts_with("frame 3: motion:"), "{err}");
    }

    #[test]
    fn response_lands_after_latency() {
        // Requests at frame 1 -> visible at 6 -> resubmitted at 6 -> visible at 11.
        let cfg = PipelineConfig::new(uniform_fields(12, MotionVector::ZERO), mock_spec(LatencyModel::FixedFrames(5)));
        let out = run_pipeline_with(&frames(12), &cfg, Box::new(one_box_per_frame(12))).unwrap();
        let xs: Vec<f64> = out.frames.iter().map(|r| r.detections.detections[0].x).collect();
        assert_eq!(xs, vec![0., 0., 0., 0., 0., 0., 1., 1., 1., 1., 1., 6.]);
        let ages: Vec<usize> = out.frames.iter().map(|r| r.prior_age).collect();
        assert_eq!(ages, vec![0, 1, 1, 2, 3, 4, 5, 1, 2, 3, 4, 5]);
        assert_eq!(out.detector_latencies.len(), 4);
    }

    #[test]
    fn realtime_matches_deterministic_under_frame_latency() {
        for l in [0, 1, 4] {
            let mut cfg = PipelineConfig::new(
                uniform_fields(20, MotionVector::new(1, 0)),
                mock_spec(LatencyModel::FixedFrames(l)),
            );
            let det = run_pipeline_with(&frames(20), &cfg, Box::new(one_box_per_frame(20))).unwrap();
            cfg.mode = ExecutionMode::RealTime;
            let rt = run_pipeline_with(&frames(20), &cfg, Box::new(one_box_per_frame(20))).unwrap();
            let strip = |o: &PipelineOutput| {
                o.frames.iter().map(|r| (r.detections.clone(), r.prior_age)).collect::<Vec<_>>()
            };
            assert_eq!(strip(&det), strip(&rt), "latency {l}");
        }
    }

    #[test]
    fn realtime_wall_clock_emits_every_frame() {
        let mut cfg = PipelineConfig::new(
            uniform_fields(30, MotionVector::new(1, 0)),
            mock_spec(LatencyModel::PerRequestSchedule(vec![0, 50, 1])),
        );
        cfg.mode = ExecutionMode::RealTime;
        let out = run_pipeline_with(&frames(30), &cfg, Box::new(one_box_per_frame(30))).unwrap();
        assert_eq!(out.frames.len(), 30);
        for (k, r) in out.frames.iter().enumerate() {
            assert_eq!(r.frame_index, k);
            assert_eq!(r.detections.frame_index, k);
        }
    }
}
