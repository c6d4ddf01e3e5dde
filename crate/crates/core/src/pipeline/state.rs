use crate::detectors::DetectorError;
use crate::motion::MotionVectorField;
use crate::propagation::{propagate, replay, AggregationKind, DetectionSet, FlowBuffer};

use super::PipelineErrorKind;

/// Everything the propagation worker carries from one frame to the next.
///
/// `prior` is anchored at frame `m` and `buffer` holds the fields from `m` up
/// to the current frame `i`. The anchor moves whenever a request is sent, so
/// a returning result always starts where the buffer starts.
#[derive(Debug, Clone)]
pub struct PipelineState {
    m: usize,
    i: usize,
    prior: DetectionSet,
    current: DetectionSet,
    buffer: FlowBuffer,
    inflight: Option<usize>,
    kind: AggregationKind,
}

/// Outcome of advancing the state by one event.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: PipelineState,
    pub emitted: DetectionSet,
    /// Frames between the emitted set's anchor and the current frame.
    pub prior_age: usize,
    /// Frame whose image must now be sent to the detector.
    pub submit: Option<usize>,
}

impl PipelineState {
    /// State right after the first detector result, with nothing in flight.
    pub fn new(first: DetectionSet, kind: AggregationKind, buffer_capacity: usize) -> Self {
        Self {
            m: first.frame_index,
            i: first.frame_index,
            prior: first.clone(),
            current: first,
            buffer: FlowBuffer::with_capacity(buffer_capacity),
            inflight: None,
            kind,
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn i(&self) -> usize {
        self.i
    }

    pub fn prior(&self) -> &DetectionSet {
        &self.prior
    }

    pub fn current(&self) -> &DetectionSet {
        &self.current
    }

    pub fn buffer(&self) -> &FlowBuffer {
        &self.buffer
    }

    pub fn inflight(&self) -> Option<usize> {
        self.inflight
    }

    /// Advances to the next frame with the field `i -> i+1`.
    ///
    /// With a result, the result is replayed through the buffer to the new
    /// frame, the buffer is emptied and the current frame is resubmitted.
    /// Without one, the previous emission moves one step along the field.
    pub fn step(
        mut self,
        field: MotionVectorField,
        maybe_result: Option<DetectionSet>,
    ) -> Result<Transition, PipelineErrorKind> {
        if field.src_index() != self.i {
            return Err(PipelineErrorKind::State(format!(
                "field starts at frame {} but the worker is at frame {}",
                field.src_index(),
                self.i
            )));
        }
        let anchor = self.m;
        self.buffer.push(field)?;
        self.i += 1;
        let prior_age = match maybe_result {
            Some(result) => self.absorb(result)?,
            None => {
                let newest = self.buffer.iter().last().expect("field was just pushed");
                self.current = propagate(&self.current, newest, self.kind)?;
                self.i - anchor
            }
        };
        let submit = if self.inflight.is_none() {
            self.prior = self.current.clone();
            self.m = self.i;
            self.buffer.clear();
            self.inflight = Some(self.i);
            Some(self.i)
        } else {
            None
        };
        Ok(Transition {
            emitted: self.current.clone(),
            state: self,
            prior_age,
            submit,
        })
    }

    /// Applies a result without advancing the frame. Used when a response is
    /// due at the frame that requested it.
    pub fn receive(mut self, result: DetectionSet) -> Result<Transition, PipelineErrorKind> {
        let prior_age = self.absorb(result)?;
        Ok(Transition {
            emitted: self.current.clone(),
            state: self,
            prior_age,
            submit: None,
        })
    }

    fn absorb(&mut self, result: DetectionSet) -> Result<usize, PipelineErrorKind> {
        let got = result.frame_index;
        match self.inflight {
            Some(expected) if expected == got => {}
            Some(expected) => return Err(DetectorError::Mismatch { expected, got }.into()),
            None => {
                return Err(PipelineErrorKind::State(format!(
                    "result for frame {got} arrived with no request in flight"
                )))
            }
        }
        if got > self.i {
            return Err(PipelineErrorKind::State(format!(
                "result for frame {got} is ahead of the worker at frame {}",
                self.i
            )));
        }
        let replayed = replay(&result, &self.buffer, got, self.kind)?;
        self.prior = replayed.clone();
        self.current = replayed;
        self.m = self.i;
        self.buffer.clear();
        self.inflight = None;
        Ok(self.i - got)
    }
}
