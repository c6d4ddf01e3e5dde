use std::collections::VecDeque;

use super::{propagate, AggregationKind, DetectionSet, PropagationError};
use crate::motion::MotionVectorField;

pub const DEFAULT_BUFFER_CAPACITY: usize = 1024;

/// FIFO of consecutive flow fields retained while a detector request is in flight.
#[derive(Debug, Clone)]
pub struct FlowBuffer {
    entries: VecDeque<MotionVectorField>,
    capacity: Option<usize>,
}

impl Default for FlowBuffer {
    fn default() -> Self {
        Self::with_capacity(DEFAULT_BUFFER_CAPACITY)
    }
}

impl FlowBuffer {
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            entries: VecDeque::new(),
            capacity: Some(capacity),
        }
    }

    pub fn unbounded() -> Self {
        Self {
            entries: VecDeque::new(),
            capacity: None,
        }
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn iter(&self) -> impl Iterator<Item = &MotionVectorField> {
        self.entries.iter()
    }

    pub fn first_src(&self) -> Option<usize> {
        self.entries.front().map(|f| f.src_index())
    }

    pub fn last_dst(&self) -> Option<usize> {
        self.entries.back().map(|f| f.dst_index())
    }

    pub fn push(&mut self, f: MotionVectorField) -> Result<(), PropagationError> {
        if let Some(expected) = self.last_dst() {
            if f.src_index() != expected {
                return Err(PropagationError::NonConsecutive {
                    expected,
                    got: f.src_index(),
                });
            }
        }
        if let Some(capacity) = self.capacity {
            if self.entries.len() >= capacity {
                return Err(PropagationError::Overflow { capacity });
            }
        }
        self.entries.push_back(f);
        Ok(())
    }
}

/// Folds `propagate` over every buffered field starting at `from_index`.
/// Older entries are skipped.
pub fn replay(
    prior: &DetectionSet,
    buf: &FlowBuffer,
    from_index: usize,
    kind: AggregationKind,
) -> Result<DetectionSet, PropagationError> {
    if prior.frame_index != from_index {
        return Err(PropagationError::FrameMismatch {
            expected: from_index,
            got: prior.frame_index,
        });
    }
    let (Some(first), Some(last)) = (buf.first_src(), buf.last_dst()) else {
        return Ok(prior.clone());
    };
    if from_index < first || from_index > last {
        return Err(PropagationError::MissingField { needed: from_index });
    }
    buf.iter()
        .filter(|f| f.src_index() >= from_index)
        .try_fold(prior.clone(), |ds, f| propagate(&ds, f, kind))
}
