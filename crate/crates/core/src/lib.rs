//! Video object detection acceleration by propagating detector boxes along
//! codec-style block motion vectors while the detector runs asynchronously.

pub mod cli;
pub mod detectors;
pub mod eval;
pub mod mot;
pub mod motion;
pub mod pipeline;
pub mod propagation;
pub mod synth;
