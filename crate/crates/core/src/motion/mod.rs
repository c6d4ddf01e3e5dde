//! Coarse optical flow from block matching.
//!
//! Frames are split into macroblocks and each block of the current frame is
//! matched against the previous frame by minimising the mean absolute
//! difference over a square search window. The resulting per-block vectors
//! follow the convention that content moves by `(dx, dy)` from the previous
//! frame to the current one.

mod frames;
mod mvf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use frames::{list_frame_files, read_frame, read_frame_dir, write_pgm};
pub use mvf::{read_mvf, write_mvf, MvfError};

pub const DEFAULT_BLOCK_SIZE: usize = 16;
pub const DEFAULT_SEARCH_RANGE: usize = 16;

#[derive(Debug, Error)]
pub enum MotionError {
    #[error("frame dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("frames are not consecutive: {prev} -> {cur}")]
    NonConsecutive { prev: usize, cur: usize },
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("invalid estimator parameters: {0}")]
    InvalidParams(String),
    #[error("invalid motion vector field: {0}")]
    InvalidField(String),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

/// One grayscale image in a sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    index: usize,
    width: usize,
    height: usize,
    luma: Vec<u8>,
}

impl Frame {
    pub fn new(index: usize, width: usize, height: usize, luma: Vec<u8>) -> Result<Self, MotionError> {
        if width == 0 || height == 0 {
            return Err(MotionError::InvalidFrame(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if luma.len() != width * height {
            return Err(MotionError::InvalidFrame(format!(
                "luma has {} samples, expected {}",
                luma.len(),
                width * height
            )));
        }
        Ok(Self {
            index,
            width,
            height,
            luma,
        })
    }

    /// Builds a frame from interleaved 8-bit RGB using integer BT.601 weights.
    pub fn from_rgb(index: usize, width: usize, height: usize, rgb: &[u8]) -> Result<Self, MotionError> {
        if rgb.len() != width * height * 3 {
            return Err(MotionError::InvalidFrame(format!(
                "rgb buffer has {} bytes, expected {}",
                rgb.len(),
                width * height * 3
            )));
        }
        let luma = rgb
            .chunks_exact(3)
            .map(|px| bt601_luma(px[0], px[1], px[2]))
            .collect();
        Self::new(index, width, height, luma)
    }

    pub fn filled(index: usize, width: usize, height: usize, value: u8) -> Result<Self, MotionError> {
        Self::new(index, width, height, vec![value; width * height])
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn luma(&self) -> &[u8] {
        &self.luma
    }

    pub fn pixel(&self, x: usize, y: usize) -> u8 {
        self.luma[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[u8] {
        &self.luma[y * self.width..(y + 1) * self.width]
    }

    pub fn with_index(mut self, index: usize) -> Self {
        self.index = index;
        self
    }
}

/// Integer BT.601 luma, rounding half up. The weights sum to 256.
pub fn bt601_luma(r: u8, g: u8, b: u8) -> u8 {
    ((77 * r as u32 + 150 * g as u32 + 29 * b as u32 + 128) >> 8) as u8
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MotionVector {
    pub dx: i32,
    pub dy: i32,
}

impl MotionVector {
    pub const ZERO: MotionVector = MotionVector { dx: 0, dy: 0 };

    pub const fn new(dx: i32, dy: i32) -> Self {
        Self { dx, dy }
    }

    fn l1(self) -> u32 {
        self.dx.unsigned_abs() + self.dy.unsigned_abs()
    }
}

/// Per-macroblock displacement grid from frame `src_index` to `src_index + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MotionVectorField {
    src_index: usize,
    frame_w: usize,
    frame_h: usize,
    block_size: usize,
    grid_w: usize,
    grid_h: usize,
    vectors: Vec<MotionVector>,
}

impl MotionVectorField {
    pub fn new(
        src_index: usize,
        frame_w: usize,
        frame_h: usize,
        block_size: usize,
        vectors: Vec<MotionVector>,
    ) -> Result<Self, MotionError> {
        if frame_w == 0 || frame_h == 0 || block_size == 0 {
            return Err(MotionError::InvalidField(format!(
                "frame {frame_w}x{frame_h} with block size {block_size}"
            )));
        }
        let (grid_w, grid_h) = grid_dims(frame_w, frame_h, block_size);
        if vectors.len() != grid_w * grid_h {
            return Err(MotionError::InvalidField(format!(
                "{} vectors for a {grid_w}x{grid_h} grid",
                vectors.len()
            )));
        }
        Ok(Self {
            src_index,
            frame_w,
            frame_h,
            block_size,
            grid_w,
            grid_h,
            vectors,
        })
    }

    pub fn uniform(
        src_index: usize,
        frame_w: usize,
        frame_h: usize,
        block_size: usize,
        v: MotionVector,
    ) -> Result<Self, MotionError> {
        let (gw, gh) = grid_dims(frame_w, frame_h, block_size.max(1));
        Self::new(src_index, frame_w, frame_h, block_size, vec![v; gw * gh])
    }

    pub fn zeros(src_index: usize, frame_w: usize, frame_h: usize, block_size: usize) -> Result<Self, MotionError> {
        Self::uniform(src_index, frame_w, frame_h, block_size, MotionVector::ZERO)
    }

    pub fn src_index(&self) -> usize {
        self.src_index
    }

    pub fn dst_index(&self) -> usize {
        self.src_index + 1
    }

    pub fn frame_w(&self) -> usize {
        self.frame_w
    }

    pub fn frame_h(&self) -> usize {
        self.frame_h
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn vectors(&self) -> &[MotionVector] {
        &self.vectors
    }

    pub fn get(&self, gx: usize, gy: usize) -> MotionVector {
        self.vectors[gy * self.grid_w + gx]
    }

    /// In-frame rectangle `(x, y, w, h)` covered by block `(gx, gy)`.
    pub fn block_rect(&self, gx: usize, gy: usize) -> (usize, usize, usize, usize) {
        let x = gx * self.block_size;
        let y = gy * self.block_size;
        (
            x,
            y,
            self.block_size.min(self.frame_w - x),
            self.block_size.min(self.frame_h - y),
        )
    }
}

pub fn grid_dims(frame_w: usize, frame_h: usize, block_size: usize) -> (usize, usize) {
    (frame_w.div_ceil(block_size), frame_h.div_ceil(block_size))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SearchMethod {
    #[default]
    FullSearch,
    ThreeStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionEstimatorParams {
    pub block_size: usize,
    pub search_range: usize,
    pub method: SearchMethod,
    /// Subtracted from the zero vector's MAD before comparison.
    pub zero_bias: f64,
}

impl Default for MotionEstimatorParams {
    fn default() -> Self {
        Self {
            block_size: DEFAULT_BLOCK_SIZE,
            search_range: DEFAULT_SEARCH_RANGE,
            method: SearchMethod::FullSearch,
            zero_bias: 0.0,
        }
    }
}

impl MotionEstimatorParams {
    pub fn validate(&self) -> Result<(), MotionError> {
        if self.block_size < 4 {
            return Err(MotionError::InvalidParams(format!(
                "block_size must be >= 4, got {}",
                self.block_size
            )));
        }
        if self.search_range < 1 {
            return Err(MotionError::InvalidParams("search_range must be >= 1".into()));
        }
        if !(self.zero_bias >= 0.0 && self.zero_bias.is_finite()) {
            return Err(MotionError::InvalidParams(format!(
                "zero_bias must be a non-negative number, got {}",
                self.zero_bias
            )));
        }
        Ok(())
    }
}

/// Estimates one vector per macroblock of `cur` by matching against `prev`.
pub fn estimate_motion(
    prev: &Frame,
    cur: &Frame,
    params: &MotionEstimatorParams,
) -> Result<MotionVectorField, MotionError> {
    params.validate()?;
    if prev.width != cur.width || prev.height != cur.height {
        return Err(MotionError::DimensionMismatch(
            prev.width, prev.height, cur.width, cur.height,
        ));
    }
    if cur.index != prev.index + 1 {
        return Err(MotionError::NonConsecutive {
            prev: prev.index,
            cur: cur.index,
        });
    }
    let bs = params.block_size;
    let (grid_w, grid_h) = grid_dims(cur.width, cur.height, bs);
    let vectors: Vec<MotionVector> = (0..grid_h)
        .into_par_iter()
        .flat_map_iter(|gy| {
            (0..grid_w).map(move |gx| {
                let block = Block::new(cur, gx * bs, gy * bs, bs);
                match params.method {
                    SearchMethod::FullSearch => full_search(prev, cur, &block, params),
                    SearchMethod::ThreeStep => three_step(prev, cur, &block, params),
                }
            })
        })
        .collect();
    MotionVectorField::new(prev.index, cur.width, cur.height, bs, vectors)
}

#[derive(Debug, Clone, Copy)]
struct Block {
    x: usize,
    y: usize,
    w: usize,
    h: usize,
}

impl Block {
    fn new(frame: &Frame, x: usize, y: usize, bs: usize) -> Self {
        Self {
            x,
            y,
            w: bs.min(frame.width - x),
            h: bs.min(frame.height - y),
        }
    }
}

/// Ordering key: cost, then |dx|+|dy|, then dy, then dx.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    cost: f64,
    mv: MotionVector,
}

impl Candidate {
    fn beats(&self, other: &Candidate) -> bool {
        if self.cost != other.cost {
            return self.cost < other.cost;
        }
        (self.mv.l1(), self.mv.dy, self.mv.dx) < (other.mv.l1(), other.mv.dy, other.mv.dx)
    }
}

/// Costs are kept in SAD units; the block's pixel count is fixed across
/// candidates so ordering by SAD equals ordering by MAD.
struct Matcher<'a> {
    prev: &'a Frame,
    cur: &'a Frame,
    block: Block,
    bias_sad: f64,
}

impl<'a> Matcher<'a> {
    fn new(prev: &'a Frame, cur: &'a Frame, block: Block, zero_bias: f64) -> Self {
        Self {
            prev,
            cur,
            block,
            bias_sad: zero_bias * (block.w * block.h) as f64,
        }
    }

    fn in_bounds(&self, mv: MotionVector) -> bool {
        let sx = self.block.x as i64 - mv.dx as i64;
        let sy = self.block.y as i64 - mv.dy as i64;
        sx >= 0
            && sy >= 0
            && sx as usize + self.block.w <= self.prev.width
            && sy as usize + self.block.h <= self.prev.height
    }

    /// Returns `None` when the candidate reads outside the source frame or
    /// its partial cost already exceeds `bound`.
    fn cost(&self, mv: MotionVector, bound: f64) -> Option<f64> {
        if !self.in_bounds(mv) {
            return None;
        }
        let sx = (self.block.x as i64 - mv.dx as i64) as usize;
        let sy = (self.block.y as i64 - mv.dy as i64) as usize;
        let bias = if mv == MotionVector::ZERO { self.bias_sad } else { 0.0 };
        let mut sad: u64 = 0;
        for row in 0..self.block.h {
            let c = &self.cur.row(self.block.y + row)[self.block.x..self.block.x + self.block.w];
            let p = &self.prev.row(sy + row)[sx..sx + self.block.w];
            sad += c
                .iter()
                .zip(p)
                .map(|(&a, &b)| a.abs_diff(b) as u32)
                .sum::<u32>() as u64;
            if sad as f64 - bias > bound {
                return None;
            }
        }
        Some(sad as f64 - bias)
    }

    fn consider(&self, best: &mut Candidate, mv: MotionVector) {
        if let Some(cost) = self.cost(mv, best.cost) {
            let cand = Candidate { cost, mv };
            if cand.beats(best) {
                *best = cand;
            }
        }
    }

    fn zero(&self) -> Candidate {
        Candidate {
            cost: self.cost(MotionVector::ZERO, f64::INFINITY).expect("zero vector is always in bounds"),
            mv: MotionVector::ZERO,
        }
    }
}

fn full_search(prev: &Frame, cur: &Frame, block: &Block, params: &MotionEstimatorParams) -> MotionVector {
    let m = Matcher::new(prev, cur, *block, params.zero_bias);
    let r = params.search_range as i32;
    let mut best = m.zero();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx == 0 && dy == 0 {
                continue;
            }
            m.consider(&mut best, MotionVector::new(dx, dy));
        }
    }
    best.mv
}

fn three_step(prev: &Frame, cur: &Frame, block: &Block, params: &MotionEstimatorParams) -> MotionVector {
    let m = Matcher::new(prev, cur, *block, params.zero_bias);
    let r = params.search_range as i32;
    let mut best = m.zero();
    let mut step = (r + 1) / 2;
    while step >= 1 {
        let center = best.mv;
        for sy in [-step, 0, step] {
            for sx in [-step, 0, step] {
                let mv = MotionVector::new(center.dx + sx, center.dy + sy);
                if (sx == 0 && sy == 0) || mv.dx.abs() > r || mv.dy.abs() > r {
                    continue;
                }
                m.consider(&mut best, mv);
            }
        }
        step /= 2;
    }
    best.mv
}
