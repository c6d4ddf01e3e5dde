//! Seeded synthetic sequences: textured rectangles sliding over a textured
//! background, with matching MOT ground truth and detections.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{GroundTruth, GtBox};
use crate::motion::{write_pgm, Frame, MotionError};
use crate::mot::{write_detections, write_ground_truth, MotError};
use crate::propagation::{Detection, DetectionSet};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid trajectory spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Frame(#[from] MotionError),
    #[error(transparent)]
    Mot(#[from] MotError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Constant velocity for `frames` frame transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub frames: usize,
    pub vx: i64,
    pub vy: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub x: i64,
    pub y: i64,
    pub w: usize,
    pub h: usize,
    /// Velocity schedule, repeated cyclically. Empty means static.
    #[serde(default)]
    pub segments: Vec<Segment>,
}

impl ObjectSpec {
    fn velocity_at(&self, transition: usize) -> (i64, i64) {
        let period: usize = self.segments.iter().map(|s| s.frames).sum();
        if period == 0 {
            return (0, 0);
        }
        let mut t = transition % period;
        for s in &self.segments {
            if t < s.frames {
                return (s.vx, s.vy);
            }
            t -= s.frames;
        }
        unreachable!("transition lies within one period")
    }

    /// Top-left corner at every frame.
    pub fn positions(&self, frames: usize) -> Vec<(i64, i64)> {
        let mut out = Vec::with_capacity(frames);
        let (mut x, mut y) = (self.x, self.y);
        for t in 0..frames {
            out.push((x, y));
            let (vx, vy) = self.velocity_at(t);
            x += vx;
            y += vy;
        }
        out
    }
}

fn default_background_amplitude() -> u8 {
    6
}

fn default_object_amplitude() -> u8 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    #[serde(default)]
    pub seed: u64,
    /// Background intensities are uniform in `128 ± background_amplitude`.
    #[serde(default = "default_background_amplitude")]
    pub background_amplitude: u8,
    #[serde(default = "default_object_amplitude")]
    pub object_amplitude: u8,
    /// Std-dev in pixels of the position jitter applied to det.txt boxes.
    #[serde(default)]
    pub det_noise: f64,
    pub objects: Vec<ObjectSpec>,
}

impl SynthSpec {
    /// 640x480, 300 frames, twenty 20x40 boxes each moving 2 px per frame
    /// back and forth in its own lane. Boxes keep clear of the outermost
    /// block column so their motion can be matched at every frame.
    pub fn benchmark(seed: u64) -> Self {
        let mut objects = Vec::new();
        let object = |x, y, segments| ObjectSpec {
            x,
            y,
            w: 20,
            h: 40,
            segments,
        };
        for lane in 0..10i64 {
            let y = 48 * lane + 4;
            if lane % 2 == 0 {
                objects.push(object(20, y, vec![seg(135, 2), seg(135, -2)]));
                objects.push(object(600, y, vec![seg(135, -2), seg(135, 2)]));
            } else {
                objects.push(object(160, y, vec![seg(65, 2), seg(130, -2), seg(65, 2)]));
                objects.push(object(470, y, vec![seg(65, -2), seg(130, 2), seg(65, -2)]));
            }
        }
        Self {
            width: 640,
            height: 480,
            frames: 300,
            seed,
            background_amplitude: default_background_amplitude(),
            object_amplitude: default_object_amplitude(),
            det_noise: 0.0,
            objects,
        }
    }

    fn trajectories(&self) -> Vec<Vec<(i64, i64)>> {
        self.objects.iter().map(|o| o.positions(self.frames)).collect()
    }

    #[allow(clippy::needless_range_loop)] // tracks are indexed [object][frame]
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Invalid(m));
        if self.width == 0 || self.height == 0 || self.frames == 0 {
            return bad("width, height and frames must be positive".into());
        }
        if !(self.det_noise >= 0.0 && self.det_noise.is_finite()) {
            return bad(format!("det_noise must be non-negative, got {}", self.det_noise));
        }
        for (k, o) in self.objects.iter().enumerate() {
            if o.w == 0 || o.h == 0 {
                return bad(format!("object {k} has empty size"));
            }
            if o.segments.iter().any(|s| s.frames == 0) {
                return bad(format!("object {k} has a zero-length segment"));
            }
        }
        let tracks = self.trajectories();
        for t in 0..self.frames {
            for (k, o) in self.objects.iter().enumerate() {
                let (x, y) = tracks[k][t];
                if x < 0 || y < 0 || x + o.w as i64 > self.width as i64 || y + o.h as i64 > self.height as i64 {
                    return bad(format!("object {k} leaves the frame at frame {t} (at {x},{y})"));
                }
                for (j, p) in self.objects.iter().enumerate().skip(k + 1) {
                    let (px, py) = tracks[j][t];
                    let overlap_x = x < px + p.w as i64 && px < x + o.w as i64;
                    let overlap_y = y < py + p.h as i64 && py < y + o.h as i64;
                    if overlap_x && overlap_y {
                        return bad(format!("objects {k} and {j} overlap at frame {t}"));
                    }
                }
            }
        }
        Ok(())
    }
}

fn seg(frames: usize, vx: i64) -> Segment {
    Segment { frames, vx, vy: 0 }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub frames: Vec<Frame>,
    pub ground_truth: GroundTruth,
    pub detections: Vec<DetectionSet>,
}

fn texture(rng: &mut ChaCha8Rng, n: usize, amplitude: u8) -> Vec<u8> {
    let lo = 128 - amplitude.min(128) as i32;
    let hi = 128 + amplitude.min(127) as i32;
    (0..n).map(|_| rng.random_range(lo..=hi) as u8).collect()
}

#[allow(clippy::needless_range_loop)]
pub fn generate(spec: &SynthSpec) -> Result<SynthDataset, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width, spec.height);
    let background = texture(&mut rng, w * h, spec.background_amplitude);
    let skins: Vec<Vec<u8>> = spec
        .objects
        .iter()
        .map(|o| texture(&mut rng, o.w * o.h, spec.object_amplitude))
        .collect();
    let tracks = spec.trajectories();
    let noise = (spec.det_noise > 0.0).then(|| Normal::new(0.0, spec.det_noise).expect("validated std-dev"));

    let mut frames = Vec::with_capacity(spec.frames);
    let mut gt = Vec::with_capacity(spec.frames);
    let mut dets = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let mut luma = background.clone();
        let mut gt_boxes = Vec::with_capacity(spec.objects.len());
        let mut det_boxes = Vec::with_capacity(spec.objects.len());
        for (k, o) in spec.objects.iter().enumerate() {
            let (x, y) = (tracks[k][t].0 as usize, tracks[k][t].1 as usize);
            for row in 0..o.h {
                let dst = (y + row) * w + x;
                luma[dst..dst + o.w].copy_from_slice(&skins[k][row * o.w..(row + 1) * o.w]);
            }
            gt_boxes.push(GtBox {
                id: k as i64 + 1,
                x: x as f64,
                y: y as f64,
                w: o.w as f64,
                h: o.h as f64,
                ignore: false,
            });
            let (jx, jy) = match &noise {
                Some(n) => (n.sample(&mut rng), n.sample(&mut rng)),
                None => (0.0, 0.0),
            };
            det_boxes.push(
                Detection::new(x as f64 + jx, y as f64 + jy, o.w as f64, o.h as f64, 1.0, 0)
                    .expect("synthetic boxes are valid"),
            );
        }
        frames.push(Frame::new(t, w, h, luma)?);
        gt.push(gt_boxes);
        dets.push(DetectionSet::new(t, det_boxes));
    }
    Ok(SynthDataset {
        frames,
        ground_truth: GroundTruth::new(gt),
        detections: dets,
    })
}

/// Writes `frames/NNNNNN.pgm`, `gt.txt` and `det.txt` under `out`.
pub fn write_dataset(data: &SynthDataset, out: &Path) -> Result<(), SynthError> {
    let io = |p: &Path| {
        let path = p.display().to_string();
        move |source| SynthError::Io { path, source }
    };
    let frame_dir = out.join("frames");
    fs::create_dir_all(&frame_dir).map_err(io(&frame_dir))?;
    for f in &data.frames {
        write_pgm(&frame_dir.join(format!("{:06}.pgm", f.index())), f)?;
    }
    let gt_path = out.join("gt.txt");
    write_ground_truth(&data.ground_truth, BufWriter::new(File::create(&gt_path).map_err(io(&gt_path))?))?;
    let det_path = out.join("det.txt");
    write_detections(&data.detections, BufWriter::new(File::create(&det_path).map_err(io(&det_path))?))?;
    Ok(())
}
