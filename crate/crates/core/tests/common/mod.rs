#![allow(dead_code)]

use movex::motion::{grid_dims, Frame, MotionVector, MotionVectorField};
use movex::propagation::{Detection, DetectionSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn noise_frame(index: usize, w: usize, h: usize, rng: &mut impl Rng) -> Frame {
    let luma = (0..w * h).map(|_| rng.random::<u8>()).collect();
    Frame::new(index, w, h, luma).unwrap()
}

/// `src` moved by `(sx, sy)` with wrap-around, tagged as the next frame.
pub fn shifted(src: &Frame, sx: i64, sy: i64) -> Frame {
    let (w, h) = (src.width() as i64, src.height() as i64);
    let mut luma = Vec::with_capacity(src.luma().len());
    for y in 0..h {
        for x in 0..w {
            luma.push(src.pixel((x - sx).rem_euclid(w) as usize, (y - sy).rem_euclid(h) as usize));
        }
    }
    Frame::new(src.index() + 1, src.width(), src.height(), luma).unwrap()
}

/// Exhaustive mean-absolute-difference search for one block, written without
/// reference to the library's matcher. Returns the winning vector.
pub fn exhaustive_mad(prev: &Frame, cur: &Frame, gx: usize, gy: usize, bs: usize, range: i64) -> MotionVector {
    let (w, h) = (cur.width() as i64, cur.height() as i64);
    let (bx, by) = ((gx * bs) as i64, (gy * bs) as i64);
    let bw = (bs as i64).min(w - bx);
    let bh = (bs as i64).min(h - by);
    let mut best: Option<(f64, i64, i64, i64)> = None;
    for dy in -range..=range {
        for dx in -range..=range {
            let (sx, sy) = (bx - dx, by - dy);
            if sx < 0 || sy < 0 || sx + bw > w || sy + bh > h {
                continue;
            }
            let mut total = 0u64;
            for y in 0..bh {
                for x in 0..bw {
                    let a = cur.pixel((bx + x) as usize, (by + y) as usize) as i64;
                    let b = prev.pixel((sx + x) as usize, (sy + y) as usize) as i64;
                    total += (a - b).unsigned_abs();
                }
            }
            let mad = total as f64 / (bw * bh) as f64;
            let key = (mad, dx.abs() + dy.abs(), dy, dx);
            if best.is_none_or(|b| key.partial_cmp(&b) == Some(std::cmp::Ordering::Less)) {
                best = Some(key);
            }
        }
    }
    let (_, _, dy, dx) = best.expect("zero displacement is always admissible");
    MotionVector::new(dx as i32, dy as i32)
}

pub fn random_field(src: usize, w: usize, h: usize, bs: usize, max: i32, rng: &mut impl Rng) -> MotionVectorField {
    let (gw, gh) = grid_dims(w, h, bs);
    let v = (0..gw * gh)
        .map(|_| MotionVector::new(rng.random_range(-max..=max), rng.random_range(-max..=max)))
        .collect();
    MotionVectorField::new(src, w, h, bs, v).unwrap()
}

pub fn random_detection(w: usize, h: usize, rng: &mut impl Rng) -> Detection {
    let bw = rng.random_range(2.0..(w as f64 / 3.0));
    let bh = rng.random_range(2.0..(h as f64 / 3.0));
    let x = rng.random_range(-bw / 2.0..(w as f64 - bw / 2.0));
    let y = rng.random_range(-bh / 2.0..(h as f64 - bh / 2.0));
    Detection::new(x, y, bw, bh, rng.random_range(0.0..=1.0), rng.random_range(0..5)).unwrap()
}

pub fn random_set(frame: usize, w: usize, h: usize, n: usize, rng: &mut impl Rng) -> DetectionSet {
    DetectionSet::new(frame, (0..n).map(|_| random_detection(w, h, rng)).collect())
}
