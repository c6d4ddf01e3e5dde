//! PGM/PPM frame ingestion and PGM output.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat, ImageReader};

use super::{Frame, MotionError};

fn io_err(path: &Path, msg: impl ToString) -> MotionError {
    MotionError::Io {
        path: path.display().to_string(),
        msg: msg.to_string(),
    }
}

/// Reads one binary PNM file. Color (P6) input is converted to luma.
pub fn read_frame(path: &Path, index: usize) -> Result<Frame, MotionError> {
    let mut reader = ImageReader::open(path).map_err(|e| io_err(path, e))?;
    reader.set_format(ImageFormat::Pnm);
    let img = reader.decode().map_err(|e| io_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(g) => Frame::new(index, w, h, g.into_raw()),
        DynamicImage::ImageRgb8(rgb) => Frame::from_rgb(index, w, h, rgb.as_raw()),
        other => Err(io_err(
            path,
            format!("unsupported sample layout {:?}; expected 8-bit gray or RGB", other.color()),
        )),
    }
}

fn is_frame_file(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "ppm" | "pnm"))
}

/// Lists frame files in lexicographic filename order.
pub fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>, MotionError> {
    let entries = std::fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        if is_frame_file(&path) {
            paths.push(path);
        }
    }
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(paths)
}

/// Loads a whole sequence; frame indices follow filename order from 0.
pub fn read_frame_dir(dir: &Path) -> Result<Vec<Frame>, MotionError> {
    let paths = list_frame_files(dir)?;
    let mut frames: Vec<Frame> = Vec::with_capacity(paths.len());
    for (i, p) in paths.iter().enumerate() {
        let f = read_frame(p, i)?;
        if let Some(first) = frames.first() {
            if (f.width, f.height) != (first.width, first.height) {
                return Err(MotionError::DimensionMismatch(first.width, first.height, f.width, f.height));
            }
        }
        frames.push(f);
    }
    Ok(frames)
}

pub fn write_pgm(path: &Path, frame: &Frame) -> Result<(), MotionError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let enc = PnmEncoder::new(BufWriter::new(file)).with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary));
    enc.write_image(
        &frame.luma,
        frame.width as u32,
        frame.height as u32,
        ExtendedColorType::L8,
    )
    .map_err(|e| io_err(path, e))
}
