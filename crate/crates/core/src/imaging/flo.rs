//! Middlebury `.flo` optical flow files.
//!
//! Layout, little-endian: f32 magic `202021.25`, i32 width, i32 height,
//! then `width * height` interleaved `(dx, dy)` f32 pairs in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{FlowField, ImagingError};

pub const FLO_MAGIC: f32 = 202021.25;

/// Middlebury marks unknown flow with magnitudes at or above this value.
const UNKNOWN_FLOW: f32 = 1e9;

/// Loads a `.flo` file. Unknown or non-finite vectors are replaced by zero
/// flow.
pub fn read_flow(path: impl AsRef<Path>) -> Result<FlowField, ImagingError> {
    let path = path.as_ref();
    let unreadable = |reason: String| ImagingError::Unreadable {
        path: path.to_path_buf(),
        reason,
    };
    let file = File::open(path).map_err(|e| unreadable(e.to_string()))?;
    let mut reader = BufReader::new(file);
    let mut header = [0u8; 12];
    reader
        .read_exact(&mut header)
        .map_err(|_| unreadable("truncated .flo header".into()))?;
    let magic = f32::from_le_bytes([header[0], header[1], header[2], header[3]]);
    if magic != FLO_MAGIC {
        return Err(ImagingError::BadFlowMagic {
            path: path.to_path_buf(),
            magic,
        });
    }
    let width = i32::from_le_bytes([header[4], header[5], header[6], header[7]]);
    let height = i32::from_le_bytes([header[8], header[9], header[10], header[11]]);
    if width <= 0 || height <= 0 || width > 1 << 16 || height > 1 << 16 {
        return Err(unreadable(format!("implausible .flo size {width}x{height}")));
    }
    let (width, height) = (width as usize, height as usize);
    let mut raw = vec![0u8; width * height * 8];
    reader
        .read_exact(&mut raw)
        .map_err(|_| unreadable("truncated .flo raster".into()))?;
    let mut unknown = 0usize;
    let data: Vec<f32> = raw
        .chunks_exact(4)
        .map(|b| {
            let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            if v.is_finite() && v.abs() < UNKNOWN_FLOW {
                v
            } else {
                unknown += 1;
                0.0
            }
        })
        .collect();
    if unknown > 0 {
        log::warn!("{}: {unknown} unknown flow components zeroed", path.display());
    }
    Ok(FlowField::from_vec(width, height, data))
}

pub fn write_flow(path: impl AsRef<Path>, flow: &FlowField) -> Result<(), ImagingError> {
    let path = path.as_ref();
    let write_err = |e| ImagingError::Write {
        path: path.to_path_buf(),
        source: e,
    };
    let file = File::create(path).map_err(write_err)?;
    let mut w = BufWriter::new(file);
    w.write_all(&FLO_MAGIC.to_le_bytes()).map_err(write_err)?;
    w.write_all(&(flow.width() as i32).to_le_bytes()).map_err(write_err)?;
    w.write_all(&(flow.height() as i32).to_le_bytes()).map_err(write_err)?;
    for v in flow.data() {
        w.write_all(&v.to_le_bytes()).map_err(write_err)?;
    }
    w.flush().map_err(write_err)
}
