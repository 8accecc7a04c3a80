//! Portable Float Map (`Pf` grayscale, `PF` color).
//!
//! Scanlines are stored bottom-to-top. A negative scale field marks
//! little-endian samples, a positive one big-endian.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DenseMap, DisparityMap, ImagingError, ScalarMap};

/// Decoded PFM payload, rows top-to-bottom.
#[derive(Debug, Clone, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

fn malformed(path: &Path, reason: impl ToString) -> ImagingError {
    ImagingError::MalformedPfm {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn header_token<R: BufRead>(reader: &mut R, path: &Path) -> Result<String, ImagingError> {
    // Tokens are whitespace separated; the scale token is followed by a
    // single whitespace byte before the raster.
    let mut token = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        match reader.read(&mut byte) {
            Ok(0) => break,
            Ok(_) => {
                if byte[0].is_ascii_whitespace() {
                    if token.is_empty() {
                        continue;
                    }
                    break;
                }
                token.push(byte[0]);
                if token.len() > 64 {
                    return Err(malformed(path, "header token too long"));
                }
            }
            Err(e) => return Err(malformed(path, e)),
        }
    }
    if token.is_empty() {
        return Err(malformed(path, "truncated header"));
    }
    String::from_utf8(token).map_err(|_| malformed(path, "non-ASCII header"))
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Pfm, ImagingError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| ImagingError::Unreadable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut reader = BufReader::new(file);
    let channels = match header_token(&mut reader, path)?.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(malformed(path, format!("unknown identifier {other:?}"))),
    };
    let parse_dim = |tok: String| -> Result<usize, ImagingError> {
        tok.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| malformed(path, format!("bad dimension {tok:?}")))
    };
    let width = parse_dim(header_token(&mut reader, path)?)?;
    let height = parse_dim(header_token(&mut reader, path)?)?;
    let scale_tok = header_token(&mut reader, path)?;
    let scale: f32 = scale_tok
        .parse()
        .ok()
        .filter(|s: &f32| s.is_finite() && *s != 0.0)
        .ok_or_else(|| malformed(path, format!("bad scale {scale_tok:?}")))?;
    let little_endian = scale < 0.0;

    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| malformed(path, "dimensions overflow"))?;
    let mut raw = vec![0u8; count * 4];
    reader
        .read_exact(&mut raw)
        .map_err(|_| malformed(path, "raster shorter than header declares"))?;

    let row_len = width * channels;
    let mut data = vec![0.0f32; count];
    for (src_row, chunk) in raw.chunks_exact(row_len * 4).enumerate() {
        let dst_row = height - 1 - src_row;
        for (i, b) in chunk.chunks_exact(4).enumerate() {
            let bytes = [b[0], b[1], b[2], b[3]];
            data[dst_row * row_len + i] = if little_endian {
                f32::from_le_bytes(bytes)
            } else {
                f32::from_be_bytes(bytes)
            };
        }
    }
    Ok(Pfm {
        width,
        height,
        channels,
        data,
    })
}

/// Writes a 1- or 3-channel map as little-endian PFM.
pub fn write_pfm<const C: usize>(path: impl AsRef<Path>, map: &DenseMap<C>) -> Result<(), ImagingError> {
    let id = match C {
        1 => "Pf",
        3 => "PF",
        _ => panic!("PFM supports 1 or 3 channels, got {C}"),
    };
    let path = path.as_ref();
    let write_err = |e| ImagingError::Write {
        path: path.to_path_buf(),
        source: e,
    };
    let file = File::create(path).map_err(write_err)?;
    let mut w = BufWriter::new(file);
    write!(w, "{id}\n{} {}\n-1.0\n", map.width(), map.height()).map_err(write_err)?;
    let row_len = map.width() * C;
    for row in map.data().chunks_exact(row_len.max(1)).rev() {
        for v in row {
            w.write_all(&v.to_le_bytes()).map_err(write_err)?;
        }
    }
    w.flush().map_err(write_err)
}

/// Loads a grayscale PFM disparity map. Pixels that are non-finite or not
/// strictly positive are marked invalid.
pub fn read_disparity(path: impl AsRef<Path>) -> Result<DisparityMap, ImagingError> {
    let path = path.as_ref();
    let pfm = read_pfm(path)?;
    if pfm.channels != 1 {
        return Err(malformed(path, "disparity must be a grayscale (Pf) map"));
    }
    let map = DisparityMap::from_values(ScalarMap::from_vec(pfm.width, pfm.height, pfm.data));
    if map.valid.is_empty() {
        return Err(ImagingError::AllInvalid {
            path: path.to_path_buf(),
        });
    }
    let invalid = map.valid.as_slice().len() - map.valid.count();
    if invalid > 0 {
        log::debug!("{}: {invalid} invalid disparity pixels masked", path.display());
    }
    Ok(map)
}
