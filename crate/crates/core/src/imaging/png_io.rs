use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use super::{DenseMap, ImagingError, RgbaMap};

fn unreadable(path: &Path, reason: impl ToString) -> ImagingError {
    ImagingError::Unreadable {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Loads an 8- or 16-bit PNG as RGBA in `[0, 1]`.
///
/// Grayscale is replicated into RGB and a missing alpha channel is filled
/// with 1. Palette images are expanded to 8-bit RGB(A).
pub fn read_image(path: impl AsRef<Path>) -> Result<RgbaMap, ImagingError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| unreadable(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| unreadable(path, e))?;
    let source_depth = reader.info().bit_depth;
    let is_palette = reader.info().color_type == ColorType::Indexed;
    if !is_palette && !matches!(source_depth, BitDepth::Eight | BitDepth::Sixteen) {
        return Err(ImagingError::UnsupportedBitDepth {
            path: path.to_path_buf(),
            depth: source_depth as u8,
        });
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| unreadable(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| unreadable(path, e))?;
    let (width, height) = (info.width as usize, info.height as usize);

    let channels = match info.color_type {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => return Err(unreadable(path, "palette was not expanded")),
    };
    let (bytes_per_sample, max) = match info.bit_depth {
        BitDepth::Eight => (1, 255.0f32),
        BitDepth::Sixteen => (2, 65535.0f32),
        other => {
            return Err(ImagingError::UnsupportedBitDepth {
                path: path.to_path_buf(),
                depth: other as u8,
            })
        }
    };

    let mut data = Vec::with_capacity(width * height * 4);
    let mut samples = [0.0f32; 4];
    for y in 0..height {
        let line = &buf[y * info.line_size..y * info.line_size + width * channels * bytes_per_sample];
        for x in 0..width {
            for (c, s) in samples.iter_mut().enumerate().take(channels) {
                let offset = (x * channels + c) * bytes_per_sample;
                let raw = if bytes_per_sample == 1 {
                    line[offset] as f32
                } else {
                    u16::from_be_bytes([line[offset], line[offset + 1]]) as f32
                };
                *s = raw / max;
            }
            let rgba = match channels {
                1 => [samples[0], samples[0], samples[0], 1.0],
                2 => [samples[0], samples[0], samples[0], samples[1]],
                3 => [samples[0], samples[1], samples[2], 1.0],
                _ => samples,
            };
            data.extend_from_slice(&rgba);
        }
    }
    Ok(DenseMap::from_vec(width, height, data))
}

fn write_png<const C: usize>(path: &Path, map: &DenseMap<C>, depth: BitDepth) -> Result<(), ImagingError> {
    let color = match C {
        1 => ColorType::Grayscale,
        2 => ColorType::GrayscaleAlpha,
        3 => ColorType::Rgb,
        4 => ColorType::Rgba,
        _ => panic!("PNG supports 1 to 4 channels, got {C}"),
    };
    let io_err = |e: std::io::Error| ImagingError::Write {
        path: path.to_path_buf(),
        source: e,
    };
    let png_err = |e: png::EncodingError| ImagingError::Write {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    };
    let file = File::create(path).map_err(io_err)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), map.width() as u32, map.height() as u32);
    encoder.set_color(color);
    encoder.set_depth(depth);
    let mut writer = encoder.write_header().map_err(png_err)?;
    let bytes: Vec<u8> = match depth {
        BitDepth::Sixteen => map
            .data()
            .iter()
            .flat_map(|&v| quantize(v, 65535.0).to_be_bytes())
            .collect(),
        _ => map.data().iter().map(|&v| quantize(v, 255.0) as u8).collect(),
    };
    writer.write_image_data(&bytes).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

#[inline]
pub(crate) fn quantize(v: f32, max: f32) -> u16 {
    (v.clamp(0.0, 1.0) * max).round() as u16
}

/// Writes an 8-bit PNG with 1–4 channels. Values are clamped to `[0, 1]`.
pub fn write_png8<const C: usize>(path: impl AsRef<Path>, map: &DenseMap<C>) -> Result<(), ImagingError> {
    write_png(path.as_ref(), map, BitDepth::Eight)
}

/// Writes a 16-bit PNG with 1–4 channels. Values are clamped to `[0, 1]`.
pub fn write_png16<const C: usize>(path: impl AsRef<Path>, map: &DenseMap<C>) -> Result<(), ImagingError> {
    write_png(path.as_ref(), map, BitDepth::Sixteen)
}
