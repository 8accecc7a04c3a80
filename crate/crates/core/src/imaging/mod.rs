//! Dense raster containers, sampling, and file formats.
//!
//! Every raster in the engine (photos, disparity, optical flow, per-layer
//! scene flow) is a [`DenseMap`]: a row-major `width × height` grid with a
//! fixed number of channels per pixel. Binary masks get their own
//! [`Mask`] type.
//!
//! Pixel coordinates follow the convention that integer coordinates
//! `(x, y)` address pixel centers, so `(0, 0)` is the center of the top-left
//! pixel and `(width - 1, height - 1)` the center of the bottom-right one.

mod flo;
mod pfm;
mod png_io;
pub mod pushpull;

pub use flo::{read_flow, write_flow};
pub use pfm::{read_disparity, read_pfm, write_pfm, Pfm};
pub use png_io::{read_image, write_png16, write_png8};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("unreadable file {path}: {reason}")]
    Unreadable { path: PathBuf, reason: String },
    #[error("unsupported bit depth {depth} in {path}")]
    UnsupportedBitDepth { path: PathBuf, depth: u8 },
    #[error("malformed PFM header in {path}: {reason}")]
    MalformedPfm { path: PathBuf, reason: String },
    #[error("bad .flo magic number {magic} in {path}")]
    BadFlowMagic { path: PathBuf, magic: f32 },
    #[error("disparity map {path} has no valid pixels")]
    AllInvalid { path: PathBuf },
    #[error("dimension mismatch: {what} is {got:?}, expected {expected:?}")]
    DimensionMismatch {
        what: String,
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("write failed for {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A `width × height` raster with `C` values of type `T` per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMap<const C: usize, T = f32> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

pub type RgbaMap = DenseMap<4>;
pub type RgbMap = DenseMap<3>;
pub type ScalarMap = DenseMap<1>;
pub type FlowField = DenseMap<2>;

impl<const C: usize, T: Copy + Default> DenseMap<C, T> {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [T::default(); C])
    }

    pub fn filled(width: usize, height: usize, value: [T; C]) -> Self {
        let mut data = Vec::with_capacity(width * height * C);
        for _ in 0..width * height {
            data.extend_from_slice(&value);
        }
        Self { width, height, data }
    }

    /// Wraps a row-major buffer. Panics if the length does not match.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(
            data.len(),
            width * height * C,
            "buffer length does not match {width}x{height}x{C}"
        );
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [T; C]) -> Self {
        let mut data = Vec::with_capacity(width * height * C);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [T; C] {
        self.pixel_at(y * self.width + x)
    }

    #[inline]
    pub fn pixel_at(&self, index: usize) -> [T; C] {
        let mut out = [T::default(); C];
        out.copy_from_slice(&self.data[index * C..index * C + C]);
        out
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, value: [T; C]) {
        let index = y * self.width + x;
        self.set_pixel_at(index, value);
    }

    #[inline]
    pub fn set_pixel_at(&mut self, index: usize, value: [T; C]) {
        self.data[index * C..index * C + C].copy_from_slice(&value);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [T; C]> + '_ {
        self.data.chunks_exact(C).map(|c| {
            let mut out = [T::default(); C];
            out.copy_from_slice(c);
            out
        })
    }

    pub fn map<const D: usize, U: Copy + Default>(&self, mut f: impl FnMut([T; C]) -> [U; D]) -> DenseMap<D, U> {
        let mut data = Vec::with_capacity(self.len() * D);
        for p in self.pixels() {
            data.extend_from_slice(&f(p));
        }
        DenseMap {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn check_dims(&self, what: &str, expected: (usize, usize)) -> Result<(), ImagingError> {
        if self.dims() != expected {
            return Err(ImagingError::DimensionMismatch {
                what: what.to_string(),
                got: self.dims(),
                expected,
            });
        }
        Ok(())
    }
}

impl<const C: usize> DenseMap<C, f32> {
    /// Bilinear interpolation with clamp-to-edge border handling.
    pub fn bilinear(&self, x: f32, y: f32) -> [f32; C] {
        let (x0, x1, fx) = lattice_split(x, self.width);
        let (y0, y1, fy) = lattice_split(y, self.height);
        let p00 = self.pixel(x0, y0);
        let p10 = self.pixel(x1, y0);
        let p01 = self.pixel(x0, y1);
        let p11 = self.pixel(x1, y1);
        let mut out = [0.0; C];
        for c in 0..C {
            let top = p00[c] + (p10[c] - p00[c]) * fx;
            let bottom = p01[c] + (p11[c] - p01[c]) * fx;
            out[c] = top + (bottom - top) * fy;
        }
        out
    }

    /// Bilinear interpolation that only mixes neighbors with `valid` set.
    ///
    /// Returns `None` when none of the four neighbors carrying nonzero
    /// weight is valid.
    pub fn bilinear_masked(&self, valid: &Mask, x: f32, y: f32) -> Option<[f32; C]> {
        let (x0, x1, fx) = lattice_split(x, self.width);
        let (y0, y1, fy) = lattice_split(y, self.height);
        let taps = [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x1, y0, fx * (1.0 - fy)),
            (x0, y1, (1.0 - fx) * fy),
            (x1, y1, fx * fy),
        ];
        let mut out = [0.0f32; C];
        let mut total = 0.0f32;
        for (tx, ty, w) in taps {
            if w > 0.0 && valid.get(tx, ty) {
                let p = self.pixel(tx, ty);
                for c in 0..C {
                    out[c] += w * p[c];
                }
                total += w;
            }
        }
        if total <= 0.0 {
            return None;
        }
        if total < 1.0 {
            for v in &mut out {
                *v /= total;
            }
        }
        Some(out)
    }

    /// Replaces non-finite samples with zero and returns how many were hit.
    pub fn sanitize(&mut self) -> usize {
        let mut hits = 0;
        for v in &mut self.data {
            if !v.is_finite() {
                *v = 0.0;
                hits += 1;
            }
        }
        hits
    }
}

/// Splits a continuous coordinate into its two clamped lattice neighbors and
/// the interpolation fraction.
#[inline]
fn lattice_split(v: f32, size: usize) -> (usize, usize, f32) {
    let max = (size - 1) as f32;
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, max) };
    let i0 = v.floor() as usize;
    let i1 = (i0 + 1).min(size - 1);
    (i0, i1, v - i0 as f32)
}

/// Binary per-pixel mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, false)
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            bits: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height);
        Self { width, height, bits }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn get_at(&self, index: usize) -> bool {
        self.bits[index]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    #[inline]
    pub fn set_at(&mut self, index: usize, value: bool) {
        self.bits[index] = value;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn union(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a && !b)
    }

    fn zip_with(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Mask {
        assert_eq!(self.dims(), other.dims());
        Mask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Chessboard-distance dilation: a pixel is set when some set pixel lies
    /// within `radius` in both x and y.
    pub fn dilate(&self, radius: usize) -> Mask {
        if radius == 0 {
            return self.clone();
        }
        let (w, h) = self.dims();
        // Separable: horizontal pass, then vertical, each via running counts.
        let mut horizontal = vec![false; w * h];
        for y in 0..h {
            let row = &self.bits[y * w..(y + 1) * w];
            window_any(row, radius, &mut horizontal[y * w..(y + 1) * w]);
        }
        let mut column = vec![false; h];
        let mut column_out = vec![false; h];
        let mut bits = vec![false; w * h];
        for x in 0..w {
            for y in 0..h {
                column[y] = horizontal[y * w + x];
            }
            window_any(&column, radius, &mut column_out);
            for y in 0..h {
                bits[y * w + x] = column_out[y];
            }
        }
        Mask {
            width: w,
            height: h,
            bits,
        }
    }

    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % w, i / w))
    }
}

fn window_any(input: &[bool], radius: usize, out: &mut [bool]) {
    let n = input.len();
    let mut prefix = vec![0u32; n + 1];
    for (i, &b) in input.iter().enumerate() {
        prefix[i + 1] = prefix[i] + b as u32;
    }
    for (i, o) in out.iter_mut().enumerate() {
        let lo = i.saturating_sub(radius);
        let hi = (i + radius + 1).min(n);
        *o = prefix[hi] > prefix[lo];
    }
}

/// Inverse-depth map with its validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    pub values: ScalarMap,
    pub valid: Mask,
}

impl DisparityMap {
    /// Builds a map whose valid pixels are exactly those with a finite,
    /// strictly positive value. Invalid pixels are stored as zero.
    pub fn from_values(mut values: ScalarMap) -> Self {
        let (w, h) = values.dims();
        let mut valid = Mask::new(w, h);
        for (i, v) in values.data_mut().iter_mut().enumerate() {
            if v.is_finite() && *v > 0.0 {
                valid.set_at(i, true);
            } else {
                *v = 0.0;
            }
        }
        Self { values, valid }
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f32> {
        self.valid.get(x, y).then(|| self.values.pixel(x, y)[0])
    }

    /// Disparity-validity-aware bilinear sample.
    pub fn sample(&self, x: f32, y: f32) -> Option<f32> {
        self.values
            .bilinear_masked(&self.valid, x, y)
            .map(|[v]| v)
            .filter(|v| *v > 0.0)
    }

    pub fn valid_values(&self) -> impl Iterator<Item = f32> + '_ {
        self.values
            .data()
            .iter()
            .zip(self.valid.as_slice())
            .filter(|(_, &ok)| ok)
            .map(|(&v, _)| v)
    }
}

/// Peak signal-to-noise ratio in dB between the first `channels` channels of
/// two maps in `[0, 1]`, restricted to pixels where `mask` is set.
///
/// Returns `f64::INFINITY` for identical inputs and `NaN` for an empty mask.
pub fn psnr<const A: usize, const B: usize>(
    a: &DenseMap<A>,
    b: &DenseMap<B>,
    channels: usize,
    mask: Option<&Mask>,
) -> f64 {
    assert_eq!(a.dims(), b.dims());
    assert!(channels <= A && channels <= B);
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for i in 0..a.len() {
        if mask.is_some_and(|m| !m.get_at(i)) {
            continue;
        }
        let pa = a.pixel_at(i);
        let pb = b.pixel_at(i);
        for c in 0..channels {
            let d = (pa[c] - pb[c]) as f64;
            sum += d * d;
        }
        count += channels;
    }
    if count == 0 {
        return f64::NAN;
    }
    let mse = sum / count as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}
