//! `LDIM` version 1 scene bundles.
//!
//! Layout, all little-endian and unpadded:
//!
//! | bytes | field |
//! |---|---|
//! | 4 | magic `LDIM` |
//! | 4 | `u32` version = 1 |
//! | 36 | `f32` K, 9 values row-major |
//! | 4 | `u32` count0 |
//! | 4 | `u32` count1 |
//! | 32·(count0 + count1) | point records, first cloud then second |
//!
//! A point record is position `f32×3`, RGBA `u8×4`, scene flow `f32×3`,
//! and radius scale `f32`.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::camera::Intrinsics;
use crate::render::PointCloud;

pub const BUNDLE_MAGIC: [u8; 4] = *b"LDIM";
pub const BUNDLE_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 9 * 4 + 4 + 4;
pub const RECORD_LEN: usize = 3 * 4 + 4 + 3 * 4 + 4;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("cannot access bundle {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("not an LDIM bundle (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported LDIM version {0}")]
    UnsupportedVersion(u32),
    #[error("bundle is {got} bytes, layout requires {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("cloud of {0} points exceeds the format's u32 count")]
    TooManyPoints(usize),
}

/// Decoded bundle contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    /// Row-major intrinsics matrix.
    pub k: [f32; 9],
    pub p0: PointCloud,
    pub p1: PointCloud,
}

impl Bundle {
    pub fn intrinsics(&self) -> Intrinsics {
        let k = self.k.map(|v| v as f64);
        Intrinsics::new(k[0], k[4], k[2], k[5])
    }
}

pub fn bundle_len(count0: usize, count1: usize) -> usize {
    HEADER_LEN + RECORD_LEN * (count0 + count1)
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_bundle(k: &Intrinsics, p0: &PointCloud, p1: &PointCloud) -> Result<Vec<u8>, BundleError> {
    let count = |c: &PointCloud| u32::try_from(c.len()).map_err(|_| BundleError::TooManyPoints(c.len()));
    let (n0, n1) = (count(p0)?, count(p1)?);
    let mut out = Vec::with_capacity(bundle_len(p0.len(), p1.len()));
    out.extend_from_slice(&BUNDLE_MAGIC);
    out.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
    let m = k.matrix();
    let rows: Vec<f32> = (0..3).flat_map(|r| (0..3).map(move |c| m[(r, c)] as f32)).collect();
    put_f32s(&mut out, &rows);
    out.extend_from_slice(&n0.to_le_bytes());
    out.extend_from_slice(&n1.to_le_bytes());
    for cloud in [p0, p1] {
        for i in 0..cloud.len() {
            put_f32s(&mut out, &cloud.positions[i]);
            out.extend_from_slice(&cloud.colors[i]);
            put_f32s(&mut out, &cloud.flows[i]);
            put_f32s(&mut out, &[cloud.radius_scales[i]]);
        }
    }
    debug_assert_eq!(out.len(), bundle_len(p0.len(), p1.len()));
    Ok(out)
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn f32_at(b: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn decode_cloud(records: &[u8]) -> PointCloud {
    let n = records.len() / RECORD_LEN;
    let mut cloud = PointCloud::default();
    for r in records.chunks_exact(RECORD_LEN) {
        cloud.push(
            [f32_at(r, 0), f32_at(r, 4), f32_at(r, 8)],
            [r[12], r[13], r[14], r[15]],
            [f32_at(r, 16), f32_at(r, 20), f32_at(r, 24)],
            f32_at(r, 28),
        );
    }
    debug_assert_eq!(cloud.len(), n);
    cloud
}

pub fn decode_bundle(bytes: &[u8]) -> Result<Bundle, BundleError> {
    if bytes.len() < HEADER_LEN {
        return Err(BundleError::SizeMismatch {
            expected: HEADER_LEN,
            got: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != BUNDLE_MAGIC {
        return Err(BundleError::BadMagic(magic));
    }
    let version = u32_at(bytes, 4);
    if version != BUNDLE_VERSION {
        return Err(BundleError::UnsupportedVersion(version));
    }
    let k: [f32; 9] = std::array::from_fn(|i| f32_at(bytes, 8 + 4 * i));
    let n0 = u32_at(bytes, 44) as usize;
    let n1 = u32_at(bytes, 48) as usize;
    let expected = bundle_len(n0, n1);
    if bytes.len() != expected {
        return Err(BundleError::SizeMismatch {
            expected,
            got: bytes.len(),
        });
    }
    let split = HEADER_LEN + n0 * RECORD_LEN;
    Ok(Bundle {
        k,
        p0: decode_cloud(&bytes[HEADER_LEN..split]),
        p1: decode_cloud(&bytes[split..]),
    })
}

pub fn export_bundle(path: &Path, k: &Intrinsics, p0: &PointCloud, p1: &PointCloud) -> Result<(), BundleError> {
    let bytes = encode_bundle(k, p0, p1)?;
    std::fs::write(path, bytes).map_err(|source| BundleError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn import_bundle(path: &Path) -> Result<Bundle, BundleError> {
    let bytes = std::fs::read(path).map_err(|source| BundleError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_bundle(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_points() -> PointCloud {
        let mut c = PointCloud::default();
        c.push([0.1, -0.2, 2.0], [255, 128, 0, 255], [0.3, 0.0, 1.0], 4.0);
        c.push([-1.5, 0.25, 4.0], [1, 2, 3, 4], [0.0, -0.5, 0.0], 4.0);
        c
    }

    #[test]
    fn header_and_record_sizes() {
        assert_eq!(HEADER_LEN, 52);
        assert_eq!(RECORD_LEN, 32);
        let k = Intrinsics::new(500.0, 500.0, 383.5, 287.5);
        let bytes = encode_bundle(&k, &two_points(), &PointCloud::default()).unwrap();
        assert_eq!(bytes.len(), 52 + 2 * 32);
        assert_eq!(&bytes[0..4], b"LDIM");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(f32_at(&bytes, 8), 500.0);
        assert_eq!(f32_at(&bytes, 16), 383.5);
        assert_eq!(f32_at(&bytes, 40), 1.0);
        assert_eq!(u32_at(&bytes, 44), 2);
        assert_eq!(u32_at(&bytes, 48), 0);
        // First record: position then color bytes at offset 12.
        assert_eq!(f32_at(&bytes, 52 + 8), 2.0);
        assert_eq!(&bytes[52 + 12..52 + 16], &[255, 128, 0, 255]);
        assert_eq!(f32_at(&bytes, 52 + 28), 4.0);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let k = Intrinsics::new(512.25, 511.0, 300.0, 200.5);
        let mut p1 = two_points();
        p1.positions[0] = [f32::MIN_POSITIVE, 1e-30, 3.0e38];
        let b = decode_bundle(&encode_bundle(&k, &two_points(), &p1).unwrap()).unwrap();
        assert_eq!(b.p0, two_points());
        assert_eq!(b.p1, p1);
        assert_eq!(b.intrinsics(), k);
    }

    #[test]
    fn empty_clouds_are_valid() {
        let k = Intrinsics::new(1.0, 1.0, 0.0, 0.0);
        let bytes = encode_bundle(&k, &PointCloud::default(), &PointCloud::default()).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN);
        let b = decode_bundle(&bytes).unwrap();
        assert!(b.p0.is_empty() && b.p1.is_empty());
    }

    #[test]
    fn malformed_bundles_rejected() {
        let k = Intrinsics::new(1.0, 1.0, 0.0, 0.0);
        let good = encode_bundle(&k, &two_points(), &two_points()).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_bundle(&bad), Err(BundleError::BadMagic(_))));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(decode_bundle(&bad), Err(BundleError::UnsupportedVersion(2))));
        assert!(matches!(
            decode_bundle(&good[..good.len() - 1]),
            Err(BundleError::SizeMismatch { .. })
        ));
        assert!(matches!(
            decode_bundle(&good[..10]),
            Err(BundleError::SizeMismatch { .. })
        ));
    }
}
