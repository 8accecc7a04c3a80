//! On-disk formats read back what was written.

use moments_core::camera::Intrinsics;
use moments_core::imaging::{
    read_disparity, read_flow, read_image, read_pfm, write_flow, write_pfm, write_png16, write_png8, FlowField, RgbMap,
    RgbaMap, ScalarMap,
};
use moments_core::pipeline::{bundle_len, export_bundle, import_bundle};
use moments_core::render::PointCloud;
use proptest::prelude::*;

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..12, 1usize..12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pfm_is_bit_exact((w, h) in dims(), seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let values: Vec<f32> = (0..w * h).map(|i| f32::from_bits((seed as u32).wrapping_add(i as u32 * 7919) % 0x7f00_0000)).collect();
        let map = ScalarMap::from_vec(w, h, values);
        let path = dir.path().join("d.pfm");
        write_pfm(&path, &map).unwrap();
        let pfm = read_pfm(&path).unwrap();
        prop_assert_eq!((pfm.width, pfm.height, pfm.channels), (w, h, 1));
        prop_assert_eq!(pfm.data, map.data().to_vec());
    }

    #[test]
    fn flo_is_bit_exact((w, h) in dims(), values in prop::collection::vec(-500.0f32..500.0, 288)) {
        let dir = tempfile::tempdir().unwrap();
        let flow = FlowField::from_vec(w, h, values[..w * h * 2].to_vec());
        let path = dir.path().join("f.flo");
        write_flow(&path, &flow).unwrap();
        prop_assert_eq!(read_flow(&path).unwrap(), flow);
    }

    #[test]
    fn png8_keeps_quantized_colors((w, h) in dims(), bytes in prop::collection::vec(any::<u8>(), 576)) {
        let dir = tempfile::tempdir().unwrap();
        let rgba = RgbaMap::from_vec(w, h, bytes[..w * h * 4].iter().map(|&b| b as f32 / 255.0).collect());
        let path = dir.path().join("c.png");
        write_png8(&path, &rgba).unwrap();
        prop_assert_eq!(read_image(&path).unwrap(), rgba);
    }
}

#[test]
fn png16_rgb_reads_back_opaque() {
    let dir = tempfile::tempdir().unwrap();
    let rgb = RgbMap::from_fn(5, 3, |x, y| [x as f32 / 4.0, y as f32 / 2.0, 0.3]);
    let path = dir.path().join("c16.png");
    write_png16(&path, &rgb).unwrap();
    let back = read_image(&path).unwrap();
    for (i, p) in back.pixels().enumerate() {
        let want = rgb.pixel_at(i);
        for c in 0..3 {
            assert!((p[c] - want[c]).abs() <= 0.5 / 65535.0 + 1e-7);
        }
        assert_eq!(p[3], 1.0);
    }
}

#[test]
fn disparity_marks_non_positive_values_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.pfm");
    write_pfm(&path, &ScalarMap::from_vec(3, 1, vec![0.5, 0.0, -1.0])).unwrap();
    let d = read_disparity(&path).unwrap();
    assert_eq!(d.get(0, 0), Some(0.5));
    assert_eq!(d.get(1, 0), None);
    assert_eq!(d.get(2, 0), None);
}

#[test]
fn bundle_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let k = Intrinsics::from_fov(64, 48, 55.0);
    let mut p0 = PointCloud::default();
    for i in 0..10 {
        p0.push(
            [i as f32 * 0.1, -0.5, 2.0 + i as f32],
            [i as u8, 200, 3, 255],
            [0.01, 0.0, -0.2],
            3.5,
        );
    }
    let p1 = PointCloud::default();
    let path = dir.path().join("scene.ldim");
    export_bundle(&path, &k, &p0, &p1).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, bundle_len(10, 0));
    let b = import_bundle(&path).unwrap();
    assert_eq!(b.p0, p0);
    assert!(b.p1.is_empty());
    let m = k.matrix();
    assert_eq!(b.k[0], m[(0, 0)] as f32);
    assert_eq!(b.k[2], m[(0, 2)] as f32);
}
