use serde::{Deserialize, Serialize};

use super::correspondence::CorrespondenceSet;
use super::AlignError;
use crate::imaging::{DisparityMap, ScalarMap};

/// Smallest admissible disparity scale.
const MIN_SCALE: f64 = 1e-6;

/// Affine map `s·d1 + b` taking second-photo disparities onto the first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisparityAlignment {
    pub scale: f32,
    pub shift: f32,
}

impl DisparityAlignment {
    pub const IDENTITY: Self = Self { scale: 1.0, shift: 0.0 };

    #[inline]
    pub fn apply_value(&self, d: f32) -> f32 {
        self.scale * d + self.shift
    }

    /// Applies the map to every valid pixel. Pixels whose aligned value is
    /// not strictly positive become invalid.
    pub fn apply(&self, map: &DisparityMap) -> DisparityMap {
        let (w, h) = map.dims();
        let mut values = ScalarMap::new(w, h);
        let mut valid = map.valid.clone();
        let mut dropped = 0usize;
        for i in 0..w * h {
            if !map.valid.get_at(i) {
                continue;
            }
            let v = self.apply_value(map.values.pixel_at(i)[0]);
            if v > 0.0 && v.is_finite() {
                values.set_pixel_at(i, [v]);
            } else {
                valid.set_at(i, false);
                dropped += 1;
            }
        }
        if dropped > 0 {
            log::warn!("disparity alignment invalidated {dropped} non-positive pixels");
        }
        DisparityMap { values, valid }
    }
}

/// Weighted squared residual `Σ w·(s·d1 + b − d0)²`.
fn residual(samples: &[(f64, f64, f64)], s: f64, b: f64) -> f64 {
    samples.iter().map(|&(w, d1, d0)| w * (s * d1 + b - d0).powi(2)).sum()
}

/// Weighted least-squares scale and shift taking `d1_aligned` onto `d0`.
///
/// `corrs` must already be expressed in the aligned frame (first endpoint in
/// the first photo, second endpoint in the warped second photo). When every
/// sampled `d1` is equal the fit is rank deficient and falls back to
/// `s = 1, b = mean(d0) − mean(d1)`.
pub fn fit_disparity_alignment(
    d0: &DisparityMap,
    d1_aligned: &DisparityMap,
    corrs: &CorrespondenceSet,
) -> Result<DisparityAlignment, AlignError> {
    let samples: Vec<(f64, f64, f64)> = corrs
        .iter()
        .filter(|c| c.weight > 0.0)
        .filter_map(|c| {
            let a = d0.sample(c.p0.x as f32, c.p0.y as f32)?;
            let b = d1_aligned.sample(c.p1.x as f32, c.p1.y as f32)?;
            Some((c.weight as f64, b as f64, a as f64))
        })
        .collect();
    if samples.len() < 2 {
        return Err(AlignError::InsufficientSupport {
            found: samples.len(),
            needed: 2,
        });
    }
    let wsum: f64 = samples.iter().map(|s| s.0).sum();
    let mean1 = samples.iter().map(|s| s.0 * s.1).sum::<f64>() / wsum;
    let mean0 = samples.iter().map(|s| s.0 * s.2).sum::<f64>() / wsum;
    let sxx: f64 = samples.iter().map(|s| s.0 * (s.1 - mean1).powi(2)).sum();
    let sxy: f64 = samples.iter().map(|s| s.0 * (s.1 - mean1) * (s.2 - mean0)).sum();

    let fallback = (1.0, mean0 - mean1);
    // Spread below float noise carries no scale information.
    let (scale, shift) = if sxx <= 1e-8 * wsum * mean1.abs().max(1e-12).powi(2) {
        fallback
    } else {
        let s = sxy / sxx;
        if s > MIN_SCALE {
            (s, mean0 - s * mean1)
        } else {
            // Clamping moves off the unconstrained optimum; keep whichever
            // admissible candidate fits better.
            let clamped = (MIN_SCALE, mean0 - MIN_SCALE * mean1);
            if residual(&samples, clamped.0, clamped.1) < residual(&samples, fallback.0, fallback.1) {
                clamped
            } else {
                fallback
            }
        }
    };
    Ok(DisparityAlignment {
        scale: scale as f32,
        shift: shift as f32,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point2;
    use proptest::prelude::*;

    fn maps_and_corrs(d0: &[f32], d1: &[f32]) -> (DisparityMap, DisparityMap, CorrespondenceSet) {
        let n = d0.len();
        let m0 = DisparityMap::from_values(ScalarMap::from_vec(n, 1, d0.to_vec()));
        let m1 = DisparityMap::from_values(ScalarMap::from_vec(n, 1, d1.to_vec()));
        let mut set = CorrespondenceSet::new(n, 1);
        for i in 0..n {
            let p = Point2::new(i as f64, 0.0);
            set.push(p, p, 1.0);
        }
        (m0, m1, set)
    }

    #[test]
    fn identical_maps_give_identity() {
        let d = [0.2, 0.4, 0.5, 0.9];
        let (a, b, c) = maps_and_corrs(&d, &d);
        let fit = fit_disparity_alignment(&a, &b, &c).unwrap();
        assert!((fit.scale - 1.0).abs() < 1e-6 && fit.shift.abs() < 1e-6);
    }

    #[test]
    fn exact_affine_recovered() {
        let d1 = [0.1f32, 0.25, 0.3, 0.6, 0.75];
        let d0: Vec<f32> = d1.iter().map(|v| 2.0 * v + 0.1).collect();
        let (a, b, c) = maps_and_corrs(&d0, &d1);
        let fit = fit_disparity_alignment(&a, &b, &c).unwrap();
        assert!((fit.scale - 2.0).abs() < 1e-6, "{fit:?}");
        assert!((fit.shift - 0.1).abs() < 1e-6, "{fit:?}");
    }

    #[test]
    fn constant_d1_falls_back() {
        let (a, b, c) = maps_and_corrs(&[0.3, 0.5, 0.4], &[0.3, 0.3, 0.3]);
        let fit = fit_disparity_alignment(&a, &b, &c).unwrap();
        assert_eq!(fit.scale, 1.0);
        assert!((fit.shift - 0.1).abs() < 1e-6);
    }

    #[test]
    fn needs_two_valid_samples() {
        let (a, b, c) = maps_and_corrs(&[0.3, -1.0], &[0.3, 0.2]);
        assert!(matches!(
            fit_disparity_alignment(&a, &b, &c),
            Err(AlignError::InsufficientSupport { found: 1, .. })
        ));
    }

    #[test]
    fn apply_invalidates_non_positive() {
        let m = DisparityMap::from_values(ScalarMap::from_vec(3, 1, vec![0.1, 0.5, 1.0]));
        let out = DisparityAlignment {
            scale: 1.0,
            shift: -0.2,
        }
        .apply(&m);
        assert_eq!(out.valid.as_slice(), &[false, true, true]);
        assert!((out.values.pixel(1, 0)[0] - 0.3).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn never_worse_than_identity(
            pairs in proptest::collection::vec((0.05f32..2.0, 0.05f32..2.0), 2..40),
        ) {
            let d0: Vec<f32> = pairs.iter().map(|p| p.0).collect();
            let d1: Vec<f32> = pairs.iter().map(|p| p.1).collect();
            let (a, b, c) = maps_and_corrs(&d0, &d1);
            let fit = fit_disparity_alignment(&a, &b, &c).unwrap();
            prop_assert!(fit.scale > 0.0);
            let samples: Vec<(f64, f64, f64)> = d0.iter().zip(&d1).map(|(&x, &y)| (1.0, y as f64, x as f64)).collect();
            let r_fit = residual(&samples, fit.scale as f64, fit.shift as f64);
            let r_id = residual(&samples, 1.0, 0.0);
            prop_assert!(r_fit <= r_id * (1.0 + 1e-5) + 1e-9, "{} > {}", r_fit, r_id);
        }
    }
}
