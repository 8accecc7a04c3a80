//! Layered depth images built from one aligned RGB-D photo.
//!
//! Disparities are clustered into at most five depth layers. Each layer is
//! then extended behind nearer layers by context-seeded inpainting, keeping
//! only inpainted pixels that do not reach past the layer's own farthest
//! observed depth.

mod cluster;
mod inpaint;

pub use cluster::{cluster_disparity, cluster_values, ClusterSpan, DisparityClusters, MAX_LAYERS, NO_LABEL};
pub use inpaint::{default_margin, inpaint_layer, inpaint_ldi, inpaint_region};

use std::path::Path;

use thiserror::Error;

use crate::imaging::{self, DisparityMap, ImagingError, Mask, RgbaMap, ScalarMap};

#[derive(Debug, Error)]
pub enum LdiError {
    #[error("disparity map has no valid pixels")]
    AllInvalid,
    #[error("clustering threshold must lie in (0, 1), got {0}")]
    InvalidThreshold(f32),
    #[error("layer {index} out of range for an LDI with {count} layers")]
    LayerOutOfRange { index: usize, count: usize },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

/// One RGBA + disparity layer. Alpha is 1 exactly on covered pixels
/// (observed or inpainted), and disparity is valid exactly there.
#[derive(Debug, Clone, PartialEq)]
pub struct LdiLayer {
    pub color: RgbaMap,
    pub disparity: ScalarMap,
    /// Pixels observed in the source photo (as opposed to inpainted).
    pub observed: Mask,
    /// 0 is the nearest layer.
    pub index: usize,
}

impl LdiLayer {
    #[inline]
    pub fn covered_at(&self, i: usize) -> bool {
        self.color.data()[i * 4 + 3] > 0.0
    }

    pub fn coverage(&self) -> Mask {
        let (w, h) = self.color.dims();
        Mask::from_vec(w, h, (0..w * h).map(|i| self.covered_at(i)).collect())
    }

    pub fn covered_count(&self) -> usize {
        (0..self.color.len()).filter(|&i| self.covered_at(i)).count()
    }

    /// Smallest observed disparity, i.e. the inverse of the farthest
    /// observed depth.
    pub fn min_observed_disparity(&self) -> Option<f32> {
        self.observed
            .as_slice()
            .iter()
            .zip(self.disparity.data())
            .filter(|(&o, _)| o)
            .map(|(_, &d)| d)
            .reduce(f32::min)
    }

    pub fn mean_observed_disparity(&self) -> Option<f64> {
        let (sum, n) = self
            .observed
            .as_slice()
            .iter()
            .zip(self.disparity.data())
            .filter(|(&o, _)| o)
            .fold((0.0f64, 0usize), |(s, n), (_, &d)| (s + d as f64, n + 1));
        (n > 0).then(|| sum / n as f64)
    }
}

/// Layers ordered near to far.
#[derive(Debug, Clone, PartialEq)]
pub struct Ldi {
    pub width: usize,
    pub height: usize,
    pub layers: Vec<LdiLayer>,
}

impl Ldi {
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Total number of covered pixels over all layers.
    pub fn covered_count(&self) -> usize {
        self.layers.iter().map(LdiLayer::covered_count).sum()
    }

    /// Observed color and disparity at pixel `i`, searching layers from
    /// `first` outward.
    pub(crate) fn observed_from(&self, first: usize, i: usize) -> Option<([f32; 4], f32)> {
        self.layers[first..]
            .iter()
            .find(|l| l.observed.get_at(i))
            .map(|l| (l.color.pixel_at(i), l.disparity.pixel_at(i)[0]))
    }

    /// Writes `ldi_<name>_<layer>.png` (RGBA) and `.pfm` (disparity) per layer.
    pub fn write_debug(&self, dir: &Path, name: &str) -> Result<(), ImagingError> {
        for layer in &self.layers {
            let stem = dir.join(format!("ldi_{name}_{}", layer.index));
            imaging::write_png8(stem.with_extension("png"), &layer.color)?;
            imaging::write_pfm(stem.with_extension("pfm"), &layer.disparity)?;
        }
        Ok(())
    }
}

/// Splits an RGB-D image into one layer per disparity cluster, ordered near
/// to far by mean disparity.
pub fn build_layers(rgb: &RgbaMap, disparity: &DisparityMap, clusters: &DisparityClusters) -> Ldi {
    let (w, h) = rgb.dims();
    assert_eq!(disparity.dims(), (w, h));
    assert_eq!((clusters.width, clusters.height), (w, h));

    let mut sums = vec![(0.0f64, 0usize); clusters.count()];
    for i in 0..w * h {
        let l = clusters.labels[i];
        if l != NO_LABEL && disparity.valid.get_at(i) {
            sums[l as usize].0 += disparity.values.pixel_at(i)[0] as f64;
            sums[l as usize].1 += 1;
        }
    }
    let mut order: Vec<usize> = (0..clusters.count()).filter(|&c| sums[c].1 > 0).collect();
    order.sort_by(|&a, &b| {
        let ma = sums[a].0 / sums[a].1 as f64;
        let mb = sums[b].0 / sums[b].1 as f64;
        mb.total_cmp(&ma)
    });

    let layers = order
        .iter()
        .enumerate()
        .map(|(index, &cluster)| {
            let mut color = RgbaMap::new(w, h);
            let mut disp = ScalarMap::new(w, h);
            let mut observed = Mask::new(w, h);
            for i in 0..w * h {
                if clusters.labels[i] as usize == cluster && disparity.valid.get_at(i) {
                    let [r, g, b, _] = rgb.pixel_at(i);
                    color.set_pixel_at(i, [r, g, b, 1.0]);
                    disp.set_pixel_at(i, disparity.values.pixel_at(i));
                    observed.set_at(i, true);
                }
            }
            LdiLayer {
                color,
                disparity: disp,
                observed,
                index,
            }
        })
        .collect();
    Ldi {
        width: w,
        height: h,
        layers,
    }
}

/// Clusters, layers, and inpaints one photo.
pub fn build_ldi(rgb: &RgbaMap, disparity: &DisparityMap, threshold: f32, margin_px: usize) -> Result<Ldi, LdiError> {
    let clusters = cluster_disparity(disparity, threshold)?;
    let raw = build_layers(rgb, disparity, &clusters);
    Ok(inpaint_ldi(&raw, margin_px))
}
