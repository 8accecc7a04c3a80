//! One-dimensional single-linkage clustering of disparity values.
//!
//! In one dimension single linkage reduces to cutting the sorted value list
//! at every gap wider than the threshold. Values are first binned into a
//! histogram whose bin width never exceeds the threshold, so no gap inside a
//! bin can split a cluster; tracking each bin's minimum and maximum makes
//! the cut positions exact rather than approximate.

use super::LdiError;
use crate::imaging::DisparityMap;

pub const MAX_LAYERS: usize = 5;
const MIN_BINS: usize = 256;

/// Marker for pixels without a valid disparity.
pub const NO_LABEL: u8 = u8::MAX;

/// A cluster's extent in normalized disparity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterSpan {
    pub lo: f32,
    pub hi: f32,
}

/// Per-pixel cluster labels. Cluster 0 is the farthest (smallest disparity).
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityClusters {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
    /// Spans in normalized disparity, far to near.
    pub spans: Vec<ClusterSpan>,
}

impl DisparityClusters {
    pub fn count(&self) -> usize {
        self.spans.len()
    }

    #[inline]
    pub fn label(&self, x: usize, y: usize) -> Option<usize> {
        let l = self.labels[y * self.width + x];
        (l != NO_LABEL).then_some(l as usize)
    }
}

fn bin_count(threshold: f32) -> usize {
    MIN_BINS.max((1.0 / threshold as f64).ceil() as usize)
}

#[inline]
fn bin_of(v: f32, bins: usize) -> usize {
    ((v.clamp(0.0, 1.0) as f64 * bins as f64) as usize).min(bins - 1)
}

/// Clusters values in `[0, 1]`: consecutive values closer than or equal to
/// `threshold` merge, wider gaps split. While more than `max_clusters`
/// remain, the adjacent pair with the smallest gap is merged (lowest index
/// first on ties). Returns the spans in ascending order.
pub fn cluster_values(values: &[f32], threshold: f32, max_clusters: usize) -> Vec<ClusterSpan> {
    let (spans, _) = cluster_histogram(values.iter().copied(), threshold, max_clusters);
    spans
}

/// Returns the spans and a bin → cluster lookup.
fn cluster_histogram(
    values: impl Iterator<Item = f32>,
    threshold: f32,
    max_clusters: usize,
) -> (Vec<ClusterSpan>, Vec<usize>) {
    let bins = bin_count(threshold);
    let mut lo = vec![f32::INFINITY; bins];
    let mut hi = vec![f32::NEG_INFINITY; bins];
    for v in values {
        let b = bin_of(v, bins);
        lo[b] = lo[b].min(v);
        hi[b] = hi[b].max(v);
    }

    let mut spans: Vec<ClusterSpan> = Vec::new();
    // Occupied bins owned by each cluster, as ranges of bin indices.
    let mut owned: Vec<(usize, usize)> = Vec::new();
    for b in 0..bins {
        if lo[b] > hi[b] {
            continue;
        }
        match spans.last_mut() {
            Some(last) if lo[b] - last.hi <= threshold => {
                last.hi = hi[b];
                owned.last_mut().unwrap().1 = b;
            }
            _ => {
                spans.push(ClusterSpan { lo: lo[b], hi: hi[b] });
                owned.push((b, b));
            }
        }
    }

    let max_clusters = max_clusters.max(1);
    while spans.len() > max_clusters {
        let (i, _) = spans
            .windows(2)
            .map(|w| w[1].lo - w[0].hi)
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        spans[i].hi = spans[i + 1].hi;
        spans.remove(i + 1);
        owned[i].1 = owned[i + 1].1;
        owned.remove(i + 1);
    }

    let mut lookup = vec![usize::MAX; bins];
    for (cluster, &(first, last)) in owned.iter().enumerate() {
        for slot in &mut lookup[first..=last] {
            *slot = cluster;
        }
    }
    (spans, lookup)
}

/// Labels every valid pixel with its disparity cluster.
///
/// Disparities are min–max normalized over the valid pixels before
/// clustering; at most [`MAX_LAYERS`] clusters are produced.
pub fn cluster_disparity(disparity: &DisparityMap, threshold: f32) -> Result<DisparityClusters, LdiError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(LdiError::InvalidThreshold(threshold));
    }
    let (w, h) = disparity.dims();
    let (min, max) = disparity
        .valid_values()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if min > max {
        return Err(LdiError::AllInvalid);
    }
    let range = max - min;
    let normalize = |v: f32| if range > 0.0 { (v - min) / range } else { 0.0 };

    let bins = bin_count(threshold);
    let (spans, lookup) = cluster_histogram(disparity.valid_values().map(normalize), threshold, MAX_LAYERS);
    let labels = (0..w * h)
        .map(|i| {
            if disparity.valid.get_at(i) {
                lookup[bin_of(normalize(disparity.values.pixel_at(i)[0]), bins)] as u8
            } else {
                NO_LABEL
            }
        })
        .collect();
    Ok(DisparityClusters {
        width: w,
        height: h,
        labels,
        spans,
    })
}
