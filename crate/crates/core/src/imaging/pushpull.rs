//! Importance-weighted push-pull (pyramid) hole filling.
//!
//! Seeds are pixels with positive importance. The pull phase builds a
//! pyramid of importance-weighted means over 2×2 blocks; the push phase walks
//! back down, replacing each uncovered pixel with an importance-weighted
//! bilinear interpolation of the coarser level. Seeds keep their values
//! exactly, and every filled value is a convex combination of seed values.

use super::DenseMap;

struct Level<const C: usize> {
    width: usize,
    height: usize,
    mean: Vec<[f32; C]>,
    importance: Vec<f32>,
    coverage: Vec<f32>,
}

impl<const C: usize> Level<C> {
    fn pull(&self) -> Level<C> {
        let width = self.width.div_ceil(2);
        let height = self.height.div_ceil(2);
        let mut mean = vec![[0.0f32; C]; width * height];
        let mut importance = vec![0.0f32; width * height];
        let mut coverage = vec![0.0f32; width * height];
        for y in 0..height {
            for x in 0..width {
                let mut acc = [0.0f32; C];
                let mut s = 0.0f32;
                let mut c = 0.0f32;
                let mut children = 0.0f32;
                for cy in 2 * y..(2 * y + 2).min(self.height) {
                    for cx in 2 * x..(2 * x + 2).min(self.width) {
                        let i = cy * self.width + cx;
                        children += 1.0;
                        let si = self.importance[i];
                        if self.coverage[i] > 0.0 && si > 0.0 {
                            for (a, v) in acc.iter_mut().zip(self.mean[i]) {
                                *a += si * v;
                            }
                            s += si;
                            c += self.coverage[i];
                        }
                    }
                }
                let o = y * width + x;
                if s > 0.0 {
                    for a in &mut acc {
                        *a /= s;
                    }
                    mean[o] = acc;
                    importance[o] = s / children;
                    coverage[o] = c.min(1.0);
                }
            }
        }
        Level {
            width,
            height,
            mean,
            importance,
            coverage,
        }
    }
}

/// Taps and bilinear weights for fine pixel `x` on a coarse axis of `size`.
#[inline]
fn coarse_taps(x: usize, size: usize) -> (usize, usize, f32) {
    let v = (x as f32 * 0.5 - 0.25).clamp(0.0, (size - 1) as f32);
    let i0 = v.floor() as usize;
    let i1 = (i0 + 1).min(size - 1);
    (i0, i1, v - i0 as f32)
}

/// Fills every pixel whose `importance` is not positive.
///
/// Returns `None` when there is no seed at all.
pub fn push_pull<const C: usize>(values: &DenseMap<C>, importance: &[f32]) -> Option<DenseMap<C>> {
    let (width, height) = values.dims();
    assert_eq!(importance.len(), width * height);
    if width == 0 || height == 0 {
        return None;
    }
    let base_importance: Vec<f32> = importance
        .iter()
        .map(|&s| if s.is_finite() && s > 0.0 { s } else { 0.0 })
        .collect();
    if !base_importance.iter().any(|&s| s > 0.0) {
        return None;
    }
    let base = Level {
        width,
        height,
        mean: values.pixels().collect(),
        coverage: base_importance
            .iter()
            .map(|&s| if s > 0.0 { 1.0 } else { 0.0 })
            .collect(),
        importance: base_importance,
    };

    let mut pyramid = vec![base];
    while {
        let top = pyramid.last().unwrap();
        top.width > 1 || top.height > 1
    } {
        let next = pyramid.last().unwrap().pull();
        pyramid.push(next);
    }

    // Push: the top level is a single pixel holding the mean of all seeds.
    let mut filled: Vec<[f32; C]> = pyramid.last().unwrap().mean.clone();
    let mut filled_importance: Vec<f32> = pyramid.last().unwrap().importance.clone();
    for k in (0..pyramid.len() - 1).rev() {
        let fine = &pyramid[k];
        let coarse = &pyramid[k + 1];
        let mut next = vec![[0.0f32; C]; fine.width * fine.height];
        let mut next_importance = vec![0.0f32; fine.width * fine.height];
        for y in 0..fine.height {
            let (y0, y1, fy) = coarse_taps(y, coarse.height);
            for x in 0..fine.width {
                let i = y * fine.width + x;
                let c = fine.coverage[i];
                if c >= 1.0 {
                    next[i] = fine.mean[i];
                    next_importance[i] = fine.importance[i];
                    continue;
                }
                let (x0, x1, fx) = coarse_taps(x, coarse.width);
                let taps = [
                    (y0 * coarse.width + x0, (1.0 - fx) * (1.0 - fy)),
                    (y0 * coarse.width + x1, fx * (1.0 - fy)),
                    (y1 * coarse.width + x0, (1.0 - fx) * fy),
                    (y1 * coarse.width + x1, fx * fy),
                ];
                let mut up = [0.0f32; C];
                let mut up_s = 0.0f32;
                for (j, b) in taps {
                    let w = b * filled_importance[j];
                    if w > 0.0 {
                        for (u, v) in up.iter_mut().zip(filled[j]) {
                            *u += w * v;
                        }
                        up_s += w;
                    }
                }
                for u in &mut up {
                    *u /= up_s;
                }
                if c <= 0.0 {
                    next[i] = up;
                    next_importance[i] = up_s;
                } else {
                    let mut blended = [0.0f32; C];
                    for ch in 0..C {
                        blended[ch] = c * fine.mean[i][ch] + (1.0 - c) * up[ch];
                    }
                    next[i] = blended;
                    next_importance[i] = c * fine.importance[i] + (1.0 - c) * up_s;
                }
            }
        }
        filled = next;
        filled_importance = next_importance;
    }

    let mut data = Vec::with_capacity(width * height * C);
    for p in filled {
        data.extend_from_slice(&p);
    }
    Some(DenseMap::from_vec(width, height, data))
}
