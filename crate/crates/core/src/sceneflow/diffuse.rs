use super::SceneFlowLayer;
use crate::imaging::Mask;

const NEIGHBORS: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

fn neighbors(i: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = ((i % w) as isize, (i / w) as isize);
    NEIGHBORS.into_iter().filter_map(move |(dx, dy)| {
        let (nx, ny) = (x + dx, y + dy);
        (nx >= 0 && ny >= 0 && nx < w as isize && ny < h as isize).then(|| ny as usize * w + nx as usize)
    })
}

/// Fills `target` by repeated 3×3 masked averaging.
///
/// Each sweep assigns every undefined pixel bordering a defined one the mean
/// of its defined 8-neighbors, reading only the previous sweep's state.
/// Sweeps spread over the whole grid until `target` is covered; the result
/// is defined on the initial support plus `target`. Initially defined values
/// are never modified. With nothing defined, `target` receives zero flow.
pub fn diffuse_flow(layer: &SceneFlowLayer, target: &Mask) -> SceneFlowLayer {
    let (w, h) = layer.u.dims();
    assert_eq!(target.dims(), (w, h));
    let support = layer.defined.union(target);
    let mut remaining = target.difference(&layer.defined).count();
    if remaining == 0 {
        return layer.clone();
    }
    if layer.defined.is_empty() {
        return SceneFlowLayer {
            u: layer.u.map(|_| [0.0; 3]),
            defined: support,
        };
    }

    let mut u = layer.u.clone();
    let mut defined = layer.defined.as_slice().to_vec();
    let mut queued = defined.clone();
    let mut frontier: Vec<usize> = Vec::new();
    for i in 0..w * h {
        if !defined[i] && neighbors(i, w, h).any(|n| defined[n]) {
            frontier.push(i);
            queued[i] = true;
        }
    }

    let mut updates: Vec<[f64; 3]> = Vec::new();
    while remaining > 0 && !frontier.is_empty() {
        updates.clear();
        updates.extend(frontier.iter().map(|&i| {
            let mut sum = [0.0f64; 3];
            let mut n = 0u32;
            for j in neighbors(i, w, h).filter(|&j| defined[j]) {
                let v = u.pixel_at(j);
                for c in 0..3 {
                    sum[c] += v[c];
                }
                n += 1;
            }
            sum.map(|s| s / n as f64)
        }));
        for (&i, &v) in frontier.iter().zip(&updates) {
            u.set_pixel_at(i, v);
            defined[i] = true;
            if target.get_at(i) {
                remaining -= 1;
            }
        }
        let mut next = Vec::new();
        for &i in &frontier {
            for j in neighbors(i, w, h) {
                if !queued[j] {
                    queued[j] = true;
                    next.push(j);
                }
            }
        }
        frontier = next;
    }

    // Pixels outside the support only relayed values toward the target.
    for i in 0..w * h {
        if !support.get_at(i) {
            u.set_pixel_at(i, [0.0; 3]);
        }
    }
    SceneFlowLayer { u, defined: support }
}
