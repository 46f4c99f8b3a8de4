//! Grouping of nearby junctions into square analysis patches.

use serde::{Deserialize, Serialize};

use crate::imageio::Rect;

pub const DEFAULT_INITIAL_SIZE: usize = 10;
pub const DEFAULT_MAX_SIZE: usize = 100;

/// A square patch around one or more junctions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub id: usize,
    /// Center `(x, y)` in pixels.
    pub center: [f64; 2],
    /// Side length in pixels.
    pub size: usize,
    /// Junctions `(x, y)` the patch was built from.
    pub members: Vec<[usize; 2]>,
}

impl PatchSpec {
    /// Unclipped bounds as `(x0, y0, x1, y1)`, inclusive.
    fn bounds(center: [f64; 2], size: usize) -> [i64; 4] {
        let half = (size / 2) as i64;
        let x0 = center[0].round() as i64 - half;
        let y0 = center[1].round() as i64 - half;
        [x0, y0, x0 + size as i64 - 1, y0 + size as i64 - 1]
    }

    /// Patch rectangle clipped to a `width x height` image, `None` when it
    /// lies fully outside.
    pub fn rect(&self, width: usize, height: usize) -> Option<Rect> {
        let [x0, y0, x1, y1] = Self::bounds(self.center, self.size);
        let (cx0, cy0) = (x0.max(0), y0.max(0));
        let (cx1, cy1) = (x1.min(width as i64 - 1), y1.min(height as i64 - 1));
        if cx0 > cx1 || cy0 > cy1 {
            return None;
        }
        Some(Rect {
            x0: cx0 as usize,
            y0: cy0 as usize,
            width: (cx1 - cx0 + 1) as usize,
            height: (cy1 - cy0 + 1) as usize,
        })
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        let [x0, y0, x1, y1] = Self::bounds(self.center, self.size);
        let (x, y) = (x as i64, y as i64);
        x0 <= x && x <= x1 && y0 <= y && y <= y1
    }
}

#[derive(Debug, Clone)]
struct Draft {
    center: [f64; 2],
    size: usize,
    members: Vec<[usize; 2]>,
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Smallest side at `center` whose square holds every member.
fn coverage(center: [f64; 2], members: &[[usize; 2]]) -> usize {
    let (cx, cy) = (center[0].round() as i64, center[1].round() as i64);
    let reach = members
        .iter()
        .map(|m| (m[0] as i64 - cx).abs().max((m[1] as i64 - cy).abs()))
        .max()
        .unwrap_or(0);
    // With x0 = c - size/2, an odd side 2r+1 covers c-r..=c+r.
    (2 * reach + 1) as usize
}

/// Result of merging `a` and `b`, or `None` when they are too far apart or
/// the union would not fit in `max_size`.
fn try_merge(a: &Draft, b: &Draft, max_size: usize) -> Option<Draft> {
    let d = distance(a.center, b.center);
    if d > a.size.max(b.size) as f64 / 2.0 {
        return None;
    }
    let mut members: Vec<[usize; 2]> = a.members.iter().chain(&b.members).copied().collect();
    members.sort_by_key(|m| (m[1], m[0]));
    members.dedup();
    let (xs, ys) = (members.iter().map(|m| m[0]), members.iter().map(|m| m[1]));
    let (x_lo, x_hi) = (xs.clone().min()?, xs.max()?);
    let (y_lo, y_hi) = (ys.clone().min()?, ys.max()?);
    let center = [(x_lo + x_hi) as f64 / 2.0, (y_lo + y_hi) as f64 / 2.0];
    let need = coverage(center, &members);
    if need > max_size {
        return None;
    }
    let grown = (3.0 * d).round() as usize;
    Some(Draft {
        center,
        size: grown.max(need).min(max_size),
        members,
    })
}

/// Closest pair that can merge, ties to the lowest indices.
fn closest_pair(drafts: &[Draft], max_size: usize) -> Option<(usize, usize, Draft)> {
    let mut best: Option<(f64, usize, usize, Draft)> = None;
    for i in 0..drafts.len() {
        for j in i + 1..drafts.len() {
            let d = distance(drafts[i].center, drafts[j].center);
            if best.as_ref().is_some_and(|b| d >= b.0) {
                continue;
            }
            if let Some(m) = try_merge(&drafts[i], &drafts[j], max_size) {
                best = Some((d, i, j, m));
            }
        }
    }
    best.map(|(_, i, j, m)| (i, j, m))
}

/// Agglomerates junctions into patches.
///
/// Every junction starts as an `initial_size` patch. The closest pair whose
/// centers are within half the larger side merges into a patch three times
/// their distance across, and that patch keeps absorbing its nearest
/// mergeable neighbor before any other pair is considered. A merged patch
/// is centered on its members' bounding box and never smaller than needed
/// to hold them; merges that would need more than `max_size` are refused.
/// Output ids follow row-major order of the centers.
pub fn build_patches(junctions: &[(usize, usize)], initial_size: usize, max_size: usize) -> Vec<PatchSpec> {
    let initial_size = initial_size.clamp(1, max_size.max(1));
    let mut drafts: Vec<Draft> = junctions
        .iter()
        .map(|&(x, y)| Draft {
            center: [x as f64, y as f64],
            size: initial_size,
            members: vec![[x, y]],
        })
        .collect();

    while let Some((i, j, merged)) = closest_pair(&drafts, max_size) {
        drafts.remove(j);
        drafts[i] = merged;
        let mut current = i;
        // Grow the new patch while it has a mergeable neighbor.
        loop {
            let mut best: Option<(f64, usize, Draft)> = None;
            for k in 0..drafts.len() {
                if k == current {
                    continue;
                }
                let d = distance(drafts[current].center, drafts[k].center);
                if best.as_ref().is_some_and(|b| d >= b.0) {
                    continue;
                }
                if let Some(m) = try_merge(&drafts[current], &drafts[k], max_size) {
                    best = Some((d, k, m));
                }
            }
            let Some((_, k, m)) = best else { break };
            drafts[current] = m;
            drafts.remove(k);
            if k < current {
                current -= 1;
            }
        }
    }

    drafts.sort_by(|a, b| {
        a.center[1]
            .total_cmp(&b.center[1])
            .then(a.center[0].total_cmp(&b.center[0]))
    });
    drafts
        .into_iter()
        .enumerate()
        .map(|(id, d)| PatchSpec {
            id,
            center: d.center,
            size: d.size,
            members: d.members,
        })
        .collect()
}
