//! Thinning of binary vessel masks and junction detection.

use crate::error::{Error, Result};
use crate::imageio::BinaryMask;

/// Junction pixels closer than this (Euclidean, pixels) are fused.
pub const JUNCTION_FUSE_RADIUS: f64 = 2.0;

/// Ring offsets P2..P9: N, NE, E, SE, S, SW, W, NW.
const RING: [(isize, isize); 8] = [
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
];

fn ring(mask: &BinaryMask, x: usize, y: usize) -> [bool; 8] {
    let mut out = [false; 8];
    for (o, (dx, dy)) in out.iter_mut().zip(RING) {
        *o = mask.get_signed(x as isize + dx, y as isize + dy);
    }
    out
}

/// Number of 0 -> 1 transitions walking once around the ring.
pub fn crossing_number(mask: &BinaryMask, x: usize, y: usize) -> usize {
    let r = ring(mask, x, y);
    (0..8).filter(|&i| !r[i] && r[(i + 1) % 8]).count()
}

/// Removing the center keeps local topology: the foreground ring is one
/// 8-connected piece and exactly one 4-connected background piece touches
/// the center.
fn is_simple(p: &[bool; 8]) -> bool {
    let mut parent = [0usize, 1, 2, 3, 4, 5, 6, 7];
    fn root(parent: &mut [usize; 8], mut i: usize) -> usize {
        while parent[i] != i {
            i = parent[i];
        }
        i
    }
    let join = |parent: &mut [usize; 8], a: usize, b: usize| {
        let (ra, rb) = (root(parent, a), root(parent, b));
        parent[ra.max(rb)] = ra.min(rb);
    };
    for i in 0..8 {
        let j = (i + 1) % 8;
        if p[i] && p[j] {
            join(&mut parent, i, j);
        }
        // Edge neighbors (even slots) also touch the next edge neighbor.
        let k = (i + 2) % 8;
        if i % 2 == 0 && p[i] && p[k] {
            join(&mut parent, i, k);
        }
    }
    let mut fg = [false; 8];
    for i in (0..8).filter(|&i| p[i]) {
        fg[root(&mut parent, i)] = true;
    }
    if fg.iter().filter(|&&v| v).count() != 1 {
        return false;
    }
    // Background runs along the ring that contain an edge neighbor.
    let start = match (0..8).find(|&i| p[i]) {
        Some(i) => i,
        None => return false,
    };
    let mut runs = 0;
    let mut in_run = false;
    let mut touches = false;
    for step in 1..=8 {
        let i = (start + step) % 8;
        if !p[i] {
            in_run = true;
            touches |= i % 2 == 0;
        } else if in_run {
            runs += usize::from(touches);
            in_run = false;
            touches = false;
        }
    }
    runs == 1
}

/// Two neighbors that touch each other along the ring.
fn is_tip(mask: &BinaryMask, x: usize, y: usize) -> bool {
    let p = ring(mask, x, y);
    p.iter().filter(|&&v| v).count() == 2 && (0..8).any(|i| p[i] && p[(i + 1) % 8])
}

fn deletable(mask: &BinaryMask, x: usize, y: usize, first: bool) -> bool {
    let p = ring(mask, x, y);
    let b = p.iter().filter(|&&v| v).count();
    if !(2..=6).contains(&b) || !is_simple(&p) {
        return false;
    }
    let (n, e, s, w) = (p[0], p[2], p[4], p[6]);
    if first {
        !(n && e && s) && !(e && s && w)
    } else {
        !(n && e && w) && !(n && s && w)
    }
}

/// Zhang-Suen thinning to a one-pixel-wide 8-connected skeleton.
///
/// Candidates of each sub-iteration are found on a snapshot, as in the
/// parallel algorithm, but removed one at a time with the test repeated on
/// the current mask. The sequential re-check keeps small blobs and
/// two-pixel-thick diagonals from vanishing, so components survive.
pub fn skeletonize(mask: &BinaryMask) -> Result<BinaryMask> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut out = mask.clone();
    loop {
        let mut changed = false;
        for first in [true, false] {
            let candidates: Vec<(usize, usize)> = out
                .pixels()
                .filter(|&(x, y)| deletable(&out, x, y, first))
                .collect();
            let snapshot = out.clone();
            for (x, y) in candidates {
                // A pixel that only became a staircase tip through deletions
                // in this sweep waits for the next one; otherwise thick
                // diagonals unravel from their ends in a single pass.
                if deletable(&out, x, y, first) && !(is_tip(&out, x, y) && !is_tip(&snapshot, x, y)) {
                    out.set(x, y, false);
                    changed = true;
                }
            }
        }
        if !changed {
            return Ok(out);
        }
    }
}

/// 8-connected component labels (1-based, 0 for background) and the count.
pub fn connected_components(mask: &BinaryMask) -> (Vec<usize>, usize) {
    let (w, h) = mask.dims();
    let mut labels = vec![0; w * h];
    let mut count = 0;
    let mut stack = Vec::new();
    for (x, y) in mask.pixels() {
        if labels[y * w + x] != 0 {
            continue;
        }
        count += 1;
        labels[y * w + x] = count;
        stack.push((x, y));
        while let Some((cx, cy)) = stack.pop() {
            for (dx, dy) in RING {
                let (nx, ny) = (cx as isize + dx, cy as isize + dy);
                if mask.get_signed(nx, ny) {
                    let i = ny as usize * w + nx as usize;
                    if labels[i] == 0 {
                        labels[i] = count;
                        stack.push((nx as usize, ny as usize));
                    }
                }
            }
        }
    }
    (labels, count)
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Removes end branches of at most `max_len` pixels.
///
/// Thinning a bar with a flat or slanted end tends to leave a short fork at
/// the end, which reads as a junction. A branch is traced from its end pixel
/// (crossing number 1) up to, but not including, the first pixel with
/// crossing number 3 or more; isolated segments are never removed. All
/// branches are found on the input and removed together.
pub fn prune_spurs(skeleton: &BinaryMask, max_len: usize) -> BinaryMask {
    let mut out = skeleton.clone();
    for (x, y) in skeleton.pixels() {
        if crossing_number(skeleton, x, y) != 1 {
            continue;
        }
        if let Some(path) = trace_branch(skeleton, (x, y), max_len) {
            for (px, py) in path {
                out.set(px, py, false);
            }
        }
    }
    out
}

/// Pixels from `start` to the nearest branch point, or `None` when the walk
/// is longer than `max_len` or ends without reaching one.
fn trace_branch(skeleton: &BinaryMask, start: (usize, usize), max_len: usize) -> Option<Vec<(usize, usize)>> {
    let mut path = vec![start];
    let mut current = start;
    loop {
        // Straight neighbors first so staircase corners are not skipped.
        let next = [0, 2, 4, 6, 1, 3, 5, 7].into_iter().find_map(|k| {
            let (dx, dy) = RING[k];
            let (nx, ny) = (current.0 as isize + dx, current.1 as isize + dy);
            let p = (nx as usize, ny as usize);
            (skeleton.get_signed(nx, ny) && !path.contains(&p)).then_some(p)
        })?;
        if crossing_number(skeleton, next.0, next.1) >= 3 {
            return Some(path);
        }
        path.push(next);
        if path.len() > max_len {
            return None;
        }
        current = next;
    }
}

/// Skeleton pixels with crossing number at least 3. Pixels within
/// [`JUNCTION_FUSE_RADIUS`] of each other, transitively, are replaced by their
/// rounded centroid. Sorted by row, then column.
pub fn detect_junctions(skeleton: &BinaryMask) -> Vec<(usize, usize)> {
    let raw: Vec<(usize, usize)> = skeleton
        .pixels()
        .filter(|&(x, y)| crossing_number(skeleton, x, y) >= 3)
        .collect();
    let mut parent: Vec<usize> = (0..raw.len()).collect();
    let r2 = JUNCTION_FUSE_RADIUS * JUNCTION_FUSE_RADIUS;
    for i in 0..raw.len() {
        for j in i + 1..raw.len() {
            let dx = raw[i].0 as f64 - raw[j].0 as f64;
            let dy = raw[i].1 as f64 - raw[j].1 as f64;
            if dx * dx + dy * dy <= r2 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<(usize, usize)>> = Default::default();
    for (i, &p) in raw.iter().enumerate() {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(p);
    }
    let mut out: Vec<(usize, usize)> = groups
        .values()
        .map(|g| {
            let n = g.len() as f64;
            let cx = g.iter().map(|p| p.0 as f64).sum::<f64>() / n;
            let cy = g.iter().map(|p| p.1 as f64).sum::<f64>() / n;
            (cx.round() as usize, cy.round() as usize)
        })
        .collect();
    out.sort_by_key(|&(x, y)| (y, x));
    out.dedup();
    out
}
