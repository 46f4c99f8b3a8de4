//! Monte-Carlo connectivity kernel and the intensity kernel.
//!
//! Random paths start at the origin heading along +x. Each step moves one
//! `delta_s` along the current heading, then perturbs the heading by
//! `delta_s * N(0, sigma)`. Every pose reached is binned on a
//! `(dx, dy, theta)` grid; the histogram divided by the number of paths is the
//! directed fundamental solution looked up by [`gamma`](KernelGrid::gamma).

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::imageio::Image2D;
use crate::lifting::LiftedPoint;

/// Paths per RNG stream. Fixed so the histogram does not depend on the
/// number of worker threads.
const PATHS_PER_STREAM: usize = 4096;

const CACHE_MAGIC: &[u8; 8] = b"VUKGRID1";

/// Offset that breaks exact half-bin ties upward, so poses sitting on a bin
/// boundary land in the same bin regardless of rounding noise.
const TIE_NUDGE: f64 = 1e-9;

/// Parameters of the path simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Steps per path.
    #[serde(rename = "H")]
    pub h: usize,
    pub n_paths: usize,
    /// Angular diffusion in radians per square-root step.
    pub sigma: f64,
    pub delta_s: f64,
    /// Orientation bins over `[0, pi)`; the directed grid has twice as many.
    pub n_theta: usize,
    pub grid_radius: usize,
    pub seed: u64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self::new(7, 0.05)
    }
}

impl KernelParams {
    /// `n_paths = 100_000`, unit steps, 24 orientations, seed 0 and a grid
    /// just large enough to hold every path.
    pub fn new(h: usize, sigma: f64) -> Self {
        Self {
            h,
            n_paths: 100_000,
            sigma,
            delta_s: 1.0,
            n_theta: 24,
            grid_radius: min_radius(h, 1.0),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.h == 0 {
            return Err(invalid("H", "must be at least 1"));
        }
        if self.n_paths == 0 {
            return Err(invalid("n_paths", "must be at least 1"));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(invalid("sigma", format!("must be positive, got {}", self.sigma)));
        }
        if !(self.delta_s.is_finite() && self.delta_s > 0.0) {
            return Err(invalid("delta_s", format!("must be positive, got {}", self.delta_s)));
        }
        if self.n_theta < 2 || !self.n_theta.is_multiple_of(2) {
            return Err(invalid("n_theta", format!("must be even and >= 2, got {}", self.n_theta)));
        }
        if self.grid_radius == 0 {
            return Err(invalid("grid_radius", "must be at least 1"));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn cache_key(&self) -> String {
        let json = serde_json::to_vec(self).expect("params serialize");
        hex::encode(Sha256::digest(&json))
    }
}

/// Smallest grid radius that keeps every path of `h` steps on the grid.
pub fn min_radius(h: usize, delta_s: f64) -> usize {
    (h as f64 * delta_s - 1e-9).ceil().max(1.0) as usize
}

/// A pose in the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    fn flipped(self) -> Self {
        Self {
            theta: self.theta + PI,
            ..self
        }
    }
}

impl From<&LiftedPoint> for Pose {
    fn from(p: &LiftedPoint) -> Self {
        Pose::new(p.x as f64, p.y as f64, p.theta)
    }
}

/// Path histogram over `(dx, dy, theta)` with the source at the origin
/// facing along +x.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGrid {
    params: KernelParams,
    counts: Vec<u64>,
}

impl KernelGrid {
    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    /// Spatial side, `2 * grid_radius + 1`.
    pub fn side(&self) -> usize {
        2 * self.params.grid_radius + 1
    }

    /// Number of directed orientation bins covering `[0, 2 pi)`.
    pub fn n_directed(&self) -> usize {
        2 * self.params.n_theta
    }

    pub fn angle_step(&self) -> f64 {
        PI / self.params.n_theta as f64
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total_mass(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Raw count at integer offsets `dx, dy` in `[-R, R]` and directed bin `t`.
    pub fn count(&self, dx: isize, dy: isize, t: usize) -> u64 {
        let r = self.params.grid_radius as isize;
        if dx.abs() > r || dy.abs() > r || t >= self.n_directed() {
            return 0;
        }
        self.counts[self.index(dx, dy, t)]
    }

    fn index(&self, dx: isize, dy: isize, t: usize) -> usize {
        let r = self.params.grid_radius as isize;
        let side = self.side();
        (t * side + (dy + r) as usize) * side + (dx + r) as usize
    }

    /// Directed kernel value for reaching `b` from `a`: `b` is moved into
    /// the frame of `a` and read from the nearest bin. Zero off the grid.
    pub fn gamma(&self, a: Pose, b: Pose) -> f64 {
        let (s, c) = a.theta.sin_cos();
        let (ex, ey) = (b.x - a.x, b.y - a.y);
        let dx = c * ex + s * ey;
        let dy = -s * ex + c * ey;
        self.gamma_relative(dx, dy, b.theta - a.theta)
    }

    /// Kernel value at a pose already expressed in the source frame.
    ///
    /// Positions between pixel centers are interpolated bilinearly; the
    /// angle snaps to the nearest bin.
    pub fn gamma_relative(&self, dx: f64, dy: f64, dtheta: f64) -> f64 {
        let t = self.angle_bin(dtheta);
        let mut total = 0.0;
        for (ix, wx) in split(dx) {
            for (iy, wy) in split(dy) {
                total += wx * wy * self.count_at(ix, iy, t) as f64;
            }
        }
        total / self.params.n_paths as f64
    }

    fn count_at(&self, ix: i64, iy: i64, t: usize) -> u64 {
        let r = self.params.grid_radius as i64;
        if ix.abs() > r || iy.abs() > r {
            return 0;
        }
        self.counts[self.index(ix as isize, iy as isize, t)]
    }

    fn angle_bin(&self, theta: f64) -> usize {
        let n = self.n_directed() as i64;
        nearest(theta / self.angle_step()).rem_euclid(n) as usize
    }

    /// Max over orientations, rescaled so the largest bin is 1.
    pub fn max_projection(&self) -> Image2D {
        let side = self.side();
        let plane = side * side;
        let mut proj = vec![0u64; plane];
        for chunk in self.counts.chunks(plane) {
            for (p, &v) in proj.iter_mut().zip(chunk) {
                *p = (*p).max(v);
            }
        }
        let peak = proj.iter().copied().max().unwrap_or(0).max(1) as f64;
        Image2D::from_fn(side, side, |x, y| proj[y * side + x] as f64 / peak)
    }

    /// Writes the binary cache format: magic, params as length-prefixed
    /// JSON, then the counts as little-endian `u64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let json = serde_json::to_vec(&self.params).expect("params serialize");
        let mut out = Vec::with_capacity(CACHE_MAGIC.len() + 8 + json.len() + 8 * self.counts.len());
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.counts.len() as u64).to_le_bytes());
        for c in &self.counts {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Cache(m.to_string());
        let rest = bytes
            .strip_prefix(CACHE_MAGIC.as_slice())
            .ok_or_else(|| bad("missing magic"))?;
        let (len, rest) = split_le::<4>(rest).ok_or_else(|| bad("truncated header"))?;
        let len = u32::from_le_bytes(len) as usize;
        if rest.len() < len {
            return Err(bad("truncated params"));
        }
        let params: KernelParams =
            serde_json::from_slice(&rest[..len]).map_err(|e| Error::Cache(e.to_string()))?;
        params.validate()?;
        let (n, rest) = split_le::<8>(&rest[len..]).ok_or_else(|| bad("truncated length"))?;
        let n = u64::from_le_bytes(n) as usize;
        let side = 2 * params.grid_radius + 1;
        if n != side * side * 2 * params.n_theta || rest.len() != 8 * n {
            return Err(bad("histogram size does not match params"));
        }
        let counts = rest
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Self { params, counts })
    }
}

fn split_le<const N: usize>(bytes: &[u8]) -> Option<([u8; N], &[u8])> {
    let head = bytes.get(..N)?;
    Some((head.try_into().ok()?, &bytes[N..]))
}

fn nearest(v: f64) -> i64 {
    (v + TIE_NUDGE).round() as i64
}

/// Bilinear taps for `v`: the two neighboring integers and their weights.
/// Values within `TIE_NUDGE` of an integer use that integer alone.
fn split(v: f64) -> [(i64, f64); 2] {
    let n = nearest(v);
    if (v - n as f64).abs() <= TIE_NUDGE {
        return [(n, 1.0), (n, 0.0)];
    }
    let lo = v.floor();
    let w = v - lo;
    [(lo as i64, 1.0 - w), (lo as i64 + 1, w)]
}

/// Simulates `n_paths` paths. Deterministic for a given seed whatever the
/// thread count.
pub fn estimate_kernel(params: KernelParams) -> Result<KernelGrid> {
    params.validate()?;
    if (params.grid_radius as f64) < params.h as f64 * params.delta_s {
        tracing::warn!(
            grid_radius = params.grid_radius,
            reach = params.h as f64 * params.delta_s,
            "grid radius below path reach; mass will escape the grid"
        );
    }
    let empty = KernelGrid {
        params,
        counts: vec![0; (2 * params.grid_radius + 1).pow(2) * 2 * params.n_theta],
    };
    let normal = Normal::new(0.0, params.sigma).map_err(|e| invalid("sigma", e.to_string()))?;
    let streams = params.n_paths.div_ceil(PATHS_PER_STREAM);

    // Integer sums commute, so merge order does not affect the result.
    let counts = (0..streams)
        .into_par_iter()
        .fold(
            || vec![0u64; empty.counts.len()],
            |mut acc, stream| {
                let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
                rng.set_stream(stream as u64);
                let first = stream * PATHS_PER_STREAM;
                let last = (first + PATHS_PER_STREAM).min(params.n_paths);
                for _ in first..last {
                    let (mut x, mut y, mut theta) = (0.0f64, 0.0f64, 0.0f64);
                    for _ in 0..params.h {
                        x += params.delta_s * theta.cos();
                        y += params.delta_s * theta.sin();
                        theta += params.delta_s * rng.sample(normal);
                        let r = params.grid_radius as i64;
                        let (ix, iy) = (nearest(x), nearest(y));
                        if ix.abs() <= r && iy.abs() <= r {
                            let t = empty.angle_bin(theta);
                            acc[empty.index(ix as isize, iy as isize, t)] += 1;
                        }
                    }
                }
                acc
            },
        )
        .reduce(
            || vec![0u64; empty.counts.len()],
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Ok(KernelGrid { params, counts })
}

/// Path of the cache file for `params` inside `dir`.
pub fn cache_path(dir: &Path, params: &KernelParams) -> PathBuf {
    dir.join(format!("kernel-{}.bin", params.cache_key()))
}

/// Loads the kernel from `dir` if cached, otherwise estimates and stores it.
/// A corrupt cache file is replaced.
pub fn estimate_kernel_cached(params: KernelParams, dir: &Path) -> Result<KernelGrid> {
    params.validate()?;
    let path = cache_path(dir, &params);
    if let Ok(bytes) = fs::read(&path) {
        match KernelGrid::from_bytes(&bytes) {
            Ok(grid) if grid.params == params => return Ok(grid),
            Ok(_) => tracing::warn!(path = %path.display(), "cache params mismatch; rebuilding"),
            Err(e) => tracing::warn!(path = %path.display(), error = %e, "unreadable cache; rebuilding"),
        }
    }
    let grid = estimate_kernel(params)?;
    let write_err = |e: std::io::Error| Error::Write {
        path: path.clone(),
        message: e.to_string(),
    };
    fs::create_dir_all(dir).map_err(write_err)?;
    // Write then rename so concurrent readers never see a partial file.
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, grid.to_bytes()).map_err(write_err)?;
    fs::rename(&tmp, &path).map_err(write_err)?;
    Ok(grid)
}

/// Largest directed kernel value over the four ways of orienting the two
/// undirected poses.
fn folded_gamma(grid: &KernelGrid, a: Pose, b: Pose) -> f64 {
    [
        (a, b),
        (a, b.flipped()),
        (a.flipped(), b),
        (a.flipped(), b.flipped()),
    ]
    .into_iter()
    .map(|(a, b)| grid.gamma(a, b))
    .fold(0.0, f64::max)
}

/// Symmetrized, direction-folded connectivity.
pub fn omega1(grid: &KernelGrid, a: Pose, b: Pose) -> f64 {
    0.5 * (folded_gamma(grid, a, b) + folded_gamma(grid, b, a))
}

/// Bandwidth of the intensity kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityParams {
    pub sigma2: f64,
}

impl IntensityParams {
    pub fn new(sigma2: f64) -> Result<Self> {
        let p = Self { sigma2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return Err(invalid("sigma2", format!("must be positive, got {}", self.sigma2)));
        }
        Ok(())
    }
}

/// Gaussian similarity of two intensities, `exp(-(fi - fj)^2 / (2 sigma2^2))`.
pub fn omega2(fi: f64, fj: f64, p: &IntensityParams) -> f64 {
    let d = (fi - fj) / p.sigma2;
    (-0.5 * d * d).exp()
}

/// Combined affinity of two lifted points.
pub fn omega_f(grid: &KernelGrid, a: &LiftedPoint, b: &LiftedPoint, p: &IntensityParams) -> f64 {
    let w1 = omega1(grid, a.into(), b.into());
    if w1 == 0.0 {
        return 0.0;
    }
    w1 * omega2(a.intensity, b.intensity, p)
}
