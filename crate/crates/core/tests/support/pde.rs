//! Finite-difference solver for the forward Kolmogorov equation of the path
//! process, used to cross-check the Monte-Carlo kernel.
//!
//! The density is advected along the heading with semi-Lagrangian bilinear
//! steps and diffused in theta with explicit central differences, on a grid
//! several times finer than the kernel grid. Snapshots at integer times
//! `1..=h` are summed and binned onto the kernel layout.

use std::f64::consts::PI;

pub struct PdeSetup {
    pub h: usize,
    pub sigma: f64,
    /// Directed orientation bins of the target grid, over `[0, 2 pi)`.
    pub n_directed: usize,
    pub radius: usize,
    /// Diffusion coefficient in theta, as a multiple of `sigma^2`.
    pub diffusion_factor: f64,
    /// Fine cells per kernel pixel; odd so no fine center sits on a bin edge.
    pub space_sub: usize,
    /// Fine angle bins per kernel angle bin; odd for the same reason.
    pub angle_sub: usize,
    pub steps_per_unit: usize,
}

impl PdeSetup {
    pub fn new(h: usize, sigma: f64, n_directed: usize, radius: usize) -> Self {
        Self {
            h,
            sigma,
            n_directed,
            radius,
            diffusion_factor: 0.5,
            space_sub: 15,
            angle_sub: 5,
            steps_per_unit: 2,
        }
    }
}

/// Normalized density on the `(theta, dy, dx)` kernel layout.
pub fn solve(s: &PdeSetup) -> Vec<f64> {
    let half = (s.radius * s.space_sub + s.space_sub / 2) as isize;
    let n = (2 * half + 1) as usize;
    let nt = s.n_directed * s.angle_sub;
    let dtheta = 2.0 * PI / nt as f64;
    let dx = 1.0 / s.space_sub as f64;
    let dt = 1.0 / s.steps_per_unit as f64;
    let diff = s.diffusion_factor * s.sigma * s.sigma * dt / (dtheta * dtheta);
    assert!(diff < 0.5, "explicit diffusion unstable: {diff}");

    let at = |t: usize, y: usize, x: usize| (t * n + y) * n + x;
    let mut v = vec![0.0; nt * n * n];
    v[at(0, half as usize, half as usize)] = 1.0;
    let mut acc = vec![0.0; v.len()];
    let mut next = vec![0.0; v.len()];

    for step in 1..=s.h * s.steps_per_unit {
        // Transport: v(x) <- v(x - dt * e_theta).
        for t in 0..nt {
            let th = t as f64 * dtheta;
            let (sx, sy) = (dt * th.cos() / dx, dt * th.sin() / dx);
            for y in 0..n {
                for x in 0..n {
                    let fx = x as f64 - sx;
                    let fy = y as f64 - sy;
                    let (x0, y0) = (fx.floor(), fy.floor());
                    let (ax, ay) = (fx - x0, fy - y0);
                    let sample = |xi: f64, yi: f64| {
                        if xi < 0.0 || yi < 0.0 || xi >= n as f64 || yi >= n as f64 {
                            0.0
                        } else {
                            v[at(t, yi as usize, xi as usize)]
                        }
                    };
                    next[at(t, y, x)] = (1.0 - ax) * (1.0 - ay) * sample(x0, y0)
                        + ax * (1.0 - ay) * sample(x0 + 1.0, y0)
                        + (1.0 - ax) * ay * sample(x0, y0 + 1.0)
                        + ax * ay * sample(x0 + 1.0, y0 + 1.0);
                }
            }
        }
        // Diffusion in theta, periodic.
        for t in 0..nt {
            let (tm, tp) = ((t + nt - 1) % nt, (t + 1) % nt);
            for i in 0..n * n {
                let c = next[t * n * n + i];
                v[t * n * n + i] =
                    c + diff * (next[tm * n * n + i] - 2.0 * c + next[tp * n * n + i]);
            }
        }
        if step % s.steps_per_unit == 0 {
            acc.iter_mut().zip(&v).for_each(|(a, b)| *a += b);
        }
    }

    let side = 2 * s.radius + 1;
    let r = s.radius as isize;
    let mut out = vec![0.0; s.n_directed * side * side];
    let sub = s.space_sub as isize;
    let asub = s.angle_sub as isize;
    for t in 0..nt {
        let ct = ((t as isize + asub / 2) / asub) as usize % s.n_directed;
        for y in 0..n {
            let cy = (y as isize - half + sub * r + sub / 2) / sub;
            for x in 0..n {
                let cx = (x as isize - half + sub * r + sub / 2) / sub;
                out[(ct * side + cy as usize) * side + cx as usize] += acc[at(t, y, x)];
            }
        }
    }
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    out
}

/// Total-variation distance between a normalized density and raw counts.
pub fn tv_distance(density: &[f64], counts: &[u64]) -> f64 {
    let mass: u64 = counts.iter().sum();
    0.5 * density
        .iter()
        .zip(counts)
        .map(|(p, &c)| (p - c as f64 / mass as f64).abs())
        .sum::<f64>()
}
