//! Lifting of image patches to positions and orientations.
//!
//! Cake wavelets are built directly in the Fourier domain: an angular B-spline
//! wedge per orientation times a radial Gaussian-decay window. The wedges of
//! all orientations and their antipodes tile the plane, so the stack is
//! invertible on the band where the radial window is flat. The wedges are
//! sampled on a Fourier grid four times wider than the kernel so narrow
//! low-frequency wedges still get enough samples. After the inverse
//! transform each kernel is cropped and tapered by a spatial Gaussian envelope so it stays
//! compact on small patches.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fft;
use crate::imageio::{BinaryMask, Image2D};

/// Order of the polynomial factor in the radial window.
pub const RADIAL_ORDER: usize = 8;

/// Responses closer than this fraction of the largest magnitude at a pixel
/// count as ties in [`dominant_orientations`].
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Smallest kernel side that still resolves an angular wedge.
pub const MIN_KERNEL_SIZE: usize = 7;

/// Parameters of a cake wavelet stack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveletParams {
    pub n_orientations: usize,
    /// Side of the square spatial kernel, odd.
    pub size: usize,
    /// Order of the angular B-spline.
    pub spline_order: usize,
    /// Inflection point of the radial window as a fraction of Nyquist.
    pub inflection: f64,
    /// Width of the spatial Gaussian envelope relative to the kernel
    /// radius; `0` disables it.
    pub envelope: f64,
}

impl Default for WaveletParams {
    fn default() -> Self {
        Self {
            n_orientations: 24,
            size: 15,
            spline_order: 3,
            inflection: 0.3,
            envelope: 0.5,
        }
    }
}

impl WaveletParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_orientations < 4 || !self.n_orientations.is_multiple_of(2) {
            return Err(invalid(
                "n_orientations",
                format!("must be even and >= 4, got {}", self.n_orientations),
            ));
        }
        if self.size.is_multiple_of(2) {
            return Err(invalid("size", format!("must be odd, got {}", self.size)));
        }
        if self.size < MIN_KERNEL_SIZE {
            return Err(invalid(
                "size",
                format!("{} is too small for an angular wedge (min {MIN_KERNEL_SIZE})", self.size),
            ));
        }
        if self.spline_order == 0 || self.spline_order + 1 >= 2 * self.n_orientations {
            return Err(invalid(
                "spline_order",
                format!("must be in 1..{}", 2 * self.n_orientations - 1),
            ));
        }
        if !(self.envelope >= 0.0 && self.envelope.is_finite()) {
            return Err(invalid("envelope", format!("must be >= 0, got {}", self.envelope)));
        }
        if !(self.inflection > 0.0 && self.inflection <= 1.0) {
            return Err(invalid("inflection", format!("must be in (0, 1], got {}", self.inflection)));
        }
        Ok(())
    }
}

/// Centered cardinal B-spline of order `n`.
pub fn bspline(n: usize, x: f64) -> f64 {
    let half = (n + 1) as f64 / 2.0;
    if x <= -half || x >= half {
        return 0.0;
    }
    let mut acc = 0.0;
    let mut binom = 1.0;
    let mut factorial = 1.0;
    for k in 1..=n {
        factorial *= k as f64;
    }
    for j in 0..=n + 1 {
        let t = x + half - j as f64;
        if t > 0.0 {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * binom * t.powi(n as i32);
        }
        binom = binom * (n + 1 - j) as f64 / (j + 1) as f64;
    }
    acc / factorial
}

/// Radial low-pass window: Gaussian decay times a truncated exponential
/// series, flat near the origin and rolling off around `inflection`.
pub fn radial_window(rho: f64, inflection: f64) -> f64 {
    let t = 2.0 * inflection * inflection / (1.0 + 2.0 * RADIAL_ORDER as f64);
    let q = rho * rho / t;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..=RADIAL_ORDER {
        term *= q / k as f64;
        sum += term;
    }
    (-q).exp() * sum
}

fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Orientation-selective filter bank.
#[derive(Debug, Clone)]
pub struct WaveletStack {
    params: WaveletParams,
    offset: f64,
    /// Spatial kernels, `size x size`, origin at the center sample.
    kernels: Vec<Vec<Complex64>>,
    /// Fourier samples, `size x size`, DC at the center sample.
    fourier: Vec<Vec<f64>>,
}

/// Side of the oversampled Fourier grid the wedges are sampled on.
pub fn fourier_grid_size(kernel_size: usize) -> usize {
    4 * kernel_size + 1
}

/// Spatial Gaussian taper, row-major `size x size`, 1 at the center.
fn envelope_weights(size: usize, envelope: f64) -> Vec<f64> {
    let c = (size / 2) as isize;
    let width = envelope * c as f64;
    let mut out = Vec::with_capacity(size * size);
    for y in -c..=c {
        for x in -c..=c {
            out.push(if width > 0.0 {
                (-((x * x + y * y) as f64) / (2.0 * width * width)).exp()
            } else {
                1.0
            });
        }
    }
    out
}

/// Builds a pi-periodic cake wavelet stack with orientations `k * pi / N`.
pub fn build_cake_wavelets(params: WaveletParams) -> Result<WaveletStack> {
    build_cake_wavelets_with_offset(params, 0.0)
}

/// Same as [`build_cake_wavelets`] with every orientation shifted by `offset`.
pub fn build_cake_wavelets_with_offset(params: WaveletParams, offset: f64) -> Result<WaveletStack> {
    params.validate()?;
    let n = params.n_orientations;
    let size = params.size;
    let step = PI / n as f64;

    let grid = fourier_grid_size(size);
    let cg = (grid / 2) as isize;
    let c = (size / 2) as isize;
    let weights = envelope_weights(size, params.envelope);

    let (kernels, fourier): (Vec<_>, Vec<_>) = (0..n)
        .into_par_iter()
        .map(|k| {
            let theta = offset + k as f64 * step;
            // A line along `theta` puts its energy along the perpendicular.
            let center = theta + PI / 2.0;
            let mut wedge = vec![0.0; grid * grid];
            for v in -cg..=cg {
                for u in -cg..=cg {
                    let idx = ((v + cg) as usize) * grid + (u + cg) as usize;
                    if u == 0 && v == 0 {
                        wedge[idx] = 1.0 / (2 * n) as f64;
                        continue;
                    }
                    let rho = ((u * u + v * v) as f64).sqrt() / cg as f64;
                    let phi = (v as f64).atan2(u as f64);
                    let d = wrap_angle(phi - center) / step;
                    wedge[idx] = bspline(params.spline_order, d) * radial_window(rho, params.inflection);
                }
            }
            // Inverse DFT with both grids centered, then crop and taper.
            let mut buf = vec![Complex64::new(0.0, 0.0); grid * grid];
            for v in -cg..=cg {
                for u in -cg..=cg {
                    let src = ((v + cg) as usize) * grid + (u + cg) as usize;
                    let dst = v.rem_euclid(grid as isize) as usize * grid
                        + u.rem_euclid(grid as isize) as usize;
                    buf[dst] = Complex64::new(wedge[src], 0.0);
                }
            }
            fft::inverse(&mut buf, grid, grid);
            let mut kernel = vec![Complex64::new(0.0, 0.0); size * size];
            for y in -c..=c {
                for x in -c..=c {
                    let src = y.rem_euclid(grid as isize) as usize * grid
                        + x.rem_euclid(grid as isize) as usize;
                    let dst = ((y + c) as usize) * size + (x + c) as usize;
                    kernel[dst] = buf[src] * weights[dst];
                }
            }
            (kernel, wedge)
        })
        .unzip();

    // Tapering perturbs the DC gain slightly differently per orientation;
    // equalize it so flat regions respond identically in every slice.
    let mut kernels = kernels;
    let wsum: f64 = weights.iter().sum();
    let gains: Vec<Complex64> = kernels.iter().map(|k| k.iter().sum()).collect();
    let target = gains.iter().sum::<Complex64>() / n as f64;
    for (kernel, gain) in kernels.iter_mut().zip(&gains) {
        for (kv, wv) in kernel.iter_mut().zip(&weights) {
            *kv += (target - gain) * (wv / wsum);
        }
    }

    Ok(WaveletStack {
        params,
        offset,
        kernels,
        fourier,
    })
}

impl WaveletStack {
    pub fn params(&self) -> &WaveletParams {
        &self.params
    }

    pub fn n_orientations(&self) -> usize {
        self.params.n_orientations
    }

    pub fn size(&self) -> usize {
        self.params.size
    }

    /// Orientation of slice `k`, in `[0, pi)` for an unshifted stack.
    pub fn theta(&self, k: usize) -> f64 {
        self.offset + k as f64 * PI / self.params.n_orientations as f64
    }

    /// Spatial kernel `k`, row-major with the origin at `(size/2, size/2)`.
    pub fn kernel(&self, k: usize) -> &[Complex64] {
        &self.kernels[k]
    }

    /// Side of the Fourier grid returned by [`fourier`](Self::fourier).
    pub fn fourier_size(&self) -> usize {
        fourier_grid_size(self.params.size)
    }

    /// Fourier wedge `k`, row-major `fourier_size x fourier_size`, DC at the
    /// center sample.
    pub fn fourier(&self, k: usize) -> &[f64] {
        &self.fourier[k]
    }

    /// Sum over orientations of each wedge and its antipode, per frequency
    /// sample. Equals the radial window wherever the angular tiling is exact.
    pub fn coverage(&self) -> Vec<f64> {
        let size = self.fourier_size();
        let mut total = vec![0.0; size * size];
        for wedge in &self.fourier {
            for y in 0..size {
                for x in 0..size {
                    let mirrored = (size - 1 - y) * size + (size - 1 - x);
                    total[y * size + x] += wedge[y * size + x] + wedge[mirrored];
                }
            }
        }
        total
    }

    /// Largest deviation of [`coverage`](Self::coverage) from 1 over the
    /// annulus `rho_low <= rho <= rho_high` (radii relative to Nyquist).
    pub fn coverage_error(&self, rho_low: f64, rho_high: f64) -> f64 {
        let size = self.fourier_size();
        let c = (size / 2) as isize;
        let cov = self.coverage();
        let mut worst: f64 = 0.0;
        for v in -c..=c {
            for u in -c..=c {
                let rho = ((u * u + v * v) as f64).sqrt() / c as f64;
                if rho >= rho_low && rho <= rho_high {
                    let i = ((v + c) as usize) * size + (u + c) as usize;
                    worst = worst.max((cov[i] - 1.0).abs());
                }
            }
        }
        worst
    }
}

/// Complex response volume indexed `(x, y, k)`.
#[derive(Debug, Clone)]
pub struct OrientationScore {
    width: usize,
    height: usize,
    n_orientations: usize,
    /// One row-major `width x height` slice per orientation.
    slices: Vec<Vec<Complex64>>,
}

impl OrientationScore {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_orientations(&self) -> usize {
        self.n_orientations
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, k: usize) -> Complex64 {
        self.slices[k][y * self.width + x]
    }

    pub fn slice(&self, k: usize) -> &[Complex64] {
        &self.slices[k]
    }
}

/// Mirror index into `0..n` (edge sample not repeated).
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Correlates `img` with every conjugated kernel of `stack`.
///
/// The image is reflect-padded by the kernel radius, filtered in the Fourier
/// domain and cropped back, so slices are free of wrap-around.
pub fn lift(img: &Image2D, stack: &WaveletStack) -> Result<OrientationScore> {
    let size = stack.size();
    let (w, h) = img.dims();
    if w < size || h < size {
        return Err(Error::DimensionMismatch {
            expected: (size, size),
            actual: (w, h),
        });
    }
    let c = size / 2;
    let (pw, ph) = (w + 2 * c, h + 2 * c);
    let mut padded = vec![Complex64::new(0.0, 0.0); pw * ph];
    for py in 0..ph {
        let sy = reflect(py as isize - c as isize, h);
        for px in 0..pw {
            let sx = reflect(px as isize - c as isize, w);
            padded[py * pw + px] = Complex64::new(img.get(sx, sy), 0.0);
        }
    }
    fft::forward(&mut padded, pw, ph);

    let slices = (0..stack.n_orientations())
        .into_par_iter()
        .map(|k| {
            let kernel = stack.kernel(k);
            // U(x) = sum_d conj(psi(d)) f(x + d), i.e. a convolution with
            // g(e) = conj(psi(-e)).
            let mut g = vec![Complex64::new(0.0, 0.0); pw * ph];
            for dy in -(c as isize)..=c as isize {
                for dx in -(c as isize)..=c as isize {
                    let src = ((c as isize + dy) as usize) * size + (c as isize + dx) as usize;
                    let ex = (-dx).rem_euclid(pw as isize) as usize;
                    let ey = (-dy).rem_euclid(ph as isize) as usize;
                    g[ey * pw + ex] = kernel[src].conj();
                }
            }
            fft::forward(&mut g, pw, ph);
            for (gi, fi) in g.iter_mut().zip(&padded) {
                *gi *= fi;
            }
            fft::inverse(&mut g, pw, ph);
            let mut out = Vec::with_capacity(w * h);
            for y in 0..h {
                for x in 0..w {
                    out.push(g[(y + c) * pw + x + c]);
                }
            }
            out
        })
        .collect();

    Ok(OrientationScore {
        width: w,
        height: h,
        n_orientations: stack.n_orientations(),
        slices,
    })
}

/// One vessel pixel lifted to position, orientation and intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftedPoint {
    pub x: usize,
    pub y: usize,
    /// Index into the orientation grid.
    pub theta_index: usize,
    /// Orientation in radians, `theta_index * pi / N`.
    pub theta: f64,
    pub intensity: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LiftedPointSet {
    pub points: Vec<LiftedPoint>,
    pub n_orientations: usize,
}

impl LiftedPointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Picks, at every mask pixel, the orientation maximizing `Re(-U)`.
///
/// Vessels are darker than their background, hence the sign. Ties (within
/// [`TIE_TOLERANCE`]) resolve to the smallest orientation index. An empty mask yields an empty set.
pub fn dominant_orientations(
    score: &OrientationScore,
    mask: &BinaryMask,
    img: &Image2D,
) -> Result<LiftedPointSet> {
    let dims = (score.width(), score.height());
    if mask.dims() != dims {
        return Err(Error::DimensionMismatch {
            expected: dims,
            actual: mask.dims(),
        });
    }
    if img.dims() != dims {
        return Err(Error::DimensionMismatch {
            expected: dims,
            actual: img.dims(),
        });
    }
    let n = score.n_orientations();
    let points = mask
        .pixels()
        .map(|(x, y)| {
            let scale = (0..n).map(|k| score.get(x, y, k).re.abs()).fold(0.0, f64::max);
            let tol = TIE_TOLERANCE * scale;
            let mut best = 0;
            let mut best_val = -score.get(x, y, 0).re;
            for k in 1..n {
                let v = -score.get(x, y, k).re;
                if v > best_val + tol {
                    best = k;
                    best_val = v;
                }
            }
            LiftedPoint {
                x,
                y,
                theta_index: best,
                theta: best as f64 * PI / n as f64,
                intensity: img.get(x, y),
            }
        })
        .collect();
    Ok(LiftedPointSet {
        points,
        n_orientations: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack(n: usize, size: usize) -> WaveletStack {
        build_cake_wavelets(WaveletParams {
            n_orientations: n,
            size,
            ..WaveletParams::default()
        })
        .unwrap()
    }

    #[test]
    fn bspline_partition_of_unity() {
        for order in 1..6 {
            for i in 0..50 {
                let x = i as f64 / 50.0;
                let s: f64 = (-10..=10).map(|k| bspline(order, x - k as f64)).sum();
                assert!((s - 1.0).abs() < 1e-12, "order {order} x {x}: {s}");
            }
        }
    }

    #[test]
    fn fourier_coverage_is_unity_on_annulus() {
        for n in [24, 36] {
            let s = stack(n, 51);
            let inflection = s.params().inflection;
            assert!(radial_window(inflection / 2.0, inflection) > 0.999);
            let err = s.coverage_error(0.0, inflection / 2.0);
            assert!(err < 1e-3, "N={n}: coverage error {err}");
        }
    }

    #[test]
    fn rejects_invalid_params() {
        let base = WaveletParams::default();
        for bad in [
            WaveletParams { size: 5, ..base },
            WaveletParams { size: 16, ..base },
            WaveletParams { n_orientations: 7, ..base },
            WaveletParams { n_orientations: 2, ..base },
            WaveletParams { inflection: 0.0, ..base },
        ] {
            assert!(build_cake_wavelets(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn offset_by_one_step_permutes_kernels() {
        let params = WaveletParams {
            n_orientations: 12,
            size: 21,
            ..WaveletParams::default()
        };
        let base = build_cake_wavelets(params).unwrap();
        let shifted = build_cake_wavelets_with_offset(params, PI / 12.0).unwrap();
        for k in 0..12 {
            let next = (k + 1) % 12;
            for (a, b) in shifted.kernel(k).iter().zip(base.kernel(next)) {
                if next == 0 {
                    // Orientation pi: same ridge, mirrored edge component.
                    assert!((a.re - b.re).abs() < 1e-10);
                    assert!((a.im + b.im).abs() < 1e-10);
                } else {
                    assert!((a - b).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn quarter_turn_of_grid_maps_kernel_k_to_k_plus_half() {
        let n = 16;
        let size = 15;
        let s = stack(n, size);
        let c = (size / 2) as isize;
        for k in 0..n / 2 {
            let a = s.kernel(k);
            let b = s.kernel(k + n / 2);
            for y in -c..=c {
                for x in -c..=c {
                    // Rotating direction (x, y) by +90 degrees gives (-y, x).
                    let src = ((y + c) as usize) * size + (x + c) as usize;
                    let dst = ((x + c) as usize) * size + (-y + c) as usize;
                    assert!((a[src] - b[dst]).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn zero_image_lifts_to_zero_and_lift_is_linear() {
        let s = stack(8, 9);
        let zero = lift(&Image2D::filled(12, 10, 0.0), &s).unwrap();
        for k in 0..8 {
            assert!(zero.slice(k).iter().all(|v| v.norm() < 1e-14));
        }
        let a = Image2D::from_fn(12, 10, |x, y| ((x * 3 + y * 5) % 7) as f64 / 7.0);
        let b = Image2D::from_fn(12, 10, |x, y| ((x * y) % 5) as f64 / 5.0);
        let combo = Image2D::from_fn(12, 10, |x, y| 0.3 * a.get(x, y) + 0.6 * b.get(x, y));
        let (la, lb, lc) = (lift(&a, &s).unwrap(), lift(&b, &s).unwrap(), lift(&combo, &s).unwrap());
        for k in 0..8 {
            for i in 0..120 {
                let expect = la.slice(k)[i] * 0.3 + lb.slice(k)[i] * 0.6;
                let got = lc.slice(k)[i];
                assert!((expect - got).norm() <= 1e-9 * expect.norm().max(1.0));
            }
        }
    }

    #[test]
    fn lift_rejects_small_images() {
        let s = stack(8, 15);
        assert!(matches!(
            lift(&Image2D::filled(14, 30, 0.5), &s),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    fn bar_image(size: usize, angle_deg: f64) -> (Image2D, BinaryMask) {
        let a = angle_deg.to_radians();
        let (dx, dy) = (a.cos(), a.sin());
        let c = (size as f64 - 1.0) / 2.0;
        let half_length = c - 6.0;
        let on_bar = |x: usize, y: usize| {
            let (px, py) = (x as f64 - c, y as f64 - c);
            (px * dy - py * dx).abs() <= 1.5 && (px * dx + py * dy).abs() <= half_length
        };
        let img = Image2D::from_fn(size, size, |x, y| if on_bar(x, y) { 0.3 } else { 0.9 });
        (img, BinaryMask::from_fn(size, size, on_bar))
    }

    /// Direct spatial-domain correlation at one pixel.
    fn correlate_at(img: &Image2D, s: &WaveletStack, k: usize, x: usize, y: usize) -> Complex64 {
        let size = s.size();
        let c = (size / 2) as isize;
        let mut acc = Complex64::new(0.0, 0.0);
        for dy in -c..=c {
            for dx in -c..=c {
                let sx = reflect(x as isize + dx, img.width());
                let sy = reflect(y as isize + dy, img.height());
                let psi = s.kernel(k)[((dy + c) as usize) * size + (dx + c) as usize];
                acc += psi.conj() * img.get(sx, sy);
            }
        }
        acc
    }

    #[test]
    fn fft_lift_matches_spatial_correlation() {
        let s = stack(24, 15);
        let (img, _) = bar_image(31, 30.0);
        let score = lift(&img, &s).unwrap();
        for &(x, y) in &[(15, 15), (3, 27), (0, 0), (30, 12)] {
            for k in [0, 4, 11, 23] {
                let direct = correlate_at(&img, &s, k, x, y);
                assert!((direct - score.get(x, y, k)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn bar_orientation_recovered() {
        let s = stack(24, 15);
        // Misses sit within a kernel radius of the caps; a long bar keeps
        // them under 5%.
        let (img, mask) = bar_image(181, 30.0);
        let score = lift(&img, &s).unwrap();
        let target = 4; // 30 degrees on a 7.5 degree grid
        let lifted = dominant_orientations(&score, &mask, &img).unwrap();
        assert_eq!(lifted.len(), mask.count());
        let exact = lifted.points.iter().filter(|p| p.theta_index == target).count();
        let near = lifted
            .points
            .iter()
            .filter(|p| p.theta_index.abs_diff(target) <= 1)
            .count();
        let n = lifted.len() as f64;
        assert!(exact as f64 / n >= 0.95, "exact {exact}/{n}");
        assert!(near as f64 / n >= 0.95);
        assert!(lifted.points.iter().all(|p| p.theta >= 0.0 && p.theta < PI));
        assert!(lifted.points.iter().all(|p| p.intensity == 0.3));
    }

    #[test]
    fn isolated_pixel_on_constant_image_takes_index_zero() {
        let s = stack(24, 9);
        let img = Image2D::filled(11, 11, 0.42);
        let score = lift(&img, &s).unwrap();
        let mask = BinaryMask::from_fn(11, 11, |x, y| x == 5 && y == 5);
        let lifted = dominant_orientations(&score, &mask, &img).unwrap();
        assert_eq!(lifted.len(), 1);
        assert_eq!(lifted.points[0].theta_index, 0);
        assert_eq!(lifted.points[0].intensity, 0.42);
    }

    #[test]
    fn empty_mask_gives_empty_set() {
        let s = stack(8, 9);
        let img = Image2D::filled(9, 9, 0.5);
        let score = lift(&img, &s).unwrap();
        let mask = BinaryMask::from_fn(9, 9, |_, _| false);
        let lifted = dominant_orientations(&score, &mask, &img).unwrap();
        assert_eq!(lifted.len(), 0);
    }

    #[test]
    fn crossing_arms_keep_their_angles() {
        let s = stack(24, 15);
        let size = 161;
        let (a, ma) = bar_image(size, 30.0);
        let (b, mb) = bar_image(size, 120.0);
        let img = Image2D::from_fn(size, size, |x, y| a.get(x, y).min(b.get(x, y)));
        let mask = BinaryMask::from_fn(size, size, |x, y| ma.get(x, y) || mb.get(x, y));
        let score = lift(&img, &s).unwrap();
        let lifted = dominant_orientations(&score, &mask, &img).unwrap();
        let c = (size / 2) as f64;
        let (mut hits, mut total) = (0, 0);
        for p in &lifted.points {
            let r = ((p.x as f64 - c).powi(2) + (p.y as f64 - c).powi(2)).sqrt();
            if r < 8.0 {
                continue; // either arm may win near the center
            }
            let expect = if ma.get(p.x, p.y) { 4 } else { 16 };
            total += 1;
            if p.theta_index.abs_diff(expect) <= 1 {
                hits += 1;
            }
        }
        assert!(hits as f64 / total as f64 >= 0.95, "{hits}/{total}");
    }

    #[test]
    fn quarter_turn_of_image_shifts_orientation_by_half() {
        let s = stack(24, 15);
        let (img, mask) = bar_image(31, 30.0);
        let n = img.width();
        // (x, y) -> (n-1-y, x) turns directions by +90 degrees.
        let rot = Image2D::from_fn(n, n, |x, y| img.get(y, n - 1 - x));
        let rmask = BinaryMask::from_fn(n, n, |x, y| mask.get(y, n - 1 - x));
        let a = dominant_orientations(&lift(&img, &s).unwrap(), &mask, &img).unwrap();
        let b = dominant_orientations(&lift(&rot, &s).unwrap(), &rmask, &rot).unwrap();
        let lookup: std::collections::HashMap<_, _> =
            b.points.iter().map(|p| ((p.x, p.y), p.theta_index)).collect();
        for p in &a.points {
            let k = lookup[&(n - 1 - p.y, p.x)];
            assert_eq!(k, (p.theta_index + 12) % 24, "at ({}, {})", p.x, p.y);
        }
    }
}
