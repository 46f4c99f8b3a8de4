//! Row/column 2D FFT on row-major complex buffers.

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

/// In-place 2D DFT of a `width x height` buffer. The inverse is unscaled.
pub(crate) fn fft2(buf: &mut [Complex64], width: usize, height: usize, direction: FftDirection) {
    debug_assert_eq!(buf.len(), width * height);
    let mut planner = FftPlanner::<f64>::new();
    let row = planner.plan_fft(width, direction);
    row.process(buf);

    let col = planner.plan_fft(height, direction);
    let mut column = vec![Complex64::new(0.0, 0.0); height];
    for x in 0..width {
        for y in 0..height {
            column[y] = buf[y * width + x];
        }
        col.process(&mut column);
        for y in 0..height {
            buf[y * width + x] = column[y];
        }
    }
}

pub(crate) fn forward(buf: &mut [Complex64], width: usize, height: usize) {
    fft2(buf, width, height, FftDirection::Forward);
}

/// Normalized inverse transform.
pub(crate) fn inverse(buf: &mut [Complex64], width: usize, height: usize) {
    fft2(buf, width, height, FftDirection::Inverse);
    let scale = 1.0 / (width * height) as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
}
