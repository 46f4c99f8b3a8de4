//! Synthetic vessel images with known ground truth.
//!
//! Vessels are dark bars on a bright background. Each generator returns the
//! image, a near-binary soft segmentation and, per pixel, the index of the
//! bar that produced it.

use crate::imageio::{Image2D, SoftSegmentation};

pub const BACKGROUND: f64 = 0.9;
/// Soft segmentation value on a vessel.
pub const SEG_VESSEL: f64 = 0.9;
/// Soft segmentation value off a vessel.
pub const SEG_BACKGROUND: f64 = 0.05;

/// A straight bar: a segment with a thickness and an intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bar {
    pub from: [f64; 2],
    pub to: [f64; 2],
    pub width: f64,
    pub intensity: f64,
}

impl Bar {
    /// Bar of `length` through `center` at `angle` radians from the x-axis.
    pub fn centered(center: [f64; 2], angle: f64, length: f64, width: f64, intensity: f64) -> Self {
        let (dx, dy) = (angle.cos() * length / 2.0, angle.sin() * length / 2.0);
        Self {
            from: [center[0] - dx, center[1] - dy],
            to: [center[0] + dx, center[1] + dy],
            width,
            intensity,
        }
    }

    /// Whether the pixel center `(x, y)` lies on the bar. Ends are flat.
    pub fn covers(&self, x: f64, y: f64) -> bool {
        let (ux, uy) = (self.to[0] - self.from[0], self.to[1] - self.from[1]);
        let len = (ux * ux + uy * uy).sqrt();
        if len == 0.0 {
            return false;
        }
        let (rx, ry) = (x - self.from[0], y - self.from[1]);
        let along = (rx * ux + ry * uy) / len;
        let across = (rx * uy - ry * ux) / len;
        // A hair of slack so a 3 px axis-aligned bar is exactly 3 px.
        (-1e-9..=len + 1e-9).contains(&along) && across.abs() <= self.width / 2.0 + 1e-9
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub image: Image2D,
    pub seg: SoftSegmentation,
    pub bars: Vec<Bar>,
    /// Per pixel, row-major: indices of the bars covering it.
    pub owners: Vec<Vec<usize>>,
}

impl Fixture {
    /// Draws `bars` on a `width x height` canvas. Where bars overlap the
    /// darker one wins.
    pub fn draw(width: usize, height: usize, bars: Vec<Bar>) -> Self {
        let mut owners = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let hit: Vec<usize> = (0..bars.len())
                    .filter(|&b| bars[b].covers(x as f64, y as f64))
                    .collect();
                owners.push(hit);
            }
        }
        let image = Image2D::from_fn(width, height, |x, y| {
            owners[y * width + x]
                .iter()
                .map(|&b| bars[b].intensity)
                .fold(BACKGROUND, f64::min)
        });
        let seg = Image2D::from_fn(width, height, |x, y| {
            if owners[y * width + x].is_empty() {
                SEG_BACKGROUND
            } else {
                SEG_VESSEL
            }
        });
        Self {
            image,
            seg: SoftSegmentation(seg),
            bars,
            owners,
        }
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn owners_at(&self, x: usize, y: usize) -> &[usize] {
        &self.owners[y * self.width() + x]
    }
}

/// Two 3 px bars crossing at the center of a `size` square, `separation`
/// radians apart and symmetric about the x-axis.
pub fn crossing(size: usize, separation: f64, intensities: [f64; 2]) -> Fixture {
    let c = (size / 2) as f64;
    let length = size as f64 * 1.5;
    let bars = vec![
        Bar::centered([c, c], -separation / 2.0, length, 3.0, intensities[0]),
        Bar::centered([c, c], separation / 2.0, length, 3.0, intensities[1]),
    ];
    Fixture::draw(size, size, bars)
}

/// The standard X: 40 degrees apart, intensities 0.3 and 0.6.
pub fn x_fixture(size: usize) -> Fixture {
    crossing(size, 40f64.to_radians(), [0.3, 0.6])
}

/// A horizontal 3 px bar across a `size` square with a `gap` px break at the
/// center. Both halves share the same intensity.
pub fn broken_bar(size: usize, gap: usize, intensity: f64) -> Fixture {
    let c = (size / 2) as f64;
    let half_gap = gap as f64 / 2.0;
    // Pixels at c - half_gap .. c + half_gap (exclusive) are left empty.
    let left_end = (c - half_gap).ceil() - 1.0;
    let right_start = left_end + gap as f64 + 1.0;
    let bars = vec![
        Bar { from: [-2.0, c], to: [left_end, c], width: 3.0, intensity },
        Bar { from: [right_start, c], to: [size as f64 + 1.0, c], width: 3.0, intensity },
    ];
    Fixture::draw(size, size, bars)
}

/// Two horizontal 3 px bars `spacing` px apart (center to center).
pub fn parallel_bars(size: usize, spacing: usize, intensities: [f64; 2]) -> Fixture {
    let c = (size / 2) as f64;
    let off = spacing as f64 / 2.0;
    let (y0, y1) = ((c - off).round(), (c - off).round() + spacing as f64);
    let bars = vec![
        Bar { from: [-2.0, y0], to: [size as f64 + 1.0, y0], width: 3.0, intensity: intensities[0] },
        Bar { from: [-2.0, y1], to: [size as f64 + 1.0, y1], width: 3.0, intensity: intensities[1] },
    ];
    Fixture::draw(size, size, bars)
}

/// A right-angle crossing and, 60 px to its right, a straight vessel with
/// one side branch. Each has a single junction, so the pipeline builds two
/// patches, and each patch holds two vessels.
pub fn crossing_and_branch() -> Fixture {
    let s = std::f64::consts::FRAC_PI_4;
    let b = std::f64::consts::FRAC_PI_3;
    let bars = vec![
        Bar::centered([30.0, 30.0], -s, 40.0, 3.0, 0.3),
        Bar::centered([30.0, 30.0], s, 40.0, 3.0, 0.6),
        Bar { from: [70.0, 30.0], to: [112.0, 30.0], width: 3.0, intensity: 0.4 },
        Bar { from: [90.0, 30.0], to: [90.0 + 22.0 * b.cos(), 30.0 + 22.0 * b.sin()], width: 3.0, intensity: 0.4 },
    ];
    Fixture::draw(120, 60, bars)
}
