//! Raster views of patch results: cluster overlays, label maps, orientation
//! maps and the exponentiated spectrum.

use std::path::Path;

use crate::error::Result;
use crate::imageio::{encode_png, Image2D, Rect};
use crate::kernel::KernelGrid;
use crate::pipeline::PatchResult;
use crate::spectral::{eigenvalues_csv, NOISE};

/// Packed RGB8 raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rgb {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Rgb {
    fn new(width: usize, height: usize, fill: [u8; 3]) -> Self {
        Self {
            width,
            height,
            data: fill.repeat(width * height),
        }
    }

    fn put(&mut self, x: usize, y: usize, c: [u8; 3]) {
        if x < self.width && y < self.height {
            let i = 3 * (y * self.width + x);
            self.data[i..i + 3].copy_from_slice(&c);
        }
    }

    pub fn png(&self) -> Result<Vec<u8>> {
        encode_png(self.width, self.height, &self.data, true)
    }
}

const PALETTE: [[u8; 3]; 10] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [0, 128, 128],
    [170, 110, 40],
];
const NOISE_COLOR: [u8; 3] = [128, 128, 128];

/// Color per label: clusters ranked by size (largest first, ties by label)
/// cycle through the palette; noise is gray.
pub fn cluster_colors(sizes: &[usize]) -> Vec<[u8; 3]> {
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by_key(|&c| (std::cmp::Reverse(sizes[c]), c));
    let mut colors = vec![NOISE_COLOR; sizes.len() + 1];
    for (rank, c) in order.into_iter().enumerate() {
        colors[c + 1] = PALETTE[rank % PALETTE.len()];
    }
    colors
}

fn gray_crop(img: &Image2D, rect: Rect) -> Rgb {
    let mut out = Rgb::new(rect.width, rect.height, [0; 3]);
    for y in 0..rect.height {
        for x in 0..rect.width {
            let v = (img.get(rect.x0 + x, rect.y0 + y) * 255.0).round().clamp(0.0, 255.0) as u8;
            out.put(x, y, [v; 3]);
        }
    }
    out
}

/// The patch in grayscale with each vessel pixel painted in its cluster color.
pub fn cluster_overlay(img: &Image2D, result: &PatchResult) -> Rgb {
    let rect = result.rect;
    let mut out = gray_crop(img, rect);
    let colors = cluster_colors(&result.cluster_sizes);
    for p in &result.points {
        out.put(p.x - rect.x0, p.y - rect.y0, colors[p.label as usize]);
    }
    out
}

/// Patch-sized map whose pixel values are cluster ids; 0 is background or
/// noise.
pub fn label_map(result: &PatchResult) -> Vec<u8> {
    let rect = result.rect;
    let mut out = vec![NOISE as u8; rect.width * rect.height];
    for p in &result.points {
        out[(p.y - rect.y0) * rect.width + (p.x - rect.x0)] = p.label.min(255) as u8;
    }
    out
}

fn hue(h: f64) -> [u8; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let f = h6 - h6.floor();
    let (q, t) = ((1.0 - f) * 255.0, f * 255.0);
    let [r, g, b] = match h6 as usize {
        0 => [255.0, t, 0.0],
        1 => [q, 255.0, 0.0],
        2 => [0.0, 255.0, t],
        3 => [0.0, q, 255.0],
        4 => [t, 0.0, 255.0],
        _ => [255.0, 0.0, q],
    };
    [r as u8, g as u8, b as u8]
}

/// Vessel pixels colored by dominant orientation on a black background.
pub fn orientation_map(result: &PatchResult) -> Rgb {
    let rect = result.rect;
    let n = result.params.n_theta as f64;
    let mut out = Rgb::new(rect.width, rect.height, [0; 3]);
    for p in &result.points {
        out.put(p.x - rect.x0, p.y - rect.y0, hue(p.theta_index as f64 / n));
    }
    out
}

pub const PLOT_WIDTH: usize = 320;
pub const PLOT_HEIGHT: usize = 160;
/// Bars drawn in [`spectrum_plot`].
pub const PLOT_BARS: usize = 32;

/// Bar chart of `lambda^tau` for the leading eigenvalues, with the `1 - epsilon`
/// cut drawn across. Bars above the cut are blue, the rest gray.
pub fn spectrum_plot(eigenvalues: &[f64], tau: u32, epsilon: f64) -> Rgb {
    let mut out = Rgb::new(PLOT_WIDTH, PLOT_HEIGHT, [255; 3]);
    let (margin, bar_w) = (8, (PLOT_WIDTH - 16) / PLOT_BARS);
    let plot_h = (PLOT_HEIGHT - 2 * margin) as f64;
    let row_of = |v: f64| margin + ((1.0 - v.clamp(0.0, 1.0)) * plot_h).round() as usize;
    let cut = 1.0 - epsilon;
    for (i, &l) in eigenvalues.iter().take(PLOT_BARS).enumerate() {
        let v = if l > 0.0 { l.powi(tau as i32) } else { 0.0 };
        let color = if v > cut { [0, 90, 200] } else { [150, 150, 150] };
        let x0 = margin + i * bar_w;
        for y in row_of(v)..=row_of(0.0) {
            for x in x0 + 1..x0 + bar_w {
                out.put(x, y, color);
            }
        }
    }
    let y = row_of(cut);
    for x in 0..PLOT_WIDTH {
        out.put(x, y, [220, 30, 30]);
    }
    out
}

/// Largest-bin projection of a kernel as an 8-bit PNG, each cell drawn as a
/// `scale x scale` block.
pub fn kernel_preview_png(grid: &KernelGrid, scale: usize) -> Result<Vec<u8>> {
    let proj = grid.max_projection();
    let scale = scale.max(1);
    let side = proj.width() * scale;
    let bytes = proj.to_u8();
    let mut up = vec![0u8; side * side];
    for y in 0..side {
        for x in 0..side {
            up[y * side + x] = bytes[(y / scale) * proj.width() + x / scale];
        }
    }
    encode_png(side, side, &up, false)
}

/// Writes the overlay, label map, orientation map, spectrum plot and
/// eigenvalue table of one patch into `dir`. Returns the file names.
pub fn write_patch_artifacts(dir: &Path, img: &Image2D, result: &PatchResult) -> Result<Vec<String>> {
    let id = result.spec.id;
    let rect = result.rect;
    let files = [
        (format!("patch_{id:03}_overlay.png"), cluster_overlay(img, result).png()?),
        (format!("patch_{id:03}_labels.png"), encode_png(rect.width, rect.height, &label_map(result), false)?),
        (format!("patch_{id:03}_orientation.png"), orientation_map(result).png()?),
        (
            format!("patch_{id:03}_spectrum.png"),
            spectrum_plot(&result.eigenvalues, result.params.tau, result.params.epsilon).png()?,
        ),
        (
            format!("patch_{id:03}_eigenvalues.csv"),
            eigenvalues_csv(&result.eigenvalues, result.params.tau).into_bytes(),
        ),
    ];
    let mut names = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let path = dir.join(&name);
        std::fs::write(&path, bytes).map_err(|e| crate::error::Error::Write {
            path,
            message: e.to_string(),
        })?;
        names.push(name);
    }
    Ok(names)
}
