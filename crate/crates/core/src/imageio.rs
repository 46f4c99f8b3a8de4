//! Raster I/O, intensity normalization and Otsu thresholding.
//!
//! All rasters are row-major with intensities in `[0, 1]`. Soft segmentations
//! share the [`Image2D`] representation and are wrapped in
//! [`SoftSegmentation`] so they cannot be confused with the enhanced image.

use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Floor applied to the local standard deviation in [`normalize_luminosity`].
pub const EPS_STD: f64 = 1e-6;

/// Number of histogram bins used by [`otsu_threshold`].
pub const OTSU_BINS: usize = 256;

/// Axis-aligned pixel rectangle, `x0..x0+width` by `y0..y0+height`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && y >= self.y0 && x < self.x0 + self.width && y < self.y0 + self.height
    }
}

/// Grayscale raster with finite intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image2D {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage { width, height });
        }
        if data.len() != width * height {
            return Err(invalid(
                "data",
                format!("expected {} values, got {}", width * height, data.len()),
            ));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(invalid("data", format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image by evaluating `f(x, y)` and clamping into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image must be non-empty");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                data.push(if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 });
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn crop(&self, rect: Rect) -> Result<Image2D> {
        if rect.width == 0
            || rect.height == 0
            || rect.x0 + rect.width > self.width
            || rect.y0 + rect.height > self.height
        {
            return Err(invalid("rect", format!("{rect:?} outside {}x{}", self.width, self.height)));
        }
        Ok(Image2D::from_fn(rect.width, rect.height, |x, y| {
            self.get(rect.x0 + x, rect.y0 + y)
        }))
    }

    /// Quantizes to 8 bits, row-major.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v * 255.0).round() as u8).collect()
    }
}

/// Per-pixel vessel likelihood, paired with an enhanced [`Image2D`].
#[derive(Debug, Clone, PartialEq)]
pub struct SoftSegmentation(pub Image2D);

impl SoftSegmentation {
    /// Wraps `seg`, checking it matches the dimensions of `paired`.
    pub fn paired_with(seg: Image2D, paired: &Image2D) -> Result<Self> {
        if seg.dims() != paired.dims() {
            return Err(Error::DimensionMismatch {
                expected: paired.dims(),
                actual: seg.dims(),
            });
        }
        Ok(Self(seg))
    }

    pub fn image(&self) -> &Image2D {
        &self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }
}

/// Boolean raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage { width, height });
        }
        if data.len() != width * height {
            return Err(invalid(
                "data",
                format!("expected {} values, got {}", width * height, data.len()),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        assert!(width > 0 && height > 0, "mask must be non-empty");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Out-of-bounds coordinates read as `false`.
    #[inline]
    pub fn get_signed(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.data[y as usize * self.width + x as usize]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|b| *b)
    }

    /// Coordinates of set pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| (i % self.width, i / self.width))
    }

    pub fn crop(&self, rect: Rect) -> Result<BinaryMask> {
        if rect.x0 + rect.width > self.width || rect.y0 + rect.height > self.height {
            return Err(invalid("rect", format!("{rect:?} outside {}x{}", self.width, self.height)));
        }
        Ok(BinaryMask::from_fn(rect.width, rect.height, |x, y| {
            self.get(rect.x0 + x, rect.y0 + y)
        }))
    }

    pub fn to_image(&self) -> Image2D {
        Image2D::from_fn(self.width, self.height, |x, y| if self.get(x, y) { 1.0 } else { 0.0 })
    }
}

/// Which channel of the source file produced the grayscale values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelSource {
    Gray,
    Green,
}

/// Result of [`load_grayscale`].
#[derive(Debug, Clone)]
pub struct LoadedImage {
    pub image: Image2D,
    pub channel: ChannelSource,
    pub bit_depth: u8,
}

fn format_for(path: &Path) -> Option<ImageFormat> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    match ext.as_str() {
        "png" => Some(ImageFormat::Png),
        "pgm" | "pnm" | "ppm" => Some(ImageFormat::Pnm),
        _ => None,
    }
}

/// Loads a PNG or binary PGM as a `[0, 1]` grayscale image.
///
/// RGB inputs contribute their green channel, which carries the best vessel
/// contrast in fundus photographs.
pub fn load_grayscale(path: impl AsRef<Path>) -> Result<LoadedImage> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|source| Error::Read {
            path: path.to_owned(),
            source,
        })?
        .with_guessed_format()
        .map_err(|source| Error::Read {
            path: path.to_owned(),
            source,
        })?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: {other:?} (expected PNG or PGM)",
                path.display()
            )))
        }
    }
    let decoded = reader.decode().map_err(|e| Error::Decode {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    if width == 0 || height == 0 {
        return Err(Error::EmptyImage { width, height });
    }
    let (data, channel, bit_depth): (Vec<f64>, _, _) = match decoded {
        DynamicImage::ImageLuma8(buf) => (
            buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
            ChannelSource::Gray,
            8,
        ),
        DynamicImage::ImageLumaA8(buf) => (
            buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
            ChannelSource::Gray,
            8,
        ),
        DynamicImage::ImageLuma16(buf) => (
            buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
            ChannelSource::Gray,
            16,
        ),
        DynamicImage::ImageLumaA16(buf) => (
            buf.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
            ChannelSource::Gray,
            16,
        ),
        DynamicImage::ImageRgb8(buf) => (
            buf.pixels().map(|p| p.0[1] as f64 / 255.0).collect(),
            ChannelSource::Green,
            8,
        ),
        DynamicImage::ImageRgba8(buf) => (
            buf.pixels().map(|p| p.0[1] as f64 / 255.0).collect(),
            ChannelSource::Green,
            8,
        ),
        DynamicImage::ImageRgb16(buf) => (
            buf.pixels().map(|p| p.0[1] as f64 / 65535.0).collect(),
            ChannelSource::Green,
            16,
        ),
        DynamicImage::ImageRgba16(buf) => (
            buf.pixels().map(|p| p.0[1] as f64 / 65535.0).collect(),
            ChannelSource::Green,
            16,
        ),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: unsupported bit depth / color type {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    Ok(LoadedImage {
        image: Image2D::new(width, height, data)?,
        channel,
        bit_depth,
    })
}

fn write_buffer(path: &Path, bytes: &[u8], w: usize, h: usize, color: image::ColorType) -> Result<()> {
    let format = format_for(path)
        .ok_or_else(|| Error::UnsupportedFormat(format!("{}: use .png or .pgm", path.display())))?;
    image::save_buffer_with_format(path, bytes, w as u32, h as u32, color, format).map_err(|e| {
        Error::Write {
            path: path.to_owned(),
            message: e.to_string(),
        }
    })
}

/// Writes an 8-bit grayscale PNG or PGM, chosen by file extension.
pub fn save_grayscale(img: &Image2D, path: impl AsRef<Path>) -> Result<()> {
    write_buffer(
        path.as_ref(),
        &img.to_u8(),
        img.width(),
        img.height(),
        image::ColorType::L8,
    )
}

/// Writes a 16-bit grayscale PNG or PGM.
pub fn save_grayscale16(img: &Image2D, path: impl AsRef<Path>) -> Result<()> {
    let words: Vec<u16> = img.data().iter().map(|v| (v * 65535.0).round() as u16).collect();
    let path = path.as_ref();
    let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(
        img.width() as u32,
        img.height() as u32,
        words,
    )
    .expect("buffer size matches dimensions");
    let format = format_for(path)
        .ok_or_else(|| Error::UnsupportedFormat(format!("{}: use .png or .pgm", path.display())))?;
    buf.save_with_format(path, format).map_err(|e| Error::Write {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

/// Writes packed RGB8 pixels as PNG.
pub fn save_rgb(path: impl AsRef<Path>, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    write_buffer(path.as_ref(), rgb, width, height, image::ColorType::Rgb8)
}

/// Encodes packed RGB8 or L8 pixels as an in-memory PNG.
pub fn encode_png(width: usize, height: usize, pixels: &[u8], rgb: bool) -> Result<Vec<u8>> {
    let color = if rgb {
        image::ExtendedColorType::Rgb8
    } else {
        image::ExtendedColorType::L8
    };
    let mut out = Vec::new();
    image::ImageEncoder::write_image(
        image::codecs::png::PngEncoder::new(&mut out),
        pixels,
        width as u32,
        height as u32,
        color,
    )
    .map_err(|e| Error::Write {
        path: "<memory>".into(),
        message: e.to_string(),
    })?;
    Ok(out)
}

/// Summed-area table over an edge-replicated padding of `values`.
struct Integral {
    stride: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl Integral {
    fn new(values: &[f64], width: usize, height: usize, pad: usize) -> Self {
        let pw = width + 2 * pad;
        let ph = height + 2 * pad;
        let stride = pw + 1;
        let mut sum = vec![0.0; stride * (ph + 1)];
        let mut sum_sq = vec![0.0; stride * (ph + 1)];
        for py in 0..ph {
            let sy = (py as isize - pad as isize).clamp(0, height as isize - 1) as usize;
            let mut row = 0.0;
            let mut row_sq = 0.0;
            for px in 0..pw {
                let sx = (px as isize - pad as isize).clamp(0, width as isize - 1) as usize;
                let v = values[sy * width + sx];
                row += v;
                row_sq += v * v;
                let i = (py + 1) * stride + px + 1;
                sum[i] = sum[i - stride] + row;
                sum_sq[i] = sum_sq[i - stride] + row_sq;
            }
        }
        Self {
            stride,
            sum,
            sum_sq,
        }
    }

    /// Sum and sum of squares over the padded block `[x0, x0+w) x [y0, y0+w)`.
    fn block(&self, x0: usize, y0: usize, w: usize) -> (f64, f64) {
        let s = self.stride;
        let (a, b, c, d) = (y0 * s + x0, y0 * s + x0 + w, (y0 + w) * s + x0, (y0 + w) * s + x0 + w);
        (
            self.sum[d] - self.sum[b] - self.sum[c] + self.sum[a],
            self.sum_sq[d] - self.sum_sq[b] - self.sum_sq[c] + self.sum_sq[a],
        )
    }
}

/// Local contrast normalization: `(img - local_mean) / max(local_std, EPS_STD)`
/// mapped affinely onto `[0, 1]` with zero contrast at mid-gray.
///
/// Statistics are taken over a `window x window` neighborhood with edge
/// replication. A constant image maps to a constant 0.5.
pub fn normalize_luminosity(img: &Image2D, window: usize) -> Result<Image2D> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(invalid("window", format!("must be odd and >= 3, got {window}")));
    }
    let (w, h) = img.dims();
    if window > w && window > h {
        return Err(invalid(
            "window",
            format!("{window} exceeds both image dimensions {w}x{h}"),
        ));
    }
    // Centering on the global mean removes the dependence on absolute offset
    // before the integral image accumulates squares.
    let global_mean = img.data().iter().sum::<f64>() / img.data().len() as f64;
    let centered: Vec<f64> = img.data().iter().map(|v| v - global_mean).collect();
    let pad = window / 2;
    let integral = Integral::new(&centered, w, h, pad);
    let n = (window * window) as f64;
    let mut z = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (s, sq) = integral.block(x, y, window);
            let mean = s / n;
            let var = (sq / n - mean * mean).max(0.0);
            z.push((centered[y * w + x] - mean) / var.sqrt().max(EPS_STD));
        }
    }
    let peak = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let data = if peak <= f64::EPSILON {
        vec![0.5; w * h]
    } else {
        z.iter().map(|v| (0.5 + 0.5 * v / peak).clamp(0.0, 1.0)).collect()
    };
    Image2D::new(w, h, data)
}

/// Otsu threshold selected on a 256-bin histogram spanning the value range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtsuResult {
    /// Pixels with value `>= threshold` are foreground.
    pub threshold: f64,
    /// Last histogram bin assigned to the background class.
    pub split_bin: usize,
    pub between_class_variance: f64,
}

fn histogram_bin(v: f64, lo: f64, span: f64) -> usize {
    (((v - lo) / span) * OTSU_BINS as f64).floor().clamp(0.0, (OTSU_BINS - 1) as f64) as usize
}

/// Between-class variance for every split `k` (background = bins `0..=k`).
pub fn between_class_variances(hist: &[u64]) -> Vec<f64> {
    let total: f64 = hist.iter().map(|&c| c as f64).sum();
    let sum_total: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let mut w_b = 0.0;
    let mut sum_b = 0.0;
    let mut out = Vec::with_capacity(hist.len());
    for (k, &c) in hist.iter().enumerate() {
        w_b += c as f64;
        sum_b += k as f64 * c as f64;
        let w_f = total - w_b;
        if w_b == 0.0 || w_f == 0.0 {
            out.push(0.0);
            continue;
        }
        let m_b = sum_b / w_b;
        let m_f = (sum_total - sum_b) / w_f;
        out.push(w_b * w_f * (m_b - m_f) * (m_b - m_f) / (total * total));
    }
    out
}

/// Computes the Otsu split of a set of values in `[0, 1]`.
pub fn otsu_values(values: &[f64]) -> Result<OtsuResult> {
    if values.is_empty() {
        return Err(Error::EmptyMask);
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Err(Error::DegenerateHistogram);
    }
    let span = hi - lo;
    let mut hist = vec![0u64; OTSU_BINS];
    for &v in values {
        hist[histogram_bin(v, lo, span)] += 1;
    }
    let variances = between_class_variances(&hist);
    // Strict comparison keeps the lowest split among ties.
    let mut best = 0;
    for (k, &v) in variances.iter().enumerate() {
        if v > variances[best] {
            best = k;
        }
    }
    Ok(OtsuResult {
        threshold: lo + span * (best + 1) as f64 / OTSU_BINS as f64,
        split_bin: best,
        between_class_variance: variances[best],
    })
}

/// Binarizes a soft segmentation at its Otsu threshold.
pub fn otsu_threshold(seg: &SoftSegmentation) -> Result<BinaryMask> {
    otsu_split(seg).map(|(mask, _)| mask)
}

/// [`otsu_threshold`] together with the selected split.
pub fn otsu_split(seg: &SoftSegmentation) -> Result<(BinaryMask, OtsuResult)> {
    let img = seg.image();
    let otsu = otsu_values(img.data())?;
    let lo = img.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = img.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let data = img
        .data()
        .iter()
        .map(|&v| histogram_bin(v, lo, hi - lo) > otsu.split_bin)
        .collect();
    Ok((BinaryMask::new(img.width(), img.height(), data)?, otsu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    fn write_pgm(path: &Path, w: usize, h: usize, maxval: u32, pixels: &[u32]) {
        let mut bytes = format!("P5\n{w} {h}\n{maxval}\n").into_bytes();
        for &p in pixels {
            if maxval > 255 {
                bytes.extend_from_slice(&(p as u16).to_be_bytes());
            } else {
                bytes.push(p as u8);
            }
        }
        std::fs::write(path, bytes).unwrap();
    }

    #[test]
    fn pgm_white_loads_as_ones() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("white.pgm");
        write_pgm(&p, 4, 3, 255, &[255; 12]);
        let loaded = load_grayscale(&p).unwrap();
        assert_eq!(loaded.image.dims(), (4, 3));
        assert!(loaded.image.data().iter().all(|&v| v == 1.0));
        assert_eq!(loaded.channel, ChannelSource::Gray);
    }

    #[test]
    fn pgm_16bit_scales_linearly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("deep.pgm");
        write_pgm(&p, 2, 1, 65535, &[32768, 0]);
        let loaded = load_grayscale(&p).unwrap();
        assert_eq!(loaded.bit_depth, 16);
        assert!((loaded.image.get(0, 0) - 32768.0 / 65535.0).abs() < 1e-15);
        assert_eq!(loaded.image.get(1, 0), 0.0);
    }

    #[test]
    fn rgb_png_takes_green_channel() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        let rgb: Vec<u8> = (0..6u8).flat_map(|i| [200, i * 40, 17]).collect();
        save_rgb(&p, 3, 2, &rgb).unwrap();
        let loaded = load_grayscale(&p).unwrap();
        assert_eq!(loaded.channel, ChannelSource::Green);
        for i in 0..6 {
            let (x, y) = (i % 3, i / 3);
            assert_eq!(loaded.image.get(x, y), (i as u8 * 40) as f64 / 255.0);
        }
    }

    #[test]
    fn unreadable_and_unsupported_files_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_grayscale(dir.path().join("missing.png")),
            Err(Error::Read { .. })
        ));
        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"not an image at all").unwrap();
        assert!(load_grayscale(&junk).is_err());
    }

    #[test]
    fn eight_bit_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pixels: Vec<u32> = (0..35).map(|_| rng.random_range(0..=255)).collect();
        let src = dir.path().join("src.pgm");
        write_pgm(&src, 7, 5, 255, &pixels);
        let first = load_grayscale(&src).unwrap().image;
        for ext in ["png", "pgm"] {
            let out = dir.path().join(format!("copy.{ext}"));
            save_grayscale(&first, &out).unwrap();
            assert_eq!(load_grayscale(&out).unwrap().image, first);
        }
    }

    #[test]
    fn constant_image_normalizes_to_mid_gray() {
        let img = Image2D::filled(9, 7, 0.37);
        let out = normalize_luminosity(&img, 5).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn normalize_rejects_bad_windows() {
        let img = Image2D::filled(2, 2, 0.5);
        assert!(normalize_luminosity(&img, 3).is_err());
        let img = Image2D::filled(8, 8, 0.5);
        assert!(normalize_luminosity(&img, 4).is_err());
        assert!(normalize_luminosity(&img, 1).is_err());
    }

    /// Direct per-pixel window statistics with edge replication.
    fn brute_force_normalize(img: &Image2D, window: usize) -> Vec<f64> {
        let (w, h) = img.dims();
        let r = (window / 2) as isize;
        let mut z = Vec::new();
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut vals = Vec::new();
                for dy in -r..=r {
                    for dx in -r..=r {
                        let sx = (x + dx).clamp(0, w as isize - 1) as usize;
                        let sy = (y + dy).clamp(0, h as isize - 1) as usize;
                        vals.push(img.get(sx, sy));
                    }
                }
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
                z.push((img.get(x as usize, y as usize) - mean) / var.sqrt().max(EPS_STD));
            }
        }
        let peak = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        z.iter().map(|v| 0.5 + 0.5 * v / peak).collect()
    }

    #[test]
    fn ramp_with_bar_is_equalized() {
        let (w, h) = (48, 40);
        let img = Image2D::from_fn(w, h, |x, y| {
            let ramp = 0.2 + 0.6 * x as f64 / (w - 1) as f64;
            let texture = 0.05 * (((x * 7 + y * 13) % 5) as f64 - 2.0);
            if y == 20 {
                ramp * 0.7 + texture
            } else {
                ramp + texture
            }
        });
        let window = 9;
        let out = normalize_luminosity(&img, window).unwrap();
        let oracle = brute_force_normalize(&img, window);
        for (a, b) in out.data().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        // Local means of the output sit at mid-gray across the ramp.
        let r = (window / 2) as isize;
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut s = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let sx = (x + dx).clamp(0, w as isize - 1) as usize;
                        let sy = (y + dy).clamp(0, h as isize - 1) as usize;
                        s += out.get(sx, sy);
                    }
                }
                let mean = s / (window * window) as f64;
                assert!((mean - 0.5).abs() < 0.05, "local mean {mean} at ({x},{y})");
            }
        }
    }

    #[test]
    fn otsu_separates_two_levels() {
        let img = Image2D::from_fn(10, 10, |x, _| if x < 5 { 0.1 } else { 0.9 });
        let seg = SoftSegmentation(img.clone());
        let mask = otsu_threshold(&seg).unwrap();
        let otsu = otsu_values(img.data()).unwrap();
        assert!(otsu.threshold > 0.1 && otsu.threshold <= 0.9);
        for y in 0..10 {
            for x in 0..10 {
                assert_eq!(mask.get(x, y), x >= 5);
            }
        }
    }

    #[test]
    fn otsu_uniform_is_degenerate() {
        let seg = SoftSegmentation(Image2D::filled(6, 6, 0.5));
        assert!(matches!(otsu_threshold(&seg), Err(Error::DegenerateHistogram)));
    }

    #[test]
    fn otsu_gaussian_mixture_matches_exhaustive_scan() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let lo = Normal::new(0.2, 0.05).unwrap();
        let hi = Normal::new(0.8, 0.05).unwrap();
        let mut values = Vec::new();
        let mut truth = Vec::new();
        for i in 0..2000 {
            let (v, t) = if i % 2 == 0 {
                (lo.sample(&mut rng), false)
            } else {
                (hi.sample(&mut rng), true)
            };
            values.push(f64::clamp(v, 0.0, 1.0));
            truth.push(t);
        }
        let img = Image2D::new(50, 40, values.clone()).unwrap();
        let mask = otsu_threshold(&SoftSegmentation(img)).unwrap();

        // Oracle: score every candidate threshold independently.
        let vmin = values.iter().copied().fold(f64::INFINITY, f64::min);
        let vmax = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut best = (f64::NEG_INFINITY, 0.0);
        for k in 1..OTSU_BINS {
            let t = vmin + (vmax - vmin) * k as f64 / OTSU_BINS as f64;
            let (fg, bg): (Vec<f64>, Vec<f64>) = values.iter().partition(|&&v| v >= t);
            if fg.is_empty() || bg.is_empty() {
                continue;
            }
            let n = values.len() as f64;
            let (wf, wb) = (fg.len() as f64 / n, bg.len() as f64 / n);
            let mf = fg.iter().sum::<f64>() / fg.len() as f64;
            let mb = bg.iter().sum::<f64>() / bg.len() as f64;
            let score = wf * wb * (mf - mb).powi(2);
            if score > best.0 {
                best = (score, t);
            }
        }
        let oracle_errors = values
            .iter()
            .zip(&truth)
            .filter(|(&v, &t)| (v >= best.1) != t)
            .count();
        assert!(oracle_errors < 20);
        let oracle_mask: Vec<bool> = values.iter().map(|&v| v >= best.1).collect();
        let disagreements = (0..2000).filter(|&i| mask.get(i % 50, i / 50) != oracle_mask[i]).count();
        // Bin-centre means vs exact means can move the split by a bin at most.
        assert!(disagreements < 10, "{disagreements} pixels disagree with the scan");
        let misclassified = (0..2000).filter(|&i| mask.get(i % 50, i / 50) != truth[i]).count();
        assert!(misclassified < 20, "misclassified {misclassified}");
    }

    #[test]
    fn otsu_ties_prefer_lower_threshold() {
        // Three equally spaced, equally populated levels: splitting either gap
        // gives the same between-class variance.
        let img = Image2D::from_fn(9, 1, |x, _| [0.0, 0.5, 1.0][x / 3]);
        let otsu = otsu_values(img.data()).unwrap();
        assert!(otsu.threshold <= 0.5 + 1e-12);
        let mask = otsu_threshold(&SoftSegmentation(img)).unwrap();
        assert_eq!(mask.count(), 6);
    }

    proptest::proptest! {
        #[test]
        fn otsu_invariant_under_increasing_affine_maps(
            values in proptest::collection::vec(0.0f64..1.0, 16..64),
            scale in 0.1f64..1.0,
            shift in 0.0f64..0.5,
        ) {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            proptest::prop_assume!(hi - lo > 1e-3);
            let n = values.len();
            let scaled: Vec<f64> = values.iter().map(|v| (v * scale + shift).min(1.0)).collect();
            proptest::prop_assume!(scaled.iter().all(|v| *v < 1.0));
            let a = otsu_threshold(&SoftSegmentation(Image2D::new(n, 1, values).unwrap())).unwrap();
            let b = otsu_threshold(&SoftSegmentation(Image2D::new(n, 1, scaled).unwrap())).unwrap();
            proptest::prop_assert_eq!(a, b);
        }

        #[test]
        fn normalize_output_in_range_and_offset_invariant(
            values in proptest::collection::vec(0.0f64..0.5, 64),
            offset in 0.0f64..0.5,
        ) {
            let img = Image2D::new(8, 8, values.clone()).unwrap();
            let shifted = Image2D::new(8, 8, values.iter().map(|v| v + offset).collect()).unwrap();
            let a = normalize_luminosity(&img, 3).unwrap();
            let b = normalize_luminosity(&shifted, 3).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                proptest::prop_assert!((0.0..=1.0).contains(x));
                proptest::prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
