//! Whole-image orchestration: hard segmentation, skeleton, junctions,
//! patches, then lift, kernel and spectral grouping per patch.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::imageio::{otsu_split, BinaryMask, Image2D, Rect, SoftSegmentation};
use crate::kernel::{estimate_kernel, estimate_kernel_cached, min_radius, IntensityParams, KernelGrid, KernelParams};
use crate::lifting::{build_cake_wavelets, dominant_orientations, lift, WaveletParams, MIN_KERNEL_SIZE};
use crate::patches::{build_patches, PatchSpec, DEFAULT_INITIAL_SIZE, DEFAULT_MAX_SIZE};
use crate::skeleton::{detect_junctions, prune_spurs, skeletonize};
use crate::spectral::{
    analyze, assign_clusters, build_affinity, normalize, SelectionParams, NOISE,
};

/// End branches up to this long are thinning artifacts, not vessels.
pub const SPUR_LENGTH: usize = 3;

/// Largest wavelet side used on a patch.
pub const MAX_WAVELET_SIZE: usize = 15;

/// The full set of tunable parameters for one patch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterParams {
    /// Path length in steps; `None` means a third of the patch side.
    #[serde(rename = "H", skip_serializing_if = "Option::is_none")]
    pub h: Option<usize>,
    pub sigma: f64,
    pub sigma2: f64,
    pub epsilon: f64,
    pub tau: u32,
    pub min_size: usize,
    pub n_paths: usize,
    pub n_theta: usize,
    pub delta_s: f64,
    pub seed: u64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            h: None,
            sigma: 0.05,
            sigma2: 0.1,
            epsilon: 0.1,
            tau: 150,
            min_size: 5,
            n_paths: 100_000,
            n_theta: 24,
            delta_s: 1.0,
            seed: 0,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if self.h == Some(0) {
            return Err(invalid("H", "must be at least 1"));
        }
        if self.min_size == 0 {
            return Err(invalid("min_size", "must be at least 1"));
        }
        if self.n_theta < 4 || !self.n_theta.is_multiple_of(2) {
            return Err(invalid("n_theta", format!("must be even and >= 4, got {}", self.n_theta)));
        }
        self.intensity().validate()?;
        self.selection().validate()?;
        self.kernel_params(self.h.unwrap_or(1)).validate()
    }

    /// Path length for a patch of side `size`.
    pub fn steps_for(&self, size: usize) -> usize {
        self.h
            .unwrap_or_else(|| ((size as f64 / 3.0).round() as usize).max(1))
    }

    pub fn kernel_params(&self, h: usize) -> KernelParams {
        KernelParams {
            h,
            n_paths: self.n_paths,
            sigma: self.sigma,
            delta_s: self.delta_s,
            n_theta: self.n_theta,
            grid_radius: min_radius(h, self.delta_s),
            seed: self.seed,
        }
    }

    pub fn intensity(&self) -> IntensityParams {
        IntensityParams { sigma2: self.sigma2 }
    }

    pub fn selection(&self) -> SelectionParams {
        SelectionParams {
            tau: self.tau,
            epsilon: self.epsilon,
        }
    }

    /// Copy with `H` fixed for a patch of side `size`.
    pub fn resolved(&self, size: usize) -> Self {
        Self {
            h: Some(self.steps_for(size)),
            ..*self
        }
    }
}

/// Per-patch replacements for any subset of [`ClusterParams`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverrides {
    #[serde(rename = "H", skip_serializing_if = "Option::is_none")]
    pub h: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_paths: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_theta: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ParamOverrides {
    pub fn apply(&self, base: &ClusterParams) -> ClusterParams {
        ClusterParams {
            h: self.h.or(base.h),
            sigma: self.sigma.unwrap_or(base.sigma),
            sigma2: self.sigma2.unwrap_or(base.sigma2),
            epsilon: self.epsilon.unwrap_or(base.epsilon),
            tau: self.tau.unwrap_or(base.tau),
            min_size: self.min_size.unwrap_or(base.min_size),
            n_paths: self.n_paths.unwrap_or(base.n_paths),
            n_theta: self.n_theta.unwrap_or(base.n_theta),
            delta_s: self.delta_s.unwrap_or(base.delta_s),
            seed: self.seed.unwrap_or(base.seed),
        }
    }
}

/// Global defaults plus overrides keyed by patch id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunParams {
    pub defaults: ClusterParams,
    pub overrides: BTreeMap<usize, ParamOverrides>,
}

impl RunParams {
    pub fn for_patch(&self, id: usize) -> ClusterParams {
        match self.overrides.get(&id) {
            Some(o) => o.apply(&self.defaults),
            None => self.defaults,
        }
    }
}

/// Kernels shared across patches and requests, keyed by parameter hash and
/// optionally persisted to a directory.
///
/// Each key has its own lock, so one kernel is estimated once while others
/// proceed. Call [`get`](Self::get) outside rayon parallel sections: a worker
/// blocked on a key lock could otherwise be the one holding it.
type KernelSlot = Arc<Mutex<Option<Arc<KernelGrid>>>>;

#[derive(Debug, Default)]
pub struct KernelCache {
    dir: Option<PathBuf>,
    slots: Mutex<HashMap<String, KernelSlot>>,
}

impl KernelCache {
    pub fn new(dir: Option<PathBuf>) -> Self {
        Self {
            dir,
            slots: Mutex::default(),
        }
    }

    pub fn get(&self, params: KernelParams) -> Result<Arc<KernelGrid>> {
        let slot = {
            let mut slots = self.slots.lock().expect("kernel cache poisoned");
            slots.entry(params.cache_key()).or_default().clone()
        };
        let mut guard = slot.lock().expect("kernel slot poisoned");
        if let Some(grid) = guard.as_ref() {
            return Ok(grid.clone());
        }
        let grid = Arc::new(match &self.dir {
            Some(dir) => estimate_kernel_cached(params, dir)?,
            None => estimate_kernel(params)?,
        });
        *guard = Some(grid.clone());
        Ok(grid)
    }
}

/// One lifted point with its position in the full image and its label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub x: usize,
    pub y: usize,
    pub theta_index: usize,
    pub intensity: f64,
    /// Cluster id, or 0 for noise.
    pub label: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchResult {
    pub spec: PatchSpec,
    pub rect: Rect,
    /// Parameters used, with `H` resolved.
    pub params: ClusterParams,
    pub wavelet_size: usize,
    pub otsu_threshold: f64,
    pub k: usize,
    pub cluster_sizes: Vec<usize>,
    pub n_noise: usize,
    /// Full spectrum of `P`, descending.
    pub eigenvalues: Vec<f64>,
    pub points: Vec<LabeledPoint>,
}

impl PatchResult {
    pub fn n_clusters(&self) -> usize {
        self.cluster_sizes.len()
    }
}

/// Wavelet side for a `width x height` crop.
pub fn wavelet_size_for(width: usize, height: usize) -> Result<usize> {
    let fit = width.min(height).min(MAX_WAVELET_SIZE);
    let size = if fit.is_multiple_of(2) { fit.saturating_sub(1) } else { fit };
    if size < MIN_KERNEL_SIZE {
        return Err(invalid(
            "patch",
            format!("{width}x{height} crop is smaller than the {MIN_KERNEL_SIZE} px wavelet minimum"),
        ));
    }
    Ok(size)
}

/// `rect` grown by `margin` on every side, clipped to the image.
fn grow(rect: Rect, margin: usize, width: usize, height: usize) -> Rect {
    let x0 = rect.x0.saturating_sub(margin);
    let y0 = rect.y0.saturating_sub(margin);
    let x1 = (rect.x0 + rect.width + margin).min(width);
    let y1 = (rect.y0 + rect.height + margin).min(height);
    Rect { x0, y0, width: x1 - x0, height: y1 - y0 }
}

/// Kernel parameters a patch will need, with `H` resolved from its size.
pub fn patch_kernel_params(spec: &PatchSpec, params: &ClusterParams) -> KernelParams {
    params.kernel_params(params.steps_for(spec.size))
}

/// Runs lift, affinity and spectral grouping on one patch. `grid` must be
/// built from [`patch_kernel_params`].
pub fn run_patch(
    img: &Image2D,
    seg: &SoftSegmentation,
    spec: &PatchSpec,
    params: &ClusterParams,
    grid: &KernelGrid,
) -> Result<PatchResult> {
    params.validate()?;
    if seg.dims() != img.dims() {
        return Err(Error::DimensionMismatch {
            expected: img.dims(),
            actual: seg.dims(),
        });
    }
    let resolved = params.resolved(spec.size);
    if *grid.params() != patch_kernel_params(spec, params) {
        return Err(invalid("kernel", "grid was built for different parameters"));
    }
    let rect = spec
        .rect(img.width(), img.height())
        .ok_or_else(|| invalid("patch", format!("patch {} lies outside the image", spec.id)))?;
    let seg_crop = SoftSegmentation(seg.image().crop(rect)?);
    let (mask, otsu) = otsu_split(&seg_crop)?;
    if mask.count() < 2 {
        return Err(Error::TooFewPoints(mask.count()));
    }

    let wavelet_size = wavelet_size_for(rect.width, rect.height)?;
    let stack = build_cake_wavelets(WaveletParams {
        n_orientations: params.n_theta,
        size: wavelet_size,
        ..WaveletParams::default()
    })?;
    // Lift with a margin of real image around the patch so its border
    // pixels see their true neighborhood instead of a reflection.
    let context = grow(rect, wavelet_size / 2, img.width(), img.height());
    let (ox, oy) = (rect.x0 - context.x0, rect.y0 - context.y0);
    let context_img = img.crop(context)?;
    let context_mask = BinaryMask::from_fn(context.width, context.height, |x, y| {
        x >= ox && y >= oy && x - ox < rect.width && y - oy < rect.height && mask.get(x - ox, y - oy)
    });
    let score = lift(&context_img, &stack)?;
    let lifted = dominant_orientations(&score, &context_mask, &context_img)?;

    let affinity = build_affinity(&lifted, grid, &params.intensity())?;
    // Points with no affinity to anything cannot be normalized; they are noise.
    let isolated = affinity.zero_rows();
    let keep: Vec<usize> = (0..affinity.n()).filter(|i| isolated.binary_search(i).is_err()).collect();
    if keep.len() < 2 {
        return Err(Error::TooFewPoints(keep.len()));
    }
    let reduced = if isolated.is_empty() { affinity } else { affinity.restrict(&keep) };
    let spectral = analyze(&normalize(&reduced)?, params.selection())?;
    let labeling = assign_clusters(&spectral, params.min_size);

    let mut labels = vec![NOISE; lifted.len()];
    for (&i, &l) in keep.iter().zip(&labeling.labels) {
        labels[i] = l;
    }
    let points = lifted
        .points
        .iter()
        .zip(&labels)
        .map(|(p, &label)| LabeledPoint {
            x: p.x + context.x0,
            y: p.y + context.y0,
            theta_index: p.theta_index,
            intensity: p.intensity,
            label,
        })
        .collect::<Vec<_>>();
    let n_noise = labels.iter().filter(|&&l| l == NOISE).count();
    Ok(PatchResult {
        spec: spec.clone(),
        rect,
        params: resolved,
        wavelet_size,
        otsu_threshold: otsu.threshold,
        k: spectral.k,
        cluster_sizes: labeling.sizes,
        n_noise,
        eigenvalues: spectral.eigenvalues,
        points,
    })
}

/// [`run_patch`] with the kernel taken from `cache`.
pub fn run_patch_cached(
    img: &Image2D,
    seg: &SoftSegmentation,
    spec: &PatchSpec,
    params: &ClusterParams,
    cache: &KernelCache,
) -> Result<PatchResult> {
    params.validate()?;
    let grid = cache.get(patch_kernel_params(spec, params))?;
    run_patch(img, seg, spec, params, &grid)
}

/// Result or error message of one patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchOutcome {
    pub spec: PatchSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<PatchResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Everything [`run_image`] found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRun {
    pub width: usize,
    pub height: usize,
    /// Global Otsu threshold of the soft segmentation, absent when flat.
    pub global_threshold: Option<f64>,
    pub junctions: Vec<[usize; 2]>,
    pub patches: Vec<PatchOutcome>,
}

impl ImageRun {
    pub fn failures(&self) -> impl Iterator<Item = &PatchOutcome> {
        self.patches.iter().filter(|p| p.error.is_some())
    }
}

/// Junctions and patches found in a soft segmentation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PatchLayout {
    /// Global Otsu threshold, absent when the segmentation is flat.
    pub global_threshold: Option<f64>,
    pub junctions: Vec<[usize; 2]>,
    pub patches: Vec<PatchSpec>,
}

/// Junction patches of an image, from a global Otsu split of `seg`.
pub fn find_patches(seg: &SoftSegmentation) -> Result<PatchLayout> {
    let (mask, otsu) = match otsu_split(seg) {
        Ok(v) => v,
        Err(Error::DegenerateHistogram) => return Ok(PatchLayout::default()),
        Err(e) => return Err(e),
    };
    let global_threshold = Some(otsu.threshold);
    if mask.is_empty() {
        return Ok(PatchLayout {
            global_threshold,
            ..PatchLayout::default()
        });
    }
    let skeleton = prune_spurs(&skeletonize(&mask)?, SPUR_LENGTH);
    let junctions = detect_junctions(&skeleton);
    Ok(PatchLayout {
        global_threshold,
        patches: build_patches(&junctions, DEFAULT_INITIAL_SIZE, DEFAULT_MAX_SIZE),
        junctions: junctions.iter().map(|&(x, y)| [x, y]).collect(),
    })
}

/// Full chain over one image. Patch failures are recorded, not returned.
pub fn run_image(
    img: &Image2D,
    seg: &SoftSegmentation,
    params: &RunParams,
    cache: &KernelCache,
) -> Result<ImageRun> {
    if seg.dims() != img.dims() {
        return Err(Error::DimensionMismatch {
            expected: img.dims(),
            actual: seg.dims(),
        });
    }
    let PatchLayout {
        global_threshold,
        junctions,
        patches: specs,
    } = find_patches(seg)?;

    // Kernels first, sequentially: each estimate is parallel on its own.
    let grids: Vec<Result<Arc<KernelGrid>>> = specs
        .iter()
        .map(|spec| {
            let p = params.for_patch(spec.id);
            p.validate()?;
            cache.get(patch_kernel_params(spec, &p))
        })
        .collect();

    let patches = specs
        .par_iter()
        .zip(grids.par_iter())
        .map(|(spec, grid)| {
            let result = grid
                .as_ref()
                .map_err(|e| e.to_string())
                .and_then(|g| run_patch(img, seg, spec, &params.for_patch(spec.id), g).map_err(|e| e.to_string()));
            if let Err(e) = &result {
                tracing::warn!(patch = spec.id, error = %e, "patch failed");
            }
            PatchOutcome {
                spec: spec.clone(),
                error: result.as_ref().err().cloned(),
                result: result.ok(),
            }
        })
        .collect();

    Ok(ImageRun {
        width: img.width(),
        height: img.height(),
        global_threshold,
        junctions,
        patches,
    })
}
