//! JSON manifest of a run. The service answers cluster requests with the
//! same [`ClusterSummary`] the manifest stores, so the two can be compared
//! field for field.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::imageio::Rect;
use crate::pipeline::{ClusterParams, ImageRun, LabeledPoint, ParamOverrides, PatchOutcome, PatchResult};

pub const MANIFEST_VERSION: u32 = 1;
/// Leading eigenvalues kept in summaries; the artifact CSV has all of them.
pub const MAX_EIGENVALUES: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub rect: Rect,
    pub params: ClusterParams,
    pub wavelet_size: usize,
    pub otsu_threshold: f64,
    pub n_points: usize,
    pub k: usize,
    pub n_clusters: usize,
    pub cluster_sizes: Vec<usize>,
    pub n_noise: usize,
    pub eigenvalues: Vec<f64>,
}

impl From<&PatchResult> for ClusterSummary {
    fn from(r: &PatchResult) -> Self {
        Self {
            rect: r.rect,
            params: r.params,
            wavelet_size: r.wavelet_size,
            otsu_threshold: r.otsu_threshold,
            n_points: r.points.len(),
            k: r.k,
            n_clusters: r.n_clusters(),
            cluster_sizes: r.cluster_sizes.clone(),
            n_noise: r.n_noise,
            eigenvalues: r.eigenvalues.iter().take(MAX_EIGENVALUES).copied().collect(),
        }
    }
}

/// Body of a cluster request's response: the summary plus every labeled point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReply {
    pub id: usize,
    pub summary: ClusterSummary,
    pub points: Vec<LabeledPoint>,
}

impl From<&PatchResult> for ClusterReply {
    fn from(r: &PatchResult) -> Self {
        Self {
            id: r.spec.id,
            summary: r.into(),
            points: r.points.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchReport {
    pub id: usize,
    pub center: [f64; 2],
    pub size: usize,
    pub members: Vec<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<ClusterSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Files written for this patch, relative to the manifest.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub artifacts: Vec<String>,
}

impl PatchReport {
    pub fn new(outcome: &PatchOutcome, artifacts: Vec<String>) -> Self {
        Self {
            id: outcome.spec.id,
            center: outcome.spec.center,
            size: outcome.spec.size,
            members: outcome.spec.members.clone(),
            summary: outcome.result.as_ref().map(ClusterSummary::from),
            error: outcome.error.clone(),
            artifacts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub image: String,
    pub seg: String,
    pub width: usize,
    pub height: usize,
    pub defaults: ClusterParams,
    pub overrides: BTreeMap<usize, ParamOverrides>,
    pub global_threshold: Option<f64>,
    pub junctions: Vec<[usize; 2]>,
    pub patches: Vec<PatchReport>,
}

impl Manifest {
    /// `artifacts(id)` names the files written for patch `id`.
    pub fn new(
        image: impl Into<String>,
        seg: impl Into<String>,
        defaults: ClusterParams,
        overrides: BTreeMap<usize, ParamOverrides>,
        run: &ImageRun,
        mut artifacts: impl FnMut(usize) -> Vec<String>,
    ) -> Self {
        Self {
            version: MANIFEST_VERSION,
            image: image.into(),
            seg: seg.into(),
            width: run.width,
            height: run.height,
            defaults,
            overrides,
            global_threshold: run.global_threshold,
            junctions: run.junctions.clone(),
            patches: run
                .patches
                .iter()
                .map(|o| PatchReport::new(o, artifacts(o.spec.id)))
                .collect(),
        }
    }

    /// Pretty JSON with a trailing newline. Field order is fixed, so equal
    /// manifests serialize to identical bytes.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn failed(&self) -> impl Iterator<Item = &PatchReport> {
        self.patches.iter().filter(|p| p.error.is_some())
    }
}
