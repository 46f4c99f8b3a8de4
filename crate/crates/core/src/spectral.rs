//! Affinity matrix, random-walk normalization and spectral grouping.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernel::{omega_f, IntensityParams, KernelGrid};
use crate::lifting::LiftedPointSet;

/// Label of points whose cluster was too small to keep.
pub const NOISE: u32 = 0;

/// Slack allowed above 1 for eigenvalues of a stochastic matrix.
pub const SPECTRUM_TOL: f64 = 1e-9;

const EIGEN_EPS: f64 = 1e-14;
const EIGEN_MAX_ITER: usize = 10_000;

/// Dense symmetric nonnegative affinities between lifted points.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    entries: DMatrix<f64>,
}

impl AffinityMatrix {
    /// Wraps a row-major `n x n` matrix, checking symmetry and signs.
    pub fn from_dense(n: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(invalid("entries", format!("expected {} values, got {}", n * n, entries.len())));
        }
        let m = DMatrix::from_row_slice(n, n, &entries);
        for i in 0..n {
            for j in 0..n {
                let v = m[(i, j)];
                if !(v.is_finite() && v >= 0.0) {
                    return Err(invalid("entries", format!("A[{i}][{j}] = {v} is not a nonnegative number")));
                }
                if v != m[(j, i)] {
                    return Err(invalid("entries", format!("A[{i}][{j}] != A[{j}][{i}]")));
                }
            }
        }
        Ok(Self { entries: m })
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.entries.row_iter().map(|r| r.sum()).collect()
    }

    /// Indices of rows with no positive entry at all.
    pub fn zero_rows(&self) -> Vec<usize> {
        self.entries
            .row_iter()
            .enumerate()
            .filter(|(_, r)| r.iter().all(|&v| v == 0.0))
            .map(|(i, _)| i)
            .collect()
    }

    /// Principal submatrix on `keep`, in the given order.
    pub fn restrict(&self, keep: &[usize]) -> Self {
        let n = keep.len();
        Self {
            entries: DMatrix::from_fn(n, n, |i, j| self.entries[(keep[i], keep[j])]),
        }
    }

    /// Same matrix scaled by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            entries: &self.entries * alpha,
        }
    }
}

/// Pairwise affinities of all lifted points. The diagonal holds each row's
/// largest off-diagonal entry, so a point is never less similar to itself
/// than to its best neighbor.
pub fn build_affinity(
    points: &LiftedPointSet,
    grid: &KernelGrid,
    ip: &IntensityParams,
) -> Result<AffinityMatrix> {
    let n = points.len();
    if n < 2 {
        return Err(Error::TooFewPoints(n));
    }
    ip.validate()?;
    let pts = &points.points;
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut row: Vec<f64> = (0..n)
                .map(|j| if i == j { 0.0 } else { omega_f(grid, &pts[i], &pts[j], ip) })
                .collect();
            row[i] = row.iter().copied().fold(0.0, f64::max);
            row
        })
        .collect();
    Ok(AffinityMatrix {
        entries: DMatrix::from_row_slice(n, n, &rows),
    })
}

/// Row-stochastic `P = D^-1 A`, kept together with `A` and the degrees.
#[derive(Debug, Clone)]
pub struct StochasticMatrix {
    affinity: DMatrix<f64>,
    degrees: Vec<f64>,
}

impl StochasticMatrix {
    pub fn n(&self) -> usize {
        self.degrees.len()
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    /// The stochastic matrix itself.
    pub fn p(&self) -> DMatrix<f64> {
        let d = &self.degrees;
        DMatrix::from_fn(self.n(), self.n(), |i, j| self.affinity[(i, j)] / d[i])
    }

    /// The similar symmetric matrix `D^-1/2 A D^-1/2`.
    pub fn symmetrized(&self) -> DMatrix<f64> {
        let s: Vec<f64> = self.degrees.iter().map(|d| d.sqrt()).collect();
        DMatrix::from_fn(self.n(), self.n(), |i, j| self.affinity[(i, j)] / (s[i] * s[j]))
    }
}

pub fn normalize(a: &AffinityMatrix) -> Result<StochasticMatrix> {
    let degrees = a.row_sums();
    if let Some(index) = degrees.iter().position(|&d| d <= 0.0) {
        return Err(Error::ZeroRow { index });
    }
    Ok(StochasticMatrix {
        affinity: a.entries.clone(),
        degrees,
    })
}

/// Eigenvalues of `P` in descending order with the matching right
/// eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    /// Columns are eigenvectors of `P`, flipped to a nonnegative entry sum.
    pub eigenvectors: DMatrix<f64>,
}

/// Solves `P u = lambda u` through the symmetric matrix `D^-1/2 A D^-1/2`
/// and maps its eigenvectors back with `u = D^-1/2 v`.
pub fn eigs(p: &StochasticMatrix) -> Result<Spectrum> {
    let n = p.n();
    let eig = SymmetricEigen::try_new(p.symmetrized(), EIGEN_EPS, EIGEN_MAX_ITER).ok_or_else(|| {
        Error::Eigen(format!(
            "symmetric QR did not converge within {EIGEN_MAX_ITER} iterations (n = {n})"
        ))
    })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let inv_sqrt: Vec<f64> = p.degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let mut u: Vec<f64> = (0..n).map(|i| eig.eigenvectors[(i, src)] * inv_sqrt[i]).collect();
        if u.iter().sum::<f64>() < 0.0 {
            u.iter_mut().for_each(|v| *v = -*v);
        }
        vectors.set_column(col, &nalgebra::DVector::from_vec(u));
    }
    Ok(Spectrum {
        eigenvalues: order.iter().map(|&i| eig.eigenvalues[i]).collect(),
        eigenvectors: vectors,
    })
}

/// Exponent and threshold of the model-order rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionParams {
    pub tau: u32,
    pub epsilon: f64,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self {
            tau: 150,
            epsilon: 0.1,
        }
    }
}

impl SelectionParams {
    pub fn validate(&self) -> Result<()> {
        if self.tau == 0 {
            return Err(invalid("tau", "must be at least 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(invalid("epsilon", format!("must lie in (0, 1), got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Number of leading eigenvalues with `lambda^tau > 1 - epsilon`, at least 1.
///
/// Only the nonnegative head of the spectrum counts: with an even `tau`,
/// eigenvalues near -1 would otherwise pass the test.
pub fn select_k(eigenvalues: &[f64], sel: SelectionParams) -> Result<usize> {
    sel.validate()?;
    let cut = 1.0 - sel.epsilon;
    let k = eigenvalues
        .iter()
        .take_while(|&&l| l > 0.0 && l.powi(sel.tau as i32) > cut)
        .count();
    Ok(k.max(1).min(eigenvalues.len().max(1)))
}

/// Spectrum together with the selected model order.
#[derive(Debug, Clone)]
pub struct SpectralResult {
    pub eigenvalues: Vec<f64>,
    /// First `k` eigenvectors as columns.
    pub eigenvectors: DMatrix<f64>,
    pub k: usize,
    pub tau: u32,
    pub epsilon: f64,
}

impl SpectralResult {
    /// Eigenvalues as CSV: index, lambda, lambda^tau.
    pub fn eigenvalues_csv(&self) -> String {
        eigenvalues_csv(&self.eigenvalues, self.tau)
    }
}

/// Eigenvalues as CSV: index, lambda, lambda^tau.
pub fn eigenvalues_csv(eigenvalues: &[f64], tau: u32) -> String {
    let mut out = String::from("index,lambda,lambda_pow_tau\n");
    for (i, l) in eigenvalues.iter().enumerate() {
        out.push_str(&format!("{},{:.12e},{:.12e}\n", i + 1, l, l.powi(tau as i32)));
    }
    out
}

/// Decomposes `p` and selects `K`.
pub fn analyze(p: &StochasticMatrix, sel: SelectionParams) -> Result<SpectralResult> {
    sel.validate()?;
    let spectrum = eigs(p)?;
    let k = select_k(&spectrum.eigenvalues, sel)?;
    Ok(SpectralResult {
        eigenvectors: spectrum.eigenvectors.columns(0, k).into_owned(),
        eigenvalues: spectrum.eigenvalues,
        k,
        tau: sel.tau,
        epsilon: sel.epsilon,
    })
}

/// Per-point cluster ids (1-based, [`NOISE`] for dropped points).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterLabeling {
    pub labels: Vec<u32>,
    /// `sizes[c - 1]` is the size of cluster `c`.
    pub sizes: Vec<usize>,
    pub min_size: usize,
}

impl ClusterLabeling {
    pub fn n_clusters(&self) -> usize {
        self.sizes.len()
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NOISE).count()
    }
}

/// Rows of `u` chosen greedily by largest residual norm, Gram-Schmidt
/// style. They span the row space as well as any `k` rows can.
fn pivot_rows(u: &DMatrix<f64>) -> Vec<usize> {
    let (n, k) = u.shape();
    let mut residual = u.clone();
    let mut pivots = Vec::with_capacity(k);
    for _ in 0..k {
        let best = (0..n)
            .filter(|i| !pivots.contains(i))
            .max_by(|&a, &b| {
                residual
                    .row(a)
                    .norm_squared()
                    .total_cmp(&residual.row(b).norm_squared())
                    .then(b.cmp(&a))
            })
            .expect("k <= n");
        pivots.push(best);
        let q = residual.row(best).into_owned();
        let qn = q.norm_squared();
        if qn == 0.0 {
            continue;
        }
        for i in 0..n {
            let c = residual.row(i).dot(&q) / qn;
            let update = &q * c;
            let mut row = residual.row_mut(i);
            row -= update;
        }
    }
    pivots
}

/// Assigns each point to the eigenvector on which it loads most, after
/// rotating the `K` leading eigenvectors so that `K` pivot points each load
/// on exactly one of them. Clusters below `min_size` become [`NOISE`] and the
/// rest are renumbered `1..` by first occurrence.
///
/// The rotation makes the result independent of the basis the eigensolver
/// picks inside a repeated eigenvalue; raw argmax over an arbitrary basis of
/// a block-diagonal problem can merge blocks.
pub fn assign_clusters(result: &SpectralResult, min_size: usize) -> ClusterLabeling {
    let u = &result.eigenvectors;
    let (n, k) = u.shape();
    let raw: Vec<usize> = if k <= 1 {
        vec![0; n]
    } else {
        let pivots = pivot_rows(u);
        let basis = DMatrix::from_fn(k, k, |i, j| u[(pivots[i], j)]);
        match basis.try_inverse() {
            Some(inv) => {
                let aligned = u * inv;
                (0..n)
                    .map(|i| {
                        let row = aligned.row(i);
                        let mut best = 0;
                        for j in 1..k {
                            if row[j] > row[best] {
                                best = j;
                            }
                        }
                        best
                    })
                    .collect()
            }
            // Rank-deficient leading block: fall back to plain argmax.
            None => (0..n)
                .map(|i| {
                    let mut best = 0;
                    for j in 1..k {
                        if u[(i, j)] > u[(i, best)] {
                            best = j;
                        }
                    }
                    best
                })
                .collect(),
        }
    };

    let mut counts = vec![0usize; k.max(1)];
    raw.iter().for_each(|&c| counts[c] += 1);
    let mut ids = vec![NOISE; counts.len()];
    let mut sizes = Vec::new();
    let labels = raw
        .iter()
        .map(|&c| {
            if counts[c] < min_size {
                return NOISE;
            }
            if ids[c] == NOISE {
                sizes.push(counts[c]);
                ids[c] = sizes.len() as u32;
            }
            ids[c]
        })
        .collect();
    ClusterLabeling {
        labels,
        sizes,
        min_size,
    }
}
