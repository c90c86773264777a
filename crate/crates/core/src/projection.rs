//! Linear overview projection and agent-centered neighbor embedding.
//!
//! [`PcaModel`] maps normalized points with `v = M (p - mean)`. Because the
//! map is linear, editing variable `j` by `δ` moves the projection by exactly
//! `L_j δ`, where `L_j` is the `j`th column of `M` (its loading vector).
//!
//! [`cos_mds`] embeds the neighbors of an agent in 2D: it keeps each
//! neighbor's true distance to the agent and approximates the pairwise
//! cosines between agent-to-neighbor directions using the top two eigenpairs
//! of their Gram matrix. Unlike classical MDS the Gram matrix is not
//! double-centered; the directions are already anchored at the agent.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Row `i` is principal component `i` (unit length, in data space).
    pub components: Vec<Vec<f64>>,
    pub explained_variance_ratio: Vec<f64>,
    /// Total variance of the fitted data (trace of the covariance).
    pub total_variance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreeEntry {
    pub component: usize,
    pub ratio: f64,
    pub cumulative: f64,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    /// The loading vector of variable `j`: column `j` of the component matrix.
    pub fn loading_vector(&self, j: usize) -> Vec<f64> {
        self.components.iter().map(|row| row[j]).collect()
    }

    pub fn project(&self, p: &[f64]) -> Result<Vec<f64>> {
        if p.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: p.len(),
            });
        }
        Ok(self
            .components
            .iter()
            .map(|row| {
                row.iter()
                    .zip(p.iter().zip(&self.mean))
                    .map(|(m, (x, mu))| m * (x - mu))
                    .sum()
            })
            .collect())
    }

    /// Inverse map `mean + M^T v`; exact when all components are kept.
    pub fn reconstruct(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n_components() {
            return Err(Error::DimensionMismatch {
                expected: self.n_components(),
                actual: v.len(),
            });
        }
        let mut out = self.mean.clone();
        for (row, &c) in self.components.iter().zip(v) {
            for (o, m) in out.iter_mut().zip(row) {
                *o += m * c;
            }
        }
        Ok(out)
    }

    /// Displacement in the projection caused by changing variable `j` by `delta`.
    pub fn move_delta(&self, j: usize, delta: f64) -> Result<Vec<f64>> {
        if j >= self.dim() {
            return Err(Error::InvalidParameter(format!(
                "variable index {j} out of range for {} variables",
                self.dim()
            )));
        }
        Ok(self.loading_vector(j).into_iter().map(|l| l * delta).collect())
    }

    /// The same fit keeping only the first `k` components.
    pub fn truncated(&self, k: usize) -> PcaModel {
        let k = k.min(self.n_components());
        PcaModel {
            mean: self.mean.clone(),
            components: self.components[..k].to_vec(),
            explained_variance_ratio: self.explained_variance_ratio[..k].to_vec(),
            total_variance: self.total_variance,
        }
    }

    pub fn scree(&self) -> Vec<ScreeEntry> {
        let mut cumulative = 0.0;
        self.explained_variance_ratio
            .iter()
            .enumerate()
            .map(|(component, &ratio)| {
                cumulative += ratio;
                ScreeEntry {
                    component,
                    ratio,
                    cumulative,
                }
            })
            .collect()
    }
}

/// Mean-centered PCA by eigendecomposition of the sample covariance.
///
/// Components are sorted by decreasing variance; each component's
/// largest-magnitude entry is made positive so layouts are stable across refits.
pub fn fit_pca(points: &[Vec<f64>], n_components: usize) -> Result<PcaModel> {
    if points.len() < 2 {
        return Err(Error::InvalidParameter("PCA needs at least two points".into()));
    }
    let d = points[0].len();
    if n_components == 0 || n_components > d {
        return Err(Error::InvalidParameter(format!(
            "n_components must be in 1..={d}, got {n_components}"
        )));
    }
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: p.len(),
        });
    }
    let n = points.len() as f64;
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let mut cov = DMatrix::<f64>::zeros(d, d);
    for p in points {
        for a in 0..d {
            let da = p[a] - mean[a];
            for b in a..d {
                cov[(a, b)] += da * (p[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] / (n - 1.0);
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let total_variance = cov.trace();
    if !(total_variance > 0.0) {
        return Err(Error::DegenerateVariance);
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut components = Vec::with_capacity(n_components);
    let mut ratios = Vec::with_capacity(n_components);
    for &idx in order.iter().take(n_components) {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        orient(&mut v);
        components.push(v);
        ratios.push(eig.eigenvalues[idx].max(0.0) / total_variance);
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance_ratio: ratios,
        total_variance,
    })
}

fn orient(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        // strict comparison keeps the lowest index among equal magnitudes
        if x.abs() > v[best].abs() + 1e-12 {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborEmbedding {
    /// The agent sits at the origin of the embedding.
    pub center: [f64; 2],
    pub points: Vec<[f64; 2]>,
    /// True agent-to-neighbor distances.
    pub original_distances: Vec<f64>,
    /// Top two Gram eigenvalues, descending.
    pub eigenvalues: [f64; 2],
    /// Trace of the Gram matrix (equals the neighbor count).
    pub gram_trace: f64,
    /// Frobenius norm of the discarded spectrum, `sqrt(Σ_{i>2} λ_i²)`.
    pub discarded_spectrum_norm: f64,
}

impl NeighborEmbedding {
    /// Share of the Gram trace captured by the two kept eigenvalues.
    pub fn retained_fraction(&self) -> f64 {
        (self.eigenvalues[0] + self.eigenvalues[1]) / self.gram_trace
    }

    /// Upper bound on the mean absolute error between the raw (pre-rescaling)
    /// embedded dot products and the true cosines: `||M - M_2||_F / n`.
    pub fn cosine_error_bound(&self) -> f64 {
        self.discarded_spectrum_norm / self.points.len() as f64
    }
}

/// Tolerance below which a negative Gram eigenvalue is treated as round-off.
const NEGATIVE_EIGEN_TOLERANCE: f64 = 1e-9;

/// Raw embedding before rescaling, plus spectral diagnostics.
pub(crate) struct RawEmbedding {
    pub coords: Vec<[f64; 2]>,
    pub eigenvalues: [f64; 2],
    pub trace: f64,
    pub discarded_norm: f64,
}

pub(crate) fn gram_embedding(units: &[Vec<f64>]) -> Result<RawEmbedding> {
    let n = units.len();
    let gram = DMatrix::<f64>::from_fn(n, n, |i, j| {
        units[i].iter().zip(&units[j]).map(|(a, b)| a * b).sum()
    });
    let trace = gram.trace();
    let eig = SymmetricEigen::new(gram);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -NEGATIVE_EIGEN_TOLERANCE * n as f64 {
        return Err(Error::NegativeEigenvalue(min));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = [order[0], order.get(1).copied().unwrap_or(order[0])];
    let lambdas = [
        eig.eigenvalues[top[0]].max(0.0),
        if n > 1 { eig.eigenvalues[top[1]].max(0.0) } else { 0.0 },
    ];
    let discarded_norm = order
        .iter()
        .skip(2)
        .map(|&i| eig.eigenvalues[i] * eig.eigenvalues[i])
        .sum::<f64>()
        .sqrt();
    let mut vecs: Vec<Vec<f64>> = top
        .iter()
        .map(|&c| eig.eigenvectors.column(c).iter().copied().collect())
        .collect();
    for v in &mut vecs {
        orient(v);
    }
    let coords = (0..n)
        .map(|i| {
            [
                vecs[0][i] * lambdas[0].sqrt(),
                vecs[1][i] * lambdas[1].sqrt(),
            ]
        })
        .collect();
    Ok(RawEmbedding {
        coords,
        eigenvalues: lambdas,
        trace,
        discarded_norm,
    })
}

/// Agent-centered embedding of `neighbors` around `agent`.
pub fn cos_mds(agent: &[f64], neighbors: &[Vec<f64>]) -> Result<NeighborEmbedding> {
    if neighbors.len() < 2 {
        return Err(Error::InvalidParameter(
            "cos-MDS needs at least two neighbors".into(),
        ));
    }
    let mut lengths = Vec::with_capacity(neighbors.len());
    let mut units = Vec::with_capacity(neighbors.len());
    for (i, nb) in neighbors.iter().enumerate() {
        if nb.len() != agent.len() {
            return Err(Error::DimensionMismatch {
                expected: agent.len(),
                actual: nb.len(),
            });
        }
        let v: Vec<f64> = nb.iter().zip(agent).map(|(a, b)| a - b).collect();
        let l = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if l < crate::knn::COINCIDENT_DISTANCE {
            return Err(Error::CoincidentNeighbor(i));
        }
        units.push(v.into_iter().map(|x| x / l).collect::<Vec<_>>());
        lengths.push(l);
    }
    let raw = gram_embedding(&units)?;
    let points = raw
        .coords
        .iter()
        .zip(&lengths)
        .map(|(p, &l)| {
            let norm = (p[0] * p[0] + p[1] * p[1]).sqrt();
            if norm > 0.0 {
                [l * p[0] / norm, l * p[1] / norm]
            } else {
                // direction orthogonal to both kept axes: no angular information left
                [l, 0.0]
            }
        })
        .collect();
    Ok(NeighborEmbedding {
        center: [0.0, 0.0],
        points,
        original_distances: lengths,
        eigenvalues: raw.eigenvalues,
        gram_trace: raw.trace,
        discarded_spectrum_norm: raw.discarded_norm,
    })
}
