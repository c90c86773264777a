//! Kernel density grids for the overview and per-axis scented bars.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::std_dev;

/// Density sampled at cell centers of a regular grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub x_min: f64,
    pub y_min: f64,
    pub dx: f64,
    pub dy: f64,
    pub nx: usize,
    pub ny: usize,
    pub bandwidth: [f64; 2],
    /// Row-major, `ny` rows of `nx` values.
    pub values: Vec<f64>,
}

impl DensityGrid {
    /// Riemann sum of the density over the grid.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dx * self.dy
    }
}

/// Bandwidth padding on each side of the data range.
const PAD_BANDWIDTHS: f64 = 4.0;

/// Gaussian product-kernel density with Scott's-rule bandwidths
/// `h = sd · n^(-1/6)`, evaluated on an `nx × ny` grid covering the data.
pub fn kde_grid(points: &[[f64; 2]], nx: usize, ny: usize) -> Result<DensityGrid> {
    if points.len() < 2 {
        return Err(Error::TooFewRows {
            needed: 2,
            available: points.len(),
        });
    }
    if nx < 2 || ny < 2 {
        return Err(Error::InvalidParameter("grid needs at least 2×2 cells".into()));
    }
    let n = points.len() as f64;
    let factor = n.powf(-1.0 / 6.0);
    let bandwidth: [f64; 2] = std::array::from_fn(|k| {
        let col: Vec<f64> = points.iter().map(|p| p[k]).collect();
        let sd = std_dev(&col);
        // a constant axis still gets a usable kernel
        if sd > 0.0 { sd * factor } else { 1e-3 }
    });
    let lo: [f64; 2] = std::array::from_fn(|k| {
        points.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min) - PAD_BANDWIDTHS * bandwidth[k]
    });
    let hi: [f64; 2] = std::array::from_fn(|k| {
        points.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max) + PAD_BANDWIDTHS * bandwidth[k]
    });
    let dx = (hi[0] - lo[0]) / nx as f64;
    let dy = (hi[1] - lo[1]) / ny as f64;
    let norm = 1.0 / (n * 2.0 * std::f64::consts::PI * bandwidth[0] * bandwidth[1]);
    let mut values = vec![0.0; nx * ny];
    for (r, row) in values.chunks_mut(nx).enumerate() {
        let y = lo[1] + (r as f64 + 0.5) * dy;
        for (c, v) in row.iter_mut().enumerate() {
            let x = lo[0] + (c as f64 + 0.5) * dx;
            let s: f64 = points
                .iter()
                .map(|p| {
                    let u = (x - p[0]) / bandwidth[0];
                    let w = (y - p[1]) / bandwidth[1];
                    (-0.5 * (u * u + w * w)).exp()
                })
                .sum();
            *v = s * norm;
        }
    }
    Ok(DensityGrid {
        x_min: lo[0],
        y_min: lo[1],
        dx,
        dy,
        nx,
        ny,
        bandwidth,
        values,
    })
}

/// The two bars drawn along one parallel-coordinate axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScentedBar {
    pub variable: String,
    /// Fraction of rows per bin; sums to 1.
    pub density: Vec<f64>,
    /// Mean target per bin rescaled to `[0,1]` across bins; `None` for empty bins.
    pub target_mean: Vec<Option<f64>>,
}

/// Bins normalized values `[0,1]` into `bins` equal intervals per axis.
pub fn scented_bars(
    names: &[String],
    points: &[Vec<f64>],
    target: &[f64],
    bins: usize,
) -> Result<Vec<ScentedBar>> {
    if bins == 0 {
        return Err(Error::InvalidParameter("bins must be >= 1".into()));
    }
    if points.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: points.len(),
            actual: target.len(),
        });
    }
    let bin_of = |v: f64| ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
    Ok(names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let mut counts = vec![0usize; bins];
            let mut sums = vec![0.0; bins];
            for (p, &t) in points.iter().zip(target) {
                let b = bin_of(p[j]);
                counts[b] += 1;
                sums[b] += t;
            }
            let total = points.len().max(1) as f64;
            let means: Vec<Option<f64>> = counts
                .iter()
                .zip(&sums)
                .map(|(&c, &s)| (c > 0).then(|| s / c as f64))
                .collect();
            let (lo, hi) = means.iter().flatten().fold((f64::INFINITY, f64::NEG_INFINITY), |a, &m| {
                (a.0.min(m), a.1.max(m))
            });
            ScentedBar {
                variable: name.clone(),
                density: counts.iter().map(|&c| c as f64 / total).collect(),
                target_mean: means
                    .iter()
                    .map(|m| m.map(|m| if hi > lo { (m - lo) / (hi - lo) } else { 0.5 }))
                    .collect(),
            }
        })
        .collect())
}
