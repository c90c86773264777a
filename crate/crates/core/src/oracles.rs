//! Verification oracles: configuration in, measured targets out.
//!
//! The bundled oracles are analytic two-objective functions on the unit cube.
//! They stand in for an expensive black-box application.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Orientation;
use crate::pareto::ObjectivePair;

pub trait Oracle: Send + Sync {
    fn name(&self) -> &str;
    fn input_dim(&self) -> usize;
    /// Objective names, orientations and the range their values cover.
    fn objectives(&self) -> ObjectivePair;
    /// Measured target values for raw inputs, in objective order.
    fn evaluate(&self, x: &[f64]) -> Vec<f64>;
    fn cost(&self, _x: &[f64]) -> f64 {
        1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    QuadraticBowl,
    Multimodal,
    LinearNoise,
}

impl std::str::FromStr for OracleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic-bowl" | "quadratic" => Ok(OracleKind::QuadraticBowl),
            "multimodal" => Ok(OracleKind::Multimodal),
            "linear-noise" | "linear" => Ok(OracleKind::LinearNoise),
            other => Err(Error::Unknown {
                kind: "oracle",
                name: other.to_string(),
            }),
        }
    }
}

pub fn build_oracle(kind: OracleKind, dim: usize) -> Box<dyn Oracle> {
    match kind {
        OracleKind::QuadraticBowl => Box::new(QuadraticBowl::new(dim)),
        OracleKind::Multimodal => Box::new(Multimodal::new(dim)),
        OracleKind::LinearNoise => Box::new(LinearNoise::new(dim)),
    }
}

pub fn oracle_by_name(name: &str, dim: usize) -> Result<Box<dyn Oracle>> {
    Ok(build_oracle(name.parse()?, dim))
}

/// Two concave bowls centered at `(0.25, ...)` and `(0.75, ...)`.
///
/// `f_k(x) = 2 - |x - c_k|^2 / (0.5625 d)`, so values lie in `[1, 2]` and the
/// Pareto set is the segment between the centers.
#[derive(Clone, Debug)]
pub struct QuadraticBowl {
    dim: usize,
}

impl QuadraticBowl {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Oracle for QuadraticBowl {
    fn name(&self) -> &str {
        "quadratic-bowl"
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn objectives(&self) -> ObjectivePair {
        ObjectivePair::new(["f1", "f2"], [Orientation::Maximize; 2], [(1.0, 2.0), (1.0, 2.0)])
    }

    fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        let scale = 0.5625 * self.dim as f64;
        [0.25, 0.75]
            .iter()
            .map(|&c| 2.0 - x.iter().map(|v| (v - c).powi(2)).sum::<f64>() / scale)
            .collect()
    }
}

/// Rastrigin-style objectives: a quadratic bowl with cosine ripples, one
/// centered at `(0.3, ...)` and one at `(0.7, ...)`.
///
/// `f_k(x) = 1 - Σ_i [z_i² + A(1 - cos 2π z_i)] / (d (0.49 s² + 2A))` with
/// `z = s (x - c_k)`, `A = 1`, `s = 2`, so values lie in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Multimodal {
    dim: usize,
    amplitude: f64,
    scale: f64,
}

impl Multimodal {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            amplitude: 1.0,
            scale: 2.0,
        }
    }

    fn bowl(&self, x: &[f64], center: f64) -> f64 {
        let worst = self.dim as f64 * ((0.7 * self.scale).powi(2) + 2.0 * self.amplitude);
        let sum: f64 = x
            .iter()
            .map(|v| {
                let z = self.scale * (v - center);
                z * z + self.amplitude * (1.0 - (2.0 * PI * z).cos())
            })
            .sum();
        1.0 - sum / worst
    }
}

impl Oracle for Multimodal {
    fn name(&self) -> &str {
        "multimodal"
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn objectives(&self) -> ObjectivePair {
        ObjectivePair::new(["f1", "f2"], [Orientation::Maximize; 2], [(0.0, 1.0), (0.0, 1.0)])
    }

    fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        vec![self.bowl(x, 0.3), self.bowl(x, 0.7)]
    }
}

/// Opposing linear objectives with a small deterministic ripple as "noise".
#[derive(Clone, Debug)]
pub struct LinearNoise {
    dim: usize,
}

impl LinearNoise {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Oracle for LinearNoise {
    fn name(&self) -> &str {
        "linear-noise"
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn objectives(&self) -> ObjectivePair {
        ObjectivePair::new(["f1", "f2"], [Orientation::Maximize; 2], [(0.9, 2.1), (0.9, 2.1)])
    }

    fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim as f64;
        let a: f64 = x.iter().enumerate().map(|(i, v)| v * (1.0 + i as f64) ).sum::<f64>();
        let wsum = d * (d + 1.0) / 2.0;
        let b: f64 = x.iter().map(|v| 1.0 - v).sum::<f64>() / d;
        let ripple = 0.05 * x.iter().map(|v| (37.0 * v).sin()).sum::<f64>() / d;
        vec![1.0 + a / wsum + ripple, 1.0 + b - ripple]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_stay_within_declared_bounds() {
        for kind in [OracleKind::QuadraticBowl, OracleKind::Multimodal, OracleKind::LinearNoise] {
            let o = build_oracle(kind, 4);
            let obj = o.objectives();
            for i in 0..200 {
                let x: Vec<f64> = (0..4).map(|k| ((i * 7 + k * 13) % 97) as f64 / 96.0).collect();
                let y = o.evaluate(&x);
                for k in 0..2 {
                    assert!(y[k] >= obj.bounds[k].0 - 1e-12 && y[k] <= obj.bounds[k].1 + 1e-12, "{kind:?} {y:?}");
                }
            }
        }
    }

    #[test]
    fn bowl_peaks_at_centers() {
        let o = QuadraticBowl::new(3);
        assert_eq!(o.evaluate(&[0.25; 3])[0], 2.0);
        assert_eq!(o.evaluate(&[0.75; 3])[1], 2.0);
    }

    #[test]
    fn multimodal_peaks_at_centers() {
        let o = Multimodal::new(4);
        assert_eq!(o.evaluate(&[0.3; 4])[0], 1.0);
        assert_eq!(o.evaluate(&[0.7; 4])[1], 1.0);
        // a ripple trough half a period away is worse than the next crest
        assert!(o.evaluate(&[0.55; 4])[0] < o.evaluate(&[0.8; 4])[0]);
    }

    #[test]
    fn names_parse() {
        assert!(oracle_by_name("multimodal", 3).is_ok());
        assert!(matches!(oracle_by_name("nope", 3), Err(Error::Unknown { .. })));
    }
}
