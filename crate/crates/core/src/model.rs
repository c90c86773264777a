//! Dataset, configuration and constraint types shared by every module.
//!
//! All geometry runs on min-max normalized inputs in `[0, 1]^d`. The bounds
//! come from the seed dataset (or explicit manifest ranges) and stay frozen
//! for the lifetime of a dataset's version chain; later rows that fall
//! outside them are clamped for indexing but keep their raw values.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariableKind {
    Input,
    Target,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    Maximize,
    Minimize,
}

impl Orientation {
    /// `+1` for maximize, `-1` for minimize.
    pub fn sign(self) -> f64 {
        match self {
            Orientation::Maximize => 1.0,
            Orientation::Minimize => -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub kind: VariableKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation: Option<Orientation>,
}

impl VariableSpec {
    pub fn input(name: impl Into<String>, min: f64, max: f64) -> Self {
        Self {
            name: name.into(),
            min,
            max,
            kind: VariableKind::Input,
            orientation: None,
        }
    }

    pub fn target(name: impl Into<String>, min: f64, max: f64, orientation: Orientation) -> Self {
        Self {
            name: name.into(),
            min,
            max,
            kind: VariableKind::Target,
            orientation: Some(orientation),
        }
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Existing,
    Proposed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Seed,
    Esa,
    RandomSample,
    RandomWalk,
    ParetoImprovement,
    Blank,
    UserEdited,
    GradientRefined,
}

/// Target values attached to a configuration, tagged by where they came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", content = "values", rename_all = "kebab-case")]
pub enum TargetValues {
    Measured(Vec<f64>),
    Estimated(Vec<f64>),
}

impl TargetValues {
    pub fn values(&self) -> &[f64] {
        match self {
            TargetValues::Measured(v) | TargetValues::Estimated(v) => v,
        }
    }

    pub fn is_estimate(&self) -> bool {
        matches!(self, TargetValues::Estimated(_))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    /// Normalized input values, each in `[0, 1]`.
    pub values: Vec<f64>,
    /// Input values in raw units (may lie outside the frozen bounds).
    pub raw: Vec<f64>,
    pub targets: Option<TargetValues>,
    pub status: Status,
    pub provenance: Provenance,
    /// Per-row verification cost override.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
}

impl Configuration {
    pub fn is_existing(&self) -> bool {
        self.status == Status::Existing
    }

    /// Promotes a proposed configuration to an existing one with measured targets.
    ///
    /// There is deliberately no inverse: existing rows never go back to proposed.
    pub fn into_verified(mut self, measured: Vec<f64>, cost: Option<f64>) -> Configuration {
        self.status = Status::Existing;
        self.targets = Some(TargetValues::Measured(measured));
        if cost.is_some() {
            self.cost = cost;
        }
        self
    }

    pub fn with_estimate(mut self, estimate: Vec<f64>) -> Configuration {
        debug_assert_eq!(self.status, Status::Proposed);
        self.targets = Some(TargetValues::Estimated(estimate));
        self
    }
}

/// Result of [`Dataset::normalize`].
#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub values: Vec<f64>,
    /// Indices of components that fell outside `[min, max]` and were clamped.
    pub clamped: Vec<usize>,
}

/// An immutable dataset snapshot. Mutation produces a new version.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    variables: Vec<VariableSpec>,
    rows: Vec<Configuration>,
    version: u64,
}

impl Dataset {
    /// Creates an empty dataset after validating the variable list.
    pub fn new(variables: Vec<VariableSpec>) -> Result<Self> {
        let mut seen = HashSet::new();
        for v in &variables {
            if !seen.insert(v.name.as_str()) {
                return Err(Error::DuplicateVariable(v.name.clone()));
            }
            if !(v.min < v.max) || !v.min.is_finite() || !v.max.is_finite() {
                return Err(Error::DegenerateVariable(v.name.clone()));
            }
        }
        Ok(Self {
            variables,
            rows: Vec::new(),
            version: 0,
        })
    }

    /// Builds a seed dataset from raw rows of `(inputs, targets)`.
    pub fn from_raw_rows(
        variables: Vec<VariableSpec>,
        rows: impl IntoIterator<Item = (Vec<f64>, Vec<f64>)>,
    ) -> Result<Self> {
        let mut ds = Self::new(variables)?;
        for (inputs, targets) in rows {
            let cfg = ds.existing_from_raw(&inputs, targets, Provenance::Seed)?;
            ds.rows.push(cfg);
        }
        Ok(ds)
    }

    pub fn variables(&self) -> &[VariableSpec] {
        &self.variables
    }

    pub fn inputs(&self) -> impl Iterator<Item = &VariableSpec> {
        self.variables
            .iter()
            .filter(|v| v.kind == VariableKind::Input)
    }

    pub fn targets(&self) -> impl Iterator<Item = &VariableSpec> {
        self.variables
            .iter()
            .filter(|v| v.kind == VariableKind::Target)
    }

    pub fn input_dim(&self) -> usize {
        self.inputs().count()
    }

    pub fn target_dim(&self) -> usize {
        self.targets().count()
    }

    pub fn target_index(&self, name: &str) -> Result<usize> {
        self.targets()
            .position(|v| v.name == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn input_index(&self, name: &str) -> Result<usize> {
        self.inputs()
            .position(|v| v.name == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn rows(&self) -> &[Configuration] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Normalized input vectors of every row, in row order.
    pub fn points(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.values.clone()).collect()
    }

    /// Normalized input vectors of existing (verified) rows.
    pub fn existing_points(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .filter(|r| r.is_existing())
            .map(|r| r.values.clone())
            .collect()
    }

    /// Maps raw input values affinely onto `[0, 1]`, clamping out-of-range components.
    pub fn normalize(&self, raw: &[f64]) -> Result<Normalized> {
        let dim = self.input_dim();
        if raw.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: raw.len(),
            });
        }
        let mut clamped = Vec::new();
        let values = self
            .inputs()
            .zip(raw)
            .enumerate()
            .map(|(i, (spec, &x))| {
                let t = (x - spec.min) / spec.range();
                if !(0.0..=1.0).contains(&t) {
                    clamped.push(i);
                }
                t.clamp(0.0, 1.0)
            })
            .collect();
        Ok(Normalized { values, clamped })
    }

    pub fn denormalize(&self, normalized: &[f64]) -> Result<Vec<f64>> {
        let dim = self.input_dim();
        if normalized.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: normalized.len(),
            });
        }
        Ok(self
            .inputs()
            .zip(normalized)
            .map(|(spec, &t)| spec.min + t * spec.range())
            .collect())
    }

    pub fn existing_from_raw(
        &self,
        raw: &[f64],
        targets: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Configuration> {
        if targets.len() != self.target_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.target_dim(),
                actual: targets.len(),
            });
        }
        let normalized = self.normalize(raw)?;
        Ok(Configuration {
            values: normalized.values,
            raw: raw.to_vec(),
            targets: Some(TargetValues::Measured(targets)),
            status: Status::Existing,
            provenance,
            cost: None,
        })
    }

    /// A proposed configuration at a normalized position.
    pub fn proposed(&self, values: Vec<f64>, provenance: Provenance) -> Result<Configuration> {
        let raw = self.denormalize(&values)?;
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidParameter(format!(
                "normalized value {bad} outside [0, 1]"
            )));
        }
        Ok(Configuration {
            values,
            raw,
            targets: None,
            status: Status::Proposed,
            provenance,
            cost: None,
        })
    }

    /// Returns the next snapshot with `rows` appended. Only existing rows may be added.
    pub fn with_rows(&self, rows: impl IntoIterator<Item = Configuration>) -> Result<Dataset> {
        let mut next = self.clone();
        for row in rows {
            if row.values.len() != self.input_dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.input_dim(),
                    actual: row.values.len(),
                });
            }
            match &row.targets {
                Some(TargetValues::Measured(t)) if row.is_existing() => {
                    if t.len() != self.target_dim() {
                        return Err(Error::DimensionMismatch {
                            expected: self.target_dim(),
                            actual: t.len(),
                        });
                    }
                }
                _ => {
                    return Err(Error::InvalidParameter(
                        "only verified rows with measured targets can join a dataset".into(),
                    ))
                }
            }
            next.rows.push(row);
        }
        next.version += 1;
        Ok(next)
    }

    /// Appends a seed row in place, without bumping the version.
    pub(crate) fn push_seed(&mut self, row: Configuration) {
        self.rows.push(row);
    }

    /// Measured values of one target variable, with the row ids they came from.
    pub fn target_column(&self, target: usize) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .enumerate()
            .filter_map(|(id, r)| match &r.targets {
                Some(TargetValues::Measured(t)) => Some((id, t[target])),
                _ => None,
            })
            .collect()
    }
}

/// A user constraint `f(p) <= 0` on normalized coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Constraint {
    /// Axis-aligned box `lo <= p <= hi`.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// `coefficients . p + offset <= 0`.
    Halfspace { coefficients: Vec<f64>, offset: f64 },
    /// One variable restricted to `[lo, hi]`, as produced by PCP brushing.
    IntervalBrush { variable: usize, lo: f64, hi: f64 },
}

impl Constraint {
    pub fn is_satisfied(&self, p: &[f64]) -> bool {
        match self {
            Constraint::Box { lo, hi } => p
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(&x, (&l, &h))| x >= l && x <= h),
            Constraint::Halfspace {
                coefficients,
                offset,
            } => {
                let s: f64 = coefficients.iter().zip(p).map(|(a, x)| a * x).sum();
                s + offset <= 0.0
            }
            Constraint::IntervalBrush { variable, lo, hi } => match p.get(*variable) {
                Some(&x) => x >= *lo && x <= *hi,
                None => false,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Violation {
    /// Outside the implicit unit box.
    UnitBox,
    /// Index into the user constraint list.
    User(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstraintCheck {
    Satisfied,
    Violated(Violation),
}

impl ConstraintCheck {
    pub fn is_satisfied(self) -> bool {
        self == ConstraintCheck::Satisfied
    }
}

pub fn in_unit_box(p: &[f64]) -> bool {
    p.iter().all(|x| (0.0..=1.0).contains(x))
}

/// Checks the unit box first, then each user constraint in order.
pub fn evaluate_constraints(constraints: &[Constraint], p: &[f64]) -> ConstraintCheck {
    if !in_unit_box(p) {
        return ConstraintCheck::Violated(Violation::UnitBox);
    }
    check_user_constraints(constraints, p)
}

pub(crate) fn check_user_constraints(constraints: &[Constraint], p: &[f64]) -> ConstraintCheck {
    match constraints.iter().position(|c| !c.is_satisfied(p)) {
        Some(i) => ConstraintCheck::Violated(Violation::User(i)),
        None => ConstraintCheck::Satisfied,
    }
}
