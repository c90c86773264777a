//! Two-objective Pareto fronts, dominance area and the verification budget.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Orientation, Provenance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectivePair {
    pub names: [String; 2],
    pub orientation: [Orientation; 2],
    /// `(lo, hi)` per objective, in raw units.
    pub bounds: [(f64, f64); 2],
}

impl ObjectivePair {
    pub fn new(names: [&str; 2], orientation: [Orientation; 2], bounds: [(f64, f64); 2]) -> Self {
        Self {
            names: names.map(str::to_string),
            orientation,
            bounds,
        }
    }

    pub fn maximize_both(bounds: [(f64, f64); 2]) -> Self {
        Self::new(["f1", "f2"], [Orientation::Maximize; 2], bounds)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in self.names.iter().zip(self.bounds) {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::DegenerateBounds(name.clone()));
            }
        }
        Ok(())
    }

    /// Maps a raw objective vector into the unit square, oriented so larger is better.
    pub fn normalize(&self, p: [f64; 2]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for k in 0..2 {
            let (lo, hi) = self.bounds[k];
            let t = ((p[k] - lo) / (hi - lo)).clamp(0.0, 1.0);
            out[k] = match self.orientation[k] {
                Orientation::Maximize => t,
                Orientation::Minimize => 1.0 - t,
            };
        }
        out
    }

    /// True when `a` dominates `b`.
    pub fn dominates(&self, a: [f64; 2], b: [f64; 2]) -> bool {
        let oa = self.oriented(a);
        let ob = self.oriented(b);
        oa[0] >= ob[0] && oa[1] >= ob[1] && (oa[0] > ob[0] || oa[1] > ob[1])
    }

    fn oriented(&self, p: [f64; 2]) -> [f64; 2] {
        [
            p[0] * self.orientation[0].sign(),
            p[1] * self.orientation[1].sign(),
        ]
    }

    fn expand_to(&mut self, p: [f64; 2]) {
        for k in 0..2 {
            let (lo, hi) = &mut self.bounds[k];
            *lo = lo.min(p[k]);
            *hi = hi.max(p[k]);
        }
    }
}

/// Indices of the non-dominated points, sorted by ascending first objective.
///
/// Of several identical points only the lowest index is kept.
pub fn pareto_front(points: &[[f64; 2]], o: &ObjectivePair) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len())
        .filter(|&i| points[i][0].is_finite() && points[i][1].is_finite())
        .collect();
    let oriented: Vec<[f64; 2]> = points.iter().map(|&p| o.oriented(p)).collect();
    order.sort_by(|&a, &b| {
        oriented[b][0]
            .total_cmp(&oriented[a][0])
            .then(oriented[b][1].total_cmp(&oriented[a][1]))
            .then(a.cmp(&b))
    });
    let mut front = Vec::new();
    let mut best_y = f64::NEG_INFINITY;
    for i in order {
        if oriented[i][1] > best_y {
            best_y = oriented[i][1];
            front.push(i);
        }
    }
    front.sort_by(|&a, &b| points[a][0].total_cmp(&points[b][0]).then(a.cmp(&b)));
    front
}

/// Area of the normalized unit square dominated by the given points.
pub fn dominance_area(front: &[usize], points: &[[f64; 2]], o: &ObjectivePair) -> Result<f64> {
    o.validate()?;
    let normalized: Vec<[f64; 2]> = front.iter().map(|&i| o.normalize(points[i])).collect();
    Ok(union_area(normalized))
}

/// Area of the union of `[0,x]×[0,y]` rectangles.
pub(crate) fn union_area(mut pts: Vec<[f64; 2]>) -> f64 {
    pts.sort_by(|a, b| b[0].total_cmp(&a[0]));
    let mut area = 0.0;
    let mut best_y: f64 = 0.0;
    for (i, p) in pts.iter().enumerate() {
        best_y = best_y.max(p[1]);
        let next_x = pts.get(i + 1).map_or(0.0, |q| q[0]);
        area += (p[0] - next_x) * best_y;
    }
    area
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundsMode {
    /// User-declared bounds; the area is monotone.
    Fixed,
    /// Bounds grow with observed values. The area is *not* monotone in this mode.
    Running,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub objectives: [f64; 2],
    /// Dataset row id for existing points, proposal id for proposed ones.
    pub id: u64,
    pub provenance: Provenance,
    pub estimated: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOutcome {
    pub expanded: bool,
    pub area_before: f64,
    pub area_after: f64,
    pub budget_spent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoState {
    pub objectives: ObjectivePair,
    pub bounds_mode: BoundsMode,
    existing: Vec<ParetoPoint>,
    proposed: Vec<ParetoPoint>,
    front_existing: Vec<usize>,
    front_proposed: Vec<usize>,
    pub dominance_area: f64,
    pub budget_spent: f64,
    pub budget_cap: f64,
}

impl ParetoState {
    pub fn new(objectives: ObjectivePair, budget_cap: f64) -> Result<Self> {
        objectives.validate()?;
        Ok(Self {
            objectives,
            bounds_mode: BoundsMode::Fixed,
            existing: Vec::new(),
            proposed: Vec::new(),
            front_existing: Vec::new(),
            front_proposed: Vec::new(),
            dominance_area: 0.0,
            budget_spent: 0.0,
            budget_cap,
        })
    }

    pub fn with_bounds_mode(mut self, mode: BoundsMode) -> Self {
        self.bounds_mode = mode;
        self
    }

    /// Seeds the existing set without spending budget.
    pub fn with_existing(mut self, points: impl IntoIterator<Item = ParetoPoint>) -> Result<Self> {
        for p in points {
            if p.estimated {
                return Err(Error::InvalidParameter(
                    "estimated targets cannot join the existing front".into(),
                ));
            }
            if self.bounds_mode == BoundsMode::Running {
                self.objectives.expand_to(p.objectives);
            }
            self.existing.push(p);
        }
        self.recompute()?;
        Ok(self)
    }

    pub fn existing(&self) -> &[ParetoPoint] {
        &self.existing
    }

    pub fn proposed(&self) -> &[ParetoPoint] {
        &self.proposed
    }

    pub fn front_existing(&self) -> Vec<&ParetoPoint> {
        self.front_existing.iter().map(|&i| &self.existing[i]).collect()
    }

    pub fn front_proposed(&self) -> Vec<&ParetoPoint> {
        self.front_proposed.iter().map(|&i| &self.proposed[i]).collect()
    }

    pub fn budget_remaining(&self) -> f64 {
        self.budget_cap - self.budget_spent
    }

    pub fn set_proposed(&mut self, points: Vec<ParetoPoint>) {
        self.proposed = points;
        let objs: Vec<[f64; 2]> = self.proposed.iter().map(|p| p.objectives).collect();
        self.front_proposed = pareto_front(&objs, &self.objectives);
    }

    /// Area the existing front would cover if `p` were added.
    pub fn area_with(&self, p: [f64; 2]) -> f64 {
        let mut pts: Vec<[f64; 2]> = self
            .front_existing
            .iter()
            .map(|&i| self.objectives.normalize(self.existing[i].objectives))
            .collect();
        pts.push(self.objectives.normalize(p));
        union_area(pts)
    }

    fn recompute(&mut self) -> Result<()> {
        let objs: Vec<[f64; 2]> = self.existing.iter().map(|p| p.objectives).collect();
        self.front_existing = pareto_front(&objs, &self.objectives);
        self.dominance_area = dominance_area(&self.front_existing, &objs, &self.objectives)?;
        Ok(())
    }

    /// Adds a verified point and charges `cost` against the budget.
    ///
    /// Refused, leaving the state untouched, when the budget would be exceeded.
    pub fn update_on_verify(&mut self, point: ParetoPoint, cost: f64) -> Result<VerifyOutcome> {
        if point.estimated {
            return Err(Error::InvalidParameter(
                "verification requires measured targets".into(),
            ));
        }
        // small slack so fractional costs that sum exactly to the cap are not refused
        if self.budget_spent + cost > self.budget_cap + 1e-9 {
            return Err(Error::BudgetExhausted {
                spent: self.budget_spent,
                cap: self.budget_cap,
                requested: cost,
            });
        }
        let area_before = self.dominance_area;
        let before_front: Vec<u64> = self.front_existing.iter().map(|&i| self.existing[i].id).collect();
        if self.bounds_mode == BoundsMode::Running {
            self.objectives.expand_to(point.objectives);
        }
        self.proposed.retain(|p| p.id != point.id);
        let objs: Vec<[f64; 2]> = self.proposed.iter().map(|p| p.objectives).collect();
        self.front_proposed = pareto_front(&objs, &self.objectives);
        self.existing.push(point);
        self.budget_spent += cost;
        self.recompute()?;
        let after_front: Vec<u64> = self.front_existing.iter().map(|&i| self.existing[i].id).collect();
        Ok(VerifyOutcome {
            expanded: before_front != after_front,
            area_before,
            area_after: self.dominance_area,
            budget_spent: self.budget_spent,
        })
    }
}
