//! Analysis sessions: search, estimate, edit, verify and retrain across the
//! Initial, Developed and Expert phases.
//!
//! A [`Session`] owns a chain of dataset snapshots, the Pareto state over two
//! target variables, the surrogate models and their phase state, and the
//! current proposals. Every mutation checks an optional expected dataset
//! version so clients working from a stale view are refused.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::density::{kde_grid, scented_bars, DensityGrid, ScentedBar};
use crate::error::{Error, Result};
use crate::esa::{EsaParams, Trajectory};
use crate::experiments::derive_seed;
use crate::knn::KdTree;
use crate::model::{Configuration, Constraint, Dataset, Orientation, Provenance, TargetValues};
use crate::oracles::Oracle;
use crate::pareto::{pareto_front, BoundsMode, ObjectivePair, ParetoPoint, ParetoState};
use crate::projection::{cos_mds, fit_pca, NeighborEmbedding, PcaModel, ScreeEntry};
use crate::strategies::{self, ProposalBatch};
use crate::surrogate::{
    advance_phase, refine, train, Differentiable, ErrorRecord, Phase, PhaseState, PhaseTransition, Surrogate,
    SurrogateConfig, MIN_TRAINING_ROWS,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    /// Names of the two target variables forming the objective pair.
    pub objectives: [String; 2],
    /// Fixed objective bounds; defaults to the target variables' ranges.
    pub objective_bounds: Option<[(f64, f64); 2]>,
    pub t1: f64,
    pub t2: f64,
    pub budget: f64,
    pub bounds_mode: BoundsMode,
    pub surrogate: SurrogateConfig,
    pub seed: u64,
    pub parallelism: usize,
    pub refine_steps: usize,
    pub refine_eta: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            objectives: ["f1".into(), "f2".into()],
            objective_bounds: None,
            t1: 20.0,
            t2: 10.0,
            budget: 50.0,
            bounds_mode: BoundsMode::Fixed,
            surrogate: SurrogateConfig::default(),
            seed: 0,
            parallelism: 0,
            refine_steps: 50,
            refine_eta: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Esa,
    RandomSample,
    RandomWalk,
    ParetoImprovement,
    Blank,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "esa" => Ok(Strategy::Esa),
            "random-sample" | "rs" => Ok(Strategy::RandomSample),
            "random-walk" | "rw" => Ok(Strategy::RandomWalk),
            "pareto-improvement" => Ok(Strategy::ParetoImprovement),
            "blank" => Ok(Strategy::Blank),
            other => Err(Error::Unknown {
                kind: "strategy",
                name: other.to_string(),
            }),
        }
    }
}

/// Restricts one input variable to a normalized interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Brush {
    pub variable: String,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchRequest {
    pub strategy: Strategy,
    pub batch_size: usize,
    pub esa: EsaParams,
    pub brushes: Vec<Brush>,
    /// Random-walk steps.
    pub walk_steps: usize,
    pub seed: Option<u64>,
    pub expected_version: Option<u64>,
}

impl Default for SearchRequest {
    fn default() -> Self {
        Self {
            strategy: Strategy::Esa,
            batch_size: 50,
            esa: EsaParams::default(),
            brushes: Vec::new(),
            walk_steps: 400,
            seed: None,
            expected_version: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub id: u64,
    pub configuration: Configuration,
    /// Input indices clamped to the unit box by the last edit.
    pub clamped: Vec<usize>,
}

impl Proposal {
    pub fn estimate(&self) -> Option<[f64; 2]> {
        match &self.configuration.targets {
            Some(TargetValues::Estimated(v)) if v.len() == 2 => Some([v[0], v[1]]),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub dataset_version: u64,
    pub phase: Phase,
    pub strategy: Strategy,
    pub seed: u64,
    pub proposals: Vec<Proposal>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableDelta {
    pub variable: String,
    /// Change in normalized units.
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditOutcome {
    pub dataset_version: u64,
    pub proposal: Proposal,
    /// Movement of the proposal in the global 2D overview.
    pub displacement: [f64; 2],
    pub clamped: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifiedEntry {
    pub pid: u64,
    pub row_id: usize,
    pub measured: Vec<f64>,
    pub cost: f64,
    pub expanded: bool,
    pub area_before: f64,
    pub area_after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub dataset_version: u64,
    pub verified: Vec<VerifiedEntry>,
    /// Ids that were already verified; nothing was spent on them.
    pub already_verified: Vec<u64>,
    /// Ids refused because the budget ran out.
    pub refused: Vec<u64>,
    pub warnings: Vec<String>,
    pub dominance_area: f64,
    pub budget_spent: f64,
    pub budget_cap: f64,
    pub ape: Option<f64>,
    pub phase: Phase,
    pub transition: Option<PhaseTransition>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementRecord {
    pub pid: u64,
    pub start_value: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u64,
    pub strategy: Strategy,
    pub phase_before: Phase,
    pub phase_after: Phase,
    pub proposals: usize,
    pub refinements: Vec<RefinementRecord>,
    pub verified: Vec<u64>,
    /// Verification stopped early because the budget ran out.
    pub truncated: bool,
    pub area_before: f64,
    pub area_after: f64,
    pub ape: Option<f64>,
    pub budget_spent: f64,
    pub budget_cap: f64,
    pub dataset_version: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgressSnapshot {
    pub dataset_version: u64,
    pub objectives: ObjectivePair,
    pub front_existing: Vec<ParetoPoint>,
    pub front_proposed: Vec<ParetoPoint>,
    pub dominance_area: f64,
    pub budget_spent: f64,
    pub budget_cap: f64,
    pub phase: Phase,
    pub t1: f64,
    pub t2: f64,
    pub error_history: Vec<ErrorRecord>,
}

/// Keeps rows whose measured target lies in `[lo, hi]` (raw units).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetFilter {
    pub target: String,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborRequest {
    pub pid: u64,
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewRequest {
    pub subset: Vec<TargetFilter>,
    pub use_global_pca: bool,
    pub neighbor: Option<NeighborRequest>,
    /// Target colouring the correlation bars; defaults to the first objective.
    pub bars_target: Option<String>,
    pub grid: usize,
    pub bins: usize,
}

impl Default for ViewRequest {
    fn default() -> Self {
        Self {
            subset: Vec::new(),
            use_global_pca: true,
            neighbor: None,
            bars_target: None,
            grid: 40,
            bins: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub id: u64,
    pub xy: [f64; 2],
    pub in_subset: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborView {
    pub pid: u64,
    pub k: usize,
    /// Dataset row ids, nearest first.
    pub neighbor_ids: Vec<usize>,
    /// Target value of each neighbor for coloring, first objective.
    pub neighbor_targets: Vec<f64>,
    pub embedding: NeighborEmbedding,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewBundle {
    pub dataset_version: u64,
    pub pca: PcaModel,
    pub scree: Vec<ScreeEntry>,
    pub loading_vectors: Vec<[f64; 2]>,
    pub existing: Vec<ProjectedPoint>,
    pub proposals: Vec<ProjectedPoint>,
    pub density: Option<DensityGrid>,
    pub bars: Vec<ScentedBar>,
    pub neighbor: Option<NeighborView>,
    pub progress: ProgressSnapshot,
}

/// Sum of oriented, range-scaled objective predictions.
pub struct Scalarized<'a> {
    models: [&'a Surrogate; 2],
    weights: [f64; 2],
}

impl Differentiable for Scalarized<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.models[0].predict(x) * self.weights[0] + self.models[1].predict(x) * self.weights[1]
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let a = self.models[0].gradient(x);
        let b = self.models[1].gradient(x);
        a.iter()
            .zip(&b)
            .map(|(ga, gb)| ga * self.weights[0] + gb * self.weights[1])
            .collect()
    }
}

#[derive(Clone)]
pub struct Session {
    config: SessionConfig,
    dataset: Arc<Dataset>,
    oracle: Arc<dyn Oracle>,
    /// Dataset target index of each objective.
    objective_idx: [usize; 2],
    pareto: ParetoState,
    phase: PhaseState,
    models: Option<[Surrogate; 2]>,
    proposals: BTreeMap<u64, Proposal>,
    /// Proposal id to the dataset row it became.
    verified: BTreeMap<u64, usize>,
    next_pid: u64,
    searches: u64,
    rounds: u64,
}

impl Session {
    pub fn new(dataset: Dataset, oracle: Arc<dyn Oracle>, config: SessionConfig) -> Result<Self> {
        let phase = PhaseState::new(config.t1, config.t2)?;
        if dataset.target_dim() != 2 {
            return Err(Error::InvalidParameter(format!(
                "a session needs exactly two target variables, the dataset has {}",
                dataset.target_dim()
            )));
        }
        if oracle.input_dim() != dataset.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: dataset.input_dim(),
                actual: oracle.input_dim(),
            });
        }
        let objective_idx = [
            dataset.target_index(&config.objectives[0])?,
            dataset.target_index(&config.objectives[1])?,
        ];
        if objective_idx[0] == objective_idx[1] {
            return Err(Error::InvalidParameter("the two objectives must differ".into()));
        }
        let targets: Vec<_> = dataset.targets().cloned().collect();
        let spec = |k: usize| &targets[objective_idx[k]];
        let bounds = config
            .objective_bounds
            .unwrap_or([(spec(0).min, spec(0).max), (spec(1).min, spec(1).max)]);
        let orientation = [0, 1].map(|k| spec(k).orientation.unwrap_or(Orientation::Maximize));
        let objectives = ObjectivePair::new(
            [config.objectives[0].as_str(), config.objectives[1].as_str()],
            orientation,
            bounds,
        );
        let pareto = ParetoState::new(objectives, config.budget)?
            .with_bounds_mode(config.bounds_mode)
            .with_existing(dataset.rows().iter().enumerate().filter_map(|(i, r)| {
                let t = match &r.targets {
                    Some(TargetValues::Measured(t)) => t,
                    _ => return None,
                };
                Some(ParetoPoint {
                    objectives: [t[objective_idx[0]], t[objective_idx[1]]],
                    id: i as u64,
                    provenance: r.provenance,
                    estimated: false,
                })
            }))?;
        config.surrogate.validate()?;
        let mut session = Self {
            config,
            dataset: Arc::new(dataset),
            oracle,
            objective_idx,
            pareto,
            phase,
            models: None,
            proposals: BTreeMap::new(),
            verified: BTreeMap::new(),
            next_pid: 0,
            searches: 0,
            rounds: 0,
        };
        session.retrain();
        Ok(session)
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn dataset(&self) -> Arc<Dataset> {
        Arc::clone(&self.dataset)
    }

    pub fn version(&self) -> u64 {
        self.dataset.version()
    }

    pub fn phase(&self) -> &PhaseState {
        &self.phase
    }

    pub fn pareto(&self) -> &ParetoState {
        &self.pareto
    }

    pub fn models(&self) -> Option<&[Surrogate; 2]> {
        self.models.as_ref()
    }

    pub fn proposals(&self) -> impl Iterator<Item = &Proposal> {
        self.proposals.values()
    }

    pub fn proposal(&self, pid: u64) -> Result<&Proposal> {
        self.proposals.get(&pid).ok_or_else(|| unknown_proposal(pid))
    }

    fn check_version(&self, expected: Option<u64>) -> Result<()> {
        match expected {
            Some(e) if e != self.version() => Err(Error::StaleVersion {
                expected: e,
                actual: self.version(),
            }),
            _ => Ok(()),
        }
    }

    /// Retrains both objective models when enough rows exist and advances the phase.
    fn retrain(&mut self) -> Option<PhaseTransition> {
        let rows = self.dataset.target_column(self.objective_idx[0]).len();
        if rows < MIN_TRAINING_ROWS {
            return None;
        }
        let fitted: Result<Vec<(Surrogate, f64)>> = self
            .objective_idx
            .iter()
            .map(|&t| train(&self.dataset, t, &self.config.surrogate))
            .collect();
        let fitted = fitted.ok()?;
        let ape = fitted.iter().map(|f| f.1).fold(0.0, f64::max);
        let mut it = fitted.into_iter().map(|f| f.0);
        self.models = Some([it.next()?, it.next()?]);
        let (next, transition) = advance_phase(&self.phase, self.version(), ape);
        self.phase = next;
        transition
    }

    fn scalarized(&self) -> Option<Scalarized<'_>> {
        let models = self.models.as_ref()?;
        let o = &self.pareto.objectives;
        let weights = [0, 1].map(|k| o.orientation[k].sign() / (o.bounds[k].1 - o.bounds[k].0));
        Some(Scalarized {
            models: [&models[0], &models[1]],
            weights,
        })
    }

    fn estimate(&self, x: &[f64]) -> Option<[f64; 2]> {
        if self.phase.phase == Phase::Initial {
            return None;
        }
        let m = self.models.as_ref()?;
        Some([m[0].predict(x), m[1].predict(x)])
    }

    /// Writes a two-objective estimate into a configuration's dataset-ordered targets.
    fn attach_estimate(&self, cfg: &mut Configuration) {
        cfg.targets = self.estimate(&cfg.values).map(|e| {
            let mut t = vec![0.0; 2];
            t[self.objective_idx[0]] = e[0];
            t[self.objective_idx[1]] = e[1];
            TargetValues::Estimated(t)
        });
    }

    fn objectives_of(&self, targets: &[f64]) -> [f64; 2] {
        [targets[self.objective_idx[0]], targets[self.objective_idx[1]]]
    }

    fn brush_constraints(&self, brushes: &[Brush]) -> Result<Vec<Constraint>> {
        brushes
            .iter()
            .map(|b| {
                if !(0.0..=1.0).contains(&b.lo) || !(0.0..=1.0).contains(&b.hi) || b.lo > b.hi {
                    return Err(Error::InvalidParameter(format!(
                        "brush on `{}` must satisfy 0 <= lo <= hi <= 1",
                        b.variable
                    )));
                }
                Ok(Constraint::IntervalBrush {
                    variable: self.dataset.input_index(&b.variable)?,
                    lo: b.lo,
                    hi: b.hi,
                })
            })
            .collect()
    }

    /// Score used to rank candidates: estimated area gain, then the scalarized estimate.
    fn candidate_key(&self, x: &[f64]) -> (f64, f64) {
        match (self.estimate(x), self.scalarized()) {
            (Some(e), Some(s)) => (self.pareto.area_with(e) - self.pareto.dominance_area, s.value(x)),
            _ => (0.0, 0.0),
        }
    }

    /// Trajectory end, or with a trained model in use, the best-estimated sample.
    fn pick_from_trajectory(&self, t: &Trajectory) -> Vec<f64> {
        if self.estimate(t.end()).is_none() {
            return t.end().to_vec();
        }
        let mut best: Option<(&[f64], (f64, f64))> = None;
        for s in t.candidates() {
            let key = self.candidate_key(&s.position);
            if best.is_none_or(|(_, b)| key.0 > b.0 || (key.0 == b.0 && key.1 > b.1)) {
                best = Some((&s.position, key));
            }
        }
        best.map_or_else(|| t.end().to_vec(), |(p, _)| p.to_vec())
    }

    fn generate(&self, req: &SearchRequest, seed: u64, constraints: &[Constraint]) -> Result<ProposalBatch> {
        let ds = &self.dataset;
        match req.strategy {
            Strategy::Esa => {
                let mut params = req.esa.clone();
                params.constraints.extend_from_slice(constraints);
                let (mut batch, trajectories) =
                    strategies::esa_search(ds, &params, req.batch_size, seed, self.config.parallelism)?;
                for (cfg, t) in batch.configurations.iter_mut().zip(&trajectories) {
                    *cfg = ds.proposed(self.pick_from_trajectory(t), Provenance::Esa)?;
                }
                Ok(batch)
            }
            Strategy::RandomSample => strategies::random_sampling(ds, req.batch_size, seed, constraints),
            Strategy::RandomWalk => {
                let starts = strategies::random_points(ds.input_dim(), req.batch_size, seed, constraints)?;
                let paths = strategies::random_walk_paths(&starts, req.walk_steps, req.esa.alpha, req.walk_steps.max(1), seed);
                let configurations = paths
                    .into_iter()
                    .map(|mut path| {
                        let mut end = path.pop().expect("path holds its start");
                        clamp_to_brushes(&mut end, constraints);
                        ds.proposed(end, Provenance::RandomWalk)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(ProposalBatch {
                    batch_size: configurations.len(),
                    configurations,
                    strategy: Provenance::RandomWalk,
                    seed,
                })
            }
            Strategy::ParetoImprovement => {
                let mut batch = strategies::pareto_improvement(ds, &self.pareto, usize::MAX.min(4 * req.batch_size.max(1)), seed)?;
                batch.configurations.retain(|c| constraints.iter().all(|k| k.is_satisfied(&c.values)));
                if batch.configurations.is_empty() {
                    return Err(Error::EmptyFront);
                }
                let members = batch.configurations.clone();
                batch.configurations = (0..req.batch_size).map(|i| members[i % members.len()].clone()).collect();
                batch.batch_size = batch.configurations.len();
                Ok(batch)
            }
            Strategy::Blank => {
                let blank = strategies::blank_baseline(ds)?;
                if !constraints.iter().all(|k| k.is_satisfied(&blank.values)) {
                    return Err(Error::InvalidParameter("the blank configuration lies outside the brushes".into()));
                }
                Ok(ProposalBatch {
                    configurations: vec![blank],
                    strategy: Provenance::Blank,
                    batch_size: 1,
                    seed,
                })
            }
        }
    }

    fn refresh_proposed_front(&mut self) {
        let points = self
            .proposals
            .values()
            .filter_map(|p| {
                p.estimate().map(|e| ParetoPoint {
                    objectives: self.objectives_of(&e),
                    id: p.id,
                    provenance: p.configuration.provenance,
                    estimated: true,
                })
            })
            .collect();
        self.pareto.set_proposed(points);
    }

    /// Runs a strategy and stores its proposals.
    pub fn search(&mut self, req: &SearchRequest) -> Result<SearchOutcome> {
        self.check_version(req.expected_version)?;
        let constraints = self.brush_constraints(&req.brushes)?;
        let seed = req.seed.unwrap_or_else(|| derive_seed(self.config.seed, self.searches));
        let batch = self.generate(req, seed, &constraints)?;
        self.searches += 1;
        let mut out = Vec::with_capacity(batch.configurations.len());
        for mut cfg in batch.configurations {
            if cfg.targets.is_none() || self.phase.phase != Phase::Initial {
                self.attach_estimate(&mut cfg);
            }
            let id = self.next_pid;
            self.next_pid += 1;
            let p = Proposal {
                id,
                configuration: cfg,
                clamped: Vec::new(),
            };
            self.proposals.insert(id, p.clone());
            out.push(p);
        }
        self.refresh_proposed_front();
        Ok(SearchOutcome {
            dataset_version: self.version(),
            phase: self.phase.phase,
            strategy: req.strategy,
            seed,
            proposals: out,
        })
    }

    /// Global two-component overview of the existing rows.
    fn overview_pca(&self) -> Result<PcaModel> {
        let points = self.dataset.existing_points();
        let d = self.dataset.input_dim();
        Ok(fit_pca(&points, d.min(2))?)
    }

    /// Applies per-variable normalized deltas to a proposal.
    pub fn edit(&mut self, pid: u64, deltas: &[VariableDelta], expected_version: Option<u64>) -> Result<EditOutcome> {
        self.check_version(expected_version)?;
        if self.verified.contains_key(&pid) {
            return Err(Error::InvalidParameter(format!("proposal {pid} is already verified")));
        }
        let current = self.proposal(pid)?.configuration.values.clone();
        let mut values = current.clone();
        let mut clamped = Vec::new();
        for d in deltas {
            let j = self.dataset.input_index(&d.variable)?;
            let target = values[j] + d.delta;
            values[j] = target.clamp(0.0, 1.0);
            if values[j] != target && !clamped.contains(&j) {
                clamped.push(j);
            }
        }
        let pca = self.overview_pca()?;
        let mut displacement = [0.0; 2];
        for (j, (new, old)) in values.iter().zip(&current).enumerate() {
            let applied = new - old;
            if applied != 0.0 {
                for (acc, v) in displacement.iter_mut().zip(pca.move_delta(j, applied)?) {
                    *acc += v;
                }
            }
        }
        let mut cfg = self.dataset.proposed(values, Provenance::UserEdited)?;
        self.attach_estimate(&mut cfg);
        let proposal = Proposal {
            id: pid,
            configuration: cfg,
            clamped: clamped.clone(),
        };
        self.proposals.insert(pid, proposal.clone());
        self.refresh_proposed_front();
        let names: Vec<String> = self.dataset.inputs().map(|v| v.name.clone()).collect();
        Ok(EditOutcome {
            dataset_version: self.version(),
            proposal,
            displacement,
            clamped: clamped.into_iter().map(|j| names[j].clone()).collect(),
        })
    }

    /// Measures proposals with the oracle and adds them to the dataset.
    ///
    /// Ids already verified are reported and skipped. Verification stops at
    /// the first proposal the budget cannot cover; the rest are refused.
    pub fn verify(&mut self, pids: &[u64], expected_version: Option<u64>) -> Result<VerifyReport> {
        self.check_version(expected_version)?;
        for pid in pids {
            if !self.proposals.contains_key(pid) && !self.verified.contains_key(pid) {
                return Err(unknown_proposal(*pid));
            }
        }
        let mut verified = Vec::new();
        let mut already_verified = Vec::new();
        let mut refused = Vec::new();
        let mut warnings = Vec::new();
        let mut new_rows = Vec::new();
        let mut exhausted = false;
        let mut seen = std::collections::BTreeSet::new();
        for &pid in pids {
            if self.verified.contains_key(&pid) || !seen.insert(pid) {
                already_verified.push(pid);
                warnings.push(format!("proposal {pid} is already verified; nothing spent"));
                continue;
            }
            if exhausted {
                refused.push(pid);
                continue;
            }
            let proposal = &self.proposals[&pid];
            let raw = proposal.configuration.raw.clone();
            let cost = self.oracle.cost(&raw);
            let measured = self.oracle.evaluate(&raw);
            let mut targets = vec![0.0; 2];
            targets[self.objective_idx[0]] = measured[0];
            targets[self.objective_idx[1]] = measured[1];
            let row_id = self.dataset.len() + new_rows.len();
            let point = ParetoPoint {
                objectives: [measured[0], measured[1]],
                id: row_id as u64,
                provenance: proposal.configuration.provenance,
                estimated: false,
            };
            match self.pareto.update_on_verify(point, cost) {
                Ok(outcome) => {
                    let cfg = proposal.configuration.clone().into_verified(targets.clone(), Some(cost));
                    new_rows.push(cfg);
                    self.verified.insert(pid, row_id);
                    verified.push(VerifiedEntry {
                        pid,
                        row_id,
                        measured: targets,
                        cost,
                        expanded: outcome.expanded,
                        area_before: outcome.area_before,
                        area_after: outcome.area_after,
                    });
                }
                Err(Error::BudgetExhausted { .. }) => {
                    exhausted = true;
                    refused.push(pid);
                }
                Err(e) => return Err(e),
            }
        }
        if !refused.is_empty() {
            warnings.push(format!(
                "budget exhausted ({} of {} spent); {} verification(s) refused",
                self.pareto.budget_spent,
                self.pareto.budget_cap,
                refused.len()
            ));
        }
        let mut transition = None;
        if !new_rows.is_empty() {
            for v in &verified {
                self.proposals.remove(&v.pid);
            }
            self.dataset = Arc::new(self.dataset.with_rows(new_rows)?);
            transition = self.retrain();
            // estimates follow the retrained model
            let ids: Vec<u64> = self.proposals.keys().copied().collect();
            for id in ids {
                let mut cfg = self.proposals[&id].configuration.clone();
                if !matches!(cfg.provenance, Provenance::ParetoImprovement) {
                    self.attach_estimate(&mut cfg);
                }
                self.proposals.get_mut(&id).expect("listed").configuration = cfg;
            }
            self.refresh_proposed_front();
        }
        if refused.len() == pids.len() && !pids.is_empty() {
            return Err(Error::BudgetExhausted {
                spent: self.pareto.budget_spent,
                cap: self.pareto.budget_cap,
                requested: 1.0,
            });
        }
        Ok(VerifyReport {
            dataset_version: self.version(),
            verified,
            already_verified,
            refused,
            warnings,
            dominance_area: self.pareto.dominance_area,
            budget_spent: self.pareto.budget_spent,
            budget_cap: self.pareto.budget_cap,
            ape: self.phase.latest_ape(),
            phase: self.phase.phase,
            transition,
        })
    }

    /// One automated round: search, then phase-gated refinement and verification.
    pub fn run_round(&mut self, req: &SearchRequest, verify_budget: usize) -> Result<RoundReport> {
        let phase_before = self.phase.phase;
        let area_before = self.pareto.dominance_area;
        let outcome = self.search(req)?;
        let mut ids: Vec<u64> = outcome.proposals.iter().map(|p| p.id).collect();
        let mut refinements = Vec::new();

        if phase_before == Phase::Expert {
            let constraints = self.brush_constraints(&req.brushes)?;
            let mut all = req.esa.constraints.clone();
            all.extend(constraints);
            for &pid in &ids {
                let start = self.proposals[&pid].configuration.values.clone();
                let Some(objective) = self.scalarized() else { break };
                let r = refine(&objective, &start, self.config.refine_steps, self.config.refine_eta, &all);
                refinements.push(RefinementRecord {
                    pid,
                    start_value: r.start_value,
                    value: r.value,
                });
                if r.point != start {
                    let mut cfg = self.dataset.proposed(r.point, Provenance::GradientRefined)?;
                    self.attach_estimate(&mut cfg);
                    self.proposals.get_mut(&pid).expect("just created").configuration = cfg;
                }
            }
            self.refresh_proposed_front();
        }

        let mut verified = Vec::new();
        let mut truncated = false;
        if phase_before != Phase::Initial && verify_budget > 0 {
            let estimates: Vec<[f64; 2]> = ids
                .iter()
                .map(|id| self.proposals[id].estimate().map(|e| self.objectives_of(&e)))
                .collect::<Option<Vec<_>>>()
                .unwrap_or_default();
            if estimates.len() == ids.len() {
                let front = pareto_front(&estimates, &self.pareto.objectives);
                let mut ranked: Vec<(f64, u64)> = front
                    .into_iter()
                    .map(|i| (self.pareto.area_with(estimates[i]) - self.pareto.dominance_area, ids[i]))
                    .collect();
                ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                ids = ranked.into_iter().map(|(_, id)| id).collect();
                let affordable = self.pareto.budget_remaining().max(0.0).floor() as usize;
                let take = ids.len().min(verify_budget);
                if take > affordable {
                    truncated = true;
                }
                let chosen: Vec<u64> = ids.into_iter().take(take.min(affordable)).collect();
                if !chosen.is_empty() {
                    let report = self.verify(&chosen, None)?;
                    truncated |= !report.refused.is_empty();
                    verified = report.verified.into_iter().map(|v| v.pid).collect();
                }
            }
        }
        self.rounds += 1;
        Ok(RoundReport {
            round: self.rounds,
            strategy: req.strategy,
            phase_before,
            phase_after: self.phase.phase,
            proposals: outcome.proposals.len(),
            refinements,
            verified,
            truncated,
            area_before,
            area_after: self.pareto.dominance_area,
            ape: self.phase.latest_ape(),
            budget_spent: self.pareto.budget_spent,
            budget_cap: self.pareto.budget_cap,
            dataset_version: self.version(),
        })
    }

    pub fn progress(&self) -> ProgressSnapshot {
        ProgressSnapshot {
            dataset_version: self.version(),
            objectives: self.pareto.objectives.clone(),
            front_existing: self.pareto.front_existing().into_iter().cloned().collect(),
            front_proposed: self.pareto.front_proposed().into_iter().cloned().collect(),
            dominance_area: self.pareto.dominance_area,
            budget_spent: self.pareto.budget_spent,
            budget_cap: self.pareto.budget_cap,
            phase: self.phase.phase,
            t1: self.phase.t1,
            t2: self.phase.t2,
            error_history: self.phase.error_history.clone(),
        }
    }

    /// The data bundle behind the overview, parallel coordinates, neighbor
    /// plot and progress panels.
    pub fn view(&self, req: &ViewRequest) -> Result<ViewBundle> {
        let ds = &self.dataset;
        let filters = req
            .subset
            .iter()
            .map(|f| Ok((ds.target_index(&f.target)?, f.lo, f.hi)))
            .collect::<Result<Vec<_>>>()?;
        let rows: Vec<(usize, &Configuration)> = ds.rows().iter().enumerate().filter(|(_, r)| r.is_existing()).collect();
        let in_subset: Vec<bool> = rows
            .iter()
            .map(|(_, r)| {
                let t = r.targets.as_ref().map(|t| t.values()).unwrap_or(&[]);
                filters.iter().all(|&(k, lo, hi)| t.get(k).is_some_and(|v| (lo..=hi).contains(v)))
            })
            .collect();
        let subset_points: Vec<Vec<f64>> = rows
            .iter()
            .zip(&in_subset)
            .filter(|(_, &keep)| keep)
            .map(|((_, r), _)| r.values.clone())
            .collect();
        let fit_on = if req.use_global_pca {
            rows.iter().map(|(_, r)| r.values.clone()).collect()
        } else {
            subset_points.clone()
        };
        let full = fit_pca(&fit_on, ds.input_dim())?;
        let pca = full.truncated(2);
        let xy = |p: &[f64]| -> Result<[f64; 2]> {
            let v = pca.project(p)?;
            Ok([v[0], v.get(1).copied().unwrap_or(0.0)])
        };
        let existing = rows
            .iter()
            .zip(&in_subset)
            .map(|((id, r), &keep)| {
                Ok(ProjectedPoint {
                    id: *id as u64,
                    xy: xy(&r.values)?,
                    in_subset: keep,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let proposals = self
            .proposals
            .values()
            .map(|p| {
                Ok(ProjectedPoint {
                    id: p.id,
                    xy: xy(&p.configuration.values)?,
                    in_subset: true,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let projected_subset: Vec<[f64; 2]> = existing.iter().filter(|p| p.in_subset).map(|p| p.xy).collect();
        let density = kde_grid(&projected_subset, req.grid.max(2), req.grid.max(2)).ok();

        let bars_target = match &req.bars_target {
            Some(name) => ds.target_index(name)?,
            None => self.objective_idx[0],
        };
        let subset_targets: Vec<f64> = rows
            .iter()
            .zip(&in_subset)
            .filter(|(_, &keep)| keep)
            .map(|((_, r), _)| r.targets.as_ref().map_or(f64::NAN, |t| t.values()[bars_target]))
            .collect();
        let names: Vec<String> = ds.inputs().map(|v| v.name.clone()).collect();
        let bars = scented_bars(&names, &subset_points, &subset_targets, req.bins.max(1))?;

        let neighbor = match &req.neighbor {
            None => None,
            Some(n) => {
                let p = self.proposal(n.pid)?;
                let points = ds.existing_points();
                let ids: Vec<usize> = rows.iter().map(|(id, _)| *id).collect();
                let tree = KdTree::build(&points)?;
                let ns = tree.query(&p.configuration.values, n.k);
                let neighbors: Vec<Vec<f64>> = ns.indices.iter().map(|&i| points[i].clone()).collect();
                let embedding = cos_mds(&p.configuration.values, &neighbors)?;
                let neighbor_ids: Vec<usize> = ns.indices.iter().map(|&i| ids[i]).collect();
                let neighbor_targets = neighbor_ids
                    .iter()
                    .map(|&id| ds.rows()[id].targets.as_ref().map_or(f64::NAN, |t| t.values()[self.objective_idx[0]]))
                    .collect();
                Some(NeighborView {
                    pid: n.pid,
                    k: n.k,
                    neighbor_ids,
                    neighbor_targets,
                    embedding,
                })
            }
        };
        Ok(ViewBundle {
            dataset_version: self.version(),
            loading_vectors: (0..ds.input_dim())
                .map(|j| {
                    let l = pca.loading_vector(j);
                    [l[0], l.get(1).copied().unwrap_or(0.0)]
                })
                .collect(),
            scree: full.scree(),
            pca,
            existing,
            proposals,
            density,
            bars,
            neighbor,
            progress: self.progress(),
        })
    }
}

fn unknown_proposal(pid: u64) -> Error {
    Error::Unknown {
        kind: "proposal",
        name: pid.to_string(),
    }
}

fn clamp_to_brushes(p: &mut [f64], constraints: &[Constraint]) {
    for c in constraints {
        if let Constraint::IntervalBrush { variable, lo, hi } = c {
            if let Some(v) = p.get_mut(*variable) {
                *v = v.clamp(*lo, *hi);
            }
        }
    }
}
