//! Lennard-Jones empty-space search.
//!
//! Each agent is pushed away from neighbors closer than the equilibrium
//! distance `2^(1/6) σ` and pulled toward those farther out. It walks along
//! the resultant force of its `k` nearest data points, optionally smoothed by
//! a discounted momentum, and its trajectory is sampled every `j` steps.
//!
//! Sign convention: [`lj_force_magnitude`] is positive when repulsive. The
//! resultant orients every contribution so a positive force pushes the agent
//! *away* from its neighbor, i.e. `ΣF = Σ -u_i F(r_i)` with `u_i` pointing
//! from the agent to neighbor `i`. This equals `-dV/dr` summed over
//! neighbors, so short range repels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knn::{KdTree, NeighborSet};
use crate::model::{check_user_constraints, evaluate_constraints, Constraint, ConstraintCheck, Violation};
use crate::par;

/// `V(r) = 4ε[(σ/r)^12 - (σ/r)^6]`.
pub fn lj_potential(r: f64, epsilon: f64, sigma: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::NonPositiveDistance(r));
    }
    let s6 = (sigma / r).powi(6);
    Ok(4.0 * epsilon * (s6 * s6 - s6))
}

/// `F(r) = 24(ε/σ)[2(σ/r)^13 - (σ/r)^7]`, positive when repulsive.
pub fn lj_force_magnitude(r: f64, epsilon: f64, sigma: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::NonPositiveDistance(r));
    }
    Ok(force_unchecked(r, epsilon, sigma))
}

#[inline]
fn force_unchecked(r: f64, epsilon: f64, sigma: f64) -> f64 {
    let s = sigma / r;
    let s7 = s.powi(7);
    24.0 * (epsilon / sigma) * (2.0 * s7 * s.powi(6) - s7)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum SigmaMode {
    Fixed { sigma: f64 },
    /// Mean distance of the current `k` neighbors, recomputed every step.
    MeanKnn,
}

/// Search parameters. Serialized field names follow the algorithm's symbols.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EsaParams {
    pub k: usize,
    pub sigma_mode: SigmaMode,
    pub epsilon: f64,
    /// Maximum number of steps.
    #[serde(rename = "n")]
    pub max_steps: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub delta: f64,
    /// Rollout interval: a trajectory sample is taken every `j` steps.
    #[serde(rename = "j")]
    pub interval: usize,
    pub constraints: Vec<Constraint>,
    /// Normalize the blended direction before moving (off by default).
    pub renormalize_step: bool,
    /// Enforce the implicit unit box. Disabled only for extrapolation runs.
    pub bounded: bool,
}

impl Default for EsaParams {
    fn default() -> Self {
        Self {
            k: 9,
            sigma_mode: SigmaMode::MeanKnn,
            epsilon: 1.0,
            max_steps: 400,
            alpha: 0.001,
            gamma: 0.9,
            delta: 1e-7,
            interval: 10,
            constraints: Vec::new(),
            renormalize_step: false,
            bounded: true,
        }
    }
}

impl EsaParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.k < 1 {
            return bad("k must be >= 1");
        }
        if self.max_steps < 1 {
            return bad("n must be >= 1");
        }
        if !(self.alpha > 0.0) {
            return bad("alpha must be > 0");
        }
        if !(self.delta > 0.0) {
            return bad("delta must be > 0");
        }
        if self.interval < 1 {
            return bad("j must be >= 1");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be > 0");
        }
        if let SigmaMode::Fixed { sigma } = self.sigma_mode {
            if !(sigma > 0.0) {
                return bad("sigma must be > 0");
            }
        }
        Ok(())
    }

    fn check(&self, p: &[f64]) -> ConstraintCheck {
        if self.bounded {
            evaluate_constraints(&self.constraints, p)
        } else {
            check_user_constraints(&self.constraints, p)
        }
    }

    fn momentum_enabled(&self) -> bool {
        self.gamma > 0.0
    }
}

pub fn effective_sigma(ns: &NeighborSet, params: &EsaParams) -> f64 {
    match params.sigma_mode {
        SigmaMode::Fixed { sigma } => sigma,
        SigmaMode::MeanKnn => {
            if ns.is_empty() {
                0.0
            } else {
                ns.distances.iter().sum::<f64>() / ns.len() as f64
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Resultant {
    pub force: Vec<f64>,
    pub magnitude: f64,
    /// `force / magnitude`, or `None` when the magnitude is below `delta`.
    pub direction: Option<Vec<f64>>,
}

pub fn resultant(p: &[f64], ns: &NeighborSet, params: &EsaParams) -> Resultant {
    let sigma = effective_sigma(ns, params);
    let mut force = vec![0.0; p.len()];
    if sigma > 0.0 {
        for (u, &r) in ns.unit_vectors.iter().zip(&ns.distances) {
            let f = force_unchecked(r, params.epsilon, sigma);
            for (acc, ui) in force.iter_mut().zip(u) {
                *acc -= ui * f;
            }
        }
    }
    let magnitude = norm(&force);
    let direction = if magnitude < params.delta {
        None
    } else {
        Some(force.iter().map(|x| x / magnitude).collect())
    };
    Resultant {
        force,
        magnitude,
        direction,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub position: Vec<f64>,
    /// Unit vector, or all zeros before the first step.
    pub momentum: Vec<f64>,
    /// Discounted sum of past force magnitudes.
    pub cumulative: f64,
    pub step: usize,
}

impl AgentState {
    pub fn new(position: Vec<f64>) -> Self {
        let d = position.len();
        Self {
            position,
            momentum: vec![0.0; d],
            cumulative: 0.0,
            step: 0,
        }
    }
}

/// `d' = (d |ΣF| + m L) / (L + |ΣF|)`.
pub fn blend_direction(direction: &[f64], magnitude: f64, momentum: &[f64], cumulative: f64) -> Vec<f64> {
    let denom = cumulative + magnitude;
    direction
        .iter()
        .zip(momentum)
        .map(|(d, m)| (d * magnitude + m * cumulative) / denom)
        .collect()
}

/// Applies one movement given the force direction and magnitude.
///
/// With `gamma == 0` the agent moves along `direction` and the momentum
/// accumulators stay at zero.
pub fn apply_movement(state: &AgentState, direction: &[f64], magnitude: f64, params: &EsaParams) -> AgentState {
    if !params.momentum_enabled() {
        let step = scaled_step(direction, params);
        return AgentState {
            position: add(&state.position, &step),
            momentum: state.momentum.clone(),
            cumulative: state.cumulative,
            step: state.step + 1,
        };
    }
    let blended = blend_direction(direction, magnitude, &state.momentum, state.cumulative);
    let step = scaled_step(&blended, params);
    let position = add(&state.position, &step);
    let cumulative = params.gamma * state.cumulative + magnitude;
    let mut momentum: Vec<f64> = state
        .momentum
        .iter()
        .zip(&blended)
        .map(|(m, d)| params.gamma * m + d)
        .collect();
    let mn = norm(&momentum);
    if mn > 0.0 {
        momentum.iter_mut().for_each(|x| *x /= mn);
    }
    AgentState {
        position,
        momentum,
        cumulative,
        step: state.step + 1,
    }
}

fn scaled_step(direction: &[f64], params: &EsaParams) -> Vec<f64> {
    if params.renormalize_step {
        let n = norm(direction);
        if n > 0.0 {
            return direction.iter().map(|x| x / n * params.alpha).collect();
        }
    }
    direction.iter().map(|x| x * params.alpha).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum Termination {
    /// `|ΣF| < δ`.
    Vanished,
    ConstraintViolated { violation: Violation },
    StepLimit,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    Moved(AgentState),
    Terminated(Termination),
}

/// One iteration of the search loop (neighbors, force, blend, move, check).
pub fn step(state: &AgentState, index: &KdTree, params: &EsaParams) -> StepOutcome {
    step_with_context(state, index, params).0
}

fn step_with_context(state: &AgentState, index: &KdTree, params: &EsaParams) -> (StepOutcome, f64) {
    let ns = index.query(&state.position, params.k);
    let mean_distance = if ns.is_empty() {
        0.0
    } else {
        ns.distances.iter().sum::<f64>() / ns.len() as f64
    };
    let res = resultant(&state.position, &ns, params);
    let Some(direction) = res.direction else {
        return (StepOutcome::Terminated(Termination::Vanished), mean_distance);
    };
    let next = apply_movement(state, &direction, res.magnitude, params);
    let outcome = match params.check(&next.position) {
        ConstraintCheck::Satisfied => StepOutcome::Moved(next),
        ConstraintCheck::Violated(violation) => {
            StepOutcome::Terminated(Termination::ConstraintViolated { violation })
        }
    };
    (outcome, mean_distance)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleKind {
    /// The random starting position (step 0).
    Start,
    /// Taken on the `j`-step grid.
    Rollout,
    /// The converged or last valid position, off the grid.
    Final,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub step: usize,
    pub position: Vec<f64>,
    pub kind: SampleKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub termination: Termination,
    /// Mean neighbor distance at the last force evaluation. Distinguishes a
    /// vanishing force far from the data from one inside a balanced pocket.
    pub terminal_neighbor_distance: f64,
}

impl Trajectory {
    /// The end of the trajectory: the ESC when momentum is off.
    pub fn end(&self) -> &[f64] {
        &self.samples.last().expect("trajectory is never empty").position
    }

    /// Samples usable as ESC candidates: everything except the random start,
    /// unless the start is all there is.
    pub fn candidates(&self) -> impl Iterator<Item = &Sample> {
        let only_start = self.samples.len() == 1;
        self.samples
            .iter()
            .filter(move |s| only_start || s.kind != SampleKind::Start)
    }
}

pub fn run_agent(start: &[f64], index: &KdTree, params: &EsaParams) -> Result<Trajectory> {
    params.validate()?;
    if start.len() != index.dim() {
        return Err(Error::DimensionMismatch {
            expected: index.dim(),
            actual: start.len(),
        });
    }
    if let ConstraintCheck::Violated(v) = params.check(start) {
        return Err(Error::InvalidStart(format!("{v:?}")));
    }
    Ok(run_agent_unchecked(start, index, params))
}

fn run_agent_unchecked(start: &[f64], index: &KdTree, params: &EsaParams) -> Trajectory {
    let mut state = AgentState::new(start.to_vec());
    let mut samples = Vec::with_capacity(params.max_steps / params.interval + 2);
    let mut termination = Termination::StepLimit;
    let mut last_mean = 0.0;
    for i in 0..params.max_steps {
        if i % params.interval == 0 {
            samples.push(Sample {
                step: i,
                position: state.position.clone(),
                kind: if i == 0 {
                    SampleKind::Start
                } else {
                    SampleKind::Rollout
                },
            });
        }
        let (outcome, mean) = step_with_context(&state, index, params);
        last_mean = mean;
        match outcome {
            StepOutcome::Moved(next) => state = next,
            StepOutcome::Terminated(t) => {
                termination = t;
                break;
            }
        }
    }
    if samples.last().map(|s| s.step) != Some(state.step) {
        samples.push(Sample {
            step: state.step,
            position: state.position,
            kind: SampleKind::Final,
        });
    }
    Trajectory {
        samples,
        termination,
        terminal_neighbor_distance: last_mean,
    }
}

/// Runs independent agents. Output order matches `starts` and is identical
/// for every `parallelism` value.
pub fn run_batch(
    starts: &[Vec<f64>],
    index: &KdTree,
    params: &EsaParams,
    parallelism: usize,
) -> Result<Vec<Trajectory>> {
    params.validate()?;
    for s in starts {
        if s.len() != index.dim() {
            return Err(Error::DimensionMismatch {
                expected: index.dim(),
                actual: s.len(),
            });
        }
        if let ConstraintCheck::Violated(v) = params.check(s) {
            return Err(Error::InvalidStart(format!("{v:?}")));
        }
    }
    Ok(par::map_indexed(starts.len(), parallelism, |i| {
        run_agent_unchecked(&starts[i], index, params)
    }))
}

/// RNG stream for one agent, independent of scheduling.
pub fn agent_rng(seed: u64, ordinal: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ordinal);
    rng
}

/// Uniform random starting positions in `[0,1]^d` that satisfy `constraints`.
pub fn uniform_starts(dim: usize, count: usize, seed: u64, constraints: &[Constraint]) -> Result<Vec<Vec<f64>>> {
    const MAX_DRAWS: usize = 10_000;
    (0..count)
        .map(|i| {
            let mut rng = agent_rng(seed, i as u64);
            for _ in 0..MAX_DRAWS {
                let p: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
                if evaluate_constraints(constraints, &p).is_satisfied() {
                    return Ok(p);
                }
            }
            Err(Error::RejectionGaveUp(MAX_DRAWS))
        })
        .collect()
}

/// Ids of the `count` points with the largest mean distance to their `knn`
/// nearest neighbors (anti-hubs), largest first. Ties go to the lower id.
pub fn anti_hub_ids(points: &[Vec<f64>], count: usize, knn: usize) -> Result<Vec<usize>> {
    let tree = KdTree::build(points)?;
    let mut scored: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let ns = tree.query(p, knn);
            let mean = if ns.is_empty() {
                0.0
            } else {
                ns.distances.iter().sum::<f64>() / ns.len() as f64
            };
            (mean, i)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(count).map(|(_, i)| i).collect())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const EQ: f64 = 1.122_462_048_309_373; // 2^(1/6)

    #[test]
    fn potential_reference_points() {
        assert!(lj_potential(1.0, 1.0, 1.0).unwrap().abs() < 1e-12);
        assert!((lj_potential(EQ, 1.0, 1.0).unwrap() + 1.0).abs() < 1e-12);
        // 4[(1/0.9)^12 - (1/0.9)^6] evaluated at 50 digits: 6.63611895...
        assert!((lj_potential(0.9, 1.0, 1.0).unwrap() - 6.636_118_953).abs() < 1e-3);
    }

    #[test]
    fn force_reference_points() {
        assert!((lj_force_magnitude(1.0, 1.0, 1.0).unwrap() - 24.0).abs() < 1e-12);
        assert!(lj_force_magnitude(EQ, 1.0, 1.0).unwrap().abs() < 1e-9);
    }

    #[test]
    fn non_positive_distance_is_an_error() {
        assert!(lj_potential(0.0, 1.0, 1.0).is_err());
        assert!(lj_force_magnitude(-1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn sigma_modes() {
        let ns = NeighborSet {
            indices: vec![0, 1, 2],
            distances: vec![1.0, 2.0, 3.0],
            unit_vectors: vec![vec![1.0]; 3],
        };
        let mut p = EsaParams::default();
        assert_eq!(effective_sigma(&ns, &p), 2.0);
        p.sigma_mode = SigmaMode::Fixed { sigma: 0.05 };
        assert_eq!(effective_sigma(&ns, &p), 0.05);
        let one = NeighborSet {
            indices: vec![0],
            distances: vec![0.4],
            unit_vectors: vec![vec![1.0]],
        };
        assert_eq!(effective_sigma(&one, &EsaParams::default()), 0.4);
    }

    #[test]
    fn opposite_neighbors_cancel() {
        let ns = NeighborSet {
            indices: vec![0, 1],
            distances: vec![0.1, 0.1],
            unit_vectors: vec![vec![1.0, 0.0], vec![-1.0, 0.0]],
        };
        let r = resultant(&[0.5, 0.5], &ns, &EsaParams::default());
        assert!(r.magnitude < 1e-7);
        assert!(r.direction.is_none());
    }

    #[test]
    fn close_neighbor_repels() {
        let params = EsaParams {
            sigma_mode: SigmaMode::Fixed { sigma: 0.2 },
            ..EsaParams::default()
        };
        let ns = NeighborSet {
            indices: vec![0],
            distances: vec![0.1],
            unit_vectors: vec![vec![0.6, 0.8]],
        };
        let d = resultant(&[0.5, 0.5], &ns, &params).direction.unwrap();
        assert!((d[0] + 0.6).abs() < 1e-12 && (d[1] + 0.8).abs() < 1e-12);
    }

    #[test]
    fn far_neighbor_attracts() {
        let params = EsaParams {
            sigma_mode: SigmaMode::Fixed { sigma: 0.1 },
            ..EsaParams::default()
        };
        let ns = NeighborSet {
            indices: vec![0],
            distances: vec![0.3],
            unit_vectors: vec![vec![1.0, 0.0]],
        };
        let d = resultant(&[0.5, 0.5], &ns, &params).direction.unwrap();
        assert!((d[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn first_step_without_momentum_follows_force() {
        let params = EsaParams {
            gamma: 0.0,
            ..EsaParams::default()
        };
        let s = AgentState::new(vec![0.5, 0.5]);
        let next = apply_movement(&s, &[0.6, 0.8], 3.0, &params);
        assert!((next.position[0] - (0.5 + 0.6 * params.alpha)).abs() < 1e-15);
        assert!((next.position[1] - (0.5 + 0.8 * params.alpha)).abs() < 1e-15);
        assert_eq!(next.cumulative, 0.0);
    }

    #[test]
    fn blending_identical_directions_is_identity() {
        let d = [0.6, 0.8];
        let b = blend_direction(&d, 7.3, &d, 1.0);
        assert!((b[0] - 0.6).abs() < 1e-15 && (b[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn blend_hand_case() {
        let params = EsaParams::default();
        let state = AgentState {
            position: vec![0.5, 0.5],
            momentum: vec![0.0, 1.0],
            cumulative: 1.0,
            step: 3,
        };
        let next = apply_movement(&state, &[1.0, 0.0], 2.0, &params);
        // d' = (2d + m)/3 = (2/3, 1/3), used without renormalization
        assert!((next.position[0] - (0.5 + params.alpha * 2.0 / 3.0)).abs() < 1e-15);
        assert!((next.position[1] - (0.5 + params.alpha / 3.0)).abs() < 1e-15);
        assert!((next.cumulative - (0.9 + 2.0)).abs() < 1e-15);
        let mn: f64 = next.momentum.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((mn - 1.0).abs() < 1e-12);
    }

    #[test]
    fn params_validation() {
        assert!(EsaParams::default().validate().is_ok());
        for bad in [
            EsaParams { k: 0, ..EsaParams::default() },
            EsaParams { gamma: 1.0, ..EsaParams::default() },
            EsaParams { alpha: 0.0, ..EsaParams::default() },
            EsaParams { interval: 0, ..EsaParams::default() },
            EsaParams { delta: 0.0, ..EsaParams::default() },
            EsaParams { max_steps: 0, ..EsaParams::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn params_json_uses_symbol_names() {
        let json = serde_json::to_value(EsaParams::default()).unwrap();
        assert_eq!(json["n"], 400);
        assert_eq!(json["j"], 10);
        let p: EsaParams = serde_json::from_str(r#"{"k": 5, "gamma": 0.0}"#).unwrap();
        assert_eq!(p.k, 5);
        assert_eq!(p.max_steps, 400);
    }

    #[test]
    fn invalid_start_is_rejected() {
        let tree = KdTree::build(&[vec![0.5, 0.5]]).unwrap();
        assert!(matches!(
            run_agent(&[1.5, 0.5], &tree, &EsaParams::default()),
            Err(Error::InvalidStart(_))
        ));
    }

    #[test]
    fn lone_point_pushes_agent_outward() {
        let tree = KdTree::build(&[vec![0.5, 0.5]]).unwrap();
        let params = EsaParams {
            gamma: 0.0,
            sigma_mode: SigmaMode::Fixed { sigma: 0.1 },
            ..EsaParams::default()
        };
        let start = [0.55, 0.5];
        let t = run_agent(&start, &tree, &params).unwrap();
        let end = t.end();
        let dist = ((end[0] - 0.5).powi(2) + (end[1] - 0.5).powi(2)).sqrt();
        assert!(dist > 0.05);
        // settles near the equilibrium shell 2^(1/6) σ
        assert!((dist - EQ * 0.1).abs() < 2.0 * params.alpha);
    }

    #[test]
    fn samples_on_grid_plus_final() {
        let pts: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![(i % 6) as f64 / 6.0 + 0.05, (i / 6) as f64 / 5.0 + 0.05])
            .collect();
        let tree = KdTree::build(&pts).unwrap();
        let params = EsaParams {
            max_steps: 35,
            ..EsaParams::default()
        };
        let t = run_agent(&[0.31, 0.47], &tree, &params).unwrap();
        let steps: Vec<usize> = t.samples.iter().map(|s| s.step).collect();
        if t.termination == Termination::StepLimit {
            assert_eq!(steps, vec![0, 10, 20, 30, 35]);
            assert_eq!(t.samples[0].kind, SampleKind::Start);
            assert_eq!(t.samples[4].kind, SampleKind::Final);
        }
        assert!(steps.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn agent_rng_streams_differ() {
        let a: f64 = agent_rng(7, 0).random();
        let b: f64 = agent_rng(7, 1).random();
        let c: f64 = agent_rng(7, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn anti_hubs_pick_outliers() {
        let mut pts: Vec<Vec<f64>> = (0..50).map(|i| vec![0.4 + 0.004 * i as f64, 0.5]).collect();
        pts.push(vec![0.95, 0.95]);
        let ids = anti_hub_ids(&pts, 1, 8).unwrap();
        assert_eq!(ids, vec![50]);
    }
}
