//! Proposal strategies besides the plain agent search, and the extrapolation run.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::esa::{self, agent_rng, anti_hub_ids, EsaParams, Trajectory};
use crate::knn::KdTree;
use crate::model::{Configuration, Constraint, Dataset, Provenance, TargetValues};
use crate::pareto::ParetoState;
use crate::stats::median;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalBatch {
    pub configurations: Vec<Configuration>,
    pub strategy: Provenance,
    pub batch_size: usize,
    pub seed: u64,
}

impl ProposalBatch {
    fn from_points(ds: &Dataset, points: Vec<Vec<f64>>, strategy: Provenance, seed: u64) -> Result<Self> {
        let configurations = points
            .into_iter()
            .map(|p| ds.proposed(p, strategy))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            batch_size: configurations.len(),
            configurations,
            strategy,
            seed,
        })
    }
}

/// Stream offset separating walk directions from start positions.
const WALK_STREAM: u64 = 1 << 40;

/// Uniform points in `[0,1]^d`, rejection-sampled against `constraints`.
///
/// Point `i` draws from its own stream, so a batch is a prefix of any larger
/// batch with the same seed.
pub fn random_points(d: usize, size: usize, seed: u64, constraints: &[Constraint]) -> Result<Vec<Vec<f64>>> {
    esa::uniform_starts(d, size, seed, constraints)
}

pub fn random_sampling(ds: &Dataset, size: usize, seed: u64, constraints: &[Constraint]) -> Result<ProposalBatch> {
    let points = random_points(ds.input_dim(), size, seed, constraints)?;
    ProposalBatch::from_points(ds, points, Provenance::RandomSample, seed)
}

/// Positions along one random walk: the start, every `interval`-th step, and the end.
pub fn walk(start: &[f64], steps: usize, alpha: f64, interval: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut p = start.to_vec();
    let mut samples = vec![p.clone()];
    for s in 1..=steps {
        let dir = random_direction(p.len(), rng);
        for (x, u) in p.iter_mut().zip(&dir) {
            *x = (*x + alpha * u).clamp(0.0, 1.0);
        }
        if s % interval.max(1) == 0 || s == steps {
            samples.push(p.clone());
        }
    }
    samples
}

/// A direction drawn uniformly from the unit sphere.
pub fn random_direction(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Random walks from shared starts, sampled every `interval` steps.
pub fn random_walk_paths(
    starts: &[Vec<f64>],
    steps: usize,
    alpha: f64,
    interval: usize,
    seed: u64,
) -> Vec<Vec<Vec<f64>>> {
    starts
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = agent_rng(seed, WALK_STREAM + i as u64);
            walk(s, steps, alpha, interval, &mut rng)
        })
        .collect()
}

/// Uniform starts walked `steps` times with step length `alpha`; the end points form the batch.
pub fn random_walk(ds: &Dataset, size: usize, steps: usize, alpha: f64, seed: u64) -> Result<ProposalBatch> {
    let starts = random_points(ds.input_dim(), size, seed, &[])?;
    let ends = random_walk_paths(&starts, steps, alpha, steps.max(1), seed)
        .into_iter()
        .map(|mut path| path.pop().expect("path holds its start"))
        .collect();
    ProposalBatch::from_points(ds, ends, Provenance::RandomWalk, seed)
}

/// Copies of existing Pareto-front members, best first objective first, cycled to `size`.
pub fn pareto_improvement(ds: &Dataset, state: &ParetoState, size: usize, seed: u64) -> Result<ProposalBatch> {
    let mut front = state.front_existing();
    if front.is_empty() {
        return Err(Error::EmptyFront);
    }
    // the front is sorted by raw first objective ascending
    if state.objectives.orientation[0].sign() > 0.0 {
        front.reverse();
    }
    let configurations = (0..size)
        .map(|i| {
            let member = front[i % front.len()];
            let row = ds
                .rows()
                .get(member.id as usize)
                .ok_or_else(|| Error::InvalidParameter(format!("front member {} is not a dataset row", member.id)))?;
            let mut cfg = ds.proposed(row.values.clone(), Provenance::ParetoImprovement)?;
            if let Some(t) = &row.targets {
                cfg.targets = Some(TargetValues::Estimated(t.values().to_vec()));
            }
            Ok(cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProposalBatch {
        batch_size: configurations.len(),
        configurations,
        strategy: Provenance::ParetoImprovement,
        seed,
    })
}

/// The all-0.5 configuration.
pub fn blank_baseline(ds: &Dataset) -> Result<Configuration> {
    ds.proposed(vec![0.5; ds.input_dim()], Provenance::Blank)
}

/// Agents from uniform starts over the existing rows. Proposals are trajectory ends.
pub fn esa_search(
    ds: &Dataset,
    params: &EsaParams,
    size: usize,
    seed: u64,
    parallelism: usize,
) -> Result<(ProposalBatch, Vec<Trajectory>)> {
    let starts = random_points(ds.input_dim(), size, seed, &params.constraints)?;
    let tree = KdTree::build(&ds.existing_points())?;
    let trajectories = esa::run_batch(&starts, &tree, params, parallelism)?;
    let ends = trajectories.iter().map(|t| t.end().to_vec()).collect();
    Ok((ProposalBatch::from_points(ds, ends, Provenance::Esa, seed)?, trajectories))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationConfig {
    pub iterations: usize,
    pub agents: usize,
    /// Neighbors used to rank anti-hubs.
    pub knn: usize,
    pub bins: usize,
    pub params: EsaParams,
    pub parallelism: usize,
}

impl Default for ExtrapolationConfig {
    fn default() -> Self {
        Self {
            iterations: 6,
            agents: 300,
            knn: 8,
            bins: 20,
            params: EsaParams {
                bounded: false,
                ..EsaParams::default()
            },
            parallelism: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationIteration {
    pub iteration: usize,
    /// Row ids of the working set the agents started from.
    pub seeds: Vec<usize>,
    pub results: Vec<Vec<f64>>,
    /// Nearest-neighbor distance of each result to the initial data.
    pub distances: Vec<f64>,
    pub median: f64,
    /// Counts over the shared bin edges.
    pub histogram: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extrapolation {
    pub bin_edges: Vec<f64>,
    pub iterations: Vec<ExtrapolationIteration>,
}

/// Repeatedly seeds agents at the anti-hubs of a growing working set and
/// records how far the results land from the initial data.
pub fn run_extrapolation(points: &[Vec<f64>], cfg: &ExtrapolationConfig) -> Result<Extrapolation> {
    if points.len() < cfg.agents {
        return Err(Error::TooFewRows {
            needed: cfg.agents,
            available: points.len(),
        });
    }
    let initial = KdTree::build(points)?;
    let mut working: Vec<Vec<f64>> = points.to_vec();
    let mut iterations = Vec::with_capacity(cfg.iterations);
    for iteration in 0..cfg.iterations {
        let seeds = anti_hub_ids(&working, cfg.agents, cfg.knn)?;
        let starts: Vec<Vec<f64>> = seeds.iter().map(|&i| working[i].clone()).collect();
        let tree = KdTree::build(&working)?;
        let trajectories = esa::run_batch(&starts, &tree, &cfg.params, cfg.parallelism)?;
        let results: Vec<Vec<f64>> = trajectories.iter().map(|t| t.end().to_vec()).collect();
        let distances: Vec<f64> = results.iter().map(|r| initial.nearest_distance(r)).collect();
        working.extend(results.iter().cloned());
        iterations.push(ExtrapolationIteration {
            iteration,
            seeds,
            median: median(&distances),
            results,
            distances,
            histogram: Vec::new(),
        });
    }
    let max = iterations
        .iter()
        .flat_map(|it| it.distances.iter().copied())
        .fold(0.0, f64::max);
    let bins = cfg.bins.max(1);
    let width = if max > 0.0 { max / bins as f64 } else { 1.0 };
    let bin_edges = (0..=bins).map(|b| b as f64 * width).collect();
    for it in &mut iterations {
        it.histogram = vec![0; bins];
        for &d in &it.distances {
            it.histogram[((d / width) as usize).min(bins - 1)] += 1;
        }
    }
    Ok(Extrapolation { bin_edges, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Orientation, VariableSpec};
    use crate::pareto::{ObjectivePair, ParetoPoint};

    fn unit_ds(d: usize) -> Dataset {
        Dataset::new((0..d).map(|k| VariableSpec::input(format!("x{k}"), 0.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn sampling_basics() {
        let ds = unit_ds(2);
        assert!(random_sampling(&ds, 0, 1, &[]).unwrap().configurations.is_empty());
        let a = random_sampling(&ds, 10_000, 1, &[]).unwrap();
        for k in 0..2 {
            let m = a.configurations.iter().map(|c| c.values[k]).sum::<f64>() / 1e4;
            assert!((m - 0.5).abs() < 0.02);
        }
        assert_eq!(a, random_sampling(&ds, 10_000, 1, &[]).unwrap());
    }

    #[test]
    fn infeasible_constraints_give_up() {
        let c = Constraint::Box {
            lo: vec![0.5, 0.5],
            hi: vec![0.5, 0.5],
        };
        assert!(matches!(random_sampling(&unit_ds(2), 3, 0, &[c]), Err(Error::RejectionGaveUp(_))));
    }

    #[test]
    fn walk_degenerate_cases() {
        let ds = unit_ds(3);
        let rs = random_sampling(&ds, 20, 4, &[]).unwrap();
        let rw0 = random_walk(&ds, 20, 0, 0.01, 4).unwrap();
        let still = random_walk(&ds, 20, 50, 0.0, 4).unwrap();
        for ((a, b), c) in rs.configurations.iter().zip(&rw0.configurations).zip(&still.configurations) {
            assert_eq!(a.values, b.values);
            assert_eq!(a.values, c.values);
        }
    }

    #[test]
    fn unclipped_steps_have_length_alpha() {
        let mut rng = agent_rng(9, 0);
        let path = walk(&[0.5; 4], 200, 0.001, 1, &mut rng);
        for w in path.windows(2) {
            let len = w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!((len - 0.001).abs() < 1e-12);
        }
    }

    #[test]
    fn pareto_improvement_cycles_best_first() {
        let vars = vec![
            VariableSpec::input("x", 0.0, 1.0),
            VariableSpec::target("f1", 0.0, 1.0, Orientation::Maximize),
            VariableSpec::target("f2", 0.0, 1.0, Orientation::Maximize),
        ];
        let rows = [(0.1, [0.2, 0.9]), (0.2, [0.5, 0.5]), (0.3, [0.9, 0.1]), (0.4, [0.1, 0.1])];
        let ds = Dataset::from_raw_rows(vars, rows.iter().map(|(x, t)| (vec![*x], t.to_vec()))).unwrap();
        let state = ParetoState::new(ObjectivePair::maximize_both([(0.0, 1.0), (0.0, 1.0)]), 5.0)
            .unwrap()
            .with_existing(rows.iter().enumerate().map(|(i, (_, t))| ParetoPoint {
                objectives: *t,
                id: i as u64,
                provenance: Provenance::Seed,
                estimated: false,
            }))
            .unwrap();
        let batch = pareto_improvement(&ds, &state, 5, 0).unwrap();
        let xs: Vec<f64> = batch.configurations.iter().map(|c| c.values[0]).collect();
        assert_eq!(xs, vec![0.3, 0.2, 0.1, 0.3, 0.2]);
        assert_eq!(batch.configurations[0].targets, Some(TargetValues::Estimated(vec![0.9, 0.1])));
        let one = pareto_improvement(&ds, &state, 1, 0).unwrap();
        assert_eq!(one.configurations[0].values, vec![0.3]);
        let empty = ParetoState::new(ObjectivePair::maximize_both([(0.0, 1.0), (0.0, 1.0)]), 5.0).unwrap();
        assert!(matches!(pareto_improvement(&ds, &empty, 1, 0), Err(Error::EmptyFront)));
    }

    #[test]
    fn blank_is_center() {
        let c = blank_baseline(&unit_ds(3)).unwrap();
        assert_eq!(c.values, vec![0.5; 3]);
        assert_eq!(c.provenance, Provenance::Blank);
    }
}
