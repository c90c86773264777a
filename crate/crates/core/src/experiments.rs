//! Reproducible experiment drivers behind the CLI: the strategy comparison,
//! the 2D agent demo, the manifold embeddings and the scaling sweep.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{gen_demo2d, gen_manifold, gen_uniform, ManifoldKind};
use crate::error::{Error, Result};
use crate::esa::{self, EsaParams, SampleKind};
use crate::knn::KdTree;
use crate::oracles::Oracle;
use crate::pareto::{union_area, ObjectivePair, ParetoPoint, ParetoState};
use crate::projection::{cos_mds, NeighborEmbedding};
use crate::stats::{self, rank_sum_test, Alternative};
use crate::model::Provenance;
use crate::strategies::{random_points, random_walk_paths};

/// Derives an independent seed for sub-task `tag` of run `seed`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Esa,
    Rs,
    Rw,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Esa => "esa",
            Method::Rs => "rs",
            Method::Rw => "rw",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "esa" => Ok(Method::Esa),
            "rs" => Ok(Method::Rs),
            "rw" => Ok(Method::Rw),
            other => Err(Error::Unknown {
                kind: "method",
                name: other.to_string(),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    /// Verified configurations in the fast-forwarded dataset.
    pub stage_size: usize,
    pub repeats: usize,
    pub agents: usize,
    pub methods: Vec<Method>,
    pub params: EsaParams,
    pub seed: u64,
    pub parallelism: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            stage_size: 1000,
            repeats: 50,
            agents: 1500,
            methods: vec![Method::Esa, Method::Rs, Method::Rw],
            params: EsaParams::default(),
            seed: 0,
            parallelism: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatRow {
    pub repeat: usize,
    pub method: Method,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub a: Method,
    pub b: Method,
    /// One-sided: `a` tends to be larger.
    pub p_greater: f64,
    pub p_two_sided: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub oracle: String,
    pub stage_reward: f64,
    pub rows: Vec<RepeatRow>,
    pub summary: Vec<MethodSummary>,
    pub tests: Vec<PairTest>,
}

impl CompareReport {
    pub fn rewards(&self, method: Method) -> Vec<f64> {
        self.rows.iter().filter(|r| r.method == method).map(|r| r.reward).collect()
    }

    pub fn test(&self, a: Method, b: Method) -> Option<&PairTest> {
        self.tests.iter().find(|t| t.a == a && t.b == b)
    }
}

/// Scores candidates against a fixed front: dominance-area gain first, then
/// the sum of normalized objectives.
struct Critic<'a> {
    oracle: &'a dyn Oracle,
    state: &'a ParetoState,
}

impl Critic<'_> {
    fn score(&self, x: &[f64]) -> ([f64; 2], (f64, f64)) {
        let y = self.oracle.evaluate(x);
        let obj = [y[0], y[1]];
        let gain = self.state.area_with(obj) - self.state.dominance_area;
        let n = self.state.objectives.normalize(obj);
        (obj, (gain, n[0] + n[1]))
    }

    /// The best-scoring point of one trajectory. Earlier samples win ties.
    fn best_of<'p>(&self, path: impl IntoIterator<Item = &'p [f64]>) -> [f64; 2] {
        let mut best: Option<([f64; 2], (f64, f64))> = None;
        for x in path {
            let (obj, key) = self.score(x);
            if best.is_none_or(|(_, b)| key.0 > b.0 || (key.0 == b.0 && key.1 > b.1)) {
                best = Some((obj, key));
            }
        }
        best.expect("trajectories are never empty").0
    }
}

fn reward(state: &ParetoState, chosen: &[[f64; 2]]) -> f64 {
    let o: &ObjectivePair = &state.objectives;
    let mut pts: Vec<[f64; 2]> = state
        .front_existing()
        .iter()
        .map(|p| o.normalize(p.objectives))
        .collect();
    pts.extend(chosen.iter().map(|&c| o.normalize(c)));
    union_area(pts)
}

/// ESA against random sampling and random walk from shared starts.
///
/// A stage dataset of `stage_size` uniform configurations is measured once.
/// Every repeat draws `agents` uniform starts; random sampling keeps them,
/// while the agent search and the random walk pick the best sample of each
/// trajectory as judged by the oracle. The reward is the dominance area of
/// the stage front together with the chosen points.
pub fn compare(oracle: &dyn Oracle, cfg: &CompareConfig) -> Result<CompareReport> {
    cfg.params.validate()?;
    let d = oracle.input_dim();
    let stage = gen_uniform(oracle, cfg.stage_size, derive_seed(cfg.seed, 1))?;
    let state = ParetoState::new(oracle.objectives(), f64::INFINITY)?.with_existing(
        stage.rows().iter().enumerate().map(|(i, r)| {
            let t = r.targets.as_ref().expect("generated rows are measured").values();
            ParetoPoint {
                objectives: [t[0], t[1]],
                id: i as u64,
                provenance: Provenance::Seed,
                estimated: false,
            }
        }),
    )?;
    let tree = KdTree::build(&stage.existing_points())?;
    let critic = Critic {
        oracle,
        state: &state,
    };
    let mut rows = Vec::new();
    for repeat in 0..cfg.repeats {
        let seed = derive_seed(cfg.seed, 100 + repeat as u64);
        let starts = random_points(d, cfg.agents, seed, &cfg.params.constraints)?;
        for &method in &cfg.methods {
            let chosen: Vec<[f64; 2]> = match method {
                Method::Rs => starts.iter().map(|s| critic.score(s).0).collect(),
                Method::Esa => {
                    let trajectories = esa::run_batch(&starts, &tree, &cfg.params, cfg.parallelism)?;
                    crate::par::map_indexed(trajectories.len(), cfg.parallelism, |i| {
                        critic.best_of(trajectories[i].samples.iter().map(|s| s.position.as_slice()))
                    })
                }
                Method::Rw => {
                    let paths = random_walk_paths(&starts, cfg.params.max_steps, cfg.params.alpha, cfg.params.interval, seed);
                    crate::par::map_indexed(paths.len(), cfg.parallelism, |i| {
                        critic.best_of(paths[i].iter().map(Vec::as_slice))
                    })
                }
            };
            rows.push(RepeatRow {
                repeat,
                method,
                reward: reward(&state, &chosen),
            });
        }
    }
    let rewards_of = |m: Method| -> Vec<f64> { rows.iter().filter(|r| r.method == m).map(|r| r.reward).collect() };
    let summary = cfg
        .methods
        .iter()
        .map(|&method| {
            let r = rewards_of(method);
            MethodSummary {
                method,
                mean: stats::mean(&r),
                sd: stats::std_dev(&r),
            }
        })
        .collect();
    let mut tests = Vec::new();
    for (i, &a) in cfg.methods.iter().enumerate() {
        for &b in &cfg.methods[i + 1..] {
            let (ra, rb) = (rewards_of(a), rewards_of(b));
            tests.push(PairTest {
                a,
                b,
                p_greater: rank_sum_test(&ra, &rb, Alternative::Greater).p_value,
                p_two_sided: rank_sum_test(&ra, &rb, Alternative::TwoSided).p_value,
            });
        }
    }
    Ok(CompareReport {
        oracle: oracle.name().to_string(),
        stage_reward: state.dominance_area,
        rows,
        summary,
        tests,
    })
}

/// Agents on a uniform 2D cloud, with and without momentum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentDemo {
    pub samples: Vec<[f64; 2]>,
    pub starts: Vec<[f64; 2]>,
    pub finals_no_momentum: Vec<[f64; 2]>,
    pub finals_momentum: Vec<[f64; 2]>,
    /// Every rollout sample of the momentum trajectories.
    pub trajectory_momentum: Vec<[f64; 2]>,
}

impl AgentDemo {
    /// Nearest-sample distance of each momentum-free final position.
    pub fn agent_gap_distances(&self) -> Vec<f64> {
        let tree = KdTree::build(&to_vecs(&self.samples)).expect("nonempty");
        self.finals_no_momentum.iter().map(|p| tree.nearest_distance(p)).collect()
    }

    /// Distance of each sample to its nearest other sample.
    pub fn sample_self_distances(&self) -> Vec<f64> {
        let tree = KdTree::build(&to_vecs(&self.samples)).expect("nonempty");
        self.samples
            .iter()
            .map(|p| tree.query(p, 1).distances.first().copied().unwrap_or(f64::INFINITY))
            .collect()
    }
}

fn to_vecs(points: &[[f64; 2]]) -> Vec<Vec<f64>> {
    points.iter().map(|p| p.to_vec()).collect()
}

fn to_pair(p: &[f64]) -> [f64; 2] {
    [p[0], p[1]]
}

pub fn agent_demo(samples: usize, agents: usize, params: &EsaParams, seed: u64, parallelism: usize) -> Result<AgentDemo> {
    let ds = gen_demo2d(samples, derive_seed(seed, 1))?;
    let points = ds.points();
    let tree = KdTree::build(&points)?;
    let starts = random_points(2, agents, derive_seed(seed, 2), &params.constraints)?;
    let run = |gamma: f64| {
        let p = EsaParams {
            gamma,
            ..params.clone()
        };
        esa::run_batch(&starts, &tree, &p, parallelism)
    };
    let plain = run(0.0)?;
    let momentum = run(params.gamma)?;
    Ok(AgentDemo {
        samples: points.iter().map(|p| to_pair(p)).collect(),
        starts: starts.iter().map(|p| to_pair(p)).collect(),
        finals_no_momentum: plain.iter().map(|t| to_pair(t.end())).collect(),
        finals_momentum: momentum.iter().map(|t| to_pair(t.end())).collect(),
        trajectory_momentum: momentum
            .iter()
            .flat_map(|t| t.samples.iter().filter(|s| s.kind != SampleKind::Start))
            .map(|s| to_pair(&s.position))
            .collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldEmbedding {
    pub kind: ManifoldKind,
    pub embedding: NeighborEmbedding,
}

/// cos-MDS of every manifold point around the manifold's designated agent.
pub fn manifold_embedding(kind: ManifoldKind, seed: u64) -> Result<ManifoldEmbedding> {
    let m = gen_manifold(kind, 1000, seed);
    Ok(ManifoldEmbedding {
        kind,
        embedding: cos_mds(&m.agent, &m.points)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub d: usize,
    pub n_data: usize,
    pub agents: usize,
    pub steps: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub points: Vec<ScalingPoint>,
    /// Log-log slope of time against each swept variable, others at their first value.
    pub exponent_d: Option<f64>,
    pub exponent_n_data: Option<f64>,
    pub exponent_agents: Option<f64>,
}

/// Times single-threaded batches over the grid `ds × ns × ps` with `steps` steps.
pub fn scaling(ds: &[usize], ns: &[usize], ps: &[usize], steps: usize, seed: u64) -> Result<ScalingReport> {
    if ds.is_empty() || ns.is_empty() || ps.is_empty() {
        return Err(Error::InvalidParameter("scaling grid is empty".into()));
    }
    let mut points = Vec::new();
    for &d in ds {
        for &n in ns {
            let data = random_points(d, n, derive_seed(seed, d as u64 * 1_000_003 + n as u64), &[])?;
            let tree = KdTree::build(&data)?;
            for &p in ps {
                let starts = random_points(d, p, derive_seed(seed, 7 + p as u64), &[])?;
                let params = EsaParams {
                    max_steps: steps,
                    // never stop early so every run does the same work
                    delta: f64::MIN_POSITIVE,
                    bounded: false,
                    ..EsaParams::default()
                };
                let t0 = Instant::now();
                let out = esa::run_batch(&starts, &tree, &params, 1)?;
                let seconds = t0.elapsed().as_secs_f64();
                std::hint::black_box(out);
                points.push(ScalingPoint {
                    d,
                    n_data: n,
                    agents: p,
                    steps,
                    seconds,
                });
            }
        }
    }
    let fit = |pick: &dyn Fn(&ScalingPoint) -> Option<usize>| {
        let sel: Vec<(f64, f64)> = points
            .iter()
            .filter_map(|pt| pick(pt).map(|x| (x as f64, pt.seconds)))
            .collect();
        (sel.len() >= 2).then(|| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = sel.into_iter().unzip();
            stats::log_log_slope(&xs, &ys)
        })
    };
    let (d0, n0, p0) = (ds[0], ns[0], ps[0]);
    Ok(ScalingReport {
        exponent_d: fit(&|pt| (pt.n_data == n0 && pt.agents == p0).then_some(pt.d)),
        exponent_n_data: fit(&|pt| (pt.d == d0 && pt.agents == p0).then_some(pt.n_data)),
        exponent_agents: fit(&|pt| (pt.d == d0 && pt.n_data == n0).then_some(pt.agents)),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::QuadraticBowl;

    #[test]
    fn seeds_differ_per_tag() {
        assert_ne!(derive_seed(1, 1), derive_seed(1, 2));
        assert_eq!(derive_seed(5, 9), derive_seed(5, 9));
    }

    #[test]
    fn compare_single_method() {
        let cfg = CompareConfig {
            stage_size: 50,
            repeats: 2,
            agents: 20,
            methods: vec![Method::Rs],
            ..CompareConfig::default()
        };
        let r = compare(&QuadraticBowl::new(3), &cfg).unwrap();
        assert_eq!(r.summary.len(), 1);
        assert_eq!(r.rows.len(), 2);
        assert!(r.tests.is_empty());
        assert!(r.rows.iter().all(|row| row.reward >= r.stage_reward));
    }

    #[test]
    fn empty_scaling_grid() {
        assert!(scaling(&[], &[10], &[1], 5, 0).is_err());
    }
}
