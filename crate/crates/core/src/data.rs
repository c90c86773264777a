//! CSV + manifest ingestion and the synthetic dataset generators.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, Orientation, Provenance, VariableKind, VariableSpec};
use crate::oracles::Oracle;

/// Sidecar description of a CSV file's columns.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub columns: Vec<ColumnSpec>,
    /// Optional column holding a per-row verification cost.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_column: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: VariableKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation: Option<Orientation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

impl Manifest {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// A manifest pinning the dataset's current bounds.
    pub fn for_dataset(ds: &Dataset) -> Self {
        Manifest {
            columns: ds
                .variables()
                .iter()
                .map(|v| ColumnSpec {
                    name: v.name.clone(),
                    kind: v.kind,
                    orientation: v.orientation,
                    min: Some(v.min),
                    max: Some(v.max),
                })
                .collect(),
            cost_column: None,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, manifest: &Manifest) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, manifest)
}

/// Parses CSV text with a header row into a dataset of verified rows.
pub fn read_csv(reader: impl Read, manifest: &Manifest) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let by_name: HashMap<&str, &ColumnSpec> =
        manifest.columns.iter().map(|c| (c.name.as_str(), c)).collect();
    for name in &header {
        if !by_name.contains_key(name.as_str()) && manifest.cost_column.as_deref() != Some(name) {
            return Err(Error::Manifest(format!("column `{name}` is not declared")));
        }
    }
    for c in &manifest.columns {
        if !header.contains(&c.name) {
            return Err(Error::Manifest(format!("declared column `{}` missing from header", c.name)));
        }
    }

    let mut cells: Vec<Vec<f64>> = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::Parse {
                row: r + 1,
                column: record.len() + 1,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        row: r + 1,
                        column: c + 1,
                        message: format!("`{cell}` is not a number"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        cells.push(row);
    }

    let column_of = |name: &str| header.iter().position(|h| h == name).expect("checked above");
    let mut input_cols = Vec::new();
    let mut target_cols = Vec::new();
    let mut variables = Vec::new();
    // inputs first, then targets, each in header order
    for kind in [VariableKind::Input, VariableKind::Target] {
        for name in &header {
            let Some(spec) = by_name.get(name.as_str()) else { continue };
            if spec.kind != kind {
                continue;
            }
            let col = column_of(name);
            let (lo, hi) = cells.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), row| {
                (lo.min(row[col]), hi.max(row[col]))
            });
            let min = spec.min.unwrap_or(lo);
            let max = spec.max.unwrap_or(hi);
            if !(min < max) {
                return Err(Error::DegenerateVariable(name.clone()));
            }
            variables.push(VariableSpec {
                name: name.clone(),
                min,
                max,
                kind,
                orientation: match kind {
                    VariableKind::Target => Some(spec.orientation.unwrap_or(Orientation::Maximize)),
                    VariableKind::Input => None,
                },
            });
            match kind {
                VariableKind::Input => input_cols.push(col),
                VariableKind::Target => target_cols.push(col),
            }
        }
    }
    let cost_col = manifest.cost_column.as_deref().map(column_of);

    let mut ds = Dataset::new(variables)?;
    for row in &cells {
        let inputs: Vec<f64> = input_cols.iter().map(|&c| row[c]).collect();
        let targets: Vec<f64> = target_cols.iter().map(|&c| row[c]).collect();
        let mut cfg = ds.existing_from_raw(&inputs, targets, Provenance::Seed)?;
        cfg.cost = cost_col.map(|c| row[c]);
        ds.push_seed(cfg);
    }
    Ok(ds)
}

/// Writes existing rows in raw units: inputs then targets.
pub fn write_csv(ds: &Dataset, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(ds.variables().iter().filter(|v| v.kind == VariableKind::Input).chain(ds.targets()).map(|v| v.name.as_str()))?;
    for row in ds.rows().iter().filter(|r| r.is_existing()) {
        let targets = row.targets.as_ref().map(|t| t.values().to_vec()).unwrap_or_default();
        // `{}` on f64 is the shortest representation that round-trips
        w.write_record(row.raw.iter().chain(&targets).map(|v| format!("{v}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `<stem>.csv` and `<stem>.json` (manifest) into `dir`.
pub fn save_dataset(ds: &Dataset, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let file = std::fs::File::create(dir.join(format!("{stem}.csv")))?;
    write_csv(ds, std::io::BufWriter::new(file))?;
    let manifest = serde_json::to_string_pretty(&Manifest::for_dataset(ds))?;
    std::fs::write(dir.join(format!("{stem}.json")), manifest + "\n")?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ManifoldKind {
    Hyperboloid3d,
    Paraboloid4d,
    Hypersphere4d,
}

impl std::str::FromStr for ManifoldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hyperboloid3d" | "hyperboloid" => Ok(ManifoldKind::Hyperboloid3d),
            "paraboloid4d" | "paraboloid" => Ok(ManifoldKind::Paraboloid4d),
            "hypersphere4d" | "hypersphere" => Ok(ManifoldKind::Hypersphere4d),
            other => Err(Error::Unknown {
                kind: "manifold",
                name: other.to_string(),
            }),
        }
    }
}

/// Points on a synthetic manifold plus the agent placed in its empty center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifold {
    pub kind: ManifoldKind,
    pub points: Vec<Vec<f64>>,
    pub agent: Vec<f64>,
}

impl Manifold {
    /// Wraps the points as an input-only dataset with data-derived bounds.
    pub fn dataset(&self) -> Result<Dataset> {
        let names = ["x", "y", "z", "w"];
        let dim = self.agent.len();
        let variables = (0..dim)
            .map(|k| {
                let (lo, hi) = self.points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| {
                    (a.0.min(p[k]), a.1.max(p[k]))
                });
                VariableSpec::input(names[k], lo, hi)
            })
            .collect();
        Dataset::from_raw_rows(variables, self.points.iter().map(|p| (p.clone(), Vec::new())))
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Generates one of the three manifold test sets.
///
/// * hyperboloid: 30×30 grid on `[-1,1]²`, `z = ±2 sqrt(x²/0.04 + y²/0.04 + 1)`
///   with the sheet alternating in a checkerboard, 900 points, agent at the origin;
/// * paraboloid: 10³ grid on `[-5,5]³` mapped to `(x, y, z, z²)`, agent `(0,0,0,20)`;
/// * hypersphere: `n` random angle triples on the unit 3-sphere, agent at the origin.
pub fn gen_manifold(kind: ManifoldKind, n: usize, seed: u64) -> Manifold {
    match kind {
        ManifoldKind::Hyperboloid3d => {
            let axis = linspace(-1.0, 1.0, 30);
            let mut points = Vec::with_capacity(900);
            for (i, &x) in axis.iter().enumerate() {
                for (j, &y) in axis.iter().enumerate() {
                    let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                    let z = sign * 2.0 * (x * x / 0.04 + y * y / 0.04 + 1.0).sqrt();
                    points.push(vec![x, y, z]);
                }
            }
            Manifold {
                kind,
                points,
                agent: vec![0.0; 3],
            }
        }
        ManifoldKind::Paraboloid4d => {
            let axis = linspace(-5.0, 5.0, 10);
            let mut points = Vec::with_capacity(1000);
            for &x in &axis {
                for &y in &axis {
                    for &z in &axis {
                        points.push(vec![x, y, z, z * z]);
                    }
                }
            }
            Manifold {
                kind,
                points,
                agent: vec![0.0, 0.0, 0.0, 20.0],
            }
        }
        ManifoldKind::Hypersphere4d => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let points = (0..n)
                .map(|_| {
                    let psi = rng.random_range(0.0..2.0 * PI);
                    let theta = rng.random_range(0.0..PI);
                    let phi = rng.random_range(0.0..PI);
                    vec![
                        psi.cos() * theta.sin() * phi.sin(),
                        psi.sin() * theta.sin() * phi.sin(),
                        theta.cos() * phi.sin(),
                        phi.cos(),
                    ]
                })
                .collect();
            Manifold {
                kind,
                points,
                agent: vec![0.0; 4],
            }
        }
    }
}

/// `n` uniform points in the unit square (no targets).
pub fn gen_demo2d(n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<_> = (0..n)
        .map(|_| (vec![rng.random::<f64>(), rng.random::<f64>()], Vec::new()))
        .collect();
    Dataset::from_raw_rows(
        vec![VariableSpec::input("x", 0.0, 1.0), VariableSpec::input("y", 0.0, 1.0)],
        rows,
    )
}

/// `n` uniform points in `[0,1]^d` with targets measured by `oracle`.
pub fn gen_uniform(oracle: &dyn Oracle, n: usize, seed: u64) -> Result<Dataset> {
    let d = oracle.input_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let objectives = oracle.objectives();
    let mut variables: Vec<VariableSpec> =
        (0..d).map(|k| VariableSpec::input(format!("x{k}"), 0.0, 1.0)).collect();
    for k in 0..2 {
        let (lo, hi) = objectives.bounds[k];
        variables.push(VariableSpec::target(
            objectives.names[k].clone(),
            lo,
            hi,
            objectives.orientation[k],
        ));
    }
    let rows: Vec<_> = (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            let y = oracle.evaluate(&x);
            (x, y)
        })
        .collect();
    Dataset::from_raw_rows(variables, rows)
}

/// Variable name, mean, standard deviation, lower clip, upper clip, log-normal?
const WINE_VARIABLES: [(&str, f64, f64, f64, f64, bool); 11] = [
    ("fixed_acidity", 8.32, 1.74, 4.6, 15.9, false),
    ("volatile_acidity", 0.528, 0.179, 0.12, 1.58, false),
    ("citric_acid", 0.271, 0.195, 0.0, 1.0, false),
    ("residual_sugar", 2.54, 1.41, 0.9, 15.5, true),
    ("chlorides", 0.087, 0.047, 0.012, 0.611, true),
    ("free_sulfur_dioxide", 15.9, 10.5, 1.0, 72.0, true),
    ("total_sulfur_dioxide", 46.5, 32.9, 6.0, 289.0, true),
    ("density", 0.9967, 0.0019, 0.990, 1.004, false),
    ("ph", 3.31, 0.154, 2.74, 4.01, false),
    ("sulphates", 0.658, 0.170, 0.33, 2.0, true),
    ("alcohol", 10.42, 1.07, 8.4, 14.9, false),
];

/// Loadings of each variable on three latent factors (acidity, sulfur, body).
const WINE_LOADINGS: [[f64; 3]; 11] = [
    [0.8, 0.0, 0.3],
    [-0.3, 0.0, -0.2],
    [0.7, 0.0, 0.1],
    [0.0, 0.2, 0.3],
    [0.1, 0.1, 0.3],
    [0.0, 0.85, 0.0],
    [0.0, 0.85, 0.1],
    [0.5, 0.0, 0.7],
    [-0.7, 0.0, 0.0],
    [0.2, 0.0, 0.1],
    [0.0, -0.1, -0.6],
];

/// Share of rows per quality grade 3..=8: 85% in grades 5-6, 1% in grades 3 and 8.
const WINE_QUALITY_MASS: [f64; 6] = [0.005, 0.035, 0.43, 0.42, 0.105, 0.005];

pub const WINE_ROWS: usize = 1599;

/// A wine-like table: 11 correlated physico-chemical inputs and an integer
/// `quality` grade 3-8 with a heavily imbalanced class mass.
pub fn gen_wine(n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for _ in 0..n {
        let latent: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let mut row = Vec::with_capacity(11);
        let mut zs = Vec::with_capacity(11);
        for (k, &(_, mean, sd, lo, hi, lognormal)) in WINE_VARIABLES.iter().enumerate() {
            let load = WINE_LOADINGS[k];
            let shared: f64 = load.iter().zip(&latent).map(|(a, b)| a * b).sum();
            let own = (1.0 - load.iter().map(|a| a * a).sum::<f64>()).max(0.05).sqrt();
            let noise: f64 = StandardNormal.sample(&mut rng);
            let z = shared + own * noise;
            let v = if lognormal {
                let s2 = (1.0 + (sd / mean).powi(2)).ln();
                mean * (s2.sqrt() * z - s2 / 2.0).exp()
            } else {
                mean + sd * z
            };
            row.push(v.clamp(lo, hi));
            zs.push(z);
        }
        let noise: f64 = StandardNormal.sample(&mut rng);
        // alcohol, sulphates and citric acid up; volatile acidity and density down
        let score = 0.6 * zs[10] + 0.3 * zs[9] + 0.2 * zs[2] - 0.45 * zs[1] - 0.2 * zs[7] + 0.5 * noise;
        scores.push(score);
        inputs.push(row);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut quality = vec![0.0; n];
    let mut cumulative = 0.0;
    let mut start = 0;
    for (g, mass) in WINE_QUALITY_MASS.iter().enumerate() {
        cumulative += mass;
        let end = if g + 1 == WINE_QUALITY_MASS.len() {
            n
        } else {
            ((cumulative * n as f64).round() as usize).min(n)
        };
        for &i in &order[start..end] {
            quality[i] = 3.0 + g as f64;
        }
        start = end;
    }
    let mut variables: Vec<VariableSpec> = WINE_VARIABLES
        .iter()
        .map(|&(name, _, _, lo, hi, _)| VariableSpec::input(name, lo, hi))
        .collect();
    variables.push(VariableSpec::target("quality", 3.0, 8.0, Orientation::Maximize));
    Dataset::from_raw_rows(variables, inputs.into_iter().zip(quality.into_iter().map(|q| vec![q])))
}
