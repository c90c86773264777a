mod output;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gapscan::data::{self, gen_demo2d, gen_manifold, gen_uniform, gen_wine, ManifoldKind, Manifest, WINE_ROWS};
use gapscan::esa::EsaParams;
use gapscan::experiments::{self, derive_seed, CompareConfig, Method};
use gapscan::oracles::oracle_by_name;
use gapscan::pipeline::{SearchRequest, Session, SessionConfig, Strategy};
use gapscan::stats::{hull_area, rank_sum_test, Alternative};
use gapscan::strategies::{run_extrapolation, ExtrapolationConfig};
use gapscan_server::ServerConfig;
use serde_json::json;

use crate::output::{write_json, write_points, write_rows, OutDir};

/// Empty-space search experiments: dataset generation, pipeline runs,
/// baseline comparisons and plot data.
#[derive(Parser)]
#[command(name = "gapscan", version, about)]
struct Cli {
    /// Master seed; every random draw in a command derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for agent batches (0 = all cores, 1 = sequential).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Only print warnings and errors on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as `<name>.csv` plus a `<name>.json` manifest.
    Gen(GenArgs),
    /// Run pipeline rounds (search, refine, verify, retrain) against an oracle.
    Run(RunArgs),
    /// Compare ESA with random sampling and random walks on an oracle.
    Compare(CompareArgs),
    /// Emit the point sets behind the agent, extrapolation and embedding plots.
    Figdata(FigdataArgs),
    /// Time agent batches over a grid of dimensions, data sizes and agent counts.
    Scaling(ScalingArgs),
    /// Start the HTTP gateway.
    Serve(ServeArgs),
}

#[derive(Args, Clone)]
struct EsaArgs {
    /// Neighbors per agent.
    #[arg(long)]
    k: Option<usize>,
    /// Maximum steps per agent.
    #[arg(long)]
    steps: Option<usize>,
    /// Step size.
    #[arg(long)]
    alpha: Option<f64>,
    /// Momentum coefficient.
    #[arg(long)]
    gamma: Option<f64>,
    /// Stop once the potential changes by less than this.
    #[arg(long)]
    delta: Option<f64>,
    /// Record a sample every this many steps.
    #[arg(long)]
    interval: Option<usize>,
    /// JSON file with a full parameter set; flags above override it.
    #[arg(long)]
    params: Option<PathBuf>,
}

impl EsaArgs {
    fn resolve(&self) -> Result<EsaParams> {
        let mut p = match &self.params {
            Some(path) => serde_json::from_str(&std::fs::read_to_string(path).with_context(|| path.display().to_string())?)?,
            None => EsaParams::default(),
        };
        if let Some(v) = self.k {
            p.k = v;
        }
        if let Some(v) = self.steps {
            p.max_steps = v;
        }
        if let Some(v) = self.alpha {
            p.alpha = v;
        }
        if let Some(v) = self.gamma {
            p.gamma = v;
        }
        if let Some(v) = self.delta {
            p.delta = v;
        }
        if let Some(v) = self.interval {
            p.interval = v;
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(subcommand)]
    kind: GenKind,
    /// Output directory.
    #[arg(long, short, global = true, default_value = ".")]
    out: PathBuf,
    /// File stem; defaults to the generator name.
    #[arg(long, global = true)]
    name: Option<String>,
}

#[derive(Subcommand)]
enum GenKind {
    /// Uniform inputs in [0,1]^d measured by an oracle.
    Uniform {
        #[arg(long, default_value = "quadratic")]
        oracle: String,
        #[arg(long, default_value_t = 3)]
        dim: usize,
        #[arg(long, default_value_t = 200)]
        rows: usize,
    },
    /// Uniform points in the unit square.
    Demo2d {
        #[arg(long, default_value_t = 300)]
        rows: usize,
    },
    /// Points on a hyperboloid, paraboloid or hypersphere.
    Manifold {
        #[arg(long)]
        kind: ManifoldKind,
    },
    /// Eleven wine-like inputs and an integer quality target.
    Wine {
        #[arg(long, default_value_t = WINE_ROWS)]
        rows: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Dataset CSV; the manifest is the `.json` file next to it unless given.
    #[arg(long, conflicts_with = "rows")]
    data: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Generate this many uniform rows instead of loading a file.
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long, default_value = "quadratic")]
    oracle: String,
    /// Input dimension for generated data.
    #[arg(long, default_value_t = 3)]
    dim: usize,
    #[arg(long, default_value = "esa")]
    strategy: Strategy,
    #[arg(long, default_value_t = 50)]
    batch: usize,
    #[arg(long, default_value_t = 5)]
    rounds: usize,
    /// Verifications per round.
    #[arg(long, default_value_t = 5)]
    verify: usize,
    /// Total verification budget.
    #[arg(long, default_value_t = 50.0)]
    budget: f64,
    #[arg(long, default_value_t = 20.0)]
    t1: f64,
    #[arg(long, default_value_t = 10.0)]
    t2: f64,
    /// Target names forming the objective pair.
    #[arg(long, num_args = 2, default_values_t = ["f1".to_string(), "f2".to_string()])]
    objectives: Vec<String>,
    #[command(flatten)]
    esa: EsaArgs,
    #[arg(long, short, default_value = "run")]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, default_value = "multimodal")]
    oracle: String,
    #[arg(long, default_value_t = 6)]
    dim: usize,
    /// Rows in the fast-forwarded dataset every method starts from.
    #[arg(long, default_value_t = 1000)]
    stage_size: usize,
    #[arg(long, default_value_t = 50)]
    repeats: usize,
    #[arg(long, default_value_t = 1500)]
    agents: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [Method::Esa, Method::Rs, Method::Rw])]
    methods: Vec<Method>,
    #[command(flatten)]
    esa: EsaArgs,
    #[arg(long, short, default_value = "compare")]
    out: PathBuf,
}

#[derive(Args)]
struct FigdataArgs {
    #[command(subcommand)]
    figure: Figure,
    #[arg(long, short, global = true, default_value = "figdata")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Figure {
    /// Agents on a uniform 2D cloud, with and without momentum.
    Fig4 {
        #[arg(long, default_value_t = 300)]
        samples: usize,
        #[arg(long, default_value_t = 600)]
        agents: usize,
        #[command(flatten)]
        esa: EsaArgs,
    },
    /// Repeated anti-hub seeding on the wine-like data.
    Extrapolation {
        #[arg(long, default_value_t = WINE_ROWS)]
        rows: usize,
        #[arg(long, default_value_t = 6)]
        iterations: usize,
        #[arg(long, default_value_t = 300)]
        agents: usize,
        #[arg(long, default_value_t = 8)]
        knn: usize,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
    /// Neighbor embeddings of the three manifolds.
    Cosmds,
}

#[derive(Args)]
struct ScalingArgs {
    #[arg(long = "d", value_delimiter = ',', default_values_t = [2usize, 5, 10, 20])]
    dims: Vec<usize>,
    #[arg(long = "n", value_delimiter = ',', default_values_t = [1000usize])]
    rows: Vec<usize>,
    #[arg(long = "p", value_delimiter = ',', default_values_t = [100usize, 200, 400])]
    agents: Vec<usize>,
    /// Steps per agent.
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, short, default_value = "scaling")]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    /// JSON config file (host, port, data_dir).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let level = if cli.quiet { tracing::Level::WARN } else { tracing::Level::INFO };
    tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).init();
    if let Err(e) = dispatch(&cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(args) => gen(args, cli.seed),
        Command::Run(args) => run(args, cli),
        Command::Compare(args) => compare(args, cli),
        Command::Figdata(args) => figdata(args, cli),
        Command::Scaling(args) => scaling(args, cli.seed),
        Command::Serve(args) => serve(args),
    }
}

fn gen(args: &GenArgs, seed: u64) -> Result<()> {
    let (ds, default_name) = match &args.kind {
        GenKind::Uniform { oracle, dim, rows } => {
            let o = oracle_by_name(oracle, *dim)?;
            (gen_uniform(o.as_ref(), *rows, seed)?, "uniform")
        }
        GenKind::Demo2d { rows } => (gen_demo2d(*rows, seed)?, "demo2d"),
        GenKind::Manifold { kind } => {
            let n = match kind {
                ManifoldKind::Hyperboloid3d => 900,
                _ => 1000,
            };
            let m = gen_manifold(*kind, n, seed);
            let stem = match kind {
                ManifoldKind::Hyperboloid3d => "hyperboloid3d",
                ManifoldKind::Paraboloid4d => "paraboloid4d",
                ManifoldKind::Hypersphere4d => "hypersphere4d",
            };
            (m.dataset()?, stem)
        }
        GenKind::Wine { rows } => (gen_wine(*rows, seed)?, "wine"),
    };
    let name = args.name.as_deref().unwrap_or(default_name);
    std::fs::create_dir_all(&args.out)?;
    data::save_dataset(&ds, &args.out, name)?;
    println!("wrote {} rows to {}", ds.len(), args.out.join(format!("{name}.csv")).display());
    Ok(())
}

fn load_dataset(path: &Path, manifest: Option<&Path>) -> Result<gapscan::model::Dataset> {
    let manifest_path = manifest.map(Path::to_path_buf).unwrap_or_else(|| path.with_extension("json"));
    let manifest = Manifest::load(&manifest_path).with_context(|| format!("manifest {}", manifest_path.display()))?;
    Ok(data::load_csv(path, &manifest).with_context(|| path.display().to_string())?)
}

fn run(args: &RunArgs, cli: &Cli) -> Result<()> {
    let (ds, oracle) = match (&args.data, args.rows) {
        (Some(path), _) => {
            let ds = load_dataset(path, args.manifest.as_deref())?;
            let oracle = oracle_by_name(&args.oracle, ds.input_dim())?;
            (ds, oracle)
        }
        (None, rows) => {
            let oracle = oracle_by_name(&args.oracle, args.dim)?;
            (gen_uniform(oracle.as_ref(), rows.unwrap_or(200), derive_seed(cli.seed, 1))?, oracle)
        }
    };
    let config = SessionConfig {
        objectives: [args.objectives[0].clone(), args.objectives[1].clone()],
        t1: args.t1,
        t2: args.t2,
        budget: args.budget,
        seed: cli.seed,
        parallelism: cli.threads,
        ..SessionConfig::default()
    };
    let mut session = Session::new(ds, Arc::from(oracle), config)?;
    let out = OutDir::create(&args.out)?;
    let esa = args.esa.resolve()?;
    let mut log = Vec::new();
    for round in 0..args.rounds {
        let req = SearchRequest {
            strategy: args.strategy,
            batch_size: args.batch,
            esa: esa.clone(),
            seed: Some(derive_seed(cli.seed, 1000 + round as u64)),
            ..SearchRequest::default()
        };
        let report = session.run_round(&req, args.verify)?;
        println!(
            "round {:>3}  phase {:?} -> {:?}  verified {:>2}  area {:.6} -> {:.6}  budget {}/{}",
            report.round,
            report.phase_before,
            report.phase_after,
            report.verified.len(),
            report.area_before,
            report.area_after,
            report.budget_spent,
            report.budget_cap
        );
        log.push(serde_json::to_string(&report)?);
    }
    out.write_text("rounds.jsonl", &(log.join("\n") + "\n"))?;
    data::save_dataset(&session.dataset(), out.path(), "dataset")?;
    let names: Vec<String> = session.dataset().inputs().map(|v| v.name.clone()).collect();
    let mut header = vec!["id".to_string(), "provenance".to_string()];
    header.extend(names.iter().cloned());
    header.extend(["estimate_0".to_string(), "estimate_1".to_string()]);
    let rows: Vec<Vec<String>> = session
        .proposals()
        .map(|p| {
            let mut row = vec![p.id.to_string(), serde_json::to_string(&p.configuration.provenance).unwrap_or_default().trim_matches('"').to_string()];
            row.extend(p.configuration.values.iter().map(|v| v.to_string()));
            match p.estimate() {
                Some(e) => row.extend(e.iter().map(|v| v.to_string())),
                None => row.extend([String::new(), String::new()]),
            }
            row
        })
        .collect();
    write_rows(&out.file("proposals.csv"), &header, &rows)?;
    write_json(&out.file("progress.json"), &session.progress())?;
    Ok(())
}

fn compare(args: &CompareArgs, cli: &Cli) -> Result<()> {
    let oracle = oracle_by_name(&args.oracle, args.dim)?;
    let cfg = CompareConfig {
        stage_size: args.stage_size,
        repeats: args.repeats,
        agents: args.agents,
        methods: args.methods.clone(),
        params: args.esa.resolve()?,
        seed: cli.seed,
        parallelism: cli.threads,
    };
    let report = experiments::compare(oracle.as_ref(), &cfg)?;
    let out = OutDir::create(&args.out)?;
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| vec![r.repeat.to_string(), r.method.label().to_string(), r.reward.to_string()])
        .collect();
    write_rows(&out.file("compare_rows.csv"), &["repeat", "method", "reward"], &rows)?;
    let summary: Vec<Vec<String>> = report
        .summary
        .iter()
        .map(|s| vec![s.method.label().to_string(), s.mean.to_string(), s.sd.to_string()])
        .collect();
    write_rows(&out.file("compare_summary.csv"), &["method", "mean", "sd"], &summary)?;
    let tests: Vec<Vec<String>> = report
        .tests
        .iter()
        .map(|t| vec![t.a.label().into(), t.b.label().into(), t.p_greater.to_string(), t.p_two_sided.to_string()])
        .collect();
    write_rows(&out.file("compare_tests.csv"), &["a", "b", "p_greater", "p_two_sided"], &tests)?;
    write_json(&out.file("compare.json"), &report)?;

    println!("oracle {}  stage reward {:.6}", report.oracle, report.stage_reward);
    println!("{:<6} {:>12} {:>12}", "method", "mean", "sd");
    for s in &report.summary {
        println!("{:<6} {:>12.6} {:>12.6}", s.method.label(), s.mean, s.sd);
    }
    for t in &report.tests {
        println!(
            "{} vs {}: p(greater) = {:.4}  p(two-sided) = {:.4}",
            t.a.label(),
            t.b.label(),
            t.p_greater,
            t.p_two_sided
        );
    }
    Ok(())
}

fn figdata(args: &FigdataArgs, cli: &Cli) -> Result<()> {
    let out = OutDir::create(&args.out)?;
    match &args.figure {
        Figure::Fig4 { samples, agents, esa } => {
            let params = esa.resolve()?;
            let demo = experiments::agent_demo(*samples, *agents, &params, cli.seed, cli.threads)?;
            write_points(&out.file("fig4_samples.csv"), &demo.samples)?;
            write_points(&out.file("fig4_starts.csv"), &demo.starts)?;
            write_points(&out.file("fig4_finals_gamma0.csv"), &demo.finals_no_momentum)?;
            write_points(&out.file("fig4_finals_momentum.csv"), &demo.finals_momentum)?;
            write_points(&out.file("fig4_trajectory_momentum.csv"), &demo.trajectory_momentum)?;
            let gaps = demo.agent_gap_distances();
            let own = demo.sample_self_distances();
            let test = rank_sum_test(&gaps, &own, Alternative::Greater);
            let summary = json!({
                "samples": samples,
                "agents": agents,
                "gamma": params.gamma,
                "agent_gap_vs_sample_spacing": test,
                "hull_area_finals_gamma0": hull_area(&demo.finals_no_momentum),
                "hull_area_trajectory_momentum": hull_area(&demo.trajectory_momentum),
            });
            write_json(&out.file("fig4_summary.json"), &summary)?;
            println!("fig4: rank-sum p = {:.3e}", test.p_value);
        }
        Figure::Extrapolation {
            rows,
            iterations,
            agents,
            knn,
            bins,
        } => {
            let ds = gen_wine(*rows, derive_seed(cli.seed, 1))?;
            let cfg = ExtrapolationConfig {
                iterations: *iterations,
                agents: *agents,
                knn: *knn,
                bins: *bins,
                parallelism: cli.threads,
                ..ExtrapolationConfig::default()
            };
            let ex = run_extrapolation(&ds.points(), &cfg)?;
            let mut hist = Vec::new();
            let mut dist = Vec::new();
            for it in &ex.iterations {
                for (b, count) in it.histogram.iter().enumerate() {
                    hist.push(vec![
                        it.iteration.to_string(),
                        ex.bin_edges[b].to_string(),
                        ex.bin_edges[b + 1].to_string(),
                        count.to_string(),
                    ]);
                }
                dist.extend(it.distances.iter().map(|d| vec![it.iteration.to_string(), d.to_string()]));
            }
            write_rows(&out.file("extrapolation_histograms.csv"), &["iteration", "bin_lo", "bin_hi", "count"], &hist)?;
            write_rows(&out.file("extrapolation_distances.csv"), &["iteration", "distance"], &dist)?;
            let medians: Vec<f64> = ex.iterations.iter().map(|i| i.median).collect();
            write_json(&out.file("extrapolation_summary.json"), &json!({ "bin_edges": ex.bin_edges, "medians": medians }))?;
            println!("extrapolation medians: {medians:?}");
        }
        Figure::Cosmds => {
            let mut summary = Vec::new();
            for (kind, stem) in [
                (ManifoldKind::Hyperboloid3d, "hyperboloid3d"),
                (ManifoldKind::Paraboloid4d, "paraboloid4d"),
                (ManifoldKind::Hypersphere4d, "hypersphere4d"),
            ] {
                let m = experiments::manifold_embedding(kind, cli.seed)?;
                let e = &m.embedding;
                let rows: Vec<Vec<String>> = e
                    .points
                    .iter()
                    .zip(&e.original_distances)
                    .map(|(p, d)| vec![p[0].to_string(), p[1].to_string(), d.to_string()])
                    .collect();
                write_rows(&out.file(&format!("cosmds_{stem}.csv")), &["x", "y", "distance"], &rows)?;
                summary.push(json!({
                    "manifold": stem,
                    "points": e.points.len(),
                    "eigenvalues": e.eigenvalues,
                    "retained_fraction": e.retained_fraction(),
                    "cosine_error_bound": e.cosine_error_bound(),
                }));
            }
            write_json(&out.file("cosmds_summary.json"), &summary)?;
            println!("cosmds: wrote {} embeddings", summary.len());
        }
    }
    Ok(())
}

fn scaling(args: &ScalingArgs, seed: u64) -> Result<()> {
    if args.dims.is_empty() || args.rows.is_empty() || args.agents.is_empty() {
        bail!("usage: --d, --n and --p each need at least one value");
    }
    let report = experiments::scaling(&args.dims, &args.rows, &args.agents, args.steps, seed)?;
    let out = OutDir::create(&args.out)?;
    let rows: Vec<Vec<String>> = report
        .points
        .iter()
        .map(|p| {
            vec![
                p.d.to_string(),
                p.n_data.to_string(),
                p.agents.to_string(),
                p.steps.to_string(),
                p.seconds.to_string(),
            ]
        })
        .collect();
    write_rows(&out.file("scaling.csv"), &["d", "n_data", "agents", "steps", "seconds"], &rows)?;
    write_json(&out.file("scaling.json"), &report)?;
    println!("{:>4} {:>8} {:>6} {:>10}", "d", "N", "p", "seconds");
    for p in &report.points {
        println!("{:>4} {:>8} {:>6} {:>10.4}", p.d, p.n_data, p.agents, p.seconds);
    }
    println!(
        "growth exponents: d {:?}  N {:?}  p {:?}",
        report.exponent_d, report.exponent_n_data, report.exponent_agents
    );
    Ok(())
}

fn serve(args: &ServeArgs) -> Result<()> {
    let mut config = ServerConfig::load(args.config.as_deref())?;
    if let Some(port) = args.port {
        config.port = port;
    }
    if let Some(dir) = &args.data_dir {
        config.data_dir = dir.clone();
    }
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(gapscan_server::serve(config))?;
    Ok(())
}
