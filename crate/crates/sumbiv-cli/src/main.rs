use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use sumbiv::bench::{generate, run_benchmark, BenchError, Family, GeneratorSpec, SuiteConfig};
use sumbiv::solvers::{solve, OrderMode, SolverConfig, SolverError, SolverId, WeightsMode};
use sumbiv::Instance;

#[derive(Parser)]
#[command(name = "sumbiv", version, about = "Minimize sums of bivariate functions over finite domains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded benchmark instance.
    Generate {
        #[arg(long)]
        family: Family,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        density: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        k_min: usize,
        #[arg(long, default_value_t = 15)]
        k_max: usize,
        #[arg(long, default_value_t = 4)]
        colors: usize,
        /// Signal family: count each data term once instead of per edge.
        #[arg(long)]
        halve_data: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one solver on an instance file.
    Solve {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        solver: SolverId,
        #[arg(long, default_value_t = 10)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        #[arg(long, default_value = "uniform")]
        weights: WeightsMode,
        #[arg(long, default_value = "identity")]
        order: OrderMode,
        /// TRW-S: recompute all incident min-marginals at each vertex.
        #[arg(long)]
        fresh_marginals: bool,
        /// Trace output; JSON when the extension is `.json`, CSV otherwise.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Validate an instance file and print graph statistics.
    Check {
        #[arg(long)]
        instance: PathBuf,
    },
    /// Run a benchmark suite described by a JSON config.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Validation(anyhow::Error),
    Solver(anyhow::Error),
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Validation(_) => Failure::Validation(e.into()),
            BenchError::Io(_) => Failure::Solver(e.into()),
        }
    }
}

impl From<SolverError> for Failure {
    fn from(e: SolverError) -> Self {
        if e.is_validation() {
            Failure::Validation(e.into())
        } else {
            Failure::Solver(e.into())
        }
    }
}

fn io<T>(r: std::io::Result<T>, path: &Path) -> Result<T, Failure> {
    r.with_context(|| format!("writing {}", path.display())).map_err(Failure::Solver)
}

fn load(path: &Path) -> Result<Instance, Failure> {
    Instance::load(path).with_context(|| format!("loading {}", path.display())).map_err(Failure::Validation)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate { family, n, density, seed, k_min, k_max, colors, halve_data, out } => {
            let spec = GeneratorSpec {
                k_min,
                k_max,
                n_colors: colors,
                halve_data,
                ..GeneratorSpec::new(family, n, density, seed)
            };
            let inst = generate(&spec)?;
            io(fs::write(&out, inst.to_json()), &out)?;
            println!("wrote {} ({} vertices, {} edges)", out.display(), inst.n(), inst.edges().len());
        }
        Command::Solve { instance, solver, budget, seed, eps, weights, order, fresh_marginals, trace } => {
            let inst = load(&instance)?;
            let mut cfg = SolverConfig::new(solver, budget, seed);
            cfg.eps = eps;
            cfg.weights = weights;
            cfg.order = order;
            cfg.trws_fresh_marginals = fresh_marginals;
            let (best, tr) = solve(&inst, &cfg)?;
            if let Some(path) = trace {
                let text = if path.extension().is_some_and(|e| e == "json") { tr.to_json() } else { tr.to_csv() };
                io(fs::write(&path, text), &path)?;
            }
            println!("solver: {}", solver.name());
            println!("best: {}", tr.best_value());
            match tr.final_dual() {
                Some(d) => println!("dual: {d}"),
                None => println!("dual: -"),
            }
            let labels: Vec<String> = best.iter().map(usize::to_string).collect();
            println!("assignment: {}", labels.join(" "));
        }
        Command::Check { instance } => {
            let inst = load(&instance)?;
            let (forest, _) = inst.is_forest();
            let (kmin, kmax) = inst.domains().iter().fold((usize::MAX, 0), |(a, b), &k| (a.min(k), b.max(k)));
            let pairs = (inst.n() * inst.n().saturating_sub(1) / 2).max(1);
            println!("vertices: {}", inst.n());
            println!("edges: {}", inst.edges().len());
            println!("density: {}", inst.edges().len() as f64 / pairs as f64);
            println!("domain sizes: {}..{}", kmin.min(kmax), kmax);
            println!("states: {}", inst.state_count());
            println!("forest: {forest}");
            println!("finite: {}", inst.is_finite());
        }
        Command::Bench { config, out } => {
            let suite = SuiteConfig::load(&config)?;
            let report = run_benchmark(&suite)?;
            report.write(&out)?;
            let failed = report.rows.iter().filter(|r| r.error.is_some()).count();
            println!("{} cells, {} failed, report in {}", report.rows.len(), failed, out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
