//! Seeded instance generators and the benchmark runner.
//!
//! Generators draw from `ChaCha8Rng::seed_from_u64(seed)`. Domain sizes are
//! drawn first, then the edge set, then table entries in edge order. Normal
//! entries use `rand_distr::StandardNormal`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Instance, Table};
use crate::par;
use crate::solvers::{solve, OrderMode, SolverConfig, SolverId, SolverTrace, WeightsMode};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Random,
    Coloring,
    Signal,
    #[serde(alias = "tree")]
    RandomTree,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Random => "random",
            Family::Coloring => "coloring",
            Family::Signal => "signal",
            Family::RandomTree => "random-tree",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Family::Random => 1,
            Family::Coloring => 2,
            Family::Signal => 3,
            Family::RandomTree => 4,
        }
    }
}

impl FromStr for Family {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(Family::Random),
            "coloring" => Ok(Family::Coloring),
            "signal" => Ok(Family::Signal),
            "tree" | "random-tree" => Ok(Family::RandomTree),
            _ => Err(BenchError::Validation(format!("unknown family {s:?}"))),
        }
    }
}

fn default_density() -> f64 {
    1.0
}
fn default_k_min() -> usize {
    5
}
fn default_k_max() -> usize {
    15
}
fn default_colors() -> usize {
    4
}
fn default_smoothness() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub family: Family,
    pub n: usize,
    #[serde(default = "default_density")]
    pub density: f64,
    /// Explicit edge count; overrides `density` when set.
    #[serde(default)]
    pub edges: Option<usize>,
    #[serde(default = "default_k_min")]
    pub k_min: usize,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_colors")]
    pub n_colors: usize,
    #[serde(default = "default_smoothness")]
    pub smoothness: f64,
    /// Signal family: weight each vertex's data term by 1/2 so that it is
    /// counted once in total over its two ring edges.
    #[serde(default)]
    pub halve_data: bool,
    #[serde(default)]
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn new(family: Family, n: usize, density: f64, seed: u64) -> Self {
        Self {
            family,
            n,
            density,
            edges: None,
            k_min: default_k_min(),
            k_max: default_k_max(),
            n_colors: default_colors(),
            smoothness: default_smoothness(),
            halve_data: false,
            seed,
        }
    }

    /// `round(density · n(n−1)/2)`, at least 1, unless `edges` is set.
    pub fn edge_count(&self) -> usize {
        self.edges.unwrap_or_else(|| {
            let pairs = (self.n * self.n.saturating_sub(1) / 2) as f64;
            ((self.density * pairs).round() as usize).max(1)
        })
    }

    fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Validation(m));
        if !(self.density > 0.0 && self.density <= 1.0) {
            return bad(format!("density {} outside (0, 1]", self.density));
        }
        match self.family {
            Family::Random | Family::Coloring if self.n < 2 => bad("n must be >= 2".into()),
            Family::Signal if self.n < 3 => bad("signal needs n >= 3".into()),
            Family::RandomTree if self.n < 1 => bad("n must be >= 1".into()),
            Family::Random | Family::RandomTree if self.k_min < 1 || self.k_min > self.k_max => {
                bad(format!("bad K range {}..{}", self.k_min, self.k_max))
            }
            Family::Coloring if self.n_colors < 1 => bad("n_colors must be >= 1".into()),
            _ => Ok(()),
        }
    }
}

/// Dispatches on `spec.family`.
pub fn generate(spec: &GeneratorSpec) -> Result<Instance, BenchError> {
    match spec.family {
        Family::Random => gen_random(spec),
        Family::Coloring => gen_coloring(spec),
        Family::Signal => gen_signal(spec),
        Family::RandomTree => {
            spec.validate()?;
            Ok(gen_random_tree(spec.n, spec.k_min, spec.k_max, spec.seed))
        }
    }
}

/// `m` distinct pairs `i < j`, uniform without replacement, sorted.
fn sample_edges(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Result<Vec<(usize, usize)>, BenchError> {
    let pairs = n * (n - 1) / 2;
    if m > pairs {
        return Err(BenchError::Validation(format!("{m} edges exceed the {pairs} available pairs")));
    }
    let mut edges: Vec<(usize, usize)> = index::sample(rng, pairs, m).into_iter().map(|p| unrank_pair(n, p)).collect();
    edges.sort_unstable();
    Ok(edges)
}

/// Inverse of the row-major ranking of `{(i, j) : i < j < n}`.
fn unrank_pair(n: usize, mut p: usize) -> (usize, usize) {
    let mut i = 0;
    while p >= n - 1 - i {
        p -= n - 1 - i;
        i += 1;
    }
    (i, i + 1 + p)
}

fn normal_table(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Table {
    Table::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn build(domains: Vec<usize>, edges: Vec<(usize, usize)>, tables: Vec<Table>) -> Instance {
    Instance::new(domains, edges, tables).expect("generated instance is valid")
}

/// G(n, m) graph, `K_i` uniform on `k_min..=k_max`, standard normal tables.
pub fn gen_random(spec: &GeneratorSpec) -> Result<Instance, BenchError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let domains: Vec<usize> = (0..spec.n).map(|_| rng.random_range(spec.k_min..=spec.k_max)).collect();
    let edges = sample_edges(&mut rng, spec.n, spec.edge_count())?;
    let tables = edges.iter().map(|&(i, j)| normal_table(&mut rng, domains[i], domains[j])).collect();
    Ok(build(domains, edges, tables))
}

/// G(n, m) graph with equality-indicator tables on `n_colors` colors.
pub fn gen_coloring(spec: &GeneratorSpec) -> Result<Instance, BenchError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let edges = sample_edges(&mut rng, spec.n, spec.edge_count())?;
    let k = spec.n_colors;
    let eq = Table::from_fn(k, k, |a, b| if a == b { 1.0 } else { 0.0 });
    Ok(build(vec![k; spec.n], edges.clone(), vec![eq; edges.len()]))
}

/// Ring on `n` binary vertices. The edge `(i, i+1)` carries
/// `|s(i) − x_i| + |s(i+1) − x_{i+1}| + smoothness · [x_i ≠ x_{i+1}]`
/// where `s = sig + noise`, `sig` uniform on {0, 1} and noise uniform on
/// [−1, 1], drawn per vertex in that order.
pub fn gen_signal(spec: &GeneratorSpec) -> Result<Instance, BenchError> {
    spec.validate()?;
    let n = spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noisy: Vec<f64> = (0..n)
        .map(|_| {
            let sig = f64::from(rng.random_range(0..2u8));
            sig + rng.random_range(-1.0..=1.0)
        })
        .collect();
    Ok(signal_instance(&noisy, spec.smoothness, spec.halve_data))
}

/// Signal ring for a given noisy signal.
pub fn signal_instance(noisy: &[f64], smoothness: f64, halve_data: bool) -> Instance {
    let n = noisy.len();
    let w = if halve_data { 0.5 } else { 1.0 };
    let data = |v: usize, x: usize| w * (noisy[v] - x as f64).abs();
    let mut edges = Vec::with_capacity(n);
    let mut tables = Vec::with_capacity(n);
    for i in 0..n {
        let j = (i + 1) % n;
        let (lo, hi) = (i.min(j), i.max(j));
        edges.push((lo, hi));
        tables.push(Table::from_fn(2, 2, |a, b| data(lo, a) + data(hi, b) + if a == b { 0.0 } else { smoothness }));
    }
    build(vec![2; n], edges, tables)
}

/// Random tree by sequential parent attachment: vertex `v ≥ 1` attaches to a
/// uniform vertex in `0..v`. `K_i` uniform on `k_min..=k_max`.
pub fn gen_random_tree(n: usize, k_min: usize, k_max: usize, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domains: Vec<usize> = (0..n).map(|_| rng.random_range(k_min..=k_max)).collect();
    let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.random_range(0..v), v)).collect();
    edges.sort_unstable();
    let tables = edges.iter().map(|&(i, j)| normal_table(&mut rng, domains[i], domains[j])).collect();
    build(domains, edges, tables)
}

/// SplitMix64 finalizer, used to derive stable per-cell seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0u64, |acc, &p| mix(acc ^ mix(p)))
}

fn solver_tag(id: SolverId) -> u64 {
    SolverId::ALL.iter().position(|&s| s == id).unwrap() as u64 + 1
}

fn default_instances() -> usize {
    1
}
fn default_budget() -> usize {
    10
}
fn default_eps() -> f64 {
    0.1
}

/// One instance family of a suite; `seed` in `spec` is ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyEntry {
    #[serde(flatten)]
    pub spec: GeneratorSpec,
    #[serde(default = "default_instances")]
    pub instances: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverEntry {
    pub solver: SolverId,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub weights: Option<WeightsMode>,
    #[serde(default)]
    pub order: Option<OrderMode>,
    #[serde(default)]
    pub trws_fresh_marginals: bool,
}

impl SolverEntry {
    pub fn new(solver: SolverId, budget: usize) -> Self {
        Self { solver, budget, eps: default_eps(), weights: None, order: None, trws_fresh_marginals: false }
    }

    fn config(&self, seed: u64) -> SolverConfig {
        let mut c = SolverConfig::new(self.solver, self.budget, seed);
        c.eps = self.eps;
        c.weights = self.weights.unwrap_or(WeightsMode::Uniform);
        c.order = self.order.unwrap_or(OrderMode::Identity);
        c.trws_fresh_marginals = self.trws_fresh_marginals;
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    #[serde(default)]
    pub seed: u64,
    pub families: Vec<FamilyEntry>,
    pub solvers: Vec<SolverEntry>,
}

impl SuiteConfig {
    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        serde_json::from_str(text).map_err(|e| BenchError::Validation(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BenchError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<(), BenchError> {
        if self.families.is_empty() || self.solvers.is_empty() {
            return Err(BenchError::Validation("suite needs at least one family and one solver".into()));
        }
        for f in &self.families {
            f.spec.validate()?;
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.families.iter().map(|f| f.instances).sum::<usize>() * self.solvers.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub family: Family,
    pub family_index: usize,
    pub instance: usize,
    pub instance_seed: u64,
    pub n: usize,
    pub density: f64,
    pub solver: SolverId,
    pub cell_seed: u64,
    pub final_primal: Option<f64>,
    pub final_dual: Option<f64>,
    pub wall_ms: f64,
    pub trace_file: String,
    pub error: Option<String>,
}

/// Mean best primal and mean dual per sweep for one (family, solver) pair.
/// Traces that stopped early carry their last row forward.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateRow {
    pub family_index: usize,
    pub solver: SolverId,
    pub t: usize,
    pub mean_wall_ms: f64,
    pub mean_primal_best: f64,
    pub mean_dual: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchRow>,
    #[serde(skip)]
    pub traces: Vec<Option<SolverTrace>>,
    pub aggregate: Vec<AggregateRow>,
}

impl BenchmarkReport {
    /// Mean final primal over successful cells of one (family, solver) pair.
    pub fn mean_final_primal(&self, family_index: usize, solver: SolverId) -> Option<f64> {
        mean(
            self.rows
                .iter()
                .filter(|r| r.family_index == family_index && r.solver == solver)
                .filter_map(|r| r.final_primal),
        )
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "family,family_index,instance,instance_seed,n,density,solver,cell_seed,final_primal,final_dual,wall_ms,trace_file,error\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{:.3},{},{}",
                r.family.name(),
                r.family_index,
                r.instance,
                r.instance_seed,
                r.n,
                r.density,
                r.solver.name(),
                r.cell_seed,
                opt(r.final_primal),
                opt(r.final_dual),
                r.wall_ms,
                r.trace_file,
                r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
            );
        }
        s
    }

    pub fn aggregate_csv(&self) -> String {
        let mut s = String::from("family_index,solver,t,mean_wall_ms,mean_primal_best,mean_dual\n");
        for a in &self.aggregate {
            let _ = writeln!(
                s,
                "{},{},{},{:.3},{},{}",
                a.family_index,
                a.solver.name(),
                a.t,
                a.mean_wall_ms,
                a.mean_primal_best,
                opt(a.mean_dual)
            );
        }
        s
    }

    /// Writes `report.csv`, `aggregate.csv` and one trace CSV per cell.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), BenchError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir.join("traces"))?;
        fs::write(dir.join("report.csv"), self.to_csv())?;
        fs::write(dir.join("aggregate.csv"), self.aggregate_csv())?;
        for (row, trace) in self.rows.iter().zip(&self.traces) {
            if let Some(t) = trace {
                fs::write(dir.join(&row.trace_file), t.to_csv())?;
            }
        }
        Ok(())
    }
}

fn opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x == f64::INFINITY => "inf".into(),
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, c) = it.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (c > 0).then(|| s / c as f64)
}

/// Runs every (family, instance, solver) cell. Cells run through
/// [`par::map_range`]; results do not depend on scheduling.
pub fn run_benchmark(suite: &SuiteConfig) -> Result<BenchmarkReport, BenchError> {
    run_with(suite, true)
}

/// Sequential counterpart of [`run_benchmark`].
pub fn run_benchmark_seq(suite: &SuiteConfig) -> Result<BenchmarkReport, BenchError> {
    run_with(suite, false)
}

type Cell = (usize, usize, u64);

fn map_cells<F>(parallel: bool, len: usize, f: F) -> Vec<CellOut>
where
    F: Fn(usize) -> CellOut + Sync + Send,
{
    if parallel {
        par::map_range(len, f)
    } else {
        par::map_range_seq(len, f)
    }
}

fn run_with(suite: &SuiteConfig, parallel: bool) -> Result<BenchmarkReport, BenchError> {
    suite.validate()?;
    let mut slots: Vec<Cell> = Vec::new();
    for (fi, fam) in suite.families.iter().enumerate() {
        for k in 0..fam.instances {
            let seed = derive_seed(&[suite.seed, fi as u64, fam.spec.family.tag(), k as u64]);
            slots.push((fi, k, seed));
        }
    }
    let instances: Vec<CellOut> = map_cells(parallel, slots.len(), |s| {
        let (fi, _, seed) = slots[s];
        let spec = GeneratorSpec { seed, ..suite.families[fi].spec.clone() };
        CellOut::Instance(generate(&spec).map_err(|e| e.to_string()))
    });
    let instances: Vec<Result<Instance, String>> = instances
        .into_iter()
        .map(|c| match c {
            CellOut::Instance(r) => r,
            CellOut::Solved(..) => unreachable!(),
        })
        .collect();

    let ns = suite.solvers.len();
    let outs = map_cells(parallel, slots.len() * ns, |c| {
        let (s, si) = (c / ns, c % ns);
        let (fi, k, iseed) = slots[s];
        let entry = &suite.solvers[si];
        let cell_seed =
            derive_seed(&[suite.seed, suite.families[fi].spec.family.tag(), k as u64, solver_tag(entry.solver)]);
        let res = match &instances[s] {
            Ok(inst) => solve(inst, &entry.config(cell_seed)).map(|(_, t)| t).map_err(|e| e.to_string()),
            Err(e) => Err(e.clone()),
        };
        CellOut::Solved(fi, k, iseed, cell_seed, res)
    });

    let mut rows = Vec::with_capacity(outs.len());
    let mut traces = Vec::with_capacity(outs.len());
    for (c, out) in outs.into_iter().enumerate() {
        let CellOut::Solved(fi, k, iseed, cell_seed, res) = out else { unreachable!() };
        let spec = &suite.families[fi].spec;
        let solver = suite.solvers[c % ns].solver;
        let trace_file = format!("traces/f{fi}_i{k}_{}.csv", solver.name());
        let (final_primal, final_dual, wall_ms, error, trace) = match res {
            Ok(t) => {
                let wall = t.rows.last().map_or(0.0, |r| r.wall_ms);
                (Some(t.best_value()), t.final_dual(), wall, None, Some(t))
            }
            Err(e) => (None, None, 0.0, Some(e), None),
        };
        rows.push(BenchRow {
            family: spec.family,
            family_index: fi,
            instance: k,
            instance_seed: iseed,
            n: spec.n,
            density: spec.density,
            solver,
            cell_seed,
            final_primal,
            final_dual,
            wall_ms,
            trace_file,
            error,
        });
        traces.push(trace);
    }
    let aggregate = aggregate(suite, &rows, &traces);
    Ok(BenchmarkReport { rows, traces, aggregate })
}

enum CellOut {
    Instance(Result<Instance, String>),
    Solved(usize, usize, u64, u64, Result<SolverTrace, String>),
}

fn aggregate(suite: &SuiteConfig, rows: &[BenchRow], traces: &[Option<SolverTrace>]) -> Vec<AggregateRow> {
    let mut out = Vec::new();
    for fi in 0..suite.families.len() {
        for entry in &suite.solvers {
            let group: Vec<&SolverTrace> = rows
                .iter()
                .zip(traces)
                .filter(|(r, _)| r.family_index == fi && r.solver == entry.solver)
                .filter_map(|(_, t)| t.as_ref())
                .filter(|t| !t.rows.is_empty())
                .collect();
            let Some(t_max) = group.iter().map(|t| t.rows.last().unwrap().t).max() else { continue };
            let t_min = group.iter().map(|t| t.rows[0].t).min().unwrap();
            for t in t_min..=t_max {
                let at: Vec<_> =
                    group.iter().map(|tr| tr.rows.iter().rev().find(|r| r.t <= t).unwrap_or(&tr.rows[0])).collect();
                let dual =
                    if at.iter().all(|r| r.dual.is_some()) { mean(at.iter().filter_map(|r| r.dual)) } else { None };
                out.push(AggregateRow {
                    family_index: fi,
                    solver: entry.solver,
                    t,
                    mean_wall_ms: mean(at.iter().map(|r| r.wall_ms)).unwrap_or(0.0),
                    mean_primal_best: mean(at.iter().map(|r| r.primal_best)).unwrap_or(f64::NAN),
                    mean_dual: dual,
                });
            }
        }
    }
    out
}
