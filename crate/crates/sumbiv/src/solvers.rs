//! Iterative solvers. Every solver sweeps the vertices in the order given by
//! the config, keeps the best primal candidate, and records one trace row per
//! sweep.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::duals::{
    big_m_substitute, dual_lp_solve, edge_min_marginal, entropy_dual_objective, min_marginals, recover_primal,
    reparameterization_bound, star_block_maximize, star_entropy_block, tree_dual_objective, vertex_sum, DualError,
    DualPotentials, MinMarginals, EPS_RANGE,
};
use crate::exact::argmin;
use crate::model::{Assignment, Instance, Table};

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error(transparent)]
    Dual(#[from] DualError),
}

impl SolverError {
    /// True for failures caused by bad inputs rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(self, SolverError::Validation(_) | SolverError::Dual(DualError::Validation(_)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverId {
    Cd,
    Lpdlp,
    Bcadtr,
    Bcadetr,
    Trws,
    TrwsLeg,
}

impl SolverId {
    pub const ALL: [SolverId; 6] =
        [SolverId::Cd, SolverId::Lpdlp, SolverId::Bcadtr, SolverId::Bcadetr, SolverId::Trws, SolverId::TrwsLeg];

    pub fn name(self) -> &'static str {
        match self {
            SolverId::Cd => "cd",
            SolverId::Lpdlp => "lpdlp",
            SolverId::Bcadtr => "bcadtr",
            SolverId::Bcadetr => "bcadetr",
            SolverId::Trws => "trws",
            SolverId::TrwsLeg => "trws-leg",
        }
    }

    /// Solvers built on a dual relaxation, i.e. everything but CD.
    pub fn is_relaxation(self) -> bool {
        self != SolverId::Cd
    }
}

impl FromStr for SolverId {
    type Err = SolverError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SolverId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| SolverError::Validation(format!("unknown solver {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightsMode {
    Uniform,
    Random,
}

impl FromStr for WeightsMode {
    type Err = SolverError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(WeightsMode::Uniform),
            "random" => Ok(WeightsMode::Random),
            _ => Err(SolverError::Validation(format!("unknown weights mode {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderMode {
    Identity,
    Random,
}

impl FromStr for OrderMode {
    type Err = SolverError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identity" => Ok(OrderMode::Identity),
            "random" => Ok(OrderMode::Random),
            _ => Err(SolverError::Validation(format!("unknown order mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverConfig {
    pub solver: SolverId,
    pub order: OrderMode,
    /// Number of full sweeps.
    pub budget: usize,
    pub seed: u64,
    pub weights: WeightsMode,
    pub eps: f64,
    /// TRW-S only: recompute the min-marginals of every incident edge before
    /// aggregating at a vertex instead of reusing stored ones.
    pub trws_fresh_marginals: bool,
}

impl SolverConfig {
    pub fn new(solver: SolverId, budget: usize, seed: u64) -> Self {
        Self {
            solver,
            order: OrderMode::Identity,
            budget,
            seed,
            weights: WeightsMode::Uniform,
            eps: 0.1,
            trws_fresh_marginals: false,
        }
    }

    fn validate(&self) -> Result<(), SolverError> {
        if self.budget == 0 {
            return Err(SolverError::Validation("budget must be >= 1".into()));
        }
        if self.solver == SolverId::Bcadetr && !(self.eps >= EPS_RANGE.0 && self.eps <= EPS_RANGE.1) {
            return Err(SolverError::Validation(format!(
                "eps {} outside [{}, {}]",
                self.eps, EPS_RANGE.0, EPS_RANGE.1
            )));
        }
        Ok(())
    }

    /// Vertex processing order (`c⁻¹(1), …, c⁻¹(n)`).
    pub fn vertex_order(&self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        if self.order == OrderMode::Random {
            let mut rng = stream(self.seed, 1);
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
        }
        order
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn random_assignment(inst: &Instance, seed: u64) -> Assignment {
    let mut rng = stream(seed, 2);
    inst.domains().iter().map(|&k| rng.random_range(0..k)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub t: usize,
    pub wall_ms: f64,
    pub primal_best: f64,
    pub dual: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverTrace {
    pub config: SolverConfig,
    pub rows: Vec<TraceRow>,
    pub best: Assignment,
    /// Exponent clamps in the entropy objective, summed over sweeps.
    pub clamps: u64,
}

impl SolverTrace {
    fn new(config: &SolverConfig) -> Self {
        Self { config: config.clone(), rows: Vec::new(), best: Vec::new(), clamps: 0 }
    }

    pub fn best_value(&self) -> f64 {
        self.rows.last().map_or(f64::INFINITY, |r| r.primal_best)
    }

    pub fn final_dual(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.dual)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,wall_ms,primal_best,dual\n");
        for r in &self.rows {
            let dual = r.dual.map(fmt_num).unwrap_or_default();
            let _ = writeln!(s, "{},{:.3},{},{}", r.t, r.wall_ms, fmt_num(r.primal_best), dual);
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

fn fmt_num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v}")
    }
}

struct Recorder {
    start: Instant,
    best_value: f64,
    best: Assignment,
}

impl Recorder {
    fn new(inst: &Instance, x: Assignment) -> Self {
        Self { start: Instant::now(), best_value: inst.evaluate_unchecked(&x), best: x }
    }

    fn offer(&mut self, inst: &Instance, y: &[usize]) {
        let v = inst.evaluate_unchecked(y);
        if v < self.best_value {
            self.best_value = v;
            self.best = y.to_vec();
        }
    }

    fn row(&self, t: usize, dual: Option<f64>) -> TraceRow {
        TraceRow { t, wall_ms: self.start.elapsed().as_secs_f64() * 1e3, primal_best: self.best_value, dual }
    }
}

/// Dispatches on `config.solver`.
pub fn solve(inst: &Instance, config: &SolverConfig) -> Result<(Assignment, SolverTrace), SolverError> {
    match config.solver {
        SolverId::Cd => solve_cd(inst, config),
        SolverId::Lpdlp => solve_lpdlp(inst, config),
        SolverId::Bcadtr => solve_bcadtr(inst, config),
        SolverId::Bcadetr => solve_bcadetr(inst, config),
        SolverId::Trws => solve_trws(inst, config),
        SolverId::TrwsLeg => solve_trws_leg(inst, config),
    }
}

fn require_finite(inst: &Instance) -> Result<(), SolverError> {
    if inst.is_finite() {
        Ok(())
    } else {
        Err(SolverError::Validation("solver requires finite tables".into()))
    }
}

/// One coordinate-descent sweep. Returns the objective after every
/// coordinate visit and whether any coordinate changed.
///
/// A move is applied only if the fully re-evaluated objective does not
/// increase, which makes the sequence monotone in floating point as well.
pub fn cd_sweep(inst: &Instance, x: &mut Assignment, order: &[usize]) -> (Vec<f64>, bool) {
    let mut fx = inst.evaluate_unchecked(x);
    let mut values = Vec::with_capacity(order.len());
    let mut changed = false;
    let mut scores = Vec::new();
    for &i in order {
        scores.clear();
        scores.extend((0..inst.domain(i)).map(|a| inst.local_cost(x, i, a)));
        let a = argmin(&scores);
        if a != x[i] {
            let old = x[i];
            x[i] = a;
            let fy = inst.evaluate_unchecked(x);
            if fy <= fx {
                fx = fy;
                changed = true;
            } else {
                x[i] = old;
            }
        }
        values.push(fx);
    }
    (values, changed)
}

/// Coordinate descent from a seeded random start.
pub fn solve_cd(inst: &Instance, config: &SolverConfig) -> Result<(Assignment, SolverTrace), SolverError> {
    solve_cd_from(inst, config, random_assignment(inst, config.seed))
}

pub fn solve_cd_from(
    inst: &Instance,
    config: &SolverConfig,
    start: Assignment,
) -> Result<(Assignment, SolverTrace), SolverError> {
    config.validate()?;
    inst.check_assignment(&start).map_err(|e| SolverError::Validation(e.to_string()))?;
    let order = config.vertex_order(inst.n());
    let mut trace = SolverTrace::new(config);
    let mut x = start;
    let mut rec = Recorder::new(inst, x.clone());
    trace.rows.push(rec.row(0, None));
    for t in 1..=config.budget {
        let (_, changed) = cd_sweep(inst, &mut x, &order);
        rec.offer(inst, &x);
        trace.rows.push(rec.row(t, None));
        if !changed {
            break;
        }
    }
    trace.best = rec.best.clone();
    Ok((rec.best, trace))
}

/// Dual LP, min-marginals, one recovery sweep. `+∞` entries are replaced by
/// a big-M value for the LP; primal values refer to the original instance.
pub fn solve_lpdlp(inst: &Instance, config: &SolverConfig) -> Result<(Assignment, SolverTrace), SolverError> {
    config.validate()?;
    let start = Instant::now();
    let finite = if inst.is_finite() { inst.clone() } else { big_m_substitute(inst).0 };
    let (value, pot) = dual_lp_solve(&finite)?;
    let m = min_marginals(&finite, &pot);
    let order = config.vertex_order(inst.n());
    let x = recover_primal(&finite, &m, &order);
    let mut trace = SolverTrace::new(config);
    trace.rows.push(TraceRow {
        t: 1,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        primal_best: inst.evaluate_unchecked(&x),
        dual: Some(value),
    });
    trace.best = x.clone();
    Ok((x, trace))
}

fn simplex_weights(rng: &mut ChaCha8Rng, k: usize, mode: WeightsMode) -> Vec<f64> {
    match mode {
        WeightsMode::Uniform => vec![1.0 / k as f64; k],
        WeightsMode::Random => {
            let draws: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
            let s: f64 = draws.iter().sum();
            draws.into_iter().map(|d| d / s).collect()
        }
    }
}

/// Block-coordinate ascent on the dual tree relaxation.
pub fn solve_bcadtr(inst: &Instance, config: &SolverConfig) -> Result<(Assignment, SolverTrace), SolverError> {
    solve_bcadtr_observed(inst, config, |_, _| {})
}

/// As [`solve_bcadtr`], calling `observer(vertex, block_value)` after every
/// block update with the new `min_x Σ_j ρ_ij(x)` of that vertex.
pub fn solve_bcadtr_observed(
    inst: &Instance,
    config: &SolverConfig,
    mut observer: impl FnMut(usize, f64),
) -> Result<(Assignment, SolverTrace), SolverError> {
    config.validate()?;
    require_finite(inst)?;
    let order = config.vertex_order(inst.n());
    let mut wrng = stream(config.seed, 3);
    let mut pot = DualPotentials::zeros(inst);
    let mut mm = MinMarginals::zeros(inst);
    let mut trace = SolverTrace::new(config);
    let mut rec = Recorder::new(inst, random_assignment(inst, config.seed));
    trace.rows.push(rec.row(0, None));
    let adj = inst.adjacency();
    for t in 1..=config.budget {
        for &i in &order {
            let incident = adj.incident(i);
            if incident.is_empty() {
                continue;
            }
            let legs: Vec<Vec<f64>> = incident
                .iter()
                .map(|inc| {
                    let mut out = vec![0.0; inst.domain(i)];
                    edge_min_marginal(inst, inc, pot.rho_far(inc), &mut out);
                    out
                })
                .collect();
            let w = simplex_weights(&mut wrng, incident.len(), config.weights);
            let rho = star_block_maximize(&legs, &w)?;
            for ((inc, r), m) in incident.iter().zip(rho).zip(legs) {
                *pot.rho_mut(inc) = r;
                *mm.get_mut(inc) = m;
            }
            let block = vertex_sum(inst, &pot, i).into_iter().fold(f64::INFINITY, f64::min);
            pot.vertex[i] = block;
            observer(i, block);
        }
        let dual = tree_dual_objective(inst, &pot);
        let y = recover_primal(inst, &mm, &order);
        rec.offer(inst, &y);
        trace.rows.push(rec.row(t, Some(dual)));
    }
    trace.best = rec.best.clone();
    Ok((rec.best, trace))
}

/// Block-coordinate ascent on the entropy-regularized dual. Each block is
/// the closed-form star maximizer on the tables reparameterized by the
/// neighbors' current potentials.
pub fn solve_bcadetr(inst: &Instance, config: &SolverConfig) -> Result<(Assignment, SolverTrace), SolverError> {
    config.validate()?;
    require_finite(inst)?;
    let order = config.vertex_order(inst.n());
    let eps = config.eps;
    let mut pot = DualPotentials::zeros(inst);
    let mut trace = SolverTrace::new(config);
    let mut rec = Recorder::new(inst, random_assignment(inst, config.seed));
    trace.rows.push(rec.row(0, None));
    let adj = inst.adjacency();
    for t in 1..=config.budget {
        for &i in &order {
            let incident = adj.incident(i);
            if incident.is_empty() {
                continue;
            }
            let legs: Vec<Table> = incident
                .iter()
                .map(|inc| {
                    let far = pot.rho_far(inc);
                    Table::from_fn(inst.domain(i), inst.domain(inc.nbr), |a, b| inst.pair(inc, a, b) - far[b])
                })
                .collect();
            let blk = star_entropy_block(&legs, eps);
            for (inc, r) in incident.iter().zip(blk.legs) {
                *pot.rho_mut(inc) = r;
            }
            pot.vertex[i] = blk.rho;
        }
        let (dual, clamps) = entropy_dual_objective(inst, &pot, eps)?;
        trace.clamps += clamps;
        let m = min_marginals(inst, &pot);
        let y = recover_primal(inst, &m, &order);
        rec.offer(inst, &y);
        trace.rows.push(rec.row(t, Some(dual)));
    }
    trace.best = rec.best.clone();
    Ok((rec.best, trace))
}

/// `1/p_i` with `p_i = max(#later neighbors, #earlier neighbors)`.
fn trw_gamma(inst: &Instance, pos: &[usize]) -> Vec<f64> {
    (0..inst.n())
        .map(|i| {
            let later = inst.adjacency().neighbors(i).filter(|&j| pos[j] > pos[i]).count();
            let earlier = inst.adjacency().degree(i) - later;
            let p = later.max(earlier);
            if p == 0 {
                0.0
            } else {
                1.0 / p as f64
            }
        })
        .collect()
}

fn positions(order: &[usize]) -> Vec<usize> {
    let mut pos = vec![0; order.len()];
    for (t, &v) in order.iter().enumerate() {
        pos[v] = t;
    }
    pos
}

/// Sequential tree-reweighted message passing on potentials `ρ`. The
/// processing order is reversed after every sweep.
pub fn solve_trws(inst: &Instance, config: &SolverConfig) -> Result<(Assignment, SolverTrace), SolverError> {
    config.validate()?;
    require_finite(inst)?;
    let mut order = config.vertex_order(inst.n());
    let mut pot = DualPotentials::zeros(inst);
    let mut mm = MinMarginals::zeros(inst);
    let mut trace = SolverTrace::new(config);
    let mut rec = Recorder::new(inst, random_assignment(inst, config.seed));
    trace.rows.push(rec.row(0, None));
    let adj = inst.adjacency();
    for t in 1..=config.budget {
        let pos = positions(&order);
        let gamma = trw_gamma(inst, &pos);
        for &i in &order {
            let incident = adj.incident(i);
            if config.trws_fresh_marginals {
                for inc in incident {
                    let mut out = vec![0.0; inst.domain(i)];
                    edge_min_marginal(inst, inc, pot.rho_far(inc), &mut out);
                    *mm.get_mut(inc) = out;
                }
            }
            let mut mi = vec![0.0; inst.domain(i)];
            for inc in incident {
                for (s, v) in mi.iter_mut().zip(mm.get(inc)) {
                    *s += v;
                }
            }
            for inc in incident.iter().filter(|inc| pos[inc.nbr] > pos[i]) {
                let mut out = vec![0.0; inst.domain(i)];
                edge_min_marginal(inst, inc, pot.rho_far(inc), &mut out);
                let rho: Vec<f64> = out.iter().zip(&mi).map(|(m, s)| m - gamma[i] * s).collect();
                *mm.get_mut(inc) = out;
                *pot.rho_mut(inc) = rho;
            }
        }
        let dual = reparameterization_bound(inst, &pot);
        let y = recover_primal(inst, &mm, &order);
        rec.offer(inst, &y);
        trace.rows.push(rec.row(t, Some(dual)));
        order.reverse();
    }
    trace.best = rec.best.clone();
    Ok((rec.best, trace))
}

/// Legacy sequential tree-reweighted message passing with normalized
/// messages. `msg.get(inc)` is the message into the owning vertex.
pub fn solve_trws_leg(inst: &Instance, config: &SolverConfig) -> Result<(Assignment, SolverTrace), SolverError> {
    config.validate()?;
    require_finite(inst)?;
    let mut order = config.vertex_order(inst.n());
    let mut msg = MinMarginals::zeros(inst);
    let mut trace = SolverTrace::new(config);
    let mut rec = Recorder::new(inst, random_assignment(inst, config.seed));
    trace.rows.push(rec.row(0, None));
    let adj = inst.adjacency();
    for t in 1..=config.budget {
        let pos = positions(&order);
        let gamma = trw_gamma(inst, &pos);
        for &i in &order {
            let incident = adj.incident(i);
            let mut mi = vec![0.0; inst.domain(i)];
            for inc in incident {
                for (s, v) in mi.iter_mut().zip(msg.get(inc)) {
                    *s += v;
                }
            }
            let delta = mi.iter().copied().fold(f64::INFINITY, f64::min);
            for v in &mut mi {
                *v -= delta;
            }
            for inc in incident.iter().filter(|inc| pos[inc.nbr] > pos[i]) {
                let j = inc.nbr;
                let own = msg.get(inc).to_vec();
                let mut out: Vec<f64> = (0..inst.domain(j))
                    .map(|b| {
                        (0..inst.domain(i))
                            .map(|a| gamma[i] * mi[a] - own[a] + inst.pair(inc, a, b))
                            .fold(f64::INFINITY, f64::min)
                    })
                    .collect();
                let delta = out.iter().copied().fold(f64::INFINITY, f64::min);
                for v in &mut out {
                    *v -= delta;
                }
                let p = &mut msg.pair[inc.edge];
                if inc.low {
                    p.1 = out;
                } else {
                    p.0 = out;
                }
            }
        }
        let dual = leg_bound(inst, &msg);
        let y = recover_primal(inst, &msg, &order);
        rec.offer(inst, &y);
        trace.rows.push(rec.row(t, Some(dual)));
        order.reverse();
    }
    trace.best = rec.best.clone();
    Ok((rec.best, trace))
}

/// Better of two reparameterization bounds for the stored messages: the
/// messages taken as potentials directly, and each vertex's aggregated
/// messages spread evenly over its edges.
fn leg_bound(inst: &Instance, msg: &MinMarginals) -> f64 {
    let direct = DualPotentials { pair: msg.pair.clone(), vertex: vec![0.0; inst.n()] };
    let mut spread = direct.clone();
    let adj = inst.adjacency();
    for i in 0..inst.n() {
        let incident = adj.incident(i);
        let share: Vec<f64> = vertex_sum(inst, &direct, i).iter().map(|v| v / incident.len() as f64).collect();
        for inc in incident {
            for (r, s) in spread.rho_mut(inc).iter_mut().zip(&share) {
                *r -= s;
            }
        }
    }
    reparameterization_bound(inst, &direct).max(reparameterization_bound(inst, &spread))
}
