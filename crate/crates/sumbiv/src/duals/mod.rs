//! Dual potentials of the local relaxation: the dual LP, min-marginals,
//! star block maximizers (plain and entropy-regularized), and primal recovery.

pub mod lp;

use thiserror::Error;

use crate::exact::argmin;
use crate::model::{Assignment, Incidence, Instance, Table};
use lp::{ClarabelLp, LpProblem, LpSolver, LpStatus, RowKind};

#[derive(Debug, Error, PartialEq)]
pub enum DualError {
    #[error("LP solver {solver} failed with status {status:?}")]
    Lp { solver: &'static str, status: LpStatus },
    #[error("validation error: {0}")]
    Validation(String),
}

/// Directed univariate potentials. `pair[e] = (ρ_ij, ρ_ji)` for edge
/// `e = (i, j)`, `vertex[i] = ρ_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct DualPotentials {
    pub pair: Vec<(Vec<f64>, Vec<f64>)>,
    pub vertex: Vec<f64>,
}

impl DualPotentials {
    pub fn zeros(inst: &Instance) -> Self {
        Self { pair: directed_zeros(inst), vertex: vec![0.0; inst.n()] }
    }

    /// `ρ_{i,j}` for the vertex owning `inc`.
    #[inline]
    pub fn rho(&self, inc: &Incidence) -> &[f64] {
        let p = &self.pair[inc.edge];
        if inc.low {
            &p.0
        } else {
            &p.1
        }
    }

    /// `ρ_{j,i}`, the potential on the far side of `inc`.
    #[inline]
    pub fn rho_far(&self, inc: &Incidence) -> &[f64] {
        let p = &self.pair[inc.edge];
        if inc.low {
            &p.1
        } else {
            &p.0
        }
    }

    #[inline]
    pub fn rho_mut(&mut self, inc: &Incidence) -> &mut Vec<f64> {
        let p = &mut self.pair[inc.edge];
        if inc.low {
            &mut p.0
        } else {
            &mut p.1
        }
    }

    pub fn total(&self) -> f64 {
        self.vertex.iter().sum()
    }

    /// Largest violation of `ρ_ij(a) + ρ_ji(b) ≤ f(a, b)`.
    pub fn max_edge_violation(&self, inst: &Instance) -> f64 {
        let mut worst: f64 = 0.0;
        for (e, t) in inst.tables().iter().enumerate() {
            let (ri, rj) = &self.pair[e];
            for a in 0..t.rows() {
                for b in 0..t.cols() {
                    worst = worst.max(ri[a] + rj[b] - t.get(a, b));
                }
            }
        }
        worst
    }

    /// Largest deviation of `Σ_j ρ_ij(a)` from `ρ_i`.
    pub fn max_constancy_violation(&self, inst: &Instance) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..inst.n() {
            let s = vertex_sum(inst, self, i);
            for v in s {
                worst = worst.max((v - self.vertex[i]).abs());
            }
        }
        worst
    }
}

fn directed_zeros(inst: &Instance) -> Vec<(Vec<f64>, Vec<f64>)> {
    inst.edges().iter().map(|&(i, j)| (vec![0.0; inst.domain(i)], vec![0.0; inst.domain(j)])).collect()
}

/// `Σ_j ρ_ij(a)` over all neighbors, as a function of `a`.
pub fn vertex_sum(inst: &Instance, pot: &DualPotentials, i: usize) -> Vec<f64> {
    let mut s = vec![0.0; inst.domain(i)];
    for inc in inst.adjacency().incident(i) {
        for (acc, r) in s.iter_mut().zip(pot.rho(inc)) {
            *acc += r;
        }
    }
    s
}

/// Directed min-marginals, same layout as [`DualPotentials::pair`].
#[derive(Clone, Debug, PartialEq)]
pub struct MinMarginals {
    pub pair: Vec<(Vec<f64>, Vec<f64>)>,
}

impl MinMarginals {
    pub fn zeros(inst: &Instance) -> Self {
        Self { pair: directed_zeros(inst) }
    }

    #[inline]
    pub fn get(&self, inc: &Incidence) -> &[f64] {
        let p = &self.pair[inc.edge];
        if inc.low {
            &p.0
        } else {
            &p.1
        }
    }

    #[inline]
    pub fn get_mut(&mut self, inc: &Incidence) -> &mut Vec<f64> {
        let p = &mut self.pair[inc.edge];
        if inc.low {
            &mut p.0
        } else {
            &mut p.1
        }
    }
}

/// `m(a) = min_b f(a, b) − ρ_far(b)` seen from the vertex owning `inc`.
pub fn edge_min_marginal(inst: &Instance, inc: &Incidence, far: &[f64], out: &mut [f64]) {
    for (a, o) in out.iter_mut().enumerate() {
        let mut best = f64::INFINITY;
        for (b, r) in far.iter().enumerate() {
            best = best.min(inst.pair(inc, a, b) - r);
        }
        *o = best;
    }
}

pub fn min_marginals(inst: &Instance, pot: &DualPotentials) -> MinMarginals {
    let mut m = MinMarginals::zeros(inst);
    for i in 0..inst.n() {
        for inc in inst.adjacency().incident(i) {
            let mut out = vec![0.0; inst.domain(i)];
            edge_min_marginal(inst, inc, pot.rho_far(inc), &mut out);
            *m.get_mut(inc) = out;
        }
    }
    m
}

/// Replaces `+∞` entries by `M = 1 + |E| · (1 + max finite |entry|) · 10`.
pub fn big_m_substitute(inst: &Instance) -> (Instance, f64) {
    let max_abs = inst
        .tables()
        .iter()
        .flat_map(|t| t.data().iter().copied())
        .filter(|v| v.is_finite())
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    let m = 1.0 + inst.edges().len() as f64 * (1.0 + max_abs) * 10.0;
    (big_m_substitute_with(inst, m), m)
}

/// Replaces `+∞` entries by the given `m`.
pub fn big_m_substitute_with(inst: &Instance, m: f64) -> Instance {
    let tables = inst
        .tables()
        .iter()
        .map(|t| {
            let mut t = t.clone();
            for v in t.data_mut() {
                if *v == f64::INFINITY {
                    *v = m;
                }
            }
            t
        })
        .collect();
    inst.with_tables(tables).expect("substitution keeps shapes")
}

/// Variable layout of the dual LP built by [`build_dual_lp`].
#[derive(Clone, Debug)]
pub struct DualLpLayout {
    /// Column of `ρ_i`.
    pub vertex_col: Vec<usize>,
    /// First column of `ρ_ij` and of `ρ_ji` for every edge.
    pub pair_col: Vec<(usize, usize)>,
}

/// The dual LP: maximize `Σ ρ_i` subject to `ρ_ij(a) + ρ_ji(b) ≤ f(a, b)` and
/// `Σ_j ρ_ij(a) = ρ_i`, all variables free.
pub fn build_dual_lp(inst: &Instance) -> (LpProblem, DualLpLayout) {
    let n = inst.n();
    let mut col = n;
    let pair_col: Vec<(usize, usize)> = inst
        .edges()
        .iter()
        .map(|&(i, j)| {
            let c = (col, col + inst.domain(i));
            col += inst.domain(i) + inst.domain(j);
            c
        })
        .collect();
    let mut p = LpProblem::new(col);
    for i in 0..n {
        p.objective[i] = 1.0;
    }
    for (e, t) in inst.tables().iter().enumerate() {
        let (ci, cj) = pair_col[e];
        for a in 0..t.rows() {
            for b in 0..t.cols() {
                p.add_row(RowKind::Le, &[(ci + a, 1.0), (cj + b, 1.0)], t.get(a, b));
            }
        }
    }
    for i in 0..n {
        for a in 0..inst.domain(i) {
            let mut coefs: Vec<(usize, f64)> = inst
                .adjacency()
                .incident(i)
                .iter()
                .map(|inc| {
                    let (ci, cj) = pair_col[inc.edge];
                    (if inc.low { ci } else { cj } + a, 1.0)
                })
                .collect();
            coefs.push((i, -1.0));
            p.add_row(RowKind::Eq, &coefs, 0.0);
        }
    }
    (p, DualLpLayout { vertex_col: (0..n).collect(), pair_col })
}

pub const LP_FEASIBILITY_TOL: f64 = 1e-7;

/// Solves the dual LP with the interior-point backend. Its potentials are
/// strictly complementary, which primal recovery on forests relies on;
/// vertex solutions of the simplex can leave ties that recovery resolves
/// suboptimally.
pub fn dual_lp_solve(inst: &Instance) -> Result<(f64, DualPotentials), DualError> {
    dual_lp_solve_with(inst, &ClarabelLp::default())
}

/// Solves the dual LP and repairs the solution so that it is exactly
/// feasible; the returned value is `Σ ρ_i` of the repaired potentials.
pub fn dual_lp_solve_with(inst: &Instance, solver: &dyn LpSolver) -> Result<(f64, DualPotentials), DualError> {
    if !inst.is_finite() {
        return Err(DualError::Validation("instance has +inf entries; apply big_m_substitute first".into()));
    }
    let (p, layout) = build_dual_lp(inst);
    let sol = solver.solve(&p);
    if sol.status != LpStatus::Optimal {
        return Err(DualError::Lp { solver: solver.name(), status: sol.status });
    }
    let mut pot = DualPotentials::zeros(inst);
    for (e, &(ci, cj)) in layout.pair_col.iter().enumerate() {
        let (ri, rj) = &mut pot.pair[e];
        for (a, r) in ri.iter_mut().enumerate() {
            *r = sol.x[ci + a];
        }
        for (b, r) in rj.iter_mut().enumerate() {
            *r = sol.x[cj + b];
        }
    }
    repair_feasibility(inst, &mut pot);
    Ok((pot.total(), pot))
}

/// Lowers potentials until both constraint groups hold: first every `ρ_ji`
/// is capped by its min-marginal, then each vertex sum is flattened to its
/// minimum by lowering one incident potential.
pub fn repair_feasibility(inst: &Instance, pot: &mut DualPotentials) {
    for (e, t) in inst.tables().iter().enumerate() {
        let (ri, rj) = &mut pot.pair[e];
        for (b, r) in rj.iter_mut().enumerate() {
            let cap = (0..t.rows()).map(|a| t.get(a, b) - ri[a]).fold(f64::INFINITY, f64::min);
            *r = r.min(cap);
        }
    }
    for i in 0..inst.n() {
        let incident = inst.adjacency().incident(i);
        let Some(first) = incident.first() else {
            pot.vertex[i] = 0.0;
            continue;
        };
        let s = vertex_sum(inst, pot, i);
        let low = s.iter().copied().fold(f64::INFINITY, f64::min);
        let r = pot.rho_mut(first);
        for (a, v) in s.iter().enumerate() {
            r[a] -= v - low;
        }
        pot.vertex[i] = low;
    }
}

/// Both inequality systems characterizing an optimal star block:
/// `ρ_j ≤ m_j` for every leg and `min_x Σ_j ρ_j(x) ≥ min_x Σ_j m_j(x)`.
pub fn nscsdv_check(m: &[Vec<f64>], rho: &[Vec<f64>], tol: f64) -> bool {
    if m.len() != rho.len() || m.is_empty() {
        return m.len() == rho.len();
    }
    for (mj, rj) in m.iter().zip(rho) {
        if mj.iter().zip(rj).any(|(a, b)| b > &(a + tol)) {
            return false;
        }
    }
    let k = m[0].len();
    let min_sum = |v: &[Vec<f64>]| (0..k).map(|x| v.iter().map(|r| r[x]).sum::<f64>()).fold(f64::INFINITY, f64::min);
    min_sum(rho) >= min_sum(m) - tol
}

/// `ρ_j = m_j − w_j (Σ_k m_k − min Σ_k m_k)`.
pub fn star_block_maximize(m: &[Vec<f64>], w: &[f64]) -> Result<Vec<Vec<f64>>, DualError> {
    if w.len() != m.len() {
        return Err(DualError::Validation(format!("{} weights for {} legs", w.len(), m.len())));
    }
    if w.iter().any(|&x| !(x >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DualError::Validation("weights must lie on the simplex".into()));
    }
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let k = m[0].len();
    let total: Vec<f64> = (0..k).map(|x| m.iter().map(|r| r[x]).sum()).collect();
    let low = total.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(m.iter().zip(w).map(|(mj, &wj)| mj.iter().zip(&total).map(|(a, s)| a - wj * (s - low)).collect()).collect())
}

/// `ε log Σ exp(v/ε)` with a max shift.
pub fn lse(eps: f64, v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    let s: f64 = v.iter().map(|x| ((x - max) / eps).exp()).sum();
    max + eps * s.ln()
}

/// Soft minimum `−lse_ε(−v)`.
pub fn smin(eps: f64, v: &[f64]) -> f64 {
    let neg: Vec<f64> = v.iter().map(|x| -x).collect();
    -lse(eps, &neg)
}

pub const EPS_RANGE: (f64, f64) = (1e-3, 1e3);

fn check_eps(eps: f64) -> Result<(), DualError> {
    if !(eps >= EPS_RANGE.0 && eps <= EPS_RANGE.1) {
        return Err(DualError::Validation(format!("eps {eps} outside [{}, {}]", EPS_RANGE.0, EPS_RANGE.1)));
    }
    Ok(())
}

/// Result of the entropy-regularized star block.
#[derive(Clone, Debug, PartialEq)]
pub struct StarEntropy {
    /// The vertex constant `ρ = Σ_j ρ_j(x)`.
    pub rho: f64,
    /// One potential per leg over the center's domain.
    pub legs: Vec<Vec<f64>>,
    /// Maximal block objective, `ρ − N ε`.
    pub value: f64,
}

/// Maximizes `ρ − ε Σ_j Σ_{x,y} exp((ρ_j(x) − g_j(x, y))/ε − 1)` subject to
/// `Σ_j ρ_j ≡ ρ`, where `g_j` is given with the center's values as rows.
///
/// With `s_j = smin_ε(g_j(x, ·))` and `N` legs the maximizer is
/// `ρ = Nε − N lse_ε(−Σ_j s_j / N)` and `ρ_j = s_j + (ρ − Σ_k s_k)/N`.
pub fn star_entropy_block(legs: &[Table], eps: f64) -> StarEntropy {
    let n = legs.len();
    if n == 0 {
        return StarEntropy { rho: 0.0, legs: Vec::new(), value: 0.0 };
    }
    let k = legs[0].rows();
    let s: Vec<Vec<f64>> = legs.iter().map(|g| (0..k).map(|x| smin(eps, g.row(x))).collect()).collect();
    let total: Vec<f64> = (0..k).map(|x| s.iter().map(|sj| sj[x]).sum()).collect();
    let nf = n as f64;
    let scaled: Vec<f64> = total.iter().map(|t| -t / nf).collect();
    let rho = nf * eps - nf * lse(eps, &scaled);
    let out = s.iter().map(|sj| sj.iter().zip(&total).map(|(a, t)| a + (rho - t) / nf).collect()).collect();
    StarEntropy { rho, legs: out, value: rho - nf * eps }
}

/// Closed-form maximizer of the entropy-regularized dual on a star centered
/// at `center`. Leaf potentials are taken as zero.
pub fn entropy_star_closed_form(inst: &Instance, center: usize, eps: f64) -> Result<StarEntropy, DualError> {
    check_eps(eps)?;
    if center >= inst.n() || inst.edges().iter().any(|&(i, j)| i != center && j != center) {
        return Err(DualError::Validation(format!("graph is not a star centered at {center}")));
    }
    if !inst.is_finite() {
        return Err(DualError::Validation("star tables must be finite".into()));
    }
    let legs: Vec<Table> = inst
        .adjacency()
        .incident(center)
        .iter()
        .map(|inc| Table::from_fn(inst.domain(center), inst.domain(inc.nbr), |a, b| inst.pair(inc, a, b)))
        .collect();
    Ok(star_entropy_block(&legs, eps))
}

pub const EXP_CLAMP: f64 = 500.0;

/// `Σ ρ_i − ε Σ_e Σ_{a,b} exp((ρ_ij(a) + ρ_ji(b) − f(a, b))/ε − 1)`, with
/// exponents clamped to `±500`. Returns the value and the clamp count.
pub fn entropy_dual_objective(inst: &Instance, pot: &DualPotentials, eps: f64) -> Result<(f64, u64), DualError> {
    if !(eps > 0.0) {
        return Err(DualError::Validation("eps must be positive".into()));
    }
    let scale = 1.0 + pot.vertex.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let viol = pot.max_constancy_violation(inst);
    if viol > 1e-7 * scale {
        return Err(DualError::Validation(format!("vertex constancy violated by {viol}")));
    }
    let (penalty, clamps) = entropy_penalty(inst, pot, eps);
    Ok((pot.total() - penalty, clamps))
}

fn entropy_penalty(inst: &Instance, pot: &DualPotentials, eps: f64) -> (f64, u64) {
    let mut clamps = 0u64;
    let mut penalty = 0.0;
    for (e, t) in inst.tables().iter().enumerate() {
        let (ri, rj) = &pot.pair[e];
        for a in 0..t.rows() {
            for b in 0..t.cols() {
                let mut z = (ri[a] + rj[b] - t.get(a, b)) / eps - 1.0;
                if z > EXP_CLAMP {
                    z = EXP_CLAMP;
                    clamps += 1;
                } else if z < -EXP_CLAMP {
                    z = -EXP_CLAMP;
                    clamps += 1;
                }
                penalty += z.exp();
            }
        }
    }
    (eps * penalty, clamps)
}

/// `Σ_i min_x Σ_j ρ_ij(x) + Σ_e min_{a,b} (f − ρ_ij − ρ_ji)`, a lower bound on
/// `min F` for arbitrary potentials.
pub fn reparameterization_bound(inst: &Instance, pot: &DualPotentials) -> f64 {
    let vertices: f64 = (0..inst.n())
        .map(|i| vertex_sum(inst, pot, i).into_iter().fold(f64::INFINITY, f64::min))
        .map(|v| if v == f64::INFINITY { 0.0 } else { v })
        .sum();
    let edges: f64 = inst
        .tables()
        .iter()
        .enumerate()
        .map(|(e, t)| {
            let (ri, rj) = &pot.pair[e];
            let mut best = f64::INFINITY;
            for a in 0..t.rows() {
                for b in 0..t.cols() {
                    best = best.min(t.get(a, b) - ri[a] - rj[b]);
                }
            }
            best
        })
        .sum();
    vertices + edges
}

/// `Σ_i min_x Σ_j ρ_ij(x)`, the dual objective for feasible potentials.
pub fn tree_dual_objective(inst: &Instance, pot: &DualPotentials) -> f64 {
    (0..inst.n())
        .filter(|&i| inst.adjacency().degree(i) > 0)
        .map(|i| vertex_sum(inst, pot, i).into_iter().fold(f64::INFINITY, f64::min))
        .sum()
}

/// Sweeps vertices in `order`; each coordinate minimizes the edge terms
/// toward already fixed neighbors plus the min-marginals toward later ones.
pub fn recover_primal(inst: &Instance, m: &MinMarginals, order: &[usize]) -> Assignment {
    let n = inst.n();
    let mut pos = vec![0usize; n];
    for (t, &v) in order.iter().enumerate() {
        pos[v] = t;
    }
    let mut x = vec![0usize; n];
    let mut scores = Vec::new();
    for &i in order {
        scores.clear();
        scores.resize(inst.domain(i), 0.0);
        for inc in inst.adjacency().incident(i) {
            if pos[inc.nbr] < pos[i] {
                for (a, s) in scores.iter_mut().enumerate() {
                    *s += inst.pair(inc, a, x[inc.nbr]);
                }
            } else {
                for (s, v) in scores.iter_mut().zip(m.get(inc)) {
                    *s += v;
                }
            }
        }
        x[i] = argmin(&scores);
    }
    x
}
