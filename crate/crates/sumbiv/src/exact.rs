//! Exact minimization: exhaustive enumeration and the tree dynamic program.

use thiserror::Error;

use crate::model::{Assignment, Instance};
use crate::par;

pub const DEFAULT_STATE_CAP: u128 = 10_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum ExactError {
    #[error("instance too large: {states} states exceed cap {cap}")]
    TooLarge { states: u128, cap: u128 },
    #[error("graph is not a forest")]
    NotAForest,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExactResult {
    pub min_value: f64,
    pub argmin: Assignment,
    pub states_visited: u64,
}

/// Exhaustive minimum with the lexicographically smallest argmin.
pub fn brute_force_min(inst: &Instance) -> Result<ExactResult, ExactError> {
    brute_force_impl(inst, DEFAULT_STATE_CAP, true)
}

pub fn brute_force_min_with_cap(inst: &Instance, cap: u128) -> Result<ExactResult, ExactError> {
    brute_force_impl(inst, cap, true)
}

/// Same as [`brute_force_min`] but never uses the thread pool.
pub fn brute_force_min_seq(inst: &Instance) -> Result<ExactResult, ExactError> {
    brute_force_impl(inst, DEFAULT_STATE_CAP, false)
}

const CHUNK: u64 = 1 << 14;

fn brute_force_impl(inst: &Instance, cap: u128, parallel: bool) -> Result<ExactResult, ExactError> {
    let states = inst.state_count();
    if states > cap {
        return Err(ExactError::TooLarge { states, cap });
    }
    let total = states as u64;
    let chunks = total.div_ceil(CHUNK) as usize;
    let scan = |c: usize| scan_chunk(inst, c as u64 * CHUNK, ((c as u64 + 1) * CHUNK).min(total));
    let bests = if parallel { par::map_range(chunks, scan) } else { par::map_range_seq(chunks, scan) };
    // chunks are in index order, so a strict comparison keeps the smallest index
    let (mut value, mut index) = (f64::INFINITY, 0u64);
    for (v, idx) in bests {
        if v < value {
            value = v;
            index = idx;
        }
    }
    Ok(ExactResult { min_value: value, argmin: decode(inst.domains(), index), states_visited: total })
}

fn scan_chunk(inst: &Instance, start: u64, end: u64) -> (f64, u64) {
    let doms = inst.domains();
    let mut x = decode(doms, start);
    let mut best = (f64::INFINITY, start);
    for idx in start..end {
        let v = inst.evaluate_unchecked(&x);
        if v < best.0 {
            best = (v, idx);
        }
        // odometer with the last coordinate fastest
        for i in (0..x.len()).rev() {
            x[i] += 1;
            if x[i] < doms[i] {
                break;
            }
            x[i] = 0;
        }
    }
    best
}

/// Mixed-radix decoding with coordinate 0 most significant.
pub fn decode(domains: &[usize], mut index: u64) -> Assignment {
    let mut x = vec![0; domains.len()];
    for i in (0..domains.len()).rev() {
        let k = domains[i] as u64;
        x[i] = (index % k) as usize;
        index /= k;
    }
    x
}

/// One step of the forward pass of the tree program.
#[derive(Clone, Debug, PartialEq)]
pub struct Elimination {
    pub vertex: usize,
    pub parent: usize,
    /// `min_{x_v} f(x_parent, x_v) + u_v(x_v)` as a function of `x_parent`.
    pub message: Vec<f64>,
    /// Accumulated unary of the parent after folding in `message`.
    pub parent_unary: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeDp {
    pub result: ExactResult,
    pub eliminations: Vec<Elimination>,
    /// Final accumulated unaries; entries for roots are the reduced objectives.
    pub unaries: Vec<Vec<f64>>,
    pub roots: Vec<usize>,
}

pub fn tree_dp_min(inst: &Instance) -> Result<ExactResult, ExactError> {
    tree_dp_trace(inst).map(|t| t.result)
}

/// Tree dynamic program recording every intermediate unary.
pub fn tree_dp_trace(inst: &Instance) -> Result<TreeDp, ExactError> {
    let (forest, order) = inst.is_forest();
    if !forest {
        return Err(ExactError::NotAForest);
    }
    let order = order.unwrap_or_default();
    let n = inst.n();
    let adj = inst.adjacency();
    let mut unary: Vec<Vec<f64>> = inst.domains().iter().map(|&k| vec![0.0; k]).collect();
    let mut removed = vec![false; n];
    let mut parent_of = vec![usize::MAX; n];
    let mut eliminations = Vec::with_capacity(order.len());
    let mut states = 0u64;

    for &v in &order {
        let inc =
            adj.incident(v).iter().find(|inc| !removed[inc.nbr]).copied().expect("leaf has one remaining neighbor");
        let p = inc.nbr;
        let message: Vec<f64> = (0..inst.domain(p))
            .map(|b| (0..inst.domain(v)).map(|a| inst.pair(&inc, a, b) + unary[v][a]).fold(f64::INFINITY, f64::min))
            .collect();
        states += (inst.domain(p) * inst.domain(v)) as u64;
        for (u, m) in unary[p].iter_mut().zip(&message) {
            *u += m;
        }
        removed[v] = true;
        parent_of[v] = p;
        eliminations.push(Elimination { vertex: v, parent: p, message, parent_unary: unary[p].clone() });
    }

    let roots: Vec<usize> = (0..n).filter(|&v| !removed[v]).collect();
    let mut x = vec![0; n];
    let mut min_value = 0.0;
    for &r in &roots {
        let a = argmin(&unary[r]);
        x[r] = a;
        min_value += unary[r][a];
    }
    for &v in order.iter().rev() {
        let p = parent_of[v];
        let inc = adj.incident(v).iter().find(|inc| inc.nbr == p).copied().unwrap();
        let scores: Vec<f64> = (0..inst.domain(v)).map(|a| inst.pair(&inc, a, x[p]) + unary[v][a]).collect();
        x[v] = argmin(&scores);
    }
    Ok(TreeDp {
        result: ExactResult { min_value, argmin: x, states_visited: states },
        eliminations,
        unaries: unary,
        roots,
    })
}

/// Index of the smallest entry; ties go to the smallest index.
pub fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x < v[best] {
            best = i;
        }
    }
    best
}
