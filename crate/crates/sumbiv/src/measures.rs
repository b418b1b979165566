//! Marginal families on edges, max-entropy reconstruction on forests, and
//! entropy / KL helpers.

use thiserror::Error;

use crate::exact::{decode, DEFAULT_STATE_CAP};
use crate::model::{Instance, Table};

#[derive(Debug, Error, PartialEq)]
pub enum MeasureError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("graph is not a forest")]
    NotAForest,
    #[error("family is not consistent")]
    Inconsistent,
    #[error("grid too large: {0} points")]
    TooLarge(u128),
}

pub const DEFAULT_CONSISTENCY_TOL: f64 = 1e-9;

/// Bivariate measures on edges with their univariate marginals.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalFamily {
    pub domains: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
    pub pair: Vec<Table>,
    pub vertex: Vec<Vec<f64>>,
}

/// Probability measure on the full product grid, argument 0 most significant.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalMeasure {
    pub domains: Vec<usize>,
    pub values: Vec<f64>,
}

impl GlobalMeasure {
    pub fn pair_marginal(&self, i: usize, j: usize) -> Table {
        let mut t = Table::filled(self.domains[i], self.domains[j], 0.0);
        for (idx, &v) in self.values.iter().enumerate() {
            let x = decode(&self.domains, idx as u64);
            t.set(x[i], x[j], t.get(x[i], x[j]) + v);
        }
        t
    }

    pub fn vertex_marginal(&self, i: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.domains[i]];
        for (idx, &v) in self.values.iter().enumerate() {
            m[decode(&self.domains, idx as u64)[i]] += v;
        }
        m
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

impl MarginalFamily {
    /// Family of marginals of `mu` on the given edges.
    pub fn from_global(mu: &GlobalMeasure, edges: &[(usize, usize)]) -> Self {
        Self {
            domains: mu.domains.clone(),
            edges: edges.to_vec(),
            pair: edges.iter().map(|&(i, j)| mu.pair_marginal(i, j)).collect(),
            vertex: (0..mu.domains.len()).map(|i| mu.vertex_marginal(i)).collect(),
        }
    }

    /// Independent family `μ_ij = μ_i ⊗ μ_j`.
    pub fn product(vertex: Vec<Vec<f64>>, edges: &[(usize, usize)]) -> Self {
        let domains = vertex.iter().map(Vec::len).collect();
        let pair = edges
            .iter()
            .map(|&(i, j)| Table::from_fn(vertex[i].len(), vertex[j].len(), |a, b| vertex[i][a] * vertex[j][b]))
            .collect();
        Self { domains, edges: edges.to_vec(), pair, vertex }
    }

    fn check_shapes(&self) -> Result<(), MeasureError> {
        let n = self.domains.len();
        if self.vertex.len() != n || self.pair.len() != self.edges.len() {
            return Err(MeasureError::Shape("component counts differ".into()));
        }
        for (i, v) in self.vertex.iter().enumerate() {
            if v.len() != self.domains[i] {
                return Err(MeasureError::Shape(format!("vertex {i} has {} entries", v.len())));
            }
        }
        for (&(i, j), t) in self.edges.iter().zip(&self.pair) {
            if i >= n || j >= n || t.rows() != self.domains[i] || t.cols() != self.domains[j] {
                return Err(MeasureError::Shape(format!("edge ({i},{j})")));
            }
        }
        Ok(())
    }

    fn as_graph(&self) -> Result<Instance, MeasureError> {
        Instance::new(
            self.domains.clone(),
            self.edges.clone(),
            self.edges.iter().map(|&(i, j)| Table::filled(self.domains[i], self.domains[j], 0.0)).collect(),
        )
        .map_err(|e| MeasureError::Shape(e.to_string()))
    }
}

/// Nonnegativity, unit mass of every `μ_i`, and row/column sums of every
/// `μ_ij` equal to `μ_i` and `μ_j`, all within `tol` per entry.
pub fn check_consistency(family: &MarginalFamily, tol: f64) -> Result<bool, MeasureError> {
    family.check_shapes()?;
    for v in &family.vertex {
        if v.iter().any(|&p| p < -tol) || (v.iter().sum::<f64>() - 1.0).abs() > tol {
            return Ok(false);
        }
    }
    for (&(i, j), t) in family.edges.iter().zip(&family.pair) {
        if t.data().iter().any(|&p| p < -tol) {
            return Ok(false);
        }
        for a in 0..t.rows() {
            if (t.row(a).iter().sum::<f64>() - family.vertex[i][a]).abs() > tol {
                return Ok(false);
            }
        }
        for b in 0..t.cols() {
            let col: f64 = (0..t.rows()).map(|a| t.get(a, b)).sum();
            if (col - family.vertex[j][b]).abs() > tol {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Max-entropy measure with the given forest marginals, rooted at the
/// smallest vertex of each component.
pub fn reconstruct_tree_measure(family: &MarginalFamily) -> Result<GlobalMeasure, MeasureError> {
    reconstruct_with_roots(family, &[])
}

/// As [`reconstruct_tree_measure`], preferring the listed roots where they
/// fall in distinct components.
pub fn reconstruct_with_roots(family: &MarginalFamily, roots: &[usize]) -> Result<GlobalMeasure, MeasureError> {
    family.check_shapes()?;
    let graph = family.as_graph()?;
    if !graph.is_forest().0 {
        return Err(MeasureError::NotAForest);
    }
    if !check_consistency(family, DEFAULT_CONSISTENCY_TOL)? {
        return Err(MeasureError::Inconsistent);
    }
    let size = graph.state_count();
    if size > DEFAULT_STATE_CAP {
        return Err(MeasureError::TooLarge(size));
    }
    let n = graph.n();
    let adj = graph.adjacency();

    // orient edges away from the chosen roots
    let mut seen = vec![false; n];
    let mut tree_roots = Vec::new();
    let mut links: Vec<(usize, usize, usize)> = Vec::new(); // (parent, child, family edge)
    let family_edge = |u: usize, v: usize| {
        family.edges.iter().position(|&(i, j)| (i, j) == (u, v) || (i, j) == (v, u)).expect("edge in family")
    };
    let candidates = roots.iter().copied().chain(0..n);
    for r in candidates {
        if seen[r] {
            continue;
        }
        seen[r] = true;
        tree_roots.push(r);
        let mut stack = vec![r];
        while let Some(p) = stack.pop() {
            for inc in adj.incident(p) {
                if !seen[inc.nbr] {
                    seen[inc.nbr] = true;
                    links.push((p, inc.nbr, family_edge(p, inc.nbr)));
                    stack.push(inc.nbr);
                }
            }
        }
    }

    let values = (0..size as u64)
        .map(|idx| {
            let x = decode(&family.domains, idx);
            let mut mass = 1.0;
            for &r in &tree_roots {
                mass *= family.vertex[r][x[r]];
            }
            for &(p, c, e) in &links {
                let mp = family.vertex[p][x[p]];
                if mp == 0.0 {
                    return 0.0;
                }
                let (i, _) = family.edges[e];
                let joint = if i == p { family.pair[e].get(x[p], x[c]) } else { family.pair[e].get(x[c], x[p]) };
                mass *= joint / mp;
            }
            mass
        })
        .collect();
    Ok(GlobalMeasure { domains: family.domains.clone(), values })
}

/// Shannon entropy with `0 · log 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// `KL(λ ‖ μ)`; `+∞` when `λ` charges an atom where `μ` vanishes.
pub fn kl(lambda: &[f64], mu: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&l, &m) in lambda.iter().zip(mu) {
        if l > 0.0 {
            if m <= 0.0 {
                return f64::INFINITY;
            }
            acc += l * (l / m).ln();
        }
    }
    acc.max(0.0)
}

/// `Σ_e H(μ_e) − Σ_i (deg(i) − 1) H(μ_i)` for forest families.
pub fn max_entropy_value(family: &MarginalFamily) -> Result<f64, MeasureError> {
    family.check_shapes()?;
    let graph = family.as_graph()?;
    if !graph.is_forest().0 {
        return Err(MeasureError::NotAForest);
    }
    let edge_part: f64 = family.pair.iter().map(|t| entropy(t.data())).sum();
    let vertex_part: f64 =
        family.vertex.iter().enumerate().map(|(i, v)| (graph.adjacency().degree(i) as f64 - 1.0) * entropy(v)).sum();
    Ok(edge_part - vertex_part)
}
