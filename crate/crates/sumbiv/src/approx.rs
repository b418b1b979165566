//! Least-squares approximation of grid functions by sums of bivariates.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::exact::{decode, DEFAULT_STATE_CAP};
use crate::model::Table;

#[derive(Debug, Error, PartialEq)]
pub enum ApproxError {
    #[error("grid too large: {0} points")]
    TooLarge(u128),
    #[error("argument index out of range or unordered pair ({0},{1})")]
    BadPair(usize, usize),
    #[error("invalid function: {0}")]
    Invalid(String),
    #[error("not a parameterization of zero: {0}")]
    NotNull(String),
    #[error("decomposition must use the full edge set over equal domain sizes")]
    Unsupported,
}

/// Dense function over a product grid, row-major with argument 0 most significant.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseFunction {
    pub domains: Vec<usize>,
    pub values: Vec<f64>,
}

impl DenseFunction {
    pub fn new(domains: Vec<usize>, values: Vec<f64>) -> Result<Self, ApproxError> {
        let size = grid_size(&domains)?;
        if values.len() as u128 != size {
            return Err(ApproxError::Invalid(format!("{} values for {} grid points", values.len(), size)));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ApproxError::Invalid("non-finite value".into()));
        }
        Ok(Self { domains, values })
    }

    pub fn from_fn(domains: Vec<usize>, f: impl Fn(&[usize]) -> f64) -> Result<Self, ApproxError> {
        let size = grid_size(&domains)? as u64;
        let values = (0..size).map(|idx| f(&decode(&domains, idx))).collect();
        Self::new(domains, values)
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn from_json(text: &str) -> Result<Self, ApproxError> {
        let f: DenseFunction = serde_json::from_str(text).map_err(|e| ApproxError::Invalid(e.to_string()))?;
        Self::new(f.domains, f.values)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("dense function serializes")
    }
}

fn grid_size(domains: &[usize]) -> Result<u128, ApproxError> {
    let size = domains.iter().fold(1u128, |acc, &k| acc.saturating_mul(k as u128));
    if size > DEFAULT_STATE_CAP {
        return Err(ApproxError::TooLarge(size));
    }
    Ok(size)
}

/// Per-edge tables whose sum approximates a grid function.
#[derive(Clone, Debug, PartialEq)]
pub struct BivariateDecomposition {
    pub domains: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
    pub tables: Vec<Table>,
}

impl BivariateDecomposition {
    pub fn evaluate(&self, x: &[usize]) -> f64 {
        self.edges.iter().zip(&self.tables).map(|(&(i, j), t)| t.get(x[i], x[j])).sum()
    }

    pub fn to_dense(&self) -> Result<DenseFunction, ApproxError> {
        DenseFunction::from_fn(self.domains.clone(), |x| self.evaluate(x))
    }
}

/// Sum of `G` over all grid points with argument `k` at `a` and `l` at `b`.
pub fn pair_marginal_sum(g: &DenseFunction, k: usize, l: usize) -> Result<Table, ApproxError> {
    let n = g.domains.len();
    if k >= l || l >= n {
        return Err(ApproxError::BadPair(k, l));
    }
    let mut out = Table::filled(g.domains[k], g.domains[l], 0.0);
    let mut x = vec![0usize; n];
    for &v in &g.values {
        let cur = out.get(x[k], x[l]);
        out.set(x[k], x[l], cur + v);
        for i in (0..n).rev() {
            x[i] += 1;
            if x[i] < g.domains[i] {
                break;
            }
            x[i] = 0;
        }
    }
    Ok(out)
}

fn check_edges(n: usize, edges: &[(usize, usize)]) -> Result<(), ApproxError> {
    for &(k, l) in edges {
        if k >= l || l >= n {
            return Err(ApproxError::BadPair(k, l));
        }
    }
    Ok(())
}

/// Least-squares projection of `g` onto the sums of bivariates over `edges`.
///
/// Solves the normal equations with an SVD pseudo-inverse; the Gram matrix is
/// built from grid counts without forming the design matrix. Returns the
/// decomposition and `‖G − F‖₂`.
pub fn l2_project(g: &DenseFunction, edges: &[(usize, usize)]) -> Result<(BivariateDecomposition, f64), ApproxError> {
    let n = g.domains.len();
    check_edges(n, edges)?;
    let doms = &g.domains;
    let total = g.values.len() as f64;

    // coefficient layout: per edge, row-major K_k × K_l block
    let mut offsets = Vec::with_capacity(edges.len() + 1);
    offsets.push(0usize);
    for &(k, l) in edges {
        offsets.push(offsets.last().unwrap() + doms[k] * doms[l]);
    }
    let p = *offsets.last().unwrap();
    let coord = |e: usize, idx: usize| {
        let (k, l) = edges[e];
        [(k, idx / doms[l]), (l, idx % doms[l])]
    };

    let mut gram = DMatrix::<f64>::zeros(p, p);
    for e1 in 0..edges.len() {
        for i1 in 0..offsets[e1 + 1] - offsets[e1] {
            let c1 = coord(e1, i1);
            for e2 in e1..edges.len() {
                for i2 in 0..offsets[e2 + 1] - offsets[e2] {
                    let c2 = coord(e2, i2);
                    let mut fixed: Vec<(usize, usize)> = c1.to_vec();
                    let mut conflict = false;
                    for (v, a) in c2 {
                        match fixed.iter().find(|(u, _)| *u == v) {
                            Some(&(_, b)) if b != a => conflict = true,
                            Some(_) => {}
                            None => fixed.push((v, a)),
                        }
                    }
                    if conflict {
                        continue;
                    }
                    let count = fixed.iter().fold(total, |acc, &(v, _)| acc / doms[v] as f64);
                    let (r, c) = (offsets[e1] + i1, offsets[e2] + i2);
                    gram[(r, c)] = count;
                    gram[(c, r)] = count;
                }
            }
        }
    }

    let mut rhs = DVector::<f64>::zeros(p);
    for (e, &(k, l)) in edges.iter().enumerate() {
        let m = pair_marginal_sum(g, k, l)?;
        for (idx, &v) in m.data().iter().enumerate() {
            rhs[offsets[e] + idx] = v;
        }
    }

    let theta = if p == 0 {
        DVector::zeros(0)
    } else {
        let svd = gram.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let eps = smax * 1e-12 * p as f64;
        let mut theta = svd.solve(&rhs, eps).map_err(|e| ApproxError::Invalid(e.to_string()))?;
        // one step of iterative refinement
        let r = &rhs - &gram * &theta;
        theta += svd.solve(&r, eps).map_err(|e| ApproxError::Invalid(e.to_string()))?;
        theta
    };

    let tables = edges
        .iter()
        .enumerate()
        .map(|(e, &(k, l))| {
            Table::new(doms[k], doms[l], theta.as_slice()[offsets[e]..offsets[e + 1]].to_vec()).unwrap()
        })
        .collect();
    let decomp = BivariateDecomposition { domains: doms.clone(), edges: edges.to_vec(), tables };
    let approx = decomp.to_dense()?;
    let residual = g.values.iter().zip(&approx.values).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok((decomp, residual))
}

pub const DEFAULT_MEMBERSHIP_TOL: f64 = 1e-8;

/// True iff the projection residual is at most `tol · max(1, ‖G‖)`.
pub fn is_sum_of_bivariates(g: &DenseFunction, edges: &[(usize, usize)], tol: f64) -> Result<bool, ApproxError> {
    let (_, residual) = l2_project(g, edges)?;
    Ok(residual <= tol * g.norm().max(1.0))
}

/// All pairs `(k, l)` with `k < l < n`.
pub fn full_edges(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|k| (k + 1..n).map(move |l| (k, l))).collect()
}

/// Univariate split of a parameterization of the zero function.
#[derive(Clone, Debug, PartialEq)]
pub struct NullParameterization {
    /// `rho_pair[e] = (ρ_ij, ρ_ji)` for edge `e = (i, j)`.
    pub rho_pair: Vec<(Vec<f64>, Vec<f64>)>,
    pub rho_vertex: Vec<f64>,
}

/// Splits every table into row and column parts by mean-centering and checks
/// that the split represents zero: each table is additive, each vertex sum is
/// constant, and the constants sum to zero.
pub fn null_decompose(d: &BivariateDecomposition) -> Result<NullParameterization, ApproxError> {
    let n = d.domains.len();
    if d.edges != full_edges(n) || d.domains.windows(2).any(|w| w[0] != w[1]) {
        return Err(ApproxError::Unsupported);
    }
    let scale = d.tables.iter().flat_map(|t| t.data().iter().map(|v| v.abs())).fold(1.0f64, f64::max);
    let tol = 1e-9 * scale;

    let mut rho_pair = Vec::with_capacity(d.edges.len());
    for (&(i, j), t) in d.edges.iter().zip(&d.tables) {
        let (ki, kj) = (t.rows(), t.cols());
        let grand = t.data().iter().sum::<f64>() / (ki * kj) as f64;
        let row: Vec<f64> = (0..ki).map(|a| t.row(a).iter().sum::<f64>() / kj as f64 - grand / 2.0).collect();
        let col: Vec<f64> =
            (0..kj).map(|b| (0..ki).map(|a| t.get(a, b)).sum::<f64>() / ki as f64 - grand / 2.0).collect();
        for a in 0..ki {
            for b in 0..kj {
                if (t.get(a, b) - row[a] - col[b]).abs() > tol {
                    return Err(ApproxError::NotNull(format!("table ({i},{j}) is not additively separable")));
                }
            }
        }
        rho_pair.push((row, col));
    }

    let mut rho_vertex = vec![0.0; n];
    for v in 0..n {
        let mut sums = vec![0.0; d.domains[v]];
        for (&(i, j), (row, col)) in d.edges.iter().zip(&rho_pair) {
            let part = if i == v {
                row
            } else if j == v {
                col
            } else {
                continue;
            };
            for (s, p) in sums.iter_mut().zip(part) {
                *s += p;
            }
        }
        let c = sums[0];
        if sums.iter().any(|s| (s - c).abs() > tol) {
            return Err(ApproxError::NotNull(format!("vertex {v} sum is not constant")));
        }
        rho_vertex[v] = c;
    }
    let total: f64 = rho_vertex.iter().sum();
    if total.abs() > tol * n as f64 {
        return Err(ApproxError::NotNull(format!("vertex constants sum to {total}")));
    }
    Ok(NullParameterization { rho_pair, rho_vertex })
}

/// The 64-cycle on `0..64` used to build a permuted sum of pairwise products.
pub const FREE_LUNCH_CYCLE: [usize; 64] = [
    0, 8, 18, 11, 54, 41, 28, 26, 55, 59, 48, 40, 60, 24, 47, 12, 33, 63, 13, 22, 25, 16, 23, 32, 7, 36, 21, 6, 1, 52,
    44, 50, 42, 17, 10, 53, 37, 14, 39, 9, 58, 46, 38, 51, 5, 27, 56, 31, 15, 49, 35, 61, 45, 3, 30, 19, 57, 34, 4, 43,
    2, 62, 20, 29,
];

/// `F(x) = Σ_{i<j} [x_i = x_j = 1]` on `{0,1}^6` and `F ∘ p` for the cycle above.
pub fn free_lunch_pair() -> (DenseFunction, DenseFunction) {
    let f = DenseFunction::from_fn(vec![2; 6], |x| {
        let ones = x.iter().filter(|&&v| v == 1).count();
        (ones * ones.saturating_sub(1) / 2) as f64
    })
    .unwrap();
    let mut p = [0usize; 64];
    for (t, &c) in FREE_LUNCH_CYCLE.iter().enumerate() {
        p[c] = FREE_LUNCH_CYCLE[(t + 1) % 64];
    }
    let values = (0..64).map(|idx| f.values[p[idx]]).collect();
    let g = DenseFunction::new(vec![2; 6], values).unwrap();
    (f, g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marginals_of_simple_functions() {
        let c = DenseFunction::new(vec![2; 3], vec![1.5; 8]).unwrap();
        let m = pair_marginal_sum(&c, 0, 2).unwrap();
        assert!(m.data().iter().all(|&v| v == 3.0));
        let e = DenseFunction::from_fn(vec![2; 3], |x| if x == [1, 1, 1] { 1.0 } else { 0.0 }).unwrap();
        let m = pair_marginal_sum(&e, 1, 2).unwrap();
        assert_eq!(m.data(), &[0.0, 0.0, 0.0, 1.0]);
        assert!(pair_marginal_sum(&e, 2, 1).is_err());
    }

    #[test]
    fn triple_product_residual() {
        let g = DenseFunction::from_fn(vec![2; 3], |x| (x[0] * x[1] * x[2]) as f64).unwrap();
        let (_, r) = l2_project(&g, &full_edges(3)).unwrap();
        // the projection leaves the ±1/8 parity component, norm sqrt(8)/8
        assert!((r - (8.0f64).sqrt() / 8.0).abs() < 1e-10);
    }

    #[test]
    fn constant_is_member() {
        let g = DenseFunction::new(vec![3, 2, 2], vec![4.0; 12]).unwrap();
        assert!(is_sum_of_bivariates(&g, &[(0, 1)], 1e-8).unwrap());
    }

    #[test]
    fn free_lunch_membership() {
        let (f, g) = free_lunch_pair();
        let edges = full_edges(6);
        assert!(is_sum_of_bivariates(&f, &edges, 1e-8).unwrap());
        assert!(!is_sum_of_bivariates(&g, &edges, 1e-8).unwrap());
    }

    #[test]
    fn null_decomposition_of_separable_family() {
        let t01 = Table::from_fn(2, 2, |a, b| a as f64 - b as f64);
        let t02 = Table::from_fn(2, 2, |a, _| -(a as f64));
        let t12 = Table::from_fn(2, 2, |b, _| b as f64);
        let d = BivariateDecomposition { domains: vec![2; 3], edges: full_edges(3), tables: vec![t01, t02, t12] };
        assert!(d.to_dense().unwrap().values.iter().all(|&v| v == 0.0));
        let np = null_decompose(&d).unwrap();
        assert!(np.rho_vertex.iter().sum::<f64>().abs() < 1e-12);

        let zero = BivariateDecomposition {
            domains: vec![3; 3],
            edges: full_edges(3),
            tables: vec![Table::filled(3, 3, 0.0); 3],
        };
        let np = null_decompose(&zero).unwrap();
        assert!(np.rho_pair.iter().all(|(r, c)| r.iter().chain(c).all(|&v| v == 0.0)));

        let mut bumped = zero.clone();
        bumped.tables[1].set(0, 0, 1.0);
        assert!(null_decompose(&bumped).is_err());
    }
}
