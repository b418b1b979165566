//! Instances of sums of bivariates, assignments and graph queries.
//!
//! An [`Instance`] stores the objective `F(x) = Σ_{(i,j)} f_ij(x_i, x_j)` as a
//! list of dense tables, one per edge. Edges are kept with `i < j`, unique and
//! sorted. Table entries are finite or `+∞`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parse error at {context}: {message}")]
    Parse { context: String, message: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("invalid assignment: {0}")]
    InvalidAssignment(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Dense row-major `rows × cols` matrix of extended reals.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Table {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, ModelError> {
        if data.len() != rows * cols {
            return Err(ModelError::Validation(format!(
                "table data length {} does not match shape {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ModelError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(ModelError::Validation("ragged table rows".into()));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for a in 0..rows {
            for b in 0..cols {
                data.push(f(a, b));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.data[a * self.cols + b]
    }

    #[inline]
    pub fn set(&mut self, a: usize, b: usize, v: f64) {
        self.data[a * self.cols + b] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |b, a| self.get(a, b))
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.data[a * self.cols..(a + 1) * self.cols]
    }
}

/// One incident edge as seen from a vertex.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Incidence {
    pub nbr: usize,
    pub edge: usize,
    /// True when the vertex is the first (smaller) endpoint of the edge.
    pub low: bool,
}

/// Undirected neighbor lists, derived from the edge list.
#[derive(Clone, Debug, PartialEq)]
pub struct Adjacency {
    incident: Vec<Vec<Incidence>>,
}

impl Adjacency {
    fn build(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut incident = vec![Vec::new(); n];
        for (e, &(i, j)) in edges.iter().enumerate() {
            incident[i].push(Incidence { nbr: j, edge: e, low: true });
            incident[j].push(Incidence { nbr: i, edge: e, low: false });
        }
        for list in &mut incident {
            list.sort_by_key(|inc| inc.nbr);
        }
        Self { incident }
    }

    pub fn incident(&self, i: usize) -> &[Incidence] {
        &self.incident[i]
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.incident[i].iter().map(|inc| inc.nbr)
    }

    pub fn degree(&self, i: usize) -> usize {
        self.incident[i].len()
    }
}

/// A sum of bivariates over finite domains.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    domains: Vec<usize>,
    edges: Vec<(usize, usize)>,
    tables: Vec<Table>,
    adj: Adjacency,
}

pub type Assignment = Vec<usize>;

impl Instance {
    /// Builds an instance. Edges given as `(i, j)` with `i > j` are transposed,
    /// then all edges are sorted.
    pub fn new(domains: Vec<usize>, edges: Vec<(usize, usize)>, tables: Vec<Table>) -> Result<Self, ModelError> {
        let n = domains.len();
        if edges.len() != tables.len() {
            return Err(ModelError::Validation(format!("{} edges but {} tables", edges.len(), tables.len())));
        }
        if let Some(i) = domains.iter().position(|&k| k == 0) {
            return Err(ModelError::Validation(format!("domain size of vertex {i} must be >= 1")));
        }
        let mut pairs: Vec<((usize, usize), Table)> = Vec::with_capacity(edges.len());
        for (e, ((i, j), t)) in edges.into_iter().zip(tables).enumerate() {
            if i >= n || j >= n {
                return Err(ModelError::Validation(format!("edge {e} = ({i},{j}) has an endpoint outside 0..{n}")));
            }
            if i == j {
                return Err(ModelError::Validation(format!("edge {e} = ({i},{j}) is a self-loop")));
            }
            let (key, t) = if i < j { ((i, j), t) } else { ((j, i), t.transpose()) };
            if t.rows != domains[key.0] || t.cols != domains[key.1] {
                return Err(ModelError::Validation(format!(
                    "table of edge ({},{}) has shape {}x{}, expected {}x{}",
                    key.0, key.1, t.rows, t.cols, domains[key.0], domains[key.1]
                )));
            }
            for (idx, &v) in t.data.iter().enumerate() {
                if v.is_nan() || v == f64::NEG_INFINITY {
                    return Err(ModelError::Validation(format!(
                        "table of edge ({},{}) entry ({},{}) is {} (must be finite or +inf)",
                        key.0,
                        key.1,
                        idx / t.cols,
                        idx % t.cols,
                        v
                    )));
                }
            }
            pairs.push((key, t));
        }
        pairs.sort_by_key(|p| p.0);
        for w in pairs.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(ModelError::Validation(format!("duplicate edge ({},{})", w[0].0 .0, w[0].0 .1)));
            }
        }
        let (edges, tables): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let adj = Adjacency::build(n, &edges);
        Ok(Self { domains, edges, tables, adj })
    }

    pub fn edgeless(domains: Vec<usize>) -> Self {
        Self::new(domains, vec![], vec![]).expect("edgeless instance is valid")
    }

    pub fn n(&self) -> usize {
        self.domains.len()
    }

    pub fn domains(&self) -> &[usize] {
        &self.domains
    }

    pub fn domain(&self, i: usize) -> usize {
        self.domains[i]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn tables(&self) -> &[Table] {
        &self.tables
    }

    pub fn table(&self, e: usize) -> &Table {
        &self.tables[e]
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adj
    }

    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        let key = if i < j { (i, j) } else { (j, i) };
        self.edges.binary_search(&key).ok()
    }

    /// Value of the edge term seen from `inc`'s vertex taking value `a` and
    /// the neighbor taking value `b`.
    #[inline]
    pub fn pair(&self, inc: &Incidence, a: usize, b: usize) -> f64 {
        let t = &self.tables[inc.edge];
        if inc.low {
            t.get(a, b)
        } else {
            t.get(b, a)
        }
    }

    /// Product of domain sizes, saturating.
    pub fn state_count(&self) -> u128 {
        self.domains.iter().fold(1u128, |acc, &k| acc.saturating_mul(k as u128))
    }

    pub fn check_assignment(&self, x: &[usize]) -> Result<(), ModelError> {
        if x.len() != self.n() {
            return Err(ModelError::InvalidAssignment(format!(
                "length {} but instance has {} vertices",
                x.len(),
                self.n()
            )));
        }
        for (i, (&v, &k)) in x.iter().zip(&self.domains).enumerate() {
            if v >= k {
                return Err(ModelError::InvalidAssignment(format!("x[{i}] = {v} outside domain of size {k}")));
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &[usize]) -> Result<f64, ModelError> {
        self.check_assignment(x)?;
        Ok(self.evaluate_unchecked(x))
    }

    /// Sum over edges, without validating `x`.
    #[inline]
    pub fn evaluate_unchecked(&self, x: &[usize]) -> f64 {
        self.edges.iter().zip(&self.tables).map(|(&(i, j), t)| t.get(x[i], x[j])).sum()
    }

    /// Sum of the terms incident to `i` when `x_i = a` and the rest follow `x`.
    #[inline]
    pub fn local_cost(&self, x: &[usize], i: usize, a: usize) -> f64 {
        self.adj.incident(i).iter().map(|inc| self.pair(inc, a, x[inc.nbr])).sum()
    }

    /// `F(x')` where `x'` equals `x` except `x'_i = a`, given `fx = F(x)`.
    pub fn delta_evaluate(&self, x: &[usize], fx: f64, i: usize, a: usize) -> f64 {
        if fx == f64::INFINITY {
            let mut y = x.to_vec();
            y[i] = a;
            return self.evaluate_unchecked(&y);
        }
        fx - self.local_cost(x, i, x[i]) + self.local_cost(x, i, a)
    }

    pub fn is_finite(&self) -> bool {
        self.tables.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Returns a copy with the tables replaced.
    pub fn with_tables(&self, tables: Vec<Table>) -> Result<Self, ModelError> {
        Self::new(self.domains.clone(), self.edges.clone(), tables)
    }

    /// Acyclicity test with a leaf-elimination order.
    ///
    /// The order repeatedly removes the largest-index vertex of current
    /// degree one, so for a tree the smallest-index remaining vertex ends up
    /// as root. Isolated vertices are never listed.
    pub fn is_forest(&self) -> (bool, Option<Vec<usize>>) {
        let order = leaf_elimination(self);
        if order.len() + component_count(self) == self.n() {
            (true, Some(order))
        } else {
            (false, None)
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            ModelError::Parse { context, message } => {
                ModelError::Parse { context: format!("{}: {}", path.display(), context), message }
            }
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        let file = InstanceFile {
            n: self.n(),
            domains: self.domains.clone(),
            edges: self.edges.iter().map(|&(i, j)| [i, j]).collect(),
            tables: self
                .tables
                .iter()
                .map(|t| (0..t.rows).map(|a| t.row(a).iter().map(|&v| Entry::from_f64(v)).collect()).collect())
                .collect(),
        };
        serde_json::to_string(&file).expect("instance serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let file: InstanceFile = serde_json::from_str(text).map_err(|e| ModelError::Parse {
            context: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        if file.domains.len() != file.n {
            return Err(ModelError::Validation(format!(
                "\"n\" is {} but \"domains\" has {} entries",
                file.n,
                file.domains.len()
            )));
        }
        let mut tables = Vec::with_capacity(file.tables.len());
        for (e, rows) in file.tables.iter().enumerate() {
            let mut out = Vec::with_capacity(rows.len());
            for (a, row) in rows.iter().enumerate() {
                let mut r = Vec::with_capacity(row.len());
                for (b, entry) in row.iter().enumerate() {
                    r.push(
                        entry.to_f64().map_err(|message| ModelError::Parse {
                            context: format!("tables[{e}][{a}][{b}]"),
                            message,
                        })?,
                    );
                }
                out.push(r);
            }
            let t =
                Table::from_rows(&out).map_err(|_| ModelError::Validation(format!("tables[{e}] has ragged rows")))?;
            tables.push(t);
        }
        let edges = file.edges.iter().map(|p| (p[0], p[1])).collect();
        Self::new(file.domains, edges, tables)
    }
}

impl fmt::Display for Instance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Instance(n={}, edges={})", self.n(), self.edges.len())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    n: usize,
    domains: Vec<usize>,
    edges: Vec<[usize; 2]>,
    tables: Vec<Vec<Vec<Entry>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Entry {
    Num(f64),
    Text(String),
}

impl Entry {
    fn from_f64(v: f64) -> Self {
        if v == f64::INFINITY {
            Entry::Text("inf".into())
        } else {
            Entry::Num(v)
        }
    }

    fn to_f64(&self) -> Result<f64, String> {
        match self {
            Entry::Num(v) => Ok(*v),
            Entry::Text(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                // Parsed so that validation reports the violated invariant.
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" | "NaN" => Ok(f64::NAN),
                other => Err(format!("unexpected string entry {other:?}")),
            },
        }
    }
}

fn leaf_elimination(inst: &Instance) -> Vec<usize> {
    let n = inst.n();
    let adj = inst.adjacency();
    let mut deg: Vec<usize> = (0..n).map(|i| adj.degree(i)).collect();
    let mut removed = vec![false; n];
    let mut leaves: std::collections::BinaryHeap<usize> = (0..n).filter(|&i| deg[i] == 1).collect();
    let mut order = Vec::new();
    while let Some(v) = leaves.pop() {
        if removed[v] || deg[v] != 1 {
            continue;
        }
        removed[v] = true;
        order.push(v);
        deg[v] = 0;
        for u in adj.neighbors(v) {
            if !removed[u] {
                deg[u] -= 1;
                if deg[u] == 1 {
                    leaves.push(u);
                }
            }
        }
    }
    order
}

fn component_count(inst: &Instance) -> usize {
    let n = inst.n();
    let mut seen = vec![false; n];
    let mut count = 0;
    let mut stack = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        count += 1;
        seen[s] = true;
        stack.push(s);
        while let Some(v) = stack.pop() {
            for u in inst.adjacency().neighbors(v) {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
    }
    count
}

/// The four-edge tree used throughout the tests, in 0-based labels.
pub fn worked_example() -> Instance {
    let t = |rows: [[f64; 3]; 3]| Table::from_rows(&rows.map(|r| r.to_vec())).unwrap();
    Instance::new(
        vec![3; 5],
        vec![(0, 1), (1, 2), (2, 3), (2, 4)],
        vec![
            t([[3., 8., 0.], [6., 8., 9.], [6., 1., 9.]]),
            t([[8., 4., 2.], [6., 9., 9.], [6., 4., 2.]]),
            t([[7., 0., 0.], [2., 2., 1.], [4., 2., 6.]]),
            t([[8., 9., 6.], [0., 2., 7.], [9., 3., 3.]]),
        ],
    )
    .unwrap()
}

/// Binary triangle whose local relaxation has a strict gap; `+∞` marks
/// forbidden pairs.
pub fn triangle_gap_example() -> Instance {
    let inf = f64::INFINITY;
    let t = |rows: [[f64; 2]; 2]| Table::from_rows(&rows.map(|r| r.to_vec())).unwrap();
    Instance::new(
        vec![2; 3],
        vec![(0, 1), (0, 2), (1, 2)],
        vec![t([[1., inf], [inf, 0.]]), t([[0., 1.], [inf, 0.]]), t([[inf, 1.], [0., inf]])],
    )
    .unwrap()
}
