//! Minimal LP interface: free variables, `≤` and `=` rows in sparse triplet
//! form, maximization. Two backends: a dense two-phase simplex for small
//! programs and the Clarabel interior-point solver for large ones.

use std::fmt::Write as _;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    Le,
    Eq,
}

/// `max c·x` subject to `A x (≤|=) b`, all variables free.
#[derive(Clone, Debug, Default)]
pub struct LpProblem {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub rows: Vec<(RowKind, f64)>,
    pub triplets: Vec<(usize, usize, f64)>,
}

impl LpProblem {
    pub fn new(num_vars: usize) -> Self {
        Self { num_vars, objective: vec![0.0; num_vars], rows: Vec::new(), triplets: Vec::new() }
    }

    pub fn add_row(&mut self, kind: RowKind, coefs: &[(usize, f64)], rhs: f64) -> usize {
        let r = self.rows.len();
        self.rows.push((kind, rhs));
        for &(c, v) in coefs {
            self.triplets.push((r, c, v));
        }
        r
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Fixed-column MPS text. The objective section is marked for maximization.
    pub fn to_mps(&self, name: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "NAME          {name}");
        let _ = writeln!(s, "OBJSENSE\n    MAX");
        let _ = writeln!(s, "ROWS\n N  OBJ");
        for (r, (kind, _)) in self.rows.iter().enumerate() {
            let k = if *kind == RowKind::Le { 'L' } else { 'E' };
            let _ = writeln!(s, " {k}  R{r}");
        }
        let _ = writeln!(s, "COLUMNS");
        let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.num_vars];
        for &(r, c, v) in &self.triplets {
            by_col[c].push((r, v));
        }
        for (c, entries) in by_col.iter().enumerate() {
            if self.objective[c] != 0.0 {
                let _ = writeln!(s, "    X{c:<8} OBJ       {:>12}", self.objective[c]);
            }
            for &(r, v) in entries {
                let _ = writeln!(s, "    X{c:<8} R{r:<8} {v:>12}");
            }
        }
        let _ = writeln!(s, "RHS");
        for (r, (_, b)) in self.rows.iter().enumerate() {
            if *b != 0.0 {
                let _ = writeln!(s, "    RHS       R{r:<8} {b:>12}");
            }
        }
        let _ = writeln!(s, "BOUNDS");
        for c in 0..self.num_vars {
            let _ = writeln!(s, " FR BND       X{c}");
        }
        s.push_str("ENDATA\n");
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
    Numerical(String),
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: LpStatus,
    pub value: f64,
    pub x: Vec<f64>,
}

pub trait LpSolver: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, problem: &LpProblem) -> LpSolution;
}

/// Dense tableau simplex, two phases, Dantzig pricing with a Bland fallback
/// after repeated degenerate pivots.
#[derive(Clone, Debug)]
pub struct DenseSimplex {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for DenseSimplex {
    fn default() -> Self {
        Self { max_iter: 200_000, tol: 1e-9 }
    }
}

struct Tableau {
    m: usize,
    width: usize, // columns incl. rhs
    t: Vec<f64>,  // (m + 1) rows, last one is the reduced-cost row
    basis: Vec<usize>,
}

impl Tableau {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * self.width + c]
    }

    fn rhs_col(&self) -> usize {
        self.width - 1
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.width;
        let inv = 1.0 / self.at(pr, pc);
        for c in 0..w {
            self.t[pr * w + c] *= inv;
        }
        self.t[pr * w + pc] = 1.0;
        let (before, rest) = self.t.split_at_mut(pr * w);
        let (prow, after) = rest.split_at_mut(w);
        let eliminate = |row: &mut [f64]| {
            let f = row[pc];
            if f != 0.0 {
                for (x, p) in row.iter_mut().zip(prow.iter()) {
                    *x -= f * p;
                }
                row[pc] = 0.0;
            }
        };
        before.chunks_mut(w).for_each(eliminate);
        after.chunks_mut(w).for_each(eliminate);
        self.basis[pr] = pc;
    }

    /// Runs simplex iterations on the reduced-cost row over `allowed` columns.
    fn run(&mut self, allowed: usize, tol: f64, max_iter: usize) -> LpStatus {
        let obj = self.m;
        let rhs = self.rhs_col();
        let mut degenerate = 0usize;
        for _ in 0..max_iter {
            let bland = degenerate > 50;
            let mut enter = None;
            let mut best = -tol;
            for c in 0..allowed {
                let d = self.at(obj, c);
                if d < best {
                    enter = Some(c);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(pc) = enter else { return LpStatus::Optimal };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.m {
                let a = self.at(r, pc);
                if a > tol {
                    let ratio = self.at(r, rhs) / a;
                    match leave {
                        None => leave = Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio - 1e-12 || (ratio <= lratio + 1e-12 && self.basis[r] < self.basis[lr]) {
                                leave = Some((r, ratio));
                            }
                        }
                    }
                }
            }
            let Some((pr, ratio)) = leave else { return LpStatus::Unbounded };
            degenerate = if ratio.abs() <= 1e-12 { degenerate + 1 } else { 0 };
            self.pivot(pr, pc);
        }
        LpStatus::IterationLimit
    }
}

impl LpSolver for DenseSimplex {
    fn name(&self) -> &'static str {
        "dense-simplex"
    }

    fn solve(&self, p: &LpProblem) -> LpSolution {
        let m = p.rows.len();
        let nv = p.num_vars;
        let slack_of: Vec<Option<usize>> = {
            let mut next = 2 * nv;
            p.rows
                .iter()
                .map(|(k, _)| {
                    (*k == RowKind::Le).then(|| {
                        next += 1;
                        next - 1
                    })
                })
                .collect()
        };
        let nstruct = 2 * nv + slack_of.iter().flatten().count();
        let width = nstruct + m + 1;
        let mut tab = Tableau { m, width, t: vec![0.0; (m + 1) * width], basis: vec![0; m] };
        for &(r, c, v) in &p.triplets {
            tab.t[r * width + 2 * c] += v;
            tab.t[r * width + 2 * c + 1] -= v;
        }
        for r in 0..m {
            if let Some(s) = slack_of[r] {
                tab.t[r * width + s] = 1.0;
            }
            tab.t[r * width + width - 1] = p.rows[r].1;
            if p.rows[r].1 < 0.0 {
                for c in 0..nstruct {
                    tab.t[r * width + c] = -tab.t[r * width + c];
                }
                tab.t[r * width + width - 1] = -p.rows[r].1;
            }
            tab.t[r * width + nstruct + r] = 1.0;
            tab.basis[r] = nstruct + r;
        }
        // phase one: minimize the sum of artificials
        let obj = m * width;
        for c in 0..width {
            if c >= nstruct && c < nstruct + m {
                continue;
            }
            let s: f64 = (0..m).map(|r| tab.t[r * width + c]).sum();
            tab.t[obj + c] = -s;
        }
        let scale = 1.0 + p.rows.iter().map(|(_, b)| b.abs()).sum::<f64>();
        match tab.run(nstruct + m, self.tol, self.max_iter) {
            LpStatus::Optimal => {}
            LpStatus::Unbounded => return failure(LpStatus::Numerical("phase one unbounded".into()), nv),
            other => return failure(other, nv),
        }
        if -tab.t[obj + width - 1] > 1e-7 * scale {
            return failure(LpStatus::Infeasible, nv);
        }
        // drive artificials out of the basis where possible
        for r in 0..m {
            if tab.basis[r] >= nstruct {
                if let Some(c) = (0..nstruct).find(|&c| tab.at(r, c).abs() > 1e-7) {
                    tab.pivot(r, c);
                }
            }
        }
        // phase two: minimize -c·x
        let cost = |c: usize| -> f64 {
            if c < 2 * nv {
                let v = p.objective[c / 2];
                if c.is_multiple_of(2) {
                    -v
                } else {
                    v
                }
            } else {
                0.0
            }
        };
        for c in 0..width {
            tab.t[obj + c] = if c == width - 1 { 0.0 } else { cost(c) };
        }
        for r in 0..m {
            let cb = if tab.basis[r] < nstruct { cost(tab.basis[r]) } else { 0.0 };
            if cb != 0.0 {
                for c in 0..width {
                    tab.t[obj + c] -= cb * tab.t[r * width + c];
                }
            }
        }
        let status = tab.run(nstruct, self.tol, self.max_iter);
        if status != LpStatus::Optimal {
            return failure(status, nv);
        }
        let mut x = vec![0.0; nv];
        for r in 0..m {
            let b = tab.basis[r];
            if b < 2 * nv {
                let v = tab.at(r, width - 1);
                if b.is_multiple_of(2) {
                    x[b / 2] += v;
                } else {
                    x[b / 2] -= v;
                }
            }
        }
        let value = x.iter().zip(&p.objective).map(|(a, b)| a * b).sum();
        LpSolution { status: LpStatus::Optimal, value, x }
    }
}

fn failure(status: LpStatus, nv: usize) -> LpSolution {
    LpSolution { status, value: f64::NAN, x: vec![0.0; nv] }
}

/// Interior-point backend via Clarabel.
#[derive(Clone, Debug)]
pub struct ClarabelLp {
    pub tol: f64,
    pub max_iter: u32,
}

impl Default for ClarabelLp {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 400 }
    }
}

impl LpSolver for ClarabelLp {
    fn name(&self) -> &'static str {
        "clarabel"
    }

    fn solve(&self, p: &LpProblem) -> LpSolution {
        use clarabel::algebra::CscMatrix;
        use clarabel::solver::{
            DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus, ZeroConeT,
        };

        let nv = p.num_vars;
        // Clarabel wants the cone blocks contiguous: `≤` rows first, then `=`.
        let mut row_map = vec![0usize; p.rows.len()];
        let mut next = 0;
        for kind in [RowKind::Le, RowKind::Eq] {
            for (r, (k, _)) in p.rows.iter().enumerate() {
                if *k == kind {
                    row_map[r] = next;
                    next += 1;
                }
            }
        }
        let n_le = p.rows.iter().filter(|(k, _)| *k == RowKind::Le).count();
        let m = p.rows.len();
        let mut b = vec![0.0; m];
        for (r, (_, rhs)) in p.rows.iter().enumerate() {
            b[row_map[r]] = *rhs;
        }
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nv];
        for &(r, c, v) in &p.triplets {
            cols[c].push((row_map[r], v));
        }
        let mut colptr = Vec::with_capacity(nv + 1);
        let mut rowval = Vec::with_capacity(p.triplets.len());
        let mut nzval = Vec::with_capacity(p.triplets.len());
        colptr.push(0);
        for mut col in cols {
            col.sort_by_key(|e| e.0);
            // merge duplicate entries
            let mut last: Option<usize> = None;
            for (r, v) in col {
                if last == Some(r) {
                    *nzval.last_mut().unwrap() += v;
                } else {
                    rowval.push(r);
                    nzval.push(v);
                    last = Some(r);
                }
            }
            colptr.push(rowval.len());
        }
        let a = CscMatrix::new(m, nv, colptr, rowval, nzval);
        let pmat = CscMatrix::<f64>::zeros((nv, nv));
        let q: Vec<f64> = p.objective.iter().map(|c| -c).collect();
        let mut cones = Vec::new();
        if n_le > 0 {
            cones.push(NonnegativeConeT(n_le));
        }
        if m > n_le {
            cones.push(ZeroConeT(m - n_le));
        }
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .tol_gap_abs(self.tol)
            .tol_gap_rel(self.tol)
            .tol_feas(self.tol)
            .max_iter(self.max_iter)
            .build()
            .expect("valid settings");
        let mut solver = match DefaultSolver::new(&pmat, &q, &a, &b, &cones, settings) {
            Ok(s) => s,
            Err(e) => return failure(LpStatus::Numerical(format!("{e:?}")), nv),
        };
        solver.solve();
        let status = match solver.solution.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => LpStatus::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => LpStatus::Infeasible,
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => LpStatus::Unbounded,
            SolverStatus::MaxIterations => LpStatus::IterationLimit,
            other => LpStatus::Numerical(format!("{other:?}")),
        };
        if status != LpStatus::Optimal {
            return failure(status, nv);
        }
        let x = solver.solution.x.clone();
        let value = x.iter().zip(&p.objective).map(|(a, b)| a * b).sum();
        LpSolution { status, value, x }
    }
}
