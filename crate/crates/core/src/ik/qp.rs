//! Small dense QP solver: min ½ xᵀH x + fᵀx subject to G x ≤ g, where every
//! row of G has exactly one nonzero entry (box-like rows).
//!
//! A primal active-set method: rows are normalized to per-variable upper and
//! lower bounds, bound variables are eliminated from a reduced Cholesky
//! solve, and bounds are activated/deactivated one per iteration. The method
//! is deterministic (ties broken by lowest index) and warm-startable — the
//! workspace remembers the previous active set, which makes successive
//! closely-related solves converge in a handful of iterations.
//!
//! All solver buffers live in [`QpWorkspace`] and are reused across calls;
//! per-call heap traffic is limited to the returned solution.

use nalgebra::{DMatrix, DVector};
use std::fmt;

/// Linear inequality constraints `matrix · x ≤ rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

impl ConstraintSet {
    /// No constraints over `dim` variables.
    pub fn empty(dim: usize) -> Self {
        ConstraintSet {
            matrix: DMatrix::zeros(0, dim),
            rhs: DVector::zeros(0),
        }
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Karush-Kuhn-Tucker residuals of a returned solution; all three are ≤ the
/// solve tolerance at a verified optimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    /// ‖H x + f + Gᵀμ‖∞
    pub stationarity: f64,
    /// max(0, maxᵢ (G x − g)ᵢ)
    pub primal: f64,
    /// maxᵢ |μᵢ (G x − g)ᵢ|
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Indices of constraint rows active at the solution, ascending.
    pub active_rows: Vec<usize>,
    pub iterations: usize,
    pub residuals: KktResiduals,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QpError {
    /// The Hessian is not positive definite.
    NotPd,
    /// Iteration cap reached; carries the best feasible iterate found.
    MaxIterations(Box<QpSolution>),
    /// A constraint row does not have exactly one nonzero entry.
    UnsupportedRow { row: usize },
    /// A variable's normalized bounds cross (upper < lower).
    Infeasible { variable: usize },
}

impl fmt::Display for QpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NotPd => write!(f, "quadratic cost matrix is not positive definite"),
            Self::MaxIterations(s) => write!(
                f,
                "active-set iteration cap hit after {} iterations (KKT residual {:.3e})",
                s.iterations,
                s.residuals.max()
            ),
            Self::UnsupportedRow { row } => {
                write!(f, "constraint row {row} does not have exactly one nonzero entry")
            }
            Self::Infeasible { variable } => {
                write!(f, "bounds on variable {variable} admit no solution")
            }
        }
    }
}

impl std::error::Error for QpError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Upper,
    Lower,
}

/// Tightest normalized bound on one variable plus its originating row.
#[derive(Debug, Clone, Copy)]
struct VarBound {
    value: f64,
    row: usize,
}

/// Reusable buffers plus the warm-start active set.
#[derive(Debug, Clone)]
pub struct QpWorkspace {
    dim: usize,
    upper: Vec<Option<VarBound>>,
    lower: Vec<Option<VarBound>>,
    /// Which bound each variable currently sits on; survives across calls.
    active: Vec<Option<Side>>,
    x: DVector<f64>,
    target: DVector<f64>,
    grad: DVector<f64>,
    free: Vec<usize>,
    /// Cholesky factor buffer for the reduced (free-variable) system.
    chol: DMatrix<f64>,
    reduced_rhs: DVector<f64>,
    mu: Vec<f64>,
}

impl QpWorkspace {
    pub fn new(dim: usize) -> Self {
        QpWorkspace {
            dim,
            upper: vec![None; dim],
            lower: vec![None; dim],
            active: vec![None; dim],
            x: DVector::zeros(dim),
            target: DVector::zeros(dim),
            grad: DVector::zeros(dim),
            free: Vec::with_capacity(dim),
            chol: DMatrix::zeros(dim, dim),
            reduced_rhs: DVector::zeros(dim),
            mu: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Forgets the warm-start active set.
    pub fn reset(&mut self) {
        self.active.iter_mut().for_each(|a| *a = None);
    }
}

/// Solves the QP. `tolerance` bounds the KKT residuals of an accepted
/// solution; `max_iters` caps active-set changes.
pub fn qp_solve(
    ws: &mut QpWorkspace,
    h: &DMatrix<f64>,
    f: &DVector<f64>,
    constraints: &ConstraintSet,
    tolerance: f64,
    max_iters: usize,
) -> Result<QpSolution, QpError> {
    let dim = ws.dim;
    assert_eq!(h.nrows(), dim, "Hessian rows must match workspace dimension");
    assert_eq!(h.ncols(), dim, "Hessian must be square");
    assert_eq!(f.len(), dim, "gradient length must match workspace dimension");
    assert_eq!(constraints.dim(), dim, "constraint columns must match workspace");
    assert!(tolerance > 0.0, "tolerance must be positive");

    normalize_bounds(ws, constraints)?;

    // Start feasible: warm-started actives snap to their (current) bound,
    // everything else clamps into range from zero.
    for v in 0..dim {
        match ws.active[v] {
            Some(Side::Upper) if ws.upper[v].is_some() => ws.x[v] = ws.upper[v].unwrap().value,
            Some(Side::Lower) if ws.lower[v].is_some() => ws.x[v] = ws.lower[v].unwrap().value,
            _ => {
                ws.active[v] = None;
                let mut xv = 0.0_f64;
                if let Some(u) = ws.upper[v] {
                    xv = xv.min(u.value);
                }
                if let Some(l) = ws.lower[v] {
                    xv = xv.max(l.value);
                }
                ws.x[v] = xv;
            }
        }
    }

    let mut iterations = 0usize;
    loop {
        if iterations >= max_iters {
            let best = finish(ws, h, f, constraints, iterations);
            return Err(QpError::MaxIterations(Box::new(best)));
        }
        iterations += 1;

        solve_reduced(ws, h, f)?;

        // Longest step toward the reduced optimum that stays feasible.
        let mut alpha = 1.0_f64;
        let mut blocker: Option<(usize, Side)> = None;
        for &v in &ws.free {
            let from = ws.x[v];
            let to = ws.target[v];
            if let Some(u) = ws.upper[v] {
                if to > u.value {
                    let a = (u.value - from) / (to - from);
                    if a < alpha {
                        alpha = a;
                        blocker = Some((v, Side::Upper));
                    }
                }
            }
            if let Some(l) = ws.lower[v] {
                if to < l.value {
                    let a = (l.value - from) / (to - from);
                    if a < alpha {
                        alpha = a;
                        blocker = Some((v, Side::Lower));
                    }
                }
            }
        }

        if let Some((v, side)) = blocker {
            for &w in &ws.free {
                ws.x[w] += alpha * (ws.target[w] - ws.x[w]);
            }
            // Snap exactly onto the bound so feasibility never erodes.
            ws.x[v] = match side {
                Side::Upper => ws.upper[v].unwrap().value,
                Side::Lower => ws.lower[v].unwrap().value,
            };
            ws.active[v] = Some(side);
            continue;
        }

        for &v in &ws.free {
            ws.x[v] = ws.target[v];
        }

        // Reduced optimum reached; release the bound that blocks descent the
        // most, if any (lowest variable index on ties).
        ws.grad.copy_from(f);
        ws.grad.gemv(1.0, h, &ws.x, 1.0);
        let scale = 1.0 + ws.grad.amax();
        let mut worst: Option<(usize, f64)> = None;
        for v in 0..dim {
            let mu = match ws.active[v] {
                Some(Side::Upper) => -ws.grad[v],
                Some(Side::Lower) => ws.grad[v],
                None => continue,
            };
            if mu < -1e-11 * scale && worst.map_or(true, |(_, m)| mu < m) {
                worst = Some((v, mu));
            }
        }
        match worst {
            Some((v, _)) => ws.active[v] = None,
            None => return Ok(finish(ws, h, f, constraints, iterations)),
        }
    }
}

/// Folds the constraint rows into per-variable bounds, keeping the tightest
/// bound per side along with its source row.
fn normalize_bounds(ws: &mut QpWorkspace, constraints: &ConstraintSet) -> Result<(), QpError> {
    ws.upper.iter_mut().for_each(|b| *b = None);
    ws.lower.iter_mut().for_each(|b| *b = None);
    for row in 0..constraints.len() {
        let mut entry: Option<(usize, f64)> = None;
        for col in 0..ws.dim {
            let c = constraints.matrix[(row, col)];
            if c != 0.0 {
                if entry.is_some() {
                    return Err(QpError::UnsupportedRow { row });
                }
                entry = Some((col, c));
            }
        }
        let Some((v, c)) = entry else {
            return Err(QpError::UnsupportedRow { row });
        };
        let bound = constraints.rhs[row] / c;
        if c > 0.0 {
            if ws.upper[v].map_or(true, |b| bound < b.value) {
                ws.upper[v] = Some(VarBound { value: bound, row });
            }
        } else if ws.lower[v].map_or(true, |b| bound > b.value) {
            ws.lower[v] = Some(VarBound { value: bound, row });
        }
    }
    for v in 0..ws.dim {
        if let (Some(u), Some(l)) = (ws.upper[v], ws.lower[v]) {
            if u.value < l.value {
                return Err(QpError::Infeasible { variable: v });
            }
        }
    }
    Ok(())
}

/// Equality-constrained solve with active variables pinned: finds the target
/// minimizing the objective over the free variables via an in-place Cholesky
/// of H restricted to them.
fn solve_reduced(ws: &mut QpWorkspace, h: &DMatrix<f64>, f: &DVector<f64>) -> Result<(), QpError> {
    ws.free.clear();
    ws.free.extend((0..ws.dim).filter(|&v| ws.active[v].is_none()));
    ws.target.copy_from(&ws.x);
    let nf = ws.free.len();
    if nf == 0 {
        return Ok(());
    }

    // rhs = −(f_F + H_FA x_A); the active part of x is already at bounds.
    for (i, &vi) in ws.free.iter().enumerate() {
        let mut r = -f[vi];
        for v in 0..ws.dim {
            if ws.active[v].is_some() {
                r -= h[(vi, v)] * ws.x[v];
            }
        }
        ws.reduced_rhs[i] = r;
        for (j, &vj) in ws.free.iter().enumerate().take(i + 1) {
            ws.chol[(i, j)] = h[(vi, vj)];
        }
    }

    // In-place lower-triangular Cholesky on the nf×nf corner.
    for j in 0..nf {
        let mut d = ws.chol[(j, j)];
        for k in 0..j {
            d -= ws.chol[(j, k)] * ws.chol[(j, k)];
        }
        if d <= 0.0 {
            return Err(QpError::NotPd);
        }
        let d = d.sqrt();
        ws.chol[(j, j)] = d;
        for i in (j + 1)..nf {
            let mut s = ws.chol[(i, j)];
            for k in 0..j {
                s -= ws.chol[(i, k)] * ws.chol[(j, k)];
            }
            ws.chol[(i, j)] = s / d;
        }
    }
    // Forward then backward substitution, in place on reduced_rhs.
    for i in 0..nf {
        let mut s = ws.reduced_rhs[i];
        for k in 0..i {
            s -= ws.chol[(i, k)] * ws.reduced_rhs[k];
        }
        ws.reduced_rhs[i] = s / ws.chol[(i, i)];
    }
    for i in (0..nf).rev() {
        let mut s = ws.reduced_rhs[i];
        for k in (i + 1)..nf {
            s -= ws.chol[(k, i)] * ws.reduced_rhs[k];
        }
        ws.reduced_rhs[i] = s / ws.chol[(i, i)];
    }
    for (i, &v) in ws.free.iter().enumerate() {
        ws.target[v] = ws.reduced_rhs[i];
    }
    Ok(())
}

/// Packages the current iterate with multipliers recovered from the gradient
/// and honestly recomputed KKT residuals.
fn finish(
    ws: &mut QpWorkspace,
    h: &DMatrix<f64>,
    f: &DVector<f64>,
    constraints: &ConstraintSet,
    iterations: usize,
) -> QpSolution {
    ws.grad.copy_from(f);
    ws.grad.gemv(1.0, h, &ws.x, 1.0);

    ws.mu.clear();
    ws.mu.resize(constraints.len(), 0.0);
    let mut active_rows = Vec::new();
    for v in 0..ws.dim {
        let bound = match ws.active[v] {
            Some(Side::Upper) => ws.upper[v],
            Some(Side::Lower) => ws.lower[v],
            None => None,
        };
        if let Some(b) = bound {
            let coef = constraints.matrix[(b.row, v)];
            ws.mu[b.row] = (-ws.grad[v] / coef).max(0.0);
            active_rows.push(b.row);
        }
    }
    active_rows.sort_unstable();

    let mut stationarity = 0.0_f64;
    for v in 0..ws.dim {
        let mut r = ws.grad[v];
        for row in 0..constraints.len() {
            if ws.mu[row] != 0.0 {
                r += ws.mu[row] * constraints.matrix[(row, v)];
            }
        }
        stationarity = stationarity.max(r.abs());
    }
    let mut primal = 0.0_f64;
    let mut complementarity = 0.0_f64;
    for row in 0..constraints.len() {
        let mut gx = 0.0;
        for v in 0..ws.dim {
            gx += constraints.matrix[(row, v)] * ws.x[v];
        }
        let slack = gx - constraints.rhs[row];
        primal = primal.max(slack);
        complementarity = complementarity.max((ws.mu[row] * slack).abs());
    }

    QpSolution {
        x: ws.x.clone(),
        active_rows,
        iterations,
        residuals: KktResiduals {
            stationarity,
            primal: primal.max(0.0),
            complementarity,
        },
    }
}
