//! Cone-projection solvers.
//!
//! Each solver projects every column of `X` onto the cone spanned by the
//! columns of `X_A`, i.e. solves `min_{B >= 0} loss(X, X_A B)`. The objective
//! separates by column, so columns are solved independently (in parallel via
//! rayon) and each column is deterministic on its own.
//!
//! * [`nnls_cd`]: squared loss by cyclic coordinate descent on the Gram matrix.
//! * [`nnlad_admm`]: l1 loss by ADMM on `min |Z|_1 s.t. X_A B + Z = X, B >= 0`,
//!   followed by an optional exact finish that moves the ADMM estimate to
//!   an optimal vertex of the underlying LP.
//! * [`bregman_projection`] / [`bregman_projection_reverse`]: Bregman loss
//!   with the data in the first (resp. second) argument, by second-order
//!   Taylor models minimized with coordinate descent plus a backtracking
//!   line search on the exact objective.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergence::{BregmanGenerator, DivergenceSpec};
use crate::error::{Error, Result};
use crate::matrix::{dot, l1, l2, mat_t_vec, mat_vec, mat_vec_into, soft_threshold, DenseMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// ADMM penalty.
    pub admm_rho: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_admm_iters: usize,
    /// Coordinate sweeps for the non-negative least-squares step inside ADMM.
    pub admm_inner_sweeps: usize,
    /// Finish with an exact vertex solve started from the ADMM estimate;
    /// kept only when it does not worsen the objective.
    pub polish: bool,
    pub max_cd_sweeps: usize,
    /// KKT tolerance, scaled per column by `max(1, |X_j|_inf)`.
    pub cd_tol: f64,
    /// Cap on second-order model rebuilds in the Bregman solver.
    pub max_newton_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            admm_rho: 1.0,
            eps_abs: 1e-6,
            eps_rel: 1e-4,
            max_admm_iters: 2000,
            admm_inner_sweeps: 3,
            polish: true,
            max_cd_sweeps: 5000,
            cd_tol: 1e-9,
            max_newton_iters: 200,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("admm_rho", self.admm_rho),
            ("eps_abs", self.eps_abs),
            ("eps_rel", self.eps_rel),
            ("cd_tol", self.cd_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        let caps = [
            ("max_admm_iters", self.max_admm_iters),
            ("admm_inner_sweeps", self.admm_inner_sweeps),
            ("max_cd_sweeps", self.max_cd_sweeps),
            ("max_newton_iters", self.max_newton_iters),
        ];
        for (name, v) in caps {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Tighter tolerances and larger caps, used when a projection has to be redone.
    pub fn tightened(&self) -> Self {
        Self {
            eps_abs: self.eps_abs * 1e-2,
            eps_rel: self.eps_rel * 1e-2,
            max_admm_iters: self.max_admm_iters * 10,
            max_cd_sweeps: self.max_cd_sweeps * 4,
            cd_tol: self.cd_tol * 1e-2,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProjectionResult {
    /// Coefficients, `k x n`, entrywise non-negative.
    pub h: DenseMatrix,
    /// `X - X_A H`, recomputed from `H`.
    pub residual: DenseMatrix,
    pub objective: f64,
    pub column_objectives: Vec<f64>,
    /// Largest iteration count over columns.
    pub iterations: usize,
    pub converged: bool,
    pub unconverged_columns: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// `D(X, X_A B)`.
    Forward,
    /// `D(X_A B, X)`.
    Reverse,
}

struct ColumnOutcome {
    b: Vec<f64>,
    objective: f64,
    iterations: usize,
    converged: bool,
}

/// Precomputed anchor data shared by all columns.
struct Basis<'a> {
    a: &'a DenseMatrix,
    /// `A^T A`, column-major `k x k`.
    gram: Vec<f64>,
    k: usize,
    max_col_norm: f64,
}

impl<'a> Basis<'a> {
    fn new(a: &'a DenseMatrix, x: &DenseMatrix) -> Result<Self> {
        if a.cols() == 0 {
            return Err(Error::InvalidArgument("anchor matrix has no columns".into()));
        }
        if a.rows() != x.rows() {
            return Err(Error::ShapeMismatch {
                expected: (x.rows(), a.cols()),
                found: a.shape(),
            });
        }
        if let Some(column) = (0..a.cols()).find(|&l| a.col(l).iter().all(|&v| v == 0.0)) {
            return Err(Error::DegenerateAnchor { column });
        }
        let k = a.cols();
        let mut gram = vec![0.0; k * k];
        for p in 0..k {
            for q in p..k {
                let v = dot(a.col(p), a.col(q));
                gram[p * k + q] = v;
                gram[q * k + p] = v;
            }
        }
        let max_col_norm = a.columns().map(l2).fold(0.0, f64::max);
        Ok(Self {
            a,
            gram,
            k,
            max_col_norm,
        })
    }

    #[inline]
    fn g(&self, p: usize, q: usize) -> f64 {
        self.gram[q * self.k + p]
    }
}

fn check_init(init: Option<&DenseMatrix>, k: usize, n: usize) -> Result<()> {
    if let Some(h0) = init {
        if h0.shape() != (k, n) {
            return Err(Error::ShapeMismatch {
                expected: (k, n),
                found: h0.shape(),
            });
        }
    }
    Ok(())
}

fn initial_column(init: Option<&DenseMatrix>, k: usize, j: usize) -> Vec<f64> {
    match init {
        Some(h0) => h0.col(j).iter().map(|v| v.max(0.0)).collect(),
        None => vec![0.0; k],
    }
}

fn assemble(
    a: &DenseMatrix,
    x: &DenseMatrix,
    outcomes: Vec<ColumnOutcome>,
) -> ProjectionResult {
    let k = a.cols();
    let n = x.cols();
    let m = x.rows();
    let mut h = Vec::with_capacity(k * n);
    let mut r = vec![0.0; m * n];
    let mut column_objectives = Vec::with_capacity(n);
    let mut iterations = 0;
    let mut unconverged_columns = Vec::new();
    for (j, o) in outcomes.into_iter().enumerate() {
        assert!(o.b.iter().all(|&v| v >= 0.0), "negative coefficient in column {j}");
        let rj = &mut r[j * m..(j + 1) * m];
        mat_vec_into(a, &o.b, rj);
        for (ri, &xi) in rj.iter_mut().zip(x.col(j)) {
            *ri = xi - *ri;
        }
        h.extend_from_slice(&o.b);
        column_objectives.push(o.objective);
        iterations = iterations.max(o.iterations);
        if !o.converged {
            unconverged_columns.push(j);
        }
    }
    let objective = column_objectives.iter().sum();
    ProjectionResult {
        h: DenseMatrix::from_parts(k, n, h),
        residual: DenseMatrix::from_parts(m, n, r),
        objective,
        column_objectives,
        iterations,
        converged: unconverged_columns.is_empty(),
        unconverged_columns,
    }
}

// ---------------------------------------------------------------------------
// Non-negative least squares
// ---------------------------------------------------------------------------

/// `min_{B >= 0} |X - X_A B|_F^2` by cyclic coordinate descent.
pub fn nnls_cd(a: &DenseMatrix, x: &DenseMatrix, opts: &SolverOptions) -> Result<ProjectionResult> {
    nnls_cd_from(a, x, opts, None)
}

pub(crate) fn nnls_cd_from(
    a: &DenseMatrix,
    x: &DenseMatrix,
    opts: &SolverOptions,
    init: Option<&DenseMatrix>,
) -> Result<ProjectionResult> {
    opts.validate()?;
    let basis = Basis::new(a, x)?;
    check_init(init, basis.k, x.cols())?;
    let outcomes = (0..x.cols())
        .into_par_iter()
        .map(|j| {
            let xj = x.col(j);
            let mut b = initial_column(init, basis.k, j);
            let c = mat_t_vec(a, xj);
            let tol = opts.cd_tol * kkt_scale(xj) * basis.max_col_norm.max(1.0);
            let (iterations, converged) = nnls_gram_cd(&basis, &c, &mut b, opts.max_cd_sweeps, Some(tol));
            let ab = mat_vec(a, &b);
            let objective = xj.iter().zip(&ab).map(|(x, y)| (x - y) * (x - y)).sum();
            ColumnOutcome {
                b,
                objective,
                iterations,
                converged,
            }
        })
        .collect();
    Ok(assemble(a, x, outcomes))
}

fn kkt_scale(x: &[f64]) -> f64 {
    x.iter().fold(1.0f64, |acc, v| acc.max(v.abs()))
}

/// Coordinate descent on `1/2 b^T G b - c^T b`, `b >= 0`. With `tol`, stops
/// once `max_l |min(b_l, grad_l)| <= tol` where grad is the gradient of
/// `|x - A b|^2`; without it, runs exactly `max_sweeps` sweeps.
fn nnls_gram_cd(
    basis: &Basis<'_>,
    c: &[f64],
    b: &mut [f64],
    max_sweeps: usize,
    tol: Option<f64>,
) -> (usize, bool) {
    let k = basis.k;
    let mut grad: Vec<f64> = (0..k)
        .map(|p| (0..k).map(|q| basis.g(p, q) * b[q]).sum::<f64>() - c[p])
        .collect();
    for sweep in 1..=max_sweeps {
        for l in 0..k {
            let d = basis.g(l, l);
            let new = (b[l] - grad[l] / d).max(0.0);
            let delta = new - b[l];
            if delta != 0.0 {
                b[l] = new;
                let gl = &basis.gram[l * k..(l + 1) * k];
                for (gq, &glq) in grad.iter_mut().zip(gl) {
                    *gq += glq * delta;
                }
            }
        }
        if let Some(tol) = tol {
            if nnls_kkt(b, &grad) <= tol {
                // Refresh the accumulated gradient before declaring convergence.
                for p in 0..k {
                    grad[p] = (0..k).map(|q| basis.g(p, q) * b[q]).sum::<f64>() - c[p];
                }
                if nnls_kkt(b, &grad) <= tol {
                    return (sweep, true);
                }
            }
        }
    }
    (max_sweeps, tol.is_none())
}

fn nnls_kkt(b: &[f64], half_grad: &[f64]) -> f64 {
    b.iter()
        .zip(half_grad)
        .map(|(&bl, &gl)| bl.min(2.0 * gl).abs())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Non-negative least absolute deviations
// ---------------------------------------------------------------------------

/// `min_{B >= 0} |X - X_A B|_1` by ADMM.
///
/// Columns that hit `max_admm_iters` keep their best iterate and are listed
/// in `unconverged_columns`.
pub fn nnlad_admm(a: &DenseMatrix, x: &DenseMatrix, opts: &SolverOptions) -> Result<ProjectionResult> {
    nnlad_admm_from(a, x, opts, None)
}

pub(crate) fn nnlad_admm_from(
    a: &DenseMatrix,
    x: &DenseMatrix,
    opts: &SolverOptions,
    init: Option<&DenseMatrix>,
) -> Result<ProjectionResult> {
    opts.validate()?;
    let basis = Basis::new(a, x)?;
    check_init(init, basis.k, x.cols())?;
    let outcomes = (0..x.cols())
        .into_par_iter()
        .map(|j| {
            let b0 = initial_column(init, basis.k, j);
            nnlad_column(&basis, x.col(j), b0, opts)
        })
        .collect();
    Ok(assemble(a, x, outcomes))
}

/// Single-column NN-LAD, exposed for the driver's targeted re-projections.
pub(crate) fn nnlad_single(
    a: &DenseMatrix,
    x: &[f64],
    b0: Vec<f64>,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, f64, bool)> {
    let xm = DenseMatrix::from_parts(x.len(), 1, x.to_vec());
    let basis = Basis::new(a, &xm)?;
    let o = nnlad_column(&basis, x, b0, opts);
    Ok((o.b, o.objective, o.converged))
}

fn residual_l1(a: &DenseMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ab = mat_vec(a, b);
    x.iter().zip(&ab).map(|(x, y)| (x - y).abs()).sum()
}

fn nnlad_column(basis: &Basis<'_>, x: &[f64], mut b: Vec<f64>, opts: &SolverOptions) -> ColumnOutcome {
    let a = basis.a;
    let (m, k) = (x.len(), basis.k);
    let rho = opts.admm_rho;
    let inv_rho = 1.0 / rho;

    let atx = mat_t_vec(a, x);
    let mut ab = mat_vec(a, &b);
    // Warm start: z on the current residual, u at the matching fixed point.
    let mut z: Vec<f64> = x.iter().zip(&ab).map(|(x, y)| x - y).collect();
    let mut u: Vec<f64> = z
        .iter()
        .map(|&zi| {
            if zi > 0.0 {
                -inv_rho
            } else if zi < 0.0 {
                inv_rho
            } else {
                0.0
            }
        })
        .collect();
    let mut atz = mat_t_vec(a, &z);
    let mut atu = mat_t_vec(a, &u);
    let mut c = vec![0.0; k];

    let mut best_b = b.clone();
    let mut best_obj = l1(&z);
    let x_norm = l2(x);
    let mut converged = best_obj == 0.0;
    let mut iterations = 0;

    while !converged && iterations < opts.max_admm_iters {
        iterations += 1;
        // B-step: NNLS against x - z - u.
        for l in 0..k {
            c[l] = atx[l] - atz[l] - atu[l];
        }
        nnls_gram_cd(basis, &c, &mut b, opts.admm_inner_sweeps, None);
        mat_vec_into(a, &b, &mut ab);

        // Z-step: soft threshold.
        for i in 0..m {
            z[i] = soft_threshold(x[i] - ab[i] - u[i], inv_rho);
        }
        let atz_new = mat_t_vec(a, &z);

        // Dual update and residuals.
        let mut primal_sq = 0.0;
        let mut obj = 0.0;
        for i in 0..m {
            let ri = ab[i] + z[i] - x[i];
            u[i] += ri;
            primal_sq += ri * ri;
            obj += (x[i] - ab[i]).abs();
        }
        let mut dual_sq = 0.0;
        for l in 0..k {
            let d = atz_new[l] - atz[l];
            dual_sq += d * d;
            // A^T u grows by A^T r = G b + A^T z - A^T x.
            let gb: f64 = (0..k).map(|q| basis.g(l, q) * b[q]).sum();
            atu[l] += gb + atz_new[l] - atx[l];
        }
        atz = atz_new;

        if obj < best_obj {
            best_obj = obj;
            best_b.copy_from_slice(&b);
        }

        let eps_pri = (m as f64).sqrt() * opts.eps_abs + opts.eps_rel * l2(&ab).max(l2(&z)).max(x_norm);
        let eps_dual = (k as f64).sqrt() * opts.eps_abs + opts.eps_rel * rho * l2(&atu);
        if primal_sq.sqrt() <= eps_pri && rho * dual_sq.sqrt() <= eps_dual {
            converged = true;
        }
    }

    let mut b = best_b;
    let mut objective = residual_l1(a, x, &b);
    if opts.polish {
        if let Some((pb, pobj)) = crate::lad::solve(a, x, Some(&b)) {
            if pobj <= objective * (1.0 + 1e-12) + 1e-15 {
                // An optimal vertex: converged whatever the ADMM residuals said.
                b = pb;
                objective = pobj;
                converged = true;
            }
        }
    }
    ColumnOutcome {
        b,
        objective,
        iterations,
        converged,
    }
}

// ---------------------------------------------------------------------------
// Bregman projection
// ---------------------------------------------------------------------------

/// Objective and derivatives of one column of a Bregman projection problem.
#[derive(Clone, Copy)]
pub struct BregmanColumn<'a> {
    pub spec: DivergenceSpec,
    pub orientation: Orientation,
    pub a: &'a DenseMatrix,
    pub x: &'a [f64],
}

impl BregmanColumn<'_> {
    fn loss(&self, xi: f64, yi: f64) -> f64 {
        match self.orientation {
            Orientation::Forward => self.spec.elementwise(xi, yi),
            Orientation::Reverse => self.spec.elementwise(yi, xi),
        }
    }

    fn dloss(&self, xi: f64, yi: f64) -> f64 {
        match self.orientation {
            Orientation::Forward => self.spec.grad_second_arg(xi, yi),
            Orientation::Reverse => self.spec.phi_prime(yi) - self.spec.phi_prime(xi),
        }
    }

    fn curvature(&self, xi: f64, yi: f64) -> f64 {
        match self.orientation {
            Orientation::Forward => self.spec.curvature_second_arg(xi, yi).max(0.0),
            Orientation::Reverse => self.spec.phi_second_derivative(yi),
        }
    }

    /// `loss(xi, yi + s) - loss(xi, yi)` without cancellation when both
    /// points are inside the domain.
    fn loss_change(&self, xi: f64, yi: f64, s: f64) -> f64 {
        use crate::divergence::DivergenceKind::*;
        let yn = yi + s;
        let eps = self.spec.eps_domain;
        let kind = self.spec.kind;
        if kind == SquaredEuclidean {
            return s * (s - 2.0 * (xi - yi));
        }
        if s == 0.0 {
            return 0.0;
        }
        if yi <= eps || yn <= eps {
            return self.loss(xi, yn) - self.loss(xi, yi);
        }
        let rel = (s / yi).ln_1p();
        match (self.orientation, kind) {
            (Orientation::Forward, GeneralizedKl) if xi <= 0.0 => s,
            (Orientation::Forward, GeneralizedKl) => -xi * rel + s,
            (Orientation::Forward, _) => {
                let xc = self.spec.clip(xi);
                -xc * s / (yi * yn) + rel
            }
            (Orientation::Reverse, GeneralizedKl) => {
                let xc = self.spec.clip(xi);
                yi * rel + s * ((yn / xc).ln() - 1.0)
            }
            (Orientation::Reverse, _) => s / self.spec.clip(xi) - rel,
        }
    }

    fn value_at(&self, y: &[f64]) -> f64 {
        self.x.iter().zip(y).map(|(&xi, &yi)| self.loss(xi, yi)).sum()
    }

    /// Objective at coefficients `b`.
    pub fn value(&self, b: &[f64]) -> f64 {
        self.value_at(&mat_vec(self.a, b))
    }

    /// Gradient with respect to `b`.
    pub fn gradient(&self, b: &[f64]) -> Vec<f64> {
        self.gradient_at(&mat_vec(self.a, b))
    }

    fn gradient_at(&self, y: &[f64]) -> Vec<f64> {
        let dy: Vec<f64> = self.x.iter().zip(y).map(|(&xi, &yi)| self.dloss(xi, yi)).collect();
        mat_t_vec(self.a, &dy)
    }
}

fn bregman_kkt(b: &[f64], g: &[f64]) -> f64 {
    b.iter()
        .zip(g)
        .map(|(&bl, &gl)| (-gl).max((bl * gl).abs()))
        .fold(0.0, f64::max)
}

/// `min_{B >= 0} D_phi(X, X_A B)`.
pub fn bregman_projection(
    spec: &DivergenceSpec,
    a: &DenseMatrix,
    x: &DenseMatrix,
    opts: &SolverOptions,
) -> Result<ProjectionResult> {
    bregman_projection_from(spec, Orientation::Forward, a, x, opts, None)
}

/// `min_{B >= 0} D_phi(X_A B, X)`.
pub fn bregman_projection_reverse(
    spec: &DivergenceSpec,
    a: &DenseMatrix,
    x: &DenseMatrix,
    opts: &SolverOptions,
) -> Result<ProjectionResult> {
    bregman_projection_from(spec, Orientation::Reverse, a, x, opts, None)
}

pub(crate) fn bregman_projection_from(
    spec: &DivergenceSpec,
    orientation: Orientation,
    a: &DenseMatrix,
    x: &DenseMatrix,
    opts: &SolverOptions,
    init: Option<&DenseMatrix>,
) -> Result<ProjectionResult> {
    opts.validate()?;
    let basis = Basis::new(a, x)?;
    check_init(init, basis.k, x.cols())?;
    let outcomes = (0..x.cols())
        .into_par_iter()
        .map(|j| {
            let col = BregmanColumn {
                spec: *spec,
                orientation,
                a,
                x: x.col(j),
            };
            let b0 = match init {
                Some(_) => {
                    let b = initial_column(init, basis.k, j);
                    if b.iter().all(|&v| v == 0.0) {
                        cold_start(&basis, &col)
                    } else {
                        off_zero(&basis, &col, b)
                    }
                }
                None => cold_start(&basis, &col),
            };
            bregman_column(&basis, &col, b0, opts)
        })
        .collect();
    Ok(assemble(a, x, outcomes))
}

/// Least-squares fit, nudged off zero so singular generators see `X_A b > 0`.
fn cold_start(basis: &Basis<'_>, col: &BregmanColumn<'_>) -> Vec<f64> {
    let c = mat_t_vec(basis.a, col.x);
    let mut b = vec![0.0; basis.k];
    nnls_gram_cd(basis, &c, &mut b, 200, None);
    off_zero(basis, col, b)
}

/// Raises every coefficient to a small floor for the singular generators.
fn off_zero(basis: &Basis<'_>, col: &BregmanColumn<'_>, mut b: Vec<f64>) -> Vec<f64> {
    if col.spec.kind != crate::divergence::DivergenceKind::SquaredEuclidean {
        let mass: f64 = basis.a.columns().map(l1).sum();
        let floor = 1e-6 * l1(col.x) / mass.max(f64::MIN_POSITIVE);
        b.iter_mut().for_each(|v| *v = v.max(floor));
    }
    b
}

fn bregman_column(
    basis: &Basis<'_>,
    col: &BregmanColumn<'_>,
    mut b: Vec<f64>,
    opts: &SolverOptions,
) -> ColumnOutcome {
    let a = basis.a;
    let (m, k) = (col.x.len(), basis.k);
    let tol = opts.cd_tol * kkt_scale(col.x);
    let mut y = mat_vec(a, &b);
    let mut f = col.value_at(&y);
    let mut converged = false;
    let mut iterations = 0;
    let mut hess = vec![0.0; k * k];
    let mut w = vec![0.0; m];

    while iterations < opts.max_newton_iters {
        let g = col.gradient_at(&y);
        if bregman_kkt(&b, &g) <= tol {
            converged = true;
            break;
        }
        iterations += 1;

        // Second-order model: H = A^T diag(w) A.
        for (wi, (&xi, &yi)) in w.iter_mut().zip(col.x.iter().zip(&y)) {
            *wi = col.curvature(xi, yi);
        }
        let mut max_diag = 0.0f64;
        for p in 0..k {
            let ap = a.col(p);
            for q in p..k {
                let aq = a.col(q);
                let mut s = 0.0;
                for i in 0..m {
                    s += ap[i] * w[i] * aq[i];
                }
                hess[p * k + q] = s;
                hess[q * k + p] = s;
            }
            max_diag = max_diag.max(hess[p * k + p]);
        }
        let ridge = 1e-12 * max_diag.max(1e-300);
        for p in 0..k {
            hess[p * k + p] = hess[p * k + p].max(ridge);
        }

        // Minimize the model over v >= 0 by coordinate descent; model gradient
        // at v is g + H (v - b).
        let mut v = b.clone();
        let mut mg = g.clone();
        for _ in 0..opts.max_cd_sweeps.min(500) {
            let mut biggest = 0.0f64;
            for l in 0..k {
                let new = (v[l] - mg[l] / hess[l * k + l]).max(0.0);
                let delta = new - v[l];
                if delta != 0.0 {
                    v[l] = new;
                    let hl = &hess[l * k..(l + 1) * k];
                    for (gq, &hq) in mg.iter_mut().zip(hl) {
                        *gq += hq * delta;
                    }
                    biggest = biggest.max(delta.abs() / (1.0 + new.abs()));
                }
            }
            if biggest <= 1e-14 {
                break;
            }
        }

        let dir: Vec<f64> = v.iter().zip(&b).map(|(vn, bo)| vn - bo).collect();
        let slope = dot(&g, &dir);
        if !(slope < 0.0) {
            break;
        }
        let ad = mat_vec(a, &dir);
        let mut t = 1.0;
        let mut accepted = false;
        let mut y_new = vec![0.0; m];
        while t > 1e-12 {
            for i in 0..m {
                y_new[i] = y[i] + t * ad[i];
            }
            let change: f64 = (0..m).map(|i| col.loss_change(col.x[i], y[i], y_new[i] - y[i])).sum();
            if change <= 1e-4 * t * slope {
                for (bl, dl) in b.iter_mut().zip(&dir) {
                    *bl = (*bl + t * dl).max(0.0);
                }
                y = mat_vec(a, &b);
                f = col.value_at(&y);
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    ColumnOutcome {
        b,
        objective: f,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::DivergenceKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mat(rows: &[Vec<f64>]) -> DenseMatrix {
        DenseMatrix::from_rows(rows).unwrap()
    }

    fn random_nonneg(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>()).unwrap()
    }

    #[test]
    fn nnls_scalar_fit_and_active_bound() {
        let opts = SolverOptions::default();
        let a = mat(&[vec![1.0], vec![0.0]]);
        let r = nnls_cd(&a, &mat(&[vec![2.0], vec![0.0]]), &opts).unwrap();
        assert!((r.h.get(0, 0) - 2.0).abs() < 1e-12);
        let r = nnls_cd(&a, &mat(&[vec![0.0], vec![1.0]]), &opts).unwrap();
        assert_eq!(r.h.get(0, 0), 0.0);
        assert!(r.converged);
    }

    #[test]
    fn nnls_matches_grid_search() {
        let a = mat(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        let x = mat(&[vec![1.0], vec![2.0], vec![5.0]]);
        let r = nnls_cd(&a, &x, &SolverOptions::default()).unwrap();
        // Grid oracle, step 1e-3 over [0, 6]^2.
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for p in 0..=6000 {
            for q in 0..=6000 {
                let (b0, b1) = (p as f64 * 1e-3, q as f64 * 1e-3);
                let f = (1.0 - b0).powi(2) + (2.0 - b1).powi(2) + (5.0 - b0 - b1).powi(2);
                if f < best.0 {
                    best = (f, b0, b1);
                }
            }
        }
        assert!((r.h.get(0, 0) - best.1).abs() < 1e-2);
        assert!((r.h.get(1, 0) - best.2).abs() < 1e-2);
    }

    #[test]
    fn degenerate_anchor_is_rejected() {
        let a = mat(&[vec![0.0, 1.0], vec![0.0, 1.0]]);
        let x = mat(&[vec![1.0], vec![1.0]]);
        let opts = SolverOptions::default();
        assert!(matches!(nnls_cd(&a, &x, &opts), Err(Error::DegenerateAnchor { column: 0 })));
        assert!(matches!(nnlad_admm(&a, &x, &opts), Err(Error::DegenerateAnchor { column: 0 })));
    }

    #[test]
    fn nnlad_point_inside_cone() {
        let a = mat(&[vec![1.0], vec![1.0]]);
        let r = nnlad_admm(&a, &mat(&[vec![3.0], vec![3.0]]), &SolverOptions::default()).unwrap();
        assert!((r.h.get(0, 0) - 3.0).abs() < 1e-9);
        assert!(r.objective < 1e-9);
    }

    #[test]
    fn nnlad_flat_median_optimum() {
        let a = mat(&[vec![1.0], vec![1.0]]);
        let r = nnlad_admm(&a, &mat(&[vec![1.0], vec![3.0]]), &SolverOptions::default()).unwrap();
        assert!((r.objective - 2.0).abs() < 1e-4, "{}", r.objective);
        let h = r.h.get(0, 0);
        assert!((1.0 - 1e-6..=3.0 + 1e-6).contains(&h));
    }

    #[test]
    fn nnlad_without_polish_still_near_optimal() {
        let opts = SolverOptions {
            polish: false,
            ..SolverOptions::default()
        };
        let a = mat(&[vec![1.0], vec![1.0], vec![1.0]]);
        let x = mat(&[vec![1.0], vec![2.0], vec![7.0]]);
        let r = nnlad_admm(&a, &x, &opts).unwrap();
        assert!((r.objective - 6.0).abs() < 1e-3, "{}", r.objective);
    }

    #[test]
    fn l1_solution_beats_l2_solution_in_l1() {
        let opts = SolverOptions::default();
        for seed in 0..10 {
            let a = random_nonneg(8, 3, seed);
            let x = random_nonneg(8, 5, seed + 100);
            let l1_res = nnlad_admm(&a, &x, &opts).unwrap();
            let l2_res = nnls_cd(&a, &x, &opts).unwrap();
            assert!(l1_res.objective <= l2_res.residual.l1_norm() + 1e-6);
        }
    }

    #[test]
    fn residual_is_recomputed_exactly() {
        let a = random_nonneg(6, 2, 1);
        let x = random_nonneg(6, 4, 2);
        let r = nnlad_admm(&a, &x, &SolverOptions::default()).unwrap();
        let expect = x.sub(&a.matmul(&r.h).unwrap()).unwrap();
        assert_eq!(r.residual, expect);
        assert!(r.h.is_nonneg());
    }

    #[test]
    fn bregman_squared_euclidean_matches_nnls() {
        let opts = SolverOptions::default();
        for seed in 0..5 {
            let a = random_nonneg(10, 3, seed);
            let x = random_nonneg(10, 4, seed + 50);
            let se = DivergenceSpec::squared_euclidean();
            let b = bregman_projection(&se, &a, &x, &opts).unwrap();
            let n = nnls_cd(&a, &x, &opts).unwrap();
            assert!((b.objective - n.objective).abs() < 1e-6, "{} {}", b.objective, n.objective);
            let rev = bregman_projection_reverse(&se, &a, &x, &opts).unwrap();
            assert!((rev.objective - b.objective).abs() < 1e-8);
        }
    }

    #[test]
    fn bregman_exact_membership() {
        let a = mat(&[vec![2.0], vec![1.0]]);
        let x = mat(&[vec![2.0], vec![1.0]]);
        for kind in [DivergenceKind::SquaredEuclidean, DivergenceKind::GeneralizedKl, DivergenceKind::ItakuraSaito] {
            let s = DivergenceSpec::new(kind);
            for r in [
                bregman_projection(&s, &a, &x, &SolverOptions::default()).unwrap(),
                bregman_projection_reverse(&s, &a, &x, &SolverOptions::default()).unwrap(),
            ] {
                assert!((r.h.get(0, 0) - 1.0).abs() < 1e-8, "{kind}");
                assert!(r.objective < 1e-12);
            }
        }
    }

    #[test]
    fn bregman_kl_identity_anchors() {
        let a = mat(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let x = mat(&[vec![2.0], vec![3.0]]);
        let r = bregman_projection(&DivergenceSpec::generalized_kl(), &a, &x, &SolverOptions::default()).unwrap();
        assert!((r.h.get(0, 0) - 2.0).abs() < 1e-6 && (r.h.get(1, 0) - 3.0).abs() < 1e-6);
        assert!(r.objective <= 1e-8);
    }

    #[test]
    fn bregman_reverse_kl_beats_grid() {
        let a = random_nonneg(3, 2, 11);
        let x = random_nonneg(3, 1, 12);
        let spec = DivergenceSpec::generalized_kl();
        let r = bregman_projection_reverse(&spec, &a, &x, &SolverOptions::default()).unwrap();
        let col = BregmanColumn {
            spec,
            orientation: Orientation::Reverse,
            a: &a,
            x: x.col(0),
        };
        let mut grid_best = f64::INFINITY;
        for p in 0..=100 {
            for q in 0..=100 {
                grid_best = grid_best.min(col.value(&[p as f64 * 0.03, q as f64 * 0.03]));
            }
        }
        assert!(r.objective <= grid_best + 1e-12, "{} vs {}", r.objective, grid_best);
    }

    #[test]
    fn loss_change_matches_direct_difference() {
        let a = mat(&[vec![1.0]]);
        for kind in [
            DivergenceKind::SquaredEuclidean,
            DivergenceKind::GeneralizedKl,
            DivergenceKind::ItakuraSaito,
        ] {
            for orientation in [Orientation::Forward, Orientation::Reverse] {
                for &(xi, yi, s) in &[(0.7, 0.3, 0.25), (2.0, 1.5, -0.5), (0.0, 0.4, 0.1), (1.0, 1.0, 1e-3)] {
                    let x = [xi];
                    let col = BregmanColumn {
                        spec: DivergenceSpec::new(kind),
                        orientation,
                        a: &a,
                        x: &x,
                    };
                    let direct = col.loss(xi, yi + s) - col.loss(xi, yi);
                    let fast = col.loss_change(xi, yi, s);
                    assert!((direct - fast).abs() <= 1e-12 * (1.0 + direct.abs()), "{kind} {orientation:?}");
                }
            }
        }
    }

    #[test]
    fn bregman_kkt_holds_and_objective_is_monotone() {
        let opts = SolverOptions::default();
        for kind in [DivergenceKind::GeneralizedKl, DivergenceKind::ItakuraSaito] {
            let spec = DivergenceSpec::new(kind);
            let a = random_nonneg(12, 3, 21);
            let x = random_nonneg(12, 6, 22);
            let r = bregman_projection(&spec, &a, &x, &opts).unwrap();
            assert!(r.converged, "{kind}");
            for j in 0..x.cols() {
                let col = BregmanColumn {
                    spec,
                    orientation: Orientation::Forward,
                    a: &a,
                    x: x.col(j),
                };
                let g = col.gradient(r.h.col(j));
                for (l, &gl) in g.iter().enumerate() {
                    assert!(gl >= -1e-8, "{kind} grad {gl}");
                    assert!((r.h.get(l, j) * gl).abs() <= 1e-8);
                }
                // Objective never exceeds the cold start.
                let start = cold_start(&Basis::new(&a, &x).unwrap(), &col);
                assert!(r.column_objectives[j] <= col.value(&start) + 1e-12);
            }
        }
    }

    #[test]
    fn options_validation() {
        let bad = SolverOptions {
            admm_rho: 0.0,
            ..SolverOptions::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverOptions {
            max_admm_iters: 0,
            ..SolverOptions::default()
        };
        assert!(bad.validate().is_err());
    }
}
