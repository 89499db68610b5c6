//! Exact non-negative least absolute deviations for one column.
//!
//! `min_{b >= 0} |x - A b|_1` has the dual
//!
//! ```text
//! max x^T d   s.t.   A^T d <= 0,   -1 <= d <= 1,
//! ```
//!
//! an LP with only `k` general rows. It is solved here by a revised
//! bounded-variable primal simplex with an explicit `k x k` basis inverse;
//! the primal coefficients are the simplex multipliers at the optimum.
//! Starting from the support of an approximate primal solution usually
//! leaves only a handful of pivots.

use crate::matrix::{mat_vec, DenseMatrix};

const PIVOT_TOL: f64 = 1e-11;
const REFACTOR_EVERY: usize = 64;
/// Degenerate pivots in a row before switching to Bland's rule.
const STALL_LIMIT: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq)]
enum State {
    Basic(usize),
    Lower,
    Upper,
}

struct DualLp<'a> {
    x: &'a [f64],
    /// Row-major copy of `A` (`m x k`), so that rows are contiguous.
    at: Vec<f64>,
    m: usize,
    k: usize,
    basis: Vec<usize>,
    state: Vec<State>,
    value: Vec<f64>,
    /// Row-major `B^{-1}`.
    binv: Vec<f64>,
    rc_tol: f64,
}

/// Exact minimizer and objective, or `None` if the simplex failed to
/// terminate cleanly (numerically singular basis or pivot cap).
pub(crate) fn solve(a: &DenseMatrix, x: &[f64], hint: Option<&[f64]>) -> Option<(Vec<f64>, f64)> {
    let (m, k) = a.shape();
    let mut at = vec![0.0; m * k];
    for l in 0..k {
        for (i, &v) in a.col(l).iter().enumerate() {
            at[i * k + l] = v;
        }
    }
    let scale = x.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let mut lp = DualLp {
        x,
        at,
        m,
        k,
        basis: Vec::new(),
        state: Vec::new(),
        value: Vec::new(),
        binv: Vec::new(),
        rc_tol: 1e-12 * scale,
    };
    let warm = hint.is_some_and(|b| lp.crash(a, b));
    if !warm {
        lp.cold();
    }
    let y = lp.optimize()?;
    let b: Vec<f64> = y.iter().map(|&v| v.max(0.0)).collect();
    let fit = mat_vec(a, &b);
    let obj = x.iter().zip(&fit).map(|(p, q)| (p - q).abs()).sum();
    Some((b, obj))
}

impl DualLp<'_> {
    fn n_vars(&self) -> usize {
        self.m + self.k
    }

    fn bounds(&self, j: usize) -> (f64, f64) {
        if j < self.m {
            (-1.0, 1.0)
        } else {
            (0.0, f64::INFINITY)
        }
    }

    fn cost(&self, j: usize) -> f64 {
        if j < self.m {
            self.x[j]
        } else {
            0.0
        }
    }

    /// Column `j` of `[A^T | I]`.
    fn column(&self, j: usize) -> Vec<f64> {
        if j < self.m {
            self.at[j * self.k..(j + 1) * self.k].to_vec()
        } else {
            let mut e = vec![0.0; self.k];
            e[j - self.m] = 1.0;
            e
        }
    }

    /// All `d` at `-1`, slacks basic: feasible because `A >= 0`.
    fn cold(&mut self) {
        let (m, k) = (self.m, self.k);
        self.basis = (m..m + k).collect();
        self.state = vec![State::Lower; m + k];
        self.value = vec![-1.0; m];
        self.value.extend(vec![0.0; k]);
        for (pos, &j) in self.basis.clone().iter().enumerate() {
            self.state[j] = State::Basic(pos);
        }
        self.binv = identity(k);
        self.recompute_basic_values();
    }

    /// Basis from an approximate primal point: the support of `b` paired
    /// with the same number of best-fitted rows. Returns false if that basis
    /// is singular or not feasible for the dual.
    fn crash(&mut self, a: &DenseMatrix, b: &[f64]) -> bool {
        let (m, k) = (self.m, self.k);
        let bmax = b.iter().fold(0.0f64, |acc, &v| acc.max(v));
        let support: Vec<usize> = (0..k).filter(|&l| b[l] > 1e-9 * bmax).collect();
        if support.len() > m {
            return false;
        }
        let fit = mat_vec(a, b);
        let r: Vec<f64> = self.x.iter().zip(&fit).map(|(p, q)| p - q).collect();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&p, &q| r[p].abs().total_cmp(&r[q].abs()).then(p.cmp(&q)));
        let rows = &order[..support.len()];

        self.state = vec![State::Lower; m + k];
        self.value = vec![0.0; m + k];
        for i in 0..m {
            if r[i] > 0.0 {
                self.state[i] = State::Upper;
                self.value[i] = 1.0;
            } else {
                self.value[i] = -1.0;
            }
        }
        self.basis = rows.iter().copied().chain((0..k).filter(|l| !support.contains(l)).map(|l| m + l)).collect();
        for (pos, &j) in self.basis.clone().iter().enumerate() {
            self.state[j] = State::Basic(pos);
        }
        if !self.refactor() {
            return false;
        }
        let feasible = self.basis.iter().all(|&j| {
            let (lo, hi) = self.bounds(j);
            let v = self.value[j];
            v >= lo - 1e-12 && v <= hi + 1e-12
        });
        if feasible {
            for &j in &self.basis.clone() {
                let (lo, hi) = self.bounds(j);
                self.value[j] = self.value[j].clamp(lo, hi);
            }
        }
        feasible
    }

    /// Rebuilds `B^{-1}` from scratch and the basic values from the
    /// nonbasic ones.
    fn refactor(&mut self) -> bool {
        let k = self.k;
        let mut bmat = vec![0.0; k * k];
        for (pos, &j) in self.basis.iter().enumerate() {
            for (row, v) in self.column(j).into_iter().enumerate() {
                bmat[row * k + pos] = v;
            }
        }
        match invert(bmat, k) {
            Some(inv) => {
                self.binv = inv;
                self.recompute_basic_values();
                true
            }
            None => false,
        }
    }

    /// `x_B = -B^{-1} N x_N` (the right-hand side is zero).
    fn recompute_basic_values(&mut self) {
        let k = self.k;
        let mut rhs = vec![0.0; k];
        for j in 0..self.n_vars() {
            if matches!(self.state[j], State::Basic(_)) {
                continue;
            }
            let v = self.value[j];
            if v == 0.0 {
                continue;
            }
            if j < self.m {
                for (r, &c) in rhs.iter_mut().zip(&self.at[j * k..(j + 1) * k]) {
                    *r -= c * v;
                }
            } else {
                rhs[j - self.m] -= v;
            }
        }
        for pos in 0..k {
            let row = &self.binv[pos * k..(pos + 1) * k];
            self.value[self.basis[pos]] = row.iter().zip(&rhs).map(|(a, b)| a * b).sum();
        }
    }

    /// `y = B^{-T} c_B`.
    fn multipliers(&self) -> Vec<f64> {
        let k = self.k;
        let mut y = vec![0.0; k];
        for pos in 0..k {
            let c = self.cost(self.basis[pos]);
            if c != 0.0 {
                for (yl, &v) in y.iter_mut().zip(&self.binv[pos * k..(pos + 1) * k]) {
                    *yl += v * c;
                }
            }
        }
        y
    }

    fn reduced_cost(&self, j: usize, y: &[f64]) -> f64 {
        if j < self.m {
            let row = &self.at[j * self.k..(j + 1) * self.k];
            self.x[j] - row.iter().zip(y).map(|(a, b)| a * b).sum::<f64>()
        } else {
            -y[j - self.m]
        }
    }

    /// Runs to optimality and returns the multipliers.
    fn optimize(&mut self) -> Option<Vec<f64>> {
        let k = self.k;
        let cap = 50 * (self.n_vars() + 10);
        let mut since_refactor = 0;
        let mut stall = 0;
        for _ in 0..cap {
            let y = self.multipliers();
            // Pricing: Dantzig, or Bland while stalling.
            let mut entering: Option<(usize, f64, f64)> = None;
            for j in 0..self.n_vars() {
                let dir = match self.state[j] {
                    State::Basic(_) => continue,
                    State::Lower => 1.0,
                    State::Upper => -1.0,
                };
                let rc = self.reduced_cost(j, &y);
                if rc * dir > self.rc_tol {
                    if stall >= STALL_LIMIT {
                        entering = Some((j, dir, 0.0));
                        break;
                    }
                    if entering.is_none_or(|(_, _, best)| rc.abs() > best) {
                        entering = Some((j, dir, rc.abs()));
                    }
                }
            }
            let Some((e, dir, _)) = entering else {
                if !self.refactor() {
                    return None;
                }
                // Confirm optimality with a fresh factorization.
                let y = self.multipliers();
                let clean = (0..self.n_vars()).all(|j| match self.state[j] {
                    State::Basic(_) => true,
                    State::Lower => self.reduced_cost(j, &y) <= self.rc_tol,
                    State::Upper => self.reduced_cost(j, &y) >= -self.rc_tol,
                });
                if clean {
                    return Some(y);
                }
                continue;
            };

            // w = B^{-1} a_e; basic values move by -dir * t * w.
            let col = self.column(e);
            let w: Vec<f64> = (0..k)
                .map(|pos| self.binv[pos * k..(pos + 1) * k].iter().zip(&col).map(|(a, b)| a * b).sum())
                .collect();
            let (lo_e, hi_e) = self.bounds(e);
            let mut t_best = hi_e - lo_e;
            let mut leave: Option<(usize, bool)> = None;
            for pos in 0..k {
                let rate = -dir * w[pos];
                if rate.abs() <= PIVOT_TOL {
                    continue;
                }
                let j = self.basis[pos];
                let (lo, hi) = self.bounds(j);
                let (t, to_upper) = if rate < 0.0 {
                    (((self.value[j] - lo) / -rate).max(0.0), false)
                } else if hi.is_finite() {
                    (((hi - self.value[j]) / rate).max(0.0), true)
                } else {
                    continue;
                };
                let better = match leave {
                    None => t < t_best,
                    Some((lp, _)) => t < t_best || (t == t_best && j < self.basis[lp]),
                };
                if better {
                    t_best = t;
                    leave = Some((pos, to_upper));
                }
            }
            if !t_best.is_finite() {
                return None;
            }
            stall = if t_best <= 1e-14 { stall + 1 } else { 0 };

            for pos in 0..k {
                let j = self.basis[pos];
                self.value[j] -= dir * t_best * w[pos];
            }
            match leave {
                None => {
                    // Bound flip.
                    self.state[e] = if dir > 0.0 { State::Upper } else { State::Lower };
                    self.value[e] = if dir > 0.0 { hi_e } else { lo_e };
                }
                Some((pos, to_upper)) => {
                    let out = self.basis[pos];
                    let (lo, hi) = self.bounds(out);
                    self.value[out] = if to_upper { hi } else { lo };
                    self.state[out] = if to_upper { State::Upper } else { State::Lower };
                    self.value[e] += dir * t_best;
                    self.basis[pos] = e;
                    self.state[e] = State::Basic(pos);
                    // Product-form update of B^{-1}.
                    let piv = w[pos];
                    let prow: Vec<f64> = self.binv[pos * k..(pos + 1) * k].iter().map(|v| v / piv).collect();
                    for r in 0..k {
                        if r == pos {
                            continue;
                        }
                        let f = w[r];
                        if f != 0.0 {
                            for (v, p) in self.binv[r * k..(r + 1) * k].iter_mut().zip(&prow) {
                                *v -= f * p;
                            }
                        }
                    }
                    self.binv[pos * k..(pos + 1) * k].copy_from_slice(&prow);
                    since_refactor += 1;
                    if since_refactor >= REFACTOR_EVERY {
                        since_refactor = 0;
                        if !self.refactor() {
                            return None;
                        }
                    }
                }
            }
        }
        None
    }
}

fn identity(k: usize) -> Vec<f64> {
    let mut m = vec![0.0; k * k];
    for i in 0..k {
        m[i * k + i] = 1.0;
    }
    m
}

/// Gauss-Jordan inverse of a row-major `k x k` matrix with partial pivoting.
fn invert(mut a: Vec<f64>, k: usize) -> Option<Vec<f64>> {
    let mut inv = identity(k);
    let scale = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if k > 0 && scale == 0.0 {
        return None;
    }
    for c in 0..k {
        let p = (c..k).max_by(|&i, &j| a[i * k + c].abs().total_cmp(&a[j * k + c].abs()))?;
        if a[p * k + c].abs() <= 1e-13 * scale {
            return None;
        }
        if p != c {
            for j in 0..k {
                a.swap(p * k + j, c * k + j);
                inv.swap(p * k + j, c * k + j);
            }
        }
        let d = a[c * k + c];
        for j in 0..k {
            a[c * k + j] /= d;
            inv[c * k + j] /= d;
        }
        for r in 0..k {
            if r == c {
                continue;
            }
            let f = a[r * k + c];
            if f != 0.0 {
                for j in 0..k {
                    a[r * k + j] -= f * a[c * k + j];
                    inv[r * k + j] -= f * inv[c * k + j];
                }
            }
        }
    }
    Some(inv)
}
