//! Dense two-phase simplex for small linear programs
//! `min c^T x  s.t.  rows (<=, >=, =) rhs,  x >= 0`.
//!
//! Problems solved here have a handful of rows and variables (the sign
//! certificate LP of the l1 selection step), so a full tableau with Bland's
//! rule is adequate and never cycles.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Clone, Debug, Default)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

const PIVOT_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 50_000;

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        Self {
            objective,
            constraints: Vec::new(),
        }
    }

    pub fn add(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) -> &mut Self {
        debug_assert_eq!(coeffs.len(), self.objective.len());
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
        self
    }

    pub fn solve(&self) -> Result<LpSolution> {
        Tableau::build(self).run(&self.objective)
    }
}

struct Tableau {
    /// rows x (cols + 1); last column is the right-hand side.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    n_orig: usize,
    n_cols: usize,
    artificial_start: usize,
    pivots: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let n = lp.objective.len();
        let rows: Vec<(Vec<f64>, Relation, f64)> = lp
            .constraints
            .iter()
            .map(|c| {
                if c.rhs < 0.0 {
                    let flipped = match c.relation {
                        Relation::Le => Relation::Ge,
                        Relation::Ge => Relation::Le,
                        Relation::Eq => Relation::Eq,
                    };
                    (c.coeffs.iter().map(|v| -v).collect(), flipped, -c.rhs)
                } else {
                    (c.coeffs.clone(), c.relation, c.rhs)
                }
            })
            .collect();
        let n_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
        let n_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
        let artificial_start = n + n_slack;
        let n_cols = artificial_start + n_art;

        let mut t = Vec::with_capacity(rows.len());
        let mut basis = Vec::with_capacity(rows.len());
        let (mut slack, mut art) = (n, artificial_start);
        for (coeffs, rel, rhs) in rows {
            let mut row = vec![0.0; n_cols + 1];
            row[..n].copy_from_slice(&coeffs);
            row[n_cols] = rhs;
            match rel {
                Relation::Le => {
                    row[slack] = 1.0;
                    basis.push(slack);
                    slack += 1;
                }
                Relation::Ge => {
                    row[slack] = -1.0;
                    slack += 1;
                    row[art] = 1.0;
                    basis.push(art);
                    art += 1;
                }
                Relation::Eq => {
                    row[art] = 1.0;
                    basis.push(art);
                    art += 1;
                }
            }
            t.push(row);
        }
        Self {
            t,
            basis,
            n_orig: n,
            n_cols,
            artificial_start,
            pivots: 0,
        }
    }

    fn run(mut self, objective: &[f64]) -> Result<LpSolution> {
        if self.artificial_start < self.n_cols {
            let mut phase1 = vec![0.0; self.n_cols];
            phase1[self.artificial_start..].iter_mut().for_each(|c| *c = 1.0);
            let value = self.optimize(&phase1, self.n_cols)?;
            let scale = 1.0 + self.t.iter().map(|r| r[self.n_cols].abs()).fold(0.0, f64::max);
            if value > FEAS_TOL * scale {
                return Err(Error::LpInfeasible);
            }
            self.drive_out_artificials();
        }
        let mut phase2 = vec![0.0; self.n_cols];
        phase2[..self.n_orig].copy_from_slice(objective);
        self.optimize(&phase2, self.artificial_start)?;

        let mut x = vec![0.0; self.n_orig];
        for (r, &b) in self.basis.iter().enumerate() {
            if b < self.n_orig {
                x[b] = self.t[r][self.n_cols].max(0.0);
            }
        }
        let objective_value = x.iter().zip(objective).map(|(a, b)| a * b).sum();
        Ok(LpSolution {
            x,
            objective: objective_value,
            pivots: self.pivots,
        })
    }

    /// Minimizes `cost` over columns `< allowed`, returns the optimal value.
    fn optimize(&mut self, cost: &[f64], allowed: usize) -> Result<f64> {
        loop {
            // Reduced costs: c_j - c_B^T B^{-1} A_j.
            let entering = (0..allowed).find(|&j| {
                if self.basis.contains(&j) {
                    return false;
                }
                let mut rc = cost[j];
                for (r, &b) in self.basis.iter().enumerate() {
                    rc -= cost[b] * self.t[r][j];
                }
                rc < -PIVOT_TOL
            });
            let Some(e) = entering else {
                let mut value = 0.0;
                for (r, &b) in self.basis.iter().enumerate() {
                    value += cost[b] * self.t[r][self.n_cols];
                }
                return Ok(value);
            };
            // Ratio test, Bland's rule on ties.
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.t.len() {
                let a = self.t[r][e];
                if a > PIVOT_TOL {
                    let ratio = self.t[r][self.n_cols] / a;
                    match leave {
                        None => leave = Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio - 1e-14
                                || (ratio <= lratio + 1e-14 && self.basis[r] < self.basis[lr])
                            {
                                leave = Some((r, ratio));
                            }
                        }
                    }
                }
            }
            let Some((l, _)) = leave else {
                return Err(Error::LpUnbounded);
            };
            self.pivot(l, e);
            if self.pivots > MAX_PIVOTS {
                return Err(Error::LpInfeasible);
            }
        }
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.t[row][col];
        self.t[row].iter_mut().for_each(|v| *v /= p);
        let pivot_row = self.t[row].clone();
        for (r, other) in self.t.iter_mut().enumerate() {
            if r == row {
                continue;
            }
            let f = other[col];
            if f != 0.0 {
                for (v, pv) in other.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
        self.basis[row] = col;
        self.pivots += 1;
    }

    fn drive_out_artificials(&mut self) {
        let mut r = 0;
        while r < self.t.len() {
            if self.basis[r] >= self.artificial_start {
                let col = (0..self.artificial_start).find(|&j| self.t[r][j].abs() > PIVOT_TOL);
                match col {
                    Some(c) => self.pivot(r, c),
                    None => {
                        // Redundant row.
                        self.t.remove(r);
                        self.basis.remove(r);
                        continue;
                    }
                }
            }
            r += 1;
        }
    }
}
