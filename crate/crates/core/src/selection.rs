//! Anchor selection: exterior-point choice, the sign certificate for the l1
//! residual, and the normalized selection criteria
//! `argmax_j w^T X_j / p^T X_j` for the l1 and Bregman losses.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::divergence::{BregmanGenerator, DivergenceSpec};
use crate::error::{Error, Result};
use crate::lp::{LinearProgram, Relation};
use crate::matrix::{dot, l1, l2, mat_t_vec, mat_vec, DenseMatrix, PositiveVector};

/// A column is exterior when `|R_i|_1 > EXTERIOR_REL_TOL * |X_i|_1`.
pub const EXTERIOR_REL_TOL: f64 = 1e-6;
/// Criterion values within this fraction of the criterion's spread (the
/// smaller of `|max|` and `max - min` over eligible columns) of the maximum
/// are tied. With `p` within `1e-5` of the all-ones vector the first
/// criterion varies by about `1e-5` relative across columns, so a tolerance
/// relative to `|max|` alone would tie genuinely distinct columns.
pub const TIE_REL_TOL: f64 = 1e-9;
/// Lower bound standing in for the strict inequalities of the sign LP.
pub const STRICT_EPS: f64 = 1e-9;
/// Residual entries at most this times `max(1, |X_i|_inf)` form the zero set.
pub const ZERO_REL_TOL: f64 = 1e-10;
/// Coefficients above this times `max(1, |H_i|_inf)` count as active.
pub const ACTIVE_REL_TOL: f64 = 1e-12;
/// Two columns with `|cos| > 1 - COLLINEAR_TOL` are treated as the same ray.
pub const COLLINEAR_TOL: f64 = 1e-12;

const LEMMA_31_REL_TOL: f64 = 1e-8;
const LEMMA_32_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExteriorMode {
    /// Any exterior column, uniformly at random.
    Rand,
    /// The column with the largest residual.
    Max,
}

impl fmt::Display for ExteriorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExteriorMode::Rand => "rand",
            ExteriorMode::Max => "max",
        })
    }
}

impl FromStr for ExteriorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rand" => Ok(ExteriorMode::Rand),
            "max" => Ok(ExteriorMode::Max),
            other => Err(Error::InvalidArgument(format!(
                "unknown exterior mode {other:?} (expected max or rand)"
            ))),
        }
    }
}

/// Residual columns that are exterior to the current cone.
pub fn exterior_candidates(residual: &DenseMatrix, data_norms: &[f64]) -> Vec<usize> {
    residual
        .columns()
        .zip(data_norms)
        .enumerate()
        .filter(|(_, (r, &xn))| {
            let rn = l1(r);
            rn > 0.0 && rn > EXTERIOR_REL_TOL * xn
        })
        .map(|(j, _)| j)
        .collect()
}

/// Picks an exterior column by residual l1 norm, or `None` when every
/// column is interior. `data_norms` holds `|X_j|_1` and sets the relative
/// interior threshold.
pub fn select_exterior<R: Rng + ?Sized>(
    residual: &DenseMatrix,
    data_norms: &[f64],
    mode: ExteriorMode,
    rng: &mut R,
) -> Option<usize> {
    let scores: Vec<f64> = residual.columns().map(l1).collect();
    pick_exterior(&exterior_candidates(residual, data_norms), &scores, mode, rng)
}

/// Chooses among `candidates` by the largest `score` (lowest index on ties)
/// or uniformly at random.
pub(crate) fn pick_exterior<R: Rng + ?Sized>(
    candidates: &[usize],
    scores: &[f64],
    mode: ExteriorMode,
    rng: &mut R,
) -> Option<usize> {
    if candidates.is_empty() {
        return None;
    }
    match mode {
        ExteriorMode::Max => candidates
            .iter()
            .copied()
            .fold(None, |best: Option<usize>, j| match best {
                Some(b) if scores[b] >= scores[j] => Some(b),
                _ => Some(j),
            }),
        ExteriorMode::Rand => Some(candidates[rng.random_range(0..candidates.len())]),
    }
}

/// The column `D_i*` of the l1 subgradient certificate together with the
/// checks of the two sign lemmas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignMatrixChoice {
    pub d_star: Vec<f64>,
    /// Rows where the residual vanishes; `d_star` is free in `[-1, 1]` there.
    pub zero_set: Vec<usize>,
    pub used_lp_fallback: bool,
    /// The strict inequalities had to be relaxed to `Lambda >= 0`.
    pub lp_relaxed: bool,
    /// `max_l (D*^T X_A)_l`, which must be `<= 0`.
    pub lemma31_max: f64,
    /// `|d*^T X_i - |R_i|_1|`, which must vanish.
    pub lemma32_gap: f64,
}

impl SignMatrixChoice {
    pub fn lemma31_holds(&self, tol: f64) -> bool {
        self.lemma31_max <= tol
    }

    pub fn lemma32_holds(&self, tol: f64) -> bool {
        self.lemma32_gap <= tol
    }
}

fn sign_choice_checks(d: &[f64], r_i: &[f64], x_a: &DenseMatrix, x_i: &[f64]) -> (f64, f64, bool) {
    let dt_xa = mat_t_vec(x_a, d);
    let mut lemma31_max = f64::NEG_INFINITY;
    let mut lemma31_ok = true;
    for (l, &v) in dt_xa.iter().enumerate() {
        lemma31_max = lemma31_max.max(v);
        if v > LEMMA_31_REL_TOL * l1(x_a.col(l)) {
            lemma31_ok = false;
        }
    }
    if x_a.cols() == 0 {
        lemma31_max = 0.0;
    }
    let gap = (dot(d, x_i) - l1(r_i)).abs();
    (lemma31_max, gap, lemma31_ok && gap <= LEMMA_32_TOL)
}

struct SignParts {
    fixed: Vec<f64>,
    zero_set: Vec<usize>,
    x_i: Vec<f64>,
}

impl SignParts {
    fn new(r_i: &[f64], h_i: &[f64], x_a: &DenseMatrix) -> Result<Self> {
        if x_a.rows() != r_i.len() || x_a.cols() != h_i.len() {
            return Err(Error::ShapeMismatch {
                expected: (r_i.len(), h_i.len()),
                found: x_a.shape(),
            });
        }
        let mut x_i = if x_a.cols() == 0 {
            vec![0.0; r_i.len()]
        } else {
            mat_vec(x_a, h_i)
        };
        for (xv, rv) in x_i.iter_mut().zip(r_i) {
            *xv += rv;
        }
        let scale = x_i.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
        let zero_tol = ZERO_REL_TOL * scale;
        let zero_set = (0..r_i.len()).filter(|&t| r_i[t].abs() <= zero_tol).collect();
        let fixed = r_i
            .iter()
            .map(|&v| if v.abs() <= zero_tol { 0.0 } else { v.signum() })
            .collect();
        Ok(Self { fixed, zero_set, x_i })
    }

    /// `u = -1` on the zero set, and whether both lemmas hold for it.
    fn default_choice(&self, r_i: &[f64], x_a: &DenseMatrix) -> (SignMatrixChoice, bool) {
        let mut d = self.fixed.clone();
        for &t in &self.zero_set {
            d[t] = -1.0;
        }
        let (lemma31_max, lemma32_gap, ok) = sign_choice_checks(&d, r_i, x_a, &self.x_i);
        (
            SignMatrixChoice {
                d_star: d,
                zero_set: self.zero_set.clone(),
                used_lp_fallback: false,
                lp_relaxed: false,
                lemma31_max,
                lemma32_gap,
            },
            ok,
        )
    }
}

/// The `u = -1` certificate without validation or fallback.
pub(crate) fn default_sign_choice(r_i: &[f64], h_i: &[f64], x_a: &DenseMatrix) -> Result<SignMatrixChoice> {
    Ok(SignParts::new(r_i, h_i, x_a)?.default_choice(r_i, x_a).0)
}

/// Builds `D_i*` from the residual `r_i` and coefficients `h_i` of an exterior
/// column: `sign(r_i)` off the zero set and `-1` on it. If that violates
/// either sign lemma, the free entries are chosen by [`lp_feasibility`].
///
/// Returns `LpInfeasible` when no certificate exists at the achieved
/// accuracy, which means the projection should be tightened.
pub fn build_sign_choice(r_i: &[f64], h_i: &[f64], x_a: &DenseMatrix) -> Result<SignMatrixChoice> {
    let parts = SignParts::new(r_i, h_i, x_a)?;
    let (choice, ok) = parts.default_choice(r_i, x_a);
    if ok {
        return Ok(choice);
    }
    let SignParts { fixed, zero_set, x_i } = parts;

    let hmax = h_i.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let active: Vec<usize> = (0..h_i.len()).filter(|&l| h_i[l] > ACTIVE_REL_TOL * hmax).collect();
    let inactive: Vec<usize> = (0..h_i.len()).filter(|&l| h_i[l] <= ACTIVE_REL_TOL * hmax).collect();

    let (u, lp_relaxed) = match lp_feasibility(&zero_set, &fixed, x_a, &active, &inactive, STRICT_EPS) {
        Ok(u) => (u, false),
        Err(Error::LpInfeasible) => (
            lp_feasibility(&zero_set, &fixed, x_a, &active, &inactive, 0.0)?,
            true,
        ),
        Err(e) => return Err(e),
    };
    let mut d = fixed;
    for (&t, &ut) in zero_set.iter().zip(&u) {
        d[t] = ut;
    }
    let (lemma31_max, lemma32_gap, _) = sign_choice_checks(&d, r_i, x_a, &x_i);
    Ok(SignMatrixChoice {
        d_star: d,
        zero_set,
        used_lp_fallback: true,
        lp_relaxed,
        lemma31_max,
        lemma32_gap,
    })
}

/// Solves `min sum(u)` over `u in [-1, 1]^|I|` such that, with `d = fixed`
/// off `I` and `d = u` on `I`, `Lambda = -X_A^T d` satisfies
/// `Lambda_l = 0` for `l` in `active` and `Lambda_l >= strict_eps` for `l`
/// in `inactive`.
pub fn lp_feasibility(
    zero_set: &[usize],
    fixed: &[f64],
    x_a: &DenseMatrix,
    active: &[usize],
    inactive: &[usize],
    strict_eps: f64,
) -> Result<Vec<f64>> {
    let q = zero_set.len();
    let base: Vec<f64> = mat_t_vec(x_a, fixed);

    if q == 0 {
        let ok_active = active.iter().all(|&l| base[l].abs() <= LEMMA_31_REL_TOL * l1(x_a.col(l)).max(1.0));
        let ok_inactive = inactive.iter().all(|&l| -base[l] >= strict_eps);
        return if ok_active && ok_inactive {
            Ok(Vec::new())
        } else {
            Err(Error::LpInfeasible)
        };
    }

    // Substitute v = u + 1 in [0, 2] so the simplex sees v >= 0.
    let mut lp = LinearProgram::new(vec![1.0; q]);
    let row_coeffs = |l: usize| -> (Vec<f64>, f64) {
        let col = x_a.col(l);
        let coeffs: Vec<f64> = zero_set.iter().map(|&t| col[t]).collect();
        let shift: f64 = coeffs.iter().sum();
        (coeffs, shift)
    };
    for &l in active {
        // base_l + sum (v_t - 1) a_tl = 0
        let (coeffs, shift) = row_coeffs(l);
        lp.add(coeffs, Relation::Eq, shift - base[l]);
    }
    for &l in inactive {
        // -(base_l + sum (v_t - 1) a_tl) >= strict_eps
        let (coeffs, shift) = row_coeffs(l);
        lp.add(coeffs, Relation::Le, shift - base[l] - strict_eps);
    }
    for t in 0..q {
        let mut e = vec![0.0; q];
        e[t] = 1.0;
        lp.add(e, Relation::Le, 2.0);
    }
    let sol = lp.solve()?;
    Ok(sol.x.iter().map(|v| (v - 1.0).clamp(-1.0, 1.0)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    /// Indices to add: one, or two on a two-way tie, or the anchors of the
    /// tied subset after recursion.
    pub chosen: Vec<usize>,
    /// Every index whose criterion is within the tie tolerance of the maximum.
    pub tied: Vec<usize>,
    /// Criterion per column; `None` for excluded columns.
    pub criterion_values: Vec<Option<f64>>,
    pub exterior_index: usize,
}

impl SelectionOutcome {
    pub fn max_criterion(&self) -> f64 {
        self.tied
            .first()
            .and_then(|&j| self.criterion_values[j])
            .unwrap_or(f64::NAN)
    }
}

/// Cosine of the angle between two vectors; zero if either vanishes.
pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (l2(a), l2(b));
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

pub(crate) fn collinear(a: &[f64], b: &[f64]) -> bool {
    cosine(a, b).abs() > 1.0 - COLLINEAR_TOL
}

/// Columns eligible for selection: non-zero, not yet selected, and not on
/// the ray of a selected anchor.
pub fn candidate_mask(x: &DenseMatrix, anchors: &[usize]) -> Vec<bool> {
    (0..x.cols())
        .map(|j| {
            let c = x.col(j);
            !anchors.contains(&j) && l1(c) > 0.0 && !anchors.iter().any(|&a| cosine(c, x.col(a)) > 1.0 - COLLINEAR_TOL)
        })
        .collect()
}

/// `argmax_j w^T X_j / p^T X_j` over eligible columns with relative ties.
pub fn select_by_criterion(
    x: &DenseMatrix,
    w: &[f64],
    p: &PositiveVector,
    anchors: &[usize],
    exterior_index: usize,
) -> Result<SelectionOutcome> {
    if w.len() != x.rows() || p.len() != x.rows() {
        return Err(Error::ShapeMismatch {
            expected: (x.rows(), 1),
            found: (w.len(), p.len()),
        });
    }
    let mask = candidate_mask(x, anchors);
    let criterion_values: Vec<Option<f64>> = x
        .columns()
        .zip(&mask)
        .map(|(c, &ok)| ok.then(|| dot(w, c) / dot(p.values(), c)))
        .collect();
    let best = criterion_values
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if !best.is_finite() {
        return Err(Error::AllColumnsZero);
    }
    let worst = criterion_values.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let spread = (best - worst).min(best.abs());
    // Floor at the rounding error of two length-m dot products, so scaled
    // duplicates always tie.
    let rounding = 4.0 * x.rows() as f64 * f64::EPSILON * best.abs();
    let slack = (TIE_REL_TOL * spread).max(rounding);
    let tied: Vec<usize> = criterion_values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_some_and(|v| v >= best - slack))
        .map(|(j, _)| j)
        .collect();
    let chosen = if tied.len() <= 2 { tied.clone() } else { Vec::new() };
    for &j in &tied {
        assert!(!anchors.contains(&j), "selected index {j} is already an anchor");
    }
    Ok(SelectionOutcome {
        chosen,
        tied,
        criterion_values,
        exterior_index,
    })
}

/// The l1 criterion `D_i*^T X_j / p^T X_j`.
pub fn select_anchor_l1(
    x: &DenseMatrix,
    d_star: &[f64],
    p: &PositiveVector,
    anchors: &[usize],
    exterior_index: usize,
) -> Result<SelectionOutcome> {
    select_by_criterion(x, d_star, p, anchors, exterior_index)
}

/// `phi''(X_A H_i) . R_i` where `fitted = X_A H_i`.
pub fn bregman_criterion_vector(spec: &DivergenceSpec, fitted: &[f64], r_i: &[f64]) -> Vec<f64> {
    fitted
        .iter()
        .zip(r_i)
        .map(|(&y, &r)| spec.phi_second_derivative(y) * r)
        .collect()
}

/// `phi'(X_i) - phi'(X_A H_i)`.
pub fn bregman_reverse_criterion_vector(spec: &DivergenceSpec, x_i: &[f64], fitted: &[f64]) -> Vec<f64> {
    x_i.iter()
        .zip(fitted)
        .map(|(&x, &y)| spec.phi_prime(x) - spec.phi_prime(y))
        .collect()
}

/// Criterion `(phi''(X_A H_i) . R_i)^T X_j / p^T X_j` for exterior column `i`
/// with coefficients `h_i` (empty when no anchor has been chosen).
pub fn select_anchor_bregman(
    spec: &DivergenceSpec,
    x: &DenseMatrix,
    x_a: &DenseMatrix,
    h_i: &[f64],
    i: usize,
    p: &PositiveVector,
    anchors: &[usize],
) -> Result<SelectionOutcome> {
    let fitted = fitted_column(x_a, h_i, x.rows());
    let r_i: Vec<f64> = x.col(i).iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let w = bregman_criterion_vector(spec, &fitted, &r_i);
    select_by_criterion(x, &w, p, anchors, i)
}

/// Criterion `(phi'(X_i) - phi'(X_A H_i))^T X_j / p^T X_j`, paired with the
/// reverse projection.
pub fn select_anchor_bregman_reverse(
    spec: &DivergenceSpec,
    x: &DenseMatrix,
    x_a: &DenseMatrix,
    h_i: &[f64],
    i: usize,
    p: &PositiveVector,
    anchors: &[usize],
) -> Result<SelectionOutcome> {
    let fitted = fitted_column(x_a, h_i, x.rows());
    let w = bregman_reverse_criterion_vector(spec, x.col(i), &fitted);
    select_by_criterion(x, &w, p, anchors, i)
}

fn fitted_column(x_a: &DenseMatrix, h_i: &[f64], m: usize) -> Vec<f64> {
    if x_a.cols() == 0 {
        vec![0.0; m]
    } else {
        mat_vec(x_a, h_i)
    }
}

/// Keeps the lowest index of each group of collinear columns.
pub(crate) fn dedupe_rays(x: &DenseMatrix, idx: &[usize]) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for &j in idx {
        if !kept.iter().any(|&k| collinear(x.col(j), x.col(k))) {
            kept.push(j);
        }
    }
    kept
}
