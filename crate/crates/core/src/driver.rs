//! The cone-expansion loop: pick an exterior column, choose the anchor that
//! maximizes the selection criterion, re-project, repeat until `r` anchors
//! are found or every column is inside the cone.

use std::fmt;
use std::str::FromStr;

use log::{debug, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::divergence::{DivergenceKind, DivergenceSpec};
use crate::error::{Error, Result};
use crate::matrix::{column_l1_norms, l1, make_p, mat_vec, DenseMatrix, PositiveVector};
use crate::projection::{
    bregman_projection_from, nnlad_admm_from, nnlad_single, BregmanColumn, Orientation, ProjectionResult,
    SolverOptions,
};
use crate::selection::{
    bregman_criterion_vector, bregman_reverse_criterion_vector, build_sign_choice, cosine, dedupe_rays,
    default_sign_choice, exterior_candidates, pick_exterior, select_by_criterion, ExteriorMode, SelectionOutcome,
    SignMatrixChoice, COLLINEAR_TOL,
};

/// Maximum nesting of tie-resolution runs.
pub const MAX_TIE_DEPTH: usize = 8;
/// Redraws of the normalization vector when it lines up with the criterion.
pub const MAX_P_RESAMPLES: u64 = 16;
/// Tolerance for the sign lemmas before a projection is redone.
pub const LEMMA_TOL: f64 = 1e-6;

const EXTERIOR_STREAM: u64 = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "divergence", rename_all = "snake_case")]
pub enum Loss {
    /// `|X - X_A H|_1`.
    L1,
    /// `D_phi(X, X_A H)`.
    Bregman(DivergenceSpec),
    /// `D_phi(X_A H, X)`.
    BregmanReverse(DivergenceSpec),
}

impl Loss {
    /// The squared-loss driver, written as a Bregman loss with `phi(x) = x^2`.
    pub fn l2() -> Self {
        Loss::Bregman(DivergenceSpec::squared_euclidean())
    }

    /// Loss of one column against its fit.
    pub fn column_objective(&self, x: &[f64], fitted: &[f64]) -> f64 {
        match self {
            Loss::L1 => x.iter().zip(fitted).map(|(a, b)| (a - b).abs()).sum(),
            Loss::Bregman(s) => s.vector_divergence(x, fitted),
            Loss::BregmanReverse(s) => s.vector_divergence(fitted, x),
        }
    }

    /// Total loss of `X` against `W H`.
    pub fn objective(&self, x: &DenseMatrix, w: &DenseMatrix, h: &DenseMatrix) -> Result<f64> {
        let fit = w.matmul(h)?;
        Ok(x.columns().zip(fit.columns()).map(|(a, b)| self.column_objective(a, b)).sum())
    }

    /// `min_{B >= 0} loss(X, X_A B)`, optionally warm-started.
    pub fn project(
        &self,
        x_a: &DenseMatrix,
        x: &DenseMatrix,
        opts: &SolverOptions,
        init: Option<&DenseMatrix>,
    ) -> Result<ProjectionResult> {
        match self {
            Loss::L1 => nnlad_admm_from(x_a, x, opts, init),
            Loss::Bregman(s) => bregman_projection_from(s, Orientation::Forward, x_a, x, opts, init),
            Loss::BregmanReverse(s) => bregman_projection_from(s, Orientation::Reverse, x_a, x, opts, init),
        }
    }
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Loss::L1 => f.write_str("l1"),
            Loss::Bregman(s) => write!(f, "{}", s.kind),
            Loss::BregmanReverse(s) => write!(f, "{}-reverse", s.kind),
        }
    }
}

impl FromStr for Loss {
    type Err = Error;

    /// Accepts `l1`, `l2`, `kl`, `is`, and the reverse forms `kl-reverse` etc.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        if lower == "l1" {
            return Ok(Loss::L1);
        }
        if let Some(base) = lower.strip_suffix("-reverse") {
            return Ok(Loss::BregmanReverse(DivergenceSpec::new(base.parse::<DivergenceKind>()?)));
        }
        lower
            .parse::<DivergenceKind>()
            .map(|k| Loss::Bregman(DivergenceSpec::new(k)))
            .map_err(|_| Error::InvalidArgument(format!("unknown loss {s:?} (expected l1, l2, kl or is)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub r: usize,
    pub loss: Loss,
    pub exterior_mode: ExteriorMode,
    pub seed: u64,
    pub solver: SolverOptions,
}

impl RunConfig {
    pub fn new(r: usize, loss: Loss) -> Self {
        Self {
            r,
            loss,
            exterior_mode: ExteriorMode::Max,
            seed: 0,
            solver: SolverOptions::default(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_exterior(mut self, mode: ExteriorMode) -> Self {
        self.exterior_mode = mode;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorEntry {
    /// Column index into `X`.
    pub index: usize,
    /// Iteration of the loop that added it (0-based).
    pub iteration: usize,
    /// Size of the tie it came from (1 when unique).
    pub tie_size: usize,
}

/// Ordered list of selected columns.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub entries: Vec<AnchorEntry>,
}

impl AnchorSet {
    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.index).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.entries.iter().any(|e| e.index == j)
    }
}

/// Checks of the l1 sign certificate used in one iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignDiagnostics {
    pub zero_set_size: usize,
    pub used_lp_fallback: bool,
    pub lp_relaxed: bool,
    /// The exterior column was re-projected with tighter tolerances.
    pub reprojected: bool,
    /// No valid certificate was found; the default signs were used.
    pub unresolved: bool,
    pub lemma31_max: f64,
    pub lemma32_gap: f64,
    /// The projection the certificate was built from met its stopping rule.
    pub projection_converged: bool,
}

/// Optimality checks of the Bregman projection used in one iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BregmanDiagnostics {
    /// Largest entry of the negated projection gradient over all columns and
    /// anchors; non-positive at an exact optimum.
    pub kkt_max: f64,
    /// `w^T X_i` for the criterion vector `w` of the exterior column.
    pub exterior_margin: f64,
    pub projection_converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub exterior_index: usize,
    pub chosen: Vec<usize>,
    pub tied: Vec<usize>,
    pub criterion_max: f64,
    pub p_resamples: u64,
    pub sign: Option<SignDiagnostics>,
    pub bregman: Option<BregmanDiagnostics>,
    /// Loss after projecting onto the enlarged cone.
    pub objective: f64,
    pub projection_iterations: usize,
    pub projection_converged: bool,
    /// Columns whose new loss exceeded the previous one and were reset.
    pub monotone_resets: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Factorization {
    pub anchors: AnchorSet,
    /// Coefficients, `|anchors| x n`; the left factor is `X_A`.
    pub h: DenseMatrix,
    pub residual: DenseMatrix,
    pub objective: f64,
    pub column_objectives: Vec<f64>,
    /// Loss before any anchor and after each iteration.
    pub residual_norm_trace: Vec<f64>,
    pub iterations: Vec<IterationRecord>,
    pub warnings: Vec<String>,
    /// Every column became interior before `r` anchors were found.
    pub stopped_early: bool,
    /// Seed of the normalization vector actually used.
    pub p_seed: u64,
}

impl Factorization {
    /// The left factor `W = X_A`.
    pub fn w(&self, x: &DenseMatrix) -> DenseMatrix {
        x.select_columns(&self.anchors.indices())
    }
}

/// Robust separable NMF with l1 loss.
pub fn robust_xray(x: &DenseMatrix, cfg: &RunConfig) -> Result<Factorization> {
    if cfg.loss != Loss::L1 {
        return Err(Error::InvalidArgument(format!("robust_xray needs the l1 loss, got {}", cfg.loss)));
    }
    run(x, cfg)
}

/// Separable NMF with a Bregman loss, in either argument order.
pub fn bregman_xray(x: &DenseMatrix, cfg: &RunConfig) -> Result<Factorization> {
    if cfg.loss == Loss::L1 {
        return Err(Error::InvalidArgument("bregman_xray needs a Bregman loss".into()));
    }
    run(x, cfg)
}

/// Dispatches on the configured loss.
pub fn run(x: &DenseMatrix, cfg: &RunConfig) -> Result<Factorization> {
    validate(x, cfg)?;
    let p = make_p(x.rows(), cfg.seed);
    Driver::new(x, cfg, p, 0).run()
}

fn validate(x: &DenseMatrix, cfg: &RunConfig) -> Result<()> {
    if cfg.r == 0 || cfg.r > x.cols() {
        return Err(Error::InvalidArgument(format!(
            "rank must be between 1 and the number of columns ({}), got {}",
            x.cols(),
            cfg.r
        )));
    }
    if x.rows() == 0 {
        return Err(Error::InvalidArgument("data matrix has no rows".into()));
    }
    if let Some(pos) = x.as_slice().iter().position(|&v| v < 0.0) {
        return Err(Error::Negative {
            row: pos % x.rows(),
            col: pos / x.rows(),
            value: x.as_slice()[pos],
        });
    }
    cfg.solver.validate()
}

struct Driver<'a> {
    x: &'a DenseMatrix,
    cfg: &'a RunConfig,
    p: PositiveVector,
    depth: usize,
    data_norms: Vec<f64>,
    rng: ChaCha8Rng,
    anchors: AnchorSet,
    h: DenseMatrix,
    residual: DenseMatrix,
    column_objectives: Vec<f64>,
    projection_converged: bool,
    warnings: Vec<String>,
}

impl<'a> Driver<'a> {
    fn new(x: &'a DenseMatrix, cfg: &'a RunConfig, p: PositiveVector, depth: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(EXTERIOR_STREAM);
        let zero = vec![0.0; x.rows()];
        let column_objectives = x.columns().map(|c| cfg.loss.column_objective(c, &zero)).collect();
        Self {
            x,
            cfg,
            p,
            depth,
            data_norms: column_l1_norms(x),
            rng,
            anchors: AnchorSet::default(),
            h: DenseMatrix::zeros(0, x.cols()),
            residual: x.clone(),
            column_objectives,
            projection_converged: true,
            warnings: Vec::new(),
        }
    }

    fn x_a(&self) -> DenseMatrix {
        self.x.select_columns(&self.anchors.indices())
    }

    fn total_objective(&self) -> f64 {
        self.column_objectives.iter().sum()
    }

    fn fitted(&self, x_a: &DenseMatrix, j: usize) -> Vec<f64> {
        if x_a.cols() == 0 {
            vec![0.0; self.x.rows()]
        } else {
            mat_vec(x_a, self.h.col(j))
        }
    }

    fn run(mut self) -> Result<Factorization> {
        let mut trace = vec![self.total_objective()];
        let mut records = Vec::new();
        let mut stopped_early = false;
        let mut iteration = 0;

        while self.anchors.len() < self.cfg.r {
            let x_a = self.x_a();
            let candidates = exterior_candidates(&self.residual, &self.data_norms);
            let scores: Vec<f64> = match self.cfg.loss {
                Loss::L1 => self.residual.columns().map(l1).collect(),
                _ => self.column_objectives.clone(),
            };
            let Some(i) = pick_exterior(&candidates, &scores, self.cfg.exterior_mode, &mut self.rng) else {
                stopped_early = true;
                if self.depth == 0 {
                    let msg = format!(
                        "all columns are inside the cone after {} of {} anchors",
                        self.anchors.len(),
                        self.cfg.r
                    );
                    warn!("{msg}");
                    self.warnings.push(msg);
                }
                break;
            };

            let (w, sign, bregman) = self.criterion_vector(&x_a, i)?;
            let p_resamples = self.ensure_not_collinear(&w);
            let anchor_idx = self.anchors.indices();
            let mut outcome = select_by_criterion(self.x, &w, &self.p, &anchor_idx, i)?;
            self.resolve(&mut outcome)?;
            let room = self.cfg.r - self.anchors.len();
            if outcome.chosen.len() > room {
                let msg = format!(
                    "tie of {} columns truncated to the {} remaining anchor slots",
                    outcome.chosen.len(),
                    room
                );
                debug!("{msg}");
                self.warnings.push(msg);
                outcome.chosen.truncate(room);
            }
            let tie_size = outcome.tied.len();
            for &j in &outcome.chosen {
                assert!(!self.anchors.contains(j), "column {j} selected twice");
                self.anchors.entries.push(AnchorEntry {
                    index: j,
                    iteration,
                    tie_size,
                });
            }

            let (proj_iters, resets) = self.project()?;
            trace.push(self.total_objective());
            records.push(IterationRecord {
                iteration,
                exterior_index: i,
                chosen: outcome.chosen.clone(),
                tied: outcome.tied.clone(),
                criterion_max: outcome.max_criterion(),
                p_resamples,
                sign,
                bregman,
                objective: self.total_objective(),
                projection_iterations: proj_iters,
                projection_converged: self.projection_converged,
                monotone_resets: resets,
            });
            iteration += 1;
        }

        Ok(Factorization {
            objective: self.total_objective(),
            anchors: self.anchors,
            h: self.h,
            residual: self.residual,
            column_objectives: self.column_objectives,
            residual_norm_trace: trace,
            iterations: records,
            warnings: self.warnings,
            stopped_early,
            p_seed: self.p.seed(),
        })
    }

    /// The vector `w` of the criterion `w^T X_j / p^T X_j` for exterior `i`.
    #[allow(clippy::type_complexity)]
    fn criterion_vector(
        &mut self,
        x_a: &DenseMatrix,
        i: usize,
    ) -> Result<(Vec<f64>, Option<SignDiagnostics>, Option<BregmanDiagnostics>)> {
        match self.cfg.loss {
            Loss::L1 => {
                let (choice, diag) = self.sign_choice(x_a, i)?;
                Ok((choice.d_star, Some(diag), None))
            }
            Loss::Bregman(spec) | Loss::BregmanReverse(spec) => {
                let fitted = self.fitted(x_a, i);
                let w = if matches!(self.cfg.loss, Loss::Bregman(_)) {
                    bregman_criterion_vector(&spec, &fitted, self.residual.col(i))
                } else {
                    bregman_reverse_criterion_vector(&spec, self.x.col(i), &fitted)
                };
                let exterior_margin = w.iter().zip(self.x.col(i)).map(|(a, b)| a * b).sum();
                let kkt_max = self.bregman_kkt_max(&spec, x_a);
                Ok((
                    w,
                    None,
                    Some(BregmanDiagnostics {
                        kkt_max,
                        exterior_margin,
                        projection_converged: self.projection_converged,
                    }),
                ))
            }
        }
    }

    fn bregman_kkt_max(&self, spec: &DivergenceSpec, x_a: &DenseMatrix) -> f64 {
        if x_a.cols() == 0 {
            return 0.0;
        }
        let orientation = match self.cfg.loss {
            Loss::BregmanReverse(_) => Orientation::Reverse,
            _ => Orientation::Forward,
        };
        (0..self.x.cols())
            .map(|j| {
                let col = BregmanColumn {
                    spec: *spec,
                    orientation,
                    a: x_a,
                    x: self.x.col(j),
                };
                col.gradient(self.h.col(j)).iter().fold(f64::NEG_INFINITY, |acc, g| acc.max(-g))
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Builds the sign certificate, re-projecting the exterior column with
    /// tighter tolerances if no valid certificate exists at current accuracy.
    fn sign_choice(&mut self, x_a: &DenseMatrix, i: usize) -> Result<(SignMatrixChoice, SignDiagnostics)> {
        let valid = |c: &SignMatrixChoice| c.lemma31_holds(LEMMA_TOL) && c.lemma32_holds(LEMMA_TOL);
        let converged = self.projection_converged;
        let first = build_sign_choice(self.residual.col(i), self.h.col(i), x_a);
        let mut reprojected = false;
        let choice = match first {
            Ok(c) if valid(&c) => Some(c),
            Ok(_) | Err(Error::LpInfeasible) if x_a.cols() > 0 => {
                reprojected = true;
                self.reproject_column(x_a, i)?;
                match build_sign_choice(self.residual.col(i), self.h.col(i), x_a) {
                    Ok(c) if valid(&c) => Some(c),
                    Ok(_) | Err(Error::LpInfeasible) => None,
                    Err(e) => return Err(e),
                }
            }
            Ok(_) | Err(Error::LpInfeasible) => None,
            Err(e) => return Err(e),
        };
        let (choice, unresolved) = match choice {
            Some(c) => (c, false),
            None => {
                let msg = format!("no valid sign certificate for exterior column {i}; using default signs");
                warn!("{msg}");
                self.warnings.push(msg);
                (default_sign_choice(self.residual.col(i), self.h.col(i), x_a)?, true)
            }
        };
        let diag = SignDiagnostics {
            zero_set_size: choice.zero_set.len(),
            used_lp_fallback: choice.used_lp_fallback,
            lp_relaxed: choice.lp_relaxed,
            reprojected,
            unresolved,
            lemma31_max: choice.lemma31_max,
            lemma32_gap: choice.lemma32_gap,
            projection_converged: converged,
        };
        if choice.used_lp_fallback {
            debug!("sign certificate for column {i} came from the LP");
        }
        Ok((choice, diag))
    }

    fn reproject_column(&mut self, x_a: &DenseMatrix, i: usize) -> Result<()> {
        let opts = self.cfg.solver.tightened();
        let (b, obj, _) = nnlad_single(x_a, self.x.col(i), self.h.col(i).to_vec(), &opts)?;
        if obj <= self.column_objectives[i] {
            let fitted = mat_vec(x_a, &b);
            self.h.col_mut(i).copy_from_slice(&b);
            for ((r, &xv), f) in self.residual.col_mut(i).iter_mut().zip(self.x.col(i)).zip(fitted) {
                *r = xv - f;
            }
            self.column_objectives[i] = obj;
        }
        Ok(())
    }

    /// Redraws `p` while it is collinear with the criterion vector.
    fn ensure_not_collinear(&mut self, w: &[f64]) -> u64 {
        let mut attempts = 0;
        while cosine(self.p.values(), w).abs() > 1.0 - COLLINEAR_TOL {
            if attempts == MAX_P_RESAMPLES {
                let msg = "normalization vector stays collinear with the criterion".to_string();
                warn!("{msg}");
                self.warnings.push(msg);
                break;
            }
            attempts += 1;
            self.p = make_p(self.x.rows(), self.p.seed().wrapping_add(1));
        }
        attempts
    }

    /// Replaces ties of more than two columns by the anchors of the tied
    /// subset, found by running the same loop on it.
    fn resolve(&mut self, outcome: &mut SelectionOutcome) -> Result<()> {
        if outcome.tied.len() <= 2 {
            outcome.chosen = outcome.tied.clone();
            return Ok(());
        }
        match resolve_ties(&outcome.tied, self.x, self.cfg, &self.p, self.depth) {
            Ok(chosen) => outcome.chosen = chosen,
            Err(Error::RecursionLimit { limit }) => {
                let lowest = *outcome.tied.iter().min().expect("non-empty tie");
                let msg = format!("tie resolution hit depth {limit}; keeping column {lowest}");
                warn!("{msg}");
                self.warnings.push(msg);
                outcome.chosen = vec![lowest];
            }
            Err(e) => return Err(e),
        }
        Ok(())
    }

    /// Projects every column onto the current cone, warm-started from the
    /// previous coefficients, and keeps per-column losses non-increasing.
    fn project(&mut self) -> Result<(usize, usize)> {
        let x_a = self.x_a();
        let k = x_a.cols();
        let old_k = self.h.rows();
        let mut init = DenseMatrix::zeros(k, self.x.cols());
        for j in 0..self.x.cols() {
            init.col_mut(j)[..old_k].copy_from_slice(self.h.col(j));
        }
        let mut result = self.cfg.loss.project(&x_a, self.x, &self.cfg.solver, Some(&init))?;
        let mut resets = 0;
        for j in 0..self.x.cols() {
            if result.column_objectives[j] > self.column_objectives[j] {
                resets += 1;
                result.h.col_mut(j).copy_from_slice(init.col(j));
                result.residual.col_mut(j).copy_from_slice(self.residual.col(j));
                result.column_objectives[j] = self.column_objectives[j];
            }
        }
        if resets > 0 {
            debug!("{resets} columns kept their previous coefficients");
        }
        self.projection_converged = result.converged;
        self.h = result.h;
        self.residual = result.residual;
        self.column_objectives = result.column_objectives;
        Ok((result.iterations, resets))
    }
}

/// Anchors of the tied columns `tied`: two-way ties return both columns;
/// larger ties are collapsed to distinct rays and the loop is rerun on that
/// subset with the parent's normalization vector.
pub fn resolve_ties(
    tied: &[usize],
    x: &DenseMatrix,
    cfg: &RunConfig,
    p: &PositiveVector,
    depth: usize,
) -> Result<Vec<usize>> {
    if tied.len() < 2 {
        return Err(Error::InvalidArgument("a tie needs at least two columns".into()));
    }
    if tied.len() == 2 {
        return Ok(tied.to_vec());
    }
    let distinct = dedupe_rays(x, tied);
    if distinct.len() <= 2 {
        return Ok(distinct);
    }
    if depth + 1 > MAX_TIE_DEPTH {
        return Err(Error::RecursionLimit { limit: MAX_TIE_DEPTH });
    }
    let sub = x.select_columns(&distinct);
    let sub_cfg = RunConfig {
        r: distinct.len(),
        ..cfg.clone()
    };
    let f = Driver::new(&sub, &sub_cfg, p.clone(), depth + 1).run()?;
    Ok(f.anchors.indices().into_iter().map(|j| distinct[j]).collect())
}

/// Result of alternating refinement of both factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Refit {
    pub w: DenseMatrix,
    pub h: DenseMatrix,
    /// Loss at the start and after each half-step.
    pub objective_trace: Vec<f64>,
}

/// Starts from `W = X_A`, `H = argmin_{B >= 0} loss(X, X_A B)` and then
/// alternates `steps` times between the `W`- and `H`-subproblems.
pub fn refit(x: &DenseMatrix, anchors: &[usize], steps: usize, loss: Loss, opts: &SolverOptions) -> Result<Refit> {
    if anchors.is_empty() {
        return Err(Error::InvalidArgument("refit needs at least one anchor".into()));
    }
    let w = x.select_columns(anchors);
    let h = project_nonzero(&loss, &w, x, opts, None)?;
    refit_from(x, w, h, steps, loss, opts)
}

/// Alternating refinement from a given `(W, H)`. Each half-step keeps the
/// previous factor for any column whose loss would increase, so the trace
/// never goes up.
pub fn refit_from(
    x: &DenseMatrix,
    mut w: DenseMatrix,
    mut h: DenseMatrix,
    steps: usize,
    loss: Loss,
    opts: &SolverOptions,
) -> Result<Refit> {
    let mut trace = vec![loss.objective(x, &w, &h)?];
    let xt = x.transpose();
    for _ in 0..steps {
        // W-step on the transposed problem: X^T ~ H^T W^T.
        let ht = h.transpose();
        let wt = project_nonzero(&loss, &ht, &xt, opts, Some(&w.transpose()))?;
        let candidate = wt.transpose();
        w = accept_if_better(x, &loss, &w, &h, &candidate, &h, &mut trace)?.0;

        let new_h = project_nonzero(&loss, &w, x, opts, Some(&h))?;
        h = accept_if_better(x, &loss, &w, &h, &w, &new_h, &mut trace)?.1;
    }
    Ok(Refit {
        w,
        h,
        objective_trace: trace,
    })
}

fn accept_if_better(
    x: &DenseMatrix,
    loss: &Loss,
    w_old: &DenseMatrix,
    h_old: &DenseMatrix,
    w_new: &DenseMatrix,
    h_new: &DenseMatrix,
    trace: &mut Vec<f64>,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let prev = *trace.last().expect("trace starts non-empty");
    let obj = loss.objective(x, w_new, h_new)?;
    if obj <= prev {
        trace.push(obj);
        Ok((w_new.clone(), h_new.clone()))
    } else {
        trace.push(prev);
        Ok((w_old.clone(), h_old.clone()))
    }
}

/// Projection that tolerates all-zero basis columns: they get zero
/// coefficients, or keep their warm-start values when one is given.
fn project_nonzero(
    loss: &Loss,
    a: &DenseMatrix,
    x: &DenseMatrix,
    opts: &SolverOptions,
    init: Option<&DenseMatrix>,
) -> Result<DenseMatrix> {
    let keep: Vec<usize> = (0..a.cols()).filter(|&l| a.col(l).iter().any(|&v| v != 0.0)).collect();
    let mut out = match init {
        Some(h0) => h0.clone(),
        None => DenseMatrix::zeros(a.cols(), x.cols()),
    };
    if keep.is_empty() {
        return Ok(out);
    }
    let sub_a = a.select_columns(&keep);
    let sub_init = init.map(|h0| h0.select_rows(&keep));
    let res = loss.project(&sub_a, x, opts, sub_init.as_ref())?;
    // Rows of dropped basis columns do not affect the product; zero them so
    // the factor stays minimal.
    for j in 0..x.cols() {
        let col = out.col_mut(j);
        col.iter_mut().for_each(|v| *v = 0.0);
        for (&l, &v) in keep.iter().zip(res.h.col(j)) {
            col[l] = v;
        }
    }
    Ok(out)
}
