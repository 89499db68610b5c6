//! Near-separable non-negative matrix factorization by conical hull
//! expansion.
//!
//! Given a non-negative `m x n` matrix `X`, the drivers pick `r` columns
//! `X_A` (the anchors) and coefficients `H >= 0` with `X ~ X_A H`, growing
//! the cone one anchor at a time. Three losses are supported: the robust
//! l1 loss ([`robust_xray`]), Bregman divergences in either argument order
//! ([`bregman_xray`]), and the squared loss as the Bregman special case.
//!
//! [`applications`] builds exemplar selection and video background modeling
//! on top of the drivers; [`synthetic`] generates the recovery experiments.

pub mod applications;
pub mod divergence;
pub mod driver;
pub mod error;
mod lad;
pub mod lp;
pub mod matrix;
pub mod projection;
pub mod selection;
pub mod synthetic;

pub use applications::{
    bg_model, bg_model_with, exemplar_select, median_check, median_filter_baseline, moving_block_scene, read_pgm, roc_curve,
    write_pgm, write_roc_csv, BackgroundModel, FrameStack, MedianCheckReport, RocPoint, SampleEncoding, SceneSpec,
};
pub use divergence::{divergence, phi_second_derivative, BregmanGenerator, DivergenceKind, DivergenceSpec};
pub use driver::{
    bregman_xray, refit, refit_from, resolve_ties, robust_xray, run, AnchorEntry, AnchorSet, BregmanDiagnostics,
    Factorization, IterationRecord, Loss, Refit, RunConfig, SignDiagnostics,
};
pub use error::{Error, Result};
pub use matrix::{column_l1_norms, make_p, soft_threshold, DenseMatrix, PositiveVector};
pub use projection::{
    bregman_projection, bregman_projection_reverse, nnlad_admm, nnls_cd, BregmanColumn, Orientation,
    ProjectionResult, SolverOptions,
};
pub use selection::{
    build_sign_choice, lp_feasibility, select_anchor_bregman, select_anchor_bregman_reverse, select_anchor_l1,
    select_exterior, ExteriorMode, SelectionOutcome, SignMatrixChoice,
};
pub use synthetic::{
    add_sparse_laplace_noise, anchor_recovery_rate, bench_sweep, gen_exponential_data, gen_separable, write_sweep_csv,
    GridSpec, NoiseModel, SeparableInstance, SweepConfig, SweepRow,
};
