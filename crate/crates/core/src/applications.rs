//! Exemplar selection and background-foreground separation on video.
//!
//! A video is a [`FrameStack`]: each frame is flattened row-major into one
//! row of `X`, so columns are pixels and the anchors picked by the drivers
//! are pixels whose time series explain the others.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

pub use image::codecs::pnm::SampleEncoding;
use image::codecs::pnm::{PnmDecoder, PnmEncoder, PnmSubtype};
use image::{DynamicImage, ExtendedColorType, ImageEncoder};
use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::driver::{refit_from, run, Loss, RunConfig};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::projection::{nnlad_admm, SolverOptions};
use crate::selection::ExteriorMode;

/// Slack allowed when comparing the fitted model against the median
/// baseline.
const DOMINANCE_TOL: f64 = 1e-6;
/// Pass threshold of the median equivalence check.
const MEDIAN_GAP_TOL: f64 = 1e-4;

/// Frames stacked as rows of an `f x (height * width)` matrix, with 8-bit
/// intensities scaled to `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameStack {
    pub height: usize,
    pub width: usize,
    pub x: DenseMatrix,
}

impl FrameStack {
    /// Wraps an existing `f x (height * width)` matrix.
    pub fn new(height: usize, width: usize, x: DenseMatrix) -> Result<Self> {
        if height * width != x.cols() || x.rows() == 0 {
            return Err(Error::ShapeMismatch {
                expected: (x.rows().max(1), height * width),
                found: x.shape(),
            });
        }
        if !x.is_nonneg() {
            return Err(Error::InvalidArgument("frame intensities must be non-negative".into()));
        }
        Ok(Self { height, width, x })
    }

    /// Builds a stack from 8-bit frames of equal size.
    pub fn from_u8_frames(height: usize, width: usize, frames: &[Vec<u8>]) -> Result<Self> {
        let p = height * width;
        if frames.is_empty() {
            return Err(Error::InvalidArgument("need at least one frame".into()));
        }
        for (t, frame) in frames.iter().enumerate() {
            if frame.len() != p {
                return Err(Error::InvalidArgument(format!(
                    "frame {t} has {} pixels, expected {height}x{width}",
                    frame.len()
                )));
            }
        }
        let x = DenseMatrix::from_fn(frames.len(), p, |t, j| f64::from(frames[t][j]) / 255.0)?;
        Self::new(height, width, x)
    }

    pub fn frames(&self) -> usize {
        self.x.rows()
    }

    pub fn pixels(&self) -> usize {
        self.x.cols()
    }

    /// Frame `t` as a row-major vector of scaled intensities.
    pub fn frame(&self, t: usize) -> Vec<f64> {
        self.x.row(t)
    }

    /// Frame `t` quantized back to 8 bits, clamping to `[0, 1]` first.
    pub fn frame_u8(&self, t: usize) -> Vec<u8> {
        to_u8(&self.frame(t))
    }

    /// Reads every `.pgm` file of a directory in file-name order.
    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let paths = pgm_files(dir.as_ref())?;
        if paths.is_empty() {
            return Err(Error::InvalidArgument(format!("no .pgm files in {}", dir.as_ref().display())));
        }
        let images: Vec<(usize, usize, Vec<u8>)> = paths.par_iter().map(read_pgm).collect::<Result<_>>()?;
        let (height, width) = (images[0].0, images[0].1);
        for ((h, w, _), path) in images.iter().zip(&paths) {
            if (*h, *w) != (height, width) {
                return Err(Error::InvalidArgument(format!(
                    "{} is {h}x{w}, expected {height}x{width}",
                    path.display()
                )));
            }
        }
        let frames: Vec<Vec<u8>> = images.into_iter().map(|(_, _, d)| d).collect();
        Self::from_u8_frames(height, width, &frames)
    }

    /// Writes frame `t` to `dir/{prefix}{t:04}.pgm` for every frame.
    pub fn write_dir(&self, dir: impl AsRef<Path>, prefix: &str, encoding: SampleEncoding) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir.as_ref())?;
        (0..self.frames())
            .map(|t| {
                let path = dir.as_ref().join(format!("{prefix}{t:04}.pgm"));
                write_pgm(&path, self.height, self.width, &self.frame_u8(t), encoding)?;
                Ok(path)
            })
            .collect()
    }

    /// Foreground indicator of a truth mask stack: 0 is background and any
    /// value above one half (128 of 255) is foreground.
    pub fn mask(&self) -> Vec<bool> {
        let (f, p) = self.x.shape();
        let mut out = Vec::with_capacity(f * p);
        for j in 0..p {
            out.extend(self.x.col(j).iter().map(|&v| v > 0.5));
        }
        out
    }
}

fn to_u8(values: &[f64]) -> Vec<u8> {
    values.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

fn pgm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")))
        .collect();
    paths.sort();
    Ok(paths)
}

/// Reads an 8-bit PGM (binary `P5` or ASCII `P2`) as `(height, width, data)`.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    let reader = BufReader::new(File::open(path.as_ref())?);
    let decoder = PnmDecoder::new(reader)?;
    let img = DynamicImage::from_decoder(decoder)?.into_luma8();
    let (w, h) = img.dimensions();
    Ok((h as usize, w as usize, img.into_raw()))
}

/// Writes an 8-bit PGM, binary (`P5`) or ASCII (`P2`).
pub fn write_pgm(
    path: impl AsRef<Path>,
    height: usize,
    width: usize,
    data: &[u8],
    encoding: SampleEncoding,
) -> Result<()> {
    if data.len() != height * width {
        return Err(Error::ShapeMismatch {
            expected: (height, width),
            found: (data.len(), 1),
        });
    }
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    PnmEncoder::new(&mut out).with_subtype(PnmSubtype::Graymap(encoding)).write_image(
        data,
        width as u32,
        height as u32,
        ExtendedColorType::L8,
    )?;
    out.flush()?;
    Ok(())
}

/// Picks `r` representative columns of `x` with the driver described by
/// `method`, always using the max exterior rule.
pub fn exemplar_select(x: &DenseMatrix, r: usize, method: &RunConfig) -> Result<Vec<usize>> {
    let cfg = RunConfig {
        r,
        exterior_mode: ExteriorMode::Max,
        ..method.clone()
    };
    Ok(run(x, &cfg)?.anchors.indices())
}

/// Fitted background and foreground of a frame stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundModel {
    /// Anchor pixels, in selection order.
    pub anchors: Vec<usize>,
    /// Background `B = W H`, `f x p`.
    pub background: DenseMatrix,
    /// Foreground `S = X - B`.
    pub foreground: DenseMatrix,
    /// Loss before refitting and after each refit half-step.
    pub objective_trace: Vec<f64>,
    /// `|S|_1` of the median baseline, for comparison.
    pub median_objective: f64,
    /// For the l1 loss: whether `|S|_1` is within tolerance of the median
    /// baseline or better. Always true for other losses.
    pub dominates_median: bool,
}

/// Separates `stack` into a background with `r` anchor pixels and a
/// foreground residual, followed by `refit_steps` alternating refits.
pub fn bg_model(stack: &FrameStack, r: usize, loss: Loss, refit_steps: usize) -> Result<BackgroundModel> {
    bg_model_with(stack, &RunConfig::new(r, loss), refit_steps)
}

/// [`bg_model`] with full control over the driver configuration.
pub fn bg_model_with(stack: &FrameStack, cfg: &RunConfig, refit_steps: usize) -> Result<BackgroundModel> {
    let x = &stack.x;
    if cfg.r > stack.pixels() {
        return Err(Error::InvalidArgument(format!(
            "rank {} exceeds the pixel count {}",
            cfg.r,
            stack.pixels()
        )));
    }
    let fac = run(x, cfg)?;
    let anchors = fac.anchors.indices();
    let w = fac.w(x);
    let fit = refit_from(x, w, fac.h, refit_steps, cfg.loss, &cfg.solver)?;
    let background = fit.w.matmul(&fit.h)?;
    let foreground = x.sub(&background)?;

    let median = median_filter_baseline(x);
    let median_objective = median_residual_l1(x, &median);
    let dominates_median = if cfg.loss == Loss::L1 {
        let ok = foreground.l1_norm() <= median_objective + DOMINANCE_TOL;
        if !ok {
            warn!(
                "background model |S|_1 = {} exceeds the median baseline {}",
                foreground.l1_norm(),
                median_objective
            );
        }
        ok
    } else {
        true
    };
    Ok(BackgroundModel {
        anchors,
        background,
        foreground,
        objective_trace: fit.objective_trace,
        median_objective,
        dominates_median,
    })
}

fn median_residual_l1(x: &DenseMatrix, h: &[f64]) -> f64 {
    x.columns().zip(h).map(|(col, &m)| col.iter().map(|v| (v - m).abs()).sum::<f64>()).sum()
}

/// `(lower, upper)` middle order statistics of a column; equal for odd
/// lengths.
fn middle_pair(col: &[f64]) -> (f64, f64) {
    let mut v = col.to_vec();
    v.sort_by(f64::total_cmp);
    let f = v.len();
    (v[(f - 1) / 2], v[f / 2])
}

/// Per-pixel median over frames (rows); the lower median for an even
/// number of frames.
pub fn median_filter_baseline(x: &DenseMatrix) -> Vec<f64> {
    x.columns().map(|col| middle_pair(col).0).collect()
}

/// Outcome of comparing the l1 fit with an all-ones left factor against the
/// per-pixel median.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MedianCheckReport {
    pub frames: usize,
    pub pixels: usize,
    /// With an even frame count every point between the two middle values
    /// is optimal, so the check is interval membership.
    pub even_frames: bool,
    /// Largest distance from the solver's value to the median (odd) or to
    /// the median interval (even).
    pub max_gap: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Solves `min_{h >= 0} |X - 1 h^T|_1` with the NN-LAD solver and compares
/// the result with the per-pixel median.
pub fn median_check(x: &DenseMatrix, opts: &SolverOptions) -> Result<MedianCheckReport> {
    let (f, p) = x.shape();
    let ones = DenseMatrix::from_fn(f, 1, |_, _| 1.0)?;
    let fit = nnlad_admm(&ones, x, opts)?;
    let max_gap = (0..p)
        .map(|j| {
            let (lo, hi) = middle_pair(x.col(j));
            let h = fit.h.get(0, j);
            (lo - h).max(h - hi).max(0.0)
        })
        .fold(0.0, f64::max);
    Ok(MedianCheckReport {
        frames: f,
        pixels: p,
        even_frames: f % 2 == 0,
        max_gap,
        tolerance: MEDIAN_GAP_TOL,
        pass: max_gap <= MEDIAN_GAP_TOL,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub true_positive_rate: f64,
    pub false_positive_rate: f64,
}

/// Scores every pixel of every frame by `|S|` and sweeps the thresholds in
/// increasing order; a pixel is foreground when its score is at least the
/// threshold.
pub fn roc_curve(s: &DenseMatrix, truth: &FrameStack, thresholds: &[f64]) -> Result<Vec<RocPoint>> {
    if s.shape() != truth.x.shape() {
        return Err(Error::ShapeMismatch {
            expected: truth.x.shape(),
            found: s.shape(),
        });
    }
    let labels = truth.mask();
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateTruth);
    }
    // Scores in the same column-major order as the labels.
    let scores: Vec<f64> = s.as_slice().iter().map(|v| v.abs()).collect();
    let mut sorted = thresholds.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted
        .into_iter()
        .map(|t| {
            let (mut tp, mut fp) = (0usize, 0usize);
            for (&score, &fg) in scores.iter().zip(&labels) {
                if score >= t {
                    if fg {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            RocPoint {
                threshold: t,
                true_positive_rate: tp as f64 / positives as f64,
                false_positive_rate: fp as f64 / negatives as f64,
            }
        })
        .collect())
}

/// Writes `threshold,tpr,fpr` rows.
pub fn write_roc_csv<W: Write>(points: &[RocPoint], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["threshold", "tpr", "fpr"])?;
    for pt in points {
        out.write_record([
            pt.threshold.to_string(),
            pt.true_positive_rate.to_string(),
            pt.false_positive_rate.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// A synthetic video: a fixed textured background and a bright block that
/// bounces around the frame, with its ground-truth masks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Side of the square block.
    pub block: usize,
    /// Block displacement per frame in pixels, `(down, right)`; the block
    /// reflects off the frame edges.
    pub velocity: (usize, usize),
    /// Background intensities are uniform on this range.
    pub background: (f64, f64),
    /// Block intensities are uniform on this range; keep it above the
    /// background range so the two are separated by a margin.
    pub foreground: (f64, f64),
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            frames: 30,
            height: 24,
            width: 24,
            block: 3,
            velocity: (1, 2),
            background: (0.1, 0.4),
            foreground: (0.8, 1.0),
            seed: 0,
        }
    }
}

/// One axis of a bouncing motion: position after each step, reflecting at
/// `0` and `max`.
fn bounce(pos: usize, dir: &mut isize, step: usize, max: usize) -> usize {
    let mut p = pos as isize + *dir * step as isize;
    if p < 0 || p > max as isize {
        *dir = -*dir;
        p = (pos as isize + *dir * step as isize).clamp(0, max as isize);
    }
    p as usize
}

/// Frames and truth masks (1 on the block, 0 elsewhere) of a scene. The
/// block starts in the top-left corner; background and block intensities
/// are drawn once per pixel and once per pixel and frame respectively.
pub fn moving_block_scene(spec: &SceneSpec) -> Result<(FrameStack, FrameStack)> {
    let SceneSpec {
        frames,
        height,
        width,
        block,
        velocity,
        ..
    } = *spec;
    if frames == 0 || block == 0 || block > height || block > width {
        return Err(Error::InvalidArgument(format!(
            "scene needs frames >= 1 and 1 <= block <= min(height, width), got {spec:?}"
        )));
    }
    let (bl, bh) = spec.background;
    let (fl, fh) = spec.foreground;
    if !(0.0 <= bl && bl <= bh && bh <= 1.0 && 0.0 <= fl && fl <= fh && fh <= 1.0) {
        return Err(Error::InvalidArgument("intensity ranges must be ordered within [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let p = height * width;
    let background: Vec<f64> = (0..p).map(|_| rng.random_range(bl..=bh)).collect();
    let mut data = vec![0.0; frames * p];
    let mut truth = vec![0.0; frames * p];
    let (mut top, mut left) = (0, 0);
    let (mut dy, mut dx) = (1isize, 1isize);
    for t in 0..frames {
        for j in 0..p {
            let (row, col) = (j / width, j % width);
            let inside = (top..top + block).contains(&row) && (left..left + block).contains(&col);
            let idx = j * frames + t;
            if inside {
                data[idx] = rng.random_range(fl..=fh);
                truth[idx] = 1.0;
            } else {
                data[idx] = background[j];
            }
        }
        top = bounce(top, &mut dy, velocity.0, height - block);
        left = bounce(left, &mut dx, velocity.1, width - block);
    }
    let x = DenseMatrix::from_col_major(frames, p, data)?;
    let mask = DenseMatrix::from_col_major(frames, p, truth)?;
    Ok((FrameStack::new(height, width, x)?, FrameStack::new(height, width, mask)?))
}
