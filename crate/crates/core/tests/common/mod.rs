//! Independent reference implementations shared by the integration tests.
//! Nothing here calls the library's solvers; only plain loops and a
//! textbook tableau simplex.

#![allow(dead_code)]

use conical::{DenseMatrix, PositiveVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_nonneg(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>()).unwrap()
}

pub fn mat_vec(a: &DenseMatrix, b: &[f64]) -> Vec<f64> {
    let (m, k) = a.shape();
    (0..m).map(|i| (0..k).map(|l| a.get(i, l) * b[l]).sum()).collect()
}

pub fn l1_residual(a: &DenseMatrix, x: &[f64], b: &[f64]) -> f64 {
    mat_vec(a, b).iter().zip(x).map(|(f, v)| (v - f).abs()).sum()
}

/// `min_{b >= 0} |x - A b|_1` for `x >= 0`, written as the LP
///
/// ```text
/// min 1^T z+ + 1^T z-   s.t.   A b + z+ - z- = x,   b, z+, z- >= 0
/// ```
///
/// and solved by a dense tableau simplex with Bland's rule, starting from
/// the feasible basis `z+ = x`. Returns the objective and `b`.
pub fn lad_split_simplex(a: &DenseMatrix, x: &[f64]) -> (f64, Vec<f64>) {
    let (m, k) = a.shape();
    assert!(x.iter().all(|&v| v >= 0.0));
    let n = k + 2 * m;
    // Row i: [A_i | e_i | -e_i | x_i]; last row holds reduced costs.
    let width = n + 1;
    let mut t = vec![0.0; (m + 1) * width];
    for i in 0..m {
        for l in 0..k {
            t[i * width + l] = a.get(i, l);
        }
        t[i * width + k + i] = 1.0;
        t[i * width + k + m + i] = -1.0;
        t[i * width + n] = x[i];
    }
    let mut basis: Vec<usize> = (0..m).map(|i| k + i).collect();
    let cost = |j: usize| if j < k { 0.0 } else { 1.0 };
    // Reduced costs c_j - c_B^T B^{-1} a_j with B = I initially.
    for j in 0..=n {
        let mut v = if j < n { cost(j) } else { 0.0 };
        for i in 0..m {
            v -= t[i * width + j];
        }
        t[m * width + j] = v;
    }
    for _ in 0..100_000 {
        let Some(e) = (0..n).find(|&j| t[m * width + j] < -1e-12) else {
            let mut b = vec![0.0; k];
            for (i, &j) in basis.iter().enumerate() {
                if j < k {
                    b[j] = t[i * width + n];
                }
            }
            return (-t[m * width + n], b);
        };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            let c = t[i * width + e];
            if c > 1e-12 {
                let ratio = t[i * width + n] / c;
                let better = match leave {
                    None => true,
                    Some((li, lr)) => ratio < lr - 1e-15 || (ratio <= lr + 1e-15 && basis[i] < basis[li]),
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        let (r, _) = leave.expect("the split LP is bounded below by zero");
        let piv = t[r * width + e];
        for j in 0..width {
            t[r * width + j] /= piv;
        }
        for i in 0..=m {
            if i != r {
                let f = t[i * width + e];
                if f != 0.0 {
                    for j in 0..width {
                        t[i * width + j] -= f * t[r * width + j];
                    }
                }
            }
        }
        basis[r] = e;
    }
    panic!("simplex oracle did not terminate");
}

/// Non-negative least squares by plain cyclic coordinate descent on the
/// normal equations, run to a tight fixed point.
pub fn nnls_reference(a: &DenseMatrix, x: &[f64]) -> Vec<f64> {
    let (m, k) = a.shape();
    let col = |l: usize| (0..m).map(move |i| a.get(i, l));
    let gram: Vec<Vec<f64>> = (0..k).map(|p| (0..k).map(|q| col(p).zip(col(q)).map(|(u, v)| u * v).sum()).collect()).collect();
    let atx: Vec<f64> = (0..k).map(|p| col(p).zip(x).map(|(u, v)| u * v).sum()).collect();
    let mut b = vec![0.0; k];
    for _ in 0..100_000 {
        let mut change = 0.0f64;
        for l in 0..k {
            if gram[l][l] == 0.0 {
                continue;
            }
            let g: f64 = (0..k).map(|q| gram[l][q] * b[q]).sum::<f64>() - atx[l];
            let new = (b[l] - g / gram[l][l]).max(0.0);
            change = change.max((new - b[l]).abs());
            b[l] = new;
        }
        if change <= 1e-15 {
            break;
        }
    }
    b
}

/// The squared-loss selection rule: `argmax_j R_i^T X_j / p^T X_j` over
/// non-zero columns outside `anchors`, lowest index on exact ties.
pub fn xray_l2_argmax(x: &DenseMatrix, r_i: &[f64], p: &PositiveVector, anchors: &[usize]) -> usize {
    let mut best = (f64::NEG_INFINITY, usize::MAX);
    for j in 0..x.cols() {
        let c = x.col(j);
        if anchors.contains(&j) || c.iter().all(|&v| v == 0.0) {
            continue;
        }
        let num: f64 = r_i.iter().zip(c).map(|(u, v)| u * v).sum();
        let den: f64 = p.values().iter().zip(c).map(|(u, v)| u * v).sum();
        let v = num / den;
        if v > best.0 {
            best = (v, j);
        }
    }
    best.1
}

/// Reference squared-loss cone expansion: project on the current anchors,
/// take the column with the largest squared residual as exterior, add the
/// [`xray_l2_argmax`] of its residual.
pub fn xray_l2_reference(x: &DenseMatrix, r: usize, p: &PositiveVector) -> Vec<usize> {
    let (m, n) = x.shape();
    let mut anchors: Vec<usize> = Vec::new();
    while anchors.len() < r {
        let a = x.select_columns(&anchors);
        let residuals: Vec<Vec<f64>> = (0..n)
            .map(|j| {
                let b = if anchors.is_empty() { Vec::new() } else { nnls_reference(&a, x.col(j)) };
                let fit = if anchors.is_empty() { vec![0.0; m] } else { mat_vec(&a, &b) };
                x.col(j).iter().zip(&fit).map(|(v, f)| v - f).collect()
            })
            .collect();
        let norms: Vec<f64> = residuals.iter().map(|r| r.iter().map(|v| v * v).sum()).collect();
        let total: f64 = x.as_slice().iter().map(|v| v * v).sum();
        let (i, &best) = norms.iter().enumerate().fold((0, &norms[0]), |acc, (j, v)| if *v > *acc.1 { (j, v) } else { acc });
        if best <= 1e-12 * total {
            break;
        }
        anchors.push(xray_l2_argmax(x, &residuals[i], p, &anchors));
    }
    anchors
}

/// Smallest value of `f` on a uniform `(steps + 1)^2` grid over `[0, hi]^2`.
pub fn grid_min_2d(hi: f64, steps: usize, f: impl Fn(&[f64]) -> f64) -> (f64, [f64; 2]) {
    let mut best = (f64::INFINITY, [0.0, 0.0]);
    for p in 0..=steps {
        for q in 0..=steps {
            let b = [hi * p as f64 / steps as f64, hi * q as f64 / steps as f64];
            let v = f(&b);
            if v < best.0 {
                best = (v, b);
            }
        }
    }
    best
}
