//! Fixtures shared by the solver benchmarks.

use conical::{add_sparse_laplace_noise, gen_separable, DenseMatrix, SeparableInstance};

/// A separable instance with sparse Laplace noise of scale `delta`.
pub fn noisy_separable(m: usize, r: usize, n: usize, delta: f64, seed: u64) -> (SeparableInstance, DenseMatrix) {
    let inst = gen_separable(m, r, n, seed).expect("valid sizes");
    let x = add_sparse_laplace_noise(&inst.x, delta, seed).expect("valid noise scale");
    (inst, x)
}
