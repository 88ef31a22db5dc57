//! Dense complex linear algebra on `nalgebra` matrices.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// `a * b` through the packed complex gemm kernel.
pub fn matmul(a: &CMat, b: &CMat) -> CMat {
    assert_eq!(a.ncols(), b.nrows(), "matmul shape mismatch");
    let (m, k, n) = (a.nrows(), a.ncols(), b.ncols());
    let mut c = CMat::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    // nalgebra storage is column-major: element (i, j) sits at i + j * nrows
    unsafe {
        matrixmultiply::zgemm(
            matrixmultiply::CGemmOption::Standard,
            matrixmultiply::CGemmOption::Standard,
            m,
            k,
            n,
            [1.0, 0.0],
            a.as_ptr() as *const [f64; 2],
            1,
            m as isize,
            b.as_ptr() as *const [f64; 2],
            1,
            k as isize,
            [0.0, 0.0],
            c.as_mut_ptr() as *mut [f64; 2],
            1,
            m as isize,
        );
    }
    c
}

/// Product of a list of matrices, left to right.
pub fn chain_product(ms: &[&CMat]) -> CMat {
    let mut acc = ms[0].clone();
    for m in &ms[1..] {
        acc = matmul(&acc, m);
    }
    acc
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// Largest singular value.
pub fn sigma_max(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Orthonormal basis of the numerical column span: left singular vectors
/// with singular value above `1e-10` times the largest.
pub fn orthonormalize(b: &CMat) -> CMat {
    let svd = b.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let top = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > 1e-10 * top).collect();
    CMat::from_fn(b.nrows(), keep.len(), |i, c| u[(i, keep[c])])
}

/// `sup ||A u|| / ||u||` over the span of the orthonormal columns of `q`.
pub fn op_norm_on(a: &CMat, q: &CMat) -> f64 {
    sigma_max(&matmul(a, q))
}

/// Euclidean norm of a complex vector.
pub fn norm(v: &CVec) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest entry modulus.
pub fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}
