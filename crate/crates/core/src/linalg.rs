//! Dense complex linear algebra helpers shared by all modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Dense complex matrix.
pub type CMat = DMatrix<C64>;
/// Dense complex vector.
pub type CVec = DVector<C64>;

/// Largest entry magnitude of `m`.
pub fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest entry magnitude of `a - b`.
pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch");
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Largest deviation of `m` from its own adjoint.
pub fn hermiticity_residual(m: &CMat) -> f64 {
    max_abs_diff(m, &m.adjoint())
}

/// One-norm (maximum absolute column sum).
fn one_norm(m: &CMat) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a [13/13] Pade
/// approximant. Intended for the modest dense matrices used here; relative
/// accuracy is far below the 1e-10 target for well-scaled generators.
pub fn expm(a: &CMat) -> CMat {
    assert_eq!(a.nrows(), a.ncols(), "expm requires a square matrix");
    let n = a.nrows();

    // Order-13 Pade coefficients.
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    const THETA_13: f64 = 5.371920351148152;

    let norm = one_norm(a);
    let scaling = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil() as u32
    } else {
        0
    };
    let a = a / C64::from(2f64.powi(scaling as i32));

    let eye = CMat::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;

    let b = |k: usize| C64::from(B[k]);
    let u_inner = &a6 * (&a6 * b(13) + &a4 * b(11) + &a2 * b(9))
        + &a6 * b(7)
        + &a4 * b(5)
        + &a2 * b(3)
        + &eye * b(1);
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b(12) + &a4 * b(10) + &a2 * b(8))
        + &a6 * b(6)
        + &a4 * b(4)
        + &a2 * b(2)
        + &eye * b(0);

    let lhs = &v - &u;
    let rhs = &v + &u;
    let mut r = lhs
        .lu()
        .solve(&rhs)
        .expect("Pade denominator is singular; generator is not well scaled");

    for _ in 0..scaling {
        r = &r * &r;
    }
    r
}

/// Eigenvalues of a Hermitian matrix, ascending. Errors if `m` is not
/// Hermitian to within `herm_tol`.
pub fn hermitian_eigenvalues(m: &CMat, herm_tol: f64) -> Result<Vec<f64>> {
    let res = hermiticity_residual(m);
    if res > herm_tol {
        return Err(Error::Contract(format!(
            "matrix is not Hermitian: residual {res:.3e} exceeds {herm_tol:.3e}"
        )));
    }
    // Symmetrize to suppress roundoff before factorizing.
    let h = (m + m.adjoint()) * C64::from(0.5);
    let mut eig: Vec<f64> = h
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .collect();
    eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(eig)
}

/// Trace distance (1/2)·||a - b||_1 between two Hermitian matrices.
pub fn trace_distance(a: &CMat, b: &CMat) -> Result<f64> {
    let d = a - b;
    let eig = hermitian_eigenvalues(&d, 1e-8)?;
    Ok(0.5 * eig.iter().map(|x| x.abs()).sum::<f64>())
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// Outer product `x · y†`.
pub fn outer(x: &CVec, y: &CVec) -> CMat {
    x * y.adjoint()
}
