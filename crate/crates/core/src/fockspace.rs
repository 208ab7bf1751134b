//! Truncated-Fock-space operators, canonical states, moments, and fidelities.
//!
//! Everything here works in the convention hbar = 1, I = a + a†,
//! Q = -i(a - a†), so a coherent state has unit variance in both quadratures
//! and "squeezed" means a variance below 1.
//!
//! Truncation is self-policing: any operation that produces a state checks
//! that the top two Fock levels are essentially unpopulated and fails with a
//! truncation error instead of silently losing norm.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::linalg::{expm, hermiticity_residual, hermitian_eigenvalues, CMat, CVec};

/// Population bound on each of the top two Fock levels.
pub const TRUNCATION_TOL: f64 = 1e-8;

/// Hermiticity tolerance for observables passed to [`moments`].
pub const HERMITICITY_TOL: f64 = 1e-12;

/// Truncated Hilbert space configuration: the number of retained Fock levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HilbertConfig {
    dim: usize,
}

impl HilbertConfig {
    /// Default truncation for vacuum/coherent runs at small interaction phase.
    pub const DEFAULT_DIM: usize = 40;
    /// Default truncation for thermal and dissipative runs.
    pub const DEFAULT_DIM_THERMAL: usize = 80;

    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config(format!(
                "Hilbert space dimension must be at least 2, got {dim}"
            )));
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// The ladder-operator family on a truncated Fock space.
#[derive(Debug, Clone)]
pub struct Operators {
    /// Annihilation operator `a`.
    pub lower: CMat,
    /// Creation operator `a†`.
    pub raise: CMat,
    /// Number operator `a†a`.
    pub number: CMat,
    /// Quadrature `I = a + a†`.
    pub quad_i: CMat,
    /// Quadrature `Q = -i(a - a†)`.
    pub quad_q: CMat,
}

/// Build `a`, `a†`, `n`, `I`, `Q` for the given truncation.
pub fn build_operators(cfg: HilbertConfig) -> Operators {
    let dim = cfg.dim();
    let mut lower = CMat::zeros(dim, dim);
    for m in 0..dim - 1 {
        lower[(m, m + 1)] = C64::from(((m + 1) as f64).sqrt());
    }
    let raise = lower.adjoint();
    let number = &raise * &lower;
    let quad_i = &lower + &raise;
    let quad_q = (&lower - &raise) * C64::new(0.0, -1.0);
    Operators {
        lower,
        raise,
        number,
        quad_i,
        quad_q,
    }
}

/// A normalized pure state in the truncated Fock basis.
#[derive(Debug, Clone)]
pub struct FockVector {
    amps: CVec,
}

impl FockVector {
    /// Wrap and normalize an amplitude vector.
    pub fn new(amps: CVec) -> Result<Self> {
        let norm = amps.norm();
        if norm < 1e-150 {
            return Err(Error::Internal("cannot normalize a zero vector".into()));
        }
        Ok(Self {
            amps: amps / C64::from(norm),
        })
    }

    /// Basis state |n>.
    pub fn fock(n: usize, cfg: HilbertConfig) -> Result<Self> {
        if n >= cfg.dim() {
            return Err(Error::Config(format!(
                "Fock level {n} outside truncation {}",
                cfg.dim()
            )));
        }
        let mut amps = CVec::zeros(cfg.dim());
        amps[n] = C64::from(1.0);
        Ok(Self { amps })
    }

    /// The vacuum state |0>.
    pub fn vacuum(cfg: HilbertConfig) -> Self {
        Self::fock(0, cfg).expect("dim >= 2")
    }

    pub fn amplitudes(&self) -> &CVec {
        &self.amps
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    /// Occupation probability of level `n`.
    pub fn population(&self, n: usize) -> f64 {
        self.amps[n].norm_sqr()
    }

    /// Overlap <self|other>.
    pub fn inner(&self, other: &FockVector) -> C64 {
        self.amps.dotc(&other.amps)
    }

    /// Verify the top two levels are unpopulated to [`TRUNCATION_TOL`].
    pub fn check_truncation(&self) -> Result<()> {
        let dim = self.dim();
        for n in [dim - 2, dim - 1] {
            let p = self.population(n);
            if p > TRUNCATION_TOL {
                return Err(Error::Truncation(format!(
                    "population {p:.3e} at Fock level {n} exceeds {TRUNCATION_TOL:.1e} \
                     (truncation dim {dim} too small)"
                )));
            }
        }
        Ok(())
    }
}

/// A density matrix on the oscillator (dim x dim) or on the joint
/// qubit-oscillator space (2·dim x 2·dim).
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    mat: CMat,
}

impl DensityMatrix {
    /// Trace tolerance accepted at construction.
    pub const TRACE_TOL: f64 = 1e-8;
    /// Hermiticity tolerance.
    pub const HERMITICITY_TOL: f64 = 1e-10;
    /// Allowed negative eigenvalue excursion.
    pub const EIGENVALUE_TOL: f64 = 1e-8;

    /// Validate invariants and wrap. The trace must be within
    /// [`Self::TRACE_TOL`] of one; the matrix is then renormalized exactly.
    pub fn new(mat: CMat) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::Contract("density matrix must be square".into()));
        }
        let tr = mat.trace();
        if (tr.re - 1.0).abs() > Self::TRACE_TOL || tr.im.abs() > Self::TRACE_TOL {
            return Err(Error::Contract(format!(
                "density matrix trace {tr} deviates from 1 beyond {:.1e}",
                Self::TRACE_TOL
            )));
        }
        let herm = hermiticity_residual(&mat);
        if herm > Self::HERMITICITY_TOL {
            return Err(Error::Contract(format!(
                "density matrix Hermiticity residual {herm:.3e} exceeds {:.1e}",
                Self::HERMITICITY_TOL
            )));
        }
        let eig = hermitian_eigenvalues(&mat, 10.0 * Self::HERMITICITY_TOL)?;
        let min = eig.first().copied().unwrap_or(0.0);
        if min < -Self::EIGENVALUE_TOL {
            return Err(Error::Contract(format!(
                "density matrix minimum eigenvalue {min:.3e} below -{:.1e}",
                Self::EIGENVALUE_TOL
            )));
        }
        Ok(Self {
            mat: mat / C64::from(tr.re),
        })
    }

    /// Build from an already-trusted matrix, normalizing the trace without
    /// running the eigenvalue check. For internal fast paths.
    pub(crate) fn from_unchecked(mat: CMat) -> Self {
        let tr = mat.trace().re;
        Self {
            mat: mat / C64::from(tr),
        }
    }

    /// Pure-state projector |psi><psi|.
    pub fn pure(state: &FockVector) -> Self {
        Self {
            mat: state.amplitudes() * state.amplitudes().adjoint(),
        }
    }

    pub fn matrix(&self) -> &CMat {
        &self.mat
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    /// tr(rho^2).
    pub fn purity(&self) -> f64 {
        (&self.mat * &self.mat).trace().re
    }

    /// Diagonal occupation of level `n`.
    pub fn population(&self, n: usize) -> f64 {
        self.mat[(n, n)].re
    }
}

/// Either side of the pure/mixed divide, for moment evaluation.
pub trait ExpectationValue {
    /// <op> on this state.
    fn expect(&self, op: &CMat) -> C64;
    fn dim(&self) -> usize;
}

impl ExpectationValue for FockVector {
    fn expect(&self, op: &CMat) -> C64 {
        self.amps.dotc(&(op * &self.amps))
    }

    fn dim(&self) -> usize {
        self.amps.len()
    }
}

impl ExpectationValue for DensityMatrix {
    fn expect(&self, op: &CMat) -> C64 {
        (op * &self.mat).trace()
    }

    fn dim(&self) -> usize {
        self.mat.nrows()
    }
}

/// First and second central moments of a Hermitian observable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
}

/// Mean and variance of a Hermitian `op` on `state`.
pub fn moments<S: ExpectationValue>(state: &S, op: &CMat) -> Result<Moments> {
    if op.nrows() != state.dim() || op.ncols() != state.dim() {
        return Err(Error::Contract(format!(
            "operator shape {}x{} does not match state dimension {}",
            op.nrows(),
            op.ncols(),
            state.dim()
        )));
    }
    let herm = hermiticity_residual(op);
    if herm > HERMITICITY_TOL {
        return Err(Error::Contract(format!(
            "moments requires a Hermitian observable (residual {herm:.3e})"
        )));
    }
    let mean = state.expect(op);
    let second = state.expect(&(op * op));
    if mean.im.abs() > 1e-10 || second.im.abs() > 1e-10 {
        return Err(Error::Internal(format!(
            "imaginary residue in moments of Hermitian observable: {} / {}",
            mean.im, second.im
        )));
    }
    Ok(Moments {
        mean: mean.re,
        variance: second.re - mean.re * mean.re,
    })
}

/// Fidelity |<x|y>|^2 between two normalized pure states.
pub fn fidelity(x: &FockVector, y: &FockVector) -> f64 {
    x.inner(y).norm_sqr()
}

/// Moments of the quadrature I = a + a† evaluated directly from the
/// amplitudes in O(dim), using I² = a² + a†² + 2n̂ + 1. Equivalent to
/// [`moments`] with the dense quadrature matrix; used on hot paths.
pub fn quadrature_moments(state: &FockVector) -> Moments {
    let a = state.amplitudes();
    let dim = a.len();
    let mut mean = 0.0;
    let mut second = 0.0;
    for n in 0..dim {
        second += a[n].norm_sqr() * (2.0 * n as f64 + 1.0);
        if n + 1 < dim {
            mean += 2.0 * (a[n].conj() * a[n + 1]).re * ((n + 1) as f64).sqrt();
        }
        if n + 2 < dim {
            second += 2.0 * (a[n].conj() * a[n + 2]).re * (((n + 1) * (n + 2)) as f64).sqrt();
        }
    }
    Moments {
        mean,
        variance: second - mean * mean,
    }
}

/// Coherent state |alpha>, renormalized after truncation.
pub fn coherent_state(alpha: C64, cfg: HilbertConfig) -> Result<FockVector> {
    let dim = cfg.dim();
    let mut amps = CVec::zeros(dim);
    amps[0] = C64::from((-alpha.norm_sqr() / 2.0).exp());
    for n in 1..dim {
        amps[n] = amps[n - 1] * alpha / C64::from((n as f64).sqrt());
    }
    let state = FockVector::new(amps)?;
    state.check_truncation()?;
    Ok(state)
}

/// Displacement operator D(beta) = exp(beta a† - beta* a).
pub fn displacement_operator(beta: C64, cfg: HilbertConfig) -> CMat {
    let ops = build_operators(cfg);
    let gen = &ops.raise * beta - &ops.lower * beta.conj();
    expm(&gen)
}

/// Squeezing operator S(eps) = exp(eps*/2 a^2 - eps/2 a†^2).
///
/// Fails if the squeezed vacuum generated by `eps` would populate the top
/// truncation levels: level 2m of S(r)|0> carries weight
/// C(2m, m) (tanh r / 2)^{2m} / cosh r.
pub fn squeeze_operator(eps: C64, cfg: HilbertConfig) -> Result<CMat> {
    let dim = cfg.dim();
    let r = eps.norm();
    if r > 0.0 {
        let th = r.tanh();
        let mut weight = 1.0 / r.cosh(); // population of level 0
        let mut level = 0usize;
        while level + 2 < dim {
            // p_{2(m+1)} / p_{2m} = tanh^2 r · (2m+1)(2m+2) / (2(m+1))^2
            let m = (level / 2) as f64;
            weight *= th * th * (2.0 * m + 1.0) * (2.0 * m + 2.0)
                / ((2.0 * m + 2.0) * (2.0 * m + 2.0));
            level += 2;
        }
        if weight > TRUNCATION_TOL {
            return Err(Error::Truncation(format!(
                "squeezed vacuum for |eps| = {r:.3} carries population {weight:.3e} \
                 near level {level}; increase the truncation"
            )));
        }
    }
    let ops = build_operators(cfg);
    let a2 = &ops.lower * &ops.lower;
    let adag2 = &ops.raise * &ops.raise;
    let gen = a2 * (eps.conj() * 0.5) - adag2 * (eps * 0.5);
    Ok(expm(&gen))
}

/// Thermal state with mean occupation `nbar`, trace-normalized after
/// truncation.
pub fn thermal_state(nbar: f64, cfg: HilbertConfig) -> Result<DensityMatrix> {
    if nbar < 0.0 {
        return Err(Error::Config(format!(
            "thermal occupation must be non-negative, got {nbar}"
        )));
    }
    let dim = cfg.dim();
    let ratio = nbar / (1.0 + nbar);
    let mut diag = Vec::with_capacity(dim);
    let mut p = 1.0 - ratio;
    for _ in 0..dim {
        diag.push(p);
        p *= ratio;
    }
    let total: f64 = diag.iter().sum();
    for n in [dim - 2, dim - 1] {
        if diag[n] / total > TRUNCATION_TOL {
            return Err(Error::Truncation(format!(
                "thermal population {:.3e} at level {n} exceeds {TRUNCATION_TOL:.1e}",
                diag[n] / total
            )));
        }
    }
    let mat = CMat::from_diagonal(&CVec::from_iterator(
        dim,
        diag.iter().map(|&x| C64::from(x / total)),
    ));
    Ok(DensityMatrix { mat })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;

    fn cfg(dim: usize) -> HilbertConfig {
        HilbertConfig::new(dim).unwrap()
    }

    #[test]
    fn dim_below_two_rejected() {
        assert!(HilbertConfig::new(1).is_err());
        assert!(HilbertConfig::new(0).is_err());
    }

    #[test]
    fn ladder_matrix_elements() {
        let ops = build_operators(cfg(2));
        assert_eq!(ops.lower[(0, 1)], C64::from(1.0));
        assert_eq!(ops.lower[(0, 0)], C64::from(0.0));
        assert_eq!(ops.lower[(1, 0)], C64::from(0.0));
        assert_eq!(ops.lower[(1, 1)], C64::from(0.0));
    }

    #[test]
    fn lowering_vacuum_gives_zero() {
        let c = cfg(8);
        let ops = build_operators(c);
        let vac = FockVector::vacuum(c);
        let out = &ops.lower * vac.amplitudes();
        assert!(out.norm() < 1e-15);
    }

    #[test]
    fn lowering_fock_four() {
        let c = cfg(6);
        let ops = build_operators(c);
        let four = FockVector::fock(4, c).unwrap();
        let out = &ops.lower * four.amplitudes();
        let three = FockVector::fock(3, c).unwrap();
        let diff = (&out - three.amplitudes() * C64::from(2.0)).norm();
        assert!(diff < 1e-15, "a|4> should be 2|3>, residual {diff:.3e}");
    }

    #[test]
    fn number_operator_is_diagonal_count() {
        let ops = build_operators(cfg(5));
        for n in 0..5 {
            assert!((ops.number[(n, n)] - C64::from(n as f64)).norm() < 1e-14);
        }
    }

    #[test]
    fn quadratures_hermitian() {
        let ops = build_operators(cfg(20));
        assert!(hermiticity_residual(&ops.quad_i) < 1e-12);
        assert!(hermiticity_residual(&ops.quad_q) < 1e-12);
        assert!(hermiticity_residual(&ops.number) < 1e-12);
    }

    #[test]
    fn coherent_zero_is_vacuum() {
        let c = cfg(10);
        let state = coherent_state(C64::from(0.0), c).unwrap();
        assert!((state.population(0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn coherent_half_moments() {
        let c = cfg(30);
        let ops = build_operators(c);
        let state = coherent_state(C64::from(0.5), c).unwrap();
        let mi = moments(&state, &ops.quad_i).unwrap();
        assert!((mi.mean - 1.0).abs() < 1e-10, "⟨I⟩ = {:.12}", mi.mean);
        assert!((mi.variance - 1.0).abs() < 1e-8);
        let mn = moments(&state, &ops.number).unwrap();
        assert!((mn.mean - 0.25).abs() < 1e-10);
        let mq = moments(&state, &ops.quad_q).unwrap();
        assert!(mq.mean.abs() < 1e-10);
    }

    #[test]
    fn coherent_truncation_guard_fires() {
        let c = cfg(8);
        assert!(matches!(
            coherent_state(C64::from(2.5), c),
            Err(Error::Truncation(_))
        ));
    }

    #[test]
    fn displacement_zero_is_identity() {
        let c = cfg(12);
        let d = displacement_operator(C64::from(0.0), c);
        assert!(max_abs_diff(&d, &CMat::identity(12, 12)) < 1e-14);
    }

    #[test]
    fn displacement_on_vacuum_matches_coherent() {
        let c = cfg(30);
        let beta = C64::new(0.4, -0.3);
        let d = displacement_operator(beta, c);
        let vac = FockVector::vacuum(c);
        let displaced = FockVector::new(d * vac.amplitudes()).unwrap();
        let target = coherent_state(beta, c).unwrap();
        assert!(fidelity(&displaced, &target) > 1.0 - 1e-12);
    }

    // D(i phi)^n |alpha> = e^{i n phi Re alpha} |alpha + n i phi>.
    #[test]
    fn repeated_displacement_phase_relation() {
        let c = cfg(40);
        let alpha = C64::from(0.3);
        let phi = 0.159;
        let n = 2;
        let d = displacement_operator(C64::new(0.0, phi), c);
        let mut lhs = coherent_state(alpha, c).unwrap().amplitudes().clone();
        for _ in 0..n {
            lhs = &d * lhs;
        }
        let phase = C64::new(0.0, n as f64 * phi * alpha.re).exp();
        let rhs = coherent_state(alpha + C64::new(0.0, n as f64 * phi), c)
            .unwrap()
            .amplitudes()
            * phase;
        let diff = (lhs - rhs).norm();
        assert!(diff < 1e-8, "residual {diff:.3e}");
    }

    #[test]
    fn displacement_inverse_pair() {
        let c = cfg(40);
        let beta = C64::new(0.0, 0.4);
        let prod = displacement_operator(beta, c) * displacement_operator(-beta, c);
        // The truncated generator is exactly anti-Hermitian, so the product
        // is the identity everywhere, not just away from the top levels.
        assert!(max_abs_diff(&prod, &CMat::identity(40, 40)) < 1e-8);
    }

    #[test]
    fn squeeze_zero_is_identity() {
        let c = cfg(12);
        let s = squeeze_operator(C64::from(0.0), c).unwrap();
        assert!(max_abs_diff(&s, &CMat::identity(12, 12)) < 1e-14);
    }

    #[test]
    fn squeezed_vacuum_variances() {
        let c = cfg(60);
        let ops = build_operators(c);
        let r = 0.5;
        let s = squeeze_operator(C64::from(r), c).unwrap();
        let vac = FockVector::vacuum(c);
        let sq = FockVector::new(s * vac.amplitudes()).unwrap();
        sq.check_truncation().unwrap();
        let mi = moments(&sq, &ops.quad_i).unwrap();
        let mq = moments(&sq, &ops.quad_q).unwrap();
        assert!(
            (mi.variance - (-2.0 * r).exp()).abs() < 1e-6,
            "(ΔI)² = {:.8}",
            mi.variance
        );
        assert!((mi.variance * mq.variance - 1.0).abs() < 1e-5);
    }

    #[test]
    fn squeeze_guard_fires_for_large_eps() {
        let c = cfg(10);
        assert!(matches!(
            squeeze_operator(C64::from(1.5), c),
            Err(Error::Truncation(_))
        ));
    }

    #[test]
    fn moments_on_fock_one() {
        let c = cfg(10);
        let ops = build_operators(c);
        let one = FockVector::fock(1, c).unwrap();
        let m = moments(&one, &ops.quad_i).unwrap();
        assert!(m.mean.abs() < 1e-12);
        assert!((m.variance - 3.0).abs() < 1e-12);
    }

    #[test]
    fn moments_vacuum() {
        let c = cfg(10);
        let ops = build_operators(c);
        let vac = FockVector::vacuum(c);
        let m = moments(&vac, &ops.quad_i).unwrap();
        assert!(m.mean.abs() < 1e-14 && (m.variance - 1.0).abs() < 1e-12);
    }

    #[test]
    fn moments_rejects_non_hermitian() {
        let c = cfg(6);
        let ops = build_operators(c);
        assert!(matches!(
            moments(&FockVector::vacuum(c), &ops.lower),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn fidelity_examples() {
        let c = cfg(30);
        let v = coherent_state(C64::new(0.2, 0.1), c).unwrap();
        assert!((fidelity(&v, &v) - 1.0).abs() < 1e-12);
        let zero = FockVector::vacuum(c);
        let one = FockVector::fock(1, c).unwrap();
        assert!(fidelity(&zero, &one) < 1e-15);
        let half = coherent_state(C64::from(0.5), c).unwrap();
        assert!((fidelity(&zero, &half) - (-0.25f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn thermal_state_limits() {
        let c = cfg(60);
        let zero = thermal_state(0.0, c).unwrap();
        assert!((zero.population(0) - 1.0).abs() < 1e-12);
        assert!((zero.purity() - 1.0).abs() < 1e-12);

        let nbar = 1.12;
        let th = thermal_state(nbar, c).unwrap();
        let ops = build_operators(c);
        let mn = moments(&th, &ops.number).unwrap();
        assert!((mn.mean - nbar).abs() < 1e-4, "⟨n⟩ = {:.6}", mn.mean);
        let mi = moments(&th, &ops.quad_i).unwrap();
        assert!(
            (mi.variance - (2.0 * nbar + 1.0)).abs() < 1e-3,
            "(ΔI)² = {:.6}",
            mi.variance
        );
    }

    #[test]
    fn thermal_truncation_guard() {
        assert!(matches!(
            thermal_state(5.0, cfg(10)),
            Err(Error::Truncation(_))
        ));
    }

    #[test]
    fn commutator_expectation_is_2i() {
        let c = cfg(30);
        let ops = build_operators(c);
        let comm = &ops.quad_i * &ops.quad_q - &ops.quad_q * &ops.quad_i;
        for state in [
            FockVector::vacuum(c),
            FockVector::fock(3, c).unwrap(),
            coherent_state(C64::new(0.5, 0.2), c).unwrap(),
        ] {
            let val = state.expect(&comm);
            assert!((val - C64::new(0.0, 2.0)).norm() < 1e-8, "⟨[I,Q]⟩ = {val}");
        }
    }

    #[test]
    fn uncertainty_product_bound_on_random_states() {
        use rand::{Rng, SeedableRng};
        let c = cfg(24);
        let ops = build_operators(c);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        for _ in 0..50 {
            // Support on the lower half keeps the truncation honest.
            let amps = CVec::from_fn(24, |n, _| {
                if n < 12 {
                    C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
                } else {
                    C64::from(0.0)
                }
            });
            let state = FockVector::new(amps).unwrap();
            let mi = moments(&state, &ops.quad_i).unwrap();
            let mq = moments(&state, &ops.quad_q).unwrap();
            assert!(
                mi.variance * mq.variance >= 1.0 - 1e-8,
                "uncertainty product {:.6} below bound",
                mi.variance * mq.variance
            );
        }
    }

    // <alpha_i|alpha_j> = exp(alpha_i* alpha_j - |alpha_i|^2/2 - |alpha_j|^2/2)
    #[test]
    fn coherent_overlap_formula() {
        let c = cfg(40);
        let alphas = [
            C64::new(0.0, 0.0),
            C64::new(0.5, 0.0),
            C64::new(-0.3, 0.4),
            C64::new(0.0, -1.0),
            C64::new(0.7, 0.7),
        ];
        for &ai in &alphas {
            for &aj in &alphas {
                let vi = coherent_state(ai, c).unwrap();
                let vj = coherent_state(aj, c).unwrap();
                let lhs = vi.inner(&vj);
                let rhs = (ai.conj() * aj - ai.norm_sqr() / 2.0 - aj.norm_sqr() / 2.0).exp();
                assert!((lhs - rhs).norm() < 1e-8, "overlap mismatch at {ai}, {aj}");
            }
        }
    }

    #[test]
    fn operator_exponential_semigroup() {
        let c = cfg(40);
        let beta = C64::new(0.2, 0.3);
        let half_sq = displacement_operator(beta / 2.0, c);
        let full = displacement_operator(beta, c);
        assert!(max_abs_diff(&(&half_sq * &half_sq), &full) < 1e-8);

        let eps = C64::new(0.3, -0.1);
        let s_half = squeeze_operator(eps / 2.0, c).unwrap();
        let s_full = squeeze_operator(eps, c).unwrap();
        assert!(max_abs_diff(&(&s_half * &s_half), &s_full) < 1e-8);
    }

    #[test]
    fn fast_quadrature_moments_match_dense_path() {
        let c = cfg(40);
        let ops = build_operators(c);
        let kp_like = displacement_operator(C64::new(0.2, 0.35), c);
        let state = FockVector::new(kp_like * coherent_state(C64::from(0.4), c).unwrap().amplitudes())
            .unwrap();
        let fast = quadrature_moments(&state);
        let dense = moments(&state, &ops.quad_i).unwrap();
        assert!((fast.mean - dense.mean).abs() < 1e-12);
        assert!((fast.variance - dense.variance).abs() < 1e-12);
    }

    #[test]
    fn density_matrix_validation() {
        let c = cfg(10);
        let vac = FockVector::vacuum(c);
        let rho = DensityMatrix::pure(&vac);
        assert!((rho.purity() - 1.0).abs() < 1e-12);
        assert!(DensityMatrix::new(rho.matrix().clone()).is_ok());

        let mut bad = rho.matrix().clone();
        bad[(0, 1)] = C64::from(0.5);
        assert!(DensityMatrix::new(bad).is_err());
    }
}
