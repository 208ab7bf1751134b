//! Qubit pure dephasing from 1/f frequency noise.
//!
//! The control sequence turns low-frequency qubit-frequency noise into one
//! random phase per measurement block. This module synthesizes band-limited
//! 1/f noise, evaluates the block filter function, integrates the resulting
//! phase correlation matrix, and produces the noise-averaged conditioned
//! density matrix
//!
//! ```text
//! rho_r = 2^{-2s} Σ_{q1,q2} i^{r·(q1-q2)} e^{-(q1-q2)W(q1-q2)/2}
//!         D^{s-2t1} |alpha><alpha| D†^{s-2t2},   t_k = Σ q_k,
//! ```
//!
//! contracted in O(s^3) through a bivariate generating polynomial when the
//! correlation matrix is diagonal, and by Monte Carlo over noise vectors
//! otherwise.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fockspace::{coherent_state, displacement_operator, DensityMatrix, HilbertConfig};
use crate::linalg::{outer, CMat};
use crate::seeding::stream_rng;

/// Band-limited 1/f spectrum S(omega) = a_omega / |omega| on
/// [omega_min, omega_max], in (rad/s)^2 per (rad/s).
#[derive(Debug, Clone, Copy)]
pub struct NoiseSpectrum {
    /// 1/f amplitude, (rad/s)^2.
    pub a_omega: f64,
    pub omega_min: f64,
    pub omega_max: f64,
}

/// Band margins: the integration band reaches a factor `v` below the
/// synthesis fundamental and a factor `u` above the block bandwidth.
pub const BAND_FACTOR_LOW: f64 = 10.0;
pub const BAND_FACTOR_HIGH: f64 = 10.0;

impl NoiseSpectrum {
    pub fn new(a_omega: f64, omega_min: f64, omega_max: f64) -> Result<Self> {
        if a_omega < 0.0 {
            return Err(Error::Config(format!(
                "noise amplitude must be non-negative, got {a_omega}"
            )));
        }
        if !(0.0 < omega_min && omega_min < omega_max) {
            return Err(Error::Config(format!(
                "need 0 < omega_min < omega_max, got [{omega_min}, {omega_max}]"
            )));
        }
        Ok(Self {
            a_omega,
            omega_min,
            omega_max,
        })
    }

    /// Band for a protocol whose simulation window is `t_bar`:
    /// omega_min = 2 pi / (v t_bar), omega_max = u N_p 2 pi / T_e.
    pub fn for_protocol(a_omega: f64, timing: &ProtocolTiming, t_bar: f64) -> Result<Self> {
        let omega_min = 2.0 * std::f64::consts::PI / (BAND_FACTOR_LOW * t_bar);
        let omega_max =
            BAND_FACTOR_HIGH * timing.n_p as f64 * 2.0 * std::f64::consts::PI / timing.t_e();
        Self::new(a_omega, omega_min, omega_max)
    }

    /// Spectral density inside the band, zero outside.
    pub fn psd(&self, omega: f64) -> f64 {
        let w = omega.abs();
        if w < self.omega_min || w > self.omega_max {
            0.0
        } else {
            self.a_omega / w
        }
    }
}

/// Timing of one measurement block: `n_p` qubit inversions spaced half an
/// oscillator period apart, plus dead time between blocks.
#[derive(Debug, Clone, Copy)]
pub struct ProtocolTiming {
    pub n_p: usize,
    /// Oscillator angular frequency, rad/s.
    pub omega_r: f64,
    /// Dead time between consecutive blocks, s.
    pub repetition_gap: f64,
}

impl ProtocolTiming {
    pub fn new(n_p: usize, omega_r: f64, repetition_gap: f64) -> Result<Self> {
        if n_p == 0 {
            return Err(Error::Config("pulse count must be positive".into()));
        }
        if omega_r <= 0.0 {
            return Err(Error::Config(format!(
                "oscillator frequency must be positive, got {omega_r}"
            )));
        }
        if repetition_gap < 0.0 {
            return Err(Error::Config("repetition gap must be non-negative".into()));
        }
        Ok(Self {
            n_p,
            omega_r,
            repetition_gap,
        })
    }

    /// Inversion spacing: half the oscillator period.
    pub fn pulse_spacing(&self) -> f64 {
        std::f64::consts::PI / self.omega_r
    }

    /// Interaction window T_e = N_p pi / omega_r.
    pub fn t_e(&self) -> f64 {
        self.n_p as f64 * self.pulse_spacing()
    }

    /// Start-to-start spacing of consecutive blocks.
    pub fn block_period(&self) -> f64 {
        self.t_e() + self.repetition_gap
    }
}

/// One synthesized noise realization: Fourier coefficients on the grid
/// omega_n = n · 2 pi / t_bar, with Hermitian symmetry implied so the
/// time-domain signal is real.
#[derive(Debug, Clone)]
pub struct NoiseTrajectory {
    coefficients: Vec<C64>,
    omega_grid: Vec<f64>,
    pub t_bar: f64,
}

impl NoiseTrajectory {
    /// delta omega_ge(t) = 2 Re Σ_n a_n e^{i omega_n t}.
    pub fn evaluate(&self, t: f64) -> f64 {
        2.0 * self
            .coefficients
            .iter()
            .zip(&self.omega_grid)
            .map(|(a, &w)| (a * C64::new(0.0, w * t).exp()).re)
            .sum::<f64>()
    }

    pub fn coefficients(&self) -> &[C64] {
        &self.coefficients
    }

    pub fn omega_grid(&self) -> &[f64] {
        &self.omega_grid
    }
}

/// Draw a noise realization on the Fourier grid of period `t_bar`:
/// <|a_n|^2> = (2 pi / t_bar) S(omega_n).
pub fn synthesize_noise<R: Rng>(
    spec: &NoiseSpectrum,
    t_bar: f64,
    rng: &mut R,
) -> Result<NoiseTrajectory> {
    if t_bar <= 0.0 {
        return Err(Error::Config("synthesis period must be positive".into()));
    }
    let d_omega = 2.0 * std::f64::consts::PI / t_bar;
    if spec.omega_min > d_omega {
        return Err(Error::Config(format!(
            "Fourier grid too coarse: omega_min = {:.3e} rad/s exceeds the grid \
             spacing 2 pi / t_bar = {d_omega:.3e} rad/s",
            spec.omega_min
        )));
    }
    let n_max = (spec.omega_max / d_omega).floor() as usize;
    let mut coefficients = Vec::with_capacity(n_max);
    let mut omega_grid = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let omega = n as f64 * d_omega;
        let var = d_omega * spec.psd(omega);
        let sigma = (var / 2.0).sqrt();
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        coefficients.push(C64::new(sigma * re, sigma * im));
        omega_grid.push(omega);
    }
    Ok(NoiseTrajectory {
        coefficients,
        omega_grid,
        t_bar,
    })
}

/// The Fourier transform of the ±1 block modulation,
/// chi(t) = sgn(cos omega_r t) on [0, T_e].
#[derive(Debug, Clone, Copy)]
pub struct CpmgFilter {
    timing: ProtocolTiming,
}

/// Build the filter for the given block timing.
pub fn cpmg_filter(timing: ProtocolTiming) -> CpmgFilter {
    CpmgFilter { timing }
}

impl CpmgFilter {
    /// chi~(omega) = Integral_0^{T_e} chi(t) e^{-i omega t} dt.
    ///
    /// The sign flips sit at odd multiples of a quarter oscillator period,
    /// so the sum over segments telescopes into a geometric series; near the
    /// series poles (odd harmonics of omega_r) the direct segment sum is
    /// used instead.
    pub fn evaluate(&self, omega: f64) -> C64 {
        let h = 0.5 * self.timing.pulse_spacing();
        let np = self.timing.n_p;
        let t_e = self.timing.t_e();
        if omega.abs() * t_e < 1e-9 {
            // chi spends equal signed time at ±1 over [0, T_e].
            return C64::new(0.0, -omega * self.segment_first_moment());
        }
        let z = C64::new(0.0, -2.0 * omega * h).exp();
        let denom = C64::from(1.0) + z;
        if denom.norm() < 1e-3 {
            return self.segment_sum(omega);
        }
        let minus_z_pow = if np % 2 == 0 {
            z.powu(np as u32)
        } else {
            -z.powu(np as u32)
        };
        let flip_sum = -C64::new(0.0, -omega * h).exp() * (C64::from(1.0) - minus_z_pow) / denom;
        let e_te = C64::new(0.0, -omega * t_e).exp();
        let sign_np = if np % 2 == 0 { 1.0 } else { -1.0 };
        (C64::from(1.0) - e_te * sign_np + flip_sum * 2.0) / C64::new(0.0, omega)
    }

    /// |chi~(omega)|^2.
    pub fn power(&self, omega: f64) -> f64 {
        self.evaluate(omega).norm_sqr()
    }

    // Direct sum over the constant-sign segments; exact and stable anywhere.
    fn segment_sum(&self, omega: f64) -> C64 {
        let h = 0.5 * self.timing.pulse_spacing();
        let t_e = self.timing.t_e();
        let np = self.timing.n_p;
        let mut total = C64::from(0.0);
        let mut a = 0.0;
        for k in 0..=np {
            let b = if k == np { t_e } else { (2 * k + 1) as f64 * h };
            let mid = 0.5 * (a + b);
            let half = 0.5 * (b - a);
            let sinc = if (omega * half).abs() < 1e-8 {
                1.0
            } else {
                (omega * half).sin() / (omega * half)
            };
            let seg = C64::new(0.0, -omega * mid).exp() * ((b - a) * sinc);
            total += if k % 2 == 0 { seg } else { -seg };
            a = b;
        }
        total
    }

    // Integral of t·chi(t), for the small-omega expansion.
    fn segment_first_moment(&self) -> f64 {
        let h = 0.5 * self.timing.pulse_spacing();
        let t_e = self.timing.t_e();
        let np = self.timing.n_p;
        let mut total = 0.0;
        let mut a = 0.0;
        for k in 0..=np {
            let b = if k == np { t_e } else { (2 * k + 1) as f64 * h };
            let seg = 0.5 * (b * b - a * a);
            total += if k % 2 == 0 { seg } else { -seg };
            a = b;
        }
        total
    }
}

/// Correlation matrix of the per-block readout phases, rad^2. Stationary in
/// the block index, so it is Toeplitz.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    mat: DMatrix<f64>,
}

impl CorrelationMatrix {
    /// Validate symmetry and positive semidefiniteness and wrap.
    pub fn new(mat: DMatrix<f64>) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::Contract("correlation matrix must be square".into()));
        }
        let sym = (0..mat.nrows())
            .all(|i| (0..mat.ncols()).all(|j| (mat[(i, j)] - mat[(j, i)]).abs() < 1e-12));
        if !sym {
            return Err(Error::Contract(
                "correlation matrix must be symmetric".into(),
            ));
        }
        let eig = mat.clone().symmetric_eigen().eigenvalues;
        let max = eig.iter().cloned().fold(0.0f64, f64::max);
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -1e-10 * max.max(1e-300) {
            return Err(Error::Contract(format!(
                "correlation matrix is not positive semidefinite: min eigenvalue {min:.3e}"
            )));
        }
        Ok(Self { mat })
    }

    /// Diagonal matrix with constant variance.
    pub fn scalar(variance: f64, s: usize) -> Result<Self> {
        if variance < 0.0 {
            return Err(Error::Contract("variance must be non-negative".into()));
        }
        Ok(Self {
            mat: DMatrix::from_diagonal_element(s, s, variance),
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.mat[(i, i)]).collect()
    }

    /// Largest |off-diagonal| / largest diagonal.
    pub fn max_offdiagonal_ratio(&self) -> f64 {
        let s = self.dim();
        let dmax = self
            .diagonal()
            .into_iter()
            .fold(0.0f64, f64::max)
            .max(1e-300);
        let mut omax = 0.0f64;
        for i in 0..s {
            for j in 0..s {
                if i != j {
                    omax = omax.max(self.mat[(i, j)].abs());
                }
            }
        }
        omax / dmax
    }

    pub fn is_diagonal(&self, tol: f64) -> bool {
        self.max_offdiagonal_ratio() <= tol
    }
}

// Adaptive Simpson quadrature with a pre-split fine enough to see the
// integrand's oscillations.
fn adaptive_simpson<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    initial_panels: usize,
    rel_tol: f64,
) -> Result<f64> {
    fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
        evals: &mut usize,
    ) -> Result<f64> {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        *evals += 2;
        if *evals > 200_000_000 {
            return Err(Error::Numeric(
                "quadrature exceeded its evaluation budget".into(),
            ));
        }
        let left = simpson(a, m, fa, flm, fm);
        let right = simpson(m, b, fm, frm, fb);
        let err = left + right - whole;
        if err.abs() <= 15.0 * tol || depth >= 48 {
            if depth >= 48 && err.abs() > 15.0 * tol {
                return Err(Error::Numeric(format!(
                    "quadrature failed to converge on [{a:.6e}, {b:.6e}]: residual {err:.3e}"
                )));
            }
            return Ok(left + right + err / 15.0);
        }
        let l = recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth + 1, evals)?;
        let r = recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth + 1, evals)?;
        Ok(l + r)
    }

    let n = initial_panels.max(8);
    // Coarse pass to set the absolute tolerance scale.
    let mut coarse = 0.0;
    let mut panels = Vec::with_capacity(n);
    for k in 0..n {
        let pa = a + (b - a) * k as f64 / n as f64;
        let pb = a + (b - a) * (k + 1) as f64 / n as f64;
        let pm = 0.5 * (pa + pb);
        let (fa, fm, fb) = (f(pa), f(pm), f(pb));
        let w = simpson(pa, pb, fa, fm, fb);
        coarse += w.abs();
        panels.push((pa, pb, fa, fm, fb, w));
    }
    let tol = rel_tol * coarse.max(1e-300) / n as f64;
    let mut total = 0.0;
    let mut evals = 3 * n;
    for (pa, pb, fa, fm, fb, w) in panels {
        total += recurse(f, pa, pb, fa, fm, fb, w, tol, 0, &mut evals)?;
    }
    Ok(total)
}

/// Phase covariance between blocks separated by `delta_t`.
///
/// The readout phase of one block is half the filtered frequency integral,
/// phi_m = (1/2) ∫ chi(t) delta_omega(t) dt — each energy branch carries half
/// the frequency shift — so with the ±1-normalized filter the covariance is
/// (1/4) ∫ S(omega) e^{i omega delta_t} |chi~(omega)|^2 d omega over both
/// frequency signs. This normalization is what the closed-form diagonal
/// estimate [`diagonal_approx`] corresponds to.
fn phase_covariance(
    spec: &NoiseSpectrum,
    filter: &CpmgFilter,
    timing: &ProtocolTiming,
    delta_t: f64,
) -> Result<f64> {
    if spec.a_omega == 0.0 {
        return Ok(0.0);
    }
    let f = |omega: f64| 0.5 * spec.psd(omega) * (omega * delta_t).cos() * filter.power(omega);
    // Resolve both the filter structure (scale 2 pi / T_e) and the
    // cos(omega delta_t) oscillation.
    let cycles = (spec.omega_max - spec.omega_min) * (timing.t_e() + delta_t.abs())
        / (2.0 * std::f64::consts::PI);
    let panels = (8.0 * cycles).ceil().max(64.0) as usize;
    adaptive_simpson(&f, spec.omega_min, spec.omega_max, panels, 1e-7)
}

/// Correlation matrix W of the s per-block phases for the given spectrum and
/// timing, by adaptive quadrature of the filtered spectral density.
pub fn correlation_matrix(
    spec: &NoiseSpectrum,
    timing: &ProtocolTiming,
    s: usize,
) -> Result<CorrelationMatrix> {
    if s == 0 {
        return Err(Error::Config("need at least one block".into()));
    }
    let filter = cpmg_filter(*timing);
    let period = timing.block_period();
    let lags: Vec<f64> = (0..s)
        .into_par_iter()
        .map(|k| phase_covariance(spec, &filter, timing, k as f64 * period))
        .collect::<Result<Vec<_>>>()?;
    let mat = DMatrix::from_fn(s, s, |i, j| lags[i.abs_diff(j)]);
    CorrelationMatrix::new(mat)
}

/// Closed-form diagonal estimate 0.424 · a_omega · (pi/omega_r)^2 · N_p.
pub fn diagonal_approx(spec: &NoiseSpectrum, timing: &ProtocolTiming) -> f64 {
    let per = std::f64::consts::PI / timing.omega_r;
    0.424 * spec.a_omega * per * per * timing.n_p as f64
}

/// A noise-averaged conditioned state and the probability of its record.
#[derive(Debug, Clone)]
pub struct DephasedState {
    pub rho: DensityMatrix,
    /// Noise-averaged probability of the measurement record.
    pub prob: f64,
}

fn phase_factor(r: i8) -> C64 {
    // i^r for r = ±1.
    if r == 1 {
        C64::new(0.0, 1.0)
    } else {
        C64::new(0.0, -1.0)
    }
}

/// Bivariate generating-polynomial contraction: coefficients c(t1, t2) of
/// prod_j (1 + x i^{r_j} e_j + y i^{-r_j} e_j + xy) with e_j = e^{-w_jj/2}.
fn contraction_table(record: &[i8], diag: &[f64]) -> Vec<Vec<C64>> {
    let s = record.len();
    let mut table = vec![vec![C64::from(0.0); s + 1]; s + 1];
    table[0][0] = C64::from(1.0);
    for (j, &r) in record.iter().enumerate() {
        let e = (-diag[j] / 2.0).exp();
        let fx = phase_factor(r) * e;
        let fy = fx.conj();
        let mut next = vec![vec![C64::from(0.0); s + 1]; s + 1];
        for t1 in 0..=j + 1 {
            for t2 in 0..=j + 1 {
                let mut acc = table[t1][t2];
                if t1 > 0 {
                    acc += table[t1 - 1][t2] * fx;
                }
                if t2 > 0 {
                    acc += table[t1][t2 - 1] * fy;
                }
                if t1 > 0 && t2 > 0 {
                    acc += table[t1 - 1][t2 - 1];
                }
                next[t1][t2] = acc;
            }
        }
        table = next;
    }
    table
}

/// Displaced kets D^{s-2t} |alpha> = e^{i (s-2t) phi Re alpha}
/// |alpha + i (s-2t) phi> for t = 0..=s.
fn displaced_kets(
    s: usize,
    alpha0: C64,
    phi: f64,
    cfg: HilbertConfig,
) -> Result<Vec<nalgebra::DVector<C64>>> {
    (0..=s)
        .map(|t| {
            let m = s as f64 - 2.0 * t as f64;
            let ket = coherent_state(alpha0 + C64::new(0.0, m * phi), cfg)?;
            let phase = C64::new(0.0, m * phi * alpha0.re).exp();
            Ok(ket.amplitudes() * phase)
        })
        .collect()
}

/// Exact noise-averaged conditioned state for a diagonal correlation matrix.
pub fn dephased_density_matrix_exact(
    record: &[i8],
    phi: f64,
    diag: &[f64],
    alpha0: C64,
    cfg: HilbertConfig,
) -> Result<DephasedState> {
    let s = record.len();
    if s == 0 || s > 24 {
        return Err(Error::Config(format!(
            "exact contraction supports 1 <= s <= 24, got {s}"
        )));
    }
    if diag.len() != s {
        return Err(Error::Contract(
            "correlation diagonal length must match the record".into(),
        ));
    }
    let table = contraction_table(record, diag);
    let kets = displaced_kets(s, alpha0, phi, cfg)?;
    let dim = cfg.dim();
    let mut rho = CMat::zeros(dim, dim);
    for t1 in 0..=s {
        for t2 in 0..=s {
            if table[t1][t2].norm() > 0.0 {
                rho += outer(&kets[t1], &kets[t2]) * table[t1][t2];
            }
        }
    }
    rho /= C64::from(4f64.powi(s as i32));
    let trace = rho.trace().re;
    if trace < 1e-300 {
        return Err(Error::Underflow {
            context: "noise-averaged record probability".into(),
            log_prob: f64::NEG_INFINITY,
        });
    }
    Ok(DephasedState {
        rho: DensityMatrix::new(rho / C64::from(trace))?,
        prob: trace,
    })
}

/// Monte Carlo noise average over full-covariance phase vectors, using the
/// pure-state product form per sample.
pub fn dephased_density_matrix_mc(
    record: &[i8],
    phi: f64,
    w: &CorrelationMatrix,
    alpha0: C64,
    cfg: HilbertConfig,
    n_samples: usize,
    seed: u64,
) -> Result<DephasedState> {
    let s = record.len();
    if s == 0 || s > 24 {
        return Err(Error::Config(format!(
            "noise averaging supports 1 <= s <= 24, got {s}"
        )));
    }
    if w.dim() != s {
        return Err(Error::Contract(
            "correlation matrix size must match the record".into(),
        ));
    }
    if n_samples == 0 {
        return Err(Error::Config("need at least one noise sample".into()));
    }
    // Factor W = L L^T; fall back to an eigenvalue square root when the
    // matrix is only semidefinite.
    let l = match w.matrix().clone().cholesky() {
        Some(chol) => chol.l(),
        None => {
            let eig = w.matrix().clone().symmetric_eigen();
            let sqrt_vals =
                DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
            &eig.eigenvectors * sqrt_vals
        }
    };
    let d = displacement_operator(C64::new(0.0, phi), cfg);
    let d_dag = d.adjoint();
    let start = coherent_state(alpha0, cfg)?;
    let dim = cfg.dim();

    let n_chunks = 64usize;
    let per_chunk = n_samples.div_ceil(n_chunks);
    let rho_sum = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = stream_rng(seed, chunk as u64);
            let mut local = CMat::zeros(dim, dim);
            let todo = per_chunk.min(n_samples.saturating_sub(chunk * per_chunk));
            for _ in 0..todo {
                let z = nalgebra::DVector::from_fn(s, |_, _| rng.sample::<f64, _>(StandardNormal));
                let phases = &l * z;
                let mut v = start.amplitudes().clone();
                for (m, &r) in record.iter().enumerate() {
                    let noise = C64::new(0.0, phases[m]).exp();
                    v = (&d * &v + (&d_dag * &v) * (phase_factor(r) * noise)) * C64::from(-0.5);
                }
                local += outer(&v, &v);
            }
            local
        })
        .reduce(|| CMat::zeros(dim, dim), |a, b| a + b);

    let rho = rho_sum / C64::from(n_samples as f64);
    let trace = rho.trace().re;
    if trace < 1e-300 {
        return Err(Error::Underflow {
            context: "noise-averaged record probability".into(),
            log_prob: f64::NEG_INFINITY,
        });
    }
    Ok(DephasedState {
        rho: DensityMatrix::new(rho / C64::from(trace))?,
        prob: trace,
    })
}

/// Number of Monte Carlo samples used by the full-covariance fallback.
pub const DEFAULT_NOISE_SAMPLES: usize = 100_000;

/// Noise-averaged conditioned state for the record `r`. Diagonal correlation
/// matrices take the exact contraction; full matrices fall back to Monte
/// Carlo with [`DEFAULT_NOISE_SAMPLES`] samples seeded by `seed`.
pub fn dephased_density_matrix(
    record: &[i8],
    phi: f64,
    w: &CorrelationMatrix,
    alpha0: C64,
    cfg: HilbertConfig,
    seed: u64,
) -> Result<DephasedState> {
    if w.dim() != record.len() {
        return Err(Error::Contract(
            "correlation matrix size must match the record".into(),
        ));
    }
    if w.is_diagonal(1e-12) {
        dephased_density_matrix_exact(record, phi, &w.diagonal(), alpha0, cfg)
    } else {
        dephased_density_matrix_mc(record, phi, w, alpha0, cfg, DEFAULT_NOISE_SAMPLES, seed)
    }
}

/// One row of the variance-versus-steps comparison.
#[derive(Debug, Clone, Copy)]
pub struct NoisyVarianceRow {
    pub s: usize,
    /// Probability-weighted average over all records, no noise.
    pub weighted_noiseless: f64,
    /// Probability-weighted average over all records, with noise.
    pub weighted_noisy: f64,
    /// Variance of the most likely record, no noise.
    pub most_likely_noiseless: f64,
    /// Variance of the most likely record, with noise.
    pub most_likely_noisy: f64,
}

// Moments of the unnormalized noise-averaged state, evaluated through exact
// coherent-state overlaps (no truncation): returns (trace, <I>·tr, <I^2>·tr).
fn contraction_moments(record: &[i8], phi: f64, diag: &[f64], alpha0: C64) -> (f64, f64, f64) {
    let s = record.len();
    let table = contraction_table(record, diag);
    let alphas: Vec<C64> = (0..=s)
        .map(|t| alpha0 + C64::new(0.0, (s as f64 - 2.0 * t as f64) * phi))
        .collect();
    let phases: Vec<C64> = (0..=s)
        .map(|t| C64::new(0.0, (s as f64 - 2.0 * t as f64) * phi * alpha0.re).exp())
        .collect();
    let mut tr = C64::from(0.0);
    let mut tr_i = C64::from(0.0);
    let mut tr_i2 = C64::from(0.0);
    for t1 in 0..=s {
        for t2 in 0..=s {
            let c = table[t1][t2];
            if c.norm() == 0.0 {
                continue;
            }
            let (a1, a2) = (alphas[t1], alphas[t2]);
            // <a2|a1> with the displacement phases attached.
            let ovl = (a2.conj() * a1 - a1.norm_sqr() / 2.0 - a2.norm_sqr() / 2.0).exp()
                * phases[t1]
                * phases[t2].conj();
            let quad = a1 + a2.conj();
            let weight = c * ovl;
            tr += weight;
            tr_i += weight * quad;
            tr_i2 += weight * (C64::from(1.0) + quad * quad);
        }
    }
    let norm = 4f64.powi(s as i32);
    (tr.re / norm, tr_i.re / norm, tr_i2.re / norm)
}

/// Variance against step count with and without dephasing, averaged over all
/// records with their noise-averaged probabilities. The per-block phase
/// variance is taken from the numerically integrated correlation matrix.
pub fn noisy_variance_curve(
    s_max: usize,
    phi: f64,
    spec: &NoiseSpectrum,
    timing: &ProtocolTiming,
    alpha0: C64,
) -> Result<Vec<NoisyVarianceRow>> {
    if s_max == 0 || s_max > 24 {
        return Err(Error::Config(format!(
            "variance curve supports 1 <= s_max <= 24, got {s_max}"
        )));
    }
    let w_ii = correlation_matrix(spec, timing, 1)?.matrix()[(0, 0)];
    let mut rows = Vec::with_capacity(s_max);
    for s in 1..=s_max {
        let mut acc = [0.0f64; 4]; // weight+var sums with/without noise
        let mut best = (0.0f64, 0.0f64, 0.0f64); // weight, noisy var, clean var
        let mut total_weight = 0.0;
        for n in 0..=s {
            let record: Vec<i8> = (0..s).map(|k| if k < n { 1 } else { -1 }).collect();
            let multiplicity = crate::analytic::binomial_big(s, n)
                .to_string()
                .parse::<f64>()
                .unwrap_or(f64::INFINITY);
            let noisy = contraction_moments(&record, phi, &vec![w_ii; s], alpha0);
            let clean = contraction_moments(&record, phi, &vec![0.0; s], alpha0);
            let var = |m: (f64, f64, f64)| -> f64 {
                let mean = m.1 / m.0;
                m.2 / m.0 - mean * mean
            };
            let weight = multiplicity * noisy.0;
            total_weight += weight;
            acc[0] += weight * var(noisy);
            acc[1] += weight;
            acc[2] += multiplicity * clean.0 * var(clean);
            acc[3] += multiplicity * clean.0;
            if weight > best.0 {
                best = (weight, var(noisy), var(clean));
            }
        }
        if (total_weight - 1.0).abs() > 1e-6 {
            return Err(Error::Numeric(format!(
                "noise-averaged record probabilities sum to {total_weight:.9} at s = {s}"
            )));
        }
        rows.push(NoisyVarianceRow {
            s,
            weighted_noiseless: acc[2] / acc[3],
            weighted_noisy: acc[0] / acc[1],
            most_likely_noiseless: best.2,
            most_likely_noisy: best.1,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fockspace::moments;
    use crate::fockspace::build_operators;
    use crate::linalg::trace_distance;
    use crate::measurement::conditioned_state;

    const OMEGA_R: f64 = 2.0 * std::f64::consts::PI * 2e8;

    fn paper_timing() -> ProtocolTiming {
        ProtocolTiming::new(50, OMEGA_R, 0.0).unwrap()
    }

    #[test]
    fn timing_relations() {
        let t = paper_timing();
        assert!((t.t_e() - 1.25e-7).abs() < 1e-15);
        assert!((t.pulse_spacing() - 2.5e-9).abs() < 1e-18);
    }

    #[test]
    fn spectrum_validation() {
        assert!(NoiseSpectrum::new(1.0, 1.0, 10.0).is_ok());
        assert!(NoiseSpectrum::new(1.0, 10.0, 1.0).is_err());
        assert!(NoiseSpectrum::new(-1.0, 1.0, 10.0).is_err());
        assert!(NoiseSpectrum::new(1.0, 0.0, 10.0).is_err());
    }

    #[test]
    fn zero_amplitude_noise_is_silent() {
        let spec = NoiseSpectrum::new(0.0, 1.0, 1e4).unwrap();
        let mut rng = stream_rng(1, 0);
        let traj = synthesize_noise(&spec, 6.28, &mut rng).unwrap();
        for t in [0.0, 0.1, 2.0] {
            assert_eq!(traj.evaluate(t), 0.0);
        }
    }

    #[test]
    fn synthesis_rejects_coarse_grid() {
        // omega_min = 1000 rad/s exceeds the grid spacing 2 pi / t_bar = 628.
        let spec = NoiseSpectrum::new(1.0, 1000.0, 1e4).unwrap();
        let mut rng = stream_rng(1, 0);
        assert!(synthesize_noise(&spec, 0.01, &mut rng).is_err());
        // A fine enough grid (spacing 1257 rad/s >= omega_min) is accepted.
        assert!(synthesize_noise(&spec, 0.005, &mut rng).is_ok());
    }

    #[test]
    fn synthesized_spectrum_has_one_over_f_slope() {
        let a_omega = 2.5e4;
        let t_bar = 1.0;
        let spec = NoiseSpectrum::new(a_omega, 2.0 * std::f64::consts::PI, 2e5).unwrap();
        let n_traj = 10_000;
        let mut sums: Vec<f64> = Vec::new();
        let mut grid: Vec<f64> = Vec::new();
        for i in 0..n_traj {
            let mut rng = stream_rng(42, i);
            let traj = synthesize_noise(&spec, t_bar, &mut rng).unwrap();
            if sums.is_empty() {
                sums = vec![0.0; traj.coefficients().len()];
                grid = traj.omega_grid().to_vec();
            }
            for (acc, a) in sums.iter_mut().zip(traj.coefficients()) {
                *acc += a.norm_sqr();
            }
        }
        // Estimated PSD: (t_bar / 2 pi) <|a_n|^2>, fit in the interior band.
        let lo = 10.0 * spec.omega_min;
        let hi = spec.omega_max / 10.0;
        let pts: Vec<(f64, f64)> = grid
            .iter()
            .zip(&sums)
            .filter(|(&w, _)| w >= lo && w <= hi)
            .map(|(&w, &sum)| {
                let psd = t_bar / (2.0 * std::f64::consts::PI) * sum / n_traj as f64;
                (w.ln(), psd.ln())
            })
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum::<f64>();
        assert!(
            (slope + 1.0).abs() < 0.1,
            "log-log spectral slope {slope:.4}, expected -1"
        );
        // Amplitude: PSD at a reference frequency matches a_omega / omega.
        let mid = pts.len() / 2;
        let wref = pts[mid].0.exp();
        let psd_ref = pts[mid].1.exp();
        assert!(
            (psd_ref / (a_omega / wref) - 1.0).abs() < 0.1,
            "PSD amplitude off by {:.3}",
            psd_ref / (a_omega / wref)
        );
    }

    #[test]
    fn zero_time_variance_matches_parseval() {
        let spec = NoiseSpectrum::new(1e3, 2.0 * std::f64::consts::PI, 1e4).unwrap();
        let t_bar = 1.0;
        let n_traj = 4000;
        let mut var = 0.0;
        let mut expected = 0.0;
        for i in 0..n_traj {
            let mut rng = stream_rng(7, i);
            let traj = synthesize_noise(&spec, t_bar, &mut rng).unwrap();
            let v = traj.evaluate(0.0);
            var += v * v;
            if i == 0 {
                let d_omega = 2.0 * std::f64::consts::PI / t_bar;
                expected = 2.0
                    * traj
                        .omega_grid()
                        .iter()
                        .map(|&w| d_omega * spec.psd(w))
                        .sum::<f64>();
            }
        }
        var /= n_traj as f64;
        // Chi-squared spread: 4 sigma with sigma ~ sqrt(2/N) relative.
        let tol = 4.0 * (2.0 / n_traj as f64).sqrt();
        assert!(
            (var / expected - 1.0).abs() < tol,
            "variance {var:.4e} vs Parseval {expected:.4e}"
        );
    }

    #[test]
    fn filter_closed_form_matches_segment_sum() {
        let filter = cpmg_filter(paper_timing());
        for k in 1..200 {
            let omega = k as f64 * 3.7e6 + 11.0;
            let fast = filter.evaluate(omega);
            let slow = filter.segment_sum(omega);
            assert!(
                (fast - slow).norm() < 1e-9 * slow.norm().max(filter.timing.t_e()),
                "mismatch at omega = {omega:.3e}: {fast} vs {slow}"
            );
        }
    }

    #[test]
    fn filter_suppresses_dc_for_even_pulse_count() {
        let filter = cpmg_filter(paper_timing());
        let t_e = filter.timing.t_e();
        assert!(filter.evaluate(0.0).norm() < 1e-12 * t_e);
        assert!(filter.evaluate(1e-3).norm() < 1e-9 * t_e);
    }

    #[test]
    fn filter_parseval() {
        // Integral of |chi|^2 over omega equals 2 pi T_e since chi^2 = 1.
        let timing = ProtocolTiming::new(8, OMEGA_R, 0.0).unwrap();
        let filter = cpmg_filter(timing);
        let t_e = timing.t_e();
        let omega_hi = 4000.0 * 2.0 * std::f64::consts::PI / t_e;
        let integral = adaptive_simpson(
            &|w: f64| 2.0 * filter.power(w),
            1.0,
            omega_hi,
            4096,
            1e-7,
        )
        .unwrap();
        let expected = 2.0 * std::f64::consts::PI * t_e;
        // The tail above the cutoff carries O(1/omega_hi) of the weight.
        assert!(
            (integral / expected - 1.0).abs() < 2e-3,
            "Parseval integral {integral:.6e} vs {expected:.6e}"
        );
    }

    #[test]
    fn filter_peaks_at_the_oscillator_frequency() {
        let filter = cpmg_filter(paper_timing());
        let mut best = (0.0, 0.0);
        let n = 40_000;
        for k in 1..n {
            let omega = 3.0 * OMEGA_R * k as f64 / n as f64;
            let p = filter.power(omega);
            if p > best.1 {
                best = (omega, p);
            }
        }
        assert!(
            (best.0 / OMEGA_R - 1.0).abs() < 0.02,
            "peak at {:.4e}, expected {OMEGA_R:.4e}",
            best.0
        );
    }

    fn paper_spectrum(a_omega: f64) -> NoiseSpectrum {
        // Band wide enough for the filter, low cutoff far below the block rate.
        let timing = paper_timing();
        NoiseSpectrum::for_protocol(a_omega, &timing, 100.0 * 24.0 * timing.t_e()).unwrap()
    }

    #[test]
    fn diagonal_matches_closed_form_estimate() {
        let a_omega = 1.44e14; // (1.2e7 rad/s)^2
        let spec = paper_spectrum(a_omega);
        let timing = paper_timing();
        let closed = diagonal_approx(&spec, &timing);
        assert!((closed - 0.0191).abs() < 2e-4, "closed form {closed:.5}");

        let w = correlation_matrix(&spec, &timing, 1).unwrap();
        let integrated = w.matrix()[(0, 0)];
        assert!(
            (integrated / closed - 1.0).abs() < 0.15,
            "integrated {integrated:.5} vs closed form {closed:.5}"
        );
    }

    #[test]
    fn quadratic_scaling_in_amplitude_and_linear_in_pulses() {
        let timing = paper_timing();
        let spec1 = paper_spectrum(1.44e14);
        let spec2 = paper_spectrum(4.0 * 1.44e14); // doubled noise amplitude
        assert!(
            (diagonal_approx(&spec2, &timing) / diagonal_approx(&spec1, &timing) - 4.0).abs()
                < 1e-12
        );
        let timing2 = ProtocolTiming::new(100, OMEGA_R, 0.0).unwrap();
        assert!(
            (diagonal_approx(&spec1, &timing2) / diagonal_approx(&spec1, &timing) - 2.0).abs()
                < 1e-12
        );
    }

    #[test]
    fn correlation_matrix_nearly_diagonal() {
        let spec = paper_spectrum(1.44e14);
        let timing = paper_timing();
        let w = correlation_matrix(&spec, &timing, 4).unwrap();
        let ratio = w.max_offdiagonal_ratio();
        assert!(ratio < 0.05, "off-diagonal ratio {ratio:.4}");
        // PSD and symmetric by construction; spot-check stationarity.
        assert!((w.matrix()[(0, 0)] - w.matrix()[(3, 3)]).abs() < 1e-15);
    }

    #[test]
    fn zero_amplitude_gives_zero_matrix() {
        let timing = paper_timing();
        let spec = NoiseSpectrum::new(0.0, 1.0, 1e10).unwrap();
        let w = correlation_matrix(&spec, &timing, 3).unwrap();
        assert!(w.matrix().iter().all(|&x| x == 0.0));
    }

    fn cfg32() -> HilbertConfig {
        HilbertConfig::new(32).unwrap()
    }

    #[test]
    fn zero_noise_reduces_to_pure_conditioned_state() {
        let cfg = cfg32();
        let phi = 0.159;
        for record in [vec![1i8, -1, 1], vec![-1, -1, -1, 1, 1, -1, 1, -1]] {
            let s = record.len();
            let w = CorrelationMatrix::scalar(0.0, s).unwrap();
            let deph = dephased_density_matrix(&record, phi, &w, C64::from(0.0), cfg, 0).unwrap();
            assert!((deph.rho.purity() - 1.0).abs() < 1e-10);
            let n = record.iter().filter(|&&r| r == 1).count();
            let cond = conditioned_state(s, n, C64::from(0.0), phi, cfg).unwrap();
            let pure = DensityMatrix::pure(&cond.state);
            let dist = trace_distance(deph.rho.matrix(), pure.matrix()).unwrap();
            assert!(dist < 1e-9, "trace distance {dist:.3e}");
            assert!((deph.prob - cond.prob).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_mixes_the_state() {
        let cfg = cfg32();
        let w = CorrelationMatrix::scalar(0.019, 6).unwrap();
        let record = [1i8, 1, -1, 1, -1, -1];
        let deph = dephased_density_matrix(&record, 0.159, &w, C64::from(0.0), cfg, 0).unwrap();
        assert!(deph.rho.purity() < 1.0 - 1e-6);
        assert!(deph.rho.purity() > 0.5);
    }

    // Direct 4^s summation over both index vectors, the brute-force
    // counterpart of the generating-polynomial contraction.
    fn brute_force_rho(
        record: &[i8],
        phi: f64,
        w: &CorrelationMatrix,
        alpha0: C64,
        cfg: HilbertConfig,
    ) -> (CMat, f64) {
        let s = record.len();
        let kets = displaced_kets(s, alpha0, phi, cfg).unwrap();
        let dim = cfg.dim();
        let mut rho = CMat::zeros(dim, dim);
        for q1 in 0..(1usize << s) {
            for q2 in 0..(1usize << s) {
                let mut phase = 0i64;
                let mut quad = 0.0;
                let mut t1 = 0usize;
                let mut t2 = 0usize;
                for j in 0..s {
                    let b1 = (q1 >> j) & 1;
                    let b2 = (q2 >> j) & 1;
                    t1 += b1;
                    t2 += b2;
                    phase += record[j] as i64 * (b1 as i64 - b2 as i64);
                    let dq = b1 as f64 - b2 as f64;
                    for k in 0..s {
                        let b1k = ((q1 >> k) & 1) as f64;
                        let b2k = ((q2 >> k) & 1) as f64;
                        quad += dq * w.matrix()[(j, k)] * (b1k - b2k);
                    }
                }
                let ip = match phase.rem_euclid(4) {
                    0 => C64::new(1.0, 0.0),
                    1 => C64::new(0.0, 1.0),
                    2 => C64::new(-1.0, 0.0),
                    _ => C64::new(0.0, -1.0),
                };
                let c = ip * (-quad / 2.0).exp();
                rho += outer(&kets[t1], &kets[t2]) * c;
            }
        }
        rho /= C64::from(4f64.powi(s as i32));
        let tr = rho.trace().re;
        (rho.clone() / C64::from(tr), tr)
    }

    #[test]
    fn contraction_equals_brute_force_for_small_records() {
        let cfg = cfg32();
        let phi = 0.159;
        for (record, wval) in [
            (vec![1i8, -1, 1, 1], 0.02),
            (vec![-1i8, -1, 1, -1, 1, 1], 0.019),
        ] {
            let s = record.len();
            let w = CorrelationMatrix::scalar(wval, s).unwrap();
            let exact = dephased_density_matrix(&record, phi, &w, C64::from(0.0), cfg, 0).unwrap();
            let (brute, brute_tr) = brute_force_rho(&record, phi, &w, C64::from(0.0), cfg);
            let dist = trace_distance(exact.rho.matrix(), &brute).unwrap();
            assert!(dist < 1e-12, "trace distance {dist:.3e}");
            assert!((exact.prob - brute_tr).abs() < 1e-12);
        }
    }

    #[test]
    fn record_order_irrelevant_for_scalar_noise() {
        let cfg = cfg32();
        let w = CorrelationMatrix::scalar(0.019, 5).unwrap();
        let a = dephased_density_matrix(&[1, 1, -1, -1, -1], 0.159, &w, C64::from(0.0), cfg, 0)
            .unwrap();
        let b = dephased_density_matrix(&[-1, 1, -1, 1, -1], 0.159, &w, C64::from(0.0), cfg, 0)
            .unwrap();
        let dist = trace_distance(a.rho.matrix(), b.rho.matrix()).unwrap();
        assert!(dist < 1e-10, "trace distance {dist:.3e}");
        assert!((a.prob - b.prob).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_agrees_with_exact_contraction() {
        let cfg = cfg32();
        let phi = 0.159;
        let record = [1i8, -1, 1, -1, -1, 1];
        let w = CorrelationMatrix::scalar(0.019, 6).unwrap();
        let exact =
            dephased_density_matrix_exact(&record, phi, &w.diagonal(), C64::from(0.0), cfg)
                .unwrap();
        let mc =
            dephased_density_matrix_mc(&record, phi, &w, C64::from(0.0), cfg, 100_000, 2024)
                .unwrap();
        let dist = trace_distance(exact.rho.matrix(), mc.rho.matrix()).unwrap();
        assert!(dist < 5e-3, "trace distance {dist:.3e}");
    }

    #[test]
    fn overlap_moments_match_fock_moments() {
        let cfg = HilbertConfig::new(40).unwrap();
        let phi = 0.159;
        let record = [1i8, 1, -1, 1, -1, -1, 1, -1];
        let diag = vec![0.019; 8];
        let exact =
            dephased_density_matrix_exact(&record, phi, &diag, C64::from(0.3), cfg).unwrap();
        let ops = build_operators(cfg);
        let fock = moments(&exact.rho, &ops.quad_i).unwrap();
        let (tr, tri, tri2) = contraction_moments(&record, phi, &diag, C64::from(0.3));
        let mean = tri / tr;
        let var = tri2 / tr - mean * mean;
        assert!((fock.mean - mean).abs() < 1e-9);
        assert!((fock.variance - var).abs() < 1e-9);
        assert!((exact.prob - tr).abs() < 1e-12);
    }

    #[test]
    fn variance_curve_noiseless_limit_and_degradation() {
        let timing = paper_timing();
        let silent = NoiseSpectrum::new(0.0, 1.0, 1e10).unwrap();
        let rows = noisy_variance_curve(6, 0.159, &silent, &timing, C64::from(0.0)).unwrap();
        for row in &rows {
            assert!((row.weighted_noisy - row.weighted_noiseless).abs() < 1e-10);
            assert!((row.most_likely_noisy - row.most_likely_noiseless).abs() < 1e-10);
            // Noiseless weighted variance must match the closed-form module.
            let dist = crate::analytic::outcome_distribution(
                row.s,
                0.159,
                0.0,
                crate::analytic::PrecisionMode::extended_for(row.s),
            )
            .unwrap();
            let wv = crate::analytic::weighted_variance(&dist);
            assert!(
                (row.weighted_noiseless - wv).abs() < 1e-8,
                "s = {}: {} vs {}",
                row.s,
                row.weighted_noiseless,
                wv
            );
        }

        let spec = paper_spectrum(1.44e14);
        let noisy = noisy_variance_curve(8, 0.159, &spec, &timing, C64::from(0.0)).unwrap();
        for row in &noisy {
            assert!(row.weighted_noisy >= row.weighted_noiseless - 1e-12);
        }
    }
}
