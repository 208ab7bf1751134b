//! Dissipative dynamics of the coupled qubit-oscillator system.
//!
//! The joint state lives on qubit ⊗ oscillator with index k = q·dim + m,
//! q = 0 for |g> (sigma_z = +1) and q = 1 for |e>. The master equation
//!
//! ```text
//! d rho/dt = -i [H(t), rho] + k_down D[a] + k_up D[a†]
//!            + G_eg D[sigma-] + G_ge D[sigma+] + G_phi D[sigma_z]
//! ```
//!
//! is integrated with fixed-step RK4. Every operator that appears — the
//! ladder pair, the qubit flips, and the diagonal pieces — is banded, so the
//! right-hand side is evaluated with O(n^2) index kernels rather than dense
//! matrix products.

use num_complex::Complex64 as C64;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fockspace::{thermal_state, DensityMatrix, HilbertConfig};
use crate::linalg::{hermitian_eigenvalues, CMat};
use crate::measurement::{kraus_pair, KrausPair};
use crate::seeding::stream_rng;

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// Bose occupation 1/(e^{hbar omega / k_B T} - 1).
pub fn thermal_occupation(omega: f64, temp: f64) -> Result<f64> {
    if !(temp > 0.0) {
        return Err(Error::Config(format!(
            "temperature must be positive, got {temp} K"
        )));
    }
    if omega <= 0.0 {
        return Err(Error::Config(format!(
            "frequency must be positive, got {omega} rad/s"
        )));
    }
    let x = HBAR * omega / (BOLTZMANN * temp);
    Ok(1.0 / x.exp_m1())
}

/// Physical parameters of the flux-qubit / oscillator device.
#[derive(Debug, Clone, Copy)]
pub struct DeviceParams {
    /// Oscillator frequency, rad/s.
    pub omega_r: f64,
    /// Qubit splitting, rad/s; equals sqrt(delta^2 + epsilon^2).
    pub omega_ge: f64,
    /// Qubit gap, rad/s.
    pub delta: f64,
    /// Flux bias, rad/s.
    pub epsilon: f64,
    /// Qubit-oscillator coupling, rad/s.
    pub g: f64,
    /// Persistent current, A.
    pub i_p: f64,
    /// Oscillator quality factor.
    pub q_factor: f64,
    /// Qubit relaxation time, s.
    pub t1_qubit: f64,
    /// Qubit effective temperature, K.
    pub temp_qubit: f64,
    /// Oscillator temperature, K.
    pub temp_ho: f64,
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        let derived = (self.delta * self.delta + self.epsilon * self.epsilon).sqrt();
        if ((derived - self.omega_ge) / self.omega_ge).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "omega_ge = {:.6e} inconsistent with sqrt(delta^2 + epsilon^2) = {derived:.6e}",
                self.omega_ge
            )));
        }
        for (name, v) in [
            ("omega_r", self.omega_r),
            ("omega_ge", self.omega_ge),
            ("delta", self.delta),
            ("g", self.g),
            ("i_p", self.i_p),
            ("q_factor", self.q_factor),
            ("t1_qubit", self.t1_qubit),
            ("temp_qubit", self.temp_qubit),
            ("temp_ho", self.temp_ho),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// The flux-qubit scenario used throughout: omega_ge = 2 pi · 10.8 GHz,
    /// gap 2 pi · 4 GHz, I_p = 300 nA, T_1 = 10 us at 50 mK; oscillator at
    /// 2 pi · 200 MHz with Q = 10^4 at 15 mK; coupling 2 pi · 2 MHz.
    pub fn flux_qubit_example() -> Self {
        let tau = 2.0 * std::f64::consts::PI;
        let omega_ge = tau * 10.8e9;
        let delta = tau * 4.0e9;
        let epsilon = (omega_ge * omega_ge - delta * delta).sqrt();
        Self {
            omega_r: tau * 2.0e8,
            omega_ge,
            delta,
            epsilon,
            g: tau * 2.0e6,
            i_p: 300e-9,
            q_factor: 1.0e4,
            t1_qubit: 10e-6,
            temp_qubit: 0.050,
            temp_ho: 0.015,
        }
    }
}

/// Decay and excitation rates entering the master equation, 1/s.
#[derive(Debug, Clone, Copy)]
pub struct LindbladRates {
    pub kappa_down: f64,
    pub kappa_up: f64,
    pub gamma_eg: f64,
    pub gamma_ge: f64,
    pub gamma_phi: f64,
}

impl LindbladRates {
    pub fn zero() -> Self {
        Self {
            kappa_down: 0.0,
            kappa_up: 0.0,
            gamma_eg: 0.0,
            gamma_ge: 0.0,
            gamma_phi: 0.0,
        }
    }

    /// Rates for a device: kappa = omega_r / Q split by the oscillator Bose
    /// factor, qubit rates split by detailed balance at the qubit
    /// temperature with total 1/T_1. Pure dephasing is zero by default; the
    /// dominant flux noise is handled separately as a coherent phase.
    pub fn from_device(device: &DeviceParams) -> Result<Self> {
        device.validate()?;
        let n_ho = thermal_occupation(device.omega_r, device.temp_ho)?;
        let kappa = device.omega_r / device.q_factor;
        let boltz = (-HBAR * device.omega_ge / (BOLTZMANN * device.temp_qubit)).exp();
        let gamma_eg = 1.0 / (device.t1_qubit * (1.0 + boltz));
        Ok(Self {
            kappa_down: kappa * (1.0 + n_ho),
            kappa_up: kappa * n_ho,
            gamma_eg,
            gamma_ge: gamma_eg * boltz,
            gamma_phi: 0.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("kappa_down", self.kappa_down),
            ("kappa_up", self.kappa_up),
            ("gamma_eg", self.gamma_eg),
            ("gamma_ge", self.gamma_ge),
            ("gamma_phi", self.gamma_phi),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::Config(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if self.kappa_up > self.kappa_down || self.gamma_ge > self.gamma_eg {
            return Err(Error::Config(
                "upward rates exceed downward rates; inverted-temperature input".into(),
            ));
        }
        Ok(())
    }
}

/// Instantaneous coefficient set of the joint Hamiltonian
/// H = c (sigma_z ⊗ a†) + c* (sigma_z ⊗ a) + w_n (1 ⊗ n) + b_z (sigma_z ⊗ 1)
///     + b_x (sigma_x ⊗ 1) + b_y (sigma_y ⊗ 1).
#[derive(Debug, Clone, Copy, Default)]
pub struct HamCoeffs {
    /// Coefficient of sigma_z ⊗ a†, rad/s.
    pub int_raise: C64,
    /// Coefficient of 1 ⊗ n, rad/s.
    pub osc_number: f64,
    /// Coefficient of sigma_z ⊗ 1, rad/s.
    pub qubit_z: f64,
    pub qubit_x: f64,
    pub qubit_y: f64,
}

/// The block modulation sign: +1 on the first quarter oscillator period,
/// flipping every half period.
pub fn chi_square_wave(omega_r: f64, t: f64) -> f64 {
    if (omega_r * t).cos() >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Materialize the dense Hamiltonian for a coefficient set (test and
/// inspection path; the integrator never builds it).
pub fn hamiltonian_matrix(coeffs: &HamCoeffs, dim: usize) -> CMat {
    let n = 2 * dim;
    let mut h = CMat::zeros(n, n);
    for q in 0..2usize {
        let z = if q == 0 { 1.0 } else { -1.0 };
        for m in 0..dim {
            let k = q * dim + m;
            h[(k, k)] += C64::from(coeffs.osc_number * m as f64 + coeffs.qubit_z * z);
            if m + 1 < dim {
                let amp = coeffs.int_raise * z * ((m + 1) as f64).sqrt();
                h[(q * dim + m + 1, k)] += amp;
                h[(k, q * dim + m + 1)] += amp.conj();
            }
            let other = (1 - q) * dim + m;
            h[(other, k)] += C64::from(coeffs.qubit_x);
            // sigma_y = [[0, -i], [i, 0]] in the (g, e) ordering.
            h[(other, k)] += C64::new(0.0, if q == 0 { 1.0 } else { -1.0 }) * coeffs.qubit_y;
        }
    }
    h
}

/// General dissipator D[L] rho = L rho L† - (L†L rho + rho L†L)/2 for an
/// arbitrary dense operator (reference path for tests and one-off checks).
pub fn dissipator(op: &CMat, rho: &CMat) -> Result<CMat> {
    if op.shape() != rho.shape() {
        return Err(Error::Contract(format!(
            "dissipator shape mismatch: {:?} vs {:?}",
            op.shape(),
            rho.shape()
        )));
    }
    let ldag_l = op.adjoint() * op;
    Ok(op * rho * op.adjoint() - (&ldag_l * rho + rho * ldag_l) * C64::from(0.5))
}

// --- structured RHS kernels --------------------------------------------------

#[inline]
fn at(dim: usize, q: usize, m: usize) -> usize {
    q * dim + m
}

#[inline]
fn axpy_mat(y: &mut CMat, a: C64, x: &CMat) {
    for (yi, xi) in y.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *yi += a * xi;
    }
}

/// out = -i [H, rho] + dissipators, with H given by `coeffs`.
fn lindblad_rhs(
    coeffs: &HamCoeffs,
    rates: &LindbladRates,
    rho: &CMat,
    dim: usize,
    out: &mut CMat,
) {
    let n = 2 * dim;
    let minus_i = C64::new(0.0, -1.0);
    let c = coeffs.int_raise;
    let cc = c.conj();
    let has_drive = coeffs.qubit_x != 0.0 || coeffs.qubit_y != 0.0;

    let diag = |k: usize| -> f64 {
        let (q, m) = (k / dim, k % dim);
        coeffs.osc_number * m as f64 + coeffs.qubit_z * if q == 0 { 1.0 } else { -1.0 }
    };

    for j in 0..n {
        let (qj, mj) = (j / dim, j % dim);
        let zj = if qj == 0 { 1.0 } else { -1.0 };
        let dj = diag(j);
        for i in 0..n {
            let (qi, mi) = (i / dim, i % dim);
            let zi = if qi == 0 { 1.0 } else { -1.0 };

            // H rho rows.
            let mut hrho = C64::from(diag(i)) * rho[(i, j)];
            if mi > 0 {
                hrho += c * (zi * (mi as f64).sqrt()) * rho[(at(dim, qi, mi - 1), j)];
            }
            if mi + 1 < dim {
                hrho += cc * (zi * ((mi + 1) as f64).sqrt()) * rho[(at(dim, qi, mi + 1), j)];
            }
            if has_drive {
                let flip = rho[(at(dim, 1 - qi, mi), j)];
                hrho += C64::from(coeffs.qubit_x) * flip;
                hrho += C64::new(0.0, if qi == 0 { -1.0 } else { 1.0 }) * coeffs.qubit_y * flip;
            }

            // rho H columns.
            let mut rhoh = C64::from(dj) * rho[(i, j)];
            if mj + 1 < dim {
                rhoh += c * (zj * ((mj + 1) as f64).sqrt()) * rho[(i, at(dim, qj, mj + 1))];
            }
            if mj > 0 {
                rhoh += cc * (zj * (mj as f64).sqrt()) * rho[(i, at(dim, qj, mj - 1))];
            }
            if has_drive {
                let flip = rho[(i, at(dim, 1 - qj, mj))];
                rhoh += C64::from(coeffs.qubit_x) * flip;
                rhoh += C64::new(0.0, if qj == 0 { 1.0 } else { -1.0 }) * coeffs.qubit_y * flip;
            }

            let mut acc = minus_i * (hrho - rhoh);

            // Oscillator decay: a rho a† - (n rho + rho n)/2.
            if rates.kappa_down > 0.0 {
                let mut d = C64::from(0.0);
                if mi + 1 < dim && mj + 1 < dim {
                    d += (((mi + 1) * (mj + 1)) as f64).sqrt()
                        * rho[(at(dim, qi, mi + 1), at(dim, qj, mj + 1))];
                }
                d -= 0.5 * (mi + mj) as f64 * rho[(i, j)];
                acc += C64::from(rates.kappa_down) * d;
            }
            // Oscillator excitation: a† rho a - (a a† rho + rho a a†)/2.
            // The truncated a† annihilates the top level, so a a† is m + 1
            // everywhere except the top, where it vanishes.
            if rates.kappa_up > 0.0 {
                let mut d = C64::from(0.0);
                if mi > 0 && mj > 0 {
                    d += ((mi * mj) as f64).sqrt()
                        * rho[(at(dim, qi, mi - 1), at(dim, qj, mj - 1))];
                }
                let wi = if mi + 1 < dim { (mi + 1) as f64 } else { 0.0 };
                let wj = if mj + 1 < dim { (mj + 1) as f64 } else { 0.0 };
                d -= 0.5 * (wi + wj) * rho[(i, j)];
                acc += C64::from(rates.kappa_up) * d;
            }
            // Qubit decay: sigma- rho sigma+ - (|e><e| rho + rho |e><e|)/2.
            if rates.gamma_eg > 0.0 {
                let mut d = C64::from(0.0);
                if qi == 0 && qj == 0 {
                    d += rho[(at(dim, 1, mi), at(dim, 1, mj))];
                }
                d -= 0.5 * ((qi == 1) as u8 + (qj == 1) as u8) as f64 * rho[(i, j)];
                acc += C64::from(rates.gamma_eg) * d;
            }
            // Qubit excitation.
            if rates.gamma_ge > 0.0 {
                let mut d = C64::from(0.0);
                if qi == 1 && qj == 1 {
                    d += rho[(at(dim, 0, mi), at(dim, 0, mj))];
                }
                d -= 0.5 * ((qi == 0) as u8 + (qj == 0) as u8) as f64 * rho[(i, j)];
                acc += C64::from(rates.gamma_ge) * d;
            }
            // Pure dephasing: sigma_z rho sigma_z - rho.
            if rates.gamma_phi > 0.0 {
                acc += C64::from(rates.gamma_phi * (zi * zj - 1.0)) * rho[(i, j)];
            }

            out[(i, j)] = acc;
        }
    }
}

/// Snapshot of the evolution at one reported time.
#[derive(Debug, Clone)]
pub struct EvolveSnapshot {
    pub t: f64,
    pub state: DensityMatrix,
}

/// Result of a master-equation integration.
#[derive(Debug)]
pub struct EvolveResult {
    pub snapshots: Vec<EvolveSnapshot>,
    /// Raw final matrix, not renormalized.
    pub final_matrix: CMat,
    /// max |tr rho - 1| observed at reported times.
    pub max_trace_drift: f64,
    /// Most negative eigenvalue observed at reported times.
    pub min_eigenvalue: f64,
}

/// Integration controls. `resolve_omega` is the fastest retained angular
/// frequency; the fixed step must satisfy dt <= 2 pi / (20 resolve_omega).
/// Set it to zero to skip the check for rate-only runs.
#[derive(Debug, Clone, Copy)]
pub struct EvolveOptions {
    pub t_start: f64,
    pub t_end: f64,
    pub dt: f64,
    pub resolve_omega: f64,
    /// Steps between recorded snapshots (0 = record only the final state).
    pub snapshot_stride: usize,
}

/// Fixed-step RK4 integration of the master equation with Hamiltonian
/// coefficients supplied by `coeffs(t)`.
pub fn evolve<F: Fn(f64) -> HamCoeffs>(
    rho0: &CMat,
    osc_dim: usize,
    coeffs: F,
    rates: &LindbladRates,
    opts: &EvolveOptions,
) -> Result<EvolveResult> {
    let n = 2 * osc_dim;
    if rho0.nrows() != n || rho0.ncols() != n {
        return Err(Error::Contract(format!(
            "state must be {n} x {n} (qubit ⊗ oscillator), got {} x {}",
            rho0.nrows(),
            rho0.ncols()
        )));
    }
    rates.validate()?;
    if !(opts.dt > 0.0) || opts.t_end < opts.t_start {
        return Err(Error::Config("invalid time span or step".into()));
    }
    if opts.resolve_omega > 0.0 {
        let dt_max = 2.0 * std::f64::consts::PI / (20.0 * opts.resolve_omega);
        if opts.dt > dt_max * (1.0 + 1e-9) {
            return Err(Error::Config(format!(
                "dt = {:.3e} s does not resolve the fastest frequency; need <= {dt_max:.3e} s",
                opts.dt
            )));
        }
    }

    let steps = ((opts.t_end - opts.t_start) / opts.dt).round() as usize;
    let mut rho = rho0.clone();
    let mut k1 = CMat::zeros(n, n);
    let mut k2 = CMat::zeros(n, n);
    let mut k3 = CMat::zeros(n, n);
    let mut k4 = CMat::zeros(n, n);
    let mut tmp = CMat::zeros(n, n);

    let mut snapshots = Vec::new();
    let mut max_drift: f64 = (rho.trace().re - 1.0).abs();
    let mut min_eig = f64::INFINITY;

    let mut record = |t: f64, rho: &CMat, drift: &mut f64, mineig: &mut f64| -> Result<()> {
        *drift = drift.max((rho.trace().re - 1.0).abs());
        let eig = hermitian_eigenvalues(rho, 1e-7)?;
        let lowest = eig.first().copied().unwrap_or(0.0);
        *mineig = mineig.min(lowest);
        if lowest < -1e-6 {
            return Err(Error::Numeric(format!(
                "positivity breach: eigenvalue {lowest:.3e} at t = {t:.3e} s"
            )));
        }
        Ok(())
    };

    // Coefficient discontinuities (modulation sign flips) align with step
    // boundaries; sampling the endpoints a sliver inside the open interval
    // picks the one-sided values the step actually needs.
    let sliver = 1e-9 * opts.dt;
    for step in 0..steps {
        let t = opts.t_start + step as f64 * opts.dt;
        let dt = opts.dt;
        lindblad_rhs(&coeffs(t + sliver), rates, &rho, osc_dim, &mut k1);
        tmp.copy_from(&rho);
        axpy_mat(&mut tmp, C64::from(dt / 2.0), &k1);
        lindblad_rhs(&coeffs(t + dt / 2.0), rates, &tmp, osc_dim, &mut k2);
        tmp.copy_from(&rho);
        axpy_mat(&mut tmp, C64::from(dt / 2.0), &k2);
        lindblad_rhs(&coeffs(t + dt / 2.0), rates, &tmp, osc_dim, &mut k3);
        tmp.copy_from(&rho);
        axpy_mat(&mut tmp, C64::from(dt), &k3);
        lindblad_rhs(&coeffs(t + dt - sliver), rates, &tmp, osc_dim, &mut k4);

        axpy_mat(&mut rho, C64::from(dt / 6.0), &k1);
        axpy_mat(&mut rho, C64::from(dt / 3.0), &k2);
        axpy_mat(&mut rho, C64::from(dt / 3.0), &k3);
        axpy_mat(&mut rho, C64::from(dt / 6.0), &k4);

        if opts.snapshot_stride > 0 && (step + 1) % opts.snapshot_stride == 0 {
            let t_now = opts.t_start + (step + 1) as f64 * opts.dt;
            record(t_now, &rho, &mut max_drift, &mut min_eig)?;
            snapshots.push(EvolveSnapshot {
                t: t_now,
                state: DensityMatrix::from_unchecked(rho.clone()),
            });
        }
    }
    record(opts.t_end, &rho, &mut max_drift, &mut min_eig)?;
    if max_drift > 1e-7 {
        return Err(Error::Numeric(format!(
            "trace drift {max_drift:.3e} exceeds 1e-7"
        )));
    }
    Ok(EvolveResult {
        snapshots,
        final_matrix: rho,
        max_trace_drift: max_drift,
        min_eigenvalue: min_eig,
    })
}

// --- pulse bookkeeping ---------------------------------------------------------

/// Intent of one control segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PulseKind {
    HalfPiX,
    PiX,
    HalfPiY,
    Idle,
}

impl PulseKind {
    pub fn angle(&self) -> f64 {
        match self {
            PulseKind::HalfPiX | PulseKind::HalfPiY => std::f64::consts::FRAC_PI_2,
            PulseKind::PiX => std::f64::consts::PI,
            PulseKind::Idle => 0.0,
        }
    }

    /// Drive phase: x-axis rotations at phase 0, y-axis at -pi/2.
    pub fn phase(&self) -> f64 {
        match self {
            PulseKind::HalfPiY => -std::f64::consts::FRAC_PI_2,
            _ => 0.0,
        }
    }
}

/// One rectangular drive segment.
#[derive(Debug, Clone, Copy)]
pub struct PulseSegment {
    pub t_start: f64,
    pub t_end: f64,
    /// Drive amplitude A, rad/s (before the gap/splitting matrix element).
    pub amplitude: f64,
    /// Drive phase, rad.
    pub phase: f64,
    pub kind: PulseKind,
}

/// A finite-width realization of the block control sequence.
#[derive(Debug, Clone)]
pub struct PulseSchedule {
    pub segments: Vec<PulseSegment>,
}

impl PulseSchedule {
    /// Half-pi, inversion train, half-pi(y) with rectangular pulses: the
    /// opening pulse ends at t = 0, inversions are centered at odd multiples
    /// of a quarter oscillator period (half-period spacing), and the closing
    /// pulse starts at T_e.
    pub fn cpmg(device: &DeviceParams, n_p: usize, width: f64) -> Result<Self> {
        device.validate()?;
        let quarter = 0.5 * std::f64::consts::PI / device.omega_r;
        if !(width > 0.0) || width >= quarter {
            return Err(Error::Config(format!(
                "pulse width must be in (0, {quarter:.3e}), got {width:.3e}"
            )));
        }
        let matrix_element = device.delta / device.omega_ge;
        let amp = |angle: f64| angle / (width * matrix_element);
        let t_e = n_p as f64 * 2.0 * quarter;
        let mut segments = vec![PulseSegment {
            t_start: -width,
            t_end: 0.0,
            amplitude: amp(PulseKind::HalfPiX.angle()),
            phase: PulseKind::HalfPiX.phase(),
            kind: PulseKind::HalfPiX,
        }];
        for k in 0..n_p {
            let center = (2 * k + 1) as f64 * quarter;
            segments.push(PulseSegment {
                t_start: center - width / 2.0,
                t_end: center + width / 2.0,
                amplitude: amp(PulseKind::PiX.angle()),
                phase: PulseKind::PiX.phase(),
                kind: PulseKind::PiX,
            });
        }
        segments.push(PulseSegment {
            t_start: t_e,
            t_end: t_e + width,
            amplitude: amp(PulseKind::HalfPiY.angle()),
            phase: PulseKind::HalfPiY.phase(),
            kind: PulseKind::HalfPiY,
        });
        let schedule = Self { segments };
        schedule.validate(device)?;
        Ok(schedule)
    }

    /// Check the rotation-angle integral of every segment against its label.
    pub fn validate(&self, device: &DeviceParams) -> Result<()> {
        let matrix_element = device.delta / device.omega_ge;
        for seg in &self.segments {
            if seg.t_end <= seg.t_start {
                return Err(Error::Config("empty pulse segment".into()));
            }
            let angle = seg.amplitude * matrix_element * (seg.t_end - seg.t_start);
            if (angle - seg.kind.angle()).abs() > 1e-6 {
                return Err(Error::Config(format!(
                    "segment rotates by {angle:.8} rad, labeled {:?}",
                    seg.kind
                )));
            }
        }
        Ok(())
    }

    /// Drive amplitude and phase at time `t` (zero between pulses).
    pub fn drive(&self, t: f64) -> (f64, f64) {
        for seg in &self.segments {
            if t >= seg.t_start && t < seg.t_end {
                return (seg.amplitude, seg.phase);
            }
        }
        (0.0, 0.0)
    }
}

/// Reference frame for Hamiltonian generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    /// Interaction picture at omega_r and omega_ge with the rotating-wave
    /// approximation; inversion pulses absorbed into the modulation sign.
    RotatingToggled,
    /// Interaction picture with explicit drive pulses (no toggling).
    RotatingDriven,
    /// Laboratory frame: bare qubit and oscillator terms plus the carrier
    /// drive, no approximation.
    Lab,
}

/// Hamiltonian coefficients at time `t` for the chosen frame.
///
/// `delta_omega` is an optional qubit-frequency noise sample at `t`.
pub fn hamiltonian(
    t: f64,
    device: &DeviceParams,
    schedule: Option<&PulseSchedule>,
    delta_omega: f64,
    frame: Frame,
) -> HamCoeffs {
    match frame {
        Frame::RotatingToggled => {
            let chi = chi_square_wave(device.omega_r, t);
            let phase = C64::new(0.0, device.omega_r * t).exp();
            HamCoeffs {
                int_raise: phase * (device.g * chi),
                osc_number: 0.0,
                // The inversion train toggles the noise term along with the
                // interaction.
                qubit_z: -0.5 * delta_omega * chi,
                qubit_x: 0.0,
                qubit_y: 0.0,
            }
        }
        Frame::RotatingDriven => {
            // The carrier cos(omega_ge t + phase) turns into the static
            // envelope (cos phase · sigma_x - sin phase · sigma_y)/2.
            let phase = C64::new(0.0, device.omega_r * t).exp();
            let (a, ph) = schedule.map(|s| s.drive(t)).unwrap_or((0.0, 0.0));
            let envelope = 0.5 * a * device.delta / device.omega_ge;
            HamCoeffs {
                int_raise: phase * device.g,
                osc_number: 0.0,
                qubit_z: -0.5 * delta_omega,
                qubit_x: envelope * ph.cos(),
                qubit_y: -envelope * ph.sin(),
            }
        }
        Frame::Lab => {
            let (a, ph) = schedule.map(|s| s.drive(t)).unwrap_or((0.0, 0.0));
            let drive = a * device.delta / device.omega_ge * (device.omega_ge * t + ph).cos();
            HamCoeffs {
                int_raise: C64::from(device.g),
                osc_number: device.omega_r,
                qubit_z: -0.5 * (device.omega_ge + delta_omega),
                qubit_x: drive,
                qubit_y: 0.0,
            }
        }
    }
}

// --- protocol building blocks ----------------------------------------------

/// |g><g| ⊗ rho_osc.
pub fn embed_with_ground_qubit(rho_osc: &CMat, dim: usize) -> CMat {
    let n = 2 * dim;
    let mut joint = CMat::zeros(n, n);
    joint.view_mut((0, 0), (dim, dim)).copy_from(rho_osc);
    joint
}

/// Apply a qubit-only unitary u (2x2) to the joint state: (u ⊗ 1) rho (u† ⊗ 1).
pub fn apply_qubit_unitary(rho: &CMat, u: [[C64; 2]; 2], dim: usize) -> CMat {
    let n = 2 * dim;
    let mut out = CMat::zeros(n, n);
    for qi in 0..2 {
        for qj in 0..2 {
            let mut block = CMat::zeros(dim, dim);
            for a in 0..2 {
                for b in 0..2 {
                    let w = u[qi][a] * u[qj][b].conj();
                    if w.norm() > 0.0 {
                        block += rho.view((a * dim, b * dim), (dim, dim)) * w;
                    }
                }
            }
            out.view_mut((qi * dim, qj * dim), (dim, dim))
                .copy_from(&block);
        }
    }
    out
}

/// exp(-i theta sigma_x / 2).
pub fn rotation_x(theta: f64) -> [[C64; 2]; 2] {
    let c = C64::from((theta / 2.0).cos());
    let s = C64::new(0.0, -(theta / 2.0).sin());
    [[c, s], [s, c]]
}

/// exp(-i theta sigma_y / 2).
pub fn rotation_y(theta: f64) -> [[C64; 2]; 2] {
    let c = (theta / 2.0).cos();
    let s = (theta / 2.0).sin();
    [
        [C64::from(c), C64::from(-s)],
        [C64::from(s), C64::from(c)],
    ]
}

/// Projective qubit measurement in the energy basis: excited probability and
/// the two collapsed (unnormalized) oscillator blocks.
pub fn measure_qubit(rho: &CMat, dim: usize) -> (f64, CMat, CMat) {
    let gg = rho.view((0, 0), (dim, dim)).into_owned();
    let ee = rho.view((dim, dim), (dim, dim)).into_owned();
    let p_e = ee.trace().re;
    (p_e, gg, ee)
}

/// Parameters of a dissipative protocol run.
#[derive(Debug, Clone, Copy)]
pub struct DissipativeProtocol {
    pub device: DeviceParams,
    /// Inversions per block; even keeps the parity correction trivial.
    pub n_p: usize,
    /// Measurement repetitions (s <= 24).
    pub steps: usize,
    /// Oscillator truncation.
    pub dim: usize,
    /// Initial oscillator occupation: None = thermal at the device
    /// temperature, Some(0.0) = vacuum.
    pub initial_nbar: Option<f64>,
    pub seed: u64,
    pub n_trajectories: usize,
    /// RK4 substeps per quarter oscillator period (5 resolves the frequency
    /// contract exactly and keeps steps aligned with the modulation flips).
    pub substeps_per_quarter: usize,
}

impl DissipativeProtocol {
    /// The interaction phase realized by one block: (2/pi) g T_e.
    pub fn phi(&self) -> f64 {
        2.0 * self.device.g * self.n_p as f64 / self.device.omega_r
    }
}

/// Per-trajectory record of the dissipative run.
#[derive(Debug, Clone)]
pub struct DissipativeTrajectory {
    pub results: Vec<i8>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

/// Aggregated dissipative-protocol output.
#[derive(Debug, Clone)]
pub struct DissipativeRun {
    pub trajectories: Vec<DissipativeTrajectory>,
    /// Trajectory-averaged variance after each step.
    pub mean_variance: Vec<f64>,
}

impl DissipativeRun {
    pub fn min_mean_variance(&self) -> f64 {
        self.mean_variance
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }
}

fn run_dissipative_trajectory(
    p: &DissipativeProtocol,
    rates: &LindbladRates,
    rho_osc0: &CMat,
    quad: &(CMat, CMat),
    traj: u64,
) -> Result<DissipativeTrajectory> {
    let dim = p.dim;
    let device = p.device;
    let quarter = 0.5 * std::f64::consts::PI / device.omega_r;
    let dt = quarter / p.substeps_per_quarter as f64;
    let t_e = p.n_p as f64 * 2.0 * quarter;
    let mut rng = stream_rng(p.seed, traj);
    let mut rho_osc = rho_osc0.clone();
    let mut results = Vec::with_capacity(p.steps);
    let mut means = Vec::with_capacity(p.steps);
    let mut variances = Vec::with_capacity(p.steps);
    for _ in 0..p.steps {
        let joint = embed_with_ground_qubit(&rho_osc, dim);
        let joint = apply_qubit_unitary(&joint, rotation_x(std::f64::consts::FRAC_PI_2), dim);
        let opts = EvolveOptions {
            t_start: 0.0,
            t_end: t_e,
            dt,
            resolve_omega: device.omega_r,
            snapshot_stride: 0,
        };
        let evolved = evolve(
            &joint,
            dim,
            |t| hamiltonian(t, &device, None, 0.0, Frame::RotatingToggled),
            rates,
            &opts,
        )?;
        let mut block = evolved.final_matrix;
        if p.n_p % 2 == 1 {
            block = apply_qubit_unitary(&block, rotation_x(std::f64::consts::PI), dim);
        }
        let block = apply_qubit_unitary(&block, rotation_y(std::f64::consts::FRAC_PI_2), dim);
        let (p_e, gg, ee) = measure_qubit(&block, dim);
        let u: f64 = rng.gen();
        let (r, collapsed, p_r) = if u < p_e {
            (1i8, ee, p_e)
        } else {
            (-1i8, gg, 1.0 - p_e)
        };
        if p_r < 1e-12 {
            return Err(Error::Internal("vanishing measurement branch".into()));
        }
        rho_osc = collapsed / C64::from(p_r);
        let mean = (&quad.0 * &rho_osc).trace().re;
        let second = (&quad.1 * &rho_osc).trace().re;
        results.push(r);
        means.push(mean);
        variances.push(second - mean * mean);
    }
    Ok(DissipativeTrajectory {
        results,
        means,
        variances,
    })
}

/// Run the full dissipative protocol: per repetition, evolve one interaction
/// block under the master equation, measure and reset the qubit, and record
/// the oscillator quadrature statistics.
pub fn protocol_with_dissipation(
    p: &DissipativeProtocol,
    rates: &LindbladRates,
) -> Result<DissipativeRun> {
    p.device.validate()?;
    rates.validate()?;
    if p.steps == 0 || p.steps > 24 {
        return Err(Error::Config(format!(
            "dissipative protocol supports 1 <= s <= 24, got {}",
            p.steps
        )));
    }
    if p.n_trajectories == 0 {
        return Err(Error::Config("need at least one trajectory".into()));
    }
    if p.substeps_per_quarter < 5 {
        return Err(Error::Config(
            "need at least 5 substeps per quarter period to resolve omega_r".into(),
        ));
    }
    let cfg = HilbertConfig::new(p.dim)?;
    let nbar = match p.initial_nbar {
        Some(n) => n,
        None => thermal_occupation(p.device.omega_r, p.device.temp_ho)?,
    };
    let rho_osc0 = if nbar == 0.0 {
        let mut m = CMat::zeros(p.dim, p.dim);
        m[(0, 0)] = C64::from(1.0);
        m
    } else {
        thermal_state(nbar, cfg)?.matrix().clone()
    };
    let ops = crate::fockspace::build_operators(cfg);
    let quad = (ops.quad_i.clone(), &ops.quad_i * &ops.quad_i);

    let trajectories = (0..p.n_trajectories)
        .into_par_iter()
        .map(|i| run_dissipative_trajectory(p, rates, &rho_osc0, &quad, i as u64))
        .collect::<Result<Vec<_>>>()?;

    let mean_variance = (0..p.steps)
        .map(|k| {
            trajectories.iter().map(|t| t.variances[k]).sum::<f64>() / trajectories.len() as f64
        })
        .collect();
    Ok(DissipativeRun {
        trajectories,
        mean_variance,
    })
}

/// Closed-system comparison of one evolved block against the Kraus update.
pub struct KrausComparison {
    pub p_e_evolved: f64,
    pub p_e_kraus: f64,
    pub fidelity_ground: f64,
    pub fidelity_excited: f64,
}

/// Run one zero-rate block on (|g> - i|e>)/sqrt(2) ⊗ psi and compare the
/// conditional post-measurement oscillator states against the Kraus pair.
pub fn kraus_consistency_check(
    device: &DeviceParams,
    n_p: usize,
    psi: &crate::fockspace::FockVector,
    substeps_per_quarter: usize,
) -> Result<KrausComparison> {
    let dim = psi.dim();
    let cfg = HilbertConfig::new(dim)?;
    let quarter = 0.5 * std::f64::consts::PI / device.omega_r;
    let t_e = n_p as f64 * 2.0 * quarter;
    let rho_osc = psi.amplitudes() * psi.amplitudes().adjoint();
    let joint = embed_with_ground_qubit(&rho_osc, dim);
    let joint = apply_qubit_unitary(&joint, rotation_x(std::f64::consts::FRAC_PI_2), dim);
    let opts = EvolveOptions {
        t_start: 0.0,
        t_end: t_e,
        dt: quarter / substeps_per_quarter as f64,
        resolve_omega: device.omega_r,
        snapshot_stride: 0,
    };
    let evolved = evolve(
        &joint,
        dim,
        |t| hamiltonian(t, device, None, 0.0, Frame::RotatingToggled),
        &LindbladRates::zero(),
        &opts,
    )?;
    let mut block = evolved.final_matrix;
    if n_p % 2 == 1 {
        block = apply_qubit_unitary(&block, rotation_x(std::f64::consts::PI), dim);
    }
    let block = apply_qubit_unitary(&block, rotation_y(std::f64::consts::FRAC_PI_2), dim);
    let (p_e, gg, ee) = measure_qubit(&block, dim);

    let phi = 2.0 / std::f64::consts::PI * device.g * t_e;
    let kp: KrausPair = kraus_pair(phi, cfg)?;
    let branch_g = &kp.d_g * psi.amplitudes();
    let branch_e = &kp.d_e * psi.amplitudes();
    let p_e_kraus = branch_e.norm_squared();

    // State fidelity <v|rho|v> / (tr rho · |v|^2) per conditional branch.
    let overlap = |rho: &CMat, v: &nalgebra::DVector<C64>| -> f64 {
        let tr = rho.trace().re;
        let num = (v.adjoint() * rho * v)[(0, 0)].re;
        num / (tr * v.norm_squared())
    };
    Ok(KrausComparison {
        p_e_evolved: p_e,
        p_e_kraus,
        fidelity_ground: overlap(&gg, &branch_g),
        fidelity_excited: overlap(&ee, &branch_e),
    })
}
