//! Closed-form conditional outcome statistics for the repeated measurement.
//!
//! For `n` excited results out of `s` repetitions, starting from a coherent
//! state with real part `x = Re(alpha_0)`, the record probability and the
//! conditioned quadrature moments are finite sums over displaced-state
//! overlaps. The naive form is a double binomial sum with strong sign
//! cancellation; collapsing it over the total index `q = k + l` gives
//!
//! ```text
//! P   = Re{ i^{s-2n} 2^{-2s} Σ_q i^q c_q g_q }
//! <I> = Re{ i^{s-2n} Σ_q i^q c_q g_q · 2 w_q } / (2^{2s} P)
//! <I²> likewise with the factor (1 + 4 w_q²),
//! ```
//!
//! where `w_q = x + i phi (s-q)`, `g_q = exp(2 w_q² - 2 x²)`, and the
//! `c_q = [x^q] (1-x)^{2(s-n)} (1+x)^{2n}` are exact integers computed by
//! big-integer polynomial multiplication. A cancellation monitor records the
//! ratio of the largest partial sum to the final sum and demands extended
//! precision when double precision cannot survive it.

use num_bigint::BigInt;
use num_complex::Complex64 as C64;
use num_traits::{ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::fockspace::{
    displacement_operator, fidelity, quadrature_moments, squeeze_operator, FockVector,
    HilbertConfig,
};
use crate::measurement::conditioned_state;

mod big;
use big::{BigC, BigCtx};

/// Floating-point mode for the outcome sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecisionMode {
    /// IEEE double precision; rejected when the cancellation monitor trips.
    Double,
    /// Big-float arithmetic with the given mantissa width in bits.
    Extended(u32),
}

impl PrecisionMode {
    /// Default extended width for step count `s`: the cancellation is bounded
    /// by the 2^{2s} normalization, plus guard bits.
    pub fn extended_for(s: usize) -> Self {
        PrecisionMode::Extended(4 * s as u32 + 64)
    }

    fn bits(&self) -> u32 {
        match self {
            PrecisionMode::Double => 53,
            PrecisionMode::Extended(b) => *b,
        }
    }
}

/// Largest tolerable (max partial sum)/(final sum) ratio in double precision.
pub const DOUBLE_CANCELLATION_LIMIT: f64 = 1e12;

/// Closed-form statistics of one outcome class `(s - n, n)`.
#[derive(Debug, Clone)]
pub struct OutcomeStatistics {
    pub s: usize,
    pub n: usize,
    pub phi: f64,
    pub re_alpha0: f64,
    /// Record probability (without the binomial multiplicity); zero if it
    /// underflows f64, in which case `log_prob` remains meaningful.
    pub prob: f64,
    /// Natural logarithm of `prob`.
    pub log_prob: f64,
    pub mean_i: f64,
    pub mean_i2: f64,
    pub variance: f64,
    /// Cancellation-monitor reading for the probability sum.
    pub cancellation_ratio: f64,
}

/// Exact coefficients of (1-x)^{2(s-n)} (1+x)^{2n}, length 2s + 1.
#[derive(Debug, Clone)]
pub struct CoefficientVector {
    pub c: Vec<BigInt>,
}

/// Multiply the polynomial `poly` by (1 + sign·x) in place.
fn mul_linear(poly: &mut Vec<BigInt>, sign: i64) {
    let sign = BigInt::from(sign);
    poly.push(BigInt::zero());
    for i in (1..poly.len()).rev() {
        let add = &poly[i - 1] * &sign;
        poly[i] += add;
    }
}

/// Coefficients of (1-x)^{2(s-n)} (1+x)^{2n} by repeated linear multiplies.
pub fn coefficient_vector(s: usize, n: usize) -> CoefficientVector {
    assert!(n <= s, "n must not exceed s");
    let mut poly = vec![BigInt::from(1)];
    for _ in 0..2 * (s - n) {
        mul_linear(&mut poly, -1);
    }
    for _ in 0..2 * n {
        mul_linear(&mut poly, 1);
    }
    CoefficientVector { c: poly }
}

/// Exact binomial coefficient.
pub fn binomial_big(n: usize, k: usize) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigInt::from(1);
    for j in 0..k {
        acc = acc * BigInt::from(n - j) / BigInt::from(j + 1);
    }
    acc
}

fn binomial_f64(n: usize, k: usize) -> f64 {
    binomial_big(n, k).to_f64().unwrap_or(f64::INFINITY)
}

struct SumOutput {
    /// The rotated sums i^{s-2n}·S as (re, im), for P, <I>·P, <I²>·P.
    p: (f64, f64),
    i1: (f64, f64),
    i2: (f64, f64),
    /// ln |Re S_P| before the 2^{-2s} normalization.
    ln_p_sum: f64,
    ratio: f64,
}

fn i_pow_f64(k: i64) -> C64 {
    match k.rem_euclid(4) {
        0 => C64::new(1.0, 0.0),
        1 => C64::new(0.0, 1.0),
        2 => C64::new(-1.0, 0.0),
        _ => C64::new(0.0, -1.0),
    }
}

/// Evaluate the three sums in double precision.
fn sums_double(s: usize, n: usize, phi: f64, x: f64, coeffs: &CoefficientVector) -> SumOutput {
    let mut sp = C64::from(0.0);
    let mut si = C64::from(0.0);
    let mut si2 = C64::from(0.0);
    let mut max_partial: f64 = 0.0;
    for q in 0..=2 * s {
        if coeffs.c[q].is_zero() {
            continue;
        }
        let c = coeffs.c[q].to_f64().unwrap_or(f64::INFINITY);
        let m = s as f64 - q as f64;
        let g = C64::new(-2.0 * phi * phi * m * m, 4.0 * x * phi * m).exp();
        let term = i_pow_f64(q as i64) * c * g;
        let w2 = C64::new(2.0 * x, 2.0 * phi * m);
        sp += term;
        si += term * w2;
        si2 += term * (C64::from(1.0) + w2 * w2);
        max_partial = max_partial.max(sp.norm());
    }
    let rot = i_pow_f64(s as i64 - 2 * n as i64);
    let sp = rot * sp;
    let si = rot * si;
    let si2 = rot * si2;
    SumOutput {
        p: (sp.re, sp.im),
        i1: (si.re, si.im),
        i2: (si2.re, si2.im),
        ln_p_sum: sp.re.abs().ln(),
        ratio: max_partial / sp.norm(),
    }
}

/// Evaluate the three sums in extended precision.
fn sums_extended(
    s: usize,
    n: usize,
    phi: f64,
    x: f64,
    coeffs: &CoefficientVector,
    bits: u32,
) -> SumOutput {
    let mut ctx = BigCtx::new(bits as usize);
    let mut sp = BigC::zero(&ctx);
    let mut si = BigC::zero(&ctx);
    let mut si2 = BigC::zero(&ctx);
    let phi_b = ctx.real(phi);
    let x_b = ctx.real(x);
    let two = ctx.real(2.0);
    let four = ctx.real(4.0);
    let one = ctx.real(1.0);
    let mut max_partial_sq = ctx.real(0.0);
    for q in 0..=2 * s {
        if coeffs.c[q].is_zero() {
            continue;
        }
        let m = ctx.real(s as f64 - q as f64);
        // g = exp(-2 phi^2 m^2 + i 4 x phi m)
        let phim = ctx.mul(&phi_b, &m);
        let phim_sq = ctx.mul(&phim, &phim);
        let re_arg = ctx.neg(&ctx.mul(&two, &phim_sq));
        let im_arg = ctx.mul(&four, &ctx.mul(&x_b, &phim));
        let g = ctx.exp_complex(&re_arg, &im_arg);
        let c = ctx.integer(&coeffs.c[q]);
        let term = g.scale(&c, &mut ctx).mul_i_pow(q as i64);
        // 2 w_q = 2x + 2 i phi m
        let w2 = BigC {
            re: ctx.mul(&two, &x_b),
            im: ctx.mul(&two, &phim),
        };
        let w2sq = w2.mul(&w2, &mut ctx);
        let one_plus = BigC {
            re: ctx.add(&one, &w2sq.re),
            im: w2sq.im.clone(),
        };
        sp = sp.add(&term, &mut ctx);
        si = si.add(&term.mul(&w2, &mut ctx), &mut ctx);
        si2 = si2.add(&term.mul(&one_plus, &mut ctx), &mut ctx);
        let mag = sp.abs_sq(&mut ctx);
        if big::cmp(&mag, &max_partial_sq) > 0 {
            max_partial_sq = mag;
        }
    }
    let rot = s as i64 - 2 * n as i64;
    let sp = sp.mul_i_pow(rot);
    let si = si.mul_i_pow(rot);
    let si2 = si2.mul_i_pow(rot);
    let final_sq = sp.abs_sq(&mut ctx);
    let ratio_sq = ctx.div(&max_partial_sq, &final_sq);
    let ln_p_sum = ctx.ln_abs(&sp.re);
    SumOutput {
        p: (ctx.to_f64(&sp.re), ctx.to_f64(&sp.im)),
        i1: (ctx.to_f64(&si.re), ctx.to_f64(&si.im)),
        i2: (ctx.to_f64(&si2.re), ctx.to_f64(&si2.im)),
        ln_p_sum,
        ratio: ctx.to_f64(&ratio_sq).sqrt(),
    }
}

/// Closed-form probability and conditioned moments for the outcome class
/// `(s - n, n)` at interaction phase `phi` and initial real amplitude
/// `re_alpha0`. Only the real part of the initial amplitude enters.
pub fn outcome_statistics(
    s: usize,
    n: usize,
    phi: f64,
    re_alpha0: f64,
    mode: PrecisionMode,
) -> Result<OutcomeStatistics> {
    if s == 0 || n > s {
        return Err(Error::Config(format!(
            "invalid outcome class: s = {s}, n = {n}"
        )));
    }
    if !phi.is_finite() || phi < 0.0 {
        return Err(Error::Config(format!("invalid phase {phi}")));
    }
    let coeffs = coefficient_vector(s, n);
    let out = match mode {
        PrecisionMode::Double => sums_double(s, n, phi, re_alpha0, &coeffs),
        PrecisionMode::Extended(bits) => {
            if bits < 64 {
                return Err(Error::Config(format!(
                    "extended precision needs at least 64 bits, got {bits}"
                )));
            }
            sums_extended(s, n, phi, re_alpha0, &coeffs, bits)
        }
    };

    // Cancellation monitor: the result retains roughly
    // bits - log2(ratio) significant bits.
    let limit = match mode {
        PrecisionMode::Double => DOUBLE_CANCELLATION_LIMIT,
        PrecisionMode::Extended(bits) => 2f64.powi(bits as i32 - 40),
    };
    if !out.ratio.is_finite() || out.ratio >= limit {
        return Err(Error::Precision {
            ratio: out.ratio,
            bits: mode.bits(),
            suggested_bits: if out.ratio.is_finite() {
                out.ratio.log2().ceil().max(0.0) as u32 + 64
            } else {
                4 * s as u32 + 64
            },
        });
    }

    // The physical quantities are real; the imaginary parts must be residue.
    let scale = (out.p.0 * out.p.0 + out.p.1 * out.p.1).sqrt();
    for (name, im) in [("P", out.p.1), ("<I>", out.i1.1), ("<I^2>", out.i2.1)] {
        if im.abs() > 1e-8 * scale {
            return Err(Error::Numeric(format!(
                "imaginary residue {:.3e} in the {name} sum exceeds 1e-8 relative",
                im.abs() / scale
            )));
        }
    }
    if out.p.0 <= 0.0 {
        return Err(Error::Numeric(format!(
            "probability sum is non-positive ({:.3e}); precision exhausted",
            out.p.0
        )));
    }

    let log_prob = out.ln_p_sum - 2.0 * s as f64 * std::f64::consts::LN_2;
    let prob = log_prob.exp();
    if prob > 1.0 + 1e-9 {
        return Err(Error::Numeric(format!("probability {prob:.6e} exceeds 1")));
    }
    let mean_i = out.i1.0 / out.p.0;
    let mean_i2 = out.i2.0 / out.p.0;
    let variance = mean_i2 - mean_i * mean_i;
    if variance <= 0.0 {
        return Err(Error::Numeric(format!(
            "non-positive conditioned variance {variance:.6e}; precision exhausted"
        )));
    }
    Ok(OutcomeStatistics {
        s,
        n,
        phi,
        re_alpha0,
        prob: prob.min(1.0),
        log_prob,
        mean_i,
        mean_i2,
        variance,
        cancellation_ratio: out.ratio,
    })
}

/// The analytic variance law 1/(1 + 4 phi^2 s). `s = 0` is permitted for
/// plotting and gives the vacuum variance 1.
pub fn variance_approx(phi: f64, s: usize) -> f64 {
    1.0 / (1.0 + 4.0 * phi * phi * s as f64)
}

/// One row of the outcome distribution over `n`.
#[derive(Debug, Clone)]
pub struct OutcomeWeight {
    pub n: usize,
    /// C(s, n) · P_(s-n, n).
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

/// Distribution over the number of excited results `n`, with conditioned
/// moments per class. Weights sum to one.
pub fn outcome_distribution(
    s: usize,
    phi: f64,
    re_alpha0: f64,
    mode: PrecisionMode,
) -> Result<Vec<OutcomeWeight>> {
    if s == 0 {
        return Err(Error::Config("distribution needs s >= 1".into()));
    }
    let mut rows = Vec::with_capacity(s + 1);
    for n in 0..=s {
        let stats = outcome_statistics(s, n, phi, re_alpha0, mode)?;
        rows.push(OutcomeWeight {
            n,
            weight: binomial_f64(s, n) * stats.prob,
            mean: stats.mean_i,
            variance: stats.variance,
        });
    }
    let total: f64 = rows.iter().map(|r| r.weight).sum();
    if (total - 1.0).abs() > 1e-8 {
        return Err(Error::Numeric(format!(
            "outcome weights sum to {total:.12}, expected 1"
        )));
    }
    Ok(rows)
}

/// Probability-weighted average of the conditioned variances.
pub fn weighted_variance(rows: &[OutcomeWeight]) -> f64 {
    rows.iter().map(|r| r.weight * r.variance).sum::<f64>()
        / rows.iter().map(|r| r.weight).sum::<f64>()
}

/// Displacement convention for the squeezed reference state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DisplacementConvention {
    /// beta = <I>/2, so the reference state's quadrature mean matches the
    /// conditioned state's. The default.
    MatchedMean,
    /// beta = <I> taken literally; the reference then has mean 2<I>.
    Literal,
}

/// Fidelity of the conditioned state (vacuum start) against the displaced
/// squeezed reference D(beta) S(-log DeltaI) |0>, with beta set by
/// `convention`.
pub fn squeezed_target_fidelity_with(
    s: usize,
    n: usize,
    phi: f64,
    cfg: HilbertConfig,
    convention: DisplacementConvention,
) -> Result<f64> {
    if s == 0 {
        // Degenerate case: the conditioned state is the vacuum itself.
        return Ok(1.0);
    }
    let cond = conditioned_state(s, n, C64::from(0.0), phi, cfg)?;
    let m = quadrature_moments(&cond.state);
    let r = -0.5 * m.variance.ln();
    let beta = match convention {
        DisplacementConvention::MatchedMean => m.mean / 2.0,
        DisplacementConvention::Literal => m.mean,
    };
    let sq = squeeze_operator(C64::from(r), cfg)?;
    let disp = displacement_operator(C64::from(beta), cfg);
    let target = FockVector::new(disp * (sq * FockVector::vacuum(cfg).amplitudes()))?;
    target.check_truncation()?;
    Ok(fidelity(&cond.state, &target))
}

/// Fidelity under the matched-mean displacement convention.
pub fn squeezed_target_fidelity(s: usize, n: usize, phi: f64, cfg: HilbertConfig) -> Result<f64> {
    squeezed_target_fidelity_with(s, n, phi, cfg, DisplacementConvention::MatchedMean)
}

/// One verified identity in the derivation report.
#[derive(Debug, Clone)]
pub struct DerivationCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Machine verification of the identities behind the variance law.
#[derive(Debug, Clone)]
pub struct DerivationReport {
    pub s: usize,
    pub phi: f64,
    pub checks: Vec<DerivationCheck>,
}

impl DerivationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Derivative check: (1/P) d/dphi (phi P) against <I^2> - 2 x <I> by central
/// difference, with one Richardson refinement if the plain stencil misses.
fn recurrence_residual(s: usize, n: usize, phi: f64, x: f64) -> Result<(f64, f64)> {
    let mode = PrecisionMode::extended_for(s);
    let stats = outcome_statistics(s, n, phi, x, mode)?;
    let expected = stats.mean_i2 - 2.0 * x * stats.mean_i;
    let diff = |h: f64| -> Result<f64> {
        let hi = outcome_statistics(s, n, phi + h, x, mode)?;
        let lo = outcome_statistics(s, n, phi - h, x, mode)?;
        Ok((((phi + h) * hi.prob) - ((phi - h) * lo.prob)) / (2.0 * h * stats.prob))
    };
    let h = 1e-5;
    let d1 = diff(h)?;
    let mut residual = (d1 - expected).abs() / expected.abs();
    let mut value = d1;
    if residual > 1e-6 {
        let d2 = diff(h / 2.0)?;
        value = (4.0 * d2 - d1) / 3.0;
        residual = (value - expected).abs() / expected.abs();
    }
    Ok((value, residual))
}

/// Run the derivation checks at even `s` (the exact legs need s <= 64).
pub fn derivation_checks(s: usize, phi: f64, cfg: HilbertConfig) -> Result<DerivationReport> {
    if s == 0 || s % 2 != 0 {
        return Err(Error::Config(format!(
            "derivation checks need even s, got {s}"
        )));
    }
    if s > 64 {
        return Err(Error::Config(format!(
            "exact derivation legs are limited to s <= 64, got {s}"
        )));
    }
    let mut checks = Vec::new();

    // (a) The probability-derivative identity, with and without the
    // initial-amplitude term.
    for (n, x) in [(s / 2, 0.0), (s / 4, 0.0), (s / 2, 0.5), (3 * s / 4, 0.5)] {
        let (value, residual) = recurrence_residual(s, n, phi, x)?;
        checks.push(DerivationCheck {
            name: format!("derivative identity at n={n}, Re alpha0={x}"),
            passed: residual < 1e-6,
            detail: format!("finite difference {value:.10}, relative residual {residual:.3e}"),
        });
    }

    // (b) The alternating convolution collapses to a central binomial:
    // i^q sum_k (-1)^k C(s,k) C(s,q-k) = C(s, q/2) for even q, 0 for odd q.
    let mut leg_b_ok = true;
    let mut leg_b_detail = String::from("exact big-integer equality for every q");
    for q in 0..=2 * s {
        let mut acc = BigInt::zero();
        for k in q.saturating_sub(s)..=q.min(s) {
            let term = binomial_big(s, k) * binomial_big(s, q - k);
            if k % 2 == 0 {
                acc += term;
            } else {
                acc -= term;
            }
        }
        let ok = if q % 2 == 1 {
            acc.is_zero()
        } else {
            let rotated = if (q / 2) % 2 == 0 { acc.clone() } else { -acc };
            rotated == binomial_big(s, q / 2)
        };
        if !ok {
            leg_b_ok = false;
            leg_b_detail = format!("mismatch at q = {q}");
            break;
        }
    }
    checks.push(DerivationCheck {
        name: "central-binomial identity".into(),
        passed: leg_b_ok,
        detail: leg_b_detail,
    });

    // (c) Asymptotic form of the symmetric-record probability.
    let stats = outcome_statistics(s, s / 2, phi, 0.0, PrecisionMode::extended_for(s))?;
    let asymptotic = 2f64.powi(-(s as i32)) / (1.0 + 4.0 * phi * phi * s as f64).sqrt();
    let dev_c = (stats.prob / asymptotic - 1.0).abs();
    let in_regime = s >= 32 && phi * (s as f64).sqrt() >= 0.5;
    checks.push(DerivationCheck {
        name: "asymptotic symmetric probability".into(),
        passed: !in_regime || dev_c < 0.02,
        detail: format!(
            "exact/asymptotic - 1 = {:+.4e}{}",
            stats.prob / asymptotic - 1.0,
            if in_regime {
                ""
            } else {
                " (outside the asymptotic regime; informational)"
            }
        ),
    });

    // (d) Variance law at the symmetric record.
    let dev_d = (stats.variance / variance_approx(phi, s) - 1.0).abs();
    checks.push(DerivationCheck {
        name: "variance law at n = s/2".into(),
        passed: !in_regime || dev_d < 0.02,
        detail: format!(
            "exact/approx - 1 = {:+.4e}{}",
            stats.variance / variance_approx(phi, s) - 1.0,
            if in_regime {
                ""
            } else {
                " (outside the asymptotic regime; informational)"
            }
        ),
    });

    // Squeezed-reference fidelity under both displacement conventions, at an
    // asymmetric record where the conventions differ.
    let n_off = s / 2 + (s / 8).max(1);
    if n_off <= s {
        let matched =
            squeezed_target_fidelity_with(s, n_off, phi, cfg, DisplacementConvention::MatchedMean)?;
        let literal =
            squeezed_target_fidelity_with(s, n_off, phi, cfg, DisplacementConvention::Literal)?;
        checks.push(DerivationCheck {
            name: format!("squeezed-reference fidelity at n={n_off}"),
            passed: matched >= literal,
            detail: format!(
                "matched-mean convention {matched:.6}, literal convention {literal:.6}"
            ),
        });
    }

    Ok(DerivationReport { s, phi, checks })
}
