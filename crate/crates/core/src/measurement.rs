//! The repeated indirect-measurement protocol on the oscillator.
//!
//! One protocol cycle entangles the qubit with the oscillator quadrature and
//! reads the qubit out, updating the oscillator through one of two commuting
//! Kraus operators,
//!
//! ```text
//! D_g = -1/2 (D - i D†),   D_e = -1/2 (D + i D†),   D = displacement(i phi).
//! ```
//!
//! The qubit never appears explicitly here: the protocol is fully captured by
//! the Kraus pair acting on the oscillator. The explicit qubit lives in
//! [`crate::open_system`].

use num_complex::Complex64 as C64;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fockspace::{
    coherent_state, displacement_operator, quadrature_moments, FockVector, HilbertConfig,
    TRUNCATION_TOL,
};
use crate::linalg::{max_abs, CMat};
use crate::seeding::stream_rng;

/// Initial oscillator state for protocol runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialState {
    Vacuum,
    Coherent(C64),
    /// Thermal mixture with mean occupation `nbar`; each trajectory samples a
    /// Fock level from the Bose-Einstein distribution at the start.
    Thermal(f64),
}

/// Parameters of a repeated-measurement run.
#[derive(Debug, Clone, Copy)]
pub struct ProtocolParams {
    /// Interaction phase phi = (2/pi) g T_e per measurement block.
    pub phi: f64,
    /// Number of measurement repetitions s.
    pub steps: usize,
    pub initial: InitialState,
    pub seed: u64,
    pub hilbert: HilbertConfig,
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.phi > 0.0) {
            return Err(Error::Config(format!(
                "interaction phase must be positive, got {}",
                self.phi
            )));
        }
        if self.steps == 0 {
            return Err(Error::Config("step count must be at least 1".into()));
        }
        if let InitialState::Thermal(nbar) = self.initial {
            if nbar < 0.0 {
                return Err(Error::Config(format!(
                    "thermal occupation must be non-negative, got {nbar}"
                )));
            }
        }
        Ok(())
    }
}

/// The two measurement operators at a given interaction phase.
#[derive(Debug, Clone)]
pub struct KrausPair {
    pub d_g: CMat,
    pub d_e: CMat,
    pub phi: f64,
}

impl KrausPair {
    /// Completeness residual max |D_g†D_g + D_e†D_e - 1| away from the top
    /// two truncation levels, and the commutation residual max |[D_g, D_e]|.
    pub fn residuals(&self) -> (f64, f64) {
        let sum = self.d_g.adjoint() * &self.d_g + self.d_e.adjoint() * &self.d_e;
        let dim = sum.nrows();
        let mut completeness: f64 = 0.0;
        for j in 0..dim - 2 {
            for i in 0..dim - 2 {
                let expected = if i == j { 1.0 } else { 0.0 };
                completeness = completeness.max((sum[(i, j)] - C64::from(expected)).norm());
            }
        }
        let commutation = max_abs(&(&self.d_g * &self.d_e - &self.d_e * &self.d_g));
        (completeness, commutation)
    }

    pub fn dim(&self) -> usize {
        self.d_g.nrows()
    }
}

/// Build the Kraus pair for interaction phase `phi`.
pub fn kraus_pair(phi: f64, cfg: HilbertConfig) -> Result<KrausPair> {
    if !(phi > 0.0) {
        return Err(Error::Config(format!(
            "interaction phase must be positive, got {phi}"
        )));
    }
    let d = displacement_operator(C64::new(0.0, phi), cfg);
    let d_dag = d.adjoint();
    let half = C64::from(-0.5);
    let kp = KrausPair {
        d_g: (&d - &d_dag * C64::i()) * half,
        d_e: (&d + &d_dag * C64::i()) * half,
        phi,
    };
    let (completeness, commutation) = kp.residuals();
    if completeness > 1e-8 || commutation > 1e-8 {
        return Err(Error::Numeric(format!(
            "Kraus pair residuals out of tolerance: completeness {completeness:.3e}, \
             commutation {commutation:.3e}"
        )));
    }
    Ok(kp)
}

/// Result of a single measurement step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// +1 for the excited outcome (operator `D_e`), -1 for ground (`D_g`).
    pub result: i8,
    pub post: FockVector,
    /// Pre-measurement probability of the excited outcome.
    pub p_e: f64,
}

/// Apply one measurement step to `state`, drawing the binary result from the
/// Born rule.
pub fn measure_step<R: Rng>(
    state: &FockVector,
    kp: &KrausPair,
    rng: &mut R,
) -> Result<StepOutcome> {
    let branch_e = &kp.d_e * state.amplitudes();
    let branch_g = &kp.d_g * state.amplitudes();
    let p_e = branch_e.norm_squared();
    let p_g = branch_g.norm_squared();
    if (p_e + p_g - 1.0).abs() > 1e-8 {
        return Err(Error::Numeric(format!(
            "branch probabilities sum to {:.12} instead of 1; state has leaked \
             into the truncation levels",
            p_e + p_g
        )));
    }
    let u: f64 = rng.gen();
    let (result, branch, p) = if u < p_e {
        (1i8, branch_e, p_e)
    } else {
        (-1i8, branch_g, p_g)
    };
    if p < 1e-14 {
        return Err(Error::Internal(
            "drawn measurement branch has vanishing probability".into(),
        ));
    }
    // Deep conditioning anti-squeezes Q, whose Fock tail legitimately reaches
    // the top levels; the probability-sum check above is the truncation
    // control here. Adequacy of `dim` is covered by dim-doubling tests.
    let post = FockVector::new(branch)?;
    Ok(StepOutcome { result, post, p_e })
}

/// One simulated measurement sequence with per-step conditioned moments.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    /// Binary readout results, +1 = excited.
    pub results: Vec<i8>,
    /// <I> after each step.
    pub means: Vec<f64>,
    /// (Delta I)^2 after each step.
    pub variances: Vec<f64>,
    /// Pre-measurement excited probability at each step.
    pub p_excited: Vec<f64>,
    pub final_state: FockVector,
}

impl TrajectoryRecord {
    pub fn final_mean(&self) -> f64 {
        *self.means.last().expect("at least one step")
    }

    pub fn final_variance(&self) -> f64 {
        *self.variances.last().expect("at least one step")
    }

    /// Average of the last `window` readout results (all of them if the
    /// trajectory is shorter).
    pub fn readout_average(&self, window: usize) -> f64 {
        let w = window.min(self.results.len()).max(1);
        let tail = &self.results[self.results.len() - w..];
        tail.iter().map(|&r| r as f64).sum::<f64>() / w as f64
    }
}

fn sample_initial<R: Rng>(
    initial: &InitialState,
    cfg: HilbertConfig,
    rng: &mut R,
) -> Result<FockVector> {
    match *initial {
        InitialState::Vacuum => Ok(FockVector::vacuum(cfg)),
        InitialState::Coherent(alpha) => coherent_state(alpha, cfg),
        InitialState::Thermal(nbar) => {
            if nbar == 0.0 {
                return Ok(FockVector::vacuum(cfg));
            }
            let ratio = nbar / (1.0 + nbar);
            // Truncated, renormalized Bose-Einstein distribution.
            let tail = ratio.powi(cfg.dim() as i32);
            if tail > TRUNCATION_TOL {
                return Err(Error::Truncation(format!(
                    "thermal tail {tail:.3e} beyond truncation {}",
                    cfg.dim()
                )));
            }
            let u: f64 = rng.gen::<f64>() * (1.0 - tail);
            let mut cdf = 0.0;
            let mut p = 1.0 - ratio;
            for n in 0..cfg.dim() {
                cdf += p;
                if u < cdf {
                    return FockVector::fock(n, cfg);
                }
                p *= ratio;
            }
            FockVector::fock(cfg.dim() - 1, cfg)
        }
    }
}

fn run_trajectory_inner<R: Rng>(
    params: &ProtocolParams,
    kp: &KrausPair,
    rng: &mut R,
) -> Result<TrajectoryRecord> {
    let mut state = sample_initial(&params.initial, params.hilbert, rng)?;
    state.check_truncation()?;
    let s = params.steps;
    let mut results = Vec::with_capacity(s);
    let mut means = Vec::with_capacity(s);
    let mut variances = Vec::with_capacity(s);
    let mut p_excited = Vec::with_capacity(s);
    for _ in 0..s {
        let step = measure_step(&state, kp, rng)?;
        state = step.post;
        let m = quadrature_moments(&state);
        results.push(step.result);
        means.push(m.mean);
        variances.push(m.variance);
        p_excited.push(step.p_e);
    }
    Ok(TrajectoryRecord {
        results,
        means,
        variances,
        p_excited,
        final_state: state,
    })
}

/// Run a single measurement trajectory; deterministic for a fixed seed.
pub fn run_trajectory(params: &ProtocolParams) -> Result<TrajectoryRecord> {
    params.validate()?;
    let kp = kraus_pair(params.phi, params.hilbert)?;
    let mut rng = stream_rng(params.seed, 0);
    run_trajectory_inner(params, &kp, &mut rng)
}

/// Ensemble of independent trajectories with per-trajectory derived streams.
#[derive(Debug, Clone)]
pub struct EnsembleStatistics {
    pub records: Vec<TrajectoryRecord>,
}

impl EnsembleStatistics {
    pub fn final_means(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.final_mean()).collect()
    }

    pub fn final_variances(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.final_variance()).collect()
    }

    /// Scatter pairs (trailing readout average, final <I>) per trajectory.
    pub fn readout_pairs(&self, window: usize) -> Vec<(f64, f64)> {
        self.records
            .iter()
            .map(|r| (r.readout_average(window), r.final_mean()))
            .collect()
    }

    /// Pearson correlation between the trailing readout average and the final
    /// quadrature mean.
    pub fn readout_correlation(&self, window: usize) -> f64 {
        pearson(&self.readout_pairs(window))
    }
}

/// Pearson correlation coefficient of a set of sample pairs.
pub fn pearson(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for &(x, y) in pairs {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Run `n_traj` independent trajectories. Trajectory `i` draws from stream
/// `i` of the master seed, so the result is deterministic under any thread
/// scheduling.
pub fn ensemble_statistics(params: &ProtocolParams, n_traj: usize) -> Result<EnsembleStatistics> {
    params.validate()?;
    if n_traj == 0 {
        return Err(Error::Config(
            "ensemble needs at least one trajectory".into(),
        ));
    }
    let kp = kraus_pair(params.phi, params.hilbert)?;
    let records = (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(params.seed, i as u64);
            run_trajectory_inner(params, &kp, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleStatistics { records })
}

/// A state conditioned on a full measurement record, with its probability.
#[derive(Debug, Clone)]
pub struct Conditioned {
    pub state: FockVector,
    /// || D_e^n D_g^{s-n} |alpha_0> ||^2.
    pub prob: f64,
    /// Natural log of `prob`, valid even where `prob` would underflow.
    pub log_prob: f64,
}

/// Apply an explicit record of results to `initial`, renormalizing after each
/// step and accumulating the record probability.
pub fn apply_record(initial: &FockVector, kp: &KrausPair, record: &[i8]) -> Result<Conditioned> {
    let mut amps = initial.amplitudes().clone();
    let mut log_prob = 0.0f64;
    for &r in record {
        let op = if r == 1 { &kp.d_e } else { &kp.d_g };
        amps = op * &amps;
        let nsq = amps.norm_squared();
        if nsq < 1e-300 {
            return Err(Error::Underflow {
                context: "conditioned-state probability".into(),
                log_prob: f64::NEG_INFINITY,
            });
        }
        log_prob += nsq.ln();
        amps /= C64::from(nsq.sqrt());
        let dim = amps.len();
        let top = amps[dim - 1].norm_sqr().max(amps[dim - 2].norm_sqr());
        if top > TRUNCATION_TOL {
            return Err(Error::Truncation(format!(
                "conditioned state leaked population {top:.3e} into the top levels"
            )));
        }
    }
    if log_prob < 1e-300f64.ln() {
        return Err(Error::Underflow {
            context: "conditioned-state probability".into(),
            log_prob,
        });
    }
    Ok(Conditioned {
        state: FockVector::new(amps)?,
        prob: log_prob.exp(),
        log_prob,
    })
}

/// Record with `n` excited results spread evenly over `s` slots. Any order
/// gives the same state because the Kraus operators commute; the balanced
/// order keeps intermediate states compact in the truncated basis.
pub fn balanced_record(s: usize, n: usize) -> Vec<i8> {
    let mut record = Vec::with_capacity(s);
    let mut acc = 0usize;
    for _ in 0..s {
        acc += n;
        if acc >= s {
            acc -= s;
            record.push(1);
        } else {
            record.push(-1);
        }
    }
    record
}

/// Brute-force conditioned state for `n` excited results out of `s`, starting
/// from the coherent state `alpha0`. This is the truncated-Fock oracle that
/// the closed-form statistics in [`crate::analytic`] are checked against.
pub fn conditioned_state(
    s: usize,
    n: usize,
    alpha0: C64,
    phi: f64,
    cfg: HilbertConfig,
) -> Result<Conditioned> {
    if n > s {
        return Err(Error::Config(format!("n = {n} exceeds s = {s}")));
    }
    if s == 0 {
        let state = coherent_state(alpha0, cfg)?;
        return Ok(Conditioned {
            state,
            prob: 1.0,
            log_prob: 0.0,
        });
    }
    let kp = kraus_pair(phi, cfg)?;
    let initial = coherent_state(alpha0, cfg)?;
    apply_record(&initial, &kp, &balanced_record(s, n))
}
