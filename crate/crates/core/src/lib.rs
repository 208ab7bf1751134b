//! Simulator and analysis toolkit for a qubit-based indirect quadrature
//! measurement protocol acting on a harmonic oscillator.
//!
//! The oscillator is repeatedly entangled with a qubit through a modulated
//! quadrature coupling; each binary qubit readout updates the oscillator
//! state through a pair of commuting Kraus operators. Iterating the cycle
//! sharpens the quadrature distribution and produces squeezed states.
//!
//! The crate is organized around that protocol:
//!
//! - [`fockspace`]: dense truncated-Fock-space operators, canonical states,
//!   moments, and fidelities;
//! - [`measurement`]: Kraus pair construction, stochastic measurement
//!   trajectories, ensemble statistics, and the brute-force conditioned-state
//!   oracle;
//! - [`analytic`]: closed-form conditional outcome statistics, the variance
//!   law, and machine checks of the supporting identities;
//! - [`dephasing`]: 1/f noise synthesis, the CPMG filter function, the
//!   readout-phase correlation matrix, and noise-averaged conditioned states;
//! - [`open_system`]: Lindblad dynamics of the coupled qubit-oscillator
//!   system and the dissipative protocol run.

pub mod analytic;
pub mod dephasing;
pub mod error;
pub mod fockspace;
pub mod linalg;
pub mod measurement;
pub mod open_system;
pub mod seeding;

pub use error::{Error, Result};
