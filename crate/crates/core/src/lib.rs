//! Simulation and parameter estimation for spin-electric coupling (SEC) in a
//! photogenerated S=1 charge-transfer triplet.
//!
//! The crate is organised bottom-up:
//!
//! - [`spin`]: the axial zero-field-splitting Hamiltonian, its eigenlevels,
//!   spin-polarised populations and EPR transition lines for one orientation.
//! - [`powder`]: resonance fields, echo-detected field-swept spectra and
//!   orientation-selection distributions for a frozen (isotropic) powder.
//! - [`sec`]: the linear law `δD = κ·E·cos(angle)` and the E-field-modulated
//!   Hahn-echo signal for E parallel or perpendicular to B₀.
//! - [`fit`]: joint least-squares estimation of κ and its spread from echo
//!   curves, plus sensitivity figures.
//! - [`config`], [`table`], [`commands`]: configuration, self-describing CSV
//!   files and the pipeline stages behind the `sec-sim` binary.
//!
//! Units throughout: frequencies and energies in MHz, fields in mT, times in μs,
//! electric fields in V/m and κ in Hz/(V/m). Angles are radians internally.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod fit;
pub mod powder;
pub mod quadrature;
pub mod sec;
pub mod spin;
pub mod table;

use std::path::PathBuf;

pub use fit::{ExperimentalCurve, FitOptions, FitResult};
pub use powder::{FieldPosition, OrientationDistribution, Spectrum};
pub use sec::{EchoCurve, FieldGeometry, SecParams, ShiftModel};
pub use spin::{HamiltonianMatrix, Orientation, SpinSystem, TransitionLine};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid value for `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("matrix is not Hermitian (max deviation {deviation:.3e} MHz)")]
    NonHermitian { deviation: f64 },

    #[error("closed-form levels are only available at theta = 0 or pi/2, got {0}")]
    UnsupportedAngle(f64),

    #[error("no resonant population")]
    NoResonantPopulation,

    #[error("ambiguous level pairing between perturbed and unperturbed Hamiltonians (overlap {overlap:.3})")]
    PairingAmbiguity { overlap: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("{}:{line}: {message}", path.display())]
    Data { path: PathBuf, line: usize, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("fit did not converge after {iterations} iterations (objective {objective:.3e})")]
    NotConverged { iterations: usize, objective: f64 },
}

impl Error {
    pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name: name.to_string(), reason: reason.into() }
    }

    /// Process exit code for the command-line front end:
    /// 1 usage/config, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter { .. } | Error::Config(_) => 1,
            Error::Data { .. } | Error::Io { .. } => 2,
            Error::NonHermitian { .. }
            | Error::UnsupportedAngle(_)
            | Error::NoResonantPopulation
            | Error::PairingAmbiguity { .. }
            | Error::NotConverged { .. } => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Grid sizes and tolerances for every deterministic quadrature in the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Numerics {
    /// Uniform θ grid over [0, π].
    pub theta_points: usize,
    /// Nodes of the D-strain average.
    pub strain_nodes: usize,
    /// Half-span of the D-strain nodes in standard deviations.
    pub strain_span: f64,
    /// Gauss–Hermite nodes of the κ-strain average.
    pub kappa_nodes: usize,
    /// Uniform φ grid over [0, 2π) for the perpendicular geometry.
    pub phi_points: usize,
    /// Coarse scan points used to bracket resonance fields.
    pub scan_points: usize,
    /// Resonance condition tolerance, MHz.
    pub root_tol_mhz: f64,
    /// Largest field step (mT) between neighbouring θ samples of one resonance branch.
    pub branch_jump_mt: f64,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            theta_points: 721,
            strain_nodes: 21,
            strain_span: 3.0,
            kappa_nodes: 15,
            phi_points: 72,
            scan_points: 64,
            root_tol_mhz: 1e-3,
            branch_jump_mt: 2.0,
        }
    }
}

impl Numerics {
    pub fn theta_grid(&self) -> Vec<f64> {
        quadrature::linspace(0.0, std::f64::consts::PI, self.theta_points)
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta_points < 2 {
            return Err(Error::invalid("theta_points", "need at least 2 points"));
        }
        if self.strain_nodes == 0 {
            return Err(Error::invalid("strain_nodes", "must be positive"));
        }
        if self.kappa_nodes == 0 {
            return Err(Error::invalid("kappa_nodes", "must be positive"));
        }
        if self.phi_points == 0 {
            return Err(Error::invalid("phi_points", "must be positive"));
        }
        if self.scan_points < 2 {
            return Err(Error::invalid("scan_points", "need at least 2 points"));
        }
        if !(self.root_tol_mhz > 0.0) {
            return Err(Error::invalid("root_tol_mhz", "must be positive"));
        }
        if !(self.strain_span > 0.0) {
            return Err(Error::invalid("strain_span", "must be positive"));
        }
        if !(self.branch_jump_mt > 0.0) {
            return Err(Error::invalid("branch_jump_mt", "must be positive"));
        }
        Ok(())
    }
}
