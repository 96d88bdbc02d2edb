//! Uncertainty bounds, LMI certificates and Lyapunov audits.

mod audit;
mod bounds;
mod certificate;
pub mod lmi;
pub mod sdp;
mod uncertainty;

use thiserror::Error;

use crate::matrix_time::MatrixTimeError;
use crate::quantizer::QuantizerError;

pub use audit::{
    audit_constants, lyapunov_audit, residual_set, AuditConstants, AuditModel, IntervalAudit, LyapunovAudit, ResidualSet,
    MIN_SUBSTEPS,
};
pub use bounds::{
    disturbance_energy_bound, eta_bound, gramian_inverse_norm, inverse_square_gain_sum, log_perturbation_bound,
    perturbation_bounds, perturbation_level, schedule_admissible, uncertainty_bounds, PerturbationBounds, ScheduleCheck, ScheduleVerdict,
    UncertaintyBounds, WITNESS_TERMS,
};
pub use certificate::{
    check_certificate, min_quantization_gain, solve_feasibility, Feasibility, FeasibilityOptions, InfeasibleReport,
    MarginReport, StabilityCertificate,
};
pub use lmi::{assemble, margins, CertificateVars, LmiBlocks, LmiMargins, LmiProblem};
pub use uncertainty::{nominal_closed_loop, RealizedUncertainty};

#[derive(Debug, Error)]
pub enum StabilityError {
    #[error("matrix function: {0}")]
    Matrix(#[from] MatrixTimeError),
    #[error("gain schedule: {0}")]
    Quantizer(#[from] QuantizerError),
    #[error("bounds undefined: {0}")]
    Inadmissible(String),
    #[error("no certificate: {0}")]
    Infeasible(String),
    #[error("certificate file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
