//! Regularized factor-augmented VAR estimation.
//!
//! The pipeline: ingest a multi-series panel ([`panel`]), extract an
//! initial factor structure ([`init`]), fit sparse loadings by penalized
//! quasi-maximum likelihood with majorize-minimize EM sweeps ([`em`]),
//! re-estimate the idiosyncratic covariance by soft thresholding
//! ([`poet`]), fit the factor VAR ([`var`]), identify structural shocks
//! ([`identify`]) and trace impulse responses with bootstrap bands
//! ([`irf`]). A synthetic generator ([`dgp`]) and a Monte Carlo runner
//! ([`mc`]) make the estimator's consistency checkable at desk scale.

pub mod align;
pub mod dgp;
pub mod em;
pub mod identify;
pub mod init;
pub mod irf;
pub mod linalg;
pub mod loadings;
pub mod mc;
pub mod panel;
pub mod poet;
pub mod var;

pub use dgp::{DgpConfig, DgpTruth};
pub use em::{FitOptions, PenaltyPair, RfavarFit};
pub use identify::{IdentifiedModel, RotationPair, Scheme};
pub use init::InitState;
pub use irf::IrfResult;
pub use loadings::LoadingsMatrix;
pub use panel::{LoadedPanel, SeriesSpec, TimePanel};
pub use poet::ThresholdedCov;
pub use var::VarModel;
