//! Lyapunov exponents of strangeness-free stochastic differential-algebraic
//! equations.
//!
//! A semi-explicit SDAE is reduced to its underlying Itô SDE
//! ([`model::reduce_to_underlying`]); the exponents of that SDE are then
//! estimated by the discrete or the continuous QR method
//! ([`lyapunov::discrete_qr_run`], [`lyapunov::continuous_qr_run`]) over
//! Euler–Maruyama or Milstein steps, and aggregated over independent
//! realizations by [`ensemble`].

pub mod ensemble;
pub mod error;
pub mod integrators;
pub mod linalg;
pub mod lyapunov;
pub mod model;
pub mod models;
pub mod oracle;

pub use ensemble::{run_ensemble, EnsembleReport, Workers};
pub use error::{Error, Result};
pub use integrators::{SchemeKind, WienerStream};
pub use linalg::{Matrix, QrFactors};
pub use lyapunov::{LeAccumulator, LeRunConfig, Method};
pub use model::{SdeSystem, SemiExplicitSdae};
pub use models::{build_model, ModelInstance};
