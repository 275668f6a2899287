//! Bayesian treatment-response trajectories from irregular glucose series and
//! self-reported meal logs, with errors-in-variables corrections for reported
//! meal times and amounts.
//!
//! The crate is organised around six pieces:
//! * [`model`] — the response curves, coefficient links and the joint log-posterior;
//! * [`gp`] — low-rank Gaussian-process trend (SE + constant kernel, inducing points);
//! * [`inference`] — tape autodiff, NUTS with warmup adaptation, convergence diagnostics;
//! * [`simulate`] — toy / generative / from-fit dataset synthesis with recorded ground truth;
//! * [`eval`] — trajectory metrics, rank tests, PSIS-LOO;
//! * [`cli`] — ingestion, artifact I/O and the five subcommands of the `eivtraj` binary.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod gp;
pub mod inference;
pub mod math;
pub mod model;
pub mod params;
pub mod simulate;

pub use data::{PatientData, TreatmentEvent};
pub use error::Error;
pub use model::{ModelSpec, Variant};

pub type Result<T> = std::result::Result<T, Error>;
