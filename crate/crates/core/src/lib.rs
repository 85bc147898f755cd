//! Certified machine unlearning for stochastic gradient methods.
//!
//! The crate implements (projected) SGD rewind-to-delete (R2D) and SGD
//! descent-to-delete (D2D), the closed-form sensitivity bounds that certify
//! them, Gaussian noise calibration for first- and second-moment bounds, and a
//! Monte Carlo harness that checks every bound against coupled trajectories.
//!
//! Module map:
//!
//! - [`model_zoo`]: loss families with analytically certified constants.
//! - [`data_engine`]: datasets, unlearning requests, keyed batch sampling and
//!   the slot-wise batch coupling between the full and retained datasets.
//! - [`sgd_engine`]: trajectories for learning, retraining and unlearning.
//! - [`certify`]: sensitivity bounds, noise calibration and iteration planning.
//! - [`verify`]: exact and statistical checks producing [`verify::CheckReport`]s.
//! - [`experiment`]: JSON configuration and the `calibrate`/`run`/`sweep`/`verify`
//!   commands used by the CLI and the Python bindings.

pub mod certify;
pub mod data_engine;
pub mod error;
pub mod experiment;
pub mod model_zoo;
pub mod sgd_engine;
pub mod vector;
pub mod verify;

pub use error::{Error, Result};
