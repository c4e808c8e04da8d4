//! Sample-efficient improvement of Gaussian-mixture dynamical-system policies.
//!
//! The crate is organised bottom-up:
//!
//! - [`gmm`]: joint `(s, ṡ)` mixture policies, EM fitting, regression and model files.
//! - [`updates`]: the bounded update space and the integration operator that applies it.
//! - [`surrogate`]: random-forest surrogate, expected improvement and the optimization loop.
//! - [`episode`]: rollouts and the averaged sparse-reward evaluation.
//! - [`tasks`]: kinematic gate-sequence environments and the scripted demonstrator.
//! - [`harness`]: experiment orchestration, the online-refit baseline and reporting.

pub mod episode;
pub mod error;
pub mod gmm;
pub mod harness;
pub mod seed;
pub mod surrogate;
pub mod tasks;
pub mod trajectory;
pub mod updates;

pub use error::{Error, Result};
pub use gmm::GmmPolicy;
pub use trajectory::{Step, Trajectory};
