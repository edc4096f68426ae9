//! Screening establishments for illicit activity from weekly foot-traffic
//! records.
//!
//! The crate is organised as a pipeline of stages, each usable on its own:
//!
//! - [`ingest`]: parse visit and ad records, filter the population, join the
//!   two streams and assign week-level label categories.
//! - [`features`]: the 28 engineered mobility features per establishment-week.
//! - [`forest`]: CART trees bagged into a random forest (the base learner).
//! - [`pu`]: PU Bagging, the spy split and the naive comparator.
//! - [`eval`]: AUC, average precision, recovery, coverage, business-level
//!   cross-validation and permutation importance.
//! - [`rank`]: week-to-establishment aggregation and the budgeted inspection
//!   knapsack.
//! - [`synth`]: a seeded synthetic population with planted signatures.
//! - [`pipeline`]: end-to-end orchestration, manifests and the
//!   hyperparameter sweep.

pub mod error;
pub mod eval;
pub mod features;
pub mod forest;
pub mod ingest;
pub mod io;
pub mod pipeline;
pub mod pu;
pub mod rank;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
