//! Sequential regression (chained equations) multiple imputation with
//! missingness-model extensions for not-at-random mechanisms.
//!
//! The crate provides:
//! - a data model for rectangular datasets with per-cell missingness ([`data`]),
//! - design-matrix construction with interactions, missingness indicators and
//!   natural cubic spline bases ([`design`]),
//! - linear / logistic / multinomial fitters with bootstrap and
//!   normal-approximation parameter draws ([`glm`]),
//! - response-indicator models and the offset variables derived from them
//!   ([`missingness`]),
//! - per-variable imputers covering the indicator, interaction, spline,
//!   offset and exact (rejection-sampled) strategies ([`impute`]),
//! - the chained-equations driver producing M completed datasets ([`engine`]),
//! - per-imputation analyses and Rubin's combining rules ([`pool`]),
//! - a simulation harness measuring bias / variance / coverage over a
//!   missingness-strength grid ([`sim`]).

pub mod config;
pub mod data;
pub mod design;
pub mod engine;
pub mod error;
pub mod glm;
pub mod impute;
pub mod linalg;
pub mod missingness;
pub mod pool;
pub mod rng;
pub mod sim;
pub mod stats;

pub use data::{Dataset, ImputationStrategy, StrategyKind, VarKind, VariableSpec};
pub use engine::{EngineConfig, ImputedSet, VisitOrder};
pub use error::{Error, Result};
