//! Dynamic pricing for client recruitment in federated learning.
//!
//! A server recruits randomly arriving clients during the first `T_th` slots of
//! a horizon of `T` slots and trains on their data for the remaining slots.
//! Each slot it posts a price; an arriving client with private unit cost
//! `c ~ U[0, b]` joins when the price covers `c` times its total training time.
//! The crate computes the cost-minimizing price schedules, the recruitment
//! threshold and (for heterogeneous clients) which client types to invite,
//! together with brute-force oracles and a Monte Carlo simulator that check
//! the closed forms.
//!
//! Module map:
//!
//! * [`model`]: shared types, validation, the accuracy-loss surrogate and the
//!   generic schedule evaluator.
//! * [`homogeneous`]: closed-form pricing and threshold for one client type.
//! * [`heterogeneous`]: vector pricing with caps, per-prefix thresholds and
//!   prefix client-type selection.
//! * [`robustness`]: worst-case penalty under noisy data sizes.
//! * [`simulator`]: seeded Monte Carlo realization of the recruitment phase.
//! * [`oracle`]: exhaustive searches used as ground truth.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod heterogeneous;
pub mod homogeneous;
pub mod model;
pub mod oracle;
pub mod robustness;
pub mod simulator;
mod solve;

pub use error::{Error, Result};
pub use model::{
    ClientEvent, ClientType, ClientTypeSet, CostBreakdown, HorizonSplit, MarketParams,
    PriceSchedule, ValidationReport,
};
