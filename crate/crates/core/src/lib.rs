//! Cotton yield prediction from accumulated heat units.
//!
//! Daily temperatures are reduced to a seasonal heat-unit sum ([`weather`]),
//! joined with cultivar, soil and nitrogen records ([`dataset`]) and fed to a
//! bootstrap-aggregated CART regression forest ([`forest`]). [`synthgen`]
//! produces labelled training data from a parametric response surface and
//! [`metrics`] scores predictions. [`pipeline`] chains prep and training.

pub mod dataset;
pub mod forest;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod synthgen;
pub mod weather;
