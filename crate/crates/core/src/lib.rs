//! Generalized-propensity-score matching for observational studies with three
//! or more treatment groups.
//!
//! The pipeline is: fit a multinomial logit for the treatment ([`gps`]), trim to
//! the rectangular common support and refit once, match the reference group to
//! every other group with one of twelve algorithms ([`matching`]), then measure
//! covariate balance ([`balance`]) and estimate pairwise effects
//! ([`estimation`]). [`simgen`] and [`harness`] regenerate the skew-t factorial
//! simulation study.

pub mod balance;
pub mod clustering;
pub mod data;
pub mod distance;
pub mod error;
pub mod estimation;
pub mod gps;
pub mod harness;
pub mod matching;
pub mod seeds;
pub mod simgen;

pub use error::{Error, Result};
