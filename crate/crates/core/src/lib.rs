//! Embeds users and the content they consume into one vector space, then
//! measures how tightly each user's attention is confined within it.
//!
//! The pipeline runs in stages:
//!
//! 1. [`corpus`] ingests event logs and category tables.
//! 2. [`embedding`] trains user (document) and item (word) vectors with
//!    PV-DBOW plus item-to-item skip-gram, both under negative sampling.
//! 3. [`geometry`] turns a trained space into per-user cocoon metrics:
//!    radius of gyration, range, distance to entertainment and friends.
//! 4. [`nullmodel`] shuffles each user's sequence (no two adjacent items
//!    equal), retrains, and tests observed radii against the expectation.
//! 5. [`stats`] provides the t distribution, paired tests and OLS.
//!
//! [`synth`] generates corpora with planted structure and [`pipeline`]
//! wires everything to files for the `cocoon` binary.

// Index loops read closer to the matrix formulas; `!(x > 0.0)` style
// guards deliberately reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod embedding;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod nullmodel;
pub mod pipeline;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
