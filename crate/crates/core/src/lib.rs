//! Binary latent star-forest (BLESS) models.
//!
//! A BLESS model has `K` binary latent variables with an arbitrary joint
//! distribution `nu` over the `2^K` patterns, and `p` observed categorical
//! items. Every item has exactly one latent parent, recorded in the
//! graphical matrix `G`, and its distribution depends on the latent pattern
//! only through the state of that parent.
//!
//! The crate provides:
//!
//! - [`model`]: model types, validation and the exact response pmf computed
//!   by direct enumeration and by a Khatri-Rao product.
//! - [`tensor`]: Khatri-Rao/Kronecker products and the invertible transform
//!   relating shifted and unshifted conditional probability tables.
//! - [`simulate`]: seeded model generators and dataset sampling.
//! - [`em`]: EM estimation with known or unknown `G`, multi-start, alignment.
//! - [`identify`]: graph classification, latent independence checks,
//!   constructive non-identifiable families and chi-square tests.
//! - [`experiment`]: the numerical experiments wired up by the CLI.
//!
//! Latent patterns are indexed big-endian: pattern `l` has
//! `alpha_k = (l >> (K - 1 - k)) & 1` for 0-based `k`. Response patterns
//! are indexed row-major with the first item most significant. Categories
//! are 0-based in memory and 1-based in every file format.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod em;
pub mod error;
pub mod experiment;
pub mod identify;
pub mod model;
pub mod simulate;
pub mod tensor;

pub use data::Dataset;
pub use em::{EmConfig, EmResult};
pub use error::{BlessError, Result};
pub use model::{
    BlessModel, GraphicalMatrix, ItemCpt, LatentProportions, PhiTable, ResponsePmf,
    ValidationReport,
};
pub use simulate::SimConfig;
