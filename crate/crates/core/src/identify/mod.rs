//! Identifiability tools: graph classification, latent independence,
//! constructive non-identifiable families, rank checks and chi-square tests
//! of identifiability.

pub mod alternatives;
pub mod chi2;
pub mod classify;
pub mod latent;
pub mod rank;

pub use alternatives::{
    construct_prop1_alternatives, construct_thm2b_alternatives, AlternativeFamily, Construction,
};
pub use chi2::{
    chi2_independence_test, chi2_survival, identifiability_test, identifiability_test_latents,
    IdentifiabilityTest, Strategy, TestReport,
};
pub use classify::{classify_graph, GraphClassification, LatentVerdict, OverallVerdict};
pub use latent::{latent_independence_check, pk_matrix, IndependenceCheck, PkMatrix};
pub use rank::{kruskal_rank_check, RankCheck};
