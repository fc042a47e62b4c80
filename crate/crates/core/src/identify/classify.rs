use serde::Serialize;

use crate::error::Result;
use crate::model::GraphicalMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatentVerdict {
    /// Fewer than two children.
    NonIdentifiable,
    /// Exactly two children: identifiable iff the latent is dependent on
    /// the others.
    GenericBoundary,
    /// Three or more children.
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverallVerdict {
    NonIdentifiable,
    Generic,
    Strict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatentSummary {
    /// 1-based latent index.
    pub latent: usize,
    pub children: usize,
    pub verdict: LatentVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphClassification {
    pub child_counts: Vec<usize>,
    pub latents: Vec<LatentSummary>,
    pub overall: OverallVerdict,
    /// 1-based indices of latents with fewer than two children.
    pub non_identifiable_latents: Vec<usize>,
}

impl GraphClassification {
    pub fn is_generic(&self) -> bool {
        self.overall != OverallVerdict::NonIdentifiable
    }
}

pub fn latent_verdict(children: usize) -> LatentVerdict {
    match children {
        0 | 1 => LatentVerdict::NonIdentifiable,
        2 => LatentVerdict::GenericBoundary,
        _ => LatentVerdict::Strict,
    }
}

/// Per-latent child counts and verdicts: generic identifiability needs at
/// least two children per latent, strict identifiability (for any latent
/// dependence) at least three.
pub fn classify_graph(g: &GraphicalMatrix) -> Result<GraphClassification> {
    g.parents()?;
    let child_counts = g.child_counts();
    let latents: Vec<LatentSummary> = child_counts
        .iter()
        .enumerate()
        .map(|(k, &c)| LatentSummary {
            latent: k + 1,
            children: c,
            verdict: latent_verdict(c),
        })
        .collect();
    let min = child_counts.iter().copied().min().unwrap_or(0);
    let overall = match min {
        0 | 1 => OverallVerdict::NonIdentifiable,
        2 => OverallVerdict::Generic,
        _ => OverallVerdict::Strict,
    };
    let non_identifiable_latents = latents
        .iter()
        .filter(|l| l.verdict == LatentVerdict::NonIdentifiable)
        .map(|l| l.latent)
        .collect();
    Ok(GraphClassification {
        child_counts,
        latents,
        overall,
        non_identifiable_latents,
    })
}
