use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{BlessError, Result};
use crate::model::BlessModel;

/// Singular-value ratio above which a column counts toward the rank.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankCheck {
    /// 1-based latent index.
    pub latent: usize,
    /// 1-based items whose `d x 2` tables were checked.
    pub children: Vec<usize>,
    pub ranks: Vec<usize>,
    pub sigma_ratios: Vec<f64>,
    pub full_rank: bool,
}

/// Numerical column rank of `[theta0 | theta1]`, and its `sigma2/sigma1`.
pub fn factor_rank(theta0: &[f64], theta1: &[f64]) -> (usize, f64) {
    let d = theta0.len();
    let m = DMatrix::from_fn(d, 2, |c, s| if s == 0 { theta0[c] } else { theta1[c] });
    let mut sv: Vec<f64> = m.svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[0] == 0.0 {
        return (0, 0.0);
    }
    let ratio = sv.get(1).copied().unwrap_or(0.0) / sv[0];
    (if ratio > RANK_TOL { 2 } else { 1 }, ratio)
}

/// Checks the conditional tables of the first three children of latent `k`
/// for full column rank.
pub fn kruskal_rank_check(model: &BlessModel, k: usize) -> Result<RankCheck> {
    if k >= model.k() {
        return Err(BlessError::IndexOutOfRange { index: k, len: model.k() });
    }
    let kids = model.g.children_of(k);
    if kids.len() < 3 {
        return Err(BlessError::Precondition(format!(
            "latent {} has {} children; the rank check needs at least 3",
            k + 1,
            kids.len()
        )));
    }
    let (ranks, sigma_ratios): (Vec<_>, Vec<_>) = kids[..3]
        .iter()
        .map(|&j| factor_rank(&model.items[j].theta0, &model.items[j].theta1))
        .unzip();
    Ok(RankCheck {
        latent: k + 1,
        children: kids[..3].iter().map(|j| j + 1).collect(),
        full_rank: ranks.iter().all(|&r| r == 2),
        ranks,
        sigma_ratios,
    })
}
