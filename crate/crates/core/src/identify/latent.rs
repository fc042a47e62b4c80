use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{BlessError, Result};
use crate::model::{latent_bit, LatentProportions};

/// Tolerance on `sigma2 / sigma1` for exactly known proportions.
pub const INDEPENDENCE_TOL: f64 = 1e-8;
/// Looser tolerance for proportions estimated by EM, whose sampling noise
/// is far above machine precision.
pub const ESTIMATE_INDEPENDENCE_TOL: f64 = 1e-2;

/// `2^(K-1) x 2` rearrangement of `nu`: row `r` holds the proportions of
/// `(alpha_{-k} = r, alpha_k = 0)` and `(alpha_{-k} = r, alpha_k = 1)`, with
/// `r` big-endian over the other latents.
#[derive(Debug, Clone, PartialEq)]
pub struct PkMatrix {
    pub m: DMatrix<f64>,
}

impl PkMatrix {
    /// Ratio `P(alpha_k = 1) / P(alpha_k = 0)`.
    pub fn column_ratio(&self) -> f64 {
        self.m.column(1).sum() / self.m.column(0).sum()
    }

    /// Marginal pmf of `alpha_{-k}`.
    pub fn row_sums(&self) -> Vec<f64> {
        self.m.row_iter().map(|r| r.sum()).collect()
    }

    /// `sigma2 / sigma1`; zero for a single row.
    pub fn singular_ratio(&self) -> f64 {
        let sv = self.m.clone().svd(false, false).singular_values;
        let mut s: Vec<f64> = sv.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        if s.len() < 2 || s[0] == 0.0 {
            0.0
        } else {
            s[1] / s[0]
        }
    }
}

pub fn pk_matrix(nu: &LatentProportions, k: usize) -> Result<PkMatrix> {
    let n_latent = nu.k();
    if k >= n_latent {
        return Err(BlessError::IndexOutOfRange { index: k, len: n_latent });
    }
    let rows = 1usize << (n_latent - 1);
    let mut m = DMatrix::zeros(rows, 2);
    for l in 0..nu.len() {
        let rest = (0..n_latent)
            .filter(|&x| x != k)
            .fold(0usize, |acc, x| (acc << 1) | latent_bit(l, x, n_latent));
        m[(rest, latent_bit(l, k, n_latent))] = nu.get(l);
    }
    Ok(PkMatrix { m })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndependenceCheck {
    pub independent: bool,
    /// `sigma2 / sigma1` of the P^(k) matrix.
    pub measure: f64,
    /// `P(alpha_k = 1) / P(alpha_k = 0)`.
    pub rho: f64,
    pub tol: f64,
}

/// `alpha_k` is independent of the remaining latents iff the two columns of
/// [`pk_matrix`] are proportional, i.e. its second singular value vanishes.
pub fn latent_independence_check(nu: &LatentProportions, k: usize, tol: f64) -> Result<IndependenceCheck> {
    let pk = pk_matrix(nu, k)?;
    let measure = pk.singular_ratio();
    Ok(IndependenceCheck {
        independent: measure < tol,
        measure,
        rho: pk.column_ratio(),
        tol,
    })
}

/// `nu_00 nu_11 - nu_01 nu_10` for two latents.
pub fn k2_determinant(nu: &LatentProportions) -> Result<f64> {
    if nu.k() != 2 {
        return Err(BlessError::Dimension(format!("expected K = 2, got {}", nu.k())));
    }
    let v = nu.values();
    Ok(v[0] * v[3] - v[1] * v[2])
}

/// Euclidean distance from a two-latent `nu` to the independence surface
/// `{ (1-a)(1-b), (1-a)b, a(1-b), ab }`. For fixed `a` the surface is a
/// segment in `b`, so the inner minimization is a projection; the outer one
/// is a grid scan refined by golden-section search.
pub fn k2_surface_distance(nu: &LatentProportions) -> Result<f64> {
    if nu.k() != 2 {
        return Err(BlessError::Dimension(format!("expected K = 2, got {}", nu.k())));
    }
    let v = nu.values();
    let dist_at = |a: f64| -> f64 {
        let u = [1.0 - a, 0.0, a, 0.0];
        let w = [-(1.0 - a), 1.0 - a, -a, a];
        let num: f64 = (0..4).map(|i| (v[i] - u[i]) * w[i]).sum();
        let den: f64 = w.iter().map(|x| x * x).sum();
        let b = (num / den).clamp(0.0, 1.0);
        (0..4).map(|i| (v[i] - u[i] - b * w[i]).powi(2)).sum::<f64>()
    };
    let grid = 200;
    let mut best = 0;
    let vals: Vec<f64> = (0..=grid).map(|i| dist_at(i as f64 / grid as f64)).collect();
    for i in 0..=grid {
        if vals[i] < vals[best] {
            best = i;
        }
    }
    let mut lo = (best.saturating_sub(1)) as f64 / grid as f64;
    let mut hi = ((best + 1).min(grid)) as f64 / grid as f64;
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let x1 = hi - phi * (hi - lo);
        let x2 = lo + phi * (hi - lo);
        if dist_at(x1) < dist_at(x2) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    Ok(dist_at(0.5 * (lo + hi)).min(vals[best]).sqrt())
}
