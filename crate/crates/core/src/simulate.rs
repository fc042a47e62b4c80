//! Seeded model generators and dataset sampling.
//!
//! All randomness comes from `ChaCha20Rng` seeded through
//! `SeedableRng::seed_from_u64`, so outputs are reproducible across
//! platforms. Independent streams are derived with [`derive_seed`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{BlessError, Result};
use crate::model::{latent_bit, BlessModel, GraphicalMatrix, ItemCpt, LatentProportions};

/// Name recorded in output metadata.
pub const RNG_ALGORITHM: &str = "ChaCha20Rng/seed_from_u64; streams via SplitMix64";

pub type SimRng = ChaCha20Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// SplitMix64 mix of `(seed, stream)`; used to give restarts, datasets and
/// models disjoint generator streams.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub p: usize,
    pub k: usize,
    pub d: usize,
    pub seed: u64,
    /// Minimal `theta1[c] - theta0[c]` for `c < d`.
    pub theta_gap_min: f64,
    /// Minimal latent pattern proportion.
    pub nu_floor: f64,
}

impl SimConfig {
    pub fn new(p: usize, k: usize, d: usize, seed: u64) -> Self {
        Self {
            p,
            k,
            d,
            seed,
            theta_gap_min: 0.1,
            nu_floor: 0.01,
        }
    }

    pub fn with_gap(mut self, gap: f64) -> Self {
        self.theta_gap_min = gap;
        self
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.nu_floor = floor;
        self
    }

    fn check(&self, g: &GraphicalMatrix) -> Result<()> {
        if g.p() != self.p || g.k() != self.k {
            return Err(BlessError::Dimension(format!(
                "G is {}x{}, config says p={}, K={}",
                g.p(),
                g.k(),
                self.p,
                self.k
            )));
        }
        g.parents()?;
        if self.d < 2 {
            return Err(BlessError::InvalidArgument(format!("d = {} < 2", self.d)));
        }
        if !(self.theta_gap_min > 0.0) || 2.0 * (self.d - 1) as f64 * self.theta_gap_min >= 0.9 {
            return Err(BlessError::InvalidArgument(format!(
                "theta_gap_min = {} infeasible for d = {} (need 0 < gap < 0.45/(d-1))",
                self.theta_gap_min, self.d
            )));
        }
        if !(self.nu_floor >= 0.0) || self.nu_floor * (1u64 << self.k) as f64 >= 1.0 {
            return Err(BlessError::InvalidArgument(format!(
                "nu_floor = {} infeasible for K = {}",
                self.nu_floor, self.k
            )));
        }
        Ok(())
    }
}

/// Uniform draw from the probability simplex of dimension `n - 1`.
fn dirichlet_ones<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Uniform simplex draw pushed inside `[floor, 1]` by an affine map.
fn floored_simplex<R: Rng>(rng: &mut R, n: usize, floor: f64) -> Vec<f64> {
    let scale = 1.0 - n as f64 * floor;
    dirichlet_ones(rng, n)
        .into_iter()
        .map(|x| floor + scale * x)
        .collect()
}

/// One item table satisfying `theta1[c] - theta0[c] >= gap` for `c < d`.
///
/// `theta0` is a uniform simplex draw mixed towards the last category so that
/// enough mass is available; `theta1` then moves a random share of that mass
/// onto the first `d - 1` categories.
pub fn random_item<R: Rng>(rng: &mut R, d: usize, gap: f64) -> ItemCpt {
    let tau = 2.0 * (d - 1) as f64 * gap;
    let raw = dirichlet_ones(rng, d);
    let mut theta0: Vec<f64> = raw.iter().map(|x| (1.0 - tau) * x).collect();
    theta0[d - 1] += tau;
    let keep = rng.random_range(0.05..0.5);
    let available = theta0[d - 1] * (1.0 - keep);
    let extra = available - (d - 1) as f64 * gap;
    let w = dirichlet_ones(rng, d - 1);
    let mut theta1: Vec<f64> = (0..d - 1)
        .map(|c| theta0[c] + gap + extra * w[c])
        .collect();
    theta1.push(theta0[d - 1] * keep);
    ItemCpt::new(theta0, theta1)
}

fn random_items<R: Rng>(rng: &mut R, config: &SimConfig) -> Vec<ItemCpt> {
    (0..config.p)
        .map(|_| random_item(rng, config.d, config.theta_gap_min))
        .collect()
}

/// Random valid model for the given graph; deterministic in `config.seed`.
pub fn random_model(config: &SimConfig, g: &GraphicalMatrix) -> Result<BlessModel> {
    config.check(g)?;
    let mut rng = rng_from_seed(config.seed);
    let items = random_items(&mut rng, config);
    let nu = floored_simplex(&mut rng, 1 << config.k, config.nu_floor);
    BlessModel::new(g.clone(), items, LatentProportions::new(config.k, nu)?, config.d)
}

/// Random model whose `nu` is the outer product of a distribution of latent
/// `k` (0-based) and a distribution of the other latents, so `alpha_k` is
/// independent of the rest by construction.
pub fn random_model_on_independence_surface(
    config: &SimConfig,
    g: &GraphicalMatrix,
    k: usize,
) -> Result<BlessModel> {
    config.check(g)?;
    if k >= config.k {
        return Err(BlessError::IndexOutOfRange { index: k, len: config.k });
    }
    let mut rng = rng_from_seed(config.seed);
    let items = random_items(&mut rng, config);
    let rest = 1usize << (config.k - 1);
    // split the floor: q >= t and r >= floor / t with both feasible
    let t = 0.5 * (rest as f64 * config.nu_floor + 0.5);
    let q = floored_simplex(&mut rng, 2, t);
    let r = floored_simplex(&mut rng, rest, config.nu_floor / t);
    let nu = surface_nu(config.k, k, &q, &r);
    BlessModel::new(g.clone(), items, LatentProportions::new(config.k, nu)?, config.d)
}

/// `nu[alpha] = q[alpha_k] * r[alpha_{-k}]`, with `alpha_{-k}` indexed
/// big-endian over the remaining latents.
pub fn surface_nu(n_latent: usize, k: usize, q: &[f64], r: &[f64]) -> Vec<f64> {
    (0..1usize << n_latent)
        .map(|l| {
            let ak = latent_bit(l, k, n_latent);
            let rest = (0..n_latent)
                .filter(|&m| m != k)
                .fold(0usize, |acc, m| (acc << 1) | latent_bit(l, m, n_latent));
            q[ak] * r[rest]
        })
        .collect()
}

/// Sampled data plus the latent pattern of every subject.
#[derive(Debug, Clone)]
pub struct Sample {
    pub data: Dataset,
    pub latent: Vec<usize>,
}

fn draw_index<R: Rng>(rng: &mut R, cumulative: &[f64]) -> usize {
    let u = rng.random::<f64>() * cumulative[cumulative.len() - 1];
    cumulative
        .iter()
        .position(|&c| u < c)
        .unwrap_or(cumulative.len() - 1)
}

fn cumulative(v: &[f64]) -> Vec<f64> {
    v.iter()
        .scan(0.0, |acc, &x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

/// `n` i.i.d. subjects: `alpha ~ nu`, then each item from its table given
/// the parent's state.
pub fn sample_dataset(model: &BlessModel, n: usize, seed: u64) -> Result<Sample> {
    if n == 0 {
        return Err(BlessError::InvalidArgument("sample size must be >= 1".into()));
    }
    let parents = model.g.parents()?;
    let k = model.k();
    let p = model.p();
    let nu_cum = cumulative(model.nu.values());
    let item_cum: Vec<[Vec<f64>; 2]> = model
        .items
        .iter()
        .map(|it| [cumulative(&it.theta0), cumulative(&it.theta1)])
        .collect();
    let mut rng = rng_from_seed(seed);
    let mut values = Vec::with_capacity(n * p);
    let mut latent = Vec::with_capacity(n);
    for _ in 0..n {
        let l = draw_index(&mut rng, &nu_cum);
        latent.push(l);
        for j in 0..p {
            let state = latent_bit(l, parents[j], k);
            values.push(draw_index(&mut rng, &item_cum[j][state]) as u16);
        }
    }
    Ok(Sample {
        data: Dataset::from_flat(n, p, model.d, values)?,
        latent,
    })
}

/// Sidecar metadata written next to a dataset CSV.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetMeta {
    pub seed: u64,
    pub rng: String,
    pub model_hash: String,
    pub n: usize,
    pub p: usize,
    pub d: usize,
}

impl DatasetMeta {
    pub fn new(model: &BlessModel, n: usize, seed: u64) -> Self {
        Self {
            seed,
            rng: RNG_ALGORITHM.to_string(),
            model_hash: model.hash(),
            n,
            p: model.p(),
            d: model.d,
        }
    }
}
