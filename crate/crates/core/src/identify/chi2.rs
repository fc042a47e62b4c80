//! Chi-square tests of marginal independence between item groups.

use serde::Serialize;
use statrs::function::gamma::checked_gamma_ur;

use crate::data::Dataset;
use crate::error::{BlessError, Result};
use crate::model::GraphicalMatrix;

/// Largest number of categories a concatenated item group may have.
pub const MAX_GROUP_CELLS: usize = 4096;
/// Upper bound on the number of tests one pairwise batch may hold.
pub const MAX_PAIRWISE_TESTS: usize = 100_000;

/// Upper tail of the chi-square distribution with `df` degrees of freedom.
pub fn chi2_survival(x: f64, df: f64) -> Result<f64> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(BlessError::InvalidArgument(format!("statistic {x} must be finite and >= 0")));
    }
    if !(df >= 1.0) || !df.is_finite() {
        return Err(BlessError::InvalidArgument(format!("df {df} must be >= 1")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    checked_gamma_ur(df / 2.0, x / 2.0).map_err(|e| BlessError::InvalidArgument(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// 1-based item indices.
    pub group_a: Vec<usize>,
    pub group_b: Vec<usize>,
    pub n: usize,
    /// Level the p-value is compared against (Bonferroni-adjusted if batched).
    pub level: f64,
    pub reject: bool,
    pub warning: Option<String>,
}

fn group_cells(data: &Dataset, group: &[usize], i: usize) -> usize {
    group.iter().fold(0, |acc, &j| acc * data.d() + data.get(i, j))
}

fn check_group(data: &Dataset, group: &[usize], name: &str) -> Result<usize> {
    if group.is_empty() {
        return Err(BlessError::InvalidArgument(format!("group {name} is empty")));
    }
    for (i, &j) in group.iter().enumerate() {
        if j >= data.p() {
            return Err(BlessError::IndexOutOfRange { index: j, len: data.p() });
        }
        if group[..i].contains(&j) {
            return Err(BlessError::InvalidArgument(format!(
                "item {} repeated in group {name}",
                j + 1
            )));
        }
    }
    let bits = group.len() as f64 * (data.d() as f64).log2();
    if bits > (MAX_GROUP_CELLS as f64).log2() + 1e-9 {
        return Err(BlessError::SizeGuard { bits, limit: (MAX_GROUP_CELLS as f64).log2() });
    }
    Ok(data.d().pow(group.len() as u32))
}

/// Pearson test of independence between the joint responses of two
/// disjoint item groups, tested at level `level`.
pub fn chi2_independence_test(data: &Dataset, group_a: &[usize], group_b: &[usize], level: f64) -> Result<TestReport> {
    let ra = check_group(data, group_a, "A")?;
    let rb = check_group(data, group_b, "B")?;
    if let Some(j) = group_a.iter().find(|j| group_b.contains(j)) {
        return Err(BlessError::InvalidArgument(format!("item {} is in both groups", j + 1)));
    }
    if data.n() == 0 {
        return Err(BlessError::InvalidArgument("dataset is empty".into()));
    }
    let mut table = vec![0.0f64; ra * rb];
    for i in 0..data.n() {
        table[group_cells(data, group_a, i) * rb + group_cells(data, group_b, i)] += 1.0;
    }
    let n = data.n() as f64;
    let row: Vec<f64> = (0..ra).map(|a| table[a * rb..(a + 1) * rb].iter().sum()).collect();
    let col: Vec<f64> = (0..rb).map(|b| (0..ra).map(|a| table[a * rb + b]).sum()).collect();
    let mut stat = 0.0;
    let mut sparse = 0usize;
    for a in 0..ra {
        for b in 0..rb {
            let e = row[a] * col[b] / n;
            if e < 5.0 {
                sparse += 1;
            }
            if e > 0.0 {
                let o = table[a * rb + b];
                stat += (o - e) * (o - e) / e;
            }
        }
    }
    let df = (ra - 1) * (rb - 1);
    let p_value = chi2_survival(stat, df as f64)?;
    let cells = ra * rb;
    let warning = (sparse as f64 > 0.2 * cells as f64).then(|| {
        format!("{sparse} of {cells} cells have expected count < 5; the chi-square approximation may be poor")
    });
    Ok(TestReport {
        statistic: stat,
        df,
        p_value,
        group_a: group_a.iter().map(|j| j + 1).collect(),
        group_b: group_b.iter().map(|j| j + 1).collect(),
        n: data.n(),
        level,
        reject: p_value < level,
        warning,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Children of the latent against the children of all other latents.
    FullComplement,
    /// Children of the latent against one child of each other latent, for
    /// every such combination.
    PairwiseSubsets,
}

impl std::str::FromStr for Strategy {
    type Err = BlessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full-complement" => Ok(Self::FullComplement),
            "pairwise" | "pairwise-subsets" => Ok(Self::PairwiseSubsets),
            other => Err(BlessError::InvalidArgument(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentifiabilityTest {
    /// 1-based latent index.
    pub latent: usize,
    pub strategy: Strategy,
    pub alpha: f64,
    pub level: f64,
    pub reports: Vec<TestReport>,
    /// Any test rejected independence.
    pub evidence: bool,
}

impl IdentifiabilityTest {
    pub fn rejections(&self) -> usize {
        self.reports.iter().filter(|r| r.reject).count()
    }
}

fn max_group_len(d: usize) -> usize {
    let mut len = 0;
    while d.pow(len as u32 + 1) <= MAX_GROUP_CELLS {
        len += 1;
    }
    len
}

/// Item groups for the tests of latent `k`.
fn plan(g: &GraphicalMatrix, d: usize, k: usize, strategy: Strategy) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k >= g.k() {
        return Err(BlessError::IndexOutOfRange { index: k, len: g.k() });
    }
    let own = g.children_of(k);
    if own.is_empty() {
        return Err(BlessError::Precondition(format!("latent {} has no children", k + 1)));
    }
    let cap = max_group_len(d);
    if own.len() > cap {
        return Err(BlessError::SizeGuard {
            bits: own.len() as f64 * (d as f64).log2(),
            limit: (MAX_GROUP_CELLS as f64).log2(),
        });
    }
    let others: Vec<Vec<usize>> = (0..g.k())
        .filter(|&x| x != k)
        .map(|x| g.children_of(x))
        .filter(|c| !c.is_empty())
        .collect();
    if others.is_empty() {
        return Err(BlessError::Precondition(format!(
            "no other latent has children to test latent {} against",
            k + 1
        )));
    }
    match strategy {
        Strategy::FullComplement => {
            // round-robin over latents so every other latent is represented
            let mut b = Vec::new();
            let mut depth = 0;
            'fill: loop {
                let mut added = false;
                for kids in &others {
                    if let Some(&j) = kids.get(depth) {
                        if b.len() == cap {
                            break 'fill;
                        }
                        b.push(j);
                        added = true;
                    }
                }
                if !added {
                    break;
                }
                depth += 1;
            }
            b.sort_unstable();
            Ok(vec![(own, b)])
        }
        Strategy::PairwiseSubsets => {
            if others.len() > cap {
                return Err(BlessError::SizeGuard {
                    bits: others.len() as f64 * (d as f64).log2(),
                    limit: (MAX_GROUP_CELLS as f64).log2(),
                });
            }
            let total: usize = others.iter().map(Vec::len).product();
            if total > MAX_PAIRWISE_TESTS {
                return Err(BlessError::SizeGuard {
                    bits: (total as f64).log2(),
                    limit: (MAX_PAIRWISE_TESTS as f64).log2(),
                });
            }
            let mut out = Vec::with_capacity(total);
            let mut idx = vec![0usize; others.len()];
            loop {
                let b = idx.iter().zip(&others).map(|(&i, kids)| kids[i]).collect();
                out.push((own.clone(), b));
                let mut pos = others.len();
                loop {
                    if pos == 0 {
                        return Ok(out);
                    }
                    pos -= 1;
                    idx[pos] += 1;
                    if idx[pos] < others[pos].len() {
                        break;
                    }
                    idx[pos] = 0;
                }
            }
        }
    }
}

/// Tests each listed latent; with `bonferroni`, `alpha` is divided by the
/// total number of tests across all latents.
pub fn identifiability_test_latents(
    data: &Dataset,
    g: &GraphicalMatrix,
    latents: &[usize],
    strategy: Strategy,
    alpha: f64,
    bonferroni: bool,
) -> Result<Vec<IdentifiabilityTest>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(BlessError::InvalidArgument(format!("alpha {alpha} outside (0, 1)")));
    }
    if g.p() != data.p() {
        return Err(BlessError::Dimension(format!("G has {} rows, data has {} items", g.p(), data.p())));
    }
    let plans = latents
        .iter()
        .map(|&k| plan(g, data.d(), k, strategy))
        .collect::<Result<Vec<_>>>()?;
    let total: usize = plans.iter().map(Vec::len).sum();
    let level = if bonferroni { alpha / total as f64 } else { alpha };
    latents
        .iter()
        .zip(plans)
        .map(|(&k, groups)| {
            let reports = groups
                .iter()
                .map(|(a, b)| chi2_independence_test(data, a, b, level))
                .collect::<Result<Vec<_>>>()?;
            Ok(IdentifiabilityTest {
                latent: k + 1,
                strategy,
                alpha,
                level,
                evidence: reports.iter().any(|r| r.reject),
                reports,
            })
        })
        .collect()
}

pub fn identifiability_test(
    data: &Dataset,
    g: &GraphicalMatrix,
    k: usize,
    strategy: Strategy,
    alpha: f64,
    bonferroni: bool,
) -> Result<IdentifiabilityTest> {
    Ok(identifiability_test_latents(data, g, &[k], strategy, alpha, bonferroni)?.remove(0))
}
