//! Model types, validation and the exact response pmf.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::error::{BlessError, Result};
use crate::tensor;

/// Tolerance on simplex sums in [`validate_model`].
pub const SIMPLEX_TOL: f64 = 1e-12;
/// Minimal margin for the strict monotonicity inequalities.
pub const MONOTONE_MARGIN: f64 = 1e-9;
/// Largest `p * log2(d)` for which the full response pmf is enumerated.
pub const ENUMERATION_BITS: f64 = 24.0;

/// Value of latent `k` (0-based) in big-endian pattern `l` of `n_latent` bits.
#[inline]
pub fn latent_bit(l: usize, k: usize, n_latent: usize) -> usize {
    (l >> (n_latent - 1 - k)) & 1
}

/// Bits of pattern `l`, first latent first.
pub fn pattern_bits(l: usize, n_latent: usize) -> Vec<u8> {
    (0..n_latent).map(|k| latent_bit(l, k, n_latent) as u8).collect()
}

/// Inverse of [`pattern_bits`].
pub fn pattern_index(bits: &[u8]) -> usize {
    bits.iter().fold(0, |acc, &b| (acc << 1) | b as usize)
}

/// Binary `p x K` incidence matrix of the measurement graph.
///
/// Rows are allowed to violate the star-forest shape so that malformed
/// inputs can be reported by [`validate_model`]; use [`Self::parents`] to get
/// the parent vector of a well-formed graph.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GraphicalMatrix {
    p: usize,
    k: usize,
    entries: Vec<u8>,
}

impl GraphicalMatrix {
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let p = rows.len();
        if p == 0 {
            return Err(BlessError::Dimension("graphical matrix has no rows".into()));
        }
        let k = rows[0].len();
        if k == 0 {
            return Err(BlessError::Dimension("graphical matrix has no columns".into()));
        }
        let mut entries = Vec::with_capacity(p * k);
        for (j, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(BlessError::Dimension(format!(
                    "row {} has {} entries, expected {k}",
                    j + 1,
                    row.len()
                )));
            }
            if let Some(&bad) = row.iter().find(|&&v| v > 1) {
                return Err(BlessError::InvalidArgument(format!(
                    "row {} contains non-binary entry {bad}",
                    j + 1
                )));
            }
            entries.extend_from_slice(row);
        }
        Ok(Self { p, k, entries })
    }

    /// Star forest with `parents[j]` (0-based) as the parent of item `j`.
    pub fn from_parents(k: usize, parents: &[usize]) -> Result<Self> {
        if k == 0 || parents.is_empty() {
            return Err(BlessError::Dimension("need K >= 1 and p >= 1".into()));
        }
        let mut entries = vec![0u8; parents.len() * k];
        for (j, &par) in parents.iter().enumerate() {
            if par >= k {
                return Err(BlessError::IndexOutOfRange { index: par, len: k });
            }
            entries[j * k + par] = 1;
        }
        Ok(Self {
            p: parents.len(),
            k,
            entries,
        })
    }

    /// `copies` identity blocks `I_K` stacked vertically, i.e. item `j` has
    /// parent `j mod K` and every latent has `copies` children.
    pub fn stacked_identity(k: usize, copies: usize) -> Self {
        let parents: Vec<usize> = (0..k * copies).map(|j| j % k).collect();
        Self::from_parents(k, &parents).expect("k >= 1 and copies >= 1")
    }

    /// `p` items assigned to latents cyclically.
    pub fn cyclic(p: usize, k: usize) -> Result<Self> {
        let parents: Vec<usize> = (0..p).map(|j| j % k.max(1)).collect();
        Self::from_parents(k, &parents)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn entry(&self, j: usize, k: usize) -> u8 {
        self.entries[j * self.k + k]
    }

    pub fn row(&self, j: usize) -> &[u8] {
        &self.entries[j * self.k..(j + 1) * self.k]
    }

    pub fn rows(&self) -> Vec<Vec<u8>> {
        (0..self.p).map(|j| self.row(j).to_vec()).collect()
    }

    /// Parent of item `j` when the row has exactly one nonzero entry.
    pub fn parent_of(&self, j: usize) -> Option<usize> {
        let row = self.row(j);
        if row.iter().map(|&v| v as usize).sum::<usize>() != 1 {
            return None;
        }
        row.iter().position(|&v| v == 1)
    }

    /// Parent vector; fails unless every row has exactly one 1.
    pub fn parents(&self) -> Result<Vec<usize>> {
        (0..self.p)
            .map(|j| {
                self.parent_of(j).ok_or_else(|| {
                    BlessError::InvalidArgument(format!(
                        "row {} of G does not have exactly one parent",
                        j + 1
                    ))
                })
            })
            .collect()
    }

    pub fn children_of(&self, k: usize) -> Vec<usize> {
        (0..self.p).filter(|&j| self.entry(j, k) == 1).collect()
    }

    /// Column sums of `G`.
    pub fn child_counts(&self) -> Vec<usize> {
        (0..self.k).map(|k| self.children_of(k).len()).collect()
    }

    /// Same graph with latent columns reordered: new column `c` is old
    /// column `perm[c]`.
    pub fn permute_columns(&self, perm: &[usize]) -> Self {
        let rows: Vec<Vec<u8>> = (0..self.p)
            .map(|j| perm.iter().map(|&old| self.entry(j, old)).collect())
            .collect();
        Self::from_rows(&rows).expect("permutation keeps shape")
    }
}

/// Conditional distributions of one item given its parent is 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemCpt {
    pub theta0: Vec<f64>,
    pub theta1: Vec<f64>,
}

impl ItemCpt {
    pub fn new(theta0: Vec<f64>, theta1: Vec<f64>) -> Self {
        Self { theta0, theta1 }
    }

    pub fn for_state(&self, state: usize) -> &[f64] {
        if state == 1 {
            &self.theta1
        } else {
            &self.theta0
        }
    }

    /// Swap the roles of the two parent states.
    pub fn flipped(&self) -> Self {
        Self {
            theta0: self.theta1.clone(),
            theta1: self.theta0.clone(),
        }
    }
}

/// Proportions of the `2^K` latent patterns, big-endian indexed.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentProportions {
    k: usize,
    values: Vec<f64>,
}

impl LatentProportions {
    pub fn new(k: usize, values: Vec<f64>) -> Result<Self> {
        if k == 0 || k > 24 {
            return Err(BlessError::Dimension(format!("K = {k} outside 1..=24")));
        }
        if values.len() != 1 << k {
            return Err(BlessError::Dimension(format!(
                "nu has length {}, expected 2^{k} = {}",
                values.len(),
                1usize << k
            )));
        }
        Ok(Self { k, values })
    }

    pub fn uniform(k: usize) -> Self {
        let n = 1usize << k;
        Self {
            k,
            values: vec![1.0 / n as f64; n],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, l: usize) -> f64 {
        self.values[l]
    }

    /// Relabel latent `k` (0 <-> 1).
    pub fn flip_latent(&self, k: usize) -> Self {
        let mask = 1 << (self.k - 1 - k);
        let values = (0..self.len()).map(|l| self.values[l ^ mask]).collect();
        Self { k: self.k, values }
    }

    /// Reorder latents: new latent `c` is old latent `perm[c]`.
    pub fn permute(&self, perm: &[usize]) -> Self {
        let k = self.k;
        let mut values = vec![0.0; self.len()];
        for (new_l, slot) in values.iter_mut().enumerate() {
            let mut old_l = 0;
            for (c, &old) in perm.iter().enumerate() {
                if latent_bit(new_l, c, k) == 1 {
                    old_l |= 1 << (k - 1 - old);
                }
            }
            *slot = self.values[old_l];
        }
        Self { k, values }
    }
}

/// A full model `(G, theta, nu)` with `d` categories per item.
#[derive(Debug, Clone, PartialEq)]
pub struct BlessModel {
    pub g: GraphicalMatrix,
    pub items: Vec<ItemCpt>,
    pub nu: LatentProportions,
    pub d: usize,
}

impl BlessModel {
    /// Checks dimensional consistency only; see [`validate_model`] for the
    /// probabilistic invariants.
    pub fn new(g: GraphicalMatrix, items: Vec<ItemCpt>, nu: LatentProportions, d: usize) -> Result<Self> {
        if d < 2 {
            return Err(BlessError::Dimension(format!("d = {d} < 2")));
        }
        if items.len() != g.p() {
            return Err(BlessError::Dimension(format!(
                "{} item tables for p = {}",
                items.len(),
                g.p()
            )));
        }
        if nu.k() != g.k() {
            return Err(BlessError::Dimension(format!(
                "nu is for K = {}, G has K = {}",
                nu.k(),
                g.k()
            )));
        }
        for (j, it) in items.iter().enumerate() {
            if it.theta0.len() != d || it.theta1.len() != d {
                return Err(BlessError::Dimension(format!(
                    "item {} tables have lengths {}/{}, expected d = {d}",
                    j + 1,
                    it.theta0.len(),
                    it.theta1.len()
                )));
            }
        }
        Ok(Self { g, items, nu, d })
    }

    pub fn p(&self) -> usize {
        self.g.p()
    }

    pub fn k(&self) -> usize {
        self.g.k()
    }

    pub fn n_patterns(&self) -> usize {
        1 << self.k()
    }

    /// Relabel latent `k`: swap `theta0`/`theta1` for its children and remap
    /// `nu`. The response distribution is unchanged.
    pub fn flip_latent(&self, k: usize) -> Self {
        let items = self
            .items
            .iter()
            .enumerate()
            .map(|(j, it)| if self.g.entry(j, k) == 1 { it.flipped() } else { it.clone() })
            .collect();
        Self {
            g: self.g.clone(),
            items,
            nu: self.nu.flip_latent(k),
            d: self.d,
        }
    }

    /// Reorder latents: new latent `c` is old latent `perm[c]`.
    pub fn permute_latents(&self, perm: &[usize]) -> Self {
        Self {
            g: self.g.permute_columns(perm),
            items: self.items.clone(),
            nu: self.nu.permute(perm),
            d: self.d,
        }
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            p: self.p(),
            k: self.k(),
            d: self.d,
            g: self.g.rows(),
            theta0: self.items.iter().map(|it| it.theta0.clone()).collect(),
            theta1: self.items.iter().map(|it| it.theta1.clone()).collect(),
            nu: self.nu.values().to_vec(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: ModelFile = serde_json::from_str(s)?;
        f.into_model()
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&self.to_file()).expect("model serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// On-disk JSON model schema. `nu` uses the big-endian pattern index and
/// `g` rows are items.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelFile {
    pub p: usize,
    pub k: usize,
    pub d: usize,
    pub g: Vec<Vec<u8>>,
    pub theta0: Vec<Vec<f64>>,
    pub theta1: Vec<Vec<f64>>,
    pub nu: Vec<f64>,
}

impl ModelFile {
    pub fn into_model(self) -> Result<BlessModel> {
        let g = GraphicalMatrix::from_rows(&self.g)?;
        if g.p() != self.p || g.k() != self.k {
            return Err(BlessError::Dimension(format!(
                "header says p={}, k={} but g is {}x{}",
                self.p,
                self.k,
                g.p(),
                g.k()
            )));
        }
        if self.theta0.len() != self.p || self.theta1.len() != self.p {
            return Err(BlessError::Dimension("theta0/theta1 must have p rows".into()));
        }
        let items = self
            .theta0
            .into_iter()
            .zip(self.theta1)
            .map(|(t0, t1)| ItemCpt::new(t0, t1))
            .collect();
        let nu = LatentProportions::new(self.k, self.nu)?;
        BlessModel::new(g, items, nu, self.d)
    }
}

/// Invariant violations found by [`validate_model`]; empty means valid.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.contains(needle))
    }
}

fn check_simplex(name: &str, v: &[f64], out: &mut Vec<String>) {
    if let Some((c, x)) = v.iter().enumerate().find(|(_, x)| !(**x >= 0.0)) {
        out.push(format!("{name} has negative or non-finite entry {x} at category {}", c + 1));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        out.push(format!("{name} sums to {s}, not 1"));
    }
}

pub fn validate_model(model: &BlessModel) -> ValidationReport {
    let mut v = Vec::new();
    for j in 0..model.p() {
        let n_par: usize = model.g.row(j).iter().map(|&x| x as usize).sum();
        match n_par {
            1 => {}
            0 => v.push(format!("row {} has no parent", j + 1)),
            n => v.push(format!("row {} has {n} parents", j + 1)),
        }
    }
    for (j, it) in model.items.iter().enumerate() {
        check_simplex(&format!("item {} theta0", j + 1), &it.theta0, &mut v);
        check_simplex(&format!("item {} theta1", j + 1), &it.theta1, &mut v);
        for c in 0..model.d - 1 {
            let gap = it.theta1[c] - it.theta0[c];
            if !(gap >= MONOTONE_MARGIN) {
                v.push(format!(
                    "item {} violates monotonicity at category {}: theta1 - theta0 = {gap}",
                    j + 1,
                    c + 1
                ));
            }
        }
    }
    let nu = model.nu.values();
    for (l, &x) in nu.iter().enumerate() {
        if !(x > 0.0) {
            v.push(format!("nu[{l}] = {x} is not strictly positive"));
        }
    }
    let s: f64 = nu.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        v.push(format!("nu sums to {s}, not 1"));
    }
    ValidationReport { violations: v }
}

/// `d x 2^K` table of item `j` given every latent pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiTable {
    pub table: DMatrix<f64>,
}

pub fn phi_table(model: &BlessModel, j: usize) -> Result<PhiTable> {
    if j >= model.p() {
        return Err(BlessError::IndexOutOfRange { index: j, len: model.p() });
    }
    let parent = model.g.parent_of(j).ok_or_else(|| {
        BlessError::InvalidArgument(format!("item {} has no unique parent", j + 1))
    })?;
    let k = model.k();
    let it = &model.items[j];
    let table = DMatrix::from_fn(model.d, model.n_patterns(), |c, l| {
        it.for_state(latent_bit(l, parent, k))[c]
    });
    Ok(PhiTable { table })
}

/// Exact pmf of the response vector, row-major over `{0..d-1}^p`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResponsePmf {
    pub probs: Vec<f64>,
}

impl ResponsePmf {
    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &ResponsePmf) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn enumeration_guard(n_items: usize, d: usize) -> Result<()> {
    let bits = n_items as f64 * (d as f64).log2();
    if bits > ENUMERATION_BITS {
        return Err(BlessError::SizeGuard {
            bits,
            limit: ENUMERATION_BITS,
        });
    }
    Ok(())
}

/// Response pmf by enumerating every response pattern and latent pattern.
pub fn response_pmf_direct(model: &BlessModel) -> Result<ResponsePmf> {
    let p = model.p();
    let d = model.d;
    enumeration_guard(p, d)?;
    let parents = model.g.parents()?;
    let k = model.k();
    let n_cells = d.pow(p as u32);
    let nu = model.nu.values();
    let mut probs = vec![0.0; n_cells];
    let mut resp = vec![0usize; p];
    for cell in probs.iter_mut() {
        let mut total = 0.0;
        for (l, &w) in nu.iter().enumerate() {
            let mut prod = w;
            for j in 0..p {
                prod *= model.items[j].for_state(latent_bit(l, parents[j], k))[resp[j]];
            }
            total += prod;
        }
        *cell = total;
        // odometer, last item fastest
        for j in (0..p).rev() {
            resp[j] += 1;
            if resp[j] < d {
                break;
            }
            resp[j] = 0;
        }
    }
    Ok(ResponsePmf { probs })
}

/// Response pmf as `(KR_j Phi^(j)) nu`.
pub fn response_pmf_kr(model: &BlessModel) -> Result<ResponsePmf> {
    enumeration_guard(model.p(), model.d)?;
    let phis = (0..model.p())
        .map(|j| phi_table(model, j).map(|t| t.table))
        .collect::<Result<Vec<_>>>()?;
    let nu = DVector::from_column_slice(model.nu.values());
    let probs = tensor::khatri_rao_matvec(&phis, &nu)?;
    Ok(ResponsePmf {
        probs: probs.as_slice().to_vec(),
    })
}

/// Marginal pmf of the items in `subset`, row-major in the listed order.
pub fn marginal_pmf(model: &BlessModel, subset: &[usize]) -> Result<Vec<f64>> {
    if subset.is_empty() {
        return Err(BlessError::InvalidArgument("empty item subset".into()));
    }
    for (i, &j) in subset.iter().enumerate() {
        if j >= model.p() {
            return Err(BlessError::IndexOutOfRange { index: j, len: model.p() });
        }
        if subset[..i].contains(&j) {
            return Err(BlessError::InvalidArgument(format!(
                "duplicate item index {} in subset",
                j + 1
            )));
        }
    }
    enumeration_guard(subset.len(), model.d)?;
    let phis = subset
        .iter()
        .map(|&j| phi_table(model, j).map(|t| t.table))
        .collect::<Result<Vec<_>>>()?;
    let nu = DVector::from_column_slice(model.nu.values());
    Ok(tensor::khatri_rao_matvec(&phis, &nu)?.as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_item_model(nu: Vec<f64>) -> BlessModel {
        let g = GraphicalMatrix::from_parents(1, &[0]).unwrap();
        let items = vec![ItemCpt::new(vec![0.2, 0.8], vec![0.8, 0.2])];
        BlessModel::new(g, items, LatentProportions::new(1, nu).unwrap(), 2).unwrap()
    }

    fn k2_model() -> BlessModel {
        let g = GraphicalMatrix::from_parents(2, &[0, 1, 0, 1]).unwrap();
        let items = vec![
            ItemCpt::new(vec![0.1, 0.3, 0.6], vec![0.3, 0.5, 0.2]),
            ItemCpt::new(vec![0.2, 0.2, 0.6], vec![0.5, 0.4, 0.1]),
            ItemCpt::new(vec![0.05, 0.15, 0.8], vec![0.6, 0.3, 0.1]),
            ItemCpt::new(vec![0.3, 0.3, 0.4], vec![0.4, 0.5, 0.1]),
        ];
        let nu = LatentProportions::new(2, vec![0.4, 0.1, 0.2, 0.3]).unwrap();
        BlessModel::new(g, items, nu, 3).unwrap()
    }

    #[test]
    fn pattern_indexing_is_big_endian() {
        assert_eq!(pattern_bits(0b10, 2), vec![1, 0]);
        assert_eq!(pattern_bits(0b011, 3), vec![0, 1, 1]);
        for l in 0..16 {
            assert_eq!(pattern_index(&pattern_bits(l, 4)), l);
        }
    }

    #[test]
    fn valid_model_has_empty_report() {
        let m = one_item_model(vec![0.5, 0.5]);
        assert!(validate_model(&m).is_valid());
        assert!(validate_model(&k2_model()).is_valid());
    }

    #[test]
    fn zero_row_is_reported() {
        let mut m = k2_model();
        m.g = GraphicalMatrix::from_rows(&[vec![0, 0], vec![0, 1], vec![1, 0], vec![0, 1]]).unwrap();
        let r = validate_model(&m);
        assert!(r.contains("row 1 has no parent"), "{r:?}");
    }

    #[test]
    fn zero_nu_is_reported() {
        let m = one_item_model(vec![1.0, 0.0]);
        let r = validate_model(&m);
        assert!(r.contains("not strictly positive"), "{r:?}");
    }

    #[test]
    fn monotonicity_violation_is_reported() {
        let mut m = one_item_model(vec![0.5, 0.5]);
        m.items[0] = m.items[0].flipped();
        assert!(validate_model(&m).contains("monotonicity"));
    }

    #[test]
    fn phi_table_single_latent() {
        let m = one_item_model(vec![0.5, 0.5]);
        let t = phi_table(&m, 0).unwrap().table;
        assert_eq!(t, DMatrix::from_row_slice(2, 2, &[0.2, 0.8, 0.8, 0.2]));
    }

    #[test]
    fn phi_table_parent_active_columns() {
        let m = k2_model();
        let t = phi_table(&m, 0).unwrap().table;
        // parent is latent 1: patterns (1,0) = 2 and (1,1) = 3
        for l in [2, 3] {
            assert_eq!(t.column(l).as_slice(), m.items[0].theta1.as_slice());
        }
        for l in [0, 1] {
            assert_eq!(t.column(l).as_slice(), m.items[0].theta0.as_slice());
        }
        for col in t.column_iter() {
            assert!((col.sum() - 1.0).abs() < 1e-15);
        }
        assert!(matches!(phi_table(&m, 4), Err(BlessError::IndexOutOfRange { .. })));
    }

    #[test]
    fn symmetric_mixture_pmf() {
        let mut m = one_item_model(vec![0.5, 0.5]);
        m.items[0] = ItemCpt::new(vec![0.2, 0.8], vec![0.8, 0.2]);
        let direct = response_pmf_direct(&m).unwrap();
        let kr = response_pmf_kr(&m).unwrap();
        assert!((direct.probs[0] - 0.5).abs() < 1e-15 && (direct.probs[1] - 0.5).abs() < 1e-15);
        assert!(direct.max_abs_diff(&kr) < 1e-15);
    }

    #[test]
    fn degenerate_nu_limit() {
        let mut m = k2_model();
        let eps = 1e-12;
        m.nu = LatentProportions::new(2, vec![1.0 - 3.0 * eps, eps, eps, eps]).unwrap();
        let pmf = response_pmf_direct(&m).unwrap();
        let mut idx = 0;
        for c0 in 0..3 {
            for c1 in 0..3 {
                for c2 in 0..3 {
                    for c3 in 0..3 {
                        let expect = m.items[0].theta0[c0]
                            * m.items[1].theta0[c1]
                            * m.items[2].theta0[c2]
                            * m.items[3].theta0[c3];
                        assert!((pmf.probs[idx] - expect).abs() < 1e-10);
                        idx += 1;
                    }
                }
            }
        }
    }

    #[test]
    fn single_item_kr_is_phi_times_nu() {
        let m = one_item_model(vec![0.3, 0.7]);
        let phi = phi_table(&m, 0).unwrap().table;
        let expect = &phi * DVector::from_vec(vec![0.3, 0.7]);
        let kr = response_pmf_kr(&m).unwrap();
        for c in 0..2 {
            assert!((kr.probs[c] - expect[c]).abs() < 1e-15);
        }
    }

    #[test]
    fn marginal_of_all_items_is_full_pmf() {
        let m = k2_model();
        let full = response_pmf_direct(&m).unwrap();
        let marg = marginal_pmf(&m, &[0, 1, 2, 3]).unwrap();
        for (a, b) in full.probs.iter().zip(&marg) {
            assert!((a - b).abs() < 1e-14);
        }
        let single = marginal_pmf(&m, &[2]).unwrap();
        let phi = phi_table(&m, 2).unwrap().table;
        let expect = phi * DVector::from_column_slice(m.nu.values());
        for c in 0..3 {
            assert!((single[c] - expect[c]).abs() < 1e-15);
        }
        assert!(marginal_pmf(&m, &[1, 1]).is_err());
        assert!(marginal_pmf(&m, &[]).is_err());
    }

    #[test]
    fn size_guard() {
        let g = GraphicalMatrix::cyclic(25, 1).unwrap();
        let items = vec![ItemCpt::new(vec![0.2, 0.8], vec![0.8, 0.2]); 25];
        let m = BlessModel::new(g, items, LatentProportions::uniform(1), 2).unwrap();
        assert!(matches!(response_pmf_direct(&m), Err(BlessError::SizeGuard { .. })));
        assert!(matches!(response_pmf_kr(&m), Err(BlessError::SizeGuard { .. })));
    }

    #[test]
    fn json_round_trip_and_hash() {
        let m = k2_model();
        let back = BlessModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.hash(), m.hash());
        assert_eq!(m.hash().len(), 64);
        let bad = r#"{"p":1,"k":1,"d":2,"g":[[1]],"theta0":[[0.2,0.8]],"theta1":[[0.8,0.2]],"nu":[0.5]}"#;
        assert!(BlessModel::from_json(bad).is_err());
    }

    #[test]
    fn flip_and_permute_preserve_pmf() {
        let m = k2_model();
        let base = response_pmf_direct(&m).unwrap();
        let flipped = m.flip_latent(1);
        assert!(response_pmf_direct(&flipped).unwrap().max_abs_diff(&base) < 1e-15);
        let perm = m.permute_latents(&[1, 0]);
        assert_eq!(perm.g.parents().unwrap(), vec![1, 0, 1, 0]);
        assert!(response_pmf_direct(&perm).unwrap().max_abs_diff(&base) < 1e-15);
    }
}
