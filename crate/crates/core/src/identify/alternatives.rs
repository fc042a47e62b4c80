//! Constructive families of parameter sets that share one response pmf.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::latent::{latent_independence_check, INDEPENDENCE_TOL};
use crate::error::{BlessError, Result};
use crate::model::{
    latent_bit, response_pmf_kr, validate_model, BlessModel, ItemCpt, LatentProportions,
};

/// Largest pmf deviation accepted for a completed two-child alternative.
pub const THM2B_MAX_DEVIATION: f64 = 1e-10;
const LM_MAX_ITERS: usize = 200;
const LM_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Construction {
    Prop1,
    Thm2b,
}

impl Construction {
    pub fn tag(self) -> &'static str {
        match self {
            Construction::Prop1 => "prop1",
            Construction::Thm2b => "thm2b",
        }
    }
}

#[derive(Debug, Clone)]
pub struct AlternativeMember {
    pub model: BlessModel,
    /// Signed perturbation applied to the driving parameter.
    pub perturbation: f64,
    /// Max-abs pmf difference from the source.
    pub deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SkippedPerturbation {
    pub perturbation: f64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct AlternativeFamily {
    pub construction: Construction,
    pub source: BlessModel,
    pub members: Vec<AlternativeMember>,
    pub skipped: Vec<SkippedPerturbation>,
    pub radius: f64,
}

#[derive(Serialize)]
struct MemberJson {
    perturbation: f64,
    deviation: f64,
    model: crate::model::ModelFile,
}

#[derive(Serialize)]
struct FamilyJson<'a> {
    construction: Construction,
    radius: f64,
    max_deviation: f64,
    source: crate::model::ModelFile,
    members: Vec<MemberJson>,
    skipped: &'a [SkippedPerturbation],
}

impl AlternativeFamily {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn max_deviation(&self) -> f64 {
        self.members.iter().map(|m| m.deviation).fold(0.0, f64::max)
    }

    /// Largest absolute parameter difference between a member and the source.
    pub fn parameter_shift(&self, i: usize) -> f64 {
        crate::em::parameter_max_abs(&self.members[i].model, &self.source)
    }

    pub fn to_json(&self) -> String {
        let doc = FamilyJson {
            construction: self.construction,
            radius: self.radius,
            max_deviation: self.max_deviation(),
            source: self.source.to_file(),
            members: self
                .members
                .iter()
                .map(|m| MemberJson {
                    perturbation: m.perturbation,
                    deviation: m.deviation,
                    model: m.model.to_file(),
                })
                .collect(),
            skipped: &self.skipped,
        };
        serde_json::to_string_pretty(&doc).expect("family serializes")
    }
}

/// Deterministic perturbation schedule: magnitudes spread over
/// `(radius/2, radius]` by a golden-ratio sequence, signs alternating.
pub fn perturbation_schedule(radius: f64, n: usize) -> Vec<f64> {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    (0..n)
        .map(|i| {
            let frac = (i as f64 * g).fract();
            let mag = radius * (1.0 - 0.5 * frac);
            if i % 2 == 0 {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

fn check_valid(model: &BlessModel) -> Result<()> {
    let rep = validate_model(model);
    if rep.is_valid() {
        Ok(())
    } else {
        Err(BlessError::Precondition(format!(
            "source model is invalid: {}",
            rep.violations.join("; ")
        )))
    }
}

/// One single-child alternative: replace `theta_{1|1}` of item `j` (category
/// 0 given parent state 1) by `new_value`.
pub fn prop1_alternative(model: &BlessModel, j: usize, new_value: f64) -> Result<BlessModel> {
    let k = model.g.parent_of(j).ok_or_else(|| {
        BlessError::InvalidArgument(format!("item {} has no unique parent", j + 1))
    })?;
    let it = &model.items[j];
    let base = it.theta1[0] - it.theta0[0];
    let s = (new_value - it.theta0[0]) / base;
    if !s.is_finite() || s <= 0.0 {
        return Err(BlessError::InvalidArgument(format!(
            "perturbed value {new_value} does not exceed theta0 = {}",
            it.theta0[0]
        )));
    }
    let theta1: Vec<f64> = it
        .theta0
        .iter()
        .zip(&it.theta1)
        .enumerate()
        .map(|(c, (&a, &b))| if c == 0 { new_value } else { b + (b - a) * (s - 1.0) })
        .collect();
    let n_latent = model.k();
    let mask = 1usize << (n_latent - 1 - k);
    let nu = model.nu.values();
    let mut nu_bar = nu.to_vec();
    for l in 0..nu.len() {
        if latent_bit(l, k, n_latent) == 1 {
            nu_bar[l] = nu[l] / s;
            nu_bar[l ^ mask] = nu[l ^ mask] + nu[l] * (1.0 - 1.0 / s);
        }
    }
    let mut items = model.items.clone();
    items[j] = ItemCpt::new(it.theta0.clone(), theta1);
    BlessModel::new(
        model.g.clone(),
        items,
        LatentProportions::new(n_latent, nu_bar)?,
        model.d,
    )
}

/// Alternatives for an item whose parent has no other child. Members that
/// leave the parameter space are reported in `skipped`.
pub fn construct_prop1_alternatives(
    model: &BlessModel,
    j: usize,
    count: usize,
    radius: f64,
) -> Result<AlternativeFamily> {
    check_valid(model)?;
    if j >= model.p() {
        return Err(BlessError::IndexOutOfRange { index: j, len: model.p() });
    }
    let k = model.g.parent_of(j).expect("valid model has parents");
    let kids = model.g.children_of(k);
    if kids != [j] {
        return Err(BlessError::Precondition(format!(
            "latent {} has {} children; item {} must be its only child",
            k + 1,
            kids.len(),
            j + 1
        )));
    }
    if !(radius > 0.0) {
        return Err(BlessError::InvalidArgument(format!("radius {radius} must be positive")));
    }
    let source_pmf = response_pmf_kr(model)?;
    let mut family = AlternativeFamily {
        construction: Construction::Prop1,
        source: model.clone(),
        members: Vec::new(),
        skipped: Vec::new(),
        radius,
    };
    let base = model.items[j].theta1[0];
    for delta in perturbation_schedule(radius, 4 * count) {
        if family.members.len() == count {
            break;
        }
        let alt = match prop1_alternative(model, j, base + delta) {
            Ok(m) => m,
            Err(e) => {
                family.skipped.push(SkippedPerturbation { perturbation: delta, reason: e.to_string() });
                continue;
            }
        };
        let rep = validate_model(&alt);
        if !rep.is_valid() {
            family.skipped.push(SkippedPerturbation {
                perturbation: delta,
                reason: rep.violations.join("; "),
            });
            continue;
        }
        let deviation = response_pmf_kr(&alt)?.max_abs_diff(&source_pmf);
        family.members.push(AlternativeMember { model: alt, perturbation: delta, deviation });
    }
    Ok(family)
}

/// Free coordinates of a two-child alternative: `theta1` of the first
/// child and `theta0` of the second (first `d-1` entries each), then the
/// first `2^K - 1` entries of `nu`.
struct Layout {
    j: usize,
    j2: usize,
    d: usize,
    n_nu: usize,
}

impl Layout {
    fn pack(&self, m: &BlessModel) -> DVector<f64> {
        let mut x = Vec::with_capacity(2 * (self.d - 1) + self.n_nu - 1);
        x.extend_from_slice(&m.items[self.j].theta1[..self.d - 1]);
        x.extend_from_slice(&m.items[self.j2].theta0[..self.d - 1]);
        x.extend_from_slice(&m.nu.values()[..self.n_nu - 1]);
        DVector::from_vec(x)
    }

    fn unpack(&self, template: &BlessModel, x: &DVector<f64>) -> BlessModel {
        let close = |v: &[f64]| {
            let mut out = v.to_vec();
            out.push(1.0 - v.iter().sum::<f64>());
            out
        };
        let dm = self.d - 1;
        let mut m = template.clone();
        m.items[self.j].theta1 = close(&x.as_slice()[..dm]);
        m.items[self.j2].theta0 = close(&x.as_slice()[dm..2 * dm]);
        let nu = close(&x.as_slice()[2 * dm..]);
        m.nu = LatentProportions::new(template.k(), nu).expect("length preserved");
        m
    }
}

fn residual(layout: &Layout, template: &BlessModel, x: &DVector<f64>, target: &[f64]) -> Result<DVector<f64>> {
    let pmf = response_pmf_kr(&layout.unpack(template, x))?;
    Ok(DVector::from_iterator(
        target.len(),
        pmf.probs.iter().zip(target).map(|(a, b)| a - b),
    ))
}

/// Levenberg-Marquardt on the pmf residual. The pmf is affine in each
/// single coordinate, so central differences give the exact Jacobian up to
/// rounding.
fn solve_pmf(layout: &Layout, template: &BlessModel, target: &[f64]) -> Result<BlessModel> {
    let start = response_pmf_kr(template)?;
    if start.probs.iter().zip(target).all(|(a, b)| (a - b).abs() < 1e-15) {
        return Ok(template.clone());
    }
    let mut x = layout.pack(template);
    let n = x.len();
    let mut r = residual(layout, template, &x, target)?;
    let mut cost = r.norm_squared();
    let mut lambda = 1e-6;
    for _ in 0..LM_MAX_ITERS {
        if r.amax() < 1e-15 {
            break;
        }
        let mut jac = DMatrix::zeros(r.len(), n);
        for c in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += LM_STEP;
            xm[c] -= LM_STEP;
            let col = (residual(layout, template, &xp, target)? - residual(layout, template, &xm, target)?)
                / (2.0 * LM_STEP);
            jac.set_column(c, &col);
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let x_new = &x + step;
            let r_new = residual(layout, template, &x_new, target)?;
            let c_new = r_new.norm_squared();
            if c_new < cost {
                x = x_new;
                r = r_new;
                cost = c_new;
                lambda = (lambda / 10.0).max(1e-15);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    Ok(layout.unpack(template, &x))
}

/// One two-child alternative: move `theta0` of the first child of latent `k`
/// by `delta` in category 0 along the direction `theta1 - theta0`, set
/// `theta1` of the second child in closed form, and solve for the rest.
/// Returns the alternative and its max-abs pmf deviation.
pub fn thm2b_alternative(model: &BlessModel, k: usize, delta: f64) -> Result<(BlessModel, f64)> {
    let (j, j2, rho) = thm2b_setup(model, k)?;
    thm2b_member(model, j, j2, rho, delta, &response_pmf_kr(model)?.probs)
}

fn thm2b_setup(model: &BlessModel, k: usize) -> Result<(usize, usize, f64)> {
    check_valid(model)?;
    if k >= model.k() {
        return Err(BlessError::IndexOutOfRange { index: k, len: model.k() });
    }
    let kids = model.g.children_of(k);
    if kids.len() != 2 {
        return Err(BlessError::Precondition(format!(
            "latent {} has {} children, expected exactly 2",
            k + 1,
            kids.len()
        )));
    }
    let check = latent_independence_check(&model.nu, k, INDEPENDENCE_TOL)?;
    if !check.independent {
        return Err(BlessError::Precondition(format!(
            "latent {} is not independent of the others (sigma2/sigma1 = {:.3e}); no ratio rho exists",
            k + 1,
            check.measure
        )));
    }
    Ok((kids[0], kids[1], check.rho))
}

fn thm2b_member(
    model: &BlessModel,
    j: usize,
    j2: usize,
    rho: f64,
    delta: f64,
    target: &[f64],
) -> Result<(BlessModel, f64)> {
    let a = &model.items[j];
    let b = &model.items[j2];
    let t = delta / (a.theta1[0] - a.theta0[0]);
    let theta0_bar: Vec<f64> = a.theta0.iter().zip(&a.theta1).map(|(x, y)| x + t * (y - x)).collect();
    let theta1_bar2: Vec<f64> = (0..model.d)
        .map(|c| {
            let num = (a.theta0[c] - theta0_bar[c]) * (b.theta0[c] - b.theta1[c]);
            let den = (a.theta0[c] - theta0_bar[c]) + rho * (a.theta1[c] - theta0_bar[c]);
            if den.abs() > 1e-12 {
                b.theta1[c] + num / den
            } else {
                // same value in factored form, valid when theta1 = theta0 at c
                let s = t / (rho * (1.0 - t) - t);
                b.theta1[c] + s * (b.theta1[c] - b.theta0[c])
            }
        })
        .collect();
    if theta1_bar2.iter().any(|v| !v.is_finite()) {
        return Err(BlessError::Singular("closed form denominator vanished".into()));
    }
    let mut start = model.clone();
    start.items[j].theta0 = theta0_bar;
    start.items[j2].theta1 = theta1_bar2;
    let layout = Layout { j, j2, d: model.d, n_nu: model.nu.len() };
    let alt = solve_pmf(&layout, &start, target)?;
    let dev = response_pmf_kr(&alt)?
        .probs
        .iter()
        .zip(target)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    Ok((alt, dev))
}

/// Alternatives for a latent with two children that is independent of the
/// other latents. Fails with a precondition error off the independence
/// surface.
pub fn construct_thm2b_alternatives(
    model: &BlessModel,
    k: usize,
    count: usize,
    radius: f64,
) -> Result<AlternativeFamily> {
    let (j, j2, rho) = thm2b_setup(model, k)?;
    if !(radius > 0.0) {
        return Err(BlessError::InvalidArgument(format!("radius {radius} must be positive")));
    }
    let target = response_pmf_kr(model)?.probs;
    let mut family = AlternativeFamily {
        construction: Construction::Thm2b,
        source: model.clone(),
        members: Vec::new(),
        skipped: Vec::new(),
        radius,
    };
    for delta in perturbation_schedule(radius, 4 * count) {
        if family.members.len() == count {
            break;
        }
        let skip = |reason: String| SkippedPerturbation { perturbation: delta, reason };
        match thm2b_member(model, j, j2, rho, delta, &target) {
            Err(e) => family.skipped.push(skip(e.to_string())),
            Ok((alt, dev)) => {
                let rep = validate_model(&alt);
                if !rep.is_valid() {
                    family.skipped.push(skip(rep.violations.join("; ")));
                } else if !(dev < THM2B_MAX_DEVIATION) {
                    family.skipped.push(skip(format!("solver residual {dev:.3e}")));
                } else {
                    family.members.push(AlternativeMember { model: alt, perturbation: delta, deviation: dev });
                }
            }
        }
    }
    Ok(family)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GraphicalMatrix;
    use crate::simulate::{random_model, random_model_on_independence_surface, SimConfig};

    fn one_item() -> BlessModel {
        BlessModel::new(
            GraphicalMatrix::from_parents(1, &[0]).unwrap(),
            vec![ItemCpt::new(vec![0.2, 0.8], vec![0.8, 0.2])],
            LatentProportions::uniform(1),
            2,
        )
        .unwrap()
    }

    #[test]
    fn prop1_worked_example() {
        let m = one_item();
        let alt = prop1_alternative(&m, 0, 0.7).unwrap();
        assert!((alt.nu.get(0) - 0.4).abs() < 1e-15);
        assert!((alt.nu.get(1) - 0.6).abs() < 1e-15);
        assert!((alt.items[0].theta1[1] - 0.3).abs() < 1e-15);
        let pmf = response_pmf_kr(&alt).unwrap();
        // 0.4 * 0.2 + 0.6 * 0.7
        assert!((pmf.probs[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn prop1_identity() {
        let m = one_item();
        assert_eq!(prop1_alternative(&m, 0, 0.8).unwrap(), m);
    }

    #[test]
    fn prop1_figure_design() {
        let g = GraphicalMatrix::from_parents(3, &[0, 1, 2, 1, 2]).unwrap();
        let m = random_model(&SimConfig::new(5, 3, 2, 11), &g).unwrap();
        let fam = construct_prop1_alternatives(&m, 0, 150, 0.05).unwrap();
        assert_eq!(fam.len(), 150);
        assert!(fam.max_deviation() < 1e-12);
        for i in 0..fam.len() {
            assert!(fam.parameter_shift(i) > 0.025);
        }
        assert!(construct_prop1_alternatives(&m, 1, 5, 0.05).is_err());
    }

    #[test]
    fn prop1_d3() {
        let g = GraphicalMatrix::from_parents(2, &[0, 1, 1]).unwrap();
        let m = random_model(&SimConfig::new(3, 2, 3, 5), &g).unwrap();
        let fam = construct_prop1_alternatives(&m, 0, 20, 0.02).unwrap();
        assert!(!fam.is_empty());
        assert!(fam.max_deviation() < 1e-12);
    }

    fn two_items() -> BlessModel {
        BlessModel::new(
            GraphicalMatrix::from_parents(1, &[0, 0]).unwrap(),
            vec![
                ItemCpt::new(vec![0.2, 0.8], vec![0.8, 0.2]),
                ItemCpt::new(vec![0.3, 0.7], vec![0.9, 0.1]),
            ],
            LatentProportions::uniform(1),
            2,
        )
        .unwrap()
    }

    #[test]
    fn thm2b_worked_example() {
        let m = two_items();
        let (alt, dev) = thm2b_alternative(&m, 0, 0.05).unwrap();
        assert!((alt.items[0].theta0[0] - 0.25).abs() < 1e-15);
        assert!((alt.items[1].theta1[0] - 0.96).abs() < 1e-12);
        assert!(dev < 1e-10, "{dev}");
        assert!(validate_model(&alt).is_valid());
    }

    #[test]
    fn thm2b_zero_perturbation() {
        let m = two_items();
        let (alt, dev) = thm2b_alternative(&m, 0, 0.0).unwrap();
        assert_eq!(dev, 0.0);
        assert_eq!(alt, m);
    }

    #[test]
    fn thm2b_on_surface_k3() {
        let g = GraphicalMatrix::stacked_identity(3, 2);
        let m = random_model_on_independence_surface(&SimConfig::new(6, 3, 2, 4), &g, 0).unwrap();
        let fam = construct_thm2b_alternatives(&m, 0, 150, 0.02).unwrap();
        assert_eq!(fam.len(), 150, "skipped: {:?}", fam.skipped.first());
        assert!(fam.max_deviation() < 1e-10);
    }

    #[test]
    fn thm2b_d3() {
        let g = GraphicalMatrix::stacked_identity(2, 2);
        let m = random_model_on_independence_surface(&SimConfig::new(4, 2, 3, 9), &g, 1).unwrap();
        let fam = construct_thm2b_alternatives(&m, 1, 10, 0.01).unwrap();
        assert!(!fam.is_empty(), "{:?}", fam.skipped);
        assert!(fam.max_deviation() < 1e-10);
    }

    #[test]
    fn thm2b_refuses_off_surface() {
        let g = GraphicalMatrix::stacked_identity(2, 2);
        let mut m = random_model_on_independence_surface(&SimConfig::new(4, 2, 2, 1), &g, 0).unwrap();
        let mut nu = m.nu.values().to_vec();
        nu[0] += 0.05;
        nu[1] -= 0.05;
        m.nu = LatentProportions::new(2, nu).unwrap();
        let err = construct_thm2b_alternatives(&m, 0, 5, 0.01).unwrap_err();
        assert!(matches!(err, BlessError::Precondition(_)));
    }
}
