//! Maximum-likelihood estimation by EM.
//!
//! [`fit_known_g`] runs the EM iteration for `theta` and `nu` with the
//! measurement graph held fixed. [`fit_unknown_g`] augments each iteration
//! with a graph update: every item is reassigned to the latent under which
//! its current tables best explain the completed data. Both run several
//! random restarts (in parallel) and keep the one with the largest final
//! log-likelihood.
//!
//! Internally all sums run over distinct response patterns weighted by their
//! counts, which gives the same numbers as summing over subjects.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{Dataset, PatternCounts};
use crate::error::{BlessError, Result};
use crate::model::{latent_bit, BlessModel, GraphicalMatrix, ItemCpt, LatentProportions, ModelFile};
use crate::simulate::{derive_seed, random_item, rng_from_seed};

/// Denominators of the M step are clamped here when a parent state carries
/// no posterior mass.
pub const MIN_DENOMINATOR: f64 = 1e-300;
/// Exhaustive alignment is limited to this many latents.
pub const MAX_ALIGN_LATENTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop when `|l_t - l_{t-1}| / (|l_t| + 1) < tol`.
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Graph update only: feed posterior expectations instead of sampled
    /// latent patterns into the per-item parent scores.
    pub soft_gamma: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            tol: 1e-8,
            restarts: 10,
            seed: 0,
            soft_gamma: false,
        }
    }
}

impl EmConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }

    fn check(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.restarts == 0 || self.max_iters == 0 {
            return Err(BlessError::InvalidArgument(
                "EM needs tol > 0, restarts >= 1 and max_iters >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Posterior probabilities of the latent patterns, one row per subject (or
/// per distinct pattern for the count-based variants).
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    rows: usize,
    cols: usize,
    e: Vec<f64>,
}

impl PosteriorMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if cols == 0 || !cols.is_power_of_two() || rows.iter().any(|r| r.len() != cols) {
            return Err(BlessError::Dimension(
                "posterior rows must share a power-of-two length".into(),
            ));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            e: rows.concat(),
        })
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.e[i * self.cols..(i + 1) * self.cols]
    }
}

/// Updated parameters from one M step.
#[derive(Debug, Clone, PartialEq)]
pub struct MStepUpdate {
    pub items: Vec<ItemCpt>,
    pub nu: LatentProportions,
    /// Some parent state had no posterior mass; its denominator was clamped.
    pub zero_denominator: bool,
}

/// Compensated summation.
#[derive(Default)]
struct NeumaierSum {
    sum: f64,
    c: f64,
}

impl NeumaierSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.c
    }
}

fn safe_ln(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        f64::MIN_POSITIVE.ln()
    }
}

/// Log of `nu[alpha] * prod_j theta_j(y_j | alpha)` for every pattern.
struct LogTables {
    log_nu: Vec<f64>,
    /// `[j][state][c]`
    log_theta: Vec<[Vec<f64>; 2]>,
    parents: Vec<usize>,
    k: usize,
}

impl LogTables {
    fn new(model: &BlessModel) -> Result<Self> {
        Ok(Self {
            log_nu: model.nu.values().iter().map(|&v| safe_ln(v)).collect(),
            log_theta: model
                .items
                .iter()
                .map(|it| {
                    [
                        it.theta0.iter().map(|&v| safe_ln(v)).collect(),
                        it.theta1.iter().map(|&v| safe_ln(v)).collect(),
                    ]
                })
                .collect(),
            parents: model.g.parents()?,
            k: model.k(),
        })
    }

    /// Fills `out` with normalized posteriors and returns the log marginal.
    fn posterior(&self, y: &[u16], out: &mut [f64]) -> f64 {
        let mut max = f64::NEG_INFINITY;
        for (l, slot) in out.iter_mut().enumerate() {
            let mut lp = self.log_nu[l];
            for (j, &c) in y.iter().enumerate() {
                lp += self.log_theta[j][latent_bit(l, self.parents[j], self.k)][c as usize];
            }
            *slot = lp;
            max = max.max(lp);
        }
        let mut s = 0.0;
        for slot in out.iter_mut() {
            *slot = (*slot - max).exp();
            s += *slot;
        }
        for slot in out.iter_mut() {
            *slot /= s;
        }
        max + s.ln()
    }
}

fn check_data(model: &BlessModel, p: usize, d: usize) -> Result<()> {
    if p != model.p() || d != model.d {
        return Err(BlessError::Dimension(format!(
            "data is p={p}, d={d}; model is p={}, d={}",
            model.p(),
            model.d
        )));
    }
    Ok(())
}

/// Posterior of the latent pattern for every subject.
pub fn e_step(model: &BlessModel, data: &Dataset) -> Result<PosteriorMatrix> {
    check_data(model, data.p(), data.d())?;
    let tables = LogTables::new(model)?;
    let cols = model.n_patterns();
    let mut e = vec![0.0; data.n() * cols];
    for (i, row) in data.rows().enumerate() {
        tables.posterior(row, &mut e[i * cols..(i + 1) * cols]);
    }
    Ok(PosteriorMatrix {
        rows: data.n(),
        cols,
        e,
    })
}

/// Posterior for each distinct pattern, plus the weighted log-likelihood.
pub fn e_step_counts(model: &BlessModel, counts: &PatternCounts) -> Result<(PosteriorMatrix, f64)> {
    check_data(model, counts.p, counts.d)?;
    let tables = LogTables::new(model)?;
    let cols = model.n_patterns();
    let mut e = vec![0.0; counts.len() * cols];
    let mut ll = NeumaierSum::default();
    for u in 0..counts.len() {
        let lm = tables.posterior(counts.pattern(u), &mut e[u * cols..(u + 1) * cols]);
        if counts.weights[u] != 0.0 {
            ll.add(counts.weights[u] * lm);
        }
    }
    Ok((
        PosteriorMatrix {
            rows: counts.len(),
            cols,
            e,
        },
        ll.value(),
    ))
}

/// `sum_i log sum_alpha nu_alpha prod_j theta_j(y_ij | alpha)`, log domain.
pub fn log_likelihood(model: &BlessModel, data: &Dataset) -> Result<f64> {
    let counts = PatternCounts::from_dataset(data);
    log_likelihood_counts(model, &counts)
}

pub fn log_likelihood_counts(model: &BlessModel, counts: &PatternCounts) -> Result<f64> {
    check_data(model, counts.p, counts.d)?;
    let tables = LogTables::new(model)?;
    let mut buf = vec![0.0; model.n_patterns()];
    let mut ll = NeumaierSum::default();
    for u in 0..counts.len() {
        if counts.weights[u] != 0.0 {
            ll.add(counts.weights[u] * tables.posterior(counts.pattern(u), &mut buf));
        }
    }
    Ok(ll.value())
}

/// Closed-form M step over weighted rows `(responses, weight, posterior)`.
fn m_step_weighted<'a, I>(rows: I, parents: &[usize], k: usize, d: usize) -> MStepUpdate
where
    I: Iterator<Item = (&'a [u16], f64, &'a [f64])>,
{
    let p = parents.len();
    let n_pat = 1usize << k;
    // num[j][state][c], den[j][state]
    let mut num = vec![[vec![0.0; d], vec![0.0; d]]; p];
    let mut den = vec![[0.0f64; 2]; p];
    let mut nu_acc = vec![0.0; n_pat];
    let mut mass1 = vec![0.0; k];
    for (y, w, r) in rows {
        if w == 0.0 {
            continue;
        }
        mass1.iter_mut().for_each(|m| *m = 0.0);
        let mut total = 0.0;
        for (l, &rl) in r.iter().enumerate() {
            nu_acc[l] += w * rl;
            total += rl;
            for (kk, m) in mass1.iter_mut().enumerate() {
                if latent_bit(l, kk, k) == 1 {
                    *m += rl;
                }
            }
        }
        for j in 0..p {
            let m1 = mass1[parents[j]];
            let m0 = total - m1;
            let c = y[j] as usize;
            num[j][1][c] += w * m1;
            num[j][0][c] += w * m0;
            den[j][1] += w * m1;
            den[j][0] += w * m0;
        }
    }
    let mut zero_denominator = false;
    let items = (0..p)
        .map(|j| {
            let mut tables = [Vec::new(), Vec::new()];
            for s in 0..2 {
                let mut dn = den[j][s];
                if !(dn > MIN_DENOMINATOR) {
                    dn = MIN_DENOMINATOR;
                    zero_denominator = true;
                }
                tables[s] = num[j][s].iter().map(|&x| x / dn).collect();
            }
            let [t0, t1] = tables;
            ItemCpt::new(t0, t1)
        })
        .collect();
    let total: f64 = nu_acc.iter().sum();
    let nu = LatentProportions::new(k, nu_acc.iter().map(|&x| x / total).collect())
        .expect("pattern count matches K");
    MStepUpdate {
        items,
        nu,
        zero_denominator,
    }
}

/// M step from per-subject posteriors.
pub fn m_step(posterior: &PosteriorMatrix, data: &Dataset, g: &GraphicalMatrix) -> Result<MStepUpdate> {
    let parents = g.parents()?;
    if posterior.nrows() != data.n() || posterior.ncols() != 1 << g.k() || data.p() != g.p() {
        return Err(BlessError::Dimension(
            "posterior, data and graph disagree in size".into(),
        ));
    }
    let rows = (0..data.n()).map(|i| (data.row(i), 1.0, posterior.row(i)));
    Ok(m_step_weighted(rows, &parents, g.k(), data.d()))
}

/// M step from per-pattern posteriors and pattern weights.
pub fn m_step_counts(
    posterior: &PosteriorMatrix,
    counts: &PatternCounts,
    g: &GraphicalMatrix,
) -> Result<MStepUpdate> {
    let parents = g.parents()?;
    if posterior.nrows() != counts.len() || posterior.ncols() != 1 << g.k() || counts.p != g.p() {
        return Err(BlessError::Dimension(
            "posterior, counts and graph disagree in size".into(),
        ));
    }
    let rows = (0..counts.len()).map(|u| (counts.pattern(u), counts.weights[u], posterior.row(u)));
    Ok(m_step_weighted(rows, &parents, g.k(), counts.d))
}

/// Flip latents whose children mostly violate `theta1[0] > theta0[0]`
/// (ties broken by the summed gap), so the estimate has the orientation the
/// monotonicity constraint prescribes.
pub fn canonicalize(model: &BlessModel) -> BlessModel {
    let mut out = model.clone();
    for k in 0..model.k() {
        let children = model.g.children_of(k);
        if children.is_empty() {
            continue;
        }
        let gaps: Vec<f64> = children
            .iter()
            .map(|&j| model.items[j].theta1[0] - model.items[j].theta0[0])
            .collect();
        let violations = gaps.iter().filter(|&&g| g < 0.0).count();
        let total_gap: f64 = gaps.iter().sum();
        if 2 * violations > children.len() || (2 * violations == children.len() && total_gap < 0.0) {
            out = out.flip_latent(k);
        }
    }
    out
}

/// Outcome of a fit.
#[derive(Debug, Clone)]
pub struct EmResult {
    pub model: BlessModel,
    pub loglik: f64,
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub g_estimated: bool,
    pub iterations: usize,
    /// Index of the restart that produced the result.
    pub best_restart: usize,
    /// Final log-likelihood of every restart.
    pub restart_logliks: Vec<f64>,
    pub seed: u64,
    pub wall_time_secs: f64,
    /// Some argmax in the graph update was tied (lowest index kept).
    pub gamma_tie: bool,
    pub zero_denominator: bool,
}

/// JSON form of [`EmResult`].
#[derive(Debug, Clone, Serialize)]
pub struct EmReport {
    pub model: ModelFile,
    pub loglik: f64,
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub g_estimated: bool,
    pub iterations: usize,
    pub best_restart: usize,
    pub restart_logliks: Vec<f64>,
    pub seed: u64,
    pub wall_time_secs: f64,
    pub gamma_tie: bool,
    pub zero_denominator: bool,
}

impl EmResult {
    pub fn report(&self) -> EmReport {
        EmReport {
            model: self.model.to_file(),
            loglik: self.loglik,
            loglik_trace: self.loglik_trace.clone(),
            converged: self.converged,
            g_estimated: self.g_estimated,
            iterations: self.iterations,
            best_restart: self.best_restart,
            restart_logliks: self.restart_logliks.clone(),
            seed: self.seed,
            wall_time_secs: self.wall_time_secs,
            gamma_tie: self.gamma_tie,
            zero_denominator: self.zero_denominator,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.report()).expect("report serializes")
    }

    /// Largest decrease between consecutive log-likelihood values.
    pub fn max_trace_drop(&self) -> f64 {
        self.loglik_trace
            .windows(2)
            .map(|w| w[0] - w[1])
            .fold(0.0, f64::max)
    }
}

struct RunOutcome {
    model: BlessModel,
    trace: Vec<f64>,
    converged: bool,
    gamma_tie: bool,
    zero_denominator: bool,
}

fn init_gap(d: usize) -> f64 {
    (0.4 / (d - 1) as f64).min(0.1)
}

fn random_start<R: Rng>(rng: &mut R, g: &GraphicalMatrix, d: usize) -> BlessModel {
    let items = (0..g.p()).map(|_| random_item(rng, d, init_gap(d))).collect();
    let n = 1usize << g.k();
    let mut nu: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(rand_distr::Exp1)).collect();
    let s: f64 = nu.iter().sum();
    nu.iter_mut().for_each(|x| *x /= s);
    BlessModel::new(g.clone(), items, LatentProportions::new(g.k(), nu).expect("2^K entries"), d)
        .expect("consistent dimensions")
}

fn converged(prev: f64, cur: f64, tol: f64) -> bool {
    (cur - prev).abs() / (cur.abs() + 1.0) < tol
}

/// EM with the graph held fixed, from a given starting point.
pub fn run_known_g(start: BlessModel, counts: &PatternCounts, config: &EmConfig) -> Result<EmResult> {
    let t0 = Instant::now();
    let out = run_known(start, counts, config)?;
    Ok(finish(vec![out], config, false, t0))
}

fn run_known(start: BlessModel, counts: &PatternCounts, config: &EmConfig) -> Result<RunOutcome> {
    let mut model = start;
    let mut trace = Vec::new();
    let mut done = false;
    let mut zero_denominator = false;
    for _ in 0..config.max_iters {
        let (post, ll) = e_step_counts(&model, counts)?;
        if let Some(&prev) = trace.last() {
            if converged(prev, ll, config.tol) {
                trace.push(ll);
                done = true;
                break;
            }
        }
        trace.push(ll);
        let upd = m_step_counts(&post, counts, &model.g)?;
        zero_denominator |= upd.zero_denominator;
        model.items = upd.items;
        model.nu = upd.nu;
    }
    if !done {
        // score the parameters produced by the last M step
        trace.push(log_likelihood_counts(&model, counts)?);
        done = trace.len() >= 2 && converged(trace[trace.len() - 2], trace[trace.len() - 1], config.tol);
    }
    Ok(RunOutcome {
        model,
        trace,
        converged: done,
        gamma_tie: false,
        zero_denominator,
    })
}

fn finish(runs: Vec<RunOutcome>, config: &EmConfig, g_estimated: bool, t0: Instant) -> EmResult {
    let restart_logliks: Vec<f64> = runs.iter().map(|r| *r.trace.last().unwrap_or(&f64::NEG_INFINITY)).collect();
    let mut best = 0;
    for (i, &ll) in restart_logliks.iter().enumerate() {
        if ll > restart_logliks[best] || restart_logliks[best].is_nan() {
            best = i;
        }
    }
    let run = runs.into_iter().nth(best).expect("at least one restart");
    EmResult {
        model: canonicalize(&run.model),
        loglik: restart_logliks[best],
        iterations: run.trace.len().saturating_sub(1),
        loglik_trace: run.trace,
        converged: run.converged,
        g_estimated,
        best_restart: best,
        restart_logliks,
        seed: config.seed,
        wall_time_secs: t0.elapsed().as_secs_f64(),
        gamma_tie: run.gamma_tie,
        zero_denominator: run.zero_denominator,
    }
}

pub fn fit_known_g(data: &Dataset, g: &GraphicalMatrix, d: usize, config: &EmConfig) -> Result<EmResult> {
    if data.d() != d || data.p() != g.p() {
        return Err(BlessError::Dimension(format!(
            "data is p={}, d={}; expected p={}, d={d}",
            data.p(),
            data.d(),
            g.p()
        )));
    }
    fit_known_g_counts(&PatternCounts::from_dataset(data), g, config)
}

/// [`fit_known_g`] on already-compressed (possibly fractional) counts.
pub fn fit_known_g_counts(counts: &PatternCounts, g: &GraphicalMatrix, config: &EmConfig) -> Result<EmResult> {
    config.check()?;
    g.parents()?;
    let t0 = Instant::now();
    let runs = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_from_seed(derive_seed(config.seed, r as u64));
            run_known(random_start(&mut rng, g, counts.d), counts, config)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(finish(runs, config, false, t0))
}

/// Parent scores `L[j][k]` of the graph update, normalized by softmax into
/// `gamma`. `z[u][alpha]` is the completed-data count of pattern `alpha`
/// among subjects with response pattern `u`.
pub fn gamma_matrix(model: &BlessModel, counts: &PatternCounts, z: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = model.k();
    let d = model.d;
    let n_pat = model.n_patterns();
    (0..model.p())
        .map(|j| {
            let it = &model.items[j];
            // n[c][alpha]
            let mut n = vec![vec![0.0; n_pat]; d];
            for (u, zu) in z.iter().enumerate() {
                let c = counts.pattern(u)[j] as usize;
                for (l, &v) in zu.iter().enumerate() {
                    n[c][l] += v;
                }
            }
            let scores: Vec<f64> = (0..k)
                .map(|kk| {
                    let mut s = 0.0;
                    for (c, nc) in n.iter().enumerate() {
                        for (l, &v) in nc.iter().enumerate() {
                            if v != 0.0 {
                                let t = if latent_bit(l, kk, k) == 1 { it.theta1[c] } else { it.theta0[c] };
                                s += v * safe_ln(t);
                            }
                        }
                    }
                    s
                })
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let tot: f64 = ex.iter().sum();
            ex.into_iter().map(|e| e / tot).collect()
        })
        .collect()
}

/// Completed-data counts per pattern: either sampled latent patterns (one
/// draw per subject) or posterior expectations.
fn completed_counts<R: Rng>(
    post: &PosteriorMatrix,
    counts: &PatternCounts,
    soft: bool,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    (0..counts.len())
        .map(|u| {
            let r = post.row(u);
            let w = counts.weights[u];
            if soft {
                return r.iter().map(|&x| w * x).collect();
            }
            let mut out = vec![0.0; r.len()];
            let whole = w.floor() as usize;
            for _ in 0..whole {
                let mut x = rng.random::<f64>();
                let mut pick = r.len() - 1;
                for (l, &pr) in r.iter().enumerate() {
                    if x < pr {
                        pick = l;
                        break;
                    }
                    x -= pr;
                }
                out[pick] += 1.0;
            }
            // fractional weights (expected-count data) fall back to expectations
            let frac = w - whole as f64;
            if frac > 0.0 {
                for (o, &pr) in out.iter_mut().zip(r) {
                    *o += frac * pr;
                }
            }
            out
        })
        .collect()
}

fn argmax_lowest(v: &[f64]) -> (usize, bool) {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    let tie = v.iter().enumerate().any(|(i, &x)| i != best && x == v[best]);
    (best, tie)
}

fn random_graph<R: Rng>(rng: &mut R, p: usize, k: usize) -> GraphicalMatrix {
    // a random permutation gives the first min(p, K) items distinct parents
    let mut order: Vec<usize> = (0..p).collect();
    for i in (1..p).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut parents = vec![0; p];
    for (pos, &j) in order.iter().enumerate() {
        parents[j] = if pos < k { pos } else { rng.random_range(0..k) };
    }
    GraphicalMatrix::from_parents(k, &parents).expect("parents < K")
}

fn run_unknown<R: Rng>(
    start: BlessModel,
    counts: &PatternCounts,
    config: &EmConfig,
    rng: &mut R,
) -> Result<RunOutcome> {
    let mut model = start;
    let mut trace = Vec::new();
    let mut done = false;
    let mut gamma_tie = false;
    let mut zero_denominator = false;
    let mut g_changed = true;
    for _ in 0..config.max_iters {
        let (post, ll) = e_step_counts(&model, counts)?;
        if let Some(&prev) = trace.last() {
            if !g_changed && converged(prev, ll, config.tol) {
                trace.push(ll);
                done = true;
                break;
            }
        }
        trace.push(ll);
        let z = completed_counts(&post, counts, config.soft_gamma, rng);
        let gamma = gamma_matrix(&model, counts, &z);
        let parents: Vec<usize> = gamma
            .iter()
            .map(|row| {
                let (k, tie) = argmax_lowest(row);
                gamma_tie |= tie;
                k
            })
            .collect();
        let g_new = GraphicalMatrix::from_parents(model.k(), &parents)?;
        g_changed = g_new != model.g;
        let upd = m_step_counts(&post, counts, &g_new)?;
        zero_denominator |= upd.zero_denominator;
        model.g = g_new;
        model.items = upd.items;
        model.nu = upd.nu;
    }
    if !done {
        trace.push(log_likelihood_counts(&model, counts)?);
    }
    Ok(RunOutcome {
        model,
        trace,
        converged: done,
        gamma_tie,
        zero_denominator,
    })
}

pub fn fit_unknown_g(data: &Dataset, k: usize, d: usize, config: &EmConfig) -> Result<EmResult> {
    if data.d() != d {
        return Err(BlessError::Dimension(format!("data has d={}, expected {d}", data.d())));
    }
    fit_unknown_g_counts(&PatternCounts::from_dataset(data), k, config)
}

pub fn fit_unknown_g_counts(counts: &PatternCounts, k: usize, config: &EmConfig) -> Result<EmResult> {
    config.check()?;
    if k == 0 || k > 20 {
        return Err(BlessError::InvalidArgument(format!("K = {k} outside 1..=20")));
    }
    let t0 = Instant::now();
    let runs = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_from_seed(derive_seed(config.seed, r as u64));
            let g = random_graph(&mut rng, counts.p, k);
            let start = random_start(&mut rng, &g, counts.d);
            run_unknown(start, counts, config, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(finish(runs, config, true, t0))
}

/// Result of [`align_to_truth`]: `perm[c]` is the estimate's latent that was
/// matched to latent `c` of the truth.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub model: BlessModel,
    pub perm: Vec<usize>,
    /// Items whose parent differs from the truth after alignment.
    pub graph_mismatches: usize,
    /// Sum of squared differences over all `theta` and `nu` entries.
    pub distance: f64,
}

fn squared_distance(a: &BlessModel, b: &BlessModel) -> f64 {
    let theta: f64 = a
        .items
        .iter()
        .zip(&b.items)
        .map(|(x, y)| {
            x.theta0
                .iter()
                .zip(&y.theta0)
                .chain(x.theta1.iter().zip(&y.theta1))
                .map(|(u, v)| (u - v).powi(2))
                .sum::<f64>()
        })
        .sum();
    let nu: f64 = a
        .nu
        .values()
        .iter()
        .zip(b.nu.values())
        .map(|(u, v)| (u - v).powi(2))
        .sum();
    theta + nu
}

fn graph_mismatches(a: &GraphicalMatrix, b: &GraphicalMatrix) -> usize {
    (0..a.p()).filter(|&j| a.row(j) != b.row(j)).count()
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; k], &mut out);
    out
}

/// Match the estimate's latent labels to the truth: labels are oriented by
/// [`canonicalize`], then every permutation is scored by graph mismatches
/// first and parameter distance second.
pub fn align_to_truth(estimate: &BlessModel, truth: &BlessModel) -> Result<Alignment> {
    if estimate.p() != truth.p() || estimate.k() != truth.k() || estimate.d != truth.d {
        return Err(BlessError::Dimension("estimate and truth differ in (p, K, d)".into()));
    }
    if estimate.k() > MAX_ALIGN_LATENTS {
        return Err(BlessError::InvalidArgument(format!(
            "K = {} too large for exhaustive alignment (max {MAX_ALIGN_LATENTS})",
            estimate.k()
        )));
    }
    let oriented = canonicalize(estimate);
    let mut best: Option<Alignment> = None;
    for perm in permutations(estimate.k()) {
        let cand = oriented.permute_latents(&perm);
        let mism = graph_mismatches(&cand.g, &truth.g);
        let dist = squared_distance(&cand, truth);
        let better = match &best {
            None => true,
            Some(b) => (mism, dist) < (b.graph_mismatches, b.distance),
        };
        if better {
            best = Some(Alignment {
                model: cand,
                perm,
                graph_mismatches: mism,
                distance: dist,
            });
        }
    }
    Ok(best.expect("K >= 1 gives at least one permutation"))
}

/// Mean squared error over all `theta` and `nu` entries.
pub fn parameter_mse(a: &BlessModel, b: &BlessModel) -> f64 {
    let n = a.p() * a.d * 2 + a.n_patterns();
    squared_distance(a, b) / n as f64
}

/// Max absolute difference over all `theta` and `nu` entries.
pub fn parameter_max_abs(a: &BlessModel, b: &BlessModel) -> f64 {
    let theta = a.items.iter().zip(&b.items).flat_map(|(x, y)| {
        x.theta0
            .iter()
            .zip(&y.theta0)
            .chain(x.theta1.iter().zip(&y.theta1))
            .map(|(u, v)| (u - v).abs())
            .collect::<Vec<_>>()
    });
    let nu = a.nu.values().iter().zip(b.nu.values()).map(|(u, v)| (u - v).abs());
    theta.chain(nu).fold(0.0, f64::max)
}
