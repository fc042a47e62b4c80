//! Acceptance suite: one PASS/FAIL line per criterion. Run a subset with
//! `cargo test --test acceptance -- 3 4`.

use std::process::ExitCode;
use std::sync::Mutex;
use std::time::Instant;

use bless_core::data::{Dataset, PatternCounts};
use bless_core::em::{align_to_truth, fit_known_g_counts, fit_unknown_g_counts, parameter_mse, EmConfig};
use bless_core::experiment::{blessing_mse, prop1_figure, push_off_surface, surface_nonid, BlessingConfig};
use bless_core::identify::{
    chi2_survival, classify_graph, construct_thm2b_alternatives, identifiability_test, LatentVerdict,
    OverallVerdict, Strategy,
};
use bless_core::model::{response_pmf_direct, response_pmf_kr, BlessModel, GraphicalMatrix, ItemCpt, LatentProportions};
use bless_core::simulate::{derive_seed, random_model, rng_from_seed, sample_dataset, SimConfig};
use bless_core::tensor::{build_lemma1_transform, verify_lemma1_identity, DeltaVector};
use bless_core::BlessError;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Largest log-likelihood decrease seen in any fit during this run.
static MAX_TRACE_DROP: Mutex<(f64, usize)> = Mutex::new((0.0, 0));

fn record_trace(drop: f64) {
    let mut g = MAX_TRACE_DROP.lock().unwrap();
    g.0 = g.0.max(drop);
    g.1 += 1;
}

type Criterion = (usize, &'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn stochastic_columns<R: Rng>(rng: &mut R, d: usize, cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(d, cols, |_, _| rng.random_range(0.01..1.0));
    for mut c in m.column_iter_mut() {
        let s = c.sum();
        c /= s;
    }
    m
}

fn lemma1() -> Outcome {
    let mut rng = rng_from_seed(101);
    let (mut worst_id, mut worst_solve) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let k = rng.random_range(1..=3usize);
        let p = rng.random_range(1..=4usize);
        let dims: Vec<usize> = (0..p).map(|_| rng.random_range(2..=4usize)).collect();
        let phis: Vec<DMatrix<f64>> = dims.iter().map(|&d| stochastic_columns(&mut rng, d, 1 << k)).collect();
        let deltas: Vec<DeltaVector> = dims
            .iter()
            .map(|&d| DeltaVector::from_free(&(0..d - 1).map(|_| rng.random_range(-0.25..0.25)).collect::<Vec<_>>()))
            .collect();
        worst_id = worst_id.max(verify_lemma1_identity(&phis, &deltas).expect("instance is well-posed"));
        let b = build_lemma1_transform(&deltas).expect("invertible");
        let n = b.matrix().nrows();
        let rhs = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let x = b.solve(&rhs).expect("solvable");
        worst_solve = worst_solve.max((b.matrix() * x - rhs).amax());
    }
    outcome(
        worst_id < 1e-12 && worst_solve < 1e-10,
        format!("max identity residual {worst_id:.2e}, max solve residual {worst_solve:.2e} over 1000 instances"),
    )
}

fn dual_pmf() -> Outcome {
    let mut rng = rng_from_seed(202);
    let mut worst = 0.0f64;
    for i in 0..1000u64 {
        let k = rng.random_range(1..=3usize);
        let p = rng.random_range(k..=5usize);
        let d = rng.random_range(2..=4usize);
        let parents: Vec<usize> = (0..p).map(|j| if j < k { j } else { rng.random_range(0..k) }).collect();
        let g = GraphicalMatrix::from_parents(k, &parents).unwrap();
        let m = random_model(&SimConfig::new(p, k, d, derive_seed(202, i)), &g).unwrap();
        let a = response_pmf_direct(&m).unwrap();
        let b = response_pmf_kr(&m).unwrap();
        worst = worst.max(a.max_abs_diff(&b));
    }
    outcome(worst < 1e-12, format!("max |direct - khatri-rao| = {worst:.2e} over 1000 models"))
}

fn prop1() -> Outcome {
    let exp = prop1_figure(7, 150, 0.05).unwrap();
    let r = &exp.report;
    outcome(
        r.members == 150 && r.max_deviation < 1e-12 && r.min_parameter_shift > 0.025,
        format!(
            "{} alternatives, max pmf deviation {:.2e}, min parameter shift {:.3}",
            r.members, r.max_deviation, r.min_parameter_shift
        ),
    )
}

fn thm2b() -> Outcome {
    let exp = surface_nonid(7, 150, 0.03).unwrap();
    let r = &exp.report;
    // independent re-check: off-surface by exactly 0.05 total variation
    let mut off = exp.family.source.clone();
    off.nu = push_off_surface(&off.nu, 0, 0.05).unwrap();
    let refused = matches!(construct_thm2b_alternatives(&off, 0, 150, 0.03), Err(BlessError::Precondition(_)));
    outcome(
        r.members == 150 && r.max_deviation < 1e-10 && refused && r.off_surface_refused == Some(true),
        format!(
            "{} alternatives ({} skipped), max pmf deviation {:.2e}, off-surface refused: {refused}",
            r.members, r.skipped, r.max_deviation
        ),
    )
}

fn blessing() -> Outcome {
    let cfg = BlessingConfig { models: 30, datasets: 20, n: 10_000, d: 3, seed: 5, ..Default::default() };
    let r = blessing_mse(&cfg).unwrap();
    record_trace(r.max_trace_drop);
    outcome(
        r.test.p_value < 0.05 && r.median_distance_top < r.median_distance_rest,
        format!(
            "median surface distance top-20% {:.4} vs rest {:.4}, one-sided Mann-Whitney p = {:.4}",
            r.median_distance_top, r.median_distance_rest, r.test.p_value
        ),
    )
}

fn g_recovery() -> Outcome {
    let g = GraphicalMatrix::stacked_identity(3, 2);
    let mut hits = 0;
    // the graph search reassigns G by sampled argmax, so its trace is not an
    // EM ascent; only known-G fits feed the criterion-7 tracker
    let mut search_drop = 0.0f64;
    for s in 0..20u64 {
        let truth = random_model(&SimConfig::new(6, 3, 3, derive_seed(606, s)), &g).unwrap();
        let data = sample_dataset(&truth, 10_000, derive_seed(607, s)).unwrap().data;
        let cfg = EmConfig::default().with_seed(s).with_restarts(20);
        let fit = fit_unknown_g_counts(&PatternCounts::from_dataset(&data), 3, &cfg).unwrap();
        search_drop = search_drop.max(fit.max_trace_drop());
        if align_to_truth(&fit.model, &truth).unwrap().graph_mismatches == 0 {
            hits += 1;
        }
    }
    outcome(
        hits >= 18,
        format!("G recovered up to permutation in {hits}/20 seeds; graph-search trace max dip {search_drop:.2e}"),
    )
}

fn ascent_and_consistency() -> Outcome {
    let g = GraphicalMatrix::stacked_identity(2, 3);
    let sizes = [1_000usize, 10_000, 100_000];
    let mut errors = vec![Vec::new(); sizes.len()];
    for s in 0..20u64 {
        let truth = random_model(&SimConfig::new(6, 2, 2, derive_seed(707, s)), &g).unwrap();
        for (i, &n) in sizes.iter().enumerate() {
            let data = sample_dataset(&truth, n, derive_seed(derive_seed(708, s), n as u64)).unwrap().data;
            let cfg = EmConfig::default().with_seed(s).with_restarts(5);
            let fit = fit_known_g_counts(&PatternCounts::from_dataset(&data), &g, &cfg).unwrap();
            record_trace(fit.max_trace_drop());
            let aligned = align_to_truth(&fit.model, &truth).unwrap();
            errors[i].push(parameter_mse(&aligned.model, &truth).sqrt());
        }
    }
    let med: Vec<f64> = errors
        .iter()
        .map(|e| {
            let mut v = e.clone();
            v.sort_by(f64::total_cmp);
            0.5 * (v[9] + v[10])
        })
        .collect();
    let (drop, fits) = *MAX_TRACE_DROP.lock().unwrap();
    outcome(
        drop <= 1e-9 && med[0] > med[1] && med[1] > med[2],
        format!(
            "max loglik decrease {drop:.2e} over {fits} known-G fits; median RMSE {:.4} > {:.4} > {:.4}",
            med[0], med[1], med[2]
        ),
    )
}

fn two_by_two_model(nu: [f64; 4], theta0: [f64; 2], theta1: [f64; 2]) -> BlessModel {
    BlessModel::new(
        GraphicalMatrix::stacked_identity(2, 2),
        (0..4).map(|_| ItemCpt::new(theta0.to_vec(), theta1.to_vec())).collect(),
        LatentProportions::new(2, nu.to_vec()).unwrap(),
        2,
    )
    .unwrap()
}

fn rejection_rate(model: &BlessModel, reps: u64, seed: u64) -> f64 {
    let g = &model.g;
    let mut rejected = 0;
    for r in 0..reps {
        let data: Dataset = sample_dataset(model, 2000, derive_seed(seed, r)).unwrap().data;
        let t = identifiability_test(&data, g, 0, Strategy::FullComplement, 0.05, false).unwrap();
        rejected += usize::from(t.evidence);
    }
    rejected as f64 / reps as f64
}

fn chi2_machinery() -> Outcome {
    let q = chi2_survival(16.92, 9.0).unwrap();
    // independent latents: nu is an outer product
    let (a, b) = (0.4, 0.3);
    let indep = two_by_two_model(
        [(1.0 - a) * (1.0 - b), (1.0 - a) * b, a * (1.0 - b), a * b],
        [0.1, 0.9],
        [0.9, 0.1],
    );
    let size = rejection_rate(&indep, 1000, 808);
    let dep_nu = [0.3, 0.2, 0.2, 0.3];
    let det = dep_nu[0] * dep_nu[3] - dep_nu[1] * dep_nu[2];
    let dep = two_by_two_model(dep_nu, [0.1, 0.9], [0.9, 0.1]);
    let power = rejection_rate(&dep, 500, 809);
    outcome(
        (q - 0.05).abs() <= 5e-4 && (0.03..=0.07).contains(&size) && power > 0.9,
        format!("survival(16.92, 9) = {q:.5}; size {size:.3} over 1000 datasets; power {power:.3} at |det| = {det:.3}"),
    )
}

fn classifier() -> Outcome {
    let fig = classify_graph(&GraphicalMatrix::from_parents(3, &[0, 1, 2, 1, 2]).unwrap()).unwrap();
    let ex = classify_graph(&GraphicalMatrix::from_parents(3, &[0, 1, 2, 0, 1, 2, 0]).unwrap()).unwrap();
    let strict = classify_graph(&GraphicalMatrix::stacked_identity(3, 3)).unwrap();
    let ok_fig = fig.overall == OverallVerdict::NonIdentifiable
        && fig.child_counts == vec![1, 2, 2]
        && fig.non_identifiable_latents == vec![1];
    let ex_verdicts: Vec<LatentVerdict> = ex.latents.iter().map(|l| l.verdict).collect();
    let ok_ex = ex.overall == OverallVerdict::Generic
        && ex_verdicts == vec![LatentVerdict::Strict, LatentVerdict::GenericBoundary, LatentVerdict::GenericBoundary];
    let ok_strict = strict.overall == OverallVerdict::Strict;
    outcome(
        ok_fig && ok_ex && ok_strict,
        format!(
            "single-child graph {:?} {:?}; seven-item graph {:?} {:?}; three-children graph {:?}",
            fig.child_counts, fig.overall, ex.child_counts, ex.overall, strict.overall
        ),
    )
}

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [Criterion; 9] = [
        (1, "lemma1-identity", lemma1),
        (2, "dual-pmf", dual_pmf),
        (3, "single-child-alternatives", prop1),
        (4, "surface-alternatives", thm2b),
        (5, "blessing-mse", blessing),
        (6, "graph-recovery", g_recovery),
        (7, "em-ascent-consistency", ascent_and_consistency),
        (8, "chi2-machinery", chi2_machinery),
        (9, "graph-classifier", classifier),
    ];
    let mut failed = 0;
    for (n, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let o = run();
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n} [{name}]: {status} ({}; {:.1}s)", o.detail, t0.elapsed().as_secs_f64());
        failed += usize::from(!o.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
