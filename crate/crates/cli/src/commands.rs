use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Serialize;

use bless_core::data::Dataset;
use bless_core::em::{fit_known_g, fit_unknown_g, EmConfig};
use bless_core::experiment::{blessing_mse, prop1_figure, surface_nonid, BlessingConfig};
use bless_core::identify::{
    classify_graph, construct_prop1_alternatives, construct_thm2b_alternatives, identifiability_test_latents,
    IdentifiabilityTest, LatentVerdict, Strategy,
};
use bless_core::model::{BlessModel, GraphicalMatrix};
use bless_core::simulate::{derive_seed, random_model, random_model_on_independence_surface, sample_dataset, DatasetMeta, SimConfig};
use bless_core::BlessError;

use crate::manifest::ManifestBuilder;
use crate::{
    exit, AltMode, CheckGraphArgs, Command, ConstructAltArgs, ExperimentArgs, ExperimentName, FitArgs, GraphTemplate,
    SimulateArgs, StrategyArg, TestIdArgs,
};

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

type CmdResult = Result<u8, Failure>;

fn input<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure { code: exit::INPUT, error: e.into() }
}

fn internal<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure { code: exit::INTERNAL, error: e.into() }
}

/// Errors from the core library are input errors except numerical failures.
fn core(e: BlessError) -> Failure {
    match e {
        BlessError::Singular(_) => internal(e),
        other => input(other),
    }
}

pub fn run(cmd: Command) -> CmdResult {
    match cmd {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::CheckGraph(a) => check_graph(a),
        Command::TestId(a) => test_id(a),
        Command::ConstructAlt(a) => construct_alt(a),
        Command::Experiment(a) => experiment(a),
    }
}

fn prepare_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
        .map_err(input)
}

fn write_json<T: Serialize>(path: &Path, value: &T, m: &mut ManifestBuilder) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(internal)?;
    write_text(path, &text, m)
}

fn write_text(path: &Path, text: &str, m: &mut ManifestBuilder) -> Result<(), Failure> {
    std::fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(input)?;
    m.output(path);
    Ok(())
}

fn finish(m: ManifestBuilder, dir: &Path, code: u8) -> CmdResult {
    m.finish(dir, code).map_err(internal)?;
    Ok(code)
}

/// Parse a graphical matrix: a JSON array of rows, a JSON object with a
/// `g` field (model files qualify), or whitespace/comma separated 0/1 rows.
pub fn parse_graph(text: &str) -> anyhow::Result<GraphicalMatrix> {
    let trimmed = text.trim_start();
    let rows: Vec<Vec<u8>> = if trimmed.starts_with('[') {
        serde_json::from_str(text).context("graph JSON must be an array of 0/1 rows")?
    } else if trimmed.starts_with('{') {
        let v: serde_json::Value = serde_json::from_str(text).context("invalid graph JSON")?;
        let g = v.get("g").ok_or_else(|| anyhow!("graph JSON object has no \"g\" field"))?;
        serde_json::from_value(g.clone()).context("\"g\" must be an array of 0/1 rows")?
    } else {
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                l.split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|t| !t.is_empty())
                    .map(|t| t.parse::<u8>().with_context(|| format!("bad graph entry {t:?}")))
                    .collect::<anyhow::Result<Vec<u8>>>()
            })
            .collect::<anyhow::Result<_>>()?
    };
    let g = GraphicalMatrix::from_rows(&rows)?;
    g.parents().context("not a star forest")?;
    Ok(g)
}

fn read_graph(path: &Path) -> Result<GraphicalMatrix, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read graph file {}", path.display()))
        .map_err(input)?;
    parse_graph(&text)
        .with_context(|| format!("invalid graph file {}", path.display()))
        .map_err(input)
}

fn read_data(path: &Path, d: usize) -> Result<Dataset, Failure> {
    Dataset::read_csv_path(path, d)
        .with_context(|| format!("cannot read dataset {}", path.display()))
        .map_err(input)
}

fn simulate(a: SimulateArgs) -> CmdResult {
    let mut m = ManifestBuilder::new("simulate");
    m.seed(a.seed);
    let g = match (&a.g_file, a.g_template) {
        (Some(path), _) => {
            m.input(path);
            read_graph(path)?
        }
        (None, Some(GraphTemplate::TwoChildren)) => GraphicalMatrix::stacked_identity(a.k, 2),
        (None, Some(GraphTemplate::ThreeChildren)) => GraphicalMatrix::stacked_identity(a.k, 3),
        (None, Some(GraphTemplate::Cyclic) | None) => {
            let p = a.p.ok_or_else(|| input(anyhow!("--p is required without a graph template or file")))?;
            GraphicalMatrix::cyclic(p, a.k).map_err(core)?
        }
    };
    if a.k == 0 || g.k() != a.k {
        return Err(input(anyhow!("--k {} does not match the graph's {} latents", a.k, g.k())));
    }
    if let Some(p) = a.p {
        if p != g.p() {
            return Err(input(anyhow!("--p {p} does not match the graph's {} items", g.p())));
        }
    }
    let config = SimConfig::new(g.p(), a.k, a.d, a.seed)
        .with_gap(a.theta_gap_min)
        .with_floor(a.nu_floor);
    let model = match a.surface_latent {
        Some(k) if k == 0 || k > a.k => return Err(input(anyhow!("--surface-latent {k} outside 1..={}", a.k))),
        Some(k) => random_model_on_independence_surface(&config, &g, k - 1),
        None => random_model(&config, &g),
    }
    .map_err(core)?;
    let data_seed = derive_seed(a.seed, 1);
    let sample = sample_dataset(&model, a.n, data_seed).map_err(core)?;
    let dir = &a.out.out_dir;
    prepare_dir(dir)?;
    write_text(&dir.join("model.json"), &model.to_json(), &mut m)?;
    let data_path = dir.join("data.csv");
    sample.data.write_csv_path(&data_path).map_err(core)?;
    m.output(&data_path);
    write_json(&dir.join("data.meta.json"), &DatasetMeta::new(&model, a.n, data_seed), &mut m)?;
    m.setting("data_seed", data_seed);
    m.setting("theta_gap_min", a.theta_gap_min);
    m.setting("nu_floor", a.nu_floor);
    eprintln!("wrote {} subjects x {} items to {}", a.n, g.p(), data_path.display());
    finish(m, dir, exit::OK)
}

fn fit(a: FitArgs) -> CmdResult {
    let mut m = ManifestBuilder::new("fit");
    m.seed(a.em.seed);
    m.input(&a.data);
    let data = read_data(&a.data, a.d)?;
    let config = EmConfig {
        max_iters: a.em.max_iters,
        tol: a.em.tol,
        restarts: a.em.restarts,
        seed: a.em.seed,
        soft_gamma: a.em.soft_gamma,
    };
    m.setting("em", &config);
    let result = match &a.g_file {
        Some(path) => {
            m.input(path);
            let g = read_graph(path)?;
            if let Some(k) = a.k {
                if k != g.k() {
                    return Err(input(anyhow!("--k {k} does not match the graph's {} latents", g.k())));
                }
            }
            fit_known_g(&data, &g, a.d, &config)
        }
        None => {
            let k = a.k.ok_or_else(|| input(anyhow!("--k is required when the graph is estimated")))?;
            fit_unknown_g(&data, k, a.d, &config)
        }
    }
    .map_err(core)?;
    let dir = &a.out.out_dir;
    prepare_dir(dir)?;
    write_text(&dir.join("fit.json"), &result.to_json(), &mut m)?;
    eprintln!(
        "loglik {:.6} after {} iterations (restart {}), converged: {}",
        result.loglik,
        result.iterations,
        result.best_restart + 1,
        result.converged
    );
    finish(m, dir, if result.converged { exit::OK } else { exit::NOT_CONVERGED })
}

fn check_graph(a: CheckGraphArgs) -> CmdResult {
    let mut m = ManifestBuilder::new("check-graph");
    m.input(&a.g_file);
    let g = read_graph(&a.g_file)?;
    let c = classify_graph(&g).map_err(core)?;
    let dir = &a.out.out_dir;
    prepare_dir(dir)?;
    write_json(&dir.join("classification.json"), &c, &mut m)?;
    println!("{}", serde_json::to_string_pretty(&c).map_err(internal)?);
    if !c.is_generic() {
        eprintln!(
            "not identifiable: latent(s) {:?} have fewer than two children",
            c.non_identifiable_latents
        );
    }
    finish(m, dir, if c.is_generic() { exit::OK } else { exit::NON_IDENTIFIABLE_GRAPH })
}

#[derive(Serialize)]
struct TestIdReport {
    strategy: Strategy,
    alpha: f64,
    bonferroni: bool,
    /// 1-based latents with at least three children, identifiable without a test.
    strict_latents: Vec<usize>,
    tests: Vec<IdentifiabilityTest>,
    /// Every tested latent shows evidence of identifiability.
    evidence: bool,
}

fn test_id(a: TestIdArgs) -> CmdResult {
    let mut m = ManifestBuilder::new("test-id");
    m.input(&a.data);
    m.input(&a.g_file);
    let data = read_data(&a.data, a.d)?;
    let g = read_graph(&a.g_file)?;
    let strategy = match a.strategy {
        StrategyArg::FullComplement => Strategy::FullComplement,
        StrategyArg::Pairwise => Strategy::PairwiseSubsets,
    };
    let class = classify_graph(&g).map_err(core)?;
    let dir = &a.out.out_dir;
    prepare_dir(dir)?;
    let (latents, strict) = if a.all {
        if !class.is_generic() {
            write_json(&dir.join("classification.json"), &class, &mut m)?;
            eprintln!(
                "graph is not identifiable: latent(s) {:?} have fewer than two children",
                class.non_identifiable_latents
            );
            return finish(m, dir, exit::NON_IDENTIFIABLE_GRAPH);
        }
        let pick = |v: LatentVerdict| {
            class.latents.iter().filter(move |l| l.verdict == v).map(|l| l.latent).collect::<Vec<_>>()
        };
        (
            pick(LatentVerdict::GenericBoundary).iter().map(|k| k - 1).collect::<Vec<_>>(),
            pick(LatentVerdict::Strict),
        )
    } else {
        let k = a.latent.expect("clap enforces --latent or --all");
        if k == 0 || k > g.k() {
            return Err(input(anyhow!("--latent {k} outside 1..={}", g.k())));
        }
        (vec![k - 1], Vec::new())
    };
    let tests = if latents.is_empty() {
        Vec::new()
    } else {
        identifiability_test_latents(&data, &g, &latents, strategy, a.alpha, a.bonferroni).map_err(core)?
    };
    let evidence = tests.iter().all(|t| t.evidence);
    let report = TestIdReport {
        strategy,
        alpha: a.alpha,
        bonferroni: a.bonferroni,
        strict_latents: strict,
        tests,
        evidence,
    };
    write_json(&dir.join("test.json"), &report, &mut m)?;
    for t in &report.tests {
        eprintln!(
            "latent {}: {} of {} tests reject at level {:.3e}",
            t.latent,
            t.rejections(),
            t.reports.len(),
            t.level
        );
    }
    finish(m, dir, if evidence { exit::OK } else { exit::NO_EVIDENCE })
}

fn construct_alt(a: ConstructAltArgs) -> CmdResult {
    let mut m = ManifestBuilder::new("construct-alt");
    m.input(&a.model);
    let model = BlessModel::read_json(&a.model)
        .with_context(|| format!("cannot read model {}", a.model.display()))
        .map_err(input)?;
    let one_based = |v: Option<usize>, name: &str, max: usize| -> Result<usize, Failure> {
        match v {
            Some(x) if x >= 1 && x <= max => Ok(x - 1),
            Some(x) => Err(input(anyhow!("--{name} {x} outside 1..={max}"))),
            None => Err(input(anyhow!("--{name} is required for this mode"))),
        }
    };
    let family = match a.mode {
        AltMode::Prop1 => {
            let j = one_based(a.item, "item", model.p())?;
            construct_prop1_alternatives(&model, j, a.count, a.radius)
        }
        AltMode::Thm2b => {
            let k = one_based(a.latent, "latent", model.k())?;
            construct_thm2b_alternatives(&model, k, a.count, a.radius)
        }
    };
    let family = match family {
        Ok(f) => f,
        Err(BlessError::Precondition(msg)) => {
            let hint = match a.mode {
                AltMode::Thm2b => {
                    " A latent with two children that depends on the other latents has identifiable \
                     parameters, so no indistinguishable family exists off the independence surface."
                }
                AltMode::Prop1 => " The single-child construction needs an item that is its parent's only child.",
            };
            return Err(Failure { code: exit::PRECONDITION, error: anyhow!("{msg}.{hint}") });
        }
        Err(e) => return Err(core(e)),
    };
    let dir = &a.out.out_dir;
    prepare_dir(dir)?;
    write_text(&dir.join("family.json"), &family.to_json(), &mut m)?;
    m.setting("count", a.count);
    m.setting("radius", a.radius);
    eprintln!(
        "{} alternatives ({} skipped), max pmf deviation {:.3e}",
        family.len(),
        family.skipped.len(),
        family.max_deviation()
    );
    finish(m, dir, exit::OK)
}

fn experiment(a: ExperimentArgs) -> CmdResult {
    let mut m = ManifestBuilder::new("experiment");
    m.seed(a.seed);
    let dir: PathBuf = a.out.out_dir.clone();
    prepare_dir(&dir)?;
    let outputs: &[&str] = match a.name {
        ExperimentName::Prop1Figure => {
            let exp = prop1_figure(a.seed, a.count, a.radius.unwrap_or(0.05)).map_err(core)?;
            exp.write(&dir).map_err(core)?;
            eprintln!("{} alternatives, max pmf deviation {:.3e}", exp.report.members, exp.report.max_deviation);
            &["report.json", "family.json", "pmf.csv"]
        }
        ExperimentName::SurfaceNonid => {
            let exp = surface_nonid(a.seed, a.count, a.radius.unwrap_or(0.03)).map_err(core)?;
            exp.write(&dir).map_err(core)?;
            eprintln!(
                "{} alternatives, max pmf deviation {:.3e}, refused off the surface: {:?}",
                exp.report.members, exp.report.max_deviation, exp.report.off_surface_refused
            );
            &["report.json", "family.json", "pmf.csv"]
        }
        ExperimentName::BlessingMse => {
            let cfg = BlessingConfig {
                models: a.models,
                datasets: a.datasets,
                n: a.n,
                seed: a.seed,
                em: EmConfig::default().with_restarts(a.restarts),
                ..Default::default()
            };
            let r = blessing_mse(&cfg).map_err(core)?;
            r.write(&dir).map_err(core)?;
            eprintln!(
                "median surface distance: top {:.4}, rest {:.4}; one-sided Mann-Whitney p = {:.4}",
                r.median_distance_top, r.median_distance_rest, r.test.p_value
            );
            &["report.json", "mse.csv"]
        }
    };
    for f in outputs {
        m.output(&dir.join(f));
    }
    m.setting("experiment", format!("{:?}", a.name));
    finish(m, &dir, exit::OK)
}
