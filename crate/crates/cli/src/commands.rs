use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use cimla::baselines::{correlation_tables, delta_correlation, genie3_diff_scores, zscore_diff, CorrelationMethod};
use cimla::data::{Condition, ExpressionMatrix, TfList};
use cimla::evaluation::{evaluate, pr_svg, roc_svg, universe, EdgeKey, RankedEdgeList, ScoredEdge};
use cimla::models::{load_model, save_model, Model, ModelKind, RandomForest};
use cimla::oracle::{builtin_fixtures, read_fixture, run_fixture, CheckOutcome, Fixture};
use cimla::pipeline::run_cimla;
use cimla::simulator::{simulate_dataset, DgrnTruth, Grn};
use cimla::RngSeed;

use crate::config::RunConfig;
use crate::manifest::Manifest;

pub struct LoadedData {
    pub case: ExpressionMatrix,
    pub control: ExpressionMatrix,
    pub tfs: TfList,
    pub truth: Option<DgrnTruth>,
    pub targets: Vec<String>,
}

pub fn load_data(cfg: &RunConfig) -> anyhow::Result<LoadedData> {
    let case = ExpressionMatrix::read_tsv(cfg.data.case_path()?, Condition::Case)?;
    let control = ExpressionMatrix::read_tsv(cfg.data.control_path()?, Condition::Control)?;
    if case.gene_ids() != control.gene_ids() {
        bail!("case and control matrices list different genes");
    }
    let tfs = match (&cfg.data.tfs, cfg.data.grn_paths()) {
        (Some(p), _) => TfList::read(p)?,
        (None, Some((a, b))) if a.exists() && b.exists() => {
            let mut regs: BTreeSet<String> = Grn::read_tsv(&a)?.regulators().into_iter().collect();
            regs.extend(Grn::read_tsv(&b)?.regulators());
            TfList::new(case.gene_ids().iter().filter(|g| regs.contains(*g)).cloned().collect())?
        }
        _ => bail!("no TF list: set data.tfs, or data.dir pointing at a simulated bundle"),
    };
    let truth = match cfg.data.truth_path() {
        Some(p) if p.exists() => Some(DgrnTruth::read_tsv(&p)?),
        _ => None,
    };
    let targets = cfg.data.targets.clone().unwrap_or_else(|| case.gene_ids().to_vec());
    Ok(LoadedData {
        case,
        control,
        tfs,
        truth,
        targets,
    })
}

fn ensure_out(cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    Ok(cfg.out.clone())
}

pub fn cmd_simulate(cfg: &RunConfig) -> anyhow::Result<Manifest> {
    let seed = cfg.seed()?;
    let ds = simulate_dataset(&cfg.simulation, RngSeed(seed)).context("simulation failed")?;
    let out = ensure_out(cfg)?;
    let mut m = Manifest::new("simulate", cfg);
    ds.case.write_tsv(out.join("case.tsv"))?;
    ds.control.write_tsv(out.join("control.tsv"))?;
    ds.grn_case.write_tsv(out.join("grn_case.tsv"))?;
    ds.grn_control.write_tsv(out.join("grn_control.tsv"))?;
    ds.truth.write_tsv(out.join("truth.tsv"))?;
    for f in [
        "case.tsv",
        "control.tsv",
        "grn_case.tsv",
        "grn_control.tsv",
        "truth.tsv",
    ] {
        m.output(f);
    }
    m.note("realized_shared_fraction", ds.truth.shared_fraction);
    m.note("differential_edges", ds.truth.len());
    m.note("tfs", ds.tfs.len());
    m.note("genes", ds.case.n_genes());
    m.write(&out)?;
    Ok(m)
}

pub fn method_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Forest => "cimla-forest",
        ModelKind::Mlp => "cimla-mlp",
    }
}

pub struct RunSummary {
    pub manifest: Manifest,
    pub ranking: RankedEdgeList,
    pub failures: usize,
}

pub fn cmd_run(cfg: &RunConfig, model: Option<ModelKind>) -> anyhow::Result<RunSummary> {
    let seed = cfg.seed()?;
    let mut cfg = cfg.clone();
    if let Some(k) = model {
        cfg.cimla.model = k;
    }
    let data = load_data(&cfg)?;
    let out = ensure_out(&cfg)?;
    let keep = cfg.run.cache_models;
    let run = run_cimla(
        &data.case,
        &data.control,
        &data.tfs,
        Some(&data.targets),
        &cfg.cimla,
        RngSeed(seed),
        cfg.workers,
        keep,
    )?;
    let mut m = Manifest::new("run", &cfg);
    run.table.write_tsv(out.join("scores.tsv"))?;
    m.output("scores.tsv");
    let ranking = run.table.ranking(cfg.evaluation.ranking)?;
    ranking.write(out.join("ranking.tsv"), method_name(cfg.cimla.model))?;
    m.output("ranking.tsv");

    let mut rep = String::from("gene\tr2_train_case\tr2_test_case\tr2_train_control\tr2_test_control\n");
    let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
    for r in &run.reports {
        rep.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.gene,
            r.case.r2_train,
            opt(r.case.r2_test),
            r.control.r2_train,
            opt(r.control.r2_test)
        ));
    }
    std::fs::write(out.join("reports.tsv"), rep)?;
    m.output("reports.tsv");

    if keep {
        let dir = out.join("models");
        std::fs::create_dir_all(&dir)?;
        for (gene, a, b) in &run.models {
            save_model(dir.join(format!("{gene}.case.json")), a, data.tfs.as_slice())?;
            save_model(dir.join(format!("{gene}.control.json")), b, data.tfs.as_slice())?;
        }
        m.output("models/");
    }
    for (g, e) in &run.failures {
        log::warn!("gene {g} failed: {e}");
    }
    m.note("genes_scored", run.reports.len());
    m.note("genes_failed", run.failures.len());
    m.note("genes_zero_variance", run.zero_variance.len());
    m.note("genes_gated", run.gated.len());
    m.note("edges_passing", run.table.n_passing());
    m.write(&out)?;
    Ok(RunSummary {
        manifest: m,
        ranking,
        failures: run.failures.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BaselineMethod {
    /// Fisher z-test on Pearson correlations.
    ZscoreP,
    /// Fisher z-test on Spearman correlations.
    ZscoreS,
    /// |r_case − r_control| of Pearson correlations.
    Dcorr,
    /// Change in forest feature importance.
    Genie3Diff,
}

impl BaselineMethod {
    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::ZscoreP => "zscore-p",
            BaselineMethod::ZscoreS => "zscore-s",
            BaselineMethod::Dcorr => "dcorr",
            BaselineMethod::Genie3Diff => "genie3-diff",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [Self::ZscoreP, Self::ZscoreS, Self::Dcorr, Self::Genie3Diff]
            .into_iter()
            .find(|m| m.name() == name)
    }
}

/// Scores from one baseline. `models_dir` may hold forests saved by `run`.
pub fn baseline_scores(
    data: &LoadedData,
    cfg: &RunConfig,
    method: BaselineMethod,
    seed: RngSeed,
    models_dir: Option<&Path>,
) -> anyhow::Result<(Vec<ScoredEdge>, usize)> {
    let table = |m| correlation_tables(&data.case, &data.control, &data.tfs, &data.targets, m);
    Ok(match method {
        BaselineMethod::ZscoreP => (zscore_diff(&table(CorrelationMethod::Pearson)?)?, 0),
        BaselineMethod::ZscoreS => (zscore_diff(&table(CorrelationMethod::Spearman)?)?, 0),
        BaselineMethod::Dcorr => (delta_correlation(&table(CorrelationMethod::Pearson)?), 0),
        BaselineMethod::Genie3Diff => {
            let params = cfg
                .cimla
                .forest
                .points()
                .into_iter()
                .next()
                .context("empty forest grid")?;
            let hits = std::cell::Cell::new(0usize);
            let n_tfs = data.tfs.len();
            let cached = |gene: &str| -> Option<(RandomForest, RandomForest)> {
                let dir = models_dir?;
                let load = |label: &str| match load_model(dir.join(format!("{gene}.{label}.json"))) {
                    Ok((Model::Forest(f), names)) if f.n_features == n_tfs && names == data.tfs.as_slice() => Some(f),
                    _ => None,
                };
                let pair = (load("case")?, load("control")?);
                hits.set(hits.get() + 1);
                Some(pair)
            };
            let scores = genie3_diff_scores(
                &data.case,
                &data.control,
                &data.tfs,
                &data.targets,
                &params,
                seed,
                &cached,
            )?;
            (scores, hits.get())
        }
    })
}

pub struct BaselineSummary {
    pub ranking: RankedEdgeList,
    pub cache_hits: usize,
    pub file: PathBuf,
}

pub fn cmd_baseline(cfg: &RunConfig, method: BaselineMethod) -> anyhow::Result<BaselineSummary> {
    let seed = cfg.seed()?;
    let data = load_data(cfg)?;
    let out = ensure_out(cfg)?;
    let models = out.join("models");
    let (scores, hits) = baseline_scores(
        &data,
        cfg,
        method,
        RngSeed(seed).derive("genie3"),
        models.is_dir().then_some(models.as_path()),
    )?;
    let ranking = RankedEdgeList::new(scores)?;
    let name = format!("baseline_{}.tsv", method.name());
    let file = out.join(&name);
    ranking.write(&file, method.name())?;
    let mut m = Manifest::new(&format!("baseline {}", method.name()), cfg);
    m.output(&name);
    m.note("cached_models_used", hits);
    write_side_manifest(&m, &out, &format!("manifest_baseline_{}.toml", method.name()))?;
    Ok(BaselineSummary {
        ranking,
        cache_hits: hits,
        file,
    })
}

fn write_side_manifest(m: &Manifest, dir: &Path, name: &str) -> anyhow::Result<()> {
    let text = toml::to_string(m)?;
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

pub struct EvalOptions {
    pub ranking: PathBuf,
    pub truth: Option<PathBuf>,
    pub per_gene: bool,
    pub plots: bool,
}

#[derive(Debug)]
pub struct EvalSummary {
    pub report: cimla::evaluation::EvalReport,
    pub files: Vec<PathBuf>,
}

pub fn cmd_eval(cfg: &RunConfig, opts: &EvalOptions) -> anyhow::Result<EvalSummary> {
    let ranking = RankedEdgeList::read(&opts.ranking)?;
    let truth_path = opts
        .truth
        .clone()
        .or_else(|| cfg.data.truth_path())
        .context("no truth file: pass --truth or set data.truth")?;
    let truth = DgrnTruth::read_tsv(&truth_path)?;
    // Universe and co-expression strata come from the data when it is configured.
    let data = load_data(cfg).ok();
    let uni: Vec<EdgeKey> = match &data {
        Some(d) => universe(&d.tfs, &d.targets),
        None => {
            let tfs: BTreeSet<&str> = ranking.edges().iter().map(|e| e.tf.as_str()).collect();
            let genes: BTreeSet<&str> = ranking.edges().iter().map(|e| e.gene.as_str()).collect();
            tfs.iter()
                .flat_map(|t| {
                    genes
                        .iter()
                        .filter(move |g| *g != t)
                        .map(move |g| (t.to_string(), g.to_string()))
                })
                .collect()
        }
    };
    let dcorr: Option<HashMap<EdgeKey, f64>> = match &data {
        Some(d) => {
            let table = correlation_tables(&d.case, &d.control, &d.tfs, &d.targets, CorrelationMethod::Pearson)?;
            Some(
                delta_correlation(&table)
                    .into_iter()
                    .map(|e| (e.key(), e.score))
                    .collect(),
            )
        }
        None => None,
    };
    let ev = &cfg.evaluation;
    let report = evaluate(
        &ranking,
        &truth,
        &uni,
        ev.top_fraction,
        dcorr.as_ref().map(|d| (d, ev.top_fraction, ev.dcorr_cutoff)),
    )?;
    let out = ensure_out(cfg)?;
    let stem = opts
        .ranking
        .file_stem()
        .map_or_else(|| "ranking".into(), |s| s.to_string_lossy().into_owned());
    let mut files = vec![out.join(format!("eval_{stem}.txt"))];
    std::fs::write(&files[0], report.to_text())?;
    if opts.per_gene || ev.per_gene {
        let p = out.join(format!("per_gene_{stem}.tsv"));
        std::fs::write(&p, report.per_gene_tsv())?;
        files.push(p);
    }
    if opts.plots || ev.plots {
        let p = out.join(format!("roc_{stem}.svg"));
        std::fs::write(&p, roc_svg(&ranking, &truth, &uni)?)?;
        files.push(p);
        let p = out.join(format!("pr_{stem}.svg"));
        std::fs::write(&p, pr_svg(&ranking, &truth, &uni)?)?;
        files.push(p);
    }
    Ok(EvalSummary { report, files })
}

pub struct OracleReport {
    pub lines: Vec<String>,
    pub all_as_expected: bool,
}

/// Runs the fixture corpus (built-in or a directory of `.scm` files) plus the
/// randomized lemma and equivalence suites.
pub fn cmd_oracle_verify(fixtures: Option<&Path>, n_random: usize, seed: u64) -> anyhow::Result<OracleReport> {
    use cimla::oracle::{linear_scm, lte_marginal_vs_shapley, random_conforming_scm, verify_lemma1, verify_lemma2};
    use rand::Rng as _;

    let corpus: Vec<Fixture> = match fixtures {
        Some(dir) => {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
                .with_context(|| format!("reading {}", dir.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "scm"))
                .collect();
            paths.sort();
            paths.iter().map(read_fixture).collect::<Result<_, _>>()?
        }
        None => builtin_fixtures()?,
    };
    let mut lines = vec!["fixture\tcheck\texpect\tmax_deviation\tlicensed\tstatus".to_string()];
    let mut ok = true;
    for f in &corpus {
        for o in run_fixture(f)? {
            ok &= o.as_expected;
            lines.push(outcome_line(&o));
        }
    }
    let mut suite = |name: &str, devs: Vec<(bool, f64)>| {
        let worst = devs.iter().map(|d| d.1).fold(0.0, f64::max);
        let passed = devs.iter().filter(|d| d.0).count();
        ok &= passed == devs.len();
        lines.push(format!(
            "random\t{name} x{}\tpass\t{worst:e}\t-\t{}",
            devs.len(),
            if passed == devs.len() { "ok" } else { "UNEXPECTED" }
        ));
    };
    let base = RngSeed(seed);
    let mut l1 = Vec::new();
    let mut l2 = Vec::new();
    for k in 0..n_random as u64 {
        let inst = random_conforming_scm(3, 2, 0.4, base.derive_index("lemma", k))?;
        let c1 = verify_lemma1(&inst.scm, &inst.i, &inst.a_refs())?;
        let c2 = verify_lemma2(&inst.scm, &inst.t_refs())?;
        l1.push((c1.holds, c1.max_deviation));
        l2.push((c2.holds, c2.max_deviation));
    }
    suite("lemma1", l1);
    suite("lemma2", l2);
    let mut eq = Vec::new();
    for k in 0..20u64 {
        let s = base.derive_index("equivalence", k);
        let m = 1 + (k as usize % 3);
        let mut rng = s.rng();
        let w: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x: Vec<f64> = (0..m).map(|_| [-1.0, 0.0, 1.0][rng.random_range(0..3)]).collect();
        let rec = lte_marginal_vs_shapley(&linear_scm(&w, k % 2 == 1)?, &x)?;
        eq.push((rec.max_abs_deviation < 1e-6, rec.max_abs_deviation));
    }
    suite("lte-vs-shapley", eq);
    Ok(OracleReport {
        lines,
        all_as_expected: ok,
    })
}

fn outcome_line(o: &CheckOutcome) -> String {
    let dev = o
        .result
        .map_or_else(|| "-".to_string(), |r| format!("{:e}", r.max_deviation));
    let lic = o.licensed.map_or_else(|| "-".to_string(), |l| l.to_string());
    let expect = match o.expect {
        cimla::oracle::Expectation::Pass => "pass",
        cimla::oracle::Expectation::Fail => "fail",
    };
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}",
        o.fixture,
        o.check,
        expect,
        dev,
        lic,
        if o.as_expected { "ok" } else { "UNEXPECTED" }
    )
}
