//! The per-gene CIMLA run: split, standardize, fit one model per condition,
//! attribute case samples under both models, aggregate the changes.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::attribution::{attribute_dataset, AttributionConfig, BackgroundSet};
use crate::data::{
    decorrelate_self_feature, shuffle_condition_labels, split_indices, ExpressionMatrix, Standardization, TfList,
};
use crate::differential::{local_delta, Aggregation, CimlaScoreTable};
use crate::error::{Error, Result};
use crate::models::{fit_forest, fit_mlp, r_squared, ForestGrid, MlpParams, Model, ModelKind, Regressor, TrainReport};
use crate::rng::RngSeed;

/// Which samples Δ is averaged over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    /// Training split of the case condition.
    #[default]
    CaseTrain,
    /// All case cells (training and test).
    CaseAll,
    /// Training splits of both conditions (experimental).
    BothTrain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CimlaConfig {
    pub model: ModelKind,
    pub forest: ForestGrid,
    pub cv_folds: usize,
    pub mlp: MlpParams,
    pub attribution: AttributionConfig,
    pub train_fraction: f64,
    pub samples: SampleSource,
    /// Random fraction of the chosen samples that is attributed.
    pub sample_fraction: f64,
    pub max_samples: Option<usize>,
    pub aggregation: Aggregation,
    /// Label-shuffled reruns for the background threshold; 0 disables it.
    pub n_shuffles: usize,
    /// Keep only genes whose train and test R² reach this in both conditions.
    pub r2_gate: Option<f64>,
}

impl Default for CimlaConfig {
    fn default() -> Self {
        CimlaConfig {
            model: ModelKind::Forest,
            forest: ForestGrid::default(),
            cv_folds: 3,
            mlp: MlpParams::two_layer(),
            attribution: AttributionConfig::default(),
            train_fraction: 0.8,
            samples: SampleSource::CaseTrain,
            sample_fraction: 1.0,
            max_samples: None,
            aggregation: Aggregation::Rms,
            n_shuffles: 1,
            r2_gate: None,
        }
    }
}

/// Train/test splits of both conditions, standardized with training statistics.
pub struct Prepared {
    pub case_train: ExpressionMatrix,
    pub case_test: ExpressionMatrix,
    pub control_train: ExpressionMatrix,
    pub control_test: ExpressionMatrix,
    /// Genes with zero training variance in either condition.
    pub zero_variance: BTreeSet<String>,
}

fn split_standardize(
    m: &ExpressionMatrix,
    frac: f64,
    seed: RngSeed,
) -> Result<(ExpressionMatrix, ExpressionMatrix, Standardization)> {
    let (train, test) = split_indices(m.n_cells(), frac, seed)?;
    let (train, test) = (m.select_cells(&train), m.select_cells(&test));
    let st = Standardization::fit(train.values());
    Ok((
        train.with_values(st.apply(train.values()))?,
        test.with_values(st.apply(test.values()))?,
        st,
    ))
}

pub fn prepare(
    case: &ExpressionMatrix,
    control: &ExpressionMatrix,
    train_fraction: f64,
    seed: RngSeed,
) -> Result<Prepared> {
    if case.gene_ids() != control.gene_ids() {
        return Err(Error::invalid("case and control matrices have different gene lists"));
    }
    let (case_train, case_test, s1) = split_standardize(case, train_fraction, seed.derive("split/case"))?;
    let (control_train, control_test, s0) = split_standardize(control, train_fraction, seed.derive("split/control"))?;
    let zero_variance = s1
        .flagged()
        .chain(s0.flagged())
        .map(|g| case.gene_ids()[g].clone())
        .collect();
    Ok(Prepared {
        case_train,
        case_test,
        control_train,
        control_test,
        zero_variance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneReport {
    pub gene: String,
    pub case: TrainReport,
    pub control: TrainReport,
}

impl GeneReport {
    pub fn passes_gate(&self, gate: f64) -> bool {
        [&self.case, &self.control]
            .iter()
            .all(|r| r.r2_train >= gate && r.r2_test.is_some_and(|t| t >= gate))
    }
}

pub struct GeneOutcome {
    /// (TF, Λ) for every TF except the gene itself.
    pub scores: Vec<(String, f64)>,
    pub report: GeneReport,
    pub models: Option<(Model, Model)>,
}

pub fn fit_model(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    config: &CimlaConfig,
    seed: RngSeed,
) -> Result<(Model, TrainReport)> {
    match config.model {
        ModelKind::Forest => {
            let (f, r) = fit_forest(x, y, &config.forest, config.cv_folds, seed)?;
            Ok((Model::Forest(f), r))
        }
        ModelKind::Mlp => {
            let (m, r, _) = fit_mlp(x, y, &config.mlp, seed)?;
            Ok((Model::Mlp(m), r))
        }
    }
}

fn pick_rows(n: usize, fraction: f64, max: Option<usize>, seed: RngSeed) -> Vec<usize> {
    let k = ((n as f64 * fraction).round() as usize).clamp(1, n);
    let k = max.map_or(k, |m| k.min(m.max(1)));
    if k == n {
        return (0..n).collect();
    }
    let mut idx = rand::seq::index::sample(&mut seed.rng(), n, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Features (self column shuffled) and standardized target for one split.
fn gene_design(
    m: &ExpressionMatrix,
    tfs: &TfList,
    gene: &str,
    seed: RngSeed,
) -> Result<(Array2<f64>, ndarray::Array1<f64>)> {
    let (x, y) = m.design(tfs, gene)?;
    Ok((decorrelate_self_feature(&x, tfs, gene, seed), y))
}

pub fn run_gene(
    prep: &Prepared,
    tfs: &TfList,
    gene: &str,
    config: &CimlaConfig,
    seed: RngSeed,
    keep_models: bool,
) -> Result<GeneOutcome> {
    let (x1, y1) = gene_design(&prep.case_train, tfs, gene, seed.derive("self/case"))?;
    let (x0, y0) = gene_design(&prep.control_train, tfs, gene, seed.derive("self/control"))?;
    let (t1, u1) = gene_design(&prep.case_test, tfs, gene, seed.derive("self/case-test"))?;
    let (t0, u0) = gene_design(&prep.control_test, tfs, gene, seed.derive("self/control-test"))?;

    let (f1, mut r1) = fit_model(x1.view(), y1.view(), config, seed.derive("fit/case"))?;
    let (f0, mut r0) = fit_model(x0.view(), y0.view(), config, seed.derive("fit/control"))?;
    r1.r2_test = r_squared(&u1.to_vec(), &f1.predict(t1.view())?).ok();
    r0.r2_test = r_squared(&u0.to_vec(), &f0.predict(t0.view())?).ok();

    let pool = match config.samples {
        SampleSource::CaseTrain => x1.clone(),
        SampleSource::CaseAll => {
            ndarray::concatenate(Axis(0), &[x1.view(), t1.view()]).map_err(|e| Error::invalid(e.to_string()))?
        }
        SampleSource::BothTrain => {
            ndarray::concatenate(Axis(0), &[x1.view(), x0.view()]).map_err(|e| Error::invalid(e.to_string()))?
        }
    };
    let rows = pick_rows(
        pool.nrows(),
        config.sample_fraction,
        config.max_samples,
        seed.derive("samples"),
    );
    let samples = pool.select(Axis(0), &rows);

    let bsize = config.attribution.background_size;
    let b1 = BackgroundSet::subsample(x1.view(), bsize, seed.derive("background/case"))?;
    let b0 = BackgroundSet::subsample(x0.view(), bsize, seed.derive("background/control"))?;
    let a1 = attribute_dataset(&f1, samples.view(), &b1, &config.attribution, seed.derive("attr/case"))?;
    let a0 = attribute_dataset(
        &f0,
        samples.view(),
        &b0,
        &config.attribution,
        seed.derive("attr/control"),
    )?;
    let delta = local_delta(a1.values.view(), a0.values.view())?;
    let lambda = config.aggregation.apply(delta.view());

    let scores = tfs
        .iter()
        .zip(lambda)
        .filter(|(tf, _)| tf.as_str() != gene)
        .map(|(tf, l)| (tf.clone(), l))
        .collect();
    Ok(GeneOutcome {
        scores,
        report: GeneReport {
            gene: gene.to_string(),
            case: r1,
            control: r0,
        },
        models: keep_models.then_some((f1, f0)),
    })
}

/// Runs `f` over `items` on a pool of `workers` threads (0 = default),
/// returning results in input order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let mut b = rayon::ThreadPoolBuilder::new();
        if workers > 0 {
            b = b.num_threads(workers);
        }
        match b.build() {
            Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            Err(_) => items.iter().map(f).collect(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        items.iter().map(f).collect()
    }
}

fn run_genes(
    prep: &Prepared,
    tfs: &TfList,
    targets: &[String],
    config: &CimlaConfig,
    seed: RngSeed,
    workers: usize,
    keep_models: bool,
) -> Vec<Result<GeneOutcome>> {
    parallel_map(targets, workers, |gene| {
        run_gene(
            prep,
            tfs,
            gene,
            config,
            seed.derive(&format!("gene/{gene}")),
            keep_models,
        )
    })
}

#[derive(Default)]
pub struct CimlaRun {
    pub table: CimlaScoreTable,
    pub reports: Vec<GeneReport>,
    /// (gene, error message) for genes that failed and were skipped.
    pub failures: Vec<(String, String)>,
    pub zero_variance: Vec<String>,
    /// Genes dropped by the R² gate.
    pub gated: Vec<String>,
    pub thresholds: Option<BTreeMap<String, f64>>,
    pub models: Vec<(String, Model, Model)>,
}

/// Per-gene maximum Λ over all TFs (and shuffles) after reassigning cells to
/// conditions at random.
#[allow(clippy::too_many_arguments)]
pub fn background_threshold(
    case: &ExpressionMatrix,
    control: &ExpressionMatrix,
    tfs: &TfList,
    targets: &[String],
    config: &CimlaConfig,
    n_shuffles: usize,
    seed: RngSeed,
    workers: usize,
) -> Result<BTreeMap<String, std::result::Result<f64, String>>> {
    if n_shuffles == 0 {
        return Err(Error::invalid("background threshold needs at least one shuffle"));
    }
    let mut out: BTreeMap<String, std::result::Result<f64, String>> =
        targets.iter().map(|g| (g.clone(), Ok(0.0))).collect();
    for s in 0..n_shuffles {
        let (c, d) = shuffle_condition_labels(case, control, seed.derive_index("shuffle", s as u64))?;
        let prep = prepare(
            &c,
            &d,
            config.train_fraction,
            seed.derive_index("shuffle/prepare", s as u64),
        )?;
        let results = run_genes(
            &prep,
            tfs,
            targets,
            config,
            seed.derive_index("shuffle/run", s as u64),
            workers,
            false,
        );
        for (g, r) in targets.iter().zip(results) {
            let slot = out.get_mut(g).expect("seeded");
            match (r, slot.as_mut()) {
                (Ok(o), Ok(best)) => {
                    for (_, l) in o.scores {
                        *best = best.max(l);
                    }
                }
                (Err(e), Ok(_)) => *slot = Err(e.to_string()),
                (_, Err(_)) => {}
            }
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub fn run_cimla(
    case: &ExpressionMatrix,
    control: &ExpressionMatrix,
    tfs: &TfList,
    targets: Option<&[String]>,
    config: &CimlaConfig,
    seed: RngSeed,
    workers: usize,
    keep_models: bool,
) -> Result<CimlaRun> {
    tfs.check_against(case)?;
    tfs.check_against(control)?;
    let prep = prepare(case, control, config.train_fraction, seed.derive("prepare"))?;
    let requested: Vec<String> = match targets {
        Some(t) => {
            if let Some(g) = t.iter().find(|g| case.gene_position(g).is_none()) {
                return Err(Error::invalid(format!("target gene {g} not in the expression data")));
            }
            t.to_vec()
        }
        None => case.gene_ids().to_vec(),
    };
    let (genes, zero_variance): (Vec<String>, Vec<String>) =
        requested.into_iter().partition(|g| !prep.zero_variance.contains(g));

    let mut run = CimlaRun {
        zero_variance,
        ..Default::default()
    };
    let mut scores = BTreeMap::new();
    for (gene, r) in genes.iter().zip(run_genes(
        &prep,
        tfs,
        &genes,
        config,
        seed.derive("run"),
        workers,
        keep_models,
    )) {
        match r {
            Ok(o) => {
                if config.r2_gate.is_some_and(|g| !o.report.passes_gate(g)) {
                    run.gated.push(gene.clone());
                    continue;
                }
                scores.insert(gene.clone(), o.scores);
                run.reports.push(o.report);
                if let Some((a, b)) = o.models {
                    run.models.push((gene.clone(), a, b));
                }
            }
            Err(e) => {
                log::warn!("gene {gene} skipped: {e}");
                run.failures.push((gene.clone(), e.to_string()));
            }
        }
    }
    if scores.is_empty() && !genes.is_empty() && run.gated.is_empty() {
        return Err(Error::Training(format!("all {} target genes failed", genes.len())));
    }
    if config.n_shuffles > 0 {
        let kept: Vec<String> = scores.keys().cloned().collect();
        let bg = background_threshold(
            case,
            control,
            tfs,
            &kept,
            config,
            config.n_shuffles,
            seed.derive("background"),
            workers,
        )?;
        let mut th = BTreeMap::new();
        for (g, r) in bg {
            match r {
                Ok(v) => {
                    th.insert(g, v);
                }
                Err(e) => {
                    log::warn!("gene {g} skipped: background run failed: {e}");
                    scores.remove(&g);
                    run.reports.retain(|r| r.gene != g);
                    run.models.retain(|m| m.0 != g);
                    run.failures.push((g, format!("background run: {e}")));
                }
            }
        }
        run.table = CimlaScoreTable::build(&scores, Some(&th), tfs.len())?;
        run.thresholds = Some(th);
    } else {
        run.table = CimlaScoreTable::build(&scores, None, tfs.len())?;
    }
    Ok(run)
}
