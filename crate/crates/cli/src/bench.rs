//! Multi-seed comparison over (shared fraction, confounding mode, dropout,
//! seed, method). Results go to a long-format TSV that is appended after every
//! cell, so an interrupted run resumes where it stopped.

use std::collections::{BTreeSet, HashMap};
use std::io::Write as _;

use anyhow::{bail, Context};
use cimla::evaluation::{
    combine_rankings, evaluate, f1_at_fraction, median, universe, CombineMode, EdgeKey, RankedEdgeList,
};
use cimla::models::{ModelKind, RandomForest};
use cimla::pipeline::{run_cimla, CimlaConfig};
use cimla::simulator::{simulate_dataset, ConfoundingMode, DgrnTruth};
use cimla::RngSeed;

use crate::commands::{baseline_scores, BaselineMethod, LoadedData};
use crate::config::RunConfig;
use crate::manifest::Manifest;

pub const RESULTS_FILE: &str = "results.tsv";
const HEADER: &str = "shared_fraction\tconfounding\tdropout\tseed\tmethod\tn_positive\tauroc\tauprc\tnormalized_auprc\tmedian_gene_auroc\tmedian_gene_normalized_auprc\tf1_top";

pub const METHODS: [&str; 8] = [
    "cimla-forest",
    "cimla-mlp",
    "cimla-union",
    "cimla-intersection",
    "zscore-p",
    "zscore-s",
    "dcorr",
    "genie3-diff",
];

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub shared_fraction: f64,
    pub confounding: String,
    pub dropout: f64,
    pub seed: u64,
    pub method: String,
    pub n_positive: usize,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub normalized_auprc: Option<f64>,
    pub median_gene_auroc: Option<f64>,
    pub median_gene_normalized_auprc: Option<f64>,
    pub f1_top: Option<f64>,
}

type CellKey = (String, String, String, u64, String);

impl BenchRow {
    fn key(&self) -> CellKey {
        (
            self.shared_fraction.to_string(),
            self.confounding.clone(),
            self.dropout.to_string(),
            self.seed,
            self.method.clone(),
        )
    }

    pub fn to_tsv_line(&self) -> String {
        let o = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.shared_fraction,
            self.confounding,
            self.dropout,
            self.seed,
            self.method,
            self.n_positive,
            o(self.auroc),
            o(self.auprc),
            o(self.normalized_auprc),
            o(self.median_gene_auroc),
            o(self.median_gene_normalized_auprc),
            o(self.f1_top)
        )
    }

    pub fn parse(line: &str) -> anyhow::Result<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 12 {
            bail!("expected 12 columns, found {}", f.len());
        }
        let o = |s: &str| -> anyhow::Result<Option<f64>> { Ok(if s == "NA" { None } else { Some(s.parse()?) }) };
        Ok(BenchRow {
            shared_fraction: f[0].parse()?,
            confounding: f[1].into(),
            dropout: f[2].parse()?,
            seed: f[3].parse()?,
            method: f[4].into(),
            n_positive: f[5].parse()?,
            auroc: o(f[6])?,
            auprc: o(f[7])?,
            normalized_auprc: o(f[8])?,
            median_gene_auroc: o(f[9])?,
            median_gene_normalized_auprc: o(f[10])?,
            f1_top: o(f[11])?,
        })
    }
}

pub fn read_results(path: &std::path::Path) -> anyhow::Result<Vec<BenchRow>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        bail!("{}: unexpected header", path.display());
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| BenchRow::parse(l).with_context(|| format!("{} line {}", path.display(), i + 2)))
        .collect()
}

fn confounding(cfg: &RunConfig, name: &str) -> anyhow::Result<ConfoundingMode> {
    if cfg.simulation.confounding.name() == name {
        return Ok(cfg.simulation.confounding.clone());
    }
    match name {
        "low" => Ok(ConfoundingMode::low()),
        "high" => Ok(ConfoundingMode::high()),
        _ => bail!("unknown confounding mode {name:?} (expected low or high)"),
    }
}

/// CIMLA settings for one model kind. Rankings ignore the background
/// threshold, so the shuffled reruns are skipped.
fn cimla_config(cfg: &RunConfig, kind: ModelKind) -> CimlaConfig {
    let base = match kind {
        ModelKind::Forest => cfg.cimla.clone(),
        ModelKind::Mlp => cfg.bench.mlp.clone().unwrap_or_else(|| cfg.cimla.clone()),
    };
    CimlaConfig {
        model: kind,
        n_shuffles: 0,
        ..base
    }
}

struct Cell<'a> {
    cfg: &'a RunConfig,
    data: LoadedData,
    truth: DgrnTruth,
    universe: Vec<EdgeKey>,
    seed: RngSeed,
    rankings: HashMap<&'static str, RankedEdgeList>,
    forests: HashMap<String, (RandomForest, RandomForest)>,
    keep_forests: bool,
}

impl Cell<'_> {
    fn cimla(&mut self, kind: ModelKind) -> anyhow::Result<&RankedEdgeList> {
        let name = crate::commands::method_name(kind);
        if !self.rankings.contains_key(name) {
            let c = cimla_config(self.cfg, kind);
            let keep = self.keep_forests && kind == ModelKind::Forest;
            let run = run_cimla(
                &self.data.case,
                &self.data.control,
                &self.data.tfs,
                Some(&self.data.targets),
                &c,
                self.seed.derive(name),
                self.cfg.workers,
                keep,
            )?;
            for (g, a, b) in run.models {
                if let (Some(a), Some(b)) = (a.as_forest(), b.as_forest()) {
                    self.forests.insert(g, (a.clone(), b.clone()));
                }
            }
            self.rankings
                .insert(name, run.table.ranking(self.cfg.evaluation.ranking)?);
        }
        Ok(&self.rankings[name])
    }

    fn ranking(&mut self, method: &str) -> anyhow::Result<RankedEdgeList> {
        match method {
            "cimla-forest" => Ok(self.cimla(ModelKind::Forest)?.clone()),
            "cimla-mlp" => Ok(self.cimla(ModelKind::Mlp)?.clone()),
            other => {
                let m = BaselineMethod::parse(other).with_context(|| format!("unknown bench method {other:?}"))?;
                if m == BaselineMethod::Genie3Diff && self.keep_forests {
                    self.cimla(ModelKind::Forest)?;
                }
                let forests = &self.forests;
                let scores = if m == BaselineMethod::Genie3Diff && !forests.is_empty() {
                    let cached = |g: &str| forests.get(g).cloned();
                    let params = self
                        .cfg
                        .cimla
                        .forest
                        .points()
                        .into_iter()
                        .next()
                        .context("empty forest grid")?;
                    cimla::baselines::genie3_diff_scores(
                        &self.data.case,
                        &self.data.control,
                        &self.data.tfs,
                        &self.data.targets,
                        &params,
                        self.seed.derive("genie3"),
                        &cached,
                    )?
                } else {
                    baseline_scores(&self.data, self.cfg, m, self.seed.derive("genie3"), None)?.0
                };
                Ok(RankedEdgeList::new(scores)?)
            }
        }
    }

    fn row(&mut self, method: &str, base: &BenchRow) -> anyhow::Result<BenchRow> {
        let positives: BTreeSet<EdgeKey> = self
            .universe
            .iter()
            .filter(|k| self.truth.contains(&k.0, &k.1))
            .cloned()
            .collect();
        let mut row = BenchRow {
            method: method.into(),
            n_positive: positives.len(),
            ..base.clone()
        };
        let frac = self.cfg.evaluation.top_fraction;
        let combine = match method {
            "cimla-union" => Some(CombineMode::Union),
            "cimla-intersection" => Some(CombineMode::Intersection),
            _ => None,
        };
        if let Some(mode) = combine {
            let a = self.cimla(ModelKind::Forest)?.clone();
            let b = self.cimla(ModelKind::Mlp)?.clone();
            row.f1_top = Some(f1_at_fraction(&combine_rankings(&a, &b, frac, mode), &positives));
            return Ok(row);
        }
        let ranking = self.ranking(method)?;
        if positives.is_empty() {
            return Ok(row);
        }
        let rep = evaluate(&ranking, &self.truth, &self.universe, frac, None)?;
        row.auroc = Some(rep.auroc);
        row.auprc = Some(rep.auprc);
        row.normalized_auprc = Some(rep.normalized_auprc);
        row.median_gene_auroc = rep.median_gene_auroc;
        row.median_gene_normalized_auprc = median(
            &rep.per_gene
                .iter()
                .filter_map(|g| g.normalized_auprc)
                .collect::<Vec<_>>(),
        );
        row.f1_top = Some(rep.f1_at_fraction);
        Ok(row)
    }
}

pub fn cmd_bench(cfg: &RunConfig) -> anyhow::Result<Vec<BenchRow>> {
    let base = RngSeed(cfg.seed()?);
    let b = &cfg.bench;
    if let Some(m) = b.methods.iter().find(|m| !METHODS.contains(&m.as_str())) {
        bail!("unknown bench method {m:?}; expected one of {}", METHODS.join(", "));
    }
    std::fs::create_dir_all(&cfg.out)?;
    let path = cfg.out.join(RESULTS_FILE);
    let mut rows = if path.exists() {
        read_results(&path)?
    } else {
        Vec::new()
    };
    let done: BTreeSet<CellKey> = rows.iter().map(BenchRow::key).collect();
    let mut file = std::fs::OpenOptions::new().create(true).append(true).open(&path)?;
    if rows.is_empty() && std::fs::metadata(&path)?.len() == 0 {
        writeln!(file, "{HEADER}")?;
    }
    let mut skipped = 0;
    for &frac in &b.shared_fractions {
        for mode in &b.confounding {
            for &seed in &b.seeds {
                let template = |dropout: f64| BenchRow {
                    shared_fraction: frac,
                    confounding: mode.clone(),
                    dropout,
                    seed,
                    method: String::new(),
                    n_positive: 0,
                    auroc: None,
                    auprc: None,
                    normalized_auprc: None,
                    median_gene_auroc: None,
                    median_gene_normalized_auprc: None,
                    f1_top: None,
                };
                let pending: Vec<(f64, &String)> = b
                    .dropout
                    .iter()
                    .flat_map(|&d| b.methods.iter().map(move |m| (d, m)))
                    .filter(|(d, m)| {
                        let k = BenchRow {
                            method: (*m).clone(),
                            ..template(*d)
                        }
                        .key();
                        !done.contains(&k)
                    })
                    .collect();
                skipped += b.dropout.len() * b.methods.len() - pending.len();
                if pending.is_empty() {
                    continue;
                }
                // the clean dataset depends on the seed only, so fractions and
                // modes share their reference network
                let data_seed = base.derive_index("bench", seed);
                let mut spec = cfg.simulation.clone();
                spec.shared_fraction = frac;
                spec.confounding = confounding(cfg, mode)?;
                spec.dropout = 0.0;
                let clean = simulate_dataset(&spec, data_seed)
                    .with_context(|| format!("simulating fraction {frac}, {mode} confounding, seed {seed}"))?;
                for &d in &b.dropout {
                    let methods: Vec<&String> = pending.iter().filter(|(pd, _)| *pd == d).map(|(_, m)| *m).collect();
                    if methods.is_empty() {
                        continue;
                    }
                    let ds = if d > 0.0 {
                        clean.with_dropout(d, spec.dropout_shape, data_seed.derive(&format!("dropout/{d}")))?
                    } else {
                        clean.clone()
                    };
                    let targets = ds.case.gene_ids().to_vec();
                    let uni = universe(&ds.tfs, &targets);
                    let mut cell = Cell {
                        cfg,
                        data: LoadedData {
                            case: ds.case,
                            control: ds.control,
                            tfs: ds.tfs,
                            truth: None,
                            targets,
                        },
                        truth: ds.truth,
                        universe: uni,
                        seed: data_seed.derive(&format!("methods/{frac}/{mode}/{d}")),
                        rankings: HashMap::new(),
                        forests: HashMap::new(),
                        keep_forests: methods.iter().any(|m| *m == "genie3-diff")
                            && methods.iter().any(|m| m.starts_with("cimla")),
                    };
                    for m in methods {
                        let row = cell.row(m, &template(d))?;
                        log::info!("bench {}", row.to_tsv_line());
                        writeln!(file, "{}", row.to_tsv_line())?;
                        file.flush()?;
                        rows.push(row);
                    }
                }
            }
        }
    }
    let mut m = Manifest::new("bench", cfg);
    m.output(RESULTS_FILE);
    m.note("rows", rows.len());
    m.note("cells_skipped_as_done", skipped);
    m.write(&cfg.out)?;
    Ok(rows)
}
