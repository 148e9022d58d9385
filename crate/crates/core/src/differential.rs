//! Per-sample attribution changes, their aggregation into a per-(TF, gene)
//! score, and rank-derived dGRN scores.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{RankedEdgeList, ScoredEdge};

/// Δ = φ(f₁, x) − φ(f₀, x), same samples and TF order on both sides.
pub fn local_delta(case: ArrayView2<'_, f64>, control: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if case.dim() != control.dim() {
        return Err(Error::invalid(format!(
            "attribution shapes differ: {:?} vs {:?}",
            case.dim(),
            control.dim()
        )));
    }
    Ok(&case - &control)
}

/// Root mean square over samples, per column.
pub fn aggregate_rms(deltas: ArrayView2<'_, f64>) -> Vec<f64> {
    let n = deltas.nrows().max(1) as f64;
    deltas
        .columns()
        .into_iter()
        .map(|c| (c.iter().map(|v| v * v).sum::<f64>() / n).sqrt())
        .collect()
}

/// Mean absolute value over samples, per column.
pub fn aggregate_mean_abs(deltas: ArrayView2<'_, f64>) -> Vec<f64> {
    let n = deltas.nrows().max(1) as f64;
    deltas
        .columns()
        .into_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>() / n)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Rms,
    MeanAbs,
}

impl Aggregation {
    pub fn apply(self, deltas: ArrayView2<'_, f64>) -> Vec<f64> {
        match self {
            Aggregation::Rms => aggregate_rms(deltas),
            Aggregation::MeanAbs => aggregate_mean_abs(deltas),
        }
    }
}

/// −ln(r / n_tfs).
pub fn dgrn_score(rank: usize, n_tfs: usize) -> Result<f64> {
    if rank == 0 || rank > n_tfs {
        return Err(Error::invalid(format!("rank {rank} outside 1..={n_tfs}")));
    }
    Ok(-(rank as f64 / n_tfs as f64).ln())
}

/// 1-based ranks by descending score, ties broken by id.
pub fn rank_descending(ids: &[&str], scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| ids[a].cmp(ids[b])));
    let mut ranks = vec![0; scores.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r + 1;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub tf: String,
    pub gene: String,
    pub lambda: f64,
    pub background_max: Option<f64>,
    pub pass: bool,
    pub rank: usize,
    pub dgrn_score: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankingMode {
    /// Λ compared across all pairs.
    Global,
    /// −ln(rank / |TFs|) from the within-gene rank.
    PerGene,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CimlaScoreTable {
    pub rows: Vec<ScoreRow>,
    pub n_tfs: usize,
}

impl CimlaScoreTable {
    /// `scores[gene] = [(tf, Λ)]`; `thresholds[gene]` is the background maximum.
    /// Without a threshold every edge passes.
    pub fn build(
        scores: &BTreeMap<String, Vec<(String, f64)>>,
        thresholds: Option<&BTreeMap<String, f64>>,
        n_tfs: usize,
    ) -> Result<Self> {
        let mut rows = Vec::new();
        for (gene, tf_scores) in scores {
            if let Some((tf, l)) = tf_scores.iter().find(|(_, l)| !(l.is_finite() && *l >= 0.0)) {
                return Err(Error::invalid(format!("invalid score {l} for {tf} -> {gene}")));
            }
            let ids: Vec<&str> = tf_scores.iter().map(|(t, _)| t.as_str()).collect();
            let lambdas: Vec<f64> = tf_scores.iter().map(|(_, l)| *l).collect();
            let ranks = rank_descending(&ids, &lambdas);
            let bg = thresholds.map(|t| t.get(gene).copied());
            if let Some(None) = bg {
                return Err(Error::invalid(format!("no background threshold for gene {gene}")));
            }
            let bg = bg.flatten();
            let mut gene_rows: Vec<ScoreRow> = tf_scores
                .iter()
                .zip(&ranks)
                .map(|((tf, l), &r)| {
                    let pass = bg.is_none_or(|b| *l > b);
                    Ok(ScoreRow {
                        tf: tf.clone(),
                        gene: gene.clone(),
                        lambda: *l,
                        background_max: bg,
                        pass,
                        rank: r,
                        dgrn_score: if pass { Some(dgrn_score(r, n_tfs)?) } else { None },
                    })
                })
                .collect::<Result<_>>()?;
            gene_rows.sort_by_key(|r| r.rank);
            rows.extend(gene_rows);
        }
        Ok(CimlaScoreTable { rows, n_tfs })
    }

    pub fn ranking(&self, mode: RankingMode) -> Result<RankedEdgeList> {
        RankedEdgeList::new(
            self.rows
                .iter()
                .map(|r| {
                    let score = match mode {
                        RankingMode::Global => r.lambda,
                        RankingMode::PerGene => -(r.rank as f64 / self.n_tfs as f64).ln(),
                    };
                    ScoredEdge::new(&r.tf, &r.gene, score)
                })
                .collect(),
        )
    }

    pub fn n_passing(&self) -> usize {
        self.rows.iter().filter(|r| r.pass).count()
    }

    pub fn to_tsv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".into(), |x| x.to_string());
        let mut out = String::from("tf\tgene\tlambda\tbackground_max\tpass\trank\tdgrn_score\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.tf,
                r.gene,
                r.lambda,
                opt(r.background_max),
                r.pass,
                r.rank,
                opt(r.dgrn_score)
            );
        }
        out
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}
