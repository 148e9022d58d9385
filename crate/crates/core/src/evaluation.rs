//! Scoring ranked dGRN predictions against a known differential edge set.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::TfList;
use crate::error::{Error, Result};
use crate::simulator::DgrnTruth;

pub type EdgeKey = (String, String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEdge {
    pub tf: String,
    pub gene: String,
    pub score: f64,
}

impl ScoredEdge {
    pub fn new(tf: &str, gene: &str, score: f64) -> Self {
        ScoredEdge {
            tf: tf.to_string(),
            gene: gene.to_string(),
            score,
        }
    }

    pub fn key(&self) -> EdgeKey {
        (self.tf.clone(), self.gene.clone())
    }
}

/// Edges sorted by descending score; ties broken by (tf, gene).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RankedEdgeList {
    edges: Vec<ScoredEdge>,
}

impl RankedEdgeList {
    pub fn new(mut edges: Vec<ScoredEdge>) -> Result<Self> {
        if let Some(e) = edges.iter().find(|e| !e.score.is_finite()) {
            return Err(Error::invalid(format!("non-finite score for {} -> {}", e.tf, e.gene)));
        }
        edges.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.tf.cmp(&b.tf))
                .then_with(|| a.gene.cmp(&b.gene))
        });
        let mut seen = BTreeSet::new();
        for e in &edges {
            if !seen.insert((e.tf.as_str(), e.gene.as_str())) {
                return Err(Error::invalid(format!("duplicate edge {} -> {}", e.tf, e.gene)));
            }
        }
        Ok(RankedEdgeList { edges })
    }

    pub fn edges(&self) -> &[ScoredEdge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn score_map(&self) -> HashMap<EdgeKey, f64> {
        self.edges.iter().map(|e| (e.key(), e.score)).collect()
    }

    /// The first ceil(fraction·len) edges.
    pub fn top_fraction(&self, fraction: f64) -> BTreeSet<EdgeKey> {
        let k = top_count(self.edges.len(), fraction);
        self.edges[..k].iter().map(ScoredEdge::key).collect()
    }

    pub fn to_tsv(&self, method: &str) -> String {
        let mut out = String::from("tf\tgene\tscore\tmethod\n");
        for e in &self.edges {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", e.tf, e.gene, e.score, method);
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>, method: &str) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv(method)).map_err(|e| Error::io(path, e))
    }

    /// Reads any TSV with `tf`, `gene` and a `score` (or `lambda`) column.
    pub fn parse_tsv(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty ranking file".into()))?;
        let cols: Vec<&str> = header.split('\t').collect();
        let find = |name: &str| cols.iter().position(|c| *c == name);
        let (tf_col, gene_col) = match (find("tf"), find("gene")) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(parse_err(1, "header needs tf and gene columns".into())),
        };
        let score_col = find("score")
            .or_else(|| find("lambda"))
            .ok_or_else(|| parse_err(1, "header needs a score or lambda column".into()))?;
        let mut edges = Vec::new();
        for (i, line) in lines {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != cols.len() {
                return Err(parse_err(
                    i + 1,
                    format!("expected {} fields, found {}", cols.len(), f.len()),
                ));
            }
            let score = f[score_col]
                .parse::<f64>()
                .map_err(|_| parse_err(i + 1, format!("bad score {:?}", f[score_col])))?;
            edges.push(ScoredEdge::new(f[tf_col], f[gene_col], score));
        }
        RankedEdgeList::new(edges)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text, path)
    }
}

pub fn top_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).ceil() as usize).min(n)
}

/// Every (TF, target) pair except self-pairs.
pub fn universe(tfs: &TfList, targets: &[String]) -> Vec<EdgeKey> {
    let mut out = Vec::with_capacity(tfs.len() * targets.len());
    for g in targets {
        for t in tfs.iter().filter(|t| *t != g) {
            out.push((t.clone(), g.clone()));
        }
    }
    out
}

/// Scores and labels over the universe; unranked pairs tie at −∞.
fn scored_labels(ranking: &RankedEdgeList, truth: &DgrnTruth, universe: &[EdgeKey]) -> (Vec<f64>, Vec<bool>) {
    let scores = ranking.score_map();
    universe
        .iter()
        .map(|k| {
            (
                scores.get(k).copied().unwrap_or(f64::NEG_INFINITY),
                truth.contains(&k.0, &k.1),
            )
        })
        .unzip()
}

fn class_sizes(labels: &[bool]) -> Result<(usize, usize)> {
    let p = labels.iter().filter(|l| **l).count();
    let n = labels.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::UndefinedMetric(format!("{p} positives and {n} negatives")));
    }
    Ok((p, n))
}

/// Mann–Whitney AUROC; tied scores count one half.
pub fn auroc_scores(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (p, n) = class_sizes(labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (p as f64, n as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Tied scores enter together, in descending order.
fn tie_groups(scores: &[f64], labels: &[bool]) -> Vec<(usize, usize)> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let pos = idx[i..=j].iter().filter(|&&k| labels[k]).count();
        groups.push((pos, j + 1 - i - pos));
        i = j + 1;
    }
    groups
}

/// Average precision with the step rule: Σ Δrecall · precision, tie groups
/// entering together.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (p, _) = class_sizes(labels)?;
    let (mut tp, mut fp, mut ap) = (0usize, 0usize, 0.0);
    for (pos, neg) in tie_groups(scores, labels) {
        tp += pos;
        fp += neg;
        if pos > 0 {
            ap += (pos as f64 / p as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}

pub fn auroc(ranking: &RankedEdgeList, truth: &DgrnTruth, universe: &[EdgeKey]) -> Result<f64> {
    let (s, l) = scored_labels(ranking, truth, universe);
    auroc_scores(&s, &l)
}

/// (AUPRC, AUPRC / prevalence).
pub fn auprc_normalized(ranking: &RankedEdgeList, truth: &DgrnTruth, universe: &[EdgeKey]) -> Result<(f64, f64)> {
    let (s, l) = scored_labels(ranking, truth, universe);
    let ap = average_precision(&s, &l)?;
    let prevalence = l.iter().filter(|v| **v).count() as f64 / l.len() as f64;
    Ok((ap, ap / prevalence))
}

/// (false positive rate, true positive rate) after each tie group.
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let (p, n) = class_sizes(labels)?;
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0, 0);
    for (pos, neg) in tie_groups(scores, labels) {
        tp += pos;
        fp += neg;
        pts.push((fp as f64 / n as f64, tp as f64 / p as f64));
    }
    Ok(pts)
}

/// (recall, precision) after each tie group.
pub fn pr_points(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let (p, _) = class_sizes(labels)?;
    let (mut tp, mut fp) = (0, 0);
    let mut pts = Vec::new();
    for (pos, neg) in tie_groups(scores, labels) {
        tp += pos;
        fp += neg;
        pts.push((tp as f64 / p as f64, tp as f64 / (tp + fp) as f64));
    }
    Ok(pts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneEval {
    pub gene: String,
    pub n_candidates: usize,
    pub n_true: usize,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub normalized_auprc: Option<f64>,
    /// Set when every candidate is a true regulator (no negatives).
    pub no_negatives: bool,
}

/// Metrics restricted to each gene's candidates. Genes without true
/// differential regulators are left out.
pub fn per_gene_eval(ranking: &RankedEdgeList, truth: &DgrnTruth, universe: &[EdgeKey]) -> Vec<GeneEval> {
    let mut by_gene: BTreeMap<&str, Vec<EdgeKey>> = BTreeMap::new();
    for k in universe {
        by_gene.entry(k.1.as_str()).or_default().push(k.clone());
    }
    let mut out = Vec::new();
    for (gene, pairs) in by_gene {
        let (s, l) = scored_labels(ranking, truth, &pairs);
        let n_true = l.iter().filter(|v| **v).count();
        if n_true == 0 {
            continue;
        }
        let no_negatives = n_true == l.len();
        let (auroc, auprc, normalized) = if no_negatives {
            (None, None, None)
        } else {
            let ap = average_precision(&s, &l).ok();
            (
                auroc_scores(&s, &l).ok(),
                ap,
                ap.map(|a| a * l.len() as f64 / n_true as f64),
            )
        };
        out.push(GeneEval {
            gene: gene.to_string(),
            n_candidates: l.len(),
            n_true,
            auroc,
            auprc,
            normalized_auprc: normalized,
            no_negatives,
        });
    }
    out
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineMode {
    Union,
    Intersection,
}

pub fn combine_rankings(
    a: &RankedEdgeList,
    b: &RankedEdgeList,
    top_fraction: f64,
    mode: CombineMode,
) -> BTreeSet<EdgeKey> {
    let (ta, tb) = (a.top_fraction(top_fraction), b.top_fraction(top_fraction));
    match mode {
        CombineMode::Union => ta.union(&tb).cloned().collect(),
        CombineMode::Intersection => ta.intersection(&tb).cloned().collect(),
    }
}

/// Harmonic mean of precision and recall; 0 when either is undefined.
pub fn f1_at_fraction(predicted: &BTreeSet<EdgeKey>, truth: &BTreeSet<EdgeKey>) -> f64 {
    if predicted.is_empty() || truth.is_empty() {
        return 0.0;
    }
    let tp = predicted.intersection(truth).count() as f64;
    if tp == 0.0 {
        return 0.0;
    }
    let precision = tp / predicted.len() as f64;
    let recall = tp / truth.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumRates {
    pub n_positive: usize,
    pub n_negative: usize,
    /// Absent when the stratum has no positives.
    pub tpr: Option<f64>,
    /// Absent when the stratum has no negatives.
    pub fpr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedRates {
    pub top_fraction: f64,
    pub cutoff: f64,
    /// dCorr ≤ cutoff.
    pub low: StratumRates,
    /// dCorr > cutoff.
    pub high: StratumRates,
}

pub const DEFAULT_DCORR_CUTOFF: f64 = 0.16;

/// TPR/FPR of the top `top_fraction` of the universe, split by dCorr.
pub fn stratified_rates(
    ranking: &RankedEdgeList,
    truth: &DgrnTruth,
    universe: &[EdgeKey],
    dcorr: &HashMap<EdgeKey, f64>,
    top_fraction: f64,
    cutoff: f64,
) -> Result<StratifiedRates> {
    let (s, l) = scored_labels(ranking, truth, universe);
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then_with(|| universe[a].cmp(&universe[b])));
    let mut selected = vec![false; s.len()];
    for &i in &order[..top_count(s.len(), top_fraction)] {
        selected[i] = true;
    }
    // [tp, pos, fp, neg] per stratum
    let mut counts = [[0usize; 4]; 2];
    for (i, key) in universe.iter().enumerate() {
        let d = *dcorr
            .get(key)
            .ok_or_else(|| Error::invalid(format!("no dCorr for {} -> {}", key.0, key.1)))?;
        let c = &mut counts[usize::from(d > cutoff)];
        if l[i] {
            c[1] += 1;
            c[0] += usize::from(selected[i]);
        } else {
            c[3] += 1;
            c[2] += usize::from(selected[i]);
        }
    }
    let rates = |c: [usize; 4]| StratumRates {
        n_positive: c[1],
        n_negative: c[3],
        tpr: (c[1] > 0).then(|| c[0] as f64 / c[1] as f64),
        fpr: (c[3] > 0).then(|| c[2] as f64 / c[3] as f64),
    };
    Ok(StratifiedRates {
        top_fraction,
        cutoff,
        low: rates(counts[0]),
        high: rates(counts[1]),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_pairs: usize,
    pub n_positive: usize,
    pub prevalence: f64,
    pub auroc: f64,
    pub auprc: f64,
    pub normalized_auprc: f64,
    pub per_gene: Vec<GeneEval>,
    pub median_gene_auroc: Option<f64>,
    pub top_fraction: f64,
    pub f1_at_fraction: f64,
    pub strata: Option<StratifiedRates>,
}

pub fn evaluate(
    ranking: &RankedEdgeList,
    truth: &DgrnTruth,
    universe: &[EdgeKey],
    top_fraction: f64,
    dcorr: Option<(&HashMap<EdgeKey, f64>, f64, f64)>,
) -> Result<EvalReport> {
    let (_, labels) = scored_labels(ranking, truth, universe);
    let n_positive = labels.iter().filter(|v| **v).count();
    let auroc = auroc(ranking, truth, universe)?;
    let (auprc, normalized_auprc) = auprc_normalized(ranking, truth, universe)?;
    let per_gene = per_gene_eval(ranking, truth, universe);
    let gene_aurocs: Vec<f64> = per_gene.iter().filter_map(|g| g.auroc).collect();
    let in_universe: BTreeSet<EdgeKey> = universe.iter().cloned().collect();
    let ranked = RankedEdgeList::new(
        ranking
            .edges()
            .iter()
            .filter(|e| in_universe.contains(&e.key()))
            .cloned()
            .collect(),
    )?;
    let positives: BTreeSet<EdgeKey> = universe
        .iter()
        .filter(|k| truth.contains(&k.0, &k.1))
        .cloned()
        .collect();
    let strata = match dcorr {
        Some((d, frac, cutoff)) => Some(stratified_rates(ranking, truth, universe, d, frac, cutoff)?),
        None => None,
    };
    Ok(EvalReport {
        n_pairs: universe.len(),
        n_positive,
        prevalence: n_positive as f64 / universe.len() as f64,
        auroc,
        auprc,
        normalized_auprc,
        median_gene_auroc: median(&gene_aurocs),
        per_gene,
        top_fraction,
        f1_at_fraction: f1_at_fraction(&ranked.top_fraction(top_fraction), &positives),
        strata,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

impl EvalReport {
    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "n_pairs = {}", self.n_pairs);
        let _ = writeln!(out, "n_positive = {}", self.n_positive);
        let _ = writeln!(out, "prevalence = {}", self.prevalence);
        let _ = writeln!(out, "auroc = {}", self.auroc);
        let _ = writeln!(out, "auprc = {}", self.auprc);
        let _ = writeln!(out, "normalized_auprc = {}", self.normalized_auprc);
        let _ = writeln!(out, "median_gene_auroc = {}", opt(self.median_gene_auroc));
        let _ = writeln!(out, "top_fraction = {}", self.top_fraction);
        let _ = writeln!(out, "f1_at_fraction = {}", self.f1_at_fraction);
        if let Some(s) = &self.strata {
            let _ = writeln!(out, "strata.top_fraction = {}", s.top_fraction);
            let _ = writeln!(out, "strata.cutoff = {}", s.cutoff);
            for (name, r) in [("low", &s.low), ("high", &s.high)] {
                let _ = writeln!(out, "strata.{name}.n_positive = {}", r.n_positive);
                let _ = writeln!(out, "strata.{name}.n_negative = {}", r.n_negative);
                let _ = writeln!(out, "strata.{name}.tpr = {}", opt(r.tpr));
                let _ = writeln!(out, "strata.{name}.fpr = {}", opt(r.fpr));
            }
        }
        out
    }

    pub fn per_gene_tsv(&self) -> String {
        let mut out = String::from("gene\tn_candidates\tn_true\tauroc\tauprc\tnormalized_auprc\tno_negatives\n");
        for g in &self.per_gene {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                g.gene,
                g.n_candidates,
                g.n_true,
                opt(g.auroc),
                opt(g.auprc),
                opt(g.normalized_auprc),
                g.no_negatives
            );
        }
        out
    }
}

/// Minimal line plot of a curve in the unit square.
pub fn curve_svg(points: &[(f64, f64)], title: &str, x_label: &str, y_label: &str) -> String {
    let (w, h, pad) = (400.0, 400.0, 50.0);
    let sx = |x: f64| pad + x * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - y * (h - 2.0 * pad);
    let mut path = String::new();
    for (i, (x, y)) in points.iter().enumerate() {
        let _ = write!(path, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, sx(*x), sy(*y));
    }
    format!(
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">
<rect x="{pad}" y="{pad}" width="{iw}" height="{iw}" fill="none" stroke="#888"/>
<text x="{cx}" y="25" text-anchor="middle" font-size="14">{title}</text>
<text x="{cx}" y="{xl}" text-anchor="middle">{x_label}</text>
<text x="15" y="{cx}" text-anchor="middle" transform="rotate(-90 15 {cx})">{y_label}</text>
<path d="{path}" fill="none" stroke="#1f77b4" stroke-width="2"/>
</svg>
"##,
        iw = w - 2.0 * pad,
        cx = w / 2.0,
        xl = h - 15.0,
    )
}

pub fn roc_svg(ranking: &RankedEdgeList, truth: &DgrnTruth, universe: &[EdgeKey]) -> Result<String> {
    let (s, l) = scored_labels(ranking, truth, universe);
    Ok(curve_svg(
        &roc_points(&s, &l)?,
        "ROC",
        "false positive rate",
        "true positive rate",
    ))
}

pub fn pr_svg(ranking: &RankedEdgeList, truth: &DgrnTruth, universe: &[EdgeKey]) -> Result<String> {
    let (s, l) = scored_labels(ranking, truth, universe);
    let mut pts = pr_points(&s, &l)?;
    if let Some(&(_, p)) = pts.first() {
        pts.insert(0, (0.0, p));
    }
    Ok(curve_svg(&pts, "Precision-recall", "recall", "precision"))
}
