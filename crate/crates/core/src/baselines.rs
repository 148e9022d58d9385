//! Reference differential-network scores: Fisher-z differential
//! co-expression, raw correlation change, and GENIE3-style importance change.

use serde::{Deserialize, Serialize};

use crate::data::{ExpressionMatrix, TfList};
use crate::error::{Error, Result};
use crate::evaluation::ScoredEdge;
use crate::models::{ForestParams, RandomForest};
use crate::rng::RngSeed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationMethod {
    Pearson,
    Spearman,
}

/// Pearson correlation; `None` when either series has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Ranks starting at 1; ties share their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEntry {
    pub tf: String,
    pub gene: String,
    pub r_case: f64,
    pub r_control: f64,
    pub n_case: usize,
    pub n_control: usize,
    /// A zero-variance series forced one of the correlations to 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub entries: Vec<CorrelationEntry>,
}

/// Per-condition correlation of every (TF, target) pair, self-pairs excluded.
pub fn correlation_tables(
    case: &ExpressionMatrix,
    control: &ExpressionMatrix,
    tfs: &TfList,
    targets: &[String],
    method: CorrelationMethod,
) -> Result<CorrelationTable> {
    if case.n_cells() < 4 || control.n_cells() < 4 {
        return Err(Error::invalid("correlation needs at least 4 cells per condition"));
    }
    tfs.check_against(case)?;
    tfs.check_against(control)?;
    let corr = |m: &ExpressionMatrix, a: &str, b: &str| -> Option<f64> {
        let x = m.gene_row(a)?.to_vec();
        let y = m.gene_row(b)?.to_vec();
        match method {
            CorrelationMethod::Pearson => pearson(&x, &y),
            CorrelationMethod::Spearman => spearman(&x, &y),
        }
    };
    let mut entries = Vec::with_capacity(tfs.len() * targets.len());
    for gene in targets {
        if case.gene_position(gene).is_none() || control.gene_position(gene).is_none() {
            return Err(Error::invalid(format!("target gene {gene} missing from a condition")));
        }
        for tf in tfs.iter().filter(|t| *t != gene) {
            let rc = corr(case, tf, gene);
            let r0 = corr(control, tf, gene);
            entries.push(CorrelationEntry {
                tf: tf.clone(),
                gene: gene.clone(),
                r_case: rc.unwrap_or(0.0),
                r_control: r0.unwrap_or(0.0),
                n_case: case.n_cells(),
                n_control: control.n_cells(),
                degenerate: rc.is_none() || r0.is_none(),
            });
        }
    }
    Ok(CorrelationTable { entries })
}

const R_CLAMP: f64 = 1.0 - 1e-12;

/// |atanh(r₁) − atanh(r₀)| / sqrt(1/(n₁−3) + 1/(n₀−3)).
pub fn zscore(r_case: f64, r_control: f64, n_case: usize, n_control: usize) -> Result<f64> {
    if n_case < 4 || n_control < 4 {
        return Err(Error::invalid("Fisher z needs at least 4 samples per condition"));
    }
    let clamp = |r: f64| {
        if r.abs() >= R_CLAMP {
            log::warn!("correlation {r} clamped to ±{R_CLAMP} for Fisher z");
        }
        r.clamp(-R_CLAMP, R_CLAMP)
    };
    let se = (1.0 / (n_case as f64 - 3.0) + 1.0 / (n_control as f64 - 3.0)).sqrt();
    Ok((clamp(r_case).atanh() - clamp(r_control).atanh()).abs() / se)
}

pub fn zscore_diff(table: &CorrelationTable) -> Result<Vec<ScoredEdge>> {
    table
        .entries
        .iter()
        .map(|e| {
            Ok(ScoredEdge::new(
                &e.tf,
                &e.gene,
                zscore(e.r_case, e.r_control, e.n_case, e.n_control)?,
            ))
        })
        .collect()
}

/// |r_case − r_control|, in [0, 2].
pub fn delta_correlation(table: &CorrelationTable) -> Vec<ScoredEdge> {
    table
        .entries
        .iter()
        .map(|e| ScoredEdge::new(&e.tf, &e.gene, (e.r_case - e.r_control).abs()))
        .collect()
}

/// |w_case − w_control| of normalized forest importances, per TF.
pub fn genie3_diff(
    case: &RandomForest,
    case_tfs: &[String],
    control: &RandomForest,
    control_tfs: &[String],
) -> Result<Vec<f64>> {
    if case_tfs != control_tfs || case.n_features != case_tfs.len() || control.n_features != control_tfs.len() {
        return Err(Error::invalid("case and control forests use different TF orders"));
    }
    Ok(case
        .feature_importance()
        .iter()
        .zip(control.feature_importance())
        .map(|(a, b)| (a - b).abs())
        .collect())
}

/// Train one forest per (gene, condition) on raw expression and score every
/// (TF, gene) pair by GENIE3-diff. `cached` may supply already trained forests.
pub fn genie3_diff_scores(
    case: &ExpressionMatrix,
    control: &ExpressionMatrix,
    tfs: &TfList,
    targets: &[String],
    params: &ForestParams,
    seed: RngSeed,
    cached: &dyn Fn(&str) -> Option<(RandomForest, RandomForest)>,
) -> Result<Vec<ScoredEdge>> {
    let mut out = Vec::new();
    for gene in targets {
        let (f1, f0) = match cached(gene) {
            Some(pair) => pair,
            None => {
                let fit = |m: &ExpressionMatrix, label: &str| -> Result<RandomForest> {
                    let (x, y) = m.design(tfs, gene)?;
                    let x = crate::data::decorrelate_self_feature(
                        &x,
                        tfs,
                        gene,
                        seed.derive(&format!("{gene}/{label}/self")),
                    );
                    RandomForest::fit(x.view(), y.view(), params, seed.derive(&format!("{gene}/{label}")))
                };
                (fit(case, "case")?, fit(control, "control")?)
            }
        };
        let diff = genie3_diff(&f1, tfs.as_slice(), &f0, tfs.as_slice())?;
        for (tf, s) in tfs.iter().zip(diff) {
            if tf != gene {
                out.push(ScoredEdge::new(tf, gene, s));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Condition;
    use crate::models::{MaxFeatures, Regressor};
    use ndarray::Array2;
    use rand::Rng as _;

    /// Textbook two-pass formula written independently of `pearson`.
    fn textbook(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let sx: f64 = x.iter().sum();
        let sy: f64 = y.iter().sum();
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|b| b * b).sum();
        (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
    }

    #[test]
    fn pearson_matches_textbook() {
        let mut rng = RngSeed(1).rng();
        for _ in 0..10 {
            let x: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = x.iter().map(|v| v * 0.5 + rng.random_range(-1.0..1.0)).collect();
            assert!((pearson(&x, &y).unwrap() - textbook(&x, &y)).abs() < 1e-12);
        }
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!(pearson(&x, &[2.0; 4]).is_none());
    }

    #[test]
    fn spearman_is_rank_invariant() {
        let mut rng = RngSeed(2).rng();
        let x: Vec<f64> = (0..40).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
        let ey: Vec<f64> = y.iter().map(|v| v.exp()).collect();
        assert_eq!(spearman(&x, &y), spearman(&x, &ey));
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn fisher_z_reference_value() {
        assert_eq!(zscore(0.3, 0.3, 50, 60).unwrap(), 0.0);
        let z = zscore(0.5, 0.0, 103, 103).unwrap();
        // atanh(0.5) = 0.549306..., sqrt(2/100) = 0.141421...
        assert!((z - 0.5f64.atanh() / 0.02f64.sqrt()).abs() < 1e-12);
        assert!((z - 3.884).abs() < 1e-3);
        assert_eq!(z, zscore(0.0, 0.5, 103, 103).unwrap());
        assert!(zscore(1.0, 0.0, 10, 10).unwrap().is_finite());
        assert!(zscore(0.1, 0.0, 3, 10).is_err());
    }

    fn table(rc: f64, r0: f64) -> CorrelationTable {
        CorrelationTable {
            entries: vec![CorrelationEntry {
                tf: "a".into(),
                gene: "g".into(),
                r_case: rc,
                r_control: r0,
                n_case: 20,
                n_control: 20,
                degenerate: false,
            }],
        }
    }

    #[test]
    fn delta_correlation_extremes() {
        assert_eq!(delta_correlation(&table(0.4, 0.4))[0].score, 0.0);
        assert_eq!(delta_correlation(&table(1.0, -1.0))[0].score, 2.0);
    }

    fn matrix(values: Array2<f64>, cond: Condition) -> ExpressionMatrix {
        let g = (0..values.nrows()).map(|i| format!("g{i}")).collect();
        let c = (0..values.ncols()).map(|i| format!("c{i}")).collect();
        ExpressionMatrix::new(g, c, values, cond).unwrap()
    }

    #[test]
    fn tables_cover_pairs_and_flag_degenerate() {
        let mut rng = RngSeed(3).rng();
        let mut v = Array2::from_shape_fn((3, 20), |_| rng.random_range(0.0..1.0));
        v.row_mut(2).fill(1.0);
        let case = matrix(v.clone(), Condition::Case);
        let control = matrix(v, Condition::Control);
        let tfs = TfList::new(vec!["g0".into(), "g2".into()]).unwrap();
        let t = correlation_tables(
            &case,
            &control,
            &tfs,
            &["g0".into(), "g1".into()],
            CorrelationMethod::Pearson,
        )
        .unwrap();
        // g0 self-pair excluded: (g2,g0), (g0,g1), (g2,g1).
        assert_eq!(t.entries.len(), 3);
        assert!(t
            .entries
            .iter()
            .filter(|e| e.tf == "g2")
            .all(|e| e.degenerate && e.r_case == 0.0));
        let z = zscore_diff(&t).unwrap();
        assert!(z.iter().all(|e| e.score == 0.0));
    }

    #[test]
    fn genie3_identical_and_planted() {
        let mut rng = RngSeed(4).rng();
        let n = 600;
        let mut case = Array2::from_shape_fn((4, n), |_| rng.random_range(-1.0..1.0));
        let mut control = Array2::from_shape_fn((4, n), |_| rng.random_range(-1.0..1.0));
        // g3 = g0 + g1 in case; g3 = g1 only in control.
        for c in 0..n {
            case[[3, c]] = case[[0, c]] + case[[1, c]] + 0.1 * rng.random_range(-1.0..1.0);
            control[[3, c]] = control[[1, c]] + 0.1 * rng.random_range(-1.0..1.0);
        }
        let case = matrix(case, Condition::Case);
        let control = matrix(control, Condition::Control);
        let tfs = TfList::new(vec!["g0".into(), "g1".into(), "g2".into()]).unwrap();
        let p = ForestParams {
            n_trees: 30,
            max_depth: Some(6),
            max_features: MaxFeatures::All,
            ..Default::default()
        };
        let scores = genie3_diff_scores(&case, &control, &tfs, &["g3".into()], &p, RngSeed(1), &|_| None).unwrap();
        let best = scores.iter().max_by(|a, b| a.score.total_cmp(&b.score)).unwrap();
        assert_eq!(best.tf, "g0");

        let (x, y) = case.design(&tfs, "g3").unwrap();
        let f = RandomForest::fit(x.view(), y.view(), &p, RngSeed(2)).unwrap();
        assert!(f.n_features() == 3);
        let same = genie3_diff(&f, tfs.as_slice(), &f, tfs.as_slice()).unwrap();
        assert!(same.iter().all(|v| *v == 0.0));
        let other = ["x".to_string(), "y".into(), "z".into()];
        assert!(genie3_diff(&f, tfs.as_slice(), &f, &other).is_err());
    }
}
