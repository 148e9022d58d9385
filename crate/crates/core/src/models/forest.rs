use ndarray::{ArrayView1, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tree::{DecisionTree, TreeParams};
use super::{r_squared, Regressor, TrainReport};
use crate::error::{Error, Result};
use crate::rng::RngSeed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    Sqrt,
    Third,
    All,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, m: usize) -> usize {
        let k = match self {
            MaxFeatures::Sqrt => (m as f64).sqrt().round() as usize,
            MaxFeatures::Third => (m as f64 / 3.0).round() as usize,
            MaxFeatures::All => m,
            MaxFeatures::Count(k) => k,
        };
        k.clamp(1, m.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub max_features: MaxFeatures,
    pub min_samples_leaf: usize,
    pub max_leaves: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: None,
            max_features: MaxFeatures::Third,
            min_samples_leaf: 1,
            max_leaves: None,
            bootstrap: true,
        }
    }
}

/// Cartesian hyperparameter grid searched by k-fold cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestGrid {
    pub n_trees: Vec<usize>,
    #[serde(with = "limit_list")]
    pub max_depth: Vec<Option<usize>>,
    pub max_features: Vec<MaxFeatures>,
    pub min_samples_leaf: Vec<usize>,
    #[serde(with = "limit_list")]
    pub max_leaves: Vec<Option<usize>>,
    pub bootstrap: bool,
}

impl Default for ForestGrid {
    fn default() -> Self {
        ForestGrid {
            n_trees: vec![100, 300],
            max_depth: vec![Some(8), Some(16), None],
            max_features: vec![MaxFeatures::Sqrt, MaxFeatures::Third],
            min_samples_leaf: vec![1],
            max_leaves: vec![None],
            bootstrap: true,
        }
    }
}

/// Lists of optional limits, with "none" standing for no limit (formats such
/// as TOML cannot hold a null inside an array).
mod limit_list {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Item {
        Limit(usize),
        Word(String),
    }

    pub fn serialize<S: Serializer>(v: &[Option<usize>], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|o| o.map_or_else(|| Item::Word("none".into()), Item::Limit))
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Option<usize>>, D::Error> {
        Vec::<Item>::deserialize(d)?
            .into_iter()
            .map(|i| match i {
                Item::Limit(n) => Ok(Some(n)),
                Item::Word(w) if w == "none" => Ok(None),
                Item::Word(w) => Err(serde::de::Error::custom(format!(
                    "expected a number or \"none\", got {w:?}"
                ))),
            })
            .collect()
    }
}

impl ForestGrid {
    pub fn single(p: ForestParams) -> Self {
        ForestGrid {
            n_trees: vec![p.n_trees],
            max_depth: vec![p.max_depth],
            max_features: vec![p.max_features],
            min_samples_leaf: vec![p.min_samples_leaf],
            max_leaves: vec![p.max_leaves],
            bootstrap: p.bootstrap,
        }
    }

    pub fn points(&self) -> Vec<ForestParams> {
        let mut out = Vec::new();
        for &n_trees in &self.n_trees {
            for &max_depth in &self.max_depth {
                for &max_features in &self.max_features {
                    for &min_samples_leaf in &self.min_samples_leaf {
                        for &max_leaves in &self.max_leaves {
                            out.push(ForestParams {
                                n_trees,
                                max_depth,
                                max_features,
                                min_samples_leaf,
                                max_leaves,
                                bootstrap: self.bootstrap,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
    pub params: ForestParams,
    pub n_features: usize,
}

impl Regressor for RandomForest {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_row(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(x)).sum::<f64>() / self.trees.len() as f64
    }
}

impl RandomForest {
    /// Train with fixed hyperparameters.
    pub fn fit(
        x: ArrayView2<'_, f64>,
        y: ArrayView1<'_, f64>,
        params: &ForestParams,
        seed: RngSeed,
    ) -> Result<RandomForest> {
        let (n, m) = x.dim();
        if n == 0 || m == 0 || y.len() != n {
            return Err(Error::invalid(format!(
                "cannot fit forest on {n}x{m} features with {} targets",
                y.len()
            )));
        }
        if params.n_trees == 0 {
            return Err(Error::invalid("forest needs at least one tree"));
        }
        let y = y.to_vec();
        let tree_params = TreeParams {
            max_depth: params.max_depth,
            max_features: params.max_features.resolve(m),
            min_samples_leaf: params.min_samples_leaf,
            max_leaves: params.max_leaves,
        };
        let grow = |i: usize| {
            let mut rng = seed.derive_index("tree", i as u64).rng();
            let rows: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            DecisionTree::fit(x, &y, rows, &tree_params, &mut rng)
        };
        #[cfg(feature = "parallel")]
        let trees = {
            use rayon::prelude::*;
            (0..params.n_trees).into_par_iter().map(grow).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let trees = (0..params.n_trees).map(grow).collect();
        Ok(RandomForest {
            trees,
            params: *params,
            n_features: m,
        })
    }

    /// Normalized impurity-decrease importance: each tree's gains are scaled
    /// to sum to one, averaged over trees, then renormalized. All zeros when no
    /// tree ever split.
    pub fn feature_importance(&self) -> Vec<f64> {
        let m = self.n_features;
        let mut acc = vec![0.0; m];
        for t in &self.trees {
            let raw = t.raw_importance(m);
            let s: f64 = raw.iter().sum();
            if s > 0.0 {
                for (a, r) in acc.iter_mut().zip(raw) {
                    *a += r / s;
                }
            }
        }
        let total: f64 = acc.iter().sum();
        if total > 0.0 {
            acc.iter_mut().for_each(|a| *a /= total);
        }
        acc
    }
}

/// Pick the grid point with the best mean k-fold R², then refit on all rows.
pub fn fit_forest(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    grid: &ForestGrid,
    cv_folds: usize,
    seed: RngSeed,
) -> Result<(RandomForest, TrainReport)> {
    let n = x.nrows();
    let folds = cv_folds.max(2);
    if n < folds * 2 {
        return Err(Error::invalid(format!(
            "need at least {} samples for {folds}-fold CV, got {n}",
            folds * 2
        )));
    }
    if crate::data::mean_std(y.iter().copied()).1 == 0.0 {
        return Err(Error::invalid("target has zero variance"));
    }
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::invalid("empty hyperparameter grid"));
    }
    let mut cv_table = Vec::new();
    let best = if points.len() == 1 {
        points[0]
    } else {
        let assignment = fold_assignment(n, folds, seed.derive("cv-folds"));
        let mut best: Option<(ForestParams, f64)> = None;
        for (gi, p) in points.iter().enumerate() {
            let mut scores = Vec::with_capacity(folds);
            for k in 0..folds {
                let train: Vec<usize> = (0..n).filter(|&i| assignment[i] != k).collect();
                let held: Vec<usize> = (0..n).filter(|&i| assignment[i] == k).collect();
                let xt = x.select(Axis(0), &train);
                let yt = y.select(Axis(0), &train);
                let model = RandomForest::fit(
                    xt.view(),
                    yt.view(),
                    p,
                    seed.derive_index("cv", (gi * folds + k) as u64),
                )?;
                let pred = model.predict(x.select(Axis(0), &held).view())?;
                let truth = y.select(Axis(0), &held).to_vec();
                // A fold whose held-out target is constant has no defined R².
                scores.push(r_squared(&truth, &pred).unwrap_or(0.0));
            }
            let mean = scores.iter().sum::<f64>() / scores.len() as f64;
            cv_table.push((*p, mean));
            if best.is_none_or(|(_, s)| mean > s) {
                best = Some((*p, mean));
            }
        }
        best.expect("non-empty grid").0
    };
    let model = RandomForest::fit(x, y, &best, seed.derive("final"))?;
    let pred = model.predict(x)?;
    let r2_train = r_squared(&y.to_vec(), &pred)?;
    Ok((
        model,
        TrainReport {
            r2_train,
            r2_test: None,
            cv_table,
        },
    ))
}

fn fold_assignment(n: usize, folds: usize, seed: RngSeed) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed.rng());
    let mut out = vec![0; n];
    for (pos, &i) in idx.iter().enumerate() {
        out[i] = pos % folds;
    }
    out
}
