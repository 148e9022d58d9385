//! Interventional Shapley attribution.
//!
//! The value of a coalition S at sample x is the background average of the
//! model evaluated on the composite vector that takes x on S and the
//! background row elsewhere. Three estimators share that definition:
//!
//! * [`shap_exact`] enumerates every coalition (m ≤ `exact_limit`),
//! * [`shap_sampled`] averages marginal contributions over random orderings,
//! * [`shap_tree`] computes the same exact value for forests by walking each
//!   tree once per (sample, background row) pair.

mod exact;
mod sampled;
mod tree;
pub mod weights;

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Model, Regressor};
use crate::rng::RngSeed;

pub use exact::{coalition_value, coalition_value_batched, shap_exact, DEFAULT_EXACT_LIMIT};
pub use sampled::{shap_sampled, SampledShap};
pub use tree::shap_tree;
pub use weights::ShapleyWeights;

/// Reference rows realizing the out-of-coalition distribution, optionally
/// weighted (weights are normalized to sum to one).
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundSet {
    rows: Array2<f64>,
    weights: Option<Vec<f64>>,
}

impl BackgroundSet {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        if rows.nrows() == 0 {
            return Err(Error::invalid("background set needs at least one row"));
        }
        Ok(BackgroundSet { rows, weights: None })
    }

    pub fn weighted(rows: Array2<f64>, weights: Vec<f64>) -> Result<Self> {
        if rows.nrows() == 0 || weights.len() != rows.nrows() {
            return Err(Error::invalid("background weights must match a non-empty row set"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("background weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("background weights sum to zero"));
        }
        Ok(BackgroundSet {
            rows,
            weights: Some(weights.into_iter().map(|w| w / total).collect()),
        })
    }

    /// At most `max_rows` rows drawn without replacement, in original order.
    pub fn subsample(rows: ArrayView2<'_, f64>, max_rows: usize, seed: RngSeed) -> Result<Self> {
        if rows.nrows() <= max_rows {
            return BackgroundSet::new(rows.to_owned());
        }
        let mut idx = rand::seq::index::sample(&mut seed.rng(), rows.nrows(), max_rows).into_vec();
        idx.sort_unstable();
        BackgroundSet::new(rows.select(ndarray::Axis(0), &idx))
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn n_features(&self) -> usize {
        self.rows.ncols()
    }

    pub fn weight(&self, r: usize) -> f64 {
        match &self.weights {
            Some(w) => w[r],
            None => 1.0 / self.rows.nrows() as f64,
        }
    }

    /// Weighted mean of per-row values.
    pub(crate) fn average(&self, values: &[f64]) -> f64 {
        match &self.weights {
            Some(w) => values.iter().zip(w).map(|(v, w)| v * w).sum(),
            None => values.iter().sum::<f64>() / values.len() as f64,
        }
    }

    pub fn column_means(&self) -> Vec<f64> {
        (0..self.n_features())
            .map(|j| self.average(&self.rows.column(j).to_vec()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorChoice {
    /// Tree path for forests, enumeration for small m, sampling otherwise.
    Auto,
    Exact,
    Sampled,
    Tree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributionConfig {
    pub estimator: EstimatorChoice,
    pub n_permutations: usize,
    pub exact_limit: usize,
    pub background_size: usize,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        AttributionConfig {
            estimator: EstimatorChoice::Auto,
            n_permutations: 100,
            exact_limit: DEFAULT_EXACT_LIMIT,
            background_size: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Exact,
    Sampled,
    Tree,
}

impl AttributionConfig {
    pub fn resolve(&self, model: &Model) -> Estimator {
        match self.estimator {
            EstimatorChoice::Exact => Estimator::Exact,
            EstimatorChoice::Sampled => Estimator::Sampled,
            EstimatorChoice::Tree => Estimator::Tree,
            EstimatorChoice::Auto => match model {
                Model::Forest(_) => Estimator::Tree,
                Model::Mlp(m) if m.n_features() <= 10.min(self.exact_limit) => Estimator::Exact,
                Model::Mlp(_) => Estimator::Sampled,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMeta {
    pub estimator: Estimator,
    pub n_permutations: Option<usize>,
    pub background_size: usize,
    pub seed: RngSeed,
}

/// Per-sample, per-feature Shapley values.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMatrix {
    pub values: Array2<f64>,
    /// Monte-Carlo standard errors (sampled estimator only).
    pub std_errors: Option<Array2<f64>>,
    pub meta: AttributionMeta,
}

impl AttributionMatrix {
    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn to_tsv(&self, sample_ids: &[String], feature_names: &[String]) -> String {
        let mut out = String::from("sample");
        for f in feature_names {
            out.push('\t');
            out.push_str(f);
        }
        out.push('\n');
        for (id, row) in sample_ids.iter().zip(self.values.rows()) {
            out.push_str(id);
            for v in row {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Writes `<path>` (TSV) and `<path>.meta.json`.
    pub fn write(&self, path: impl AsRef<Path>, sample_ids: &[String], feature_names: &[String]) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv(sample_ids, feature_names)).map_err(|e| Error::io(path, e))?;
        let meta_path = path.with_extension("meta.json");
        std::fs::write(&meta_path, serde_json::to_string_pretty(&self.meta)?).map_err(|e| Error::io(&meta_path, e))
    }
}

/// Attribute every row of `samples`. Rows are independent and each uses its
/// own derived seed, so the result does not depend on the worker count.
pub fn attribute_dataset(
    model: &Model,
    samples: ArrayView2<'_, f64>,
    background: &BackgroundSet,
    config: &AttributionConfig,
    seed: RngSeed,
) -> Result<AttributionMatrix> {
    let m = model.n_features();
    if samples.ncols() != m || background.n_features() != m {
        return Err(Error::invalid(format!(
            "model has {m} features; samples have {}, background has {}",
            samples.ncols(),
            background.n_features()
        )));
    }
    let estimator = config.resolve(model);
    if estimator == Estimator::Tree && model.as_forest().is_none() {
        return Err(Error::invalid("tree estimator requires a forest model"));
    }
    if estimator == Estimator::Exact && m > config.exact_limit {
        return Err(Error::Capacity(format!(
            "exact enumeration limited to {} features, model has {m}; use the sampled estimator",
            config.exact_limit
        )));
    }
    let weights = ShapleyWeights::new(m);
    let one = |r: usize| -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let x = samples.row(r).to_vec();
        match estimator {
            Estimator::Exact => Ok((exact::shap_exact_with(model, &x, background, &weights)?, None)),
            Estimator::Sampled => {
                let s = shap_sampled(
                    model,
                    &x,
                    background,
                    config.n_permutations,
                    seed.derive_index("sample", r as u64),
                )?;
                Ok((s.values, Some(s.std_errors)))
            }
            Estimator::Tree => Ok((shap_tree(model.as_forest().expect("checked"), &x, background)?, None)),
        }
    };
    let n = samples.nrows();
    #[cfg(feature = "parallel")]
    let rows: Vec<_> = {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(one).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<_> = (0..n).map(one).collect::<Result<_>>()?;

    let mut values = Array2::zeros((n, m));
    let mut ses = (estimator == Estimator::Sampled).then(|| Array2::zeros((n, m)));
    for (r, (phi, se)) in rows.into_iter().enumerate() {
        values.row_mut(r).assign(&ndarray::ArrayView1::from(&phi));
        if let (Some(all), Some(se)) = (ses.as_mut(), se) {
            all.row_mut(r).assign(&ndarray::ArrayView1::from(&se));
        }
    }
    Ok(AttributionMatrix {
        values,
        std_errors: ses,
        meta: AttributionMeta {
            estimator,
            n_permutations: (estimator == Estimator::Sampled).then_some(config.n_permutations),
            background_size: background.len(),
            seed,
        },
    })
}
