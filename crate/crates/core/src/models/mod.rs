//! Per-condition regressors f_c(x) ≈ E_c[Y | X = x].

pub mod forest;
pub mod mlp;
pub mod tree;

use std::path::Path;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use forest::{fit_forest, ForestGrid, ForestParams, MaxFeatures, RandomForest};
pub use mlp::{fit_mlp, Mlp, MlpHistory, MlpParams};

/// Anything that maps a feature vector to a real prediction.
pub trait Regressor: Sync {
    fn n_features(&self) -> usize;

    fn predict_row(&self, x: &[f64]) -> f64;

    /// Row-wise prediction without dimension checks.
    fn predict_many(&self, x: ArrayView2<'_, f64>) -> Vec<f64> {
        let mut buf = vec![0.0; x.ncols()];
        x.rows()
            .into_iter()
            .map(|r| {
                for (b, v) in buf.iter_mut().zip(r) {
                    *b = *v;
                }
                self.predict_row(&buf)
            })
            .collect()
    }

    fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features() {
            return Err(Error::invalid(format!(
                "model expects {} features, got {}",
                self.n_features(),
                x.ncols()
            )));
        }
        Ok(self.predict_many(x))
    }
}

/// Wraps a plain function as a regressor (used for known structural functions).
pub struct FnModel<F> {
    pub n_features: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> Regressor for FnModel<F> {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_row(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Forest,
    Mlp,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Forest => "forest",
            ModelKind::Mlp => "mlp",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Model {
    Forest(RandomForest),
    Mlp(Mlp),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Forest(_) => ModelKind::Forest,
            Model::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn as_forest(&self) -> Option<&RandomForest> {
        match self {
            Model::Forest(f) => Some(f),
            Model::Mlp(_) => None,
        }
    }
}

impl Regressor for Model {
    fn n_features(&self) -> usize {
        match self {
            Model::Forest(m) => m.n_features(),
            Model::Mlp(m) => m.n_features(),
        }
    }

    fn predict_row(&self, x: &[f64]) -> f64 {
        match self {
            Model::Forest(m) => m.predict_row(x),
            Model::Mlp(m) => m.predict_row(x),
        }
    }

    fn predict_many(&self, x: ArrayView2<'_, f64>) -> Vec<f64> {
        match self {
            Model::Forest(m) => m.predict_many(x),
            Model::Mlp(m) => m.predict_many(x),
        }
    }
}

const MODEL_FORMAT: &str = "cimla-model";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    #[serde(default)]
    feature_names: Vec<String>,
    model: Model,
}

/// Versioned JSON model file. Floats round-trip exactly.
pub fn save_model(path: impl AsRef<Path>, model: &Model, feature_names: &[String]) -> Result<()> {
    let path = path.as_ref();
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        feature_names: feature_names.to_vec(),
        model: model.clone(),
    };
    let text = serde_json::to_string(&file)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(Model, Vec<String>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ModelFile = serde_json::from_str(&text)?;
    if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
        return Err(Error::invalid(format!(
            "{}: unsupported model file {} v{}",
            path.display(),
            file.format,
            file.version
        )));
    }
    Ok((file.model, file.feature_names))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub r2_train: f64,
    /// Can be negative for a poor held-out fit.
    pub r2_test: Option<f64>,
    pub cv_table: Vec<(ForestParams, f64)>,
}

/// Coefficient of determination 1 − SS_res / SS_tot.
pub fn r_squared(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() || y_true.len() < 2 {
        return Err(Error::invalid("r_squared needs two equal-length series of length >= 2"));
    }
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let ss_tot: f64 = y_true.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::invalid("r_squared undefined for zero-variance truth"));
    }
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(t, p)| (t - p) * (t - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}
