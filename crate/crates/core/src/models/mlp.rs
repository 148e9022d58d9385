//! Fully connected ReLU regressor trained with Adam on mean squared error.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{r_squared, Regressor, TrainReport};
use crate::error::{Error, Result};
use crate::rng::RngSeed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub input_dropout: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub validation_fraction: f64,
    pub patience: usize,
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams {
            hidden: vec![128, 64, 32],
            input_dropout: 0.0,
            batch_size: 128,
            learning_rate: 1e-3,
            max_epochs: 200,
            validation_fraction: 0.1,
            patience: 10,
        }
    }
}

impl MlpParams {
    pub fn two_layer() -> Self {
        MlpParams {
            hidden: vec![64, 32],
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// inputs × outputs
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub input_dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
}

impl Regressor for Mlp {
    fn n_features(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    fn predict_row(&self, x: &[f64]) -> f64 {
        let mut h: Vec<f64> = x.to_vec();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut next = layer.bias.to_vec();
            for (i, hi) in h.iter().enumerate() {
                if *hi != 0.0 {
                    for (n, w) in next.iter_mut().zip(layer.weights.row(i)) {
                        *n += hi * w;
                    }
                }
            }
            if li < last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = next;
        }
        h[0]
    }

    fn predict_many(&self, x: ArrayView2<'_, f64>) -> Vec<f64> {
        self.forward(x, None).pop().expect("output layer").column(0).to_vec()
    }
}

impl Mlp {
    pub fn init(n_in: usize, hidden: &[usize], input_dropout: f64, seed: RngSeed) -> Mlp {
        let mut rng = seed.rng();
        let mut dims = vec![n_in];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let layers = dims
            .windows(2)
            .map(|w| {
                let bound = (6.0 / w[0] as f64).sqrt();
                Layer {
                    weights: Array2::from_shape_fn((w[0], w[1]), |_| rng.random_range(-bound..bound)),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Mlp { layers, input_dropout }
    }

    /// Activations of every layer, input first. `mask` is an optional input
    /// dropout mask already scaled by 1/(1-p).
    fn forward(&self, x: ArrayView2<'_, f64>, mask: Option<&Array2<f64>>) -> Vec<Array2<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let input = match mask {
            Some(m) => &x * m,
            None => x.to_owned(),
        };
        acts.push(input);
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = acts[li].dot(&layer.weights) + &layer.bias;
            if li < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    /// Mean squared error and its gradient with respect to every weight and bias.
    pub fn loss_and_grad(
        &self,
        x: ArrayView2<'_, f64>,
        y: ArrayView1<'_, f64>,
        mask: Option<&Array2<f64>>,
    ) -> (f64, Vec<Layer>) {
        let n = x.nrows() as f64;
        let acts = self.forward(x, mask);
        let out = acts.last().expect("output").column(0).to_owned();
        let resid = &out - &y;
        let loss = resid.mapv(|r| r * r).sum() / n;
        let mut delta = (resid * (2.0 / n)).insert_axis(Axis(1));
        let mut grads = Vec::with_capacity(self.layers.len());
        for li in (0..self.layers.len()).rev() {
            let gw = acts[li].t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            if li > 0 {
                let mut back = delta.dot(&self.layers[li].weights.t());
                back.zip_mut_with(&acts[li], |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
            grads.push(Layer { weights: gw, bias: gb });
        }
        grads.reverse();
        (loss, grads)
    }

    fn mse(&self, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
        let pred = self.predict_many(x);
        pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / y.len() as f64
    }
}

struct Adam {
    m: Vec<Layer>,
    v: Vec<Layer>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(model: &Mlp, lr: f64) -> Self {
        let zeros: Vec<Layer> = model
            .layers
            .iter()
            .map(|l| Layer {
                weights: Array2::zeros(l.weights.raw_dim()),
                bias: Array1::zeros(l.bias.len()),
            })
            .collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            lr,
        }
    }

    fn step(&mut self, model: &mut Mlp, grads: &[Layer]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let lr = self.lr;
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        };
        for (((layer, g), m), v) in model.layers.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(&mut layer.weights)
                .and(&g.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut layer.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
    }
}

/// Mini-batch Adam on MSE with early stopping on a held-out validation slice
/// of the training rows. The weights from the best validation epoch are kept.
pub fn fit_mlp(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    params: &MlpParams,
    seed: RngSeed,
) -> Result<(Mlp, TrainReport, MlpHistory)> {
    let (n, m) = x.dim();
    if n < 6 || m == 0 || y.len() != n {
        return Err(Error::invalid(format!(
            "cannot fit MLP on {n}x{m} features with {} targets",
            y.len()
        )));
    }
    if crate::data::mean_std(y.iter().copied()).1 == 0.0 {
        return Err(Error::invalid("target has zero variance"));
    }
    if !(2..=3).contains(&params.hidden.len()) {
        return Err(Error::invalid("MLP must have 2 or 3 hidden layers"));
    }
    if !(0.0..1.0).contains(&params.input_dropout) {
        return Err(Error::invalid("input dropout must lie in [0, 1)"));
    }

    let mut rng = seed.derive("mlp-train").rng();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let n_val = if params.validation_fraction > 0.0 {
        ((n as f64 * params.validation_fraction).round() as usize).clamp(1, n / 2)
    } else {
        0
    };
    let (val_idx, train_idx) = idx.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let xv = x.select(Axis(0), val_idx);
    let yv = y.select(Axis(0), val_idx);

    let mut model = Mlp::init(m, &params.hidden, params.input_dropout, seed.derive("mlp-init"));
    let mut adam = Adam::new(&model, params.learning_rate);
    let keep = 1.0 - params.input_dropout;
    let batch = params.batch_size.max(1);
    let mut history = MlpHistory {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
    };
    let mut best = (f64::INFINITY, model.clone());
    let mut since_best = 0;

    for epoch in 0..params.max_epochs {
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in train_idx.chunks(batch) {
            let xb = x.select(Axis(0), chunk);
            let yb = y.select(Axis(0), chunk);
            let mask = (params.input_dropout > 0.0).then(|| {
                Array2::from_shape_fn(
                    xb.raw_dim(),
                    |_| {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    },
                )
            });
            let (loss, grads) = model.loss_and_grad(xb.view(), yb.view(), mask.as_ref());
            if !loss.is_finite() {
                return Err(Error::Training(format!("loss became non-finite at epoch {epoch}")));
            }
            epoch_loss += loss * chunk.len() as f64;
            adam.step(&mut model, &grads);
        }
        history.train_loss.push(epoch_loss / train_idx.len() as f64);
        let monitor = if n_val > 0 {
            model.mse(xv.view(), yv.view())
        } else {
            *history.train_loss.last().expect("pushed")
        };
        if !monitor.is_finite() {
            return Err(Error::Training(format!("loss became non-finite at epoch {epoch}")));
        }
        history.val_loss.push(monitor);
        if monitor < best.0 {
            best = (monitor, model.clone());
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= params.patience {
                break;
            }
        }
    }
    let model = best.1;
    let r2_train = r_squared(&y.to_vec(), &model.predict_many(x))?;
    Ok((
        model,
        TrainReport {
            r2_train,
            r2_test: None,
            cv_table: Vec::new(),
        },
        history,
    ))
}

/// Five-epoch moving average of a loss curve.
pub fn moving_average(losses: &[f64], window: usize) -> Vec<f64> {
    losses
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}
