use ndarray::Array2;

use super::{BackgroundSet, ShapleyWeights};
use crate::error::{Error, Result};
use crate::models::Regressor;

pub const DEFAULT_EXACT_LIMIT: usize = 15;

/// Scalar reference path: background average of f(x_S, b_{M∖S}).
pub fn coalition_value<R: Regressor + ?Sized>(
    model: &R,
    x: &[f64],
    in_features: &[usize],
    background: &BackgroundSet,
) -> f64 {
    let mut take_x = vec![false; x.len()];
    for &j in in_features {
        take_x[j] = true;
    }
    let mut composite = vec![0.0; x.len()];
    let mut total = 0.0;
    for (r, b) in background.rows().rows().into_iter().enumerate() {
        for j in 0..x.len() {
            composite[j] = if take_x[j] { x[j] } else { b[j] };
        }
        total += background.weight(r) * model.predict_row(&composite);
    }
    total
}

/// Same value, evaluated as one prediction batch. `mask` bit j set means
/// feature j is taken from `x`.
pub fn coalition_value_batched<R: Regressor + ?Sized>(
    model: &R,
    x: &[f64],
    mask: u64,
    background: &BackgroundSet,
    scratch: &mut Array2<f64>,
) -> f64 {
    scratch.assign(background.rows());
    for (j, &xj) in x.iter().enumerate() {
        if mask >> j & 1 == 1 {
            scratch.column_mut(j).fill(xj);
        }
    }
    background.average(&model.predict_many(scratch.view()))
}

/// Exact interventional Shapley values by enumerating all 2^m coalitions.
pub fn shap_exact<R: Regressor + ?Sized>(model: &R, x: &[f64], background: &BackgroundSet) -> Result<Vec<f64>> {
    if x.len() > DEFAULT_EXACT_LIMIT {
        return Err(Error::Capacity(format!(
            "exact enumeration limited to {DEFAULT_EXACT_LIMIT} features, got {}; use shap_sampled",
            x.len()
        )));
    }
    shap_exact_with(model, x, background, &ShapleyWeights::new(x.len().max(1)))
}

pub(crate) fn shap_exact_with<R: Regressor + ?Sized>(
    model: &R,
    x: &[f64],
    background: &BackgroundSet,
    weights: &ShapleyWeights,
) -> Result<Vec<f64>> {
    let m = x.len();
    if m != model.n_features() || m != background.n_features() {
        return Err(Error::invalid("sample, model and background disagree on feature count"));
    }
    if m >= 63 {
        return Err(Error::Capacity(format!("cannot enumerate coalitions of {m} features")));
    }
    let mut scratch = background.rows().clone();
    let values: Vec<f64> = (0..1u64 << m)
        .map(|mask| coalition_value_batched(model, x, mask, background, &mut scratch))
        .collect();
    let mut phi = vec![0.0; m];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1u64 << i;
        for mask in 0..1u64 << m {
            if mask & bit == 0 {
                let k = mask.count_ones() as usize;
                *p += weights.weight(k) * (values[(mask | bit) as usize] - values[mask as usize]);
            }
        }
    }
    Ok(phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{FnModel, ForestParams, MaxFeatures, RandomForest};
    use crate::rng::RngSeed;
    use rand::Rng as _;
    use std::collections::HashMap;

    fn background(n: usize, m: usize, seed: u64) -> BackgroundSet {
        let mut rng = RngSeed(seed).rng();
        BackgroundSet::new(Array2::from_shape_fn((n, m), |_| rng.random_range(-2.0..2.0))).unwrap()
    }

    /// Permutation form: average over all m! orderings of each feature's
    /// marginal contribution, using only the scalar coalition path.
    fn brute_force<R: Regressor>(model: &R, x: &[f64], bg: &BackgroundSet) -> Vec<f64> {
        let m = x.len();
        let mut cache: HashMap<Vec<usize>, f64> = HashMap::new();
        let mut value = |set: &[usize]| {
            let mut key = set.to_vec();
            key.sort_unstable();
            *cache
                .entry(key.clone())
                .or_insert_with(|| coalition_value(model, x, &key, bg))
        };
        let mut phi = vec![0.0; m];
        let mut perm: Vec<usize> = (0..m).collect();
        let mut count = 0usize;
        permute(&mut perm, 0, &mut |p| {
            count += 1;
            for k in 0..m {
                phi[p[k]] += value(&p[..=k]) - value(&p[..k]);
            }
        });
        phi.iter().map(|v| v / count as f64).collect()
    }

    fn permute(p: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == p.len() {
            f(p);
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            permute(p, k + 1, f);
            p.swap(k, i);
        }
    }

    #[test]
    fn full_and_empty_coalitions() {
        let f = FnModel {
            n_features: 2,
            f: |x: &[f64]| x[0] * x[1] + x[0],
        };
        let bg = background(10, 2, 1);
        let x = [0.5, -1.5];
        assert!((coalition_value(&f, &x, &[0, 1], &bg) - f.predict_row(&x)).abs() < 1e-15);
        let mean: f64 = bg
            .rows()
            .rows()
            .into_iter()
            .map(|r| f.predict_row(r.as_slice().unwrap()))
            .sum::<f64>()
            / 10.0;
        assert!((coalition_value(&f, &x, &[], &bg) - mean).abs() < 1e-12);
    }

    #[test]
    fn linear_coalition_value() {
        let w = [1.5, -2.0, 0.5];
        let f = FnModel {
            n_features: 3,
            f: move |x: &[f64]| x.iter().zip(&w).map(|(a, b)| a * b).sum(),
        };
        let bg = background(25, 3, 2);
        let means = bg.column_means();
        let x = [1.0, 2.0, 3.0];
        let want = w[0] * x[0] + w[1] * means[1] + w[2] * means[2];
        assert!((coalition_value(&f, &x, &[0], &bg) - want).abs() < 1e-12);
        let mut scratch = bg.rows().clone();
        assert!((coalition_value_batched(&f, &x, 0b001, &bg, &mut scratch) - want).abs() < 1e-12);
    }

    #[test]
    fn linear_closed_form() {
        let f = FnModel {
            n_features: 2,
            f: |x: &[f64]| 2.0 * x[0] + 3.0 * x[1],
        };
        let bg = background(40, 2, 3);
        let means = bg.column_means();
        let x = [0.7, -1.1];
        let phi = shap_exact(&f, &x, &bg).unwrap();
        assert!((phi[0] - 2.0 * (x[0] - means[0])).abs() < 1e-9);
        assert!((phi[1] - 3.0 * (x[1] - means[1])).abs() < 1e-9);
    }

    #[test]
    fn dummy_feature_gets_zero() {
        let f = FnModel {
            n_features: 3,
            f: |x: &[f64]| (x[0] * x[2]).sin(),
        };
        let bg = background(20, 3, 4);
        let phi = shap_exact(&f, &[0.3, 1.7, -0.4], &bg).unwrap();
        assert!(phi[1].abs() < 1e-9);
    }

    #[test]
    fn symmetric_features_share_credit() {
        let f = FnModel {
            n_features: 3,
            f: |x: &[f64]| x[0] * x[1] + x[2],
        };
        // Mirror the background so columns 0 and 1 are exchangeable.
        let base = background(10, 3, 5);
        let mut rows = base.rows().clone();
        let mut swapped = base.rows().clone();
        swapped.column_mut(0).assign(&base.rows().column(1));
        swapped.column_mut(1).assign(&base.rows().column(0));
        rows.append(ndarray::Axis(0), swapped.view()).unwrap();
        let bg = BackgroundSet::new(rows).unwrap();
        let phi = shap_exact(&f, &[0.8, 0.8, 0.1], &bg).unwrap();
        assert!((phi[0] - phi[1]).abs() < 1e-9);
    }

    #[test]
    fn forest_matches_permutation_brute_force() {
        let mut rng = RngSeed(6).rng();
        let x = Array2::from_shape_fn((200, 4), |_| rng.random_range(-1.0..1.0));
        let y = x.column(0).mapv(|v| v * 2.0) + x.column(1).mapv(|v| v * v) - x.column(2);
        let p = ForestParams {
            n_trees: 10,
            max_depth: Some(5),
            max_features: MaxFeatures::All,
            ..Default::default()
        };
        let forest = RandomForest::fit(x.view(), y.view(), &p, RngSeed(1)).unwrap();
        let bg = background(15, 4, 7);
        for r in 0..3 {
            let s = x.row(r).to_vec();
            let phi = shap_exact(&forest, &s, &bg).unwrap();
            let oracle = brute_force(&forest, &s, &bg);
            for (a, b) in phi.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-9, "{phi:?} vs {oracle:?}");
            }
            let full = forest.predict_row(&s) - coalition_value(&forest, &s, &[], &bg);
            assert!((phi.iter().sum::<f64>() - full).abs() < 1e-9);
        }
    }

    #[test]
    fn refuses_beyond_limit() {
        let f = FnModel {
            n_features: 16,
            f: |x: &[f64]| x[0],
        };
        let bg = background(2, 16, 8);
        assert!(matches!(shap_exact(&f, &[0.0; 16], &bg), Err(Error::Capacity(_))));
    }
}
