use std::collections::HashMap;

use rand::seq::SliceRandom;

use super::{coalition_value_batched, BackgroundSet};
use crate::error::{Error, Result};
use crate::models::Regressor;
use crate::rng::RngSeed;

#[derive(Debug, Clone, PartialEq)]
pub struct SampledShap {
    pub values: Vec<f64>,
    /// Standard error of each estimate; NaN with a single permutation.
    pub std_errors: Vec<f64>,
}

/// Monte-Carlo Shapley values: each feature's marginal contribution averaged
/// over uniformly random orderings. Coalition values are memoized per call,
/// which changes cost but not the estimate.
pub fn shap_sampled<R: Regressor + ?Sized>(
    model: &R,
    x: &[f64],
    background: &BackgroundSet,
    n_permutations: usize,
    seed: RngSeed,
) -> Result<SampledShap> {
    let m = x.len();
    if n_permutations == 0 {
        return Err(Error::invalid("need at least one permutation"));
    }
    if m != model.n_features() || m != background.n_features() {
        return Err(Error::invalid("sample, model and background disagree on feature count"));
    }
    if m >= 64 {
        return Err(Error::Capacity(format!(
            "coalition masks support < 64 features, got {m}"
        )));
    }
    let mut rng = seed.rng();
    let mut scratch = background.rows().clone();
    let mut cache: HashMap<u64, f64> = HashMap::new();
    let mut value = |mask: u64| {
        *cache
            .entry(mask)
            .or_insert_with(|| coalition_value_batched(model, x, mask, background, &mut scratch))
    };
    let mut sum = vec![0.0; m];
    let mut sum_sq = vec![0.0; m];
    let mut order: Vec<usize> = (0..m).collect();
    for _ in 0..n_permutations {
        order.shuffle(&mut rng);
        let mut mask = 0u64;
        let mut prev = value(mask);
        for &j in &order {
            mask |= 1 << j;
            let next = value(mask);
            let d = next - prev;
            sum[j] += d;
            sum_sq[j] += d * d;
            prev = next;
        }
    }
    let n = n_permutations as f64;
    let values: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std_errors = values
        .iter()
        .zip(&sum_sq)
        .map(|(mean, sq)| {
            if n_permutations < 2 {
                f64::NAN
            } else {
                let var = ((sq - n * mean * mean) / (n - 1.0)).max(0.0);
                (var / n).sqrt()
            }
        })
        .collect();
    Ok(SampledShap { values, std_errors })
}
