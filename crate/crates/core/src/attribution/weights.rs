//! Structure-prior / Shapley weights 1 / (m · C(m−1, k)).

/// Exact binomial coefficient; exact for every n ≤ 60 (and far beyond).
pub fn binomial(n: u32, k: u32) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc · (n − i) is divisible by (i + 1) at every step.
        acc = acc * u128::from(n - i) / u128::from(i + 1);
    }
    acc
}

/// Weight table for one feature count `m`, indexed by coalition size.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapleyWeights {
    m: u32,
    denominators: Vec<u128>,
    weights: Vec<f64>,
}

impl ShapleyWeights {
    pub fn new(m: usize) -> Self {
        assert!(m >= 1 && m <= 60, "weights defined for 1 <= m <= 60");
        let m = m as u32;
        let denominators: Vec<u128> = (0..m).map(|k| u128::from(m) * binomial(m - 1, k)).collect();
        let weights = denominators.iter().map(|&d| 1.0 / d as f64).collect();
        ShapleyWeights {
            m,
            denominators,
            weights,
        }
    }

    pub fn m(&self) -> usize {
        self.m as usize
    }

    /// Exact denominator of the weight for a coalition of `k` other features.
    pub fn denominator(&self, k: usize) -> u128 {
        self.denominators[k]
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.weights[k]
    }
}

/// Shapley weight of the two-block game used by the per-tree path: the share
/// of a unit payoff that goes to one member of a group of `a` required players
/// when `c` forbidden players are also present, i.e. (a−1)! c! / (a+c)!.
pub fn block_weight(a: usize, c: usize) -> f64 {
    debug_assert!(a >= 1);
    let n = (a + c) as u32;
    1.0 / (f64::from(n) * binomial(n - 1, c as u32) as f64)
}
