//! CART regression trees (MSE criterion) stored as a flat node arena.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::ArrayView2;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        n_samples: usize,
        /// Decrease in summed squared error achieved by this split.
        variance_reduction: f64,
    },
    Leaf {
        value: f64,
        n_samples: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    /// Number of features considered per split.
    pub max_features: usize,
    pub min_samples_leaf: usize,
    pub max_leaves: Option<usize>,
}

impl DecisionTree {
    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value, .. } => return *value,
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Internal { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Grow a tree on the rows listed in `rows` (duplicates allowed, as in a
    /// bootstrap sample).
    pub fn fit(
        x: ArrayView2<'_, f64>,
        y: &[f64],
        rows: Vec<usize>,
        params: &TreeParams,
        rng: &mut Rng,
    ) -> DecisionTree {
        let m = x.ncols();
        let max_features = params.max_features.clamp(1, m);
        let min_leaf = params.min_samples_leaf.max(1);
        let mut nodes = vec![leaf_for(y, &rows)];
        let mut leaves = 1usize;

        // Best-first growth; without a leaf budget the expansion order does
        // not change the final tree shape.
        let mut heap = BinaryHeap::new();
        let mut order = 0usize;
        let mut push = |heap: &mut BinaryHeap<Pending>, node: usize, rows: Vec<usize>, depth: usize, rng: &mut Rng| {
            if params.max_depth.is_some_and(|d| depth >= d) || rows.len() < 2 * min_leaf {
                return;
            }
            let mut feats: Vec<usize> = if max_features >= m {
                (0..m).collect()
            } else {
                sample(rng, m, max_features).into_vec()
            };
            feats.sort_unstable();
            if let Some(split) = best_split(x, y, &rows, &feats, min_leaf) {
                heap.push(Pending {
                    gain: split.gain,
                    order,
                    node,
                    rows,
                    depth,
                    split,
                });
                order += 1;
            }
        };
        push(&mut heap, 0, rows, 0, rng);

        while let Some(p) = heap.pop() {
            if params.max_leaves.is_some_and(|ml| leaves >= ml) {
                break;
            }
            let Split {
                feature,
                threshold,
                gain,
                ..
            } = p.split;
            let (lrows, rrows): (Vec<usize>, Vec<usize>) = p.rows.iter().partition(|&&r| x[[r, feature]] <= threshold);
            let li = nodes.len();
            nodes.push(leaf_for(y, &lrows));
            nodes.push(leaf_for(y, &rrows));
            nodes[p.node] = Node::Internal {
                feature,
                threshold,
                left: li,
                right: li + 1,
                n_samples: p.rows.len(),
                variance_reduction: gain.max(0.0),
            };
            leaves += 1;
            push(&mut heap, li, lrows, p.depth + 1, rng);
            push(&mut heap, li + 1, rrows, p.depth + 1, rng);
        }
        DecisionTree { nodes }
    }

    /// Summed split gain per feature.
    pub fn raw_importance(&self, m: usize) -> Vec<f64> {
        let mut imp = vec![0.0; m];
        for n in &self.nodes {
            if let Node::Internal {
                feature,
                variance_reduction,
                ..
            } = n
            {
                imp[*feature] += variance_reduction;
            }
        }
        imp
    }
}

fn leaf_for(y: &[f64], rows: &[usize]) -> Node {
    let value = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64
    };
    Node::Leaf {
        value,
        n_samples: rows.len(),
    }
}

#[derive(Debug, Clone, Copy)]
struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

struct Pending {
    gain: f64,
    order: usize,
    node: usize,
    rows: Vec<usize>,
    depth: usize,
    split: Split,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain
            .total_cmp(&other.gain)
            .then_with(|| other.order.cmp(&self.order))
    }
}

/// Exhaustive MSE split search over the candidate features. Ties keep the
/// lowest feature index, then the lowest threshold.
fn best_split(x: ArrayView2<'_, f64>, y: &[f64], rows: &[usize], feats: &[usize], min_leaf: usize) -> Option<Split> {
    let n = rows.len();
    let total: f64 = rows.iter().map(|&r| y[r]).sum();
    let base = total * total / n as f64;
    let mut best: Option<Split> = None;
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
    for &f in feats {
        pairs.clear();
        pairs.extend(rows.iter().map(|&r| (x[[r, f]], y[r])));
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        if pairs[0].0 == pairs[n - 1].0 {
            continue;
        }
        let mut left_sum = 0.0;
        for k in 1..n {
            left_sum += pairs[k - 1].1;
            if pairs[k].0 == pairs[k - 1].0 || k < min_leaf || n - k < min_leaf {
                continue;
            }
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / k as f64 + right_sum * right_sum / (n - k) as f64 - base;
            if best.is_none_or(|b| gain > b.gain) {
                let (lo, hi) = (pairs[k - 1].0, pairs[k].0);
                let mut threshold = lo + (hi - lo) / 2.0;
                if threshold >= hi {
                    threshold = lo;
                }
                best = Some(Split {
                    feature: f,
                    threshold,
                    gain,
                });
            }
        }
    }
    best.filter(|b| b.gain > 1e-12 * (1.0 + base.abs()))
}
