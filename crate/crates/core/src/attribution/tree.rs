//! Exact interventional Shapley values for tree ensembles.
//!
//! For one foreground x and one background row b, a tree's prediction on a
//! composite vector is the value of the single leaf it reaches. A leaf is
//! reachable iff every split on its path admits the source (x or b) chosen for
//! that split's feature. Per leaf this leaves a set X_L of features that must
//! come from x and a set B_L that must come from b, so the leaf contributes
//! value · 1[X_L ⊆ S, B_L ∩ S = ∅] to the game, whose Shapley split is closed
//! form. Summing over reachable leaves, trees and background rows gives the
//! same numbers as full coalition enumeration.

use super::weights::block_weight;
use super::BackgroundSet;
use crate::error::{Error, Result};
use crate::models::tree::Node;
use crate::models::{RandomForest, Regressor};

const FROM_X: u8 = 1;
const FROM_B: u8 = 2;
const EITHER: u8 = FROM_X | FROM_B;

pub fn shap_tree(forest: &RandomForest, x: &[f64], background: &BackgroundSet) -> Result<Vec<f64>> {
    let m = forest.n_features();
    if x.len() != m || background.n_features() != m {
        return Err(Error::invalid("sample, model and background disagree on feature count"));
    }
    let mut walk = Walk {
        nodes: &[],
        x,
        b: vec![0.0; m],
        state: vec![EITHER; m],
        path: Vec::new(),
        n_x: 0,
        n_b: 0,
        scale: 0.0,
        phi: vec![0.0; m],
    };
    let per_tree = 1.0 / forest.trees.len() as f64;
    let rows = background.rows();
    for (r, b) in rows.rows().into_iter().enumerate() {
        walk.b.iter_mut().zip(b).for_each(|(d, v)| *d = *v);
        walk.scale = background.weight(r) * per_tree;
        for tree in &forest.trees {
            walk.nodes = &tree.nodes;
            walk.visit(0);
        }
    }
    Ok(walk.phi)
}

struct Walk<'a> {
    nodes: &'a [Node],
    x: &'a [f64],
    b: Vec<f64>,
    state: Vec<u8>,
    /// Features whose state is narrowed to a single source.
    path: Vec<usize>,
    n_x: usize,
    n_b: usize,
    scale: f64,
    phi: Vec<f64>,
}

impl Walk<'_> {
    fn visit(&mut self, i: usize) {
        match self.nodes[i] {
            Node::Leaf { value, .. } => {
                if self.n_x == 0 && self.n_b == 0 {
                    return;
                }
                let v = value * self.scale;
                let wx = if self.n_x > 0 {
                    block_weight(self.n_x, self.n_b)
                } else {
                    0.0
                };
                let wb = if self.n_b > 0 {
                    block_weight(self.n_b, self.n_x)
                } else {
                    0.0
                };
                for &f in &self.path {
                    if self.state[f] == FROM_X {
                        self.phi[f] += v * wx;
                    } else {
                        self.phi[f] -= v * wb;
                    }
                }
            }
            Node::Internal {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                let s = self.state[feature];
                let x_left = self.x[feature] <= threshold;
                let b_left = self.b[feature] <= threshold;
                for (child, goes_left) in [(left, true), (right, false)] {
                    let mut ns = 0;
                    if s & FROM_X != 0 && x_left == goes_left {
                        ns |= FROM_X;
                    }
                    if s & FROM_B != 0 && b_left == goes_left {
                        ns |= FROM_B;
                    }
                    if ns == 0 {
                        continue;
                    }
                    if ns == s {
                        self.visit(child);
                        continue;
                    }
                    // s == EITHER narrowed to one source.
                    self.state[feature] = ns;
                    self.path.push(feature);
                    if ns == FROM_X {
                        self.n_x += 1;
                    } else {
                        self.n_b += 1;
                    }
                    self.visit(child);
                    if ns == FROM_X {
                        self.n_x -= 1;
                    } else {
                        self.n_b -= 1;
                    }
                    self.path.pop();
                    self.state[feature] = s;
                }
            }
        }
    }
}
