//! d-separation on small DAGs via the moralized ancestral graph. Only used to
//! classify fixtures; the lemma checks themselves are numeric.

use std::collections::BTreeSet;

/// Directed graph given as parent lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dag {
    parents: Vec<BTreeSet<usize>>,
}

impl Dag {
    pub fn from_parents(parents: &[Vec<usize>]) -> Self {
        Dag {
            parents: parents.iter().map(|p| p.iter().copied().collect()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    /// Graph with every edge into `set` removed.
    pub fn cut_incoming(&self, set: &BTreeSet<usize>) -> Dag {
        let mut g = self.clone();
        for &v in set {
            g.parents[v].clear();
        }
        g
    }

    /// Graph with every edge out of `set` removed.
    pub fn cut_outgoing(&self, set: &BTreeSet<usize>) -> Dag {
        let mut g = self.clone();
        for ps in &mut g.parents {
            ps.retain(|p| !set.contains(p));
        }
        g
    }

    fn ancestors(&self, seeds: &BTreeSet<usize>) -> BTreeSet<usize> {
        let mut out = seeds.clone();
        let mut stack: Vec<usize> = seeds.iter().copied().collect();
        while let Some(v) = stack.pop() {
            for &p in &self.parents[v] {
                if out.insert(p) {
                    stack.push(p);
                }
            }
        }
        out
    }

    /// Whether `xs` and `ys` are d-separated given `zs`.
    pub fn d_separated(&self, xs: &BTreeSet<usize>, ys: &BTreeSet<usize>, zs: &BTreeSet<usize>) -> bool {
        if xs.is_empty() || ys.is_empty() {
            return true;
        }
        if !xs.is_disjoint(ys) {
            return false;
        }
        let keep = self.ancestors(&xs.union(ys).chain(zs).copied().collect());
        let n = self.len();
        let mut adj = vec![BTreeSet::new(); n];
        for &v in &keep {
            let ps: Vec<usize> = self.parents[v].iter().copied().collect();
            for (k, &p) in ps.iter().enumerate() {
                adj[v].insert(p);
                adj[p].insert(v);
                for &q in &ps[k + 1..] {
                    adj[p].insert(q);
                    adj[q].insert(p);
                }
            }
        }
        let mut seen: BTreeSet<usize> = xs.clone();
        let mut stack: Vec<usize> = xs.iter().copied().collect();
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if zs.contains(&w) || !keep.contains(&w) {
                    continue;
                }
                if ys.contains(&w) {
                    return false;
                }
                if seen.insert(w) {
                    stack.push(w);
                }
            }
        }
        true
    }
}
