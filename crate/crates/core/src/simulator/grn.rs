use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::EdgeKey;
use crate::rng::RngSeed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub regulator: String,
    pub target: String,
    /// Positive activates, negative represses.
    pub strength: f64,
    pub hill: f64,
}

/// Directed acyclic regulatory network. Master regulators are exactly the
/// genes without incoming edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grn {
    genes: Vec<String>,
    edges: Vec<Edge>,
    master_regulators: Vec<String>,
    /// Gene indices in a topological order.
    order: Vec<usize>,
    /// Incoming edge indices per gene.
    incoming: Vec<Vec<usize>>,
}

impl Grn {
    /// `genes` fixes the gene order; genes without regulators become MRs.
    pub fn new(genes: Vec<String>, edges: Vec<Edge>) -> Result<Self> {
        let index: BTreeMap<&str, usize> = genes.iter().enumerate().map(|(i, g)| (g.as_str(), i)).collect();
        if index.len() != genes.len() {
            return Err(Error::invalid("duplicate gene in GRN"));
        }
        let mut incoming = vec![Vec::new(); genes.len()];
        let mut outgoing = vec![Vec::new(); genes.len()];
        let mut seen = BTreeSet::new();
        for (k, e) in edges.iter().enumerate() {
            let (Some(&r), Some(&t)) = (index.get(e.regulator.as_str()), index.get(e.target.as_str())) else {
                return Err(Error::invalid(format!(
                    "edge {} -> {} names an unknown gene",
                    e.regulator, e.target
                )));
            };
            if !seen.insert((r, t)) {
                return Err(Error::invalid(format!(
                    "duplicate edge {} -> {}",
                    e.regulator, e.target
                )));
            }
            if !e.strength.is_finite() || e.strength == 0.0 || !(e.hill > 0.0 && e.hill.is_finite()) {
                return Err(Error::invalid(format!(
                    "edge {} -> {} needs nonzero strength and positive Hill coefficient",
                    e.regulator, e.target
                )));
            }
            incoming[t].push(k);
            outgoing[r].push(t);
        }
        // Kahn's algorithm, smallest index first for a stable order.
        let mut indeg: Vec<usize> = incoming.iter().map(Vec::len).collect();
        let mut ready: BTreeSet<usize> = (0..genes.len()).filter(|&g| indeg[g] == 0).collect();
        let mut order = Vec::with_capacity(genes.len());
        while let Some(g) = ready.pop_first() {
            order.push(g);
            for &t in &outgoing[g] {
                indeg[t] -= 1;
                if indeg[t] == 0 {
                    ready.insert(t);
                }
            }
        }
        if order.len() != genes.len() {
            let cyc: Vec<String> = (0..genes.len())
                .filter(|&g| indeg[g] > 0)
                .map(|g| genes[g].clone())
                .collect();
            return Err(Error::Constraint {
                message: "GRN contains a cycle".into(),
                genes: cyc,
            });
        }
        let master_regulators = (0..genes.len())
            .filter(|&g| incoming[g].is_empty())
            .map(|g| genes[g].clone())
            .collect();
        Ok(Grn {
            genes,
            edges,
            master_regulators,
            order,
            incoming,
        })
    }

    pub fn genes(&self) -> &[String] {
        &self.genes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn master_regulators(&self) -> &[String] {
        &self.master_regulators
    }

    pub fn is_master_regulator(&self, gene: usize) -> bool {
        self.incoming[gene].is_empty()
    }

    pub fn topological_order(&self) -> &[usize] {
        &self.order
    }

    pub fn incoming(&self, gene: usize) -> impl Iterator<Item = &Edge> {
        self.incoming[gene].iter().map(|&k| &self.edges[k])
    }

    pub fn gene_index(&self, gene: &str) -> Option<usize> {
        self.genes.iter().position(|g| g == gene)
    }

    /// Genes with at least one outgoing edge, in gene order.
    pub fn regulators(&self) -> Vec<String> {
        let r: BTreeSet<&str> = self.edges.iter().map(|e| e.regulator.as_str()).collect();
        self.genes.iter().filter(|g| r.contains(g.as_str())).cloned().collect()
    }

    pub fn edge_keys(&self) -> BTreeSet<EdgeKey> {
        self.edges
            .iter()
            .map(|e| (e.regulator.clone(), e.target.clone()))
            .collect()
    }

    /// Keep only the listed edges; gene set and MRs must not change.
    fn restrict(&self, keep: &[bool]) -> Result<Grn> {
        let edges = self
            .edges
            .iter()
            .zip(keep)
            .filter(|(_, k)| **k)
            .map(|(e, _)| e.clone())
            .collect();
        Grn::new(self.genes.clone(), edges)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("regulator\ttarget\tstrength\thill_coeff\n");
        for e in &self.edges {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", e.regulator, e.target, e.strength, e.hill);
        }
        out
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    /// Genes are taken in order of first appearance.
    pub fn parse_tsv(text: &str, path: &Path) -> Result<Grn> {
        let mut genes: Vec<String> = Vec::new();
        let mut known = BTreeSet::new();
        let mut edges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(err(format!("expected 4 fields, found {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number {s:?}")));
            let (strength, hill) = (num(f[2])?, num(f[3])?);
            for g in &f[..2] {
                if known.insert(g.to_string()) {
                    genes.push(g.to_string());
                }
            }
            edges.push(Edge {
                regulator: f[0].into(),
                target: f[1].into(),
                strength,
                hill,
            });
        }
        Grn::new(genes, edges)
    }

    pub fn read_tsv(path: impl AsRef<Path>) -> Result<Grn> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Grn::parse_tsv(&text, path)
    }
}

/// Shape of a random reference network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomGrnSpec {
    pub n_genes: usize,
    pub n_master_regulators: usize,
    /// Non-MR genes that may also regulate.
    pub n_secondary_tfs: usize,
    pub n_edges: usize,
    pub strength_range: (f64, f64),
    pub repressor_fraction: f64,
    pub hill: f64,
}

impl Default for RandomGrnSpec {
    fn default() -> Self {
        RandomGrnSpec {
            n_genes: 50,
            n_master_regulators: 10,
            n_secondary_tfs: 5,
            n_edges: 150,
            strength_range: (1.0, 5.0),
            repressor_fraction: 0.3,
            hill: 2.0,
        }
    }
}

/// Random DAG: genes `g0..`, the first `n_master_regulators` are MRs, the
/// next `n_secondary_tfs` are non-MR regulators. Each non-MR gene gets one
/// regulator from earlier in that order, then the remaining edges are added
/// uniformly among allowed pairs.
pub fn random_grn(spec: &RandomGrnSpec, seed: RngSeed) -> Result<Grn> {
    let n = spec.n_genes;
    let n_mr = spec.n_master_regulators;
    let n_tf = n_mr + spec.n_secondary_tfs;
    if n_mr == 0 || n_tf > n || n_mr >= n {
        return Err(Error::invalid("need 1 <= MRs < genes and MRs + secondary TFs <= genes"));
    }
    let allowed = |t: usize| -> Vec<usize> { (0..n_tf.min(t)).collect() };
    let max_edges: usize = (n_mr..n).map(|t| allowed(t).len()).sum();
    if spec.n_edges < n - n_mr || spec.n_edges > max_edges {
        return Err(Error::invalid(format!(
            "edge count must lie in [{}, {max_edges}] so every non-MR gene is regulated",
            n - n_mr
        )));
    }
    let mut rng = seed.rng();
    let mut pairs = BTreeSet::new();
    for t in n_mr..n {
        let a = allowed(t);
        pairs.insert((a[rng.random_range(0..a.len())], t));
    }
    let mut rest: Vec<(usize, usize)> = (n_mr..n)
        .flat_map(|t| allowed(t).into_iter().map(move |r| (r, t)))
        .filter(|p| !pairs.contains(p))
        .collect();
    rest.shuffle(&mut rng);
    pairs.extend(rest.into_iter().take(spec.n_edges - pairs.len()));
    let genes: Vec<String> = (0..n).map(|i| format!("g{i}")).collect();
    let (lo, hi) = spec.strength_range;
    let edges = pairs
        .into_iter()
        .map(|(r, t)| {
            let k = rng.random_range(lo..=hi);
            Edge {
                regulator: genes[r].clone(),
                target: genes[t].clone(),
                strength: if rng.random_bool(spec.repressor_fraction) {
                    -k
                } else {
                    k
                },
                hill: spec.hill,
            }
        })
        .collect();
    Grn::new(genes, edges)
}

/// Edges present in exactly one of the two networks.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DgrnTruth {
    pub differential_edges: BTreeSet<EdgeKey>,
    /// |E₁ ∩ E₀| / |E₁ ∪ E₀|.
    pub shared_fraction: f64,
}

impl DgrnTruth {
    pub fn new(differential_edges: BTreeSet<EdgeKey>, shared_fraction: f64) -> Self {
        DgrnTruth {
            differential_edges,
            shared_fraction,
        }
    }

    pub fn between(a: &Grn, b: &Grn) -> Self {
        let (ea, eb) = (a.edge_keys(), b.edge_keys());
        let union = ea.union(&eb).count();
        let shared = ea.intersection(&eb).count();
        DgrnTruth {
            differential_edges: ea.symmetric_difference(&eb).cloned().collect(),
            shared_fraction: if union == 0 { 1.0 } else { shared as f64 / union as f64 },
        }
    }

    pub fn contains(&self, regulator: &str, target: &str) -> bool {
        self.differential_edges
            .contains(&(regulator.to_string(), target.to_string()))
    }

    pub fn len(&self) -> usize {
        self.differential_edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.differential_edges.is_empty()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("regulator\ttarget\n");
        for (r, t) in &self.differential_edges {
            let _ = writeln!(out, "{r}\t{t}");
        }
        out
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    /// The shared fraction is not stored in the file and reads back as NaN.
    pub fn read_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut edges = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 2 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("expected 2 fields, found {}", f.len()),
                });
            }
            edges.insert((f[0].to_string(), f[1].to_string()));
        }
        Ok(DgrnTruth::new(edges, f64::NAN))
    }
}

const SUBSAMPLE_ATTEMPTS: u64 = 50;

/// Remove two disjoint random edge sets of size round(E·(1−f)/2), one per
/// condition, so that |E₁ ∩ E₀| / |E₁ ∪ E₀| ≈ f while every non-MR gene keeps
/// a regulator in both networks.
pub fn subsample_grn_pair(reference: &Grn, shared_fraction: f64, seed: RngSeed) -> Result<(Grn, Grn, DgrnTruth)> {
    if !(shared_fraction > 0.0 && shared_fraction <= 1.0) {
        return Err(Error::invalid("shared fraction must lie in (0, 1]"));
    }
    let e = reference.edges.len();
    let r = (e as f64 * (1.0 - shared_fraction) / 2.0).round() as usize;
    let target_of: Vec<usize> = reference
        .edges
        .iter()
        .map(|ed| reference.gene_index(&ed.target).expect("validated"))
        .collect();
    let indeg: Vec<usize> = (0..reference.genes.len())
        .map(|g| reference.incoming[g].len())
        .collect();

    let mut blocked = BTreeSet::new();
    for attempt in 0..SUBSAMPLE_ATTEMPTS {
        let mut rng = seed.derive_index("attempt", attempt).rng();
        let mut order: Vec<usize> = (0..e).collect();
        order.shuffle(&mut rng);
        // state: 0 kept by both, 1 removed from case, 2 removed from control
        let mut state = vec![0u8; e];
        let mut left = [indeg.clone(), indeg.clone()];
        let mut removed = [0usize; 2];
        for &k in &order {
            if removed[0] == r && removed[1] == r {
                break;
            }
            let g = target_of[k];
            let side = if removed[0] < removed[1] { [0, 1] } else { [1, 0] };
            for s in side {
                if removed[s] < r && left[s][g] > 1 {
                    left[s][g] -= 1;
                    removed[s] += 1;
                    state[k] = s as u8 + 1;
                    break;
                }
            }
        }
        if removed == [r, r] {
            let case = reference.restrict(&state.iter().map(|s| *s != 1).collect::<Vec<_>>())?;
            let control = reference.restrict(&state.iter().map(|s| *s != 2).collect::<Vec<_>>())?;
            let truth = DgrnTruth::between(&case, &control);
            return Ok((case, control, truth));
        }
        blocked.extend(
            (0..reference.genes.len())
                .filter(|&g| !reference.is_master_regulator(g) && (left[0][g] == 1 || left[1][g] == 1))
                .map(|g| reference.genes[g].clone()),
        );
    }
    Err(Error::Constraint {
        message: format!("cannot remove {r} edges per network while keeping every gene regulated"),
        genes: blocked.into_iter().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edge(r: &str, t: &str, k: f64) -> Edge {
        Edge {
            regulator: r.into(),
            target: t.into(),
            strength: k,
            hill: 2.0,
        }
    }

    #[test]
    fn validation() {
        let g = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let grn = Grn::new(g(&["a", "b", "c"]), vec![edge("a", "b", 1.0), edge("b", "c", -1.0)]).unwrap();
        assert_eq!(grn.master_regulators(), &["a".to_string()]);
        assert_eq!(grn.topological_order(), &[0, 1, 2]);
        let cyc = Grn::new(
            g(&["a", "b", "c"]),
            vec![edge("a", "b", 1.0), edge("b", "c", 1.0), edge("c", "b", 1.0)],
        );
        assert!(matches!(cyc, Err(Error::Constraint { .. })));
        assert!(Grn::new(g(&["a", "b"]), vec![edge("a", "b", 0.0)]).is_err());
        assert!(Grn::new(g(&["a", "b"]), vec![edge("a", "b", 1.0), edge("a", "b", 2.0)]).is_err());
    }

    #[test]
    fn random_grn_shape() {
        let spec = RandomGrnSpec::default();
        let grn = random_grn(&spec, RngSeed(1)).unwrap();
        assert_eq!(grn.edges().len(), 150);
        assert_eq!(grn.master_regulators().len(), 10);
        assert!(grn.regulators().len() <= 15);
        for g in 10..50 {
            assert!(grn.incoming(g).count() >= 1);
        }
        assert_eq!(grn, random_grn(&spec, RngSeed(1)).unwrap());
    }

    #[test]
    fn tsv_round_trip() {
        let grn = random_grn(&RandomGrnSpec::default(), RngSeed(3)).unwrap();
        let back = Grn::parse_tsv(&grn.to_tsv(), Path::new("x")).unwrap();
        assert_eq!(back.edge_keys(), grn.edge_keys());
        assert_eq!(back.master_regulators().len(), grn.master_regulators().len());
    }

    #[test]
    fn fraction_one_is_identity() {
        let grn = random_grn(&RandomGrnSpec::default(), RngSeed(2)).unwrap();
        let (a, b, t) = subsample_grn_pair(&grn, 1.0, RngSeed(0)).unwrap();
        assert_eq!(a, grn);
        assert_eq!(b, grn);
        assert!(t.is_empty());
        assert_eq!(t.shared_fraction, 1.0);
    }

    #[test]
    fn truth_is_symmetric_difference() {
        let grn = random_grn(&RandomGrnSpec::default(), RngSeed(2)).unwrap();
        let (a, b, t) = subsample_grn_pair(&grn, 0.8, RngSeed(5)).unwrap();
        let ea = a.edge_keys();
        let eb = b.edge_keys();
        let mut expected = BTreeSet::new();
        for k in ea.iter().chain(eb.iter()) {
            if ea.contains(k) != eb.contains(k) {
                expected.insert(k.clone());
            }
        }
        assert_eq!(t.differential_edges, expected);
        let shared: BTreeSet<_> = ea.intersection(&eb).cloned().collect();
        let lhs: BTreeSet<_> = t.differential_edges.union(&shared).cloned().collect();
        let rhs: BTreeSet<_> = ea.union(&eb).cloned().collect();
        assert_eq!(lhs, rhs);
        assert!((t.shared_fraction - 0.8).abs() <= 0.02);
        assert!(ea.is_subset(&grn.edge_keys()) && eb.is_subset(&grn.edge_keys()));
    }

    #[test]
    fn infeasible_fraction_names_genes() {
        let g: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let grn = Grn::new(g, vec![edge("a", "b", 1.0), edge("a", "c", 1.0)]).unwrap();
        match subsample_grn_pair(&grn, 0.3, RngSeed(0)) {
            Err(Error::Constraint { genes, .. }) => assert_eq!(genes, vec!["b".to_string(), "c".to_string()]),
            other => panic!("expected constraint error, got {other:?}"),
        }
    }

    #[test]
    fn desk_scale_fractions_are_achievable() {
        let spec = RandomGrnSpec {
            n_genes: 400,
            n_master_regulators: 20,
            n_secondary_tfs: 37,
            n_edges: 1155,
            ..Default::default()
        };
        let grn = random_grn(&spec, RngSeed(11)).unwrap();
        for f in [0.43, 0.94] {
            let (a, b, t) = subsample_grn_pair(&grn, f, RngSeed(1)).unwrap();
            assert!((t.shared_fraction - f).abs() <= 0.02, "{f}: {}", t.shared_fraction);
            for g in 0..400 {
                if !grn.is_master_regulator(g) {
                    assert!(a.incoming(g).count() >= 1 && b.incoming(g).count() >= 1);
                }
            }
        }
    }
}
