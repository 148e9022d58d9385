use std::collections::BTreeSet;

use cimla::attribution::{shap_exact, shap_tree, BackgroundSet};
use cimla::baselines::zscore;
use cimla::data::{shuffle_condition_labels, split_indices, standardize, Condition, ExpressionMatrix};
use cimla::evaluation::{auroc_scores, average_precision};
use cimla::models::{ForestParams, RandomForest, Regressor};
use cimla::oracle::{random_conforming_scm, DiscreteScm, InterventionSpec, Variable};
use cimla::simulator::{random_grn, subsample_grn_pair, RandomGrnSpec};
use cimla::RngSeed;
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::Rng as _;

fn matrix(genes: usize, cells: usize, seed: u64) -> ExpressionMatrix {
    let mut rng = RngSeed(seed).rng();
    let v = Array2::from_shape_fn((genes, cells), |_| rng.random_range(-3.0..7.0));
    ExpressionMatrix::new(
        (0..genes).map(|g| format!("g{g}")).collect(),
        (0..cells).map(|c| format!("c{c}")).collect(),
        v,
        Condition::Case,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn standardize_is_idempotent(genes in 1usize..6, cells in 2usize..40, seed in any::<u64>()) {
        let m = matrix(genes, cells, seed);
        let (once, _) = standardize(&m).unwrap();
        let (twice, _) = standardize(&once).unwrap();
        for (a, b) in once.values().iter().zip(twice.values()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        // pure in its input
        let again = standardize(&m).unwrap().0;
        prop_assert_eq!(again.values(), once.values());
    }

    #[test]
    fn split_is_an_exact_partition(n in 2usize..500, frac in 0.05f64..0.95, seed in any::<u64>()) {
        let (train, test) = split_indices(n, frac, RngSeed(seed)).unwrap();
        prop_assert_eq!(train.len() + test.len(), n);
        let a: BTreeSet<usize> = train.iter().copied().collect();
        let b: BTreeSet<usize> = test.iter().copied().collect();
        prop_assert!(a.is_disjoint(&b));
        prop_assert_eq!(a.union(&b).count(), n);
        prop_assert_eq!(split_indices(n, frac, RngSeed(seed)).unwrap(), (train, test));
    }

    #[test]
    fn label_shuffle_keeps_cells_and_sizes(n1 in 2usize..30, n0 in 2usize..30, seed in any::<u64>()) {
        let case = matrix(3, n1, seed);
        let mut control = matrix(3, n0, seed ^ 1);
        control = ExpressionMatrix::new(
            control.gene_ids().to_vec(),
            (0..n0).map(|c| format!("d{c}")).collect(),
            control.values().clone(),
            Condition::Control,
        ).unwrap();
        let (a, b) = shuffle_condition_labels(&case, &control, RngSeed(seed)).unwrap();
        prop_assert_eq!(a.n_cells(), n1);
        prop_assert_eq!(b.n_cells(), n0);
        let before: BTreeSet<&String> = case.cell_ids().iter().chain(control.cell_ids()).collect();
        let after: BTreeSet<&String> = a.cell_ids().iter().chain(b.cell_ids()).collect();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn truth_and_shared_edges_cover_both_networks(f in 0.5f64..1.0, seed in 0u64..1000) {
        let spec = RandomGrnSpec { n_genes: 30, n_master_regulators: 5, n_secondary_tfs: 3, n_edges: 70, ..Default::default() };
        let reference = random_grn(&spec, RngSeed(seed)).unwrap();
        let (a, b, truth) = subsample_grn_pair(&reference, f, RngSeed(seed ^ 7)).unwrap();
        let ea = a.edge_keys();
        let eb = b.edge_keys();
        let shared: BTreeSet<_> = ea.intersection(&eb).cloned().collect();
        let union: BTreeSet<_> = ea.union(&eb).cloned().collect();
        let covered: BTreeSet<_> = truth.differential_edges.union(&shared).cloned().collect();
        prop_assert_eq!(covered, union);
        prop_assert!(truth.differential_edges.is_disjoint(&shared));
    }

    #[test]
    fn zscore_is_nonnegative_and_zero_only_for_equal_r(r1 in -0.99f64..0.99, r0 in -0.99f64..0.99, n1 in 4usize..500, n0 in 4usize..500) {
        let z = zscore(r1, r0, n1, n0).unwrap();
        prop_assert!(z >= 0.0);
        prop_assert_eq!(zscore(r1, r1, n1, n0).unwrap(), 0.0);
        if r1 != r0 {
            prop_assert!(z > 0.0);
        }
    }

    #[test]
    fn auroc_rank_invariance_and_reversal(
        scores in proptest::collection::vec(-100.0f64..100.0, 4..80),
        label_bits in any::<u64>(),
    ) {
        let n = scores.len();
        let mut labels: Vec<bool> = (0..n).map(|i| label_bits >> (i % 64) & 1 == 1).collect();
        labels[0] = true;
        labels[1] = false;
        let a = auroc_scores(&scores, &labels).unwrap();
        let transformed: Vec<f64> = scores.iter().map(|s| (s / 50.0).exp() * 3.0 - 1.0).collect();
        prop_assert!((a - auroc_scores(&transformed, &labels).unwrap()).abs() < 1e-12);
        let distinct: BTreeSet<u64> = scores.iter().map(|s| s.to_bits()).collect();
        if distinct.len() == n {
            let rev: Vec<f64> = scores.iter().map(|s| -s).collect();
            prop_assert!((a + auroc_scores(&rev, &labels).unwrap() - 1.0).abs() < 1e-12);
        }
        let perfect: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
        let prevalence = labels.iter().filter(|&&l| l).count() as f64 / n as f64;
        let ap = average_precision(&perfect, &labels).unwrap();
        prop_assert!((ap / prevalence - 1.0 / prevalence).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forest_attributions_are_efficient(m in 1usize..7, n_bg in 1usize..12, seed in any::<u64>()) {
        let mut rng = RngSeed(seed).rng();
        let x = Array2::from_shape_fn((60, m), |_| rng.random_range(-2.0f64..2.0));
        let y = Array1::from_shape_fn(60, |r| x[[r, 0]].sin() + x.row(r).sum() * 0.3 + rng.random_range(-0.1..0.1));
        let params = ForestParams { n_trees: 5, max_depth: Some(4), ..Default::default() };
        let forest = RandomForest::fit(x.view(), y.view(), &params, RngSeed(seed ^ 3)).unwrap();
        let bg = BackgroundSet::new(x.slice(ndarray::s![..n_bg, ..]).to_owned()).unwrap();
        let q: Vec<f64> = x.row(59).to_vec();
        let phi = shap_exact(&forest, &q, &bg).unwrap();
        let mean_b = bg.rows().rows().into_iter().map(|r| forest.predict_row(&r.to_vec())).sum::<f64>() / n_bg as f64;
        prop_assert!((phi.iter().sum::<f64>() - (forest.predict_row(&q) - mean_b)).abs() < 1e-9);
        let tree = shap_tree(&forest, &q, &bg).unwrap();
        for (a, b) in phi.iter().zip(&tree) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_do_is_observation_and_rule3_corollary(seed in 0u64..10_000, edge_p in 0.0f64..1.0) {
        let inst = random_conforming_scm(3, 2, edge_p, RngSeed(seed)).unwrap();
        let scm = &inst.scm;
        let obs = scm.conditional_expectation(&InterventionSpec::default()).unwrap();
        prop_assert!((scm.expectation_under_do(&InterventionSpec::default()).unwrap() - obs).abs() < 1e-12);

        // a descendant of y is d-separated from it once its incoming edges are cut
        let mut vars: Vec<Variable> = scm.variables().to_vec();
        vars.push(Variable::new("w", vec![0.0, 1.0], &["y"], vec![vec![0.3, 0.7], vec![0.6, 0.4], vec![0.9, 0.1]]));
        let ext = DiscreteScm::new(vars, "y").unwrap();
        let t: Vec<(&str, f64)> = inst.t_refs().into_iter().map(|n| (n, 1.0)).collect();
        let base = ext.expectation_under_do(&InterventionSpec::new(&t)).unwrap();
        let mut with_w = t.clone();
        with_w.push(("w", 1.0));
        let moved = ext.expectation_under_do(&InterventionSpec::new(&with_w)).unwrap();
        prop_assert!((base - moved).abs() < 1e-12);
    }
}
