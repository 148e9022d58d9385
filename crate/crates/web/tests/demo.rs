use cimla_web::{benchmark, confounding, explain, parse_numbers};

#[test]
fn numbers_parse_with_commas_or_spaces() {
    assert_eq!(parse_numbers("1, -2.5 3").unwrap(), vec![1.0, -2.5, 3.0]);
    assert!(parse_numbers("1,x").is_err());
}

#[test]
fn additive_function_matches_closed_form() {
    let r = explain(&[1.5, -0.8, 0.6], 0.0, &[1.0, 0.5, -1.0]).unwrap();
    for (p, a) in r.phi.iter().zip(&r.additive_part) {
        assert!((p - a).abs() < 1e-12);
    }
    let with = explain(&[1.5, -0.8, 0.6], 2.0, &[1.0, 0.5, -1.0]).unwrap();
    let total: f64 = with.phi.iter().sum();
    assert!((total - (with.prediction - with.baseline)).abs() < 1e-12);
    // the interaction only touches the first two features
    assert!((with.phi[2] - r.phi[2]).abs() < 1e-12);
    assert!(explain(&[1.0], 0.0, &[1.0, 2.0]).is_err());
}

#[test]
fn confounding_biases_only_the_observed_difference() {
    let none = confounding(0.0, 0.5).unwrap();
    assert!((none.observed_difference - none.ate).abs() < 1e-12);
    let strong = confounding(0.8, 0.5).unwrap();
    assert!((strong.ate - 0.2).abs() < 1e-12);
    assert!(strong.observed_difference - strong.ate > 0.1);
    assert!((strong.adjusted_difference - strong.ate).abs() < 1e-12);
    assert!(confounding(1.0, 0.5).is_err());
}

#[test]
fn benchmark_scores_both_methods() {
    let r = benchmark("high", 1, 150).unwrap();
    assert_eq!(r.genes, 20);
    assert_eq!(r.methods.len(), 2);
    for m in &r.methods {
        assert!((0.0..=1.0).contains(&m.auroc));
        assert!(m.roc_svg.starts_with("<svg"));
    }
    assert!(benchmark("medium", 1, 150).is_err());
}
