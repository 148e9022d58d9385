//! WebAssembly bindings behind the static page in `www/`. Every export returns
//! a JSON string; the plain Rust functions underneath are what the tests call.

use cimla::attribution::{shap_exact, BackgroundSet};
use cimla::baselines::{correlation_tables, zscore_diff, CorrelationMethod};
use cimla::differential::RankingMode;
use cimla::evaluation::{auprc_normalized, auroc, roc_svg, universe, RankedEdgeList};
use cimla::models::{FnModel, ForestGrid, ForestParams};
use cimla::oracle::{ate, DiscreteScm, InterventionSpec, Variable};
use cimla::pipeline::{run_cimla, CimlaConfig};
use cimla::simulator::{simulate_dataset, ConfoundingMode, SimulationSpec};
use cimla::{Error, Result, RngSeed};
use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    r.map(|v| serde_json::to_string(&v).expect("plain data serializes"))
        .map_err(|e| JsError::new(&e.to_string()))
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

/// Comma- or space-separated numbers.
pub fn parse_numbers(text: &str) -> Result<Vec<f64>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| invalid(format!("not a number: {t}"))))
        .collect()
}

#[derive(Debug, Serialize)]
pub struct ShapleyView {
    pub prediction: f64,
    pub baseline: f64,
    pub phi: Vec<f64>,
    /// w_i (x_i − background mean); equals φ when there is no interaction.
    pub additive_part: Vec<f64>,
}

/// Exact interventional Shapley values of f(x) = w·x + c·x₀x₁ against 64
/// standard-normal background rows.
pub fn explain(weights: &[f64], interaction: f64, x: &[f64]) -> Result<ShapleyView> {
    let m = weights.len();
    if m == 0 || m > 10 || x.len() != m {
        return Err(invalid(format!(
            "need 1 to 10 weights and as many feature values (got {m} and {})",
            x.len()
        )));
    }
    let mut rng = RngSeed(7).rng();
    let rows = Array2::from_shape_fn((64, m), |_| -> f64 { rng.sample(StandardNormal) });
    let c = if m > 1 { interaction } else { 0.0 };
    let w = weights.to_vec();
    let model = FnModel {
        n_features: m,
        f: move |z: &[f64]| {
            w.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + if z.len() > 1 { c * z[0] * z[1] } else { 0.0 }
        },
    };
    let bg = BackgroundSet::new(rows)?;
    let means = bg.column_means();
    let phi = shap_exact(&model, x, &bg)?;
    let baseline = bg
        .rows()
        .rows()
        .into_iter()
        .map(|r| (model.f)(&r.to_vec()))
        .sum::<f64>()
        / bg.len() as f64;
    Ok(ShapleyView {
        prediction: (model.f)(x),
        baseline,
        phi,
        additive_part: weights
            .iter()
            .zip(x)
            .zip(&means)
            .map(|((w, x), m)| w * (x - m))
            .collect(),
    })
}

#[wasm_bindgen]
pub fn shapley_explain(weights: &str, interaction: f64, x: &str) -> std::result::Result<String, JsError> {
    to_js(parse_numbers(weights).and_then(|w| explain(&w, interaction, &parse_numbers(x)?)))
}

#[derive(Debug, Serialize)]
pub struct ConfoundingView {
    /// E[Y | do(x=1)] − E[Y | do(x=0)].
    pub ate: f64,
    /// E[Y | x=1] − E[Y | x=0].
    pub observed_difference: f64,
    /// Observed difference adjusted for w.
    pub adjusted_difference: f64,
}

/// Binary SCM: latent z drives x and w, and y depends on x and w.
pub fn confounding(strength: f64, effect: f64) -> Result<ConfoundingView> {
    if !(0.0..1.0).contains(&strength) || !(0.0..=1.0).contains(&effect) {
        return Err(invalid("strength must lie in [0, 1) and effect in [0, 1]"));
    }
    let (lo, hi) = (0.5 - strength / 2.0, 0.5 + strength / 2.0);
    let follows_z = || vec![vec![hi, lo], vec![lo, hi]];
    let p_y = |x: f64, w: f64| 0.1 + 0.4 * effect * x + 0.4 * w;
    let y_rows = [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)]
        .iter()
        .map(|&(x, w)| vec![1.0 - p_y(x, w), p_y(x, w)])
        .collect();
    let binary = || vec![0.0, 1.0];
    let scm = DiscreteScm::new(
        vec![
            Variable::new("z", binary(), &[], vec![vec![0.5, 0.5]]).latent(),
            Variable::new("x", binary(), &["z"], follows_z()),
            Variable::new("w", binary(), &["z"], follows_z()),
            Variable::new("y", binary(), &["x", "w"], y_rows),
        ],
        "y",
    )?;
    let cond = |pairs: &[(&str, f64)]| scm.conditional_expectation(&InterventionSpec::new(pairs));
    let p_w = scm.marginal(scm.index("w").expect("declared"))?;
    let mut adjusted = 0.0;
    for (k, pw) in p_w.iter().enumerate() {
        let w = k as f64;
        adjusted += pw * (cond(&[("x", 1.0), ("w", w)])? - cond(&[("x", 0.0), ("w", w)])?);
    }
    Ok(ConfoundingView {
        ate: ate(&scm, "x")?,
        observed_difference: cond(&[("x", 1.0)])? - cond(&[("x", 0.0)])?,
        adjusted_difference: adjusted,
    })
}

#[wasm_bindgen]
pub fn confounding_demo(strength: f64, effect: f64) -> std::result::Result<String, JsError> {
    to_js(confounding(strength, effect))
}

#[derive(Debug, Serialize)]
pub struct MethodScore {
    pub method: String,
    pub auroc: f64,
    pub normalized_auprc: f64,
    pub roc_svg: String,
}

#[derive(Debug, Serialize)]
pub struct BenchView {
    pub genes: usize,
    pub tfs: usize,
    pub differential_edges: usize,
    pub methods: Vec<MethodScore>,
}

/// Simulates a 20-gene network pair and scores CIMLA (forest) and the z-score
/// baseline against the known differential edges.
pub fn benchmark(confounding: &str, seed: u64, n_cells: usize) -> Result<BenchView> {
    let mode = match confounding {
        "low" => ConfoundingMode::low(),
        "high" => ConfoundingMode::high(),
        other => return Err(invalid(format!("confounding must be low or high, got {other}"))),
    };
    let mut spec = SimulationSpec {
        confounding: mode,
        ..SimulationSpec::default()
    };
    spec.reference.n_genes = 20;
    spec.reference.n_master_regulators = 4;
    spec.reference.n_secondary_tfs = 2;
    spec.reference.n_edges = 40;
    spec.sim.n_cells = n_cells.clamp(100, 600);
    let seed = RngSeed(seed);
    let ds = simulate_dataset(&spec, seed)?;
    let targets = ds.case.gene_ids().to_vec();
    let uni = universe(&ds.tfs, &targets);

    let mut cfg = CimlaConfig {
        forest: ForestGrid::single(ForestParams {
            n_trees: 10,
            max_depth: Some(6),
            ..ForestParams::default()
        }),
        max_samples: Some(60),
        n_shuffles: 0,
        ..CimlaConfig::default()
    };
    cfg.attribution.background_size = 16;
    let run = run_cimla(
        &ds.case,
        &ds.control,
        &ds.tfs,
        None,
        &cfg,
        seed.derive("cimla"),
        1,
        false,
    )?;
    let table = correlation_tables(&ds.case, &ds.control, &ds.tfs, &targets, CorrelationMethod::Pearson)?;
    let rankings = [
        ("CIMLA (forest)", run.table.ranking(RankingMode::Global)?),
        ("z-score (Pearson)", RankedEdgeList::new(zscore_diff(&table)?)?),
    ];
    let methods = rankings
        .into_iter()
        .map(|(name, r)| {
            Ok(MethodScore {
                method: name.to_string(),
                auroc: auroc(&r, &ds.truth, &uni)?,
                normalized_auprc: auprc_normalized(&r, &ds.truth, &uni)?.1,
                roc_svg: roc_svg(&r, &ds.truth, &uni)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchView {
        genes: targets.len(),
        tfs: ds.tfs.len(),
        differential_edges: ds.truth.len(),
        methods,
    })
}

#[wasm_bindgen]
pub fn benchmark_demo(confounding: &str, seed: u32, n_cells: u32) -> std::result::Result<String, JsError> {
    to_js(benchmark(confounding, u64::from(seed), n_cells as usize))
}
