use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Grn, MrProfileSet};
use crate::baselines::average_ranks;
use crate::data::{Condition, ExpressionMatrix};
use crate::error::{Error, Result};
use crate::rng::RngSeed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    pub n_cells: usize,
    pub noise_scale: f64,
    pub dt: f64,
    /// Burn-in stops once no gene moves more than this in one step.
    pub tolerance: f64,
    pub max_burn_in_steps: usize,
    /// Stochastic steps each cell runs from the burn-in state before sampling.
    pub sample_steps: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            n_cells: 1000,
            noise_scale: 0.5,
            dt: 0.01,
            tolerance: 1e-4,
            max_burn_in_steps: 100_000,
            sample_steps: 1500,
        }
    }
}

/// Compiled network: per gene either an MR (rate per cell type) or a list of
/// (regulator, strength, hill, half_max^hill) terms.
struct Kinetics {
    mr_rates: Vec<Option<Vec<f64>>>,
    terms: Vec<Vec<(usize, f64, f64, f64)>>,
}

fn hill(x: f64, n: f64, hn: f64) -> f64 {
    let xn = if n == 2.0 { x * x } else { x.powf(n) };
    if xn + hn == 0.0 {
        0.0
    } else {
        xn / (xn + hn)
    }
}

impl Kinetics {
    fn production(&self, g: usize, cell_type: usize, x: &[f64]) -> f64 {
        match &self.mr_rates[g] {
            Some(r) => r[cell_type],
            None => self.terms[g]
                .iter()
                .map(|&(reg, k, n, hn)| {
                    let h = hill(x[reg], n, hn);
                    if k > 0.0 {
                        k * h
                    } else {
                        -k * (1.0 - h)
                    }
                })
                .sum(),
        }
    }

    /// Half-max of each regulator is its mean noiseless level across cell
    /// types; the DAG lets both be solved in one topological pass.
    fn compile(grn: &Grn, profiles: &MrProfileSet) -> Result<(Kinetics, Vec<Vec<f64>>)> {
        let n = grn.genes().len();
        let k = profiles.n_cell_types();
        let mut mr_rates = vec![None; n];
        for (g, gene) in grn.genes().iter().enumerate() {
            if grn.is_master_regulator(g) {
                let rates = (0..k)
                    .map(|c| profiles.rate(c, gene))
                    .collect::<Option<Vec<f64>>>()
                    .ok_or_else(|| Error::invalid(format!("no MR profile rate for {gene}")))?;
                mr_rates[g] = Some(rates);
            }
        }
        let mut kin = Kinetics {
            mr_rates,
            terms: vec![Vec::new(); n],
        };
        let mut fixed = vec![vec![0.0; n]; k];
        let mut half = vec![0.0f64; n];
        for &g in grn.topological_order() {
            kin.terms[g] = grn
                .incoming(g)
                .map(|e| {
                    let r = grn.gene_index(&e.regulator).expect("validated");
                    (r, e.strength, e.hill, half[r].max(1e-12).powf(e.hill))
                })
                .collect();
            for (c, x) in fixed.iter_mut().enumerate() {
                x[g] = kin.production(g, c, x);
            }
            half[g] = fixed.iter().map(|x| x[g]).sum::<f64>() / k as f64;
        }
        Ok((kin, fixed))
    }
}

/// Noiseless Euler integration from zero until every per-step change is
/// below the tolerance.
fn burn_in(kin: &Kinetics, grn: &Grn, cell_type: usize, p: &SimParams) -> Result<Vec<f64>> {
    let n = grn.genes().len();
    let mut x = vec![0.0; n];
    let mut next = vec![0.0; n];
    for _ in 0..p.max_burn_in_steps {
        let mut max_step = 0.0f64;
        for g in 0..n {
            let d = p.dt * (kin.production(g, cell_type, &x) - x[g]);
            next[g] = (x[g] + d).max(0.0);
            max_step = max_step.max(d.abs());
        }
        std::mem::swap(&mut x, &mut next);
        if max_step < p.tolerance {
            return Ok(x);
        }
    }
    let mut slow: Vec<(f64, usize)> = (0..n)
        .map(|g| ((p.dt * (kin.production(g, cell_type, &x) - x[g])).abs(), g))
        .collect();
    slow.sort_by(|a, b| b.0.total_cmp(&a.0));
    Err(Error::Simulation {
        steps: p.max_burn_in_steps,
        genes: slow.iter().take(5).map(|(_, g)| grn.genes()[*g].clone()).collect(),
    })
}

/// Analytic noiseless steady state per cell type (rows) and gene (columns).
pub fn noiseless_steady_state(grn: &Grn, profiles: &MrProfileSet) -> Result<Vec<Vec<f64>>> {
    Ok(Kinetics::compile(grn, profiles)?.1)
}

/// One steady-state sample per cell: dx = (P(x) − x) dt + σ·sqrt(P + x) dW,
/// reflected at zero. Cell `c` belongs to cell type `c mod n_types`.
pub fn simulate_expression(
    grn: &Grn,
    profiles: &MrProfileSet,
    params: &SimParams,
    condition: Condition,
    seed: RngSeed,
) -> Result<ExpressionMatrix> {
    if params.n_cells == 0 || !(params.noise_scale >= 0.0) || !(params.dt > 0.0) {
        return Err(Error::invalid("need n_cells >= 1, noise_scale >= 0 and dt > 0"));
    }
    let (kin, _) = Kinetics::compile(grn, profiles)?;
    let k = profiles.n_cell_types();
    let starts = (0..k)
        .map(|c| burn_in(&kin, grn, c, params))
        .collect::<Result<Vec<_>>>()?;
    let n = grn.genes().len();
    let sqrt_dt = params.dt.sqrt();

    let cell = |c: usize| -> Vec<f64> {
        let ct = c % k;
        let mut rng = seed.derive_index("cell", c as u64).rng();
        let mut x = starts[ct].clone();
        let mut next = vec![0.0; n];
        for _ in 0..params.sample_steps {
            for g in 0..n {
                let prod = kin.production(g, ct, &x);
                let mut v = x[g] + params.dt * (prod - x[g]);
                if params.noise_scale > 0.0 {
                    let z: f64 = rng.sample(StandardNormal);
                    v += params.noise_scale * (prod + x[g]).max(0.0).sqrt() * z * sqrt_dt;
                }
                next[g] = v.abs();
            }
            std::mem::swap(&mut x, &mut next);
        }
        x
    };

    #[cfg(feature = "parallel")]
    let cells: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        (0..params.n_cells).into_par_iter().map(cell).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let cells: Vec<Vec<f64>> = (0..params.n_cells).map(cell).collect();

    let values = Array2::from_shape_fn((n, params.n_cells), |(g, c)| cells[c][g]);
    let bad: Vec<String> = (0..n)
        .filter(|&g| values.row(g).iter().any(|v| !v.is_finite()))
        .map(|g| grn.genes()[g].clone())
        .collect();
    if !bad.is_empty() {
        return Err(Error::Simulation {
            steps: params.sample_steps,
            genes: bad,
        });
    }
    let cell_ids = (0..params.n_cells)
        .map(|c| format!("{}_{c}", condition.label()))
        .collect();
    ExpressionMatrix::new(grn.genes().to_vec(), cell_ids, values, condition)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Per-entry dropout probabilities sigmoid(shape·(offset − percentile)),
/// with the offset bisected so their mean equals `level`.
pub fn dropout_probabilities(values: &Array2<f64>, level: f64, shape: f64) -> Result<Array2<f64>> {
    if !(0.0..=0.95).contains(&level) || !(shape > 0.0) {
        return Err(Error::invalid(
            "dropout level must lie in [0, 0.95] and shape must be positive",
        ));
    }
    let flat: Vec<f64> = values.iter().copied().collect();
    let n = flat.len() as f64;
    let pct: Vec<f64> = average_ranks(&flat).into_iter().map(|r| r / n).collect();
    let mean_p = |off: f64| pct.iter().map(|q| sigmoid(shape * (off - q))).sum::<f64>() / n;
    let (mut lo, mut hi) = (-1.0 - 40.0 / shape, 2.0 + 40.0 / shape);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_p(mid) < level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let off = 0.5 * (lo + hi);
    let p: Vec<f64> = pct.iter().map(|q| sigmoid(shape * (off - q))).collect();
    Ok(Array2::from_shape_vec(values.raw_dim(), p).expect("same size"))
}

pub const DEFAULT_DROPOUT_SHAPE: f64 = 8.0;

/// Zero entries at random, preferring lowly expressed ones.
pub fn apply_dropout(matrix: &ExpressionMatrix, level: f64, shape: f64, seed: RngSeed) -> Result<ExpressionMatrix> {
    let probs = dropout_probabilities(matrix.values(), level, shape)?;
    if level == 0.0 {
        return Ok(matrix.clone());
    }
    let mut rng = seed.rng();
    let mut values = matrix.values().clone();
    for (v, p) in values.iter_mut().zip(probs.iter()) {
        if rng.random::<f64>() < *p {
            *v = 0.0;
        }
    }
    matrix.with_values(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::spearman;
    use crate::simulator::{random_grn, Edge, RandomGrnSpec};

    fn one_edge(k: f64, n: f64) -> (Grn, MrProfileSet) {
        let grn = Grn::new(
            vec!["m".into(), "t".into()],
            vec![Edge {
                regulator: "m".into(),
                target: "t".into(),
                strength: k,
                hill: n,
            }],
        )
        .unwrap();
        let prof = MrProfileSet::new(vec!["m".into()], vec![vec![1.5], vec![3.0]]).unwrap();
        (grn, prof)
    }

    #[test]
    fn noiseless_matches_closed_form() {
        for (k, n) in [(2.0, 2.0), (-3.0, 1.5)] {
            let (grn, prof) = one_edge(k, n);
            let p = SimParams {
                n_cells: 4,
                noise_scale: 0.0,
                ..Default::default()
            };
            let m = simulate_expression(&grn, &prof, &p, Condition::Case, RngSeed(0)).unwrap();
            // Decay 1: x_m = rate, x_t = Σ production at x_m, half-max = mean MR level.
            let h: f64 = (1.5 + 3.0) / 2.0;
            for c in 0..4 {
                let b: f64 = [1.5, 3.0][c % 2];
                let hv = b.powf(n) / (h.powf(n) + b.powf(n));
                let expect = if k > 0.0 { k * hv } else { -k * (1.0 - hv) };
                assert!((m.values()[[0, c]] - b).abs() < 1e-6);
                assert!(
                    (m.values()[[1, c]] - expect).abs() < 1e-6,
                    "{} vs {expect}",
                    m.values()[[1, c]]
                );
            }
        }
    }

    #[test]
    fn mr_mean_matches_rate_without_noise() {
        let grn = random_grn(&RandomGrnSpec::default(), RngSeed(1)).unwrap();
        let prof = MrProfileSet::new(grn.master_regulators().to_vec(), vec![vec![2.5; 10]]).unwrap();
        let p = SimParams {
            n_cells: 5,
            noise_scale: 0.0,
            ..Default::default()
        };
        let m = simulate_expression(&grn, &prof, &p, Condition::Control, RngSeed(0)).unwrap();
        for mr in grn.master_regulators() {
            let mean = m.gene_row(mr).unwrap().mean().unwrap();
            assert!((mean - 2.5).abs() / 2.5 < 0.05);
        }
        let fixed = noiseless_steady_state(&grn, &prof).unwrap();
        for (g, v) in fixed[0].iter().enumerate() {
            assert!((m.values()[[g, 0]] - v).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_nonnegative_and_deterministic() {
        let grn = random_grn(&RandomGrnSpec::default(), RngSeed(1)).unwrap();
        let prof = MrProfileSet::new(grn.master_regulators().to_vec(), vec![vec![2.0; 10]]).unwrap();
        let p = SimParams {
            n_cells: 3000,
            sample_steps: 50,
            ..Default::default()
        };
        let a = simulate_expression(&grn, &prof, &p, Condition::Case, RngSeed(3)).unwrap();
        assert_eq!(a.n_cells(), 3000);
        assert!(a.values().iter().all(|v| *v >= 0.0));
        let p = SimParams { n_cells: 50, ..p };
        let b = simulate_expression(&grn, &prof, &p, Condition::Case, RngSeed(3)).unwrap();
        let c = simulate_expression(&grn, &prof, &p, Condition::Case, RngSeed(3)).unwrap();
        assert_eq!(b, c);
    }

    #[test]
    fn burn_in_failure_names_genes() {
        let (grn, prof) = one_edge(2.0, 2.0);
        let p = SimParams {
            max_burn_in_steps: 10,
            ..Default::default()
        };
        assert!(matches!(
            simulate_expression(&grn, &prof, &p, Condition::Case, RngSeed(0)),
            Err(Error::Simulation { steps: 10, .. })
        ));
    }

    fn random_matrix() -> ExpressionMatrix {
        let mut rng = RngSeed(8).rng();
        let v = Array2::from_shape_fn((40, 200), |_| rng.random_range(0.1..5.0f64));
        let g = (0..40).map(|i| format!("g{i}")).collect();
        let c = (0..200).map(|i| format!("c{i}")).collect();
        ExpressionMatrix::new(g, c, v, Condition::Case).unwrap()
    }

    #[test]
    fn dropout_level_and_direction() {
        let m = random_matrix();
        assert_eq!(apply_dropout(&m, 0.0, DEFAULT_DROPOUT_SHAPE, RngSeed(1)).unwrap(), m);
        for level in [0.1, 0.3, 0.5, 0.7] {
            let d = apply_dropout(&m, level, DEFAULT_DROPOUT_SHAPE, RngSeed(1)).unwrap();
            let zeros = d.values().iter().filter(|v| **v == 0.0).count() as f64 / 8000.0;
            assert!((zeros - level).abs() <= 0.02, "{level}: {zeros}");
        }
        let d = apply_dropout(&m, 0.3, DEFAULT_DROPOUT_SHAPE, RngSeed(2)).unwrap();
        let mag: Vec<f64> = m.values().iter().copied().collect();
        let survived: Vec<f64> = d.values().iter().map(|v| f64::from(u8::from(*v != 0.0))).collect();
        assert!(spearman(&mag, &survived).unwrap() > 0.0);
        assert!(apply_dropout(&m, 0.96, 8.0, RngSeed(0)).is_err());
    }
}
