use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest joint state space that will be enumerated.
pub const MAX_STATES: u128 = 10_000_000;

const CPT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    /// Real value of each domain state.
    pub domain: Vec<f64>,
    pub parents: Vec<String>,
    /// One row per parent configuration, first parent varying slowest.
    pub cpt: Vec<Vec<f64>>,
    pub latent: bool,
}

impl Variable {
    pub fn new(name: &str, domain: Vec<f64>, parents: &[&str], cpt: Vec<Vec<f64>>) -> Self {
        Variable {
            name: name.to_string(),
            domain,
            parents: parents.iter().map(|s| s.to_string()).collect(),
            cpt,
            latent: false,
        }
    }

    pub fn latent(mut self) -> Self {
        self.latent = true;
        self
    }
}

/// Discrete structural causal model with a designated outcome. Latent
/// variables may influence covariates but never the outcome directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteScm {
    vars: Vec<Variable>,
    parent_idx: Vec<Vec<usize>>,
    outcome: usize,
    order: Vec<usize>,
}

/// do(·) assignments by variable name and domain value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InterventionSpec {
    pub assignments: Vec<(String, f64)>,
}

impl InterventionSpec {
    pub fn new(assignments: &[(&str, f64)]) -> Self {
        InterventionSpec {
            assignments: assignments.iter().map(|(n, v)| (n.to_string(), *v)).collect(),
        }
    }
}

impl DiscreteScm {
    pub fn new(vars: Vec<Variable>, outcome: &str) -> Result<Self> {
        let index: BTreeMap<&str, usize> = vars.iter().enumerate().map(|(i, v)| (v.name.as_str(), i)).collect();
        if index.len() != vars.len() {
            return Err(Error::invalid("duplicate variable name"));
        }
        let outcome = *index
            .get(outcome)
            .ok_or_else(|| Error::invalid(format!("unknown outcome {outcome}")))?;
        if vars[outcome].latent {
            return Err(Error::invalid("the outcome cannot be latent"));
        }
        let mut parent_idx = Vec::with_capacity(vars.len());
        for v in &vars {
            if v.domain.is_empty() || v.domain.iter().any(|d| !d.is_finite()) {
                return Err(Error::invalid(format!(
                    "{}: domain must be non-empty and finite",
                    v.name
                )));
            }
            let ps = v
                .parents
                .iter()
                .map(|p| {
                    index
                        .get(p.as_str())
                        .copied()
                        .ok_or_else(|| Error::invalid(format!("{}: unknown parent {p}", v.name)))
                })
                .collect::<Result<Vec<usize>>>()?;
            let rows: usize = ps.iter().map(|&p| vars[p].domain.len()).product();
            if v.cpt.len() != rows {
                return Err(Error::invalid(format!(
                    "{}: expected {rows} CPT rows, found {}",
                    v.name,
                    v.cpt.len()
                )));
            }
            for row in &v.cpt {
                if row.len() != v.domain.len() || row.iter().any(|p| !(*p >= 0.0)) {
                    return Err(Error::invalid(format!(
                        "{}: CPT rows must be non-negative over the domain",
                        v.name
                    )));
                }
                if (row.iter().sum::<f64>() - 1.0).abs() > CPT_TOLERANCE {
                    return Err(Error::invalid(format!("{}: CPT row does not sum to 1", v.name)));
                }
            }
            parent_idx.push(ps);
        }
        if let Some(&z) = parent_idx[outcome].iter().find(|&&p| vars[p].latent) {
            return Err(Error::Constraint {
                message: "a latent confounder may not feed the outcome".into(),
                genes: vec![vars[z].name.clone()],
            });
        }
        let order = topo(&parent_idx).ok_or_else(|| Error::Constraint {
            message: "SCM graph has a cycle".into(),
            genes: vec![],
        })?;
        Ok(DiscreteScm {
            vars,
            parent_idx,
            outcome,
            order,
        })
    }

    pub fn variables(&self) -> &[Variable] {
        &self.vars
    }

    pub fn outcome(&self) -> usize {
        self.outcome
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.name == name)
    }

    pub fn parents(&self, v: usize) -> &[usize] {
        &self.parent_idx[v]
    }

    /// Observed non-outcome variables, in declaration order.
    pub fn covariates(&self) -> Vec<usize> {
        (0..self.vars.len())
            .filter(|&v| v != self.outcome && !self.vars[v].latent)
            .collect()
    }

    pub fn n_states(&self) -> u128 {
        self.vars.iter().map(|v| v.domain.len() as u128).product()
    }

    pub(crate) fn value_index(&self, v: usize, value: f64) -> Result<usize> {
        self.vars[v]
            .domain
            .iter()
            .position(|d| *d == value)
            .ok_or_else(|| Error::invalid(format!("{value} is not in the domain of {}", self.vars[v].name)))
    }

    fn resolve(&self, spec: &InterventionSpec) -> Result<Vec<(usize, usize)>> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for (name, value) in &spec.assignments {
            let v = self
                .index(name)
                .ok_or_else(|| Error::invalid(format!("unknown variable {name}")))?;
            if out.iter().any(|(w, _)| *w == v) {
                return Err(Error::invalid(format!("{name} assigned twice")));
            }
            out.push((v, self.value_index(v, *value)?));
        }
        Ok(out)
    }

    fn cpt_prob(&self, v: usize, state: &[usize]) -> f64 {
        let mut row = 0;
        for &p in &self.parent_idx[v] {
            row = row * self.vars[p].domain.len() + state[p];
        }
        self.vars[v].cpt[row][state[v]]
    }

    /// Visits every joint state consistent with `fixed` with its probability.
    /// Variables in `cut` contribute a factor of one (their mechanism is
    /// replaced by the fixed value); other fixed variables act as evidence.
    pub(crate) fn enumerate(
        &self,
        fixed: &[(usize, usize)],
        cut: bool,
        mut visit: impl FnMut(&[usize], f64),
    ) -> Result<()> {
        let n = self.vars.len();
        let mut pinned = vec![None; n];
        for &(v, s) in fixed {
            pinned[v] = Some(s);
        }
        let free: Vec<usize> = self.order.iter().copied().filter(|&v| pinned[v].is_none()).collect();
        let total: u128 = free.iter().map(|&v| self.vars[v].domain.len() as u128).product();
        if total > MAX_STATES {
            return Err(Error::Capacity(format!(
                "{total} joint states exceed the {MAX_STATES} limit"
            )));
        }
        let mut state: Vec<usize> = pinned.iter().map(|p| p.unwrap_or(0)).collect();
        loop {
            let mut p = 1.0;
            for &v in &self.order {
                if cut && pinned[v].is_some() {
                    continue;
                }
                p *= self.cpt_prob(v, &state);
                if p == 0.0 {
                    break;
                }
            }
            visit(&state, p);
            // odometer over free variables, last in topological order fastest
            let mut k = free.len();
            loop {
                if k == 0 {
                    return Ok(());
                }
                k -= 1;
                let v = free[k];
                state[v] += 1;
                if state[v] < self.vars[v].domain.len() {
                    break;
                }
                state[v] = 0;
            }
        }
    }

    /// Probability of every joint state, indexed in declaration-order mixed radix
    /// (last variable fastest).
    pub fn joint_distribution(&self) -> Result<Vec<f64>> {
        if self.n_states() > MAX_STATES {
            return Err(Error::Capacity(format!(
                "{} joint states exceed the {MAX_STATES} limit",
                self.n_states()
            )));
        }
        let mut out = vec![0.0; self.n_states() as usize];
        self.enumerate(&[], false, |s, p| {
            let mut idx = 0;
            for (v, &x) in s.iter().enumerate() {
                idx = idx * self.vars[v].domain.len() + x;
            }
            out[idx] = p;
        })?;
        Ok(out)
    }

    /// Marginal distribution of one variable by summation over the joint.
    pub fn marginal(&self, v: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.vars[v].domain.len()];
        self.enumerate(&[], false, |s, p| out[s[v]] += p)?;
        Ok(out)
    }

    fn expect_outcome(&self, fixed: &[(usize, usize)], cut: bool) -> Result<(f64, f64)> {
        let y = self.outcome;
        let (mut mass, mut acc) = (0.0, 0.0);
        self.enumerate(fixed, cut, |s, p| {
            mass += p;
            acc += p * self.vars[y].domain[s[y]];
        })?;
        Ok((acc, mass))
    }

    /// E[Y | do(spec)] in the mutilated model.
    pub fn expectation_under_do(&self, spec: &InterventionSpec) -> Result<f64> {
        let fixed = self.resolve(spec)?;
        if fixed.iter().any(|(v, _)| *v == self.outcome) {
            let (v, s) = fixed.iter().find(|(v, _)| *v == self.outcome).expect("found");
            return Ok(self.vars[*v].domain[*s]);
        }
        Ok(self.expect_outcome(&fixed, true)?.0)
    }

    /// Observational E[Y | evidence].
    pub fn conditional_expectation(&self, evidence: &InterventionSpec) -> Result<f64> {
        let fixed = self.resolve(evidence)?;
        let (acc, mass) = self.expect_outcome(&fixed, false)?;
        if mass <= 0.0 {
            return Err(Error::UndefinedMetric("conditioning event has probability zero".into()));
        }
        Ok(acc / mass)
    }

    /// Index-level do-expectation used by the checks.
    pub(crate) fn do_expect_idx(&self, fixed: &[(usize, usize)]) -> Result<f64> {
        Ok(self.expect_outcome(fixed, true)?.0)
    }

    pub(crate) fn cond_expect_idx(&self, fixed: &[(usize, usize)]) -> Result<Option<f64>> {
        let (acc, mass) = self.expect_outcome(fixed, false)?;
        Ok((mass > 0.0).then(|| acc / mass))
    }
}

fn topo(parents: &[Vec<usize>]) -> Option<Vec<usize>> {
    let n = parents.len();
    let mut children = vec![Vec::new(); n];
    let mut indeg = vec![0; n];
    for (v, ps) in parents.iter().enumerate() {
        indeg[v] = ps.len();
        for &p in ps {
            children[p].push(v);
        }
    }
    let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = ready.pop_first() {
        order.push(v);
        for &c in &children[v] {
            indeg[c] -= 1;
            if indeg[c] == 0 {
                ready.insert(c);
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// E[Y | do(X = 1)] − E[Y | do(X = 0)] for a binary treatment.
pub fn ate(scm: &DiscreteScm, treatment: &str) -> Result<f64> {
    let v = scm
        .index(treatment)
        .ok_or_else(|| Error::invalid(format!("unknown variable {treatment}")))?;
    let d = &scm.variables()[v].domain;
    if d.len() != 2 || !d.contains(&0.0) || !d.contains(&1.0) {
        return Err(Error::invalid(format!("{treatment} is not binary 0/1")));
    }
    Ok(scm.expectation_under_do(&InterventionSpec::new(&[(treatment, 1.0)]))?
        - scm.expectation_under_do(&InterventionSpec::new(&[(treatment, 0.0)]))?)
}

/// E[Y | do(X = x)] − E[Y | do(X_i = x̂_i, X_rest = x_rest)] over all covariates.
pub fn lte_exact(scm: &DiscreteScm, x: &[f64], i: usize, x_hat: f64) -> Result<f64> {
    let cov = scm.covariates();
    if x.len() != cov.len() || i >= cov.len() {
        return Err(Error::invalid("x must assign every covariate and i must index one"));
    }
    let fixed = cov
        .iter()
        .zip(x)
        .map(|(&v, &val)| Ok((v, scm.value_index(v, val)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut alt = fixed.clone();
    alt[i].1 = scm.value_index(cov[i], x_hat)?;
    Ok(scm.do_expect_idx(&fixed)? - scm.do_expect_idx(&alt)?)
}
