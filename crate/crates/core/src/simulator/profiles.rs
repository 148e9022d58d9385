use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Grn;
use crate::error::{Error, Result};
use crate::rng::RngSeed;

pub const HIGH_CONFOUNDING_CELL_TYPES: usize = 10;

/// How master-regulator production rates are drawn for the two conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ConfoundingMode {
    /// One cell type; case and control share a single profile drawn from `range`.
    Low { range: (f64, f64) },
    /// Ten cell types; case and control rates come from different ranges.
    High {
        case_range: (f64, f64),
        control_range: (f64, f64),
    },
}

impl ConfoundingMode {
    pub fn low() -> Self {
        ConfoundingMode::Low { range: (1.0, 4.0) }
    }

    pub fn high() -> Self {
        ConfoundingMode::High {
            case_range: (0.5, 2.5),
            control_range: (2.0, 5.0),
        }
    }

    pub fn n_cell_types(&self) -> usize {
        match self {
            ConfoundingMode::Low { .. } => 1,
            ConfoundingMode::High { .. } => HIGH_CONFOUNDING_CELL_TYPES,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ConfoundingMode::Low { .. } => "low",
            ConfoundingMode::High { .. } => "high",
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |(a, b): (f64, f64)| a > 0.0 && b >= a && b.is_finite();
        let good = match self {
            ConfoundingMode::Low { range } => ok(*range),
            ConfoundingMode::High {
                case_range,
                control_range,
            } => ok(*case_range) && ok(*control_range) && case_range != control_range,
        };
        if good {
            Ok(())
        } else {
            Err(Error::invalid(
                "MR rate ranges must be positive and ordered; high confounding needs distinct ranges",
            ))
        }
    }
}

/// Production rate of every MR in every cell type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrProfileSet {
    pub master_regulators: Vec<String>,
    /// `rates[cell_type][mr]`.
    pub rates: Vec<Vec<f64>>,
}

impl MrProfileSet {
    pub fn new(master_regulators: Vec<String>, rates: Vec<Vec<f64>>) -> Result<Self> {
        if rates.is_empty() {
            return Err(Error::invalid("MR profile needs at least one cell type"));
        }
        if rates
            .iter()
            .any(|r| r.len() != master_regulators.len() || r.iter().any(|v| !(*v > 0.0 && v.is_finite())))
        {
            return Err(Error::invalid("MR rates must be positive, one per MR per cell type"));
        }
        Ok(MrProfileSet {
            master_regulators,
            rates,
        })
    }

    pub fn n_cell_types(&self) -> usize {
        self.rates.len()
    }

    pub fn rate(&self, cell_type: usize, mr: &str) -> Option<f64> {
        let j = self.master_regulators.iter().position(|m| m == mr)?;
        Some(self.rates[cell_type][j])
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("cell_type\tmr_id\trate\n");
        for (c, row) in self.rates.iter().enumerate() {
            for (m, r) in self.master_regulators.iter().zip(row) {
                let _ = writeln!(out, "{c}\t{m}\t{r}");
            }
        }
        out
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn parse_tsv(text: &str, path: &Path) -> Result<Self> {
        let mut mrs: Vec<String> = Vec::new();
        let mut by_type: BTreeMap<usize, BTreeMap<String, f64>> = BTreeMap::new();
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
            if f.len() != 3 {
                return Err(err(format!("expected 3 fields, found {}", f.len())));
            }
            let c: usize = f[0].parse().map_err(|_| err(format!("bad cell type {:?}", f[0])))?;
            let rate: f64 = f[2].parse().map_err(|_| err(format!("bad rate {:?}", f[2])))?;
            if !mrs.iter().any(|m| m == f[1]) {
                mrs.push(f[1].to_string());
            }
            by_type.entry(c).or_default().insert(f[1].to_string(), rate);
        }
        let rates = by_type
            .values()
            .map(|row| {
                mrs.iter()
                    .map(|m| {
                        row.get(m)
                            .copied()
                            .ok_or_else(|| Error::invalid(format!("MR {m} missing from a cell type")))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        MrProfileSet::new(mrs, rates)
    }

    pub fn read_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text, path)
    }
}

fn draw(mrs: &[String], n_types: usize, (lo, hi): (f64, f64), seed: RngSeed) -> Result<MrProfileSet> {
    let mut rng = seed.rng();
    let rates = (0..n_types)
        .map(|_| {
            mrs.iter()
                .map(|_| if hi > lo { rng.random_range(lo..hi) } else { lo })
                .collect()
        })
        .collect();
    MrProfileSet::new(mrs.to_vec(), rates)
}

/// (case, control) profiles for the MRs of `grn`.
pub fn generate_mr_profiles(mode: &ConfoundingMode, grn: &Grn, seed: RngSeed) -> Result<(MrProfileSet, MrProfileSet)> {
    mode.validate()?;
    let mrs = grn.master_regulators();
    let k = mode.n_cell_types();
    match mode {
        ConfoundingMode::Low { range } => {
            let p = draw(mrs, k, *range, seed.derive("shared"))?;
            Ok((p.clone(), p))
        }
        ConfoundingMode::High {
            case_range,
            control_range,
        } => Ok((
            draw(mrs, k, *case_range, seed.derive("case"))?,
            draw(mrs, k, *control_range, seed.derive("control"))?,
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{random_grn, RandomGrnSpec};

    /// Two-sample Kolmogorov–Smirnov statistic.
    fn ks(a: &[f64], b: &[f64]) -> f64 {
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (mut i, mut j, mut d) = (0, 0, 0.0f64);
        while i < a.len() && j < b.len() {
            let x = a[i].min(b[j]);
            while i < a.len() && a[i] <= x {
                i += 1;
            }
            while j < b.len() && b[j] <= x {
                j += 1;
            }
            d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
        }
        d
    }

    fn pooled(mode: &ConfoundingMode) -> (Vec<f64>, Vec<f64>) {
        let grn = random_grn(&RandomGrnSpec::default(), RngSeed(1)).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for s in 0..100 {
            let (c, k) = generate_mr_profiles(mode, &grn, RngSeed(s)).unwrap();
            a.extend(c.rates.iter().flatten());
            b.extend(k.rates.iter().flatten());
        }
        (a, b)
    }

    #[test]
    fn ks_separates_modes() {
        // 1.63 / sqrt(n/2) is the α = 0.01 critical value for equal sizes n.
        let (a, b) = pooled(&ConfoundingMode::low());
        let crit = |n: usize| 1.628 * (2.0 / n as f64).sqrt();
        assert!(a.len() >= 1000);
        assert!(ks(&a, &b) < crit(a.len()));
        let (a, b) = pooled(&ConfoundingMode::high());
        assert!(a.len() >= 1000);
        assert!(ks(&a, &b) > crit(a.len()));
    }

    #[test]
    fn cell_type_counts_and_positivity() {
        let grn = random_grn(&RandomGrnSpec::default(), RngSeed(1)).unwrap();
        let (c, k) = generate_mr_profiles(&ConfoundingMode::high(), &grn, RngSeed(0)).unwrap();
        assert_eq!(c.n_cell_types(), 10);
        assert_eq!(k.n_cell_types(), 10);
        let (c, _) = generate_mr_profiles(&ConfoundingMode::low(), &grn, RngSeed(0)).unwrap();
        assert_eq!(c.n_cell_types(), 1);
        assert!(c.rates.iter().flatten().all(|v| *v > 0.0));
        let back = MrProfileSet::parse_tsv(&k.to_tsv(), Path::new("p")).unwrap();
        assert_eq!(back, k);
    }
}
