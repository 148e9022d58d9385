//! The run configuration: one TOML document shared by every subcommand.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use cimla::differential::RankingMode;
use cimla::evaluation::DEFAULT_DCORR_CUTOFF;
use cimla::pipeline::CimlaConfig;
use cimla::simulator::SimulationSpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory written by `simulate`; fills in any path left unset below.
    pub dir: Option<PathBuf>,
    pub case: Option<PathBuf>,
    pub control: Option<PathBuf>,
    /// One TF id per line. Without it the TFs are the regulators of the
    /// network pair in `dir`.
    pub tfs: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    /// Restrict the run to these target genes.
    pub targets: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Save the fitted models so `baseline genie3-diff` can reuse forests.
    pub cache_models: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { cache_models: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub top_fraction: f64,
    /// Scoring used for the CIMLA ranking file.
    pub ranking: RankingMode,
    /// |r_case − r_control| cutoff separating low and high co-expression change.
    pub dcorr_cutoff: f64,
    pub per_gene: bool,
    pub plots: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            top_fraction: 0.1,
            ranking: RankingMode::Global,
            dcorr_cutoff: DEFAULT_DCORR_CUTOFF,
            per_gene: false,
            plots: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub shared_fractions: Vec<f64>,
    pub confounding: Vec<String>,
    pub dropout: Vec<f64>,
    pub seeds: Vec<u64>,
    pub methods: Vec<String>,
    /// CIMLA settings used for the MLP variant.
    pub mlp: Option<CimlaConfig>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            shared_fractions: vec![0.8],
            confounding: vec!["low".into(), "high".into()],
            dropout: vec![0.0],
            seeds: vec![1, 2, 3],
            methods: vec!["cimla-forest".into(), "zscore-p".into()],
            mlp: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub workers: usize,
    pub out: PathBuf,
    pub data: DataConfig,
    pub simulation: SimulationSpec,
    pub cimla: CimlaConfig,
    pub run: RunSection,
    pub evaluation: EvalConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            workers: 1,
            out: PathBuf::from("out"),
            data: DataConfig::default(),
            simulation: SimulationSpec::default(),
            cimla: CimlaConfig::default(),
            run: RunSection::default(),
            evaluation: EvalConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads the file (if any), applies overrides and resolves relative data
    /// paths against the config file's directory.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> anyhow::Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                let mut c = Self::parse(&text).with_context(|| format!("parsing config {}", p.display()))?;
                let base = p.parent().unwrap_or(Path::new(""));
                c.data.rebase(base);
                if c.out.is_relative() && overrides.out.is_none() {
                    c.out = base.join(&c.out);
                }
                c
            }
            None => RunConfig::default(),
        };
        if let Some(s) = overrides.seed {
            cfg.seed = Some(s);
        }
        if let Some(w) = overrides.workers {
            cfg.workers = w;
        }
        if let Some(o) = &overrides.out {
            cfg.out = o.clone();
        }
        cfg.data.check_exists()?;
        Ok(cfg)
    }

    pub fn seed(&self) -> anyhow::Result<u64> {
        match self.seed {
            Some(s) => Ok(s),
            None => bail!("a seed is required: set `seed` in the config or pass --seed"),
        }
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }
}

impl DataConfig {
    fn rebase(&mut self, base: &Path) {
        for p in [
            &mut self.dir,
            &mut self.case,
            &mut self.control,
            &mut self.tfs,
            &mut self.truth,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// `dir` is left out: `simulate` may be about to create it.
    fn check_exists(&self) -> anyhow::Result<()> {
        for (name, p) in [
            ("case", &self.case),
            ("control", &self.control),
            ("tfs", &self.tfs),
            ("truth", &self.truth),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    bail!("data.{name}: {} does not exist", p.display());
                }
            }
        }
        Ok(())
    }

    fn pick(&self, explicit: &Option<PathBuf>, file: &str) -> Option<PathBuf> {
        explicit.clone().or_else(|| self.dir.as_ref().map(|d| d.join(file)))
    }

    pub fn case_path(&self) -> anyhow::Result<PathBuf> {
        self.pick(&self.case, "case.tsv")
            .context("no case matrix: set data.case or data.dir")
    }

    pub fn control_path(&self) -> anyhow::Result<PathBuf> {
        self.pick(&self.control, "control.tsv")
            .context("no control matrix: set data.control or data.dir")
    }

    pub fn truth_path(&self) -> Option<PathBuf> {
        self.pick(&self.truth, "truth.tsv")
    }

    pub fn grn_paths(&self) -> Option<(PathBuf, PathBuf)> {
        self.dir
            .as_ref()
            .map(|d| (d.join("grn_case.tsv"), d.join("grn_control.tsv")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let mut c = RunConfig::default();
        c.seed = Some(3);
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), c);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let c = RunConfig::parse("seed = 5\n[cimla]\nmodel = \"mlp\"\n[cimla.forest]\nmax_depth = [4, \"none\"]\n")
            .unwrap();
        assert_eq!(c.seed, Some(5));
        assert_eq!(c.cimla.forest.max_depth, vec![Some(4), None]);
        assert_eq!(c.evaluation, EvalConfig::default());
        assert!(RunConfig::parse("[data]\nbogus = 1\n").is_err());
    }

    #[test]
    fn seed_is_mandatory() {
        assert!(RunConfig::default().seed().is_err());
    }

    #[test]
    fn missing_data_file_fails_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "seed = 1\n[data]\ncase = \"nope.tsv\"\n").unwrap();
        let e = RunConfig::load(Some(&p), &Overrides::default()).unwrap_err();
        assert!(e.to_string().contains("does not exist"), "{e}");
    }
}
