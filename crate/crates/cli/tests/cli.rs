use std::path::{Path, PathBuf};
use std::process::Command;

use cimla_cli::bench::{cmd_bench, read_results, RESULTS_FILE};
use cimla_cli::commands::{cmd_baseline, cmd_eval, cmd_run, BaselineMethod, EvalOptions};
use cimla_cli::config::{Overrides, RunConfig};
use rand::Rng as _;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cimla"))
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

/// Five TFs and three targets; g1 switches regulator between conditions.
fn write_toy(dir: &Path, identical: bool) {
    let make = |seed: u64, swap: bool| {
        let mut rng = cimla::RngSeed(seed).rng();
        let n = 150;
        let mut rows: Vec<Vec<f64>> = vec![vec![0.0; n]; 8];
        for c in 0..n {
            for row in rows.iter_mut().take(5) {
                row[c] = rng.random_range(0.0..4.0);
            }
            let driver = if swap { rows[1][c] } else { rows[0][c] };
            rows[5][c] = 2.0 * driver + rng.random_range(-0.3..0.3);
            rows[6][c] = rows[2][c] + rng.random_range(-0.3..0.3);
            rows[7][c] = rng.random_range(-0.3..0.3);
        }
        let names = ["t1", "t2", "t3", "t4", "t5", "g1", "g2", "g3"];
        let mut s = String::from("gene");
        for c in 0..n {
            s.push_str(&format!("\tc{c}"));
        }
        s.push('\n');
        for (g, row) in names.iter().zip(&rows) {
            s.push_str(g);
            for v in row {
                s.push_str(&format!("\t{v}"));
            }
            s.push('\n');
        }
        s
    };
    std::fs::write(dir.join("case.tsv"), make(1, false)).unwrap();
    let control = if identical { make(1, false) } else { make(2, true) };
    std::fs::write(dir.join("control.tsv"), control).unwrap();
    std::fs::write(dir.join("tfs.txt"), "t1\nt2\nt3\nt4\nt5\n").unwrap();
    std::fs::write(dir.join("truth.tsv"), "regulator\ttarget\nt1\tg1\nt2\tg1\n").unwrap();
}

const TOY_CONFIG: &str = r#"
seed = 4
[data]
case = "case.tsv"
control = "control.tsv"
tfs = "tfs.txt"
truth = "truth.tsv"
targets = ["g1", "g2", "g3"]
[cimla]
max_samples = 50
[cimla.forest]
n_trees = [15]
max_depth = [5]
max_features = ["third"]
"#;

fn toy_dir(identical: bool, extra: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path(), identical);
    let cfg = dir.path().join("config.toml");
    std::fs::write(&cfg, format!("{TOY_CONFIG}{extra}")).unwrap();
    (dir, cfg)
}

fn load(cfg: &Path, out: &Path) -> RunConfig {
    RunConfig::load(
        Some(cfg),
        &Overrides {
            out: Some(out.to_path_buf()),
            ..Default::default()
        },
    )
    .unwrap()
}

const SMALL_SIM: &str = r#"
[simulation]
shared_fraction = 0.8
[simulation.reference]
n_genes = 20
n_master_regulators = 4
n_secondary_tfs = 2
n_edges = 40
[simulation.sim]
n_cells = 150
"#;

#[test]
fn simulate_writes_bundle_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.toml");
    std::fs::write(&cfg, format!("seed = 11\n{SMALL_SIM}")).unwrap();
    for out in ["a", "b"] {
        let st = bin()
            .args(["--config", cfg.to_str().unwrap(), "--out"])
            .arg(dir.path().join(out))
            .arg("simulate")
            .status()
            .unwrap();
        assert!(st.success());
    }
    let mut files: Vec<String> = std::fs::read_dir(dir.path().join("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    assert_eq!(
        files,
        [
            "case.tsv",
            "control.tsv",
            "grn_case.tsv",
            "grn_control.tsv",
            "manifest.toml",
            "truth.tsv"
        ]
    );
    for f in &files {
        if f != "manifest.toml" {
            assert_eq!(
                read(dir.path().join("a").join(f)),
                read(dir.path().join("b").join(f)),
                "{f}"
            );
        }
    }
    let manifest = read(dir.path().join("a/manifest.toml"));
    assert!(manifest.contains("realized_shared_fraction"));
    assert!(manifest.contains("seed = 11"));

    // with every edge shared the truth file holds only its header
    let full = dir.path().join("full.toml");
    std::fs::write(
        &full,
        format!(
            "seed = 11\n{}",
            SMALL_SIM.replace("shared_fraction = 0.8", "shared_fraction = 1.0")
        ),
    )
    .unwrap();
    assert!(bin()
        .args(["--config", full.to_str().unwrap(), "--out"])
        .arg(dir.path().join("c"))
        .arg("simulate")
        .status()
        .unwrap()
        .success());
    assert_eq!(read(dir.path().join("c/truth.tsv")), "regulator\ttarget\n");

    // the bundle feeds `run` directly, with TFs taken from the network pair
    let run_cfg = dir.path().join("run.toml");
    std::fs::write(
        &run_cfg,
        "seed = 2\n[data]\ndir = \"a\"\n[cimla]\nmax_samples = 20\n[cimla.forest]\nn_trees = [5]\nmax_depth = [3]\n",
    )
    .unwrap();
    let st = bin()
        .args(["--config", run_cfg.to_str().unwrap(), "--out"])
        .arg(dir.path().join("r"))
        .arg("run")
        .status()
        .unwrap();
    assert!(st.success());
    assert!(read(dir.path().join("r/scores.tsv")).lines().count() > 20);
}

#[test]
fn seed_is_required() {
    let out = bin().arg("simulate").output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn run_writes_fifteen_rows_deterministically_without_touching_inputs() {
    let (dir, cfg) = toy_dir(false, "");
    let before = read(dir.path().join("case.tsv"));
    let a = cmd_run(&load(&cfg, &dir.path().join("a")), None).unwrap();
    assert_eq!(a.failures, 0);
    let scores = read(dir.path().join("a/scores.tsv"));
    assert_eq!(scores.lines().count(), 16);
    assert!(scores.starts_with("tf\tgene\tlambda\tbackground_max\tpass\trank\tdgrn_score\n"));
    let mut c = load(&cfg, &dir.path().join("b"));
    c.workers = 4;
    cmd_run(&c, None).unwrap();
    assert_eq!(scores, read(dir.path().join("b/scores.tsv")));
    assert_eq!(before, read(dir.path().join("case.tsv")));

    // the manifest alone reproduces the run
    let st = bin()
        .args(["--config"])
        .arg(dir.path().join("a/manifest.toml"))
        .arg("--out")
        .arg(dir.path().join("m"))
        .arg("run")
        .status()
        .unwrap();
    assert!(st.success());
    assert_eq!(scores, read(dir.path().join("m/scores.tsv")));
}

#[test]
fn null_run_stays_below_thresholds() {
    let (dir, cfg) = toy_dir(true, "");
    let mut c = load(&cfg, &dir.path().join("out"));
    c.cimla.n_shuffles = 2;
    cmd_run(&c, None).unwrap();
    let scores = read(dir.path().join("out/scores.tsv"));
    let passing = scores
        .lines()
        .skip(1)
        .filter(|l| l.split('\t').nth(4) == Some("true"))
        .count();
    assert!(passing <= 1, "{scores}");
    let max_lambda = scores
        .lines()
        .skip(1)
        .map(|l| l.split('\t').nth(2).unwrap().parse::<f64>().unwrap())
        .fold(0.0, f64::max);
    assert!(max_lambda < 0.5, "{scores}");
}

#[test]
fn baselines_rank_every_pair_and_genie3_reuses_forests() {
    let (dir, cfg) = toy_dir(false, "");
    let c = load(&cfg, &dir.path().join("out"));
    let z = cmd_baseline(&c, BaselineMethod::ZscoreP).unwrap();
    assert_eq!(z.ranking.len(), 15);
    assert_eq!(read(&z.file).lines().next(), Some("tf\tgene\tscore\tmethod"));
    let cold = cmd_baseline(&c, BaselineMethod::Genie3Diff).unwrap();
    assert_eq!(cold.cache_hits, 0);
    cmd_run(&c, None).unwrap();
    let warm = cmd_baseline(&c, BaselineMethod::Genie3Diff).unwrap();
    assert_eq!(warm.cache_hits, 3);
    assert_eq!(warm.ranking.len(), 15);

    let out = bin()
        .args(["--config", cfg.to_str().unwrap(), "baseline", "--method", "magic"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid value"));
}

#[test]
fn eval_reports_and_flags() {
    let (dir, cfg) = toy_dir(false, "");
    let c = load(&cfg, &dir.path().join("out"));
    std::fs::create_dir_all(dir.path().join("out")).unwrap();
    let perfect = dir.path().join("perfect.tsv");
    let mut text = String::from("tf\tgene\tscore\n");
    for (k, (t, g)) in [("t1", "g1"), ("t2", "g1")].iter().enumerate() {
        text.push_str(&format!("{t}\t{g}\t{}\n", 10 - k));
    }
    std::fs::write(&perfect, text).unwrap();
    let s = cmd_eval(
        &c,
        &EvalOptions {
            ranking: perfect.clone(),
            truth: None,
            per_gene: true,
            plots: true,
        },
    )
    .unwrap();
    assert_eq!(s.report.auroc, 1.0);
    assert!(read(&s.files[0]).contains("auroc = 1"));
    let names: Vec<String> = s
        .files
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(
        names,
        [
            "eval_perfect.txt",
            "per_gene_perfect.tsv",
            "roc_perfect.svg",
            "pr_perfect.svg"
        ]
    );
    assert!(read(dir.path().join("out/per_gene_perfect.tsv")).contains("g1"));

    let missing = cmd_eval(
        &c,
        &EvalOptions {
            ranking: perfect,
            truth: Some(dir.path().join("nope.tsv")),
            per_gene: false,
            plots: false,
        },
    );
    let e = missing.unwrap_err();
    assert!(format!("{e:#}").contains("nope.tsv"), "{e:#}");
}

#[test]
fn bench_counts_rows_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.toml");
    let text = format!(
        "seed = 3\n[bench]\nshared_fractions = [0.7, 0.9]\nconfounding = [\"low\", \"high\"]\nseeds = [1, 2, 3]\nmethods = [\"cimla-forest\", \"zscore-p\"]\n[cimla]\nmax_samples = 15\n[cimla.attribution]\nbackground_size = 8\n[cimla.forest]\nn_trees = [4]\nmax_depth = [3]\n{}",
        SMALL_SIM.replace("n_cells = 150", "n_cells = 60")
    );
    std::fs::write(&cfg, text).unwrap();
    let c = load(&cfg, &dir.path().join("out"));
    let rows = cmd_bench(&c).unwrap();
    assert_eq!(rows.len(), 24);
    let path = dir.path().join("out").join(RESULTS_FILE);
    let first = read(&path);
    assert_eq!(first.lines().count(), 25);
    for mode in ["low", "high"] {
        for m in ["cimla-forest", "zscore-p"] {
            assert!(rows.iter().any(|r| r.confounding == mode && r.method == m));
        }
    }
    // a completed bench is a no-op on rerun
    let again = cmd_bench(&c).unwrap();
    assert_eq!(again, read_results(&path).unwrap());
    assert_eq!(read(&path), first);
    // dropping rows makes exactly those cells run again
    let kept: Vec<&str> = first.lines().take(21).collect();
    std::fs::write(&path, kept.join("\n") + "\n").unwrap();
    let resumed = cmd_bench(&c).unwrap();
    assert_eq!(resumed.len(), 24);
    let mut a: Vec<String> = read(&path).lines().map(String::from).collect();
    let mut b: Vec<String> = first.lines().map(String::from).collect();
    a.sort();
    b.sort();
    assert_eq!(a, b);
}

#[test]
fn oracle_verify_runs_the_corpus() {
    let out = bin().args(["oracle", "verify", "--n-random", "10"]).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    for name in [
        "conforming_binary",
        "violates_na_into_y",
        "violates_backdoor",
        "violates_latent_into_y",
        "lte-vs-shapley",
    ] {
        assert!(text.contains(name), "{name} missing from\n{text}");
    }
    assert!(!text.contains("UNEXPECTED"));
}
