use prince_cli::run;
use prince_core::simulation::generate_base;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const EDU: [&str; 3] = ["none", "primary", "secondary"];
const REL: [&str; 3] = ["muslim", "christian", "other"];

/// A small analysis file cut from the synthetic base table: every Z=1 row
/// plus enough Z=0 rows to reach `n`.
fn write_rows(path: &Path, n: usize) {
    let base = generate_base(8000, 3).unwrap();
    let mut picked: Vec<_> = base.iter().filter(|r| r.z == 1).take(n / 4).collect();
    picked.extend(base.iter().filter(|r| r.z == 0).take(n - picked.len()));
    let mut out = String::from("employed,parity,infecund,age,education,religion,weight,cluster\n");
    for (i, r) in picked.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.y,
            r.w,
            r.z,
            r.age,
            EDU[r.education as usize],
            REL[r.religion as usize],
            1.0 + (i % 3) as f64 * 0.5,
            i % 40
        )
        .unwrap();
    }
    std::fs::write(path, out).unwrap();
}

const CONFIG: &str = r#"
chains = 2
iterations = 60
burn_in = 20
stored_target = 40
propensity_iterations = 40
propensity_burn_in = 10
bootstrap_draws = 20
sensitivity_rho = 0.9

[hyper]
n_trees = 10

[columns]
outcome = "employed"
treatment = "parity"
instrument = "infecund"
weight = "weight"
cluster = "cluster"
covariates = [
  { name = "age", kind = "numeric" },
  { name = "education", kind = "categorical" },
  { name = "religion", kind = "categorical" },
]
"#;

fn setup(dir: &Path) -> (PathBuf, PathBuf) {
    let data = dir.join("rows.csv");
    let cfg = dir.join("run.toml");
    write_rows(&data, 240);
    std::fs::write(&cfg, CONFIG).unwrap();
    (data, cfg)
}

fn fit(data: &Path, cfg: &Path, out: &Path) -> i32 {
    run([
        "prince",
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "11",
    ])
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

const FIT_FILES: [&str; 9] = [
    "effects.csv",
    "by_parity.csv",
    "heterogeneity.csv",
    "diagnostics.csv",
    "surrogate_tree.txt",
    "results.json",
    "run_metadata.json",
    "draws.bin",
    "draws.json",
];

#[test]
fn fit_writes_every_report_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, cfg) = setup(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(fit(&data, &cfg, &a), 0);
    assert_eq!(fit(&data, &cfg, &b), 0);
    for f in FIT_FILES {
        assert_eq!(read(&a, f), read(&b, f), "{f} differs between identical runs");
    }

    let effects = String::from_utf8(read(&a, "effects.csv")).unwrap();
    let first: Vec<&str> = effects.lines().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(first, ["estimand", "MATE^a", "PATE", "2SLS", "Sensitivity MATE^a (rho=0.9)"]);

    let parity = String::from_utf8(read(&a, "by_parity.csv")).unwrap();
    assert!(parity.lines().count() >= 2);
    for line in parity.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 5);
        let (lo, hi): (f64, f64) = (f[2].parse().unwrap(), f[3].parse().unwrap());
        assert!(lo <= hi, "{line}");
    }

    let meta: serde_json::Value = serde_json::from_slice(&read(&a, "run_metadata.json")).unwrap();
    assert_eq!(meta["seed"], 11);
    assert_eq!(meta["load"]["raw"], 240);
}

#[test]
fn report_and_diagnose_rerender_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, cfg) = setup(tmp.path());
    let a = tmp.path().join("a");
    assert_eq!(fit(&data, &cfg, &a), 0);
    let r = tmp.path().join("r");
    assert_eq!(run(["prince", "report", "--results", a.to_str().unwrap(), "--out", r.to_str().unwrap()]), 0);
    for f in ["effects.csv", "by_parity.csv", "heterogeneity.csv", "diagnostics.csv", "surrogate_tree.txt"] {
        assert_eq!(read(&a, f), read(&r, f), "{f}");
    }
    let d = tmp.path().join("d");
    assert_eq!(run(["prince", "diagnose", "--results", a.to_str().unwrap(), "--out", d.to_str().unwrap()]), 0);
    assert_eq!(read(&a, "diagnostics.csv"), read(&d, "diagnostics.csv"));
}

#[test]
fn simulate_writes_a_table_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("sim.toml");
    std::fs::write(
        &cfg,
        "[bart]\nchains = 2\n[bart.chain]\niterations = 30\nburn_in = 10\nthin = 1\n[bart.chain.hyper]\nn_trees = 5\n[bart.propensity]\niterations = 20\nburn_in = 5\n",
    )
    .unwrap();
    let go = |out: &Path| {
        run([
            "prince",
            "simulate",
            "--setting",
            "placebo",
            "--reps",
            "2",
            "--n",
            "300",
            "--seed",
            "7",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(go(&a), 0);
    assert_eq!(go(&b), 0);
    for f in ["simulation.csv", "replications.csv", "simulation_metadata.json"] {
        assert_eq!(read(&a, f), read(&b, f), "{f}");
    }
    let table = String::from_utf8(read(&a, "simulation.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "setting,estimator,bias,sd,coverage,rmse,replications_used,failures");
    assert!(lines[1].starts_with("placebo,Prince BART,"));
    assert!(lines[2].starts_with("placebo,2SLS,"));
}

#[test]
fn usage_and_runtime_errors_have_distinct_codes() {
    assert_eq!(run(["prince", "bogus"]), 2);
    assert_eq!(run(["prince"]), 2);
    let tmp = tempfile::tempdir().unwrap();
    let (data, _) = setup(tmp.path());
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "burn_in = 5000\n").unwrap();
    assert_eq!(fit(&data, &bad, &tmp.path().join("o")), 1);
    let missing = tmp.path().join("missing");
    assert_eq!(run(["prince", "report", "--results", missing.to_str().unwrap()]), 1);
}
