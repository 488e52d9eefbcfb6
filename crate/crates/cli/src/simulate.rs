//! The `simulate` command: study configuration, base table loading and the
//! per-estimator summary table.

use anyhow::{bail, Context, Result};
use prince_core::simulation::{generate_base, BaseRow, SimConfig, SimResult, BASE_ROWS};
use std::fmt::Write as _;
use std::path::Path;

pub const TABLE_FILE: &str = "simulation.csv";
pub const REPS_FILE: &str = "replications.csv";
pub const META_FILE: &str = "simulation_metadata.json";

/// Base table from a CSV with columns age, education, religion, urban,
/// sexual_experience, z, w, y (categories coded 0, 1, 2).
pub fn load_base(path: &Path) -> Result<Vec<BaseRow>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<BaseRow>().enumerate() {
        rows.push(rec.with_context(|| format!("row {}: malformed base-table record", i + 1))?);
    }
    if rows.is_empty() {
        bail!("base table {} has no rows", path.display());
    }
    Ok(rows)
}

pub fn synthetic_base(seed: u64) -> Result<Vec<BaseRow>> {
    Ok(generate_base(BASE_ROWS, seed)?)
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        String::new()
    }
}

pub fn table_csv(result: &SimResult) -> String {
    let mut out = String::from("setting,estimator,bias,sd,coverage,rmse,replications_used,failures\n");
    for m in &result.metrics {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            result.config.setting.name(),
            m.estimator,
            num(m.bias),
            num(m.sd),
            num(m.coverage),
            num(m.rmse),
            m.used,
            result.failures
        )
        .unwrap();
    }
    out
}

pub fn replications_csv(result: &SimResult) -> String {
    let mut out = String::from(
        "replication,seed,truth,affected_units,bart_mean,bart_lo90,bart_hi90,bart_sd,bart_rhat,tsls_estimate,tsls_lo90,tsls_hi90,tsls_se,weak_instrument,failure\n",
    );
    for r in &result.replications {
        let b = |f: fn(&prince_core::simulation::Estimate) -> f64| r.bart.as_ref().map_or(String::new(), |e| num(f(e)));
        let t = |f: fn(&prince_core::simulation::Estimate) -> f64| r.tsls.as_ref().map_or(String::new(), |e| num(f(e)));
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},\"{}\"",
            r.index,
            r.seed,
            num(r.truth),
            r.affected_units,
            b(|e| e.estimate),
            b(|e| e.lo),
            b(|e| e.hi),
            b(|e| e.sd),
            r.bart_rhat.map_or(String::new(), num),
            t(|e| e.estimate),
            t(|e| e.lo),
            t(|e| e.hi),
            t(|e| e.sd),
            r.weak_instrument,
            r.failure.clone().unwrap_or_default().replace('"', "\"\"")
        )
        .unwrap();
    }
    out
}

pub fn metadata_json(result: &SimResult, base_source: &str) -> Result<String> {
    let meta = serde_json::json!({
        "program": "prince",
        "version": env!("CARGO_PKG_VERSION"),
        "setting": result.config.setting.name(),
        "seed": result.config.seed,
        "replication_seeds": result.replications.iter().map(|r| r.seed).collect::<Vec<_>>(),
        "config": result.config,
        "base_table": base_source,
        "gamma_hat": result.gamma,
        "beta_hat": result.beta,
        "failures": result.failures,
        "excluded_replications": result.replications.iter().filter(|r| r.failure.is_some()).map(|r| r.index).collect::<Vec<_>>(),
        "mcmc_note": format!(
            "reduced settings: {} chains x {} iterations ({} burn-in, thin {}), {} trees",
            result.config.bart.chains,
            result.config.bart.chain.iterations,
            result.config.bart.chain.burn_in,
            result.config.bart.chain.thin,
            result.config.bart.chain.hyper.n_trees
        ),
        "truth_method": "exact expectation over outcome noise given each replication's potential counts and confounder; Monte Carlo SE 0",
    });
    Ok(serde_json::to_string_pretty(&meta)? + "\n")
}

pub fn write_outputs(result: &SimResult, base_source: &str, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (name, text) in [
        (TABLE_FILE, table_csv(result)),
        (REPS_FILE, replications_csv(result)),
        (META_FILE, metadata_json(result, base_source)?),
    ] {
        let path = dir.join(name);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// Study settings with optional overrides from a TOML file.
pub fn sim_config(path: Option<&Path>, base: SimConfig) -> Result<SimConfig> {
    let Some(path) = path else { return Ok(base) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let overrides: toml::Value = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let mut current = toml::Value::try_from(&base)?;
    merge(&mut current, overrides);
    current.try_into().with_context(|| format!("invalid study config in {}", path.display()))
}

fn merge(into: &mut toml::Value, from: toml::Value) {
    match (into, from) {
        (toml::Value::Table(a), toml::Value::Table(b)) => {
            for (k, v) in b {
                match a.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        a.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
