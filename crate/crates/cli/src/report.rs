//! Effect tables, plot-ready CSVs and run metadata rendered from a draws
//! archive plus the fit results. Rendering is a pure function of its inputs,
//! so re-running it on a stored archive reproduces the same bytes.

use crate::archive::{chain_rows, Archive};
use crate::fit::FitResults;
use anyhow::{Context, Result};
use prince_core::diagnostics::{diagnose, ChainMatrix, RHAT_THRESHOLD};
use prince_core::estimands::{quantile_sorted, summarize, EffectSummary};
use std::fmt::Write as _;
use std::path::Path;

pub const RESULTS_FILE: &str = "results.json";
pub const METADATA_FILE: &str = "run_metadata.json";

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        String::new()
    }
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn effect_row(out: &mut String, name: &str, s: &EffectSummary) {
    writeln!(out, "{name},{},{},{}", num(s.mean), num(s.lo), num(s.hi)).unwrap();
}

fn rho_label(rho: f64) -> String {
    format!("MATE^a (rho={rho})")
}

pub fn effects_csv(archive: &Archive, results: &FitResults) -> Result<String> {
    let mut out = String::from("estimand,mean,lo90,hi90\n");
    let (_, mate) = archive.require("mate")?;
    let label = if results.config.rho == 0.0 { "MATE^a".to_string() } else { rho_label(results.config.rho) };
    effect_row(&mut out, &label, &summarize("MATE^a", mate)?);
    if let Some((_, v)) = archive.get("pate") {
        effect_row(&mut out, "PATE", &summarize("PATE", v)?);
    }
    if let Some(t) = &results.tsls {
        writeln!(out, "2SLS,{},{},{}", num(t.estimate), num(t.lo), num(t.hi)).unwrap();
    }
    if let (Some((_, v)), Some(rho)) = (archive.get("mate_sensitivity"), results.config.sensitivity_rho) {
        effect_row(&mut out, &format!("Sensitivity {}", rho_label(rho)), &summarize("sensitivity", v)?);
    }
    Ok(out)
}

/// Per-draw MATE^a_j over all chains, skipping draws with no mass at level j.
fn level_draws(archive: &Archive, big_j: usize) -> Result<Vec<Vec<f64>>> {
    let (_, num_v) = archive.require("level_num")?;
    let (_, den_v) = archive.require("level_den")?;
    Ok((0..big_j)
        .map(|j| {
            num_v
                .chunks(big_j)
                .zip(den_v.chunks(big_j))
                .filter(|(_, d)| d[j] > 0.0)
                .map(|(n, d)| n[j] / d[j])
                .collect()
        })
        .collect())
}

pub fn by_parity_csv(archive: &Archive, results: &FitResults) -> Result<String> {
    let big_j = results.big_j as usize;
    let (_, den_v) = archive.require("level_den")?;
    let draws = den_v.len() / big_j.max(1);
    let mut share = vec![0.0; big_j];
    for d in den_v.chunks(big_j) {
        let total: f64 = d.iter().sum();
        if total > 0.0 {
            for j in 0..big_j {
                share[j] += d[j] / total / draws as f64;
            }
        }
    }
    let mut out = String::from("j,mean,lo90,hi90,affected_share\n");
    for (j, v) in level_draws(archive, big_j)?.iter().enumerate() {
        if v.is_empty() {
            continue;
        }
        let s = summarize(format!("MATE^a_{}", j + 1), v)?;
        writeln!(out, "{},{},{},{},{}", j + 1, num(s.mean), num(s.lo), num(s.hi), num(share[j])).unwrap();
    }
    Ok(out)
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

pub fn heterogeneity_csv(archive: &Archive, results: &FitResults) -> Result<String> {
    let mut out = String::from("row_type,label,mean,lo90,hi90,q25,q50,q75,prob_negative,affected_mass\n");
    if let Some((shape, v)) = archive.get("mcate") {
        for (g, draws) in chain_rows(shape, v).iter().enumerate() {
            let s = summarize("MCATE", draws)?;
            let sub = &results.subgroups[g];
            writeln!(
                out,
                "subgroup,{},{},{},{},,,,,{}",
                quote(&sub.label),
                num(s.mean),
                num(s.lo),
                num(s.hi),
                num(sub.affected_mass)
            )
            .unwrap();
        }
    }
    for (name, block) in [("d_fixed", "d_fixed"), ("d_per_draw", "d_per_draw")] {
        let Some((_, v)) = archive.get(block) else { continue };
        let s = summarize(name, v)?;
        let mut sorted = v.to_vec();
        sorted.sort_by(f64::total_cmp);
        let neg = v.iter().filter(|&&x| x < 0.0).count() as f64 / v.len() as f64;
        let label = match (name, results.fixed_largest, results.fixed_smallest) {
            ("d_fixed", Some(a), Some(b)) => format!("{} minus {}", results.subgroups[a].label, results.subgroups[b].label),
            _ => "max minus min per draw".into(),
        };
        writeln!(
            out,
            "{name},{},{},{},{},{},{},{},{},",
            quote(&label),
            num(s.mean),
            num(s.lo),
            num(s.hi),
            num(quantile_sorted(&sorted, 0.25)),
            num(quantile_sorted(&sorted, 0.5)),
            num(quantile_sorted(&sorted, 0.75)),
            num(neg)
        )
        .unwrap();
    }
    Ok(out)
}

/// Monitored quantities as [chain][draw] matrices.
pub fn monitored(archive: &Archive, big_j: usize) -> Result<Vec<(String, Vec<Vec<f64>>)>> {
    let mut out = Vec::new();
    let (shape, mate) = archive.require("mate")?;
    out.push(("MATE^a".to_string(), chain_rows(shape, mate)));
    let (shape, num_v) = archive.require("level_num")?;
    let (_, den_v) = archive.require("level_den")?;
    let (chains, draws) = (shape[0], shape[1]);
    for j in 0..big_j {
        let mut m = vec![Vec::with_capacity(draws); chains];
        let mut complete = true;
        for c in 0..chains {
            for d in 0..draws {
                let k = (c * draws + d) * big_j + j;
                if den_v[k] > 0.0 {
                    m[c].push(num_v[k] / den_v[k]);
                } else {
                    complete = false;
                }
            }
        }
        // Levels that lose mass in some draw have no well-defined trace.
        if complete {
            out.push((format!("MATE^a_{}", j + 1), m));
        }
    }
    let (shape, sig) = archive.require("sigma_w")?;
    for arm in 0..2 {
        let m: Vec<Vec<f64>> = chain_rows(shape, sig).iter().map(|c| c.chunks(2).map(|p| p[arm]).collect()).collect();
        out.push((format!("sigma_W{arm}"), m));
    }
    Ok(out)
}

pub fn diagnostics_csv(archive: &Archive, big_j: usize) -> Result<String> {
    let mut out = String::from("quantity,rhat,ess,pass,degenerate\n");
    for (name, m) in monitored(archive, big_j)? {
        let Ok(cm) = ChainMatrix::new(m) else {
            writeln!(out, "{name},,,,").unwrap();
            continue;
        };
        let d = diagnose(&cm);
        writeln!(out, "{name},{},{:.1},{},{}", num(d.rhat), d.ess, d.rhat <= RHAT_THRESHOLD, d.degenerate).unwrap();
    }
    Ok(out)
}

/// Write every report file into `dir`.
pub fn emit_reports(archive: &Archive, results: &FitResults, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_file(dir, "effects.csv", &effects_csv(archive, results)?)?;
    write_file(dir, "by_parity.csv", &by_parity_csv(archive, results)?)?;
    write_file(dir, "heterogeneity.csv", &heterogeneity_csv(archive, results)?)?;
    write_file(dir, "diagnostics.csv", &diagnostics_csv(archive, results.big_j as usize)?)?;
    if let Some(t) = &results.surrogate_text {
        write_file(dir, "surrogate_tree.txt", t)?;
    }
    Ok(())
}

pub fn write_results(results: &FitResults, dir: &Path) -> Result<()> {
    write_file(dir, RESULTS_FILE, &(serde_json::to_string_pretty(results)? + "\n"))?;
    let meta = serde_json::json!({
        "program": "prince",
        "version": env!("CARGO_PKG_VERSION"),
        "seed": results.seed,
        "config": results.config,
        "thin": results.thin,
        "surface_stride": results.surface_stride,
        "rows": results.rows,
        "load": results.load,
        "numerical_flags": results.flags,
    });
    write_file(dir, METADATA_FILE, &(serde_json::to_string_pretty(&meta)? + "\n"))
}

pub fn read_results(dir: &Path) -> Result<FitResults> {
    let path = dir.join(RESULTS_FILE);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
