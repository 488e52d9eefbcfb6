//! Delimited-text ingestion into a validated analysis sample.

use crate::config::{ColumnKind, ColumnMapping};
use anyhow::{anyhow, bail, Context, Result};
use prince_core::strata::{AnalysisRow, Covariate, Dataset};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub raw: usize,
    pub kept: usize,
    pub dropped: usize,
    /// Rows dropped because of a missing cell, by the first missing column.
    pub dropped_by_column: BTreeMap<String, usize>,
    pub levels: BTreeMap<String, Vec<String>>,
}

/// Sort level labels numerically when every label is a number.
fn sort_levels(levels: BTreeSet<String>) -> Vec<String> {
    let mut v: Vec<String> = levels.into_iter().collect();
    if v.iter().all(|s| s.parse::<f64>().is_ok()) {
        v.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    }
    v
}

fn parse_binary(s: &str, col: &str, row: usize) -> Result<u8> {
    match s.parse::<f64>() {
        Ok(v) if v == 0.0 => Ok(0),
        Ok(v) if v == 1.0 => Ok(1),
        _ => bail!("row {row}: column `{col}` must be 0 or 1, got `{s}`"),
    }
}

fn parse_count(s: &str, col: &str, row: usize) -> Result<u32> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 => Ok(v as u32),
        _ => bail!("row {row}: column `{col}` must be a non-negative integer, got `{s}`"),
    }
}

fn parse_number(s: &str, col: &str, row: usize) -> Result<f64> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => bail!("row {row}: column `{col}` is not numeric: `{s}`"),
    }
}

/// Read a comma-separated file with a header row. Rows with an empty cell in
/// any mapped column are dropped and counted. Row numbers in errors count
/// data rows from 1.
pub fn load_table(path: &Path, mapping: &ColumnMapping) -> Result<(Dataset, LoadReport)> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    load_reader(file, mapping)
}

pub fn load_reader<R: std::io::Read>(reader: R, mapping: &ColumnMapping) -> Result<(Dataset, LoadReport)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().context("reading header row")?.clone();
    let find = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| anyhow!("missing column `{name}`"))
    };
    let mut names: Vec<&str> = vec![&mapping.outcome, &mapping.treatment, &mapping.instrument];
    names.extend(mapping.covariates.iter().map(|c| c.name.as_str()));
    names.extend(mapping.weight.as_deref());
    names.extend(mapping.cluster.as_deref());
    let idx: Vec<usize> = names.iter().map(|n| find(n)).collect::<Result<_>>()?;

    let mut report = LoadReport { raw: 0, kept: 0, dropped: 0, dropped_by_column: BTreeMap::new(), levels: BTreeMap::new() };
    let mut kept: Vec<(usize, Vec<String>)> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.with_context(|| format!("row {row}: malformed record"))?;
        report.raw += 1;
        let cells: Vec<String> = idx.iter().map(|&i| rec.get(i).unwrap_or("").trim().to_string()).collect();
        if let Some(k) = cells.iter().position(|c| c.is_empty()) {
            report.dropped += 1;
            *report.dropped_by_column.entry(names[k].to_string()).or_default() += 1;
            continue;
        }
        kept.push((row, cells));
    }
    report.kept = kept.len();

    let n_cov = mapping.covariates.len();
    let mut level_maps: Vec<Option<Vec<String>>> = vec![None; n_cov];
    for (c, cov) in mapping.covariates.iter().enumerate() {
        if cov.kind == ColumnKind::Categorical {
            let set: BTreeSet<String> = kept.iter().map(|(_, cells)| cells[3 + c].clone()).collect();
            let levels = sort_levels(set);
            report.levels.insert(cov.name.clone(), levels.clone());
            level_maps[c] = Some(levels);
        }
    }
    let cluster_ids: Option<Vec<String>> = mapping.cluster.as_ref().map(|_| {
        let pos = names.len() - 1;
        sort_levels(kept.iter().map(|(_, cells)| cells[pos].clone()).collect())
    });
    let weight_pos = mapping.weight.as_ref().map(|_| 3 + n_cov);

    let mut rows = Vec::with_capacity(kept.len());
    for (row, cells) in &kept {
        let y = parse_binary(&cells[0], &mapping.outcome, *row)?;
        let w = parse_count(&cells[1], &mapping.treatment, *row)?;
        let z = parse_binary(&cells[2], &mapping.instrument, *row)?;
        let mut x = Vec::with_capacity(n_cov);
        for (c, cov) in mapping.covariates.iter().enumerate() {
            let cell = &cells[3 + c];
            x.push(match &level_maps[c] {
                Some(levels) => levels.iter().position(|l| l == cell).expect("level enumerated") as f64,
                None => parse_number(cell, &cov.name, *row)?,
            });
        }
        let weight = match weight_pos {
            Some(p) => {
                let v = parse_number(&cells[p], mapping.weight.as_deref().unwrap(), *row)?;
                if v <= 0.0 {
                    bail!("row {row}: weight must be positive, got {v}");
                }
                v
            }
            None => 1.0,
        };
        let cluster = cluster_ids.as_ref().map(|ids| ids.iter().position(|c| c == &cells[names.len() - 1]).unwrap() as u64);
        rows.push(AnalysisRow { y, w, z, x, weight, cluster });
    }
    let covariates = mapping
        .covariates
        .iter()
        .zip(&level_maps)
        .map(|(c, levels)| match levels {
            Some(l) => Covariate::categorical(c.name.clone(), l.clone()),
            None => Covariate::numeric(c.name.clone()),
        })
        .collect();
    if rows.is_empty() {
        bail!("no complete rows after dropping missing values");
    }
    let data = Dataset::new(covariates, rows)?;
    Ok((data, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::CovariateColumn;

    fn mapping() -> ColumnMapping {
        ColumnMapping {
            outcome: "y".into(),
            treatment: "w".into(),
            instrument: "z".into(),
            covariates: vec![
                CovariateColumn { name: "age".into(), kind: ColumnKind::Numeric },
                CovariateColumn { name: "religion".into(), kind: ColumnKind::Categorical },
            ],
            weight: None,
            cluster: None,
        }
    }

    #[test]
    fn well_formed_rows() {
        let text = "y,w,z,age,religion\n1,2,0,25,christian\n0,0,1,41,muslim\n1,3,0,33.5,christian\n";
        let (d, r) = load_reader(text.as_bytes(), &mapping()).unwrap();
        assert_eq!(d.rows.len(), 3);
        assert_eq!((r.raw, r.kept, r.dropped), (3, 3, 0));
        assert_eq!(r.levels["religion"], vec!["christian", "muslim"]);
        assert_eq!(d.rows[1].x, vec![41.0, 1.0]);
    }

    #[test]
    fn missing_instrument_column_is_named() {
        let text = "y,w,age,religion\n1,2,25,a\n";
        let err = load_reader(text.as_bytes(), &mapping()).unwrap_err();
        assert!(err.to_string().contains("`z`"), "{err}");
    }

    #[test]
    fn blank_outcome_drops_one_row() {
        let text = "y,w,z,age,religion\n1,2,0,25,a\n,1,0,30,b\n0,0,1,41,a\n";
        let (d, r) = load_reader(text.as_bytes(), &mapping()).unwrap();
        assert_eq!(d.rows.len(), 2);
        assert_eq!(r.dropped, 1);
        assert_eq!(r.dropped_by_column["y"], 1);
        assert_eq!(r.kept + r.dropped, r.raw);
    }

    #[test]
    fn non_numeric_cell_reports_row() {
        let text = "y,w,z,age,religion\n1,2,0,25,a\n0,1,0,old,b\n";
        let err = load_reader(text.as_bytes(), &mapping()).unwrap_err();
        assert!(err.to_string().contains("row 2") && err.to_string().contains("age"), "{err}");
        let text = "y,w,z,age,religion\n1,2.5,0,25,a\n";
        assert!(load_reader(text.as_bytes(), &mapping()).unwrap_err().to_string().contains("row 1"));
    }

    #[test]
    fn weights_and_clusters() {
        let mut m = mapping();
        m.weight = Some("wt".into());
        m.cluster = Some("psu".into());
        let text = "y,w,z,age,religion,wt,psu\n1,2,0,25,a,1.5,10\n0,1,0,30,b,0.5,9\n";
        let (d, _) = load_reader(text.as_bytes(), &m).unwrap();
        assert_eq!(d.rows[0].weight, 1.5);
        assert_eq!(d.rows[0].cluster, Some(1));
        assert_eq!(d.rows[1].cluster, Some(0));
    }
}
