//! Draws archive: one flat file of little-endian f64 values and a JSON
//! sidecar giving each block's name, shape and offset.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const DATA_FILE: &str = "draws.bin";
pub const SIDECAR_FILE: &str = "draws.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in values (not bytes) from the start of the data file.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    format: String,
    version: u32,
    blocks: Vec<BlockInfo>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Archive {
    blocks: Vec<(BlockInfo, Vec<f64>)>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        if shape.iter().product::<usize>() != data.len() {
            bail!("block `{name}`: shape {shape:?} does not match {} values", data.len());
        }
        if self.get(name).is_some() {
            bail!("duplicate block `{name}`");
        }
        let offset = self.blocks.last().map_or(0, |(b, d)| b.offset + d.len());
        self.blocks.push((BlockInfo { name: name.into(), shape, offset }, data));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<(&[usize], &[f64])> {
        self.blocks.iter().find(|(b, _)| b.name == name).map(|(b, d)| (b.shape.as_slice(), d.as_slice()))
    }

    pub fn require(&self, name: &str) -> Result<(&[usize], &[f64])> {
        self.get(name).with_context(|| format!("draws archive has no block `{name}`"))
    }

    pub fn names(&self) -> Vec<&str> {
        self.blocks.iter().map(|(b, _)| b.name.as_str()).collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        for (_, d) in &self.blocks {
            for v in d {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let path = dir.join(DATA_FILE);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        let sidecar = Sidecar {
            format: "f64-le".into(),
            version: 1,
            blocks: self.blocks.iter().map(|(b, _)| b.clone()).collect(),
        };
        let path = dir.join(SIDECAR_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&sidecar)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(SIDECAR_FILE);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let sidecar: Sidecar = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if sidecar.format != "f64-le" {
            bail!("unsupported archive format `{}`", sidecar.format);
        }
        let path = dir.join(DATA_FILE);
        let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        if bytes.len() % 8 != 0 {
            bail!("{} is not a whole number of f64 values", path.display());
        }
        let values: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let mut blocks = Vec::new();
        for b in sidecar.blocks {
            let len: usize = b.shape.iter().product();
            let end = b.offset + len;
            if end > values.len() {
                bail!("block `{}` runs past the end of the data file", b.name);
            }
            let data = values[b.offset..end].to_vec();
            blocks.push((b, data));
        }
        Ok(Archive { blocks })
    }
}

/// Rows of a [chains, draws] block.
pub fn chain_rows(shape: &[usize], data: &[f64]) -> Vec<Vec<f64>> {
    let per = shape[1..].iter().product::<usize>().max(1);
    data.chunks(per).map(|c| c.to_vec()).collect()
}
