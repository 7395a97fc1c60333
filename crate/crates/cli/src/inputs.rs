use std::collections::HashMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use gencol::costs::CostSpec;
use gencol::io::{read_csv_cloud, read_idx_images, read_pgm};
use gencol::measures::{product_size, Configuration, Marginal};

use crate::InputArgs;

/// Reads every marginal named on the command line, files first, then IDX
/// images in the order given.
pub fn load(input: &InputArgs) -> Result<Vec<Marginal>> {
    let mut out = Vec::new();
    for path in &input.inputs {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        let m = match ext.to_ascii_lowercase().as_str() {
            "pgm" => read_pgm(path),
            "csv" | "txt" => read_csv_cloud(path),
            _ => bail!(gencol::Error::InvalidParameter(format!(
                "{}: expected a .pgm or .csv file",
                path.display()
            ))),
        }
        .with_context(|| format!("reading {}", path.display()))?;
        out.push(m.with_label(path.display().to_string()));
    }
    if let Some(idx) = &input.idx {
        let images = read_idx_images(idx, &input.images)
            .with_context(|| format!("reading {}", idx.display()))?;
        out.extend(images);
    }
    Ok(out)
}

pub fn require(marginals: &[Marginal], at_least: usize, what: &str) -> Result<()> {
    if marginals.len() < at_least {
        bail!(gencol::Error::InvalidParameter(format!(
            "{what} needs at least {at_least} marginals, got {}",
            marginals.len()
        )));
    }
    Ok(())
}

/// Dense cost table with lines `i1,...,iN,cost`; every configuration of the
/// grid must appear exactly once.
pub fn cost_table(path: &Path, shape: &[usize]) -> Result<CostSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let parse_err = |line: usize, message: String| gencol::Error::Parse { line, message };
    let mut table: HashMap<Configuration, f64> = HashMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != shape.len() + 1 {
            bail!(parse_err(no + 1, format!("expected {} fields", shape.len() + 1)));
        }
        let idx: Vec<usize> = fields[..shape.len()]
            .iter()
            .map(|f| f.parse().map_err(|_| parse_err(no + 1, format!("bad index {f:?}"))))
            .collect::<Result<_, _>>()?;
        let cost: f64 = fields[shape.len()]
            .parse()
            .ok()
            .filter(|c: &f64| c.is_finite())
            .ok_or_else(|| parse_err(no + 1, "bad cost".into()))?;
        let c = Configuration::new(idx);
        if !c.in_bounds(shape) {
            bail!(parse_err(no + 1, "index out of range".into()));
        }
        if table.insert(c, cost).is_some() {
            bail!(parse_err(no + 1, "duplicate configuration".into()));
        }
    }
    if table.len() as u128 != product_size(shape) {
        bail!(gencol::Error::InvalidParameter(format!(
            "cost table has {} entries, the grid has {}",
            table.len(),
            product_size(shape)
        )));
    }
    Ok(CostSpec::custom(move |c, _| table[c]))
}
