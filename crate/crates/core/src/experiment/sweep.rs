//! Version-by-variant grids laid out like the published comparison tables.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use log::{info, warn};

use crate::error::{Error, Result};
use crate::net::Version;

use super::config::{ExperimentConfig, SweepKind};
use super::reference::{BASELINES, NOTE};
use super::run::{reference, run_experiment, ResultRow};

/// One grid cell. Failures keep their message and do not stop the sweep.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub version: Version,
    pub variant: String,
    /// Published value for the cell, present even when the run failed.
    pub paper_ref: Option<f64>,
    pub outcome: std::result::Result<ResultRow, String>,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub kind: SweepKind,
    pub versions: Vec<Version>,
    pub variants: Vec<String>,
    /// Row-major: versions outer, variants inner.
    pub cells: Vec<SweepCell>,
}

/// Configuration of one cell: `base` with the version and the swept axis
/// replaced, and the matching reference table.
pub fn cell_config(base: &ExperimentConfig, kind: SweepKind, version: Version, variant: &str) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    cfg.version = version;
    cfg.reference_table = kind.reference_table();
    cfg.sweep = Default::default();
    let key = match kind {
        SweepKind::LayerStructure | SweepKind::Architecture => "structure",
        SweepKind::Loss => "loss",
        SweepKind::Normalization => "normalization",
    };
    cfg.set(key, variant)?;
    Ok(cfg)
}

/// Runs every (version, variant) pair of `base.sweep` and writes the
/// pivoted table to `<out>/sweep_<kind>.csv`.
pub fn sweep(base: &ExperimentConfig) -> Result<(SweepTable, PathBuf)> {
    base.validate()?;
    let kind = base
        .sweep
        .kind
        .ok_or_else(|| Error::Config("`sweep` is not set; use layer_structure, loss, normalization or architecture".into()))?;
    let variants = if base.sweep.variants.is_empty() {
        kind.default_variants()
    } else {
        base.sweep.variants.clone()
    };
    let versions = base.sweep.versions.clone();
    let mut cells = Vec::new();
    for &version in &versions {
        for variant in &variants {
            info!("sweep {kind}: {version} / {variant}");
            let cfg = cell_config(base, kind, version, variant);
            let paper_ref = cfg.as_ref().ok().and_then(reference);
            let outcome = cfg
                .and_then(|cfg| run_experiment(&cfg))
                .map(|r| r.row)
                .map_err(|e| {
                    warn!("sweep cell {version}/{variant} failed: {e}");
                    e.to_string()
                });
            cells.push(SweepCell {
                version,
                variant: variant.clone(),
                paper_ref,
                outcome,
            });
        }
    }
    let table = SweepTable {
        kind,
        versions,
        variants,
        cells,
    };
    fs::create_dir_all(&base.out).map_err(|e| Error::io(&base.out, e))?;
    let path = base.out.join(format!("sweep_{kind}.csv"));
    fs::write(&path, table.pivot_csv()).map_err(|e| Error::io(&path, e))?;
    Ok((table, path))
}

fn pct(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.1}")).unwrap_or_default()
}

impl SweepTable {
    pub fn failed(&self) -> Vec<&SweepCell> {
        self.cells.iter().filter(|c| c.outcome.is_err()).collect()
    }

    /// Versions as rows, variants as columns: measured Top-1 first, then
    /// one reference column per variant. Failed cells read `FAILED`.
    /// Architecture tables end with the published baselines, which have
    /// reference values only.
    pub fn pivot_csv(&self) -> String {
        let mut s = String::new();
        let refs: Vec<String> = self.variants.iter().map(|v| format!("{v} paper_ref ({NOTE})")).collect();
        let mut header = vec!["version".to_string()];
        header.extend(self.variants.iter().cloned());
        header.extend(refs);
        let _ = writeln!(s, "{}", header.join(","));
        for (i, v) in self.versions.iter().enumerate() {
            let row = &self.cells[i * self.variants.len()..(i + 1) * self.variants.len()];
            let mut line = vec![v.to_string()];
            line.extend(row.iter().map(|c| match &c.outcome {
                Ok(r) => pct(Some(r.top1)),
                Err(_) => "FAILED".to_string(),
            }));
            line.extend(row.iter().map(|c| pct(c.paper_ref)));
            let _ = writeln!(s, "{}", line.join(","));
        }
        if self.kind == SweepKind::Architecture && !self.variants.is_empty() {
            // baselines go under the alpha reference column, or the last one
            let at = self.variants.iter().position(|v| v == "alpha").unwrap_or(self.variants.len() - 1);
            for (name, value) in BASELINES {
                let mut line = vec![name.to_string()];
                line.extend(self.variants.iter().map(|_| String::new()));
                line.extend((0..self.variants.len()).map(|i| if i == at { pct(Some(value)) } else { String::new() }));
                let _ = writeln!(s, "{}", line.join(","));
            }
        }
        s
    }
}
