//! Machine-readable run record written next to the CSV artifacts.

use crate::config::RunConfig;
use crate::stats::RctiRow;
use rcti_core::energy::EnergyReport;
use rcti_core::rcti::{DeltaR, RctiValue};
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize)]
pub struct ModelArtifact {
    pub name: String,
    pub epsilon: Option<f64>,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct OutputFiles {
    pub stats_csv: Option<PathBuf>,
    pub spans_csv: Option<PathBuf>,
    pub rcti_csv: Option<PathBuf>,
    pub figures: Vec<PathBuf>,
}

/// Trade-off row as embedded in the manifest; sentinels are spelled the same
/// way the CSV spells them so the two artifacts can be diffed directly.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ManifestRctiRow {
    pub attack: String,
    pub epsilon: f64,
    pub delta_r: String,
    pub delta_c: f64,
    pub rcti: String,
    pub elasticity: String,
}

impl From<&RctiRow> for ManifestRctiRow {
    fn from(row: &RctiRow) -> Self {
        let delta_r = match row.record.delta_r {
            DeltaR::Finite(v) => format!("{v}"),
            DeltaR::Infinite => "inf".into(),
            DeltaR::NoChange => "no-change".into(),
        };
        let rcti = match row.record.rcti {
            RctiValue::Finite(v) => format!("{v}"),
            RctiValue::Infinite => "inf".into(),
            RctiValue::NoChange => "no-change".into(),
        };
        let elasticity = row
            .record
            .elasticity
            .map(|e| e.label().to_string())
            .unwrap_or_else(|| "No-Change".into());
        Self {
            attack: row.attack.clone(),
            epsilon: row.record.epsilon,
            delta_r,
            delta_c: row.record.delta_c,
            rcti,
            elasticity,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DataProvenance {
    pub train: String,
    pub test: String,
    pub train_len: usize,
    pub test_len: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub created: String,
    pub finished: Option<String>,
    /// "ok" or "failed".
    pub status: String,
    pub failed_stage: Option<String>,
    pub config: RunConfig,
    pub data: Option<DataProvenance>,
    pub spans: Vec<EnergyReport>,
    pub models: Vec<ModelArtifact>,
    pub outputs: OutputFiles,
    pub rcti: Vec<ManifestRctiRow>,
}

impl RunManifest {
    pub fn new(config: RunConfig) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created: chrono::Utc::now().to_rfc3339(),
            finished: None,
            status: "running".into(),
            failed_stage: None,
            config,
            data: None,
            spans: Vec::new(),
            models: Vec::new(),
            outputs: OutputFiles::default(),
            rcti: Vec::new(),
        }
    }

    /// Serializes to `manifest.json`, first checking that every referenced
    /// artifact file actually exists.
    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let mut referenced: Vec<&PathBuf> = self.models.iter().map(|m| &m.path).collect();
        referenced.extend(self.outputs.stats_csv.iter());
        referenced.extend(self.outputs.spans_csv.iter());
        referenced.extend(self.outputs.rcti_csv.iter());
        referenced.extend(self.outputs.figures.iter());
        for p in referenced {
            anyhow::ensure!(
                p.exists(),
                "manifest references missing artifact {}",
                p.display()
            );
        }
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }
}
