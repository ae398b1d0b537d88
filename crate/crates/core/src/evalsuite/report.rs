use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::classifier::UtilityReport;
use super::fidelity::FeatureDistance;
use super::latent::Pca;
use super::mia::RocCurve;
use crate::datastore::RecordMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub nmi: f64,
    pub k_chosen: usize,
    pub pca_components: usize,
    pub elbow_inertia: Vec<f64>,
    /// Mean absolute correlation difference over column pairs.
    pub cwc: f64,
    /// Summed absolute correlation difference over column pairs.
    pub cwc_sum: f64,
    pub apd_per_feature: Vec<FeatureDistance>,
    pub awd_per_feature: Vec<FeatureDistance>,
    pub dwd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub tool_version: String,
    pub seed: u64,
    pub config_fingerprint: Option<String>,
    pub schema_fingerprint: String,
    pub real_train_rows: usize,
    pub real_test_rows: usize,
    pub synthetic_train_rows: usize,
    pub synthetic_test_rows: usize,
    pub mia_cap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: ReportMeta,
    pub privacy: RocCurve,
    pub utility: Option<UtilityReport>,
    pub fidelity: FidelityReport,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Paths written by [`emit_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlotFiles {
    pub report: PathBuf,
    pub bigram: PathBuf,
    pub histograms: PathBuf,
    pub pc_scatter: PathBuf,
}

impl PlotFiles {
    pub fn all(&self) -> [&Path; 4] {
        [&self.report, &self.bigram, &self.histograms, &self.pc_scatter]
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Counts of `values` in `bins` equal-width bins over [0, 1]; 1.0 lands in the last bin.
fn histogram(values: &[f64], bins: usize) -> Vec<usize> {
    let mut h = vec![0; bins];
    for &v in values {
        let b = ((v * bins as f64).floor() as usize).min(bins - 1);
        h[b] += 1;
    }
    h
}

/// Writes `report.json` plus the bigram, histogram and PC-scatter CSVs for
/// `real` versus `synthetic` into `out_dir`.
pub fn emit_report(
    report: &EvalReport,
    real: &RecordMatrix,
    synthetic: &RecordMatrix,
    out_dir: impl AsRef<Path>,
    bins: usize,
) -> Result<PlotFiles> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let files = PlotFiles {
        report: dir.join("report.json"),
        bigram: dir.join("bigram.csv"),
        histograms: dir.join("histograms.csv"),
        pc_scatter: dir.join("pc_scatter.csv"),
    };
    fs::write(&files.report, report.to_json()?).map_err(|e| Error::io(&files.report, e))?;

    let schema = &real.schema;
    let mut w = csv::Writer::from_path(&files.bigram)?;
    w.write_record(["feature", "real_prevalence", "synthetic_prevalence"])?;
    for c in schema.binary_indices() {
        w.write_record([
            schema.columns[c].name.clone(),
            mean(&real.column(c)).to_string(),
            mean(&synthetic.column(c)).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&files.bigram, e))?;

    let mut w = csv::Writer::from_path(&files.histograms)?;
    w.write_record(["feature", "bin", "lower", "upper", "real_count", "synthetic_count"])?;
    for c in schema.continuous_indices() {
        let hr = histogram(&real.column(c), bins);
        let hs = histogram(&synthetic.column(c), bins);
        for b in 0..bins {
            w.write_record([
                schema.columns[c].name.clone(),
                b.to_string(),
                (b as f64 / bins as f64).to_string(),
                ((b + 1) as f64 / bins as f64).to_string(),
                hr[b].to_string(),
                hs[b].to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&files.histograms, e))?;

    let stacked = real.vstack(synthetic)?;
    let pca = Pca::fit(&stacked.values)?;
    let m = stacked.width().min(2);
    let proj = pca.project(&stacked.values, m);
    let mut w = csv::Writer::from_path(&files.pc_scatter)?;
    w.write_record(["source", "pc1", "pc2"])?;
    for r in 0..proj.rows() {
        let source = if r < real.rows() { "real" } else { "synthetic" };
        let pc2 = if m > 1 { proj.get(r, 1) } else { 0.0 };
        w.write_record([source.to_string(), proj.get(r, 0).to_string(), pc2.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&files.pc_scatter, e))?;
    Ok(files)
}
