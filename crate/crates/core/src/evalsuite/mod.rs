//! Privacy, utility and fidelity metrics for synthetic records.

mod classifier;
mod fidelity;
mod latent;
mod mia;
mod report;

pub use classifier::{
    bootstrap_auc, classifier_auc, utility_suite, AucEstimate, LogisticModel, LogisticRecipe,
    UtilityReport,
};
pub use fidelity::{
    apd, correlation_matrix, cwc, cwc_arrays, dwd, wasserstein_1d, CwcScore, DwdScore,
    FeatureDistance,
};
pub use latent::{
    elbow_from_inertia, elbow_k, kmeans, latent_nmi, nmi, pca_reduce, ElbowResult, KMeansResult,
    LatentNmi, Pca, DEFAULT_K_RANGE, KMEANS_MAX_ITER, KMEANS_TOL,
};
pub use mia::{
    membership_inference_auc, membership_inference_auc_capped, nearest_distance,
    nearest_distance_rows, rank_auc, RocCurve,
};
pub use report::{emit_report, EvalReport, FidelityReport, PlotFiles, ReportMeta};

use crate::datastore::RecordMatrix;
use crate::error::{Error, Result};

/// Knobs of a full evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub seed: u64,
    /// Per-side row cap for the membership attack.
    pub mia_cap: Option<usize>,
    pub bootstrap_resamples: usize,
    pub variance_target: f64,
    pub histogram_bins: usize,
    /// Recorded in the report metadata.
    pub config_fingerprint: Option<String>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            mia_cap: None,
            bootstrap_resamples: 1000,
            variance_target: 0.8,
            histogram_bins: 50,
            config_fingerprint: None,
        }
    }
}

/// Runs every metric. Fidelity compares the two training splits; utility is
/// skipped when the schema has no label column.
pub fn evaluate(
    real_train: &RecordMatrix,
    real_test: &RecordMatrix,
    synthetic_train: &RecordMatrix,
    synthetic_test: &RecordMatrix,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let fp = real_train.schema.fingerprint();
    for m in [real_test, synthetic_train, synthetic_test] {
        if m.schema.fingerprint() != fp {
            return Err(Error::Schema("evaluation inputs have different schemas".into()));
        }
        if !m.normalized {
            return Err(Error::Data("evaluation expects normalized matrices".into()));
        }
    }
    let privacy = membership_inference_auc_capped(
        real_train,
        real_test,
        synthetic_train,
        opts.mia_cap,
        opts.seed,
    )?;
    let utility = if real_train.schema.label_index().is_some() {
        Some(utility_suite(
            real_train,
            real_test,
            synthetic_train,
            synthetic_test,
            opts.bootstrap_resamples,
            opts.seed,
        )?)
    } else {
        log::warn!("schema has no label column; skipping utility metrics");
        None
    };
    let latent = latent_nmi(real_train, synthetic_train, opts.variance_target, opts.seed)?;
    let c = cwc(real_train, synthetic_train)?;
    let d = dwd(real_train, synthetic_train)?;
    Ok(EvalReport {
        meta: ReportMeta {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: opts.seed,
            config_fingerprint: opts.config_fingerprint.clone(),
            schema_fingerprint: fp,
            real_train_rows: real_train.rows(),
            real_test_rows: real_test.rows(),
            synthetic_train_rows: synthetic_train.rows(),
            synthetic_test_rows: synthetic_test.rows(),
            mia_cap: opts.mia_cap,
        },
        privacy,
        utility,
        fidelity: FidelityReport {
            nmi: latent.nmi,
            k_chosen: latent.k_chosen,
            pca_components: latent.pca_components,
            elbow_inertia: latent.inertia,
            cwc: c.mean,
            cwc_sum: c.sum,
            apd_per_feature: d.apd,
            awd_per_feature: d.awd,
            dwd: d.dwd,
        },
    })
}
