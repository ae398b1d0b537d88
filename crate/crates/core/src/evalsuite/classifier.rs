use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mia::rank_auc;
use crate::datastore::RecordMatrix;
use crate::diffcore::{sigmoid, Tensor2};
use crate::error::{Error, Result};

/// Fixed training recipe for the downstream classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticRecipe {
    pub iterations: usize,
    pub learning_rate: f64,
    /// L2 weight on the coefficients; the intercept is not penalised.
    pub l2: f64,
}

impl Default for LogisticRecipe {
    fn default() -> Self {
        Self {
            iterations: 500,
            learning_rate: 0.5,
            l2: 1e-3,
        }
    }
}

/// Logistic regression on standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub feature_columns: Vec<usize>,
    pub mean: Vec<f64>,
    /// Per-feature scale; zero-variance features use 1.
    pub scale: Vec<f64>,
    pub weights: Vec<f64>,
    pub intercept: f64,
}

fn label_column(m: &RecordMatrix) -> Result<usize> {
    m.schema
        .label_index()
        .ok_or_else(|| Error::Schema("schema has no label column".into()))
}

/// Features (every non-label column) and labels of `m`.
fn design(m: &RecordMatrix) -> Result<(Vec<usize>, Vec<f64>)> {
    let label = label_column(m)?;
    let features = (0..m.width()).filter(|&c| c != label).collect();
    Ok((features, m.column(label)))
}

impl LogisticModel {
    /// Full-batch gradient descent from zero weights on the mean log-loss.
    pub fn fit(train: &RecordMatrix, recipe: &LogisticRecipe) -> Result<Self> {
        let (features, y) = design(train)?;
        let x = train.values.select_cols(&features);
        Self::fit_arrays(features, &x, &y, recipe)
    }

    pub fn fit_arrays(
        feature_columns: Vec<usize>,
        x: &Tensor2,
        y: &[f64],
        recipe: &LogisticRecipe,
    ) -> Result<Self> {
        let n = x.rows();
        if n == 0 || y.len() != n {
            return Err(Error::InvalidArgument("classifier needs labelled rows".into()));
        }
        let positives = y.iter().filter(|&&v| v == 1.0).count();
        if positives == 0 || positives == n {
            return Err(Error::Data("training labels contain a single class".into()));
        }
        let d = x.cols();
        let mean = x.col_means();
        let scale: Vec<f64> = (0..d)
            .map(|c| {
                let var = (0..n).map(|r| (x.get(r, c) - mean[c]).powi(2)).sum::<f64>() / n as f64;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let z = standardize(x, &mean, &scale);
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        let mut grad = vec![0.0; d];
        for _ in 0..recipe.iterations {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut gb = 0.0;
            for r in 0..n {
                let row = z.row(r);
                let logit = b + row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
                let err = sigmoid(logit) - y[r];
                gb += err;
                for (g, a) in grad.iter_mut().zip(row) {
                    *g += err * a;
                }
            }
            for (wi, g) in w.iter_mut().zip(&grad) {
                *wi -= recipe.learning_rate * (g / n as f64 + recipe.l2 * *wi);
            }
            b -= recipe.learning_rate * gb / n as f64;
        }
        Ok(Self {
            feature_columns,
            mean,
            scale,
            weights: w,
            intercept: b,
        })
    }

    pub fn predict_proba(&self, m: &RecordMatrix) -> Vec<f64> {
        let x = m.values.select_cols(&self.feature_columns);
        self.predict_arrays(&x)
    }

    pub fn predict_arrays(&self, x: &Tensor2) -> Vec<f64> {
        let z = standardize(x, &self.mean, &self.scale);
        (0..z.rows())
            .map(|r| {
                let l = self.intercept
                    + z.row(r).iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>();
                sigmoid(l)
            })
            .collect()
    }
}

fn standardize(x: &Tensor2, mean: &[f64], scale: &[f64]) -> Tensor2 {
    let mut z = x.clone();
    for r in 0..z.rows() {
        for (c, v) in z.row_mut(r).iter_mut().enumerate() {
            *v = (*v - mean[c]) / scale[c];
        }
    }
    z
}

/// AUC of `scores` against binary `labels`.
pub fn classifier_auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (&s, &l) in scores.iter().zip(labels) {
        if l == 1.0 {
            pos.push(s);
        } else {
            neg.push(s);
        }
    }
    rank_auc(&pos, &neg)
}

/// Point estimate with a percentile bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AucEstimate {
    pub auc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Resamples that contained both classes.
    pub resamples: usize,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// AUC with a 95% percentile interval from `resamples` bootstrap draws of the rows.
/// Draws that contain a single class are skipped.
pub fn bootstrap_auc(scores: &[f64], labels: &[f64], resamples: usize, seed: u64) -> Result<AucEstimate> {
    let auc = classifier_auc(scores, labels)?;
    let n = scores.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = Vec::with_capacity(resamples);
    let mut s = vec![0.0; n];
    let mut l = vec![0.0; n];
    for _ in 0..resamples {
        for i in 0..n {
            let j = rng.random_range(0..n);
            s[i] = scores[j];
            l[i] = labels[j];
        }
        if let Ok(a) = classifier_auc(&s, &l) {
            draws.push(a);
        }
    }
    if draws.is_empty() {
        return Ok(AucEstimate {
            auc,
            ci_low: auc,
            ci_high: auc,
            resamples: 0,
        });
    }
    draws.sort_by(f64::total_cmp);
    Ok(AucEstimate {
        auc,
        ci_low: quantile(&draws, 0.025),
        ci_high: quantile(&draws, 0.975),
        resamples: draws.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub r2r: AucEstimate,
    pub s2r: AucEstimate,
    pub r2s: AucEstimate,
    pub recipe: LogisticRecipe,
    pub bootstrap_seed: u64,
}

impl UtilityReport {
    pub fn s2r_gap(&self) -> f64 {
        (self.s2r.auc - self.r2r.auc).abs()
    }

    pub fn r2s_gap(&self) -> f64 {
        (self.r2s.auc - self.r2r.auc).abs()
    }
}

/// Train-on-X / test-on-Y classifier AUCs for the real and synthetic splits.
pub fn utility_suite(
    real_train: &RecordMatrix,
    real_test: &RecordMatrix,
    synthetic_train: &RecordMatrix,
    synthetic_test: &RecordMatrix,
    resamples: usize,
    seed: u64,
) -> Result<UtilityReport> {
    let fp = real_train.schema.fingerprint();
    for m in [real_test, synthetic_train, synthetic_test] {
        if m.schema.fingerprint() != fp {
            return Err(Error::Schema("utility inputs have different schemas".into()));
        }
    }
    let recipe = LogisticRecipe::default();
    let on_real = LogisticModel::fit(real_train, &recipe)?;
    let on_syn = LogisticModel::fit(synthetic_train, &recipe)?;
    let label = label_column(real_train)?;
    let eval = |model: &LogisticModel, test: &RecordMatrix, s: u64| {
        bootstrap_auc(&model.predict_proba(test), &test.column(label), resamples, s)
    };
    Ok(UtilityReport {
        r2r: eval(&on_real, real_test, seed)?,
        s2r: eval(&on_syn, real_test, seed.wrapping_add(1))?,
        r2s: eval(&on_real, synthetic_test, seed.wrapping_add(2))?,
        recipe,
        bootstrap_seed: seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_toy_fits_perfectly() {
        let x = Tensor2::from_rows(&[
            vec![0.0, 0.1],
            vec![0.2, 0.0],
            vec![0.1, 0.2],
            vec![1.0, 0.9],
            vec![0.8, 1.0],
            vec![0.9, 0.8],
        ])
        .unwrap();
        let y = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let m = LogisticModel::fit_arrays(vec![0, 1], &x, &y, &LogisticRecipe::default()).unwrap();
        let p = m.predict_arrays(&x);
        let acc = p.iter().zip(&y).filter(|(p, y)| (**p >= 0.5) == (**y == 1.0)).count();
        assert_eq!(acc, 6);
        let again = LogisticModel::fit_arrays(vec![0, 1], &x, &y, &LogisticRecipe::default()).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn single_class_rejected() {
        let x = Tensor2::zeros(3, 1);
        assert!(LogisticModel::fit_arrays(vec![0], &x, &[1.0; 3], &LogisticRecipe::default()).is_err());
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[0.0, 1.0, 2.0, 3.0, 4.0], 0.5), 2.0);
        assert_eq!(quantile(&[0.0, 1.0], 0.25), 0.25);
    }

    #[test]
    fn bootstrap_is_deterministic_and_brackets() {
        let scores: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin()).collect();
        let labels: Vec<f64> = (0..60).map(|i| f64::from(u8::from(i % 3 == 0))).collect();
        let a = bootstrap_auc(&scores, &labels, 200, 5).unwrap();
        let b = bootstrap_auc(&scores, &labels, 200, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.ci_low <= a.auc + 0.1 && a.ci_high >= a.auc - 0.1);
        assert!(a.ci_low <= a.ci_high);
        assert_eq!(a.resamples, 200);
    }
}
