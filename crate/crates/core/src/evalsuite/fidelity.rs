use serde::{Deserialize, Serialize};

use crate::datastore::RecordMatrix;
use crate::diffcore::Tensor2;
use crate::error::{Error, Result};

/// Pearson correlation matrix (`d x d`). Pairs involving a zero-variance
/// column get correlation 0; the diagonal is 1 for varying columns.
pub fn correlation_matrix(x: &Tensor2) -> Result<Tensor2> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::InvalidArgument("correlation needs at least 2 rows".into()));
    }
    let mean = x.col_means();
    let mut cov = Tensor2::zeros(d, d);
    for r in 0..n {
        let row = x.row(r);
        for i in 0..d {
            let a = row[i] - mean[i];
            for j in i..d {
                let v = cov.get(i, j) + a * (row[j] - mean[j]);
                cov.set(i, j, v);
            }
        }
    }
    let mut corr = Tensor2::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let denom = (cov.get(i, i) * cov.get(j, j)).sqrt();
            let c = if denom > 0.0 {
                (cov.get(i, j) / denom).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            corr.set(i, j, c);
            corr.set(j, i, c);
        }
    }
    Ok(corr)
}

/// Correlation-matrix discrepancy over the off-diagonal upper triangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CwcScore {
    /// Mean absolute difference.
    pub mean: f64,
    /// Summed absolute difference.
    pub sum: f64,
}

pub fn cwc(real: &RecordMatrix, synthetic: &RecordMatrix) -> Result<CwcScore> {
    if real.schema.fingerprint() != synthetic.schema.fingerprint() {
        return Err(Error::Schema("cwc inputs have different schemas".into()));
    }
    cwc_arrays(&real.values, &synthetic.values)
}

pub fn cwc_arrays(real: &Tensor2, synthetic: &Tensor2) -> Result<CwcScore> {
    let a = correlation_matrix(real)?;
    let b = correlation_matrix(synthetic)?;
    let d = a.rows();
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..d {
        for j in i + 1..d {
            sum += (a.get(i, j) - b.get(i, j)).abs();
            pairs += 1;
        }
    }
    Ok(CwcScore {
        mean: if pairs == 0 { 0.0 } else { sum / pairs as f64 },
        sum,
    })
}

/// `|mean(real) - mean(synthetic)|` of one binary column.
pub fn apd(real: &[f64], synthetic: &[f64]) -> Result<f64> {
    if real.is_empty() || synthetic.is_empty() {
        return Err(Error::InvalidArgument("prevalence of an empty column".into()));
    }
    let p = real.iter().sum::<f64>() / real.len() as f64;
    let q = synthetic.iter().sum::<f64>() / synthetic.len() as f64;
    Ok((p - q).abs())
}

/// Exact W1 between two empirical distributions: the integral of `|F_a - F_b|`.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("Wasserstein distance of an empty sample".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("Wasserstein inputs must be finite".into()));
    }
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len(), xb.len());
    let (mut i, mut j) = (0, 0);
    let mut total = 0.0;
    let mut prev = xa[0].min(xb[0]);
    while i < na || j < nb {
        let next = match (xa.get(i), xb.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        // Both CDFs are constant on [prev, next).
        let gap = (i as f64 / na as f64 - j as f64 / nb as f64).abs();
        total += gap * (next - prev);
        while i < na && xa[i] == next {
            i += 1;
        }
        while j < nb && xb[j] == next {
            j += 1;
        }
        prev = next;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDistance {
    pub feature: String,
    pub value: f64,
}

/// Per-feature marginal discrepancies and their total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwdScore {
    pub apd: Vec<FeatureDistance>,
    pub awd: Vec<FeatureDistance>,
    pub dwd: f64,
}

impl DwdScore {
    pub fn total(apd: &[FeatureDistance], awd: &[FeatureDistance]) -> f64 {
        apd.iter().map(|f| f.value).sum::<f64>() + awd.iter().map(|f| f.value).sum::<f64>()
    }
}

/// APD for every binary column and W1 for every continuous column of two
/// normalized matrices.
pub fn dwd(real: &RecordMatrix, synthetic: &RecordMatrix) -> Result<DwdScore> {
    if real.schema.fingerprint() != synthetic.schema.fingerprint() {
        return Err(Error::Schema("dwd inputs have different schemas".into()));
    }
    if !real.normalized || !synthetic.normalized {
        return Err(Error::Data("dwd expects normalized matrices".into()));
    }
    let name = |c: usize| real.schema.columns[c].name.clone();
    let apd_v = real
        .schema
        .binary_indices()
        .into_iter()
        .map(|c| {
            Ok(FeatureDistance {
                feature: name(c),
                value: apd(&real.column(c), &synthetic.column(c))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let awd_v = real
        .schema
        .continuous_indices()
        .into_iter()
        .map(|c| {
            Ok(FeatureDistance {
                feature: name(c),
                value: wasserstein_1d(&real.column(c), &synthetic.column(c))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let dwd = DwdScore::total(&apd_v, &awd_v);
    Ok(DwdScore {
        apd: apd_v,
        awd: awd_v,
        dwd,
    })
}
