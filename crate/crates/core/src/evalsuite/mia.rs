use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datastore::RecordMatrix;
use crate::diffcore::Tensor2;
use crate::error::{Error, Result};

/// Exact Euclidean distance from every query row to its nearest reference row.
pub fn nearest_distance(query: &RecordMatrix, reference: &RecordMatrix) -> Result<Vec<f64>> {
    if query.schema.fingerprint() != reference.schema.fingerprint() {
        return Err(Error::Schema("query and reference schemas differ".into()));
    }
    nearest_distance_rows(&query.values, &reference.values)
}

/// Row-matrix form of [`nearest_distance`].
pub fn nearest_distance_rows(query: &Tensor2, reference: &Tensor2) -> Result<Vec<f64>> {
    if reference.rows() == 0 {
        return Err(Error::InvalidArgument("nearest distance to an empty reference".into()));
    }
    if query.cols() != reference.cols() {
        return Err(Error::shape(
            "nearest_distance",
            format!("{} vs {} columns", query.cols(), reference.cols()),
        ));
    }
    let out = (0..query.rows())
        .map(|i| {
            let q = query.row(i);
            let mut best = f64::INFINITY;
            for j in 0..reference.rows() {
                let mut d = 0.0;
                for (a, b) in q.iter().zip(reference.row(j)) {
                    d += (a - b) * (a - b);
                    // Partial sums only grow, so the pruned row cannot win.
                    if d >= best {
                        break;
                    }
                }
                if d < best {
                    best = d;
                }
            }
            best.sqrt()
        })
        .collect();
    Ok(out)
}

/// Tie-aware AUC `P(pos > neg) + P(pos == neg) / 2` computed by pair counting
/// over sorted scores.
pub fn rank_auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidArgument("AUC needs both classes".into()));
    }
    if pos.iter().chain(neg).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("AUC scores contain NaN".into()));
    }
    let mut neg_sorted = neg.to_vec();
    neg_sorted.sort_by(f64::total_cmp);
    // Twice the win count, so ties stay integral.
    let mut twice: u128 = 0;
    for &p in pos {
        let below = neg_sorted.partition_point(|&n| n < p);
        let not_above = neg_sorted.partition_point(|&n| n <= p);
        twice += 2 * below as u128 + (not_above - below) as u128;
    }
    Ok(twice as f64 / (2 * pos.len() as u128 * neg.len() as u128) as f64)
}

/// Empirical ROC for the claim "record is a member when its distance is at most t".
///
/// `thresholds` are the distinct observed distances in ascending order. The
/// curve implicitly starts at (0, 0) for a threshold below every distance and
/// ends at (1, 1) at the largest one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub thresholds: Vec<f64>,
    pub sensitivity: Vec<f64>,
    pub specificity: Vec<f64>,
    pub auc: f64,
    pub members: usize,
    pub non_members: usize,
}

impl RocCurve {
    /// Builds the curve from member and non-member distances.
    pub fn from_distances(members: &[f64], non_members: &[f64]) -> Result<Self> {
        if members.is_empty() || non_members.is_empty() {
            return Err(Error::InvalidArgument(
                "membership inference needs members and non-members".into(),
            ));
        }
        if members.iter().chain(non_members).any(|v| v.is_nan()) {
            return Err(Error::InvalidArgument("distances contain NaN".into()));
        }
        let mut tagged: Vec<(f64, bool)> = members
            .iter()
            .map(|&d| (d, true))
            .chain(non_members.iter().map(|&d| (d, false)))
            .collect();
        tagged.sort_by(|a, b| a.0.total_cmp(&b.0));

        let (np, nn) = (members.len() as u128, non_members.len() as u128);
        let mut thresholds = Vec::new();
        let mut sensitivity = Vec::new();
        let mut specificity = Vec::new();
        let (mut tp, mut fp) = (0u128, 0u128);
        // Twice the trapezoid area in units of 1 / (np * nn).
        let mut twice_area: u128 = 0;
        let mut i = 0;
        while i < tagged.len() {
            let t = tagged[i].0;
            let (tp0, fp0) = (tp, fp);
            while i < tagged.len() && tagged[i].0 == t {
                if tagged[i].1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
                i += 1;
            }
            twice_area += (fp - fp0) * (tp + tp0);
            thresholds.push(t);
            sensitivity.push(tp as f64 / np as f64);
            specificity.push(1.0 - fp as f64 / nn as f64);
        }
        Ok(Self {
            thresholds,
            sensitivity,
            specificity,
            auc: twice_area as f64 / (2 * np * nn) as f64,
            members: members.len(),
            non_members: non_members.len(),
        })
    }
}

/// Distance-to-closest-record attack: members are `train`, non-members `test`.
pub fn membership_inference_auc(
    train: &RecordMatrix,
    test: &RecordMatrix,
    synthetic: &RecordMatrix,
) -> Result<RocCurve> {
    if train.rows() == 0 || test.rows() == 0 {
        return Err(Error::InvalidArgument(
            "membership inference needs members and non-members".into(),
        ));
    }
    let members = nearest_distance(train, synthetic)?;
    let non_members = nearest_distance(test, synthetic)?;
    RocCurve::from_distances(&members, &non_members)
}

/// As [`membership_inference_auc`], first subsampling members and non-members to at
/// most `cap` rows each without replacement.
pub fn membership_inference_auc_capped(
    train: &RecordMatrix,
    test: &RecordMatrix,
    synthetic: &RecordMatrix,
    cap: Option<usize>,
    seed: u64,
) -> Result<RocCurve> {
    let Some(cap) = cap else {
        return membership_inference_auc(train, test, synthetic);
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut limit = |m: &RecordMatrix| {
        if m.rows() <= cap {
            m.clone()
        } else {
            let mut idx = sample(&mut rng, m.rows(), cap).into_vec();
            idx.sort_unstable();
            m.select_rows(&idx)
        }
    };
    let (tr, te) = (limit(train), limit(test));
    membership_inference_auc(&tr, &te, synthetic)
}
