//! Latent-space separability of real and synthetic records: PCA, k-means with
//! an elbow choice of k, and NMI between clusters and the source flag.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datastore::RecordMatrix;
use crate::diffcore::Tensor2;
use crate::error::{Error, Result};

pub const KMEANS_MAX_ITER: usize = 300;
pub const KMEANS_TOL: f64 = 1e-6;
pub const DEFAULT_K_RANGE: std::ops::RangeInclusive<usize> = 2..=10;

/// Principal axes of a centered data matrix, largest variance first.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `d x d`, column `j` is the `j`-th axis. Each axis has its largest-magnitude
    /// entry positive.
    pub axes: Tensor2,
    pub variances: Vec<f64>,
}

impl Pca {
    pub fn fit(x: &Tensor2) -> Result<Self> {
        let (n, d) = x.shape();
        if n < 2 {
            return Err(Error::InvalidArgument("PCA needs at least 2 rows".into()));
        }
        let mean = x.col_means();
        let centered = DMatrix::from_fn(n, d, |r, c| x.get(r, c) - mean[c]);
        let cov = centered.transpose() * &centered / (n as f64 - 1.0);
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut axes = Tensor2::zeros(d, d);
        let mut variances = Vec::with_capacity(d);
        for (j, &k) in order.iter().enumerate() {
            let col = eig.eigenvectors.column(k);
            let pivot = (0..d)
                .max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()).then(b.cmp(&a)))
                .unwrap_or(0);
            let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
            for i in 0..d {
                axes.set(i, j, sign * col[i]);
            }
            variances.push(eig.eigenvalues[k].max(0.0));
        }
        Ok(Self {
            mean,
            axes,
            variances,
        })
    }

    pub fn explained_ratio(&self) -> Vec<f64> {
        let total: f64 = self.variances.iter().sum();
        if total <= 0.0 {
            let mut r = vec![0.0; self.variances.len()];
            if let Some(first) = r.first_mut() {
                *first = 1.0;
            }
            return r;
        }
        self.variances.iter().map(|v| v / total).collect()
    }

    /// Smallest component count whose cumulative explained ratio reaches `target`.
    pub fn components_for(&self, target: f64) -> usize {
        let mut cum = 0.0;
        for (i, r) in self.explained_ratio().iter().enumerate() {
            cum += r;
            if cum >= target - 1e-12 {
                return i + 1;
            }
        }
        self.variances.len()
    }

    /// Coordinates of `x` on the first `m` axes.
    pub fn project(&self, x: &Tensor2, m: usize) -> Tensor2 {
        let d = self.mean.len();
        let mut out = Tensor2::zeros(x.rows(), m);
        for r in 0..x.rows() {
            let row = x.row(r);
            for j in 0..m {
                let mut s = 0.0;
                for i in 0..d {
                    s += (row[i] - self.mean[i]) * self.axes.get(i, j);
                }
                out.set(r, j, s);
            }
        }
        out
    }
}

/// Projects `x` onto the fewest principal components explaining `variance_target`.
pub fn pca_reduce(x: &Tensor2, variance_target: f64) -> Result<(Tensor2, usize)> {
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "variance target {variance_target} must lie in (0, 1]"
        )));
    }
    let pca = Pca::fit(x)?;
    let m = pca.components_for(variance_target);
    Ok((pca.project(x, m), m))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centers: Tensor2,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn assign(points: &Tensor2, centers: &Tensor2, out: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (r, slot) in out.iter_mut().enumerate() {
        let p = points.row(r);
        let mut best = (0, f64::INFINITY);
        for c in 0..centers.rows() {
            let d = sq_dist(p, centers.row(c));
            if d < best.1 {
                best = (c, d);
            }
        }
        *slot = best.0;
        inertia += best.1;
    }
    inertia
}

/// k-means++ seeding followed by Lloyd iterations.
pub fn kmeans(points: &Tensor2, k: usize, seed: u64) -> Result<KMeansResult> {
    let (n, d) = points.shape();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k = {k} for {n} points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Tensor2::zeros(k, d);
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from_slice(points.row(first));
    let mut nearest: Vec<f64> = (0..n).map(|r| sq_dist(points.row(r), centers.row(0))).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, w) in nearest.iter().enumerate() {
                acc += w;
                if acc > target && *w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).copy_from_slice(points.row(pick));
        for (r, v) in nearest.iter_mut().enumerate() {
            *v = v.min(sq_dist(points.row(r), centers.row(c)));
        }
    }

    let mut assignments = vec![0; n];
    let mut inertia = assign(points, &centers, &mut assignments);
    let mut history = vec![inertia];
    for _ in 0..KMEANS_MAX_ITER {
        let mut sums = Tensor2::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (r, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums.row_mut(a).iter_mut().zip(points.row(r)) {
                *s += v;
            }
        }
        for c in 0..k {
            // Empty clusters keep their previous center.
            if counts[c] > 0 {
                let cnt = counts[c] as f64;
                for (dst, s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s / cnt;
                }
            }
        }
        let prev = inertia;
        inertia = assign(points, &centers, &mut assignments);
        history.push(inertia);
        if prev - inertia <= KMEANS_TOL * prev.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(KMeansResult {
        assignments,
        centers,
        inertia,
        history,
    })
}

/// The `k` in `ks` maximising the discrete second difference of `inertia`;
/// ties go to the smallest k. Endpoints have no second difference.
pub fn elbow_from_inertia(ks: &[usize], inertia: &[f64]) -> Result<usize> {
    if ks.len() < 3 || ks.len() != inertia.len() {
        return Err(Error::InvalidArgument("elbow needs at least 3 inertia values".into()));
    }
    let mut best = (1, f64::NEG_INFINITY);
    for i in 1..ks.len() - 1 {
        let d2 = inertia[i - 1] - 2.0 * inertia[i] + inertia[i + 1];
        if d2 > best.1 {
            best = (i, d2);
        }
    }
    Ok(ks[best.0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElbowResult {
    pub k: usize,
    pub ks: Vec<usize>,
    pub inertia: Vec<f64>,
    pub clustering: KMeansResult,
}

/// Runs k-means for every k in `ks` (ascending, at least three values) and picks the elbow.
pub fn elbow_k(points: &Tensor2, ks: &[usize], seed: u64) -> Result<ElbowResult> {
    if ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("k range must be ascending".into()));
    }
    let runs: Vec<KMeansResult> = ks
        .iter()
        .map(|&k| kmeans(points, k, seed))
        .collect::<Result<_>>()?;
    let inertia: Vec<f64> = runs.iter().map(|r| r.inertia).collect();
    let k = elbow_from_inertia(ks, &inertia)?;
    let idx = ks.iter().position(|&v| v == k).expect("k drawn from ks");
    Ok(ElbowResult {
        k,
        ks: ks.to_vec(),
        inertia,
        clustering: runs[idx].clone(),
    })
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `I(A; B) / sqrt(H(A) H(B))` with plug-in estimates and natural logs; 0 when
/// either labelling is constant.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidArgument("NMI needs two equal-length labellings".into()));
    }
    let n = a.len() as f64;
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut joint = vec![0usize; ka * kb];
    let mut ca = vec![0usize; ka];
    let mut cb = vec![0usize; kb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * kb + y] += 1;
        ca[x] += 1;
        cb[y] += 1;
    }
    let ha = entropy(ca.iter().copied(), n);
    let hb = entropy(cb.iter().copied(), n);
    if ha <= 0.0 || hb <= 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for x in 0..ka {
        for y in 0..kb {
            let c = joint[x * kb + y];
            if c > 0 {
                let pxy = c as f64 / n;
                mi += pxy * (pxy * n * n / (ca[x] as f64 * cb[y] as f64)).ln();
            }
        }
    }
    Ok((mi / (ha * hb).sqrt()).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentNmi {
    pub nmi: f64,
    pub k_chosen: usize,
    pub pca_components: usize,
    pub inertia: Vec<f64>,
}

/// Clusters the stacked records in PCA space and measures how much the
/// clusters reveal the real/synthetic source.
pub fn latent_nmi(
    real: &RecordMatrix,
    synthetic: &RecordMatrix,
    variance_target: f64,
    seed: u64,
) -> Result<LatentNmi> {
    if real.rows() == 0 || synthetic.rows() == 0 {
        return Err(Error::InvalidArgument("latent NMI needs non-empty inputs".into()));
    }
    let stacked = real.vstack(synthetic)?;
    let (proj, comps) = pca_reduce(&stacked.values, variance_target)?;
    let n = proj.rows();
    let ks: Vec<usize> = DEFAULT_K_RANGE.filter(|&k| k <= n).collect();
    let elbow = elbow_k(&proj, &ks, seed)?;
    let source: Vec<usize> = (0..n).map(|i| usize::from(i >= real.rows())).collect();
    Ok(LatentNmi {
        nmi: nmi(&elbow.clustering.assignments, &source)?,
        k_chosen: elbow.k,
        pca_components: comps,
        inertia: elbow.inertia,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn blobs(centers: &[(f64, f64)], per: usize, radius: f64, seed: u64) -> Tensor2 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        for &(cx, cy) in centers {
            for _ in 0..per {
                let dx: f64 = rng.sample(StandardNormal);
                let dy: f64 = rng.sample(StandardNormal);
                rows.push(vec![cx + radius * dx, cy + radius * dy]);
            }
        }
        Tensor2::from_rows(&rows).unwrap()
    }

    #[test]
    fn rank_one_data_needs_one_component() {
        let x = Tensor2::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]).unwrap();
        let pca = Pca::fit(&x).unwrap();
        assert_eq!(pca.components_for(0.8), 1);
        assert!((pca.explained_ratio()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn isotropic_needs_two() {
        let x = blobs(&[(0.0, 0.0)], 4000, 1.0, 1);
        let (_, m) = pca_reduce(&x, 0.8).unwrap();
        assert_eq!(m, 2);
    }

    #[test]
    fn full_reconstruction() {
        let x = blobs(&[(1.0, -2.0), (3.0, 0.5)], 30, 0.7, 2);
        let pca = Pca::fit(&x).unwrap();
        let p = pca.project(&x, 2);
        let back = p.matmul(&pca.axes.transpose()).unwrap();
        for r in 0..x.rows() {
            for c in 0..2 {
                assert!((back.get(r, c) + pca.mean[c] - x.get(r, c)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn single_cluster_inertia_is_total_variance() {
        let x = blobs(&[(0.0, 0.0)], 50, 1.0, 3);
        let km = kmeans(&x, 1, 0).unwrap();
        let m = x.col_means();
        let tot: f64 = (0..x.rows()).map(|r| sq_dist(x.row(r), &m)).sum();
        assert!((km.inertia - tot).abs() < 1e-9 * tot);
    }

    #[test]
    fn two_blobs_recovered_and_inertia_monotone() {
        let x = blobs(&[(0.0, 0.0), (10.0, 10.0)], 40, 0.5, 4);
        let km = kmeans(&x, 2, 1).unwrap();
        let first = km.assignments[0];
        assert!(km.assignments[..40].iter().all(|&a| a == first));
        assert!(km.assignments[40..].iter().all(|&a| a != first));
        for w in km.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert!(kmeans(&x, 81, 0).is_err());
    }

    #[test]
    fn elbow_finds_three_blobs() {
        let x = blobs(&[(0.0, 0.0), (10.0, 0.0), (5.0, 8.66)], 50, 0.5, 5);
        let ks: Vec<usize> = (1..=8).collect();
        assert_eq!(elbow_k(&x, &ks, 0).unwrap().k, 3);
    }

    #[test]
    fn elbow_tie_rule() {
        let ks = [2, 3, 4, 5, 6];
        assert_eq!(elbow_from_inertia(&ks, &[10.0, 9.0, 8.0, 7.0, 6.0]).unwrap(), 3);
        assert!(elbow_from_inertia(&ks[..2], &[1.0, 0.5]).is_err());
    }

    #[test]
    fn nmi_examples() {
        let s = [0, 0, 1, 1];
        assert!((nmi(&[1, 1, 0, 0], &s).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(nmi(&[0, 1, 0, 1], &s).unwrap(), 0.0);
        assert_eq!(nmi(&[0, 0, 0, 0], &s).unwrap(), 0.0);
        let a = [0, 2, 1, 1, 0, 2, 2];
        let b = [1, 0, 0, 1, 1, 0, 1];
        assert!((nmi(&a, &b).unwrap() - nmi(&b, &a).unwrap()).abs() < 1e-12);
    }
}
