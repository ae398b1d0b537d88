//! Loss assembly for the generator's clipped-surrogate update.

use crate::diffcore::{Graph, ParamSet, Tensor2, Var};
use crate::error::{Error, Result};
use crate::policy::{HeadVars, PolicyNet, PolicySample};

use super::config::PPOConfig;

/// Offset added to the population standard deviation.
pub const ADVANTAGE_STD_EPS: f64 = 1e-8;

/// `(a - mean(a)) / (std(a) + 1e-8)` with the population standard deviation.
pub fn normalize_advantages(adv: &[f64]) -> Result<Vec<f64>> {
    if adv.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "advantage normalization needs at least 2 rows, got {}",
            adv.len()
        )));
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let denom = var.sqrt() + ADVANTAGE_STD_EPS;
    Ok(adv.iter().map(|a| (a - mean) / denom).collect())
}

/// Per-row clipped surrogate `min(rho * a, clip(rho, 1 - eps, 1 + eps) * a)`.
pub fn clipped_surrogate(rho: f64, adv: f64, eps: f64) -> f64 {
    let unclipped = rho * adv;
    let clipped = rho.clamp(1.0 - eps, 1.0 + eps) * adv;
    if clipped < unclipped {
        clipped
    } else {
        unclipped
    }
}

/// `||mean(x_cont) - target||^2` as a scalar node.
pub fn mean_match_penalty(g: &mut Graph, x_cont: Var, target: &[f64]) -> Result<Var> {
    let cols = g.value(x_cont).cols();
    if cols != target.len() {
        return Err(Error::shape(
            "mean_match_penalty",
            format!("{cols} generated columns vs {} target means", target.len()),
        ));
    }
    if cols == 0 {
        return Ok(g.scalar(0.0));
    }
    let means = g.mean_rows(x_cont)?;
    let t = g.constant(Tensor2::row_vector(target.to_vec()));
    let d = g.sub(means, t)?;
    let sq = g.square(d)?;
    g.sum(sq)
}

/// Everything the generator loss needs beyond the parameters.
#[derive(Debug, Clone)]
pub struct PpoBatch<'a> {
    pub sample: &'a PolicySample,
    /// Normalized advantages, fixed for all epochs.
    pub advantages: &'a [f64],
    /// Discriminator rewards, fixed for all epochs.
    pub rewards: &'a [f64],
    /// Per-column means of the real continuous block.
    pub real_cont_mean: &'a [f64],
}

/// Graph handles for the generator loss terms.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorLoss {
    pub heads: HeadVars,
    pub log_prob: Var,
    pub ratio: Var,
    pub l_clip: Var,
    pub l_v: Var,
    pub entropy: Var,
    pub mean_penalty: Var,
    pub total: Var,
}

/// Builds `L_G = -L_clip + c_v L_V - beta H + lambda_m M` under the current parameters.
///
/// With `lambda_m == 0` the penalty is still evaluated for logging but is not
/// connected to `total`.
pub fn generator_loss_graph(
    g: &mut Graph,
    net: &PolicyNet,
    params: &ParamSet,
    batch: &PpoBatch<'_>,
    cfg: &PPOConfig,
) -> Result<GeneratorLoss> {
    let s = batch.sample;
    let n = s.len();
    if batch.advantages.len() != n || batch.rewards.len() != n || s.logp_old.len() != n {
        return Err(Error::shape(
            "generator_loss",
            format!(
                "{n} samples, {} advantages, {} rewards",
                batch.advantages.len(),
                batch.rewards.len()
            ),
        ));
    }
    let z = g.constant(s.z.clone());
    let heads = net.heads(g, params, z)?;
    let log_prob = net.log_prob_graph(g, &heads, &s.u, &s.x_cat)?;

    let old = g.constant(Tensor2::column(s.logp_old.clone()));
    let diff = g.sub(log_prob, old)?;
    let bound = cfg.log_ratio_clamp;
    let diff = g.clamp(diff, -bound, bound)?;
    let ratio = g.exp(diff)?;
    let adv = g.constant(Tensor2::column(batch.advantages.to_vec()));
    let surr = g.mul(ratio, adv)?;
    let clipped = g.clamp(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon)?;
    let surr_clipped = g.mul(clipped, adv)?;
    let pessimistic = g.min(surr, surr_clipped)?;
    let l_clip = g.mean(pessimistic)?;

    let r = g.constant(Tensor2::column(batch.rewards.to_vec()));
    let verr = g.sub(heads.value, r)?;
    let vsq = g.square(verr)?;
    let l_v = g.mean(vsq)?;

    let mean_lp = g.mean(log_prob)?;
    let entropy = g.neg(mean_lp)?;

    let eps = g.constant(s.eps.clone());
    let (_, x_cont) = net.squash(g, &heads, eps)?;
    let mean_penalty = mean_match_penalty(g, x_cont, batch.real_cont_mean)?;

    let neg_clip = g.neg(l_clip)?;
    let value_term = g.scale(l_v, cfg.value_weight)?;
    let mut total = g.add(neg_clip, value_term)?;
    let entropy_term = g.scale(entropy, -cfg.entropy_weight)?;
    total = g.add(total, entropy_term)?;
    if cfg.mean_penalty != 0.0 {
        let penalty_term = g.scale(mean_penalty, cfg.mean_penalty)?;
        total = g.add(total, penalty_term)?;
    }
    Ok(GeneratorLoss {
        heads,
        log_prob,
        ratio,
        l_clip,
        l_v,
        entropy,
        mean_penalty,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_advantages(&[1.0, 3.0]).unwrap(), vec![-1.0 / (1.0 + 1e-8), 1.0 / (1.0 + 1e-8)]);
        let out = normalize_advantages(&[1.0, 3.0]).unwrap();
        assert!((out[0] + 1.0).abs() < 1e-7 && (out[1] - 1.0).abs() < 1e-7);
        assert_eq!(normalize_advantages(&[0.5; 3]).unwrap(), vec![0.0; 3]);
        assert!(normalize_advantages(&[1.0]).is_err());
    }

    #[test]
    fn normalization_standardizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let n = rng.random_range(2..200);
            let shift = rng.random_range(-50.0..50.0);
            let scale = rng.random_range(0.01..100.0);
            let a: Vec<f64> = (0..n).map(|_| shift + scale * rng.random::<f64>()).collect();
            let out = normalize_advantages(&a).unwrap();
            let m = out.iter().sum::<f64>() / n as f64;
            let sd = (out.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt();
            assert!(m.abs() < 1e-10);
            assert!((sd - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clipped_surrogate(1.3, 1.0, 0.1), 1.1);
        assert_eq!(clipped_surrogate(0.7, -1.0, 0.1), -0.9);
        assert_eq!(clipped_surrogate(1.0, 0.4, 0.1), 0.4);
    }

    #[test]
    fn penalty_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor2::from_rows(&[vec![0.25, 0.5], vec![0.75, 1.0]]).unwrap());
        let m = mean_match_penalty(&mut g, x, &[0.5, 0.75]).unwrap();
        assert_eq!(g.value(m).item(), 0.0);

        let mut g = Graph::new();
        let x = g.constant(Tensor2::filled(3, 4, 0.6));
        let m = mean_match_penalty(&mut g, x, &[0.5; 4]).unwrap();
        assert!((g.value(m).item() - 0.04).abs() < 1e-15);
        assert!(mean_match_penalty(&mut g, x, &[0.5; 3]).is_err());
    }
}
