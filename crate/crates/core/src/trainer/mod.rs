//! Adversarial training loop: a clipped-surrogate policy update for the
//! generator, rewarded by a discriminator trained with BCE plus an R1 penalty.

mod checkpoint;
mod config;
mod losslog;
mod optim;
mod ppo;
mod run;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::critic::{CriticNet, DiscriminatorParams};
use crate::datastore::{FeatureSchema, RecordMatrix};
use crate::diffcore::{Graph, Tensor2};
use crate::error::{Error, Result};
use crate::policy::{sample_latent, GeneratorParams, PolicyNet, PolicySample};

pub use checkpoint::{Checkpoint, RngSnapshot, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{OptimizerKind, PPOConfig, PROFILES};
pub use losslog::{read_loss_log, LossLogWriter, LOSS_LOG_HEADER};
pub use optim::{OptimizerSpec, OptimizerState};
pub use run::{train_to_dir, RunLayout, TrainOutcome};
pub use ppo::{
    clipped_surrogate, generator_loss_graph, mean_match_penalty, normalize_advantages,
    GeneratorLoss, PpoBatch, ADVANTAGE_STD_EPS,
};

/// Scalar loss terms recorded for one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub iteration: usize,
    #[serde(rename = "L_clip")]
    pub l_clip: f64,
    #[serde(rename = "L_V")]
    pub l_v: f64,
    #[serde(rename = "H")]
    pub entropy: f64,
    #[serde(rename = "M")]
    pub mean_penalty: f64,
    #[serde(rename = "L_G")]
    pub l_g: f64,
    #[serde(rename = "L_BCE")]
    pub l_bce: f64,
    #[serde(rename = "R1")]
    pub r1: f64,
    #[serde(rename = "L_D")]
    pub l_d: f64,
    pub mean_reward: f64,
}

impl LossBreakdown {
    /// `-L_clip + c_v L_V - beta H + lambda_m M`, evaluated in graph order.
    pub fn expected_l_g(&self, cfg: &PPOConfig) -> f64 {
        let mut t = -self.l_clip + self.l_v * cfg.value_weight;
        t += self.entropy * -cfg.entropy_weight;
        if cfg.mean_penalty != 0.0 {
            t += self.mean_penalty * cfg.mean_penalty;
        }
        t
    }

    /// Largest deviation from the two loss identities.
    pub fn identity_error(&self, cfg: &PPOConfig) -> f64 {
        let g = (self.l_g - self.expected_l_g(cfg)).abs();
        let d = (self.l_d - (self.l_bce + self.r1)).abs();
        g.max(d)
    }
}

/// Generator-side terms from the final PPO epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorStats {
    pub l_clip: f64,
    pub l_v: f64,
    pub entropy: f64,
    pub mean_penalty: f64,
    pub l_g: f64,
    pub mean_reward: f64,
}

/// Discriminator terms from the final of the K steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscriminatorStats {
    pub l_bce: f64,
    pub r1: f64,
    pub l_d: f64,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub generator: GeneratorParams,
    pub discriminator: DiscriminatorParams,
    pub gen_opt: OptimizerState,
    pub disc_opt: OptimizerState,
    /// Completed outer iterations.
    pub iteration: usize,
    pub rng: ChaCha8Rng,
    pub history: Vec<LossBreakdown>,
}

impl TrainState {
    /// Fresh networks for `schema`, drawn from an RNG seeded with `cfg.seed`.
    pub fn init(schema: &FeatureSchema, cfg: &PPOConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let net = PolicyNet::new(schema, cfg.noise_dim, cfg.gen_width, cfg.gen_depth);
        let generator = GeneratorParams::init(net, &mut rng)?;
        let critic = CriticNet::new(schema.width(), cfg.disc_width, cfg.disc_depth);
        let discriminator = DiscriminatorParams::init(critic, &mut rng)?;
        let gen_opt = OptimizerState::new(&gen_spec(cfg), &generator.params);
        let disc_opt = OptimizerState::new(&disc_spec(cfg), &discriminator.params);
        Ok(Self {
            generator,
            discriminator,
            gen_opt,
            disc_opt,
            iteration: 0,
            rng,
            history: Vec::new(),
        })
    }
}

pub fn gen_spec(cfg: &PPOConfig) -> OptimizerSpec {
    OptimizerSpec {
        kind: cfg.optimizer,
        lr: cfg.lr_gen,
        momentum: cfg.momentum,
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        eps: cfg.adam_eps,
    }
}

pub fn disc_spec(cfg: &PPOConfig) -> OptimizerSpec {
    OptimizerSpec {
        lr: cfg.lr_disc,
        ..gen_spec(cfg)
    }
}

/// Per-column means of the continuous block of `real`.
pub fn continuous_means(real: &RecordMatrix) -> Vec<f64> {
    real.values
        .select_cols(&real.schema.continuous_indices())
        .col_means()
}

/// Rewards, advantages and `ppo_epochs` generator steps on one fresh sample.
pub fn generator_ppo_update(
    state: &mut TrainState,
    cfg: &PPOConfig,
    sample: &PolicySample,
    real_cont_mean: &[f64],
) -> Result<GeneratorStats> {
    let rewards = state.discriminator.reward(&sample.x)?;
    let raw: Vec<f64> = rewards
        .iter()
        .zip(&sample.v_old)
        .map(|(r, v)| r - v)
        .collect();
    let advantages = normalize_advantages(&raw)?;
    let batch = PpoBatch {
        sample,
        advantages: &advantages,
        rewards: &rewards,
        real_cont_mean,
    };
    let spec = gen_spec(cfg);
    let mut stats = None;
    for _ in 0..cfg.ppo_epochs {
        let mut g = Graph::new();
        let loss =
            generator_loss_graph(&mut g, &state.generator.net, &state.generator.params, &batch, cfg)?;
        stats = Some(GeneratorStats {
            l_clip: g.value(loss.l_clip).item(),
            l_v: g.value(loss.l_v).item(),
            entropy: g.value(loss.entropy).item(),
            mean_penalty: g.value(loss.mean_penalty).item(),
            l_g: g.value(loss.total).item(),
            mean_reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
        });
        let grads = g.backward(loss.total, &state.generator.params)?;
        state
            .gen_opt
            .step(&spec, &mut state.generator.params, &grads)?;
    }
    stats.ok_or_else(|| Error::InvalidArgument("ppo_epochs must be >= 1".into()))
}

/// `cfg.disc_steps` discriminator steps, each on a resampled real minibatch and
/// a fresh generator batch.
pub fn discriminator_update(
    state: &mut TrainState,
    cfg: &PPOConfig,
    real: &Tensor2,
) -> Result<DiscriminatorStats> {
    if real.rows() == 0 {
        return Err(Error::Data("discriminator needs at least one real row".into()));
    }
    let spec = disc_spec(cfg);
    let mut stats = None;
    for _ in 0..cfg.disc_steps {
        let idx: Vec<usize> = (0..cfg.batch_size)
            .map(|_| state.rng.random_range(0..real.rows()))
            .collect();
        let real_batch = real.select_rows(&idx);
        let z = sample_latent(cfg.batch_size, cfg.noise_dim, &mut state.rng);
        let fake = state.generator.sample(&z, &mut state.rng)?.x;

        let mut g = Graph::new();
        let d = &state.discriminator;
        let loss = d
            .net
            .loss_graph(&mut g, &d.params, &real_batch, &fake, cfg.r1_gamma)?;
        stats = Some(DiscriminatorStats {
            l_bce: g.value(loss.bce).item(),
            r1: g.value(loss.r1).item(),
            l_d: g.value(loss.total).item(),
        });
        let grads = g.backward(loss.total, &state.discriminator.params)?;
        state
            .disc_opt
            .step(&spec, &mut state.discriminator.params, &grads)?;
    }
    stats.ok_or_else(|| Error::InvalidArgument("disc_steps must be >= 1".into()))
}

/// Drives outer iterations over a fixed normalized training matrix.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: PPOConfig,
    real: Tensor2,
    real_cont_mean: Vec<f64>,
}

impl Trainer {
    pub fn new(real: &RecordMatrix, cfg: &PPOConfig) -> Result<Self> {
        cfg.validate()?;
        if !real.normalized {
            return Err(Error::Data("training data must be normalized".into()));
        }
        if real.rows() == 0 {
            return Err(Error::Data("training data is empty".into()));
        }
        Ok(Self {
            cfg: cfg.clone(),
            real: real.values.clone(),
            real_cont_mean: continuous_means(real),
        })
    }

    /// One outer iteration. Non-finite values surface as [`Error::Divergence`].
    pub fn step(&self, state: &mut TrainState) -> Result<LossBreakdown> {
        let iteration = state.iteration + 1;
        let diverged = |e: Error| match e {
            Error::Data(detail) => Error::Divergence { iteration, detail },
            other => other,
        };
        let cfg = &self.cfg;
        let z = sample_latent(cfg.batch_size, cfg.noise_dim, &mut state.rng);
        let sample = state.generator.sample(&z, &mut state.rng).map_err(diverged)?;
        let gen = generator_ppo_update(state, cfg, &sample, &self.real_cont_mean)
            .map_err(diverged)?;
        let disc = discriminator_update(state, cfg, &self.real).map_err(diverged)?;
        let row = LossBreakdown {
            iteration,
            l_clip: gen.l_clip,
            l_v: gen.l_v,
            entropy: gen.entropy,
            mean_penalty: gen.mean_penalty,
            l_g: gen.l_g,
            l_bce: disc.l_bce,
            r1: disc.r1,
            l_d: disc.l_d,
            mean_reward: gen.mean_reward,
        };
        let values = [
            row.l_clip, row.l_v, row.entropy, row.mean_penalty, row.l_g, row.l_bce, row.r1,
            row.l_d, row.mean_reward,
        ];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                iteration,
                detail: format!("non-finite loss term in {row:?}"),
            });
        }
        state.iteration = iteration;
        state.history.push(row);
        Ok(row)
    }

    /// Runs until `cfg.iterations`, calling `observe` after every iteration.
    pub fn run(
        &self,
        state: &mut TrainState,
        mut observe: impl FnMut(&TrainState, &LossBreakdown) -> Result<()>,
    ) -> Result<()> {
        while state.iteration < self.cfg.iterations {
            let row = self.step(state)?;
            observe(state, &row)?;
        }
        Ok(())
    }
}

/// Trains from scratch on normalized `real` for `cfg.iterations` iterations.
pub fn train(real: &RecordMatrix, cfg: &PPOConfig) -> Result<TrainState> {
    let trainer = Trainer::new(real, cfg)?;
    let mut state = TrainState::init(&real.schema, cfg)?;
    trainer.run(&mut state, |_, _| Ok(()))?;
    Ok(state)
}

/// Draws `n` normalized records from the generator with its own RNG.
pub fn generate(
    generator: &GeneratorParams,
    schema: &FeatureSchema,
    n: usize,
    seed: u64,
) -> Result<RecordMatrix> {
    generator.net.layout.check(schema)?;
    if n == 0 {
        return RecordMatrix::new(schema.clone(), Tensor2::zeros(0, schema.width()), true);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = sample_latent(n, generator.net.noise_dim, &mut rng);
    let sample = generator.sample(&z, &mut rng)?;
    RecordMatrix::new(schema.clone(), sample.x, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::{fit_normalizer, make_benchmark_dataset, normalize};

    fn tiny_cfg() -> PPOConfig {
        PPOConfig {
            noise_dim: 4,
            gen_width: 8,
            disc_width: 8,
            batch_size: 16,
            iterations: 3,
            disc_steps: 2,
            ppo_epochs: 2,
            ..PPOConfig::bench_small()
        }
    }

    fn data() -> RecordMatrix {
        let (raw, _) = make_benchmark_dataset(120, 3).unwrap();
        let schema = fit_normalizer(&raw).unwrap();
        normalize(&raw, &schema).unwrap()
    }

    #[test]
    fn zero_iterations_returns_initial_state() {
        let real = data();
        let cfg = PPOConfig {
            iterations: 0,
            ..tiny_cfg()
        };
        let st = train(&real, &cfg).unwrap();
        let init = TrainState::init(&real.schema, &cfg).unwrap();
        assert_eq!(st.iteration, 0);
        assert!(st.history.is_empty());
        assert_eq!(st.generator, init.generator);
        assert_eq!(st.discriminator, init.discriminator);
    }

    #[test]
    fn same_seed_same_parameters() {
        let real = data();
        let a = train(&real, &tiny_cfg()).unwrap();
        let b = train(&real, &tiny_cfg()).unwrap();
        assert_eq!(a.generator.params.fingerprint(), b.generator.params.fingerprint());
        assert_eq!(a.discriminator.params.fingerprint(), b.discriminator.params.fingerprint());
        assert_eq!(a.history, b.history);
        let c = train(&real, &PPOConfig { seed: 9, ..tiny_cfg() }).unwrap();
        assert_ne!(a.generator.params.fingerprint(), c.generator.params.fingerprint());
    }

    #[test]
    fn updates_touch_only_their_own_network() {
        let real = data();
        let cfg = tiny_cfg();
        let trainer = Trainer::new(&real, &cfg).unwrap();
        let mut st = TrainState::init(&real.schema, &cfg).unwrap();
        let z = sample_latent(cfg.batch_size, cfg.noise_dim, &mut st.rng);
        let sample = st.generator.sample(&z, &mut st.rng).unwrap();

        let (g0, d0) = (st.generator.params.fingerprint(), st.discriminator.params.fingerprint());
        generator_ppo_update(&mut st, &cfg, &sample, &trainer.real_cont_mean).unwrap();
        let g1 = st.generator.params.fingerprint();
        assert_ne!(g0, g1);
        assert_eq!(d0, st.discriminator.params.fingerprint());

        discriminator_update(&mut st, &cfg, &real.values).unwrap();
        assert_eq!(g1, st.generator.params.fingerprint());
        assert_ne!(d0, st.discriminator.params.fingerprint());
    }

    #[test]
    fn k_steps_per_iteration() {
        let real = data();
        for k in [1, 3] {
            let cfg = PPOConfig { disc_steps: k, ..tiny_cfg() };
            let mut st = TrainState::init(&real.schema, &cfg).unwrap();
            discriminator_update(&mut st, &cfg, &real.values).unwrap();
            assert_eq!(st.disc_opt.steps, k as u64);
        }
    }

    #[test]
    fn fresh_discriminator_bce_near_2ln2() {
        let real = data();
        let cfg = tiny_cfg();
        let mut st = TrainState::init(&real.schema, &cfg).unwrap();
        let d = discriminator_update(&mut st, &cfg, &real.values).unwrap();
        assert!((d.l_bce - 2.0 * std::f64::consts::LN_2).abs() < 0.05, "{d:?}");
    }

    #[test]
    fn loss_identities_hold_every_iteration() {
        let real = data();
        for lambda in [0.0, 0.2] {
            let cfg = PPOConfig { mean_penalty: lambda, ..tiny_cfg() };
            let st = train(&real, &cfg).unwrap();
            assert_eq!(st.history.len(), 3);
            for row in &st.history {
                assert_eq!(row.l_g, row.expected_l_g(&cfg));
                assert_eq!(row.l_d, row.l_bce + row.r1);
            }
        }
    }

    #[test]
    fn zero_mean_penalty_leaves_gradient_unchanged() {
        let real = data();
        let cfg = tiny_cfg();
        let st = TrainState::init(&real.schema, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = sample_latent(8, cfg.noise_dim, &mut rng);
        let sample = st.generator.sample(&z, &mut rng).unwrap();
        let adv = normalize_advantages(&(0..8).map(f64::from).collect::<Vec<_>>()).unwrap();
        let rewards = vec![0.5; 8];
        // Far-off target makes M large; with lambda_m = 0 it must not matter.
        let far = vec![0.99; st.generator.net.n_cont()];
        let near = continuous_means(&real);
        let grad = |target: &[f64]| {
            let batch = PpoBatch {
                sample: &sample,
                advantages: &adv,
                rewards: &rewards,
                real_cont_mean: target,
            };
            let c = PPOConfig { mean_penalty: 0.0, ..cfg.clone() };
            let mut g = Graph::new();
            let loss =
                generator_loss_graph(&mut g, &st.generator.net, &st.generator.params, &batch, &c)
                    .unwrap();
            g.backward(loss.total, &st.generator.params).unwrap()
        };
        assert_eq!(grad(&far), grad(&near));
    }

    #[test]
    fn generate_contract() {
        let real = data();
        let cfg = tiny_cfg();
        let st = TrainState::init(&real.schema, &cfg).unwrap();
        let empty = generate(&st.generator, &real.schema, 0, 1).unwrap();
        assert_eq!((empty.rows(), empty.width()), (0, real.width()));
        let a = generate(&st.generator, &real.schema, 50, 7).unwrap();
        let b = generate(&st.generator, &real.schema, 50, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows(), 50);
        for c in real.schema.continuous_indices() {
            assert!(a.column(c).iter().all(|&v| v > 0.0 && v < 1.0));
        }
        for c in real.schema.binary_indices() {
            assert!(a.column(c).iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }
}
