//! The generator policy: a shared MLP trunk over latent noise feeding a
//! Bernoulli head for binary columns, a squashed-Gaussian head for continuous
//! columns, and a scalar value head.
//!
//! Continuous draws are `u = mu + exp(s) * eps` with `eps ~ N(0, 1)`, mapped to
//! `x = (tanh(u) + 1) / 2`. The joint log-probability of a record sums, over
//! continuous columns, the Gaussian log-density of `u` minus
//! `log |dx/du| = log((1 - tanh(u)^2) / 2)`, and over binary columns the
//! Bernoulli log-likelihood.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datastore::{ColumnKind, FeatureSchema};
use crate::diffcore::{Dense, Graph, Op, ParamSet, Tensor2, Trunk, Var};
use crate::error::{Error, Result};

/// Bounds applied to the log-scale head output.
pub const LOG_SCALE_MIN: f64 = -5.0;
pub const LOG_SCALE_MAX: f64 = 2.0;
/// Negative slope of the trunk's leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.2;
/// Head weights start at `U(±HEAD_INIT_SCALE / sqrt(fan_in))`; trunk weights use scale 1.
pub const HEAD_INIT_SCALE: f64 = 0.1;
/// Squashed continuous values are kept inside `[SQUASH_EPS, 1 - SQUASH_EPS]`.
pub const SQUASH_EPS: f64 = 1e-12;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

pub fn log_floor() -> f64 {
    1e-12f64.ln()
}

/// Where each generated block lands in a full record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordLayout {
    pub width: usize,
    pub continuous: Vec<usize>,
    pub binary: Vec<usize>,
}

impl RecordLayout {
    pub fn from_schema(schema: &FeatureSchema) -> Self {
        Self {
            width: schema.width(),
            continuous: schema.continuous_indices(),
            binary: schema.binary_indices(),
        }
    }

    /// Scatters the continuous and binary blocks into full-width records.
    pub fn assemble(&self, cont: &Tensor2, cat: &Tensor2) -> Tensor2 {
        let rows = cont.rows().max(cat.rows());
        let mut x = Tensor2::zeros(rows, self.width);
        for r in 0..rows {
            for (j, &c) in self.continuous.iter().enumerate() {
                x.set(r, c, cont.get(r, j));
            }
            for (j, &c) in self.binary.iter().enumerate() {
                x.set(r, c, cat.get(r, j));
            }
        }
        x
    }

    pub fn check(&self, schema: &FeatureSchema) -> Result<()> {
        let ok = self.width == schema.width()
            && self
                .continuous
                .iter()
                .all(|&c| schema.columns[c].kind == ColumnKind::Continuous)
            && self
                .binary
                .iter()
                .all(|&c| schema.columns[c].kind == ColumnKind::Binary)
            && self.continuous.len() + self.binary.len() == self.width;
        if ok {
            Ok(())
        } else {
            Err(Error::Schema("generator layout does not match schema".into()))
        }
    }
}

/// Generator architecture. Parameters live in a separate [`ParamSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    pub noise_dim: usize,
    pub width: usize,
    pub depth: usize,
    pub layout: RecordLayout,
}

/// Graph handles for the head outputs.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub mu: Var,
    pub log_scale: Var,
    pub logits: Var,
    pub value: Var,
}

/// Plain head outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Heads {
    pub mu: Tensor2,
    pub log_scale: Tensor2,
    pub logits: Tensor2,
    pub value: Tensor2,
}

impl PolicyNet {
    pub fn new(schema: &FeatureSchema, noise_dim: usize, width: usize, depth: usize) -> Self {
        Self {
            noise_dim,
            width,
            depth,
            layout: RecordLayout::from_schema(schema),
        }
    }

    pub fn n_cont(&self) -> usize {
        self.layout.continuous.len()
    }

    pub fn n_cat(&self) -> usize {
        self.layout.binary.len()
    }

    fn trunk(&self) -> Trunk {
        Trunk::new("trunk", self.depth, Op::LeakyRelu(LEAKY_SLOPE))
    }

    fn trunk_width(&self) -> usize {
        if self.depth == 0 {
            self.noise_dim
        } else {
            self.width
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamSet> {
        let mut p = ParamSet::new();
        self.trunk().init(&mut p, self.noise_dim, self.width, rng)?;
        let fan = self.trunk_width();
        Dense::new("head_cat").init(&mut p, fan, self.n_cat(), HEAD_INIT_SCALE, rng)?;
        Dense::new("head_cont").init(&mut p, fan, 2 * self.n_cont(), HEAD_INIT_SCALE, rng)?;
        Dense::new("head_value").init(&mut p, fan, 1, HEAD_INIT_SCALE, rng)?;
        Ok(p)
    }

    pub fn heads(&self, g: &mut Graph, params: &ParamSet, z: Var) -> Result<HeadVars> {
        let zc = g.value(z).cols();
        if zc != self.noise_dim {
            return Err(Error::shape(
                "generator",
                format!("latent has {zc} columns, expected {}", self.noise_dim),
            ));
        }
        let h = self.trunk().apply(g, params, z)?.output;
        let logits = Dense::new("head_cat").apply(g, params, h)?;
        let cont = Dense::new("head_cont").apply(g, params, h)?;
        let n = self.n_cont();
        let mu = g.slice_cols(cont, 0, n)?;
        let raw_scale = g.slice_cols(cont, n, 2 * n)?;
        let log_scale = g.clamp(raw_scale, LOG_SCALE_MIN, LOG_SCALE_MAX)?;
        let value = Dense::new("head_value").apply(g, params, h)?;
        Ok(HeadVars {
            mu,
            log_scale,
            logits,
            value,
        })
    }

    /// Reparameterised continuous block `(tanh(mu + exp(s) * eps) + 1) / 2`.
    pub fn squash(&self, g: &mut Graph, heads: &HeadVars, eps: Var) -> Result<(Var, Var)> {
        let scale = g.exp(heads.log_scale)?;
        let noise = g.mul(scale, eps)?;
        let u = g.add(heads.mu, noise)?;
        let t = g.tanh(u)?;
        let shifted = g.add_scalar(t, 1.0)?;
        let half = g.scale(shifted, 0.5)?;
        let x = g.clamp(half, SQUASH_EPS, 1.0 - SQUASH_EPS)?;
        Ok((u, x))
    }

    /// Per-row joint log-probability (rows x 1) of stored draws `u` and `x_cat`.
    pub fn log_prob_graph(
        &self,
        g: &mut Graph,
        heads: &HeadVars,
        u: &Tensor2,
        x_cat: &Tensor2,
    ) -> Result<Var> {
        let rows = g.value(heads.mu).rows();
        if u.shape() != (rows, self.n_cont()) || x_cat.shape() != (rows, self.n_cat()) {
            return Err(Error::shape(
                "log_prob",
                format!(
                    "sample blocks {:?}/{:?} for {rows} rows, {} continuous, {} binary",
                    u.shape(),
                    x_cat.shape(),
                    self.n_cont(),
                    self.n_cat()
                ),
            ));
        }
        // Gaussian log-density of u.
        let uv = g.constant(u.clone());
        let diff = g.sub(uv, heads.mu)?;
        let neg_s = g.neg(heads.log_scale)?;
        let inv_scale = g.exp(neg_s)?;
        let std = g.mul(diff, inv_scale)?;
        let sq = g.square(std)?;
        let half_sq = g.scale(sq, -0.5)?;
        let log_n = g.sub(half_sq, heads.log_scale)?;
        let log_n = g.add_scalar(log_n, -HALF_LN_2PI)?;
        // Change of variables; u is fixed so this term is constant.
        let jac = g.constant(u.map(log_abs_squash_jacobian));
        let cont_terms = g.sub(log_n, jac)?;
        let cont_sum = g.sum_cols(cont_terms)?;

        // Bernoulli: x log s(l) + (1-x) log(1-s(l)) = -softplus(-(2x-1) l).
        let signs = g.constant(x_cat.map(|x| 2.0 * x - 1.0));
        let signed = g.mul(signs, heads.logits)?;
        let flipped = g.neg(signed)?;
        let sp = g.softplus(flipped)?;
        let ll = g.neg(sp)?;
        let ll = g.clamp(ll, log_floor(), 0.0)?;
        let cat_sum = g.sum_cols(ll)?;
        g.add(cont_sum, cat_sum)
    }
}

/// `log((1 - tanh(u)^2) / 2)`, with the `log(1 - tanh^2)` part floored at `ln(1e-12)`.
pub fn log_abs_squash_jacobian(u: f64) -> f64 {
    let a = u.abs();
    // 1 - tanh(u)^2 = 4 e^{-2|u|} / (1 + e^{-2|u|})^2
    let log_sech2 = 2.0 * (std::f64::consts::LN_2 - a - (-2.0 * a).exp().ln_1p());
    log_sech2.max(log_floor()) - std::f64::consts::LN_2
}

/// One generation event.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample {
    pub z: Tensor2,
    /// Pre-squash continuous draws, `mu + exp(s) * eps`.
    pub u: Tensor2,
    pub eps: Tensor2,
    pub x_cat: Tensor2,
    /// Full normalized records.
    pub x: Tensor2,
    pub logp_old: Vec<f64>,
    pub v_old: Vec<f64>,
}

impl PolicySample {
    pub fn len(&self) -> usize {
        self.z.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.rows() == 0
    }

    /// Continuous block of `x`, in layout order.
    pub fn x_cont(&self, layout: &RecordLayout) -> Tensor2 {
        self.x.select_cols(&layout.continuous)
    }
}

/// Latent draws `z ~ N(0, I_k)`, row-major.
pub fn sample_latent<R: Rng + ?Sized>(rows: usize, k: usize, rng: &mut R) -> Tensor2 {
    let data = (0..rows * k).map(|_| rng.sample(StandardNormal)).collect();
    Tensor2::from_vec(rows, k, data).expect("sized by construction")
}

/// Generator architecture together with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub net: PolicyNet,
    pub params: ParamSet,
}

impl GeneratorParams {
    pub fn init<R: Rng + ?Sized>(net: PolicyNet, rng: &mut R) -> Result<Self> {
        let params = net.init(rng)?;
        Ok(Self { net, params })
    }

    pub fn forward_heads(&self, z: &Tensor2) -> Result<Heads> {
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let h = self.net.heads(&mut g, &self.params, zv)?;
        Ok(Heads {
            mu: g.value(h.mu).clone(),
            log_scale: g.value(h.log_scale).clone(),
            logits: g.value(h.logits).clone(),
            value: g.value(h.value).clone(),
        })
    }

    pub fn value(&self, z: &Tensor2) -> Result<Vec<f64>> {
        Ok(self.forward_heads(z)?.value.into_data())
    }

    pub fn sample<R: Rng + ?Sized>(&self, z: &Tensor2, rng: &mut R) -> Result<PolicySample> {
        let rows = z.rows();
        let n_cont = self.net.n_cont();
        let eps_data = (0..rows * n_cont).map(|_| rng.sample(StandardNormal)).collect();
        let eps = Tensor2::from_vec(rows, n_cont, eps_data)?;

        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let heads = self.net.heads(&mut g, &self.params, zv)?;
        let eps_v = g.constant(eps.clone());
        let (u_v, x_cont_v) = self.net.squash(&mut g, &heads, eps_v)?;
        let u = g.value(u_v).clone();
        let x_cont = g.value(x_cont_v).clone();

        let probs = g.value(heads.logits).map(crate::diffcore::sigmoid);
        let mut x_cat = probs;
        for v in x_cat.data_mut() {
            *v = f64::from(u8::from(rng.random::<f64>() < *v));
        }
        let x = self.net.layout.assemble(&x_cont, &x_cat);

        let logp = self.net.log_prob_graph(&mut g, &heads, &u, &x_cat)?;
        Ok(PolicySample {
            z: z.clone(),
            u,
            eps,
            x_cat,
            x,
            logp_old: g.value(logp).data().to_vec(),
            v_old: g.value(heads.value).data().to_vec(),
        })
    }

    /// Log-probability of the stored draws under the current parameters.
    pub fn log_prob(&self, sample: &PolicySample) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let zv = g.constant(sample.z.clone());
        let heads = self.net.heads(&mut g, &self.params, zv)?;
        let logp = self
            .net
            .log_prob_graph(&mut g, &heads, &sample.u, &sample.x_cat)?;
        Ok(g.value(logp).data().to_vec())
    }
}

/// Monte-Carlo entropy estimate `-mean(logp)`.
pub fn entropy_estimate(logp: &[f64]) -> Result<f64> {
    if logp.is_empty() {
        return Err(Error::InvalidArgument("entropy of an empty batch".into()));
    }
    Ok(-logp.iter().sum::<f64>() / logp.len() as f64)
}
