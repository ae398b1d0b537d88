//! Discriminator used as the reward model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{sigmoid, Dense, Graph, MlpSpec, Op, ParamSet, Tensor2, Trunk, Var};
use crate::error::{Error, Result};
use crate::policy::{HEAD_INIT_SCALE, LEAKY_SLOPE};

/// Rewards are kept inside `[REWARD_EPS, 1 - REWARD_EPS]`.
pub const REWARD_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticNet {
    pub input_width: usize,
    pub width: usize,
    pub depth: usize,
}

/// Graph handles for one discriminator loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct CriticLoss {
    pub bce: Var,
    pub r1: Var,
    pub total: Var,
}

impl CriticNet {
    pub fn new(input_width: usize, width: usize, depth: usize) -> Self {
        Self {
            input_width,
            width,
            depth,
        }
    }

    pub fn spec(&self) -> MlpSpec {
        MlpSpec {
            trunk: Trunk::new("trunk", self.depth, Op::LeakyRelu(LEAKY_SLOPE)),
            head: Dense::new("head"),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamSet> {
        let spec = self.spec();
        let mut p = ParamSet::new();
        spec.trunk.init(&mut p, self.input_width, self.width, rng)?;
        let fan = if self.depth == 0 {
            self.input_width
        } else {
            self.width
        };
        spec.head.init(&mut p, fan, 1, HEAD_INIT_SCALE, rng)?;
        Ok(p)
    }

    fn check_width(&self, x: &Tensor2) -> Result<()> {
        if x.cols() != self.input_width {
            return Err(Error::shape(
                "discriminator",
                format!("records have {} columns, expected {}", x.cols(), self.input_width),
            ));
        }
        Ok(())
    }

    pub fn logit_graph(&self, g: &mut Graph, params: &ParamSet, x: &Tensor2) -> Result<Var> {
        self.check_width(x)?;
        let xv = g.constant(x.clone());
        Ok(self.spec().forward(g, params, xv)?.output)
    }

    /// `mean(softplus(-D(real))) + mean(softplus(D(fake)))`.
    pub fn bce_graph(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        real: &Tensor2,
        fake: &Tensor2,
    ) -> Result<Var> {
        let lr = self.logit_graph(g, params, real)?;
        let lf = self.logit_graph(g, params, fake)?;
        self.bce_from_logits(g, lr, lf)
    }

    fn bce_from_logits(&self, g: &mut Graph, real_logits: Var, fake_logits: Var) -> Result<Var> {
        if g.value(real_logits).rows() == 0 || g.value(fake_logits).rows() == 0 {
            return Err(Error::InvalidArgument("BCE needs non-empty batches".into()));
        }
        let neg = g.neg(real_logits)?;
        let real_term = g.softplus(neg)?;
        let real_mean = g.mean(real_term)?;
        let fake_term = g.softplus(fake_logits)?;
        let fake_mean = g.mean(fake_term)?;
        g.add(real_mean, fake_mean)
    }

    /// `gamma / 2 * mean_i ||d D(x_i) / d x_i||^2` over the real rows.
    pub fn r1_graph(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        real: &Tensor2,
        gamma: f64,
    ) -> Result<Var> {
        self.check_width(real)?;
        let xv = g.constant(real.clone());
        let trace = self.spec().forward(g, params, xv)?;
        self.r1_from_trace(g, params, &trace, gamma)
    }

    fn r1_from_trace(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        trace: &crate::diffcore::MlpTrace,
        gamma: f64,
    ) -> Result<Var> {
        if gamma < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "R1 weight must be non-negative, got {gamma}"
            )));
        }
        if gamma == 0.0 {
            return Ok(g.scalar(0.0));
        }
        let grad = self.spec().input_gradient_from(g, params, trace)?;
        let sq = g.square(grad)?;
        let norms = g.sum_cols(sq)?;
        let mean = g.mean(norms)?;
        g.scale(mean, gamma / 2.0)
    }

    /// Builds `L_D = L_BCE + R1`, sharing the forward pass over the real batch.
    pub fn loss_graph(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        real: &Tensor2,
        fake: &Tensor2,
        gamma: f64,
    ) -> Result<CriticLoss> {
        self.check_width(real)?;
        let xv = g.constant(real.clone());
        let trace = self.spec().forward(g, params, xv)?;
        let lf = self.logit_graph(g, params, fake)?;
        let bce = self.bce_from_logits(g, trace.output, lf)?;
        let r1 = self.r1_from_trace(g, params, &trace, gamma)?;
        let total = g.add(bce, r1)?;
        Ok(CriticLoss { bce, r1, total })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorParams {
    pub net: CriticNet,
    pub params: ParamSet,
}

impl DiscriminatorParams {
    pub fn init<R: Rng + ?Sized>(net: CriticNet, rng: &mut R) -> Result<Self> {
        let params = net.init(rng)?;
        Ok(Self { net, params })
    }

    pub fn logit(&self, x: &Tensor2) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let l = self.net.logit_graph(&mut g, &self.params, x)?;
        Ok(g.value(l).data().to_vec())
    }

    pub fn reward(&self, x: &Tensor2) -> Result<Vec<f64>> {
        Ok(self.logit(x)?.into_iter().map(reward_from_logit).collect())
    }

    pub fn bce_loss(&self, real: &Tensor2, fake: &Tensor2) -> Result<f64> {
        let mut g = Graph::new();
        let l = self.net.bce_graph(&mut g, &self.params, real, fake)?;
        Ok(g.value(l).item())
    }

    pub fn r1_penalty(&self, real: &Tensor2, gamma: f64) -> Result<f64> {
        let mut g = Graph::new();
        let l = self.net.r1_graph(&mut g, &self.params, real, gamma)?;
        Ok(g.value(l).item())
    }
}

pub fn reward_from_logit(logit: f64) -> f64 {
    sigmoid(logit).clamp(REWARD_EPS, 1.0 - REWARD_EPS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::gradient_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn disc(width: usize, hidden: usize, depth: usize, seed: u64) -> DiscriminatorParams {
        DiscriminatorParams::init(
            CriticNet::new(width, hidden, depth),
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap()
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Tensor2 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor2::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random()).collect()).unwrap()
    }

    fn zero_head(d: &mut DiscriminatorParams) {
        d.params.get_mut("head.w").unwrap().iter_mut().for_each(|v| *v = 0.0);
        d.params.get_mut("head.b").unwrap().iter_mut().for_each(|v| *v = 0.0);
    }

    #[test]
    fn zero_head_logits_and_shapes() {
        let mut d = disc(3, 5, 1, 1);
        zero_head(&mut d);
        let l = d.logit(&random(4, 3, 2)).unwrap();
        assert_eq!(l, vec![0.0; 4]);
        assert_eq!(d.reward(&random(4, 3, 2)).unwrap(), vec![0.5; 4]);
        assert!(d.logit(&random(4, 2, 2)).is_err());
    }

    #[test]
    fn logits_permute_with_rows() {
        let d = disc(3, 5, 2, 3);
        let x = random(5, 3, 4);
        let perm = [3, 0, 4, 1, 2];
        let l = d.logit(&x).unwrap();
        let lp = d.logit(&x.select_rows(&perm)).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            assert_eq!(lp[i], l[p]);
        }
    }

    #[test]
    fn reward_is_sigmoid_and_bounded() {
        assert_eq!(reward_from_logit(0.0), 0.5);
        assert_eq!(reward_from_logit(1e6), 1.0 - REWARD_EPS);
        assert!(reward_from_logit(-1e6) > 0.0);
        assert!(reward_from_logit(0.3) > reward_from_logit(0.2));
        let d = disc(3, 4, 1, 5);
        let x = random(6, 3, 6);
        for (r, l) in d.reward(&x).unwrap().iter().zip(d.logit(&x).unwrap()) {
            assert_eq!(*r, sigmoid(l));
        }
    }

    fn linear_disc(w: &[f64], b: f64) -> DiscriminatorParams {
        let mut d = disc(w.len(), 1, 0, 0);
        d.params.get_mut("head.w").unwrap().copy_from_slice(w);
        d.params.get_mut("head.b").unwrap()[0] = b;
        d
    }

    #[test]
    fn bce_closed_forms() {
        let mut d = disc(2, 3, 1, 7);
        zero_head(&mut d);
        let x = random(3, 2, 1);
        let l = d.bce_loss(&x, &x).unwrap();
        assert!((l - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);

        let real = Tensor2::from_vec(1, 1, vec![1.0]).unwrap();
        let fake = Tensor2::from_vec(1, 1, vec![-1.0]).unwrap();
        let d = linear_disc(&[20.0], 0.0);
        assert!(d.bce_loss(&real, &fake).unwrap() < 1e-8);
        let d = linear_disc(&[-20.0], 0.0);
        assert!((d.bce_loss(&real, &fake).unwrap() - 40.0).abs() < 1e-8);
        assert!(d.bce_loss(&Tensor2::zeros(0, 1), &fake).is_err());
    }

    #[test]
    fn r1_linear_and_zero_gamma() {
        let w = [0.5, -1.0, 2.0];
        let d = linear_disc(&w, 0.3);
        let x = random(7, 3, 8);
        let norm2: f64 = w.iter().map(|v| v * v).sum();
        assert!((d.r1_penalty(&x, 5.0).unwrap() - 2.5 * norm2).abs() < 1e-12);
        assert_eq!(d.r1_penalty(&x, 0.0).unwrap(), 0.0);
        assert!(d.r1_penalty(&x, -1.0).is_err());

        let mut g = Graph::new();
        let r1 = d.net.r1_graph(&mut g, &d.params, &x, 0.0).unwrap();
        let grads = g.backward(r1, &d.params).unwrap();
        assert!(grads.values().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn r1_matches_finite_difference_input_gradients() {
        let d = disc(3, 6, 1, 9);
        let x = random(4, 3, 10);
        let gamma = 3.0;
        let h = 1e-5;
        let mut total = 0.0;
        for r in 0..4 {
            for c in 0..3 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp.set(r, c, x.get(r, c) + h);
                xm.set(r, c, x.get(r, c) - h);
                let fd = (d.logit(&xp).unwrap()[r] - d.logit(&xm).unwrap()[r]) / (2.0 * h);
                total += fd * fd;
            }
        }
        let expected = gamma / 2.0 * total / 4.0;
        let got = d.r1_penalty(&x, gamma).unwrap();
        assert!((got - expected).abs() / expected.abs().max(1.0) < 1e-4);
    }

    #[test]
    fn r1_ignores_fake_batch() {
        let d = disc(3, 4, 1, 11);
        let real = random(5, 3, 12);
        let mut g1 = Graph::new();
        let a = d.net.loss_graph(&mut g1, &d.params, &real, &random(5, 3, 13), 5.0).unwrap();
        let mut g2 = Graph::new();
        let b = d.net.loss_graph(&mut g2, &d.params, &real, &random(6, 3, 14), 5.0).unwrap();
        assert_eq!(g1.value(a.r1).item(), g2.value(b.r1).item());
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        for depth in [1, 2] {
            let d = disc(3, 5, depth, 15 + depth as u64);
            let real = random(6, 3, 16);
            let fake = random(5, 3, 17);
            let net = d.net.clone();
            let report = gradient_check(
                |g, p| Ok(net.loss_graph(g, p, &real, &fake, 5.0)?.total),
                &d.params,
                1e-5,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{report:?}");
        }
    }
}
