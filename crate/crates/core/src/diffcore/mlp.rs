//! Feed-forward building blocks and the closed-form input gradient used by the
//! R1 penalty.

use rand::Rng;
use rand::distr::{Distribution, Uniform};

use super::graph::{Graph, Op, Var};
use super::params::ParamSet;
use super::Tensor2;
use crate::error::{Error, Result};

/// Affine layer `x W + b` with `W: in x out` and `b: 1 x out`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dense {
    pub weight: String,
    pub bias: String,
}

impl Dense {
    pub fn new(prefix: &str) -> Self {
        Self {
            weight: format!("{prefix}.w"),
            bias: format!("{prefix}.b"),
        }
    }

    pub fn apply(&self, g: &mut Graph, params: &ParamSet, x: Var) -> Result<Var> {
        let w = g.param(params, &self.weight)?;
        let b = g.param(params, &self.bias)?;
        let xw = g.matmul(x, w)?;
        g.add(xw, b)
    }

    /// Inserts weights drawn from U(-scale/sqrt(fan_in), scale/sqrt(fan_in)) and a zero bias.
    pub fn init<R: Rng + ?Sized>(
        &self,
        params: &mut ParamSet,
        fan_in: usize,
        fan_out: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<()> {
        let bound = scale / (fan_in.max(1) as f64).sqrt();
        let w = if bound > 0.0 {
            let dist = Uniform::new_inclusive(-bound, bound)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect()
        } else {
            vec![0.0; fan_in * fan_out]
        };
        params.insert(&self.weight, Tensor2::from_vec(fan_in, fan_out, w)?)?;
        params.insert(&self.bias, Tensor2::zeros(1, fan_out))?;
        Ok(())
    }
}

/// Stack of hidden layers sharing one elementwise activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Trunk {
    pub layers: Vec<Dense>,
    pub activation: Op,
}

/// Node handles recorded while running a trunk forward.
#[derive(Debug, Clone)]
pub struct TrunkTrace {
    pub pre_activations: Vec<Var>,
    pub output: Var,
}

impl Trunk {
    pub fn new(prefix: &str, depth: usize, activation: Op) -> Self {
        Self {
            layers: (0..depth).map(|l| Dense::new(&format!("{prefix}.{l}"))).collect(),
            activation,
        }
    }

    pub fn init<R: Rng + ?Sized>(
        &self,
        params: &mut ParamSet,
        input: usize,
        width: usize,
        rng: &mut R,
    ) -> Result<()> {
        let mut fan_in = input;
        for layer in &self.layers {
            layer.init(params, fan_in, width, 1.0, rng)?;
            fan_in = width;
        }
        Ok(())
    }

    pub fn apply(&self, g: &mut Graph, params: &ParamSet, x: Var) -> Result<TrunkTrace> {
        let mut h = x;
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let a = layer.apply(g, params, h)?;
            pre_activations.push(a);
            h = g.apply(self.activation.clone(), &[a])?;
        }
        Ok(TrunkTrace {
            pre_activations,
            output: h,
        })
    }
}

/// Scalar-output MLP: trunk followed by a linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub trunk: Trunk,
    pub head: Dense,
}

#[derive(Debug, Clone)]
pub struct MlpTrace {
    pub trunk: TrunkTrace,
    pub output: Var,
}

impl MlpSpec {
    pub fn forward(&self, g: &mut Graph, params: &ParamSet, x: Var) -> Result<MlpTrace> {
        let trunk = self.trunk.apply(g, params, x)?;
        let output = self.head.apply(g, params, trunk.output)?;
        Ok(MlpTrace { trunk, output })
    }

    /// Runs the net forward on `x` and returns a node holding d(net)/dx row-wise.
    pub fn input_gradient(&self, g: &mut Graph, params: &ParamSet, x: Var) -> Result<Var> {
        let trace = self.forward(g, params, x)?;
        self.input_gradient_from(g, params, &trace)
    }

    /// Builds the input gradient from an existing forward trace.
    ///
    /// The result is an explicit chain of transposed weight products and
    /// activation-derivative factors, so differentiating it with respect to the
    /// weights gives exact second-order terms.
    pub fn input_gradient_from(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        trace: &MlpTrace,
    ) -> Result<Var> {
        let head_w = params.get(&self.head.weight)?;
        if head_w.cols() != 1 {
            return Err(Error::shape(
                "input_gradient",
                format!("head must be scalar, has {} outputs", head_w.cols()),
            ));
        }
        let rows = g.value(trace.output).rows();
        let ones = g.constant(Tensor2::filled(rows, 1, 1.0));
        let w = g.param(params, &self.head.weight)?;
        let wt = g.transpose(w)?;
        let mut grad = g.matmul(ones, wt)?;
        for (layer, &pre) in self
            .trunk
            .layers
            .iter()
            .zip(&trace.trunk.pre_activations)
            .rev()
        {
            let deriv = activation_derivative(g, &self.trunk.activation, pre)?;
            grad = g.mul(grad, deriv)?;
            let w = g.param(params, &layer.weight)?;
            let wt = g.transpose(w)?;
            grad = g.matmul(grad, wt)?;
        }
        Ok(grad)
    }
}

/// Derivative of `activation` at `pre`, built from graph primitives.
fn activation_derivative(g: &mut Graph, activation: &Op, pre: Var) -> Result<Var> {
    match activation {
        Op::LeakyRelu(slope) => g.apply(Op::LeakyReluDeriv(*slope), &[pre]),
        Op::Tanh => {
            let t = g.tanh(pre)?;
            let sq = g.square(t)?;
            let neg = g.neg(sq)?;
            g.add_scalar(neg, 1.0)
        }
        Op::Sigmoid => {
            let s = g.sigmoid(pre)?;
            let neg = g.neg(s)?;
            let one_minus = g.add_scalar(neg, 1.0)?;
            g.mul(s, one_minus)
        }
        Op::Softplus => g.sigmoid(pre),
        other => Err(Error::UnsupportedActivation(format!("{other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(depth: usize, act: Op) -> MlpSpec {
        MlpSpec {
            trunk: Trunk::new("t", depth, act),
            head: Dense::new("head"),
        }
    }

    fn init(spec: &MlpSpec, input: usize, width: usize, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        spec.trunk.init(&mut p, input, width, &mut rng).unwrap();
        let fan = if spec.trunk.layers.is_empty() { input } else { width };
        spec.head.init(&mut p, fan, 1, 1.0, &mut rng).unwrap();
        p
    }

    fn eval(spec: &MlpSpec, p: &ParamSet, x: &Tensor2) -> Vec<f64> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let tr = spec.forward(&mut g, p, xv).unwrap();
        g.value(tr.output).data().to_vec()
    }

    #[test]
    fn linear_net_gradient_is_weight_vector() {
        let spec = net(0, Op::Tanh);
        let p = init(&spec, 3, 0, 1);
        let x = Tensor2::from_vec(2, 3, vec![0.1, 0.2, 0.3, -1.0, 2.0, 0.0]).unwrap();
        let mut g = Graph::new();
        let xv = g.constant(x);
        let ig = spec.input_gradient(&mut g, &p, xv).unwrap();
        let w = p.get("head.w").unwrap().data().to_vec();
        for r in 0..2 {
            assert_eq!(g.value(ig).row(r), &w[..]);
        }
    }

    #[test]
    fn squared_norm_of_linear_gradient_differentiates_to_2w() {
        let spec = net(0, Op::Tanh);
        let p = init(&spec, 4, 0, 2);
        let mut g = Graph::new();
        let xv = g.constant(Tensor2::filled(1, 4, 0.3));
        let ig = spec.input_gradient(&mut g, &p, xv).unwrap();
        let sq = g.square(ig).unwrap();
        let s = g.sum(sq).unwrap();
        let grads = g.backward(s, &p).unwrap();
        let w = p.get("head.w").unwrap();
        for (gw, wv) in grads["head.w"].data().iter().zip(w.data()) {
            assert!((gw - 2.0 * wv).abs() < 1e-15);
        }
    }

    #[test]
    fn tanh_net_matches_finite_differences() {
        let spec = net(1, Op::Tanh);
        let p = init(&spec, 3, 5, 3);
        let x = Tensor2::from_vec(2, 3, vec![0.2, -0.4, 0.9, 0.5, 0.1, -0.3]).unwrap();
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let ig = spec.input_gradient(&mut g, &p, xv).unwrap();
        let h = 1e-5;
        for r in 0..2 {
            for c in 0..3 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp.set(r, c, x.get(r, c) + h);
                xm.set(r, c, x.get(r, c) - h);
                let fd = (eval(&spec, &p, &xp)[r] - eval(&spec, &p, &xm)[r]) / (2.0 * h);
                let an = g.value(ig).get(r, c);
                assert!((fd - an).abs() / an.abs().max(1.0) < 1e-4);
            }
        }
    }

    #[test]
    fn unsupported_activation_rejected() {
        let spec = net(1, Op::Square);
        let p = init(&spec, 2, 3, 4);
        let mut g = Graph::new();
        let xv = g.constant(Tensor2::filled(1, 2, 0.5));
        assert!(matches!(
            spec.input_gradient(&mut g, &p, xv),
            Err(Error::UnsupportedActivation(_))
        ));
    }
}
