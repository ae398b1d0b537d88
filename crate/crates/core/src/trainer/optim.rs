use serde::{Deserialize, Serialize};

use super::config::OptimizerKind;
use crate::diffcore::{GradMap, ParamSet};
use crate::error::{Error, Result};

/// Hyperparameters of one optimizer instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Moment buffers carried between steps. Empty for plain SGD.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub steps: u64,
    pub first: GradMap,
    pub second: GradMap,
}

impl OptimizerState {
    pub fn new(spec: &OptimizerSpec, params: &ParamSet) -> Self {
        let (first, second) = match spec.kind {
            OptimizerKind::Sgd => (GradMap::new(), GradMap::new()),
            OptimizerKind::Momentum => (params.zeros_like(), GradMap::new()),
            OptimizerKind::Adam => (params.zeros_like(), params.zeros_like()),
        };
        Self {
            steps: 0,
            first,
            second,
        }
    }

    /// Applies one descent step to `params` in name order.
    pub fn step(&mut self, spec: &OptimizerSpec, params: &mut ParamSet, grads: &GradMap) -> Result<()> {
        for (name, g) in grads {
            if !g.is_finite() {
                return Err(Error::Data(format!("non-finite gradient for `{name}`")));
            }
        }
        self.steps += 1;
        match spec.kind {
            OptimizerKind::Sgd => params.apply(grads, |p, g| *p -= spec.lr * g),
            OptimizerKind::Momentum => {
                for (name, g) in grads {
                    let buf = buffer(&mut self.first, name)?;
                    let theta = params.get_mut(name)?;
                    if buf.len() != g.len() || theta.len() != g.len() {
                        return Err(Error::shape("momentum", format!("size mismatch for `{name}`")));
                    }
                    for ((v, p), &d) in buf.iter_mut().zip(theta.iter_mut()).zip(g.data()) {
                        *v = spec.momentum * *v + d;
                        *p -= spec.lr * *v;
                    }
                }
                Ok(())
            }
            OptimizerKind::Adam => {
                let t = i32::try_from(self.steps).unwrap_or(i32::MAX);
                let c1 = 1.0 - spec.beta1.powi(t);
                let c2 = 1.0 - spec.beta2.powi(t);
                for (name, g) in grads {
                    let m = buffer(&mut self.first, name)?;
                    let v = buffer(&mut self.second, name)?;
                    let theta = params.get_mut(name)?;
                    if m.len() != g.len() || v.len() != g.len() || theta.len() != g.len() {
                        return Err(Error::shape("adam", format!("size mismatch for `{name}`")));
                    }
                    for (((mi, vi), p), &d) in m
                        .iter_mut()
                        .zip(v.iter_mut())
                        .zip(theta.iter_mut())
                        .zip(g.data())
                    {
                        *mi = spec.beta1 * *mi + (1.0 - spec.beta1) * d;
                        *vi = spec.beta2 * *vi + (1.0 - spec.beta2) * d * d;
                        *p -= spec.lr * (*mi / c1) / ((*vi / c2).sqrt() + spec.eps);
                    }
                }
                Ok(())
            }
        }
    }
}

fn buffer<'a>(map: &'a mut GradMap, name: &str) -> Result<&'a mut [f64]> {
    map.get_mut(name)
        .map(|t| t.data_mut())
        .ok_or_else(|| Error::UnknownParam(name.to_string()))
}
