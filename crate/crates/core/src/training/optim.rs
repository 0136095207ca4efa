//! Parameter updates from accumulated gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    /// Plain gradient descent `w ← w − lr·g`.
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer with its moment buffers, laid out in parameter-set order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub hyper: AdamHyper,
    /// Updates applied so far.
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &ParamSet) -> Self {
        let zeros = |p: &ParamSet| p.iter().map(|q| vec![0.0; q.value.len()]).collect();
        let (m, v) = match kind {
            OptimizerKind::Adam => (zeros(params), zeros(params)),
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
        };
        Optimizer {
            kind,
            hyper: AdamHyper::default(),
            t: 0,
            m,
            v,
        }
    }

    /// Applies one update from the stored gradients. Gradients are left in
    /// place; the caller zeroes them.
    pub fn step(&mut self, params: &mut ParamSet, lr: f64) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate {lr} must be finite and nonnegative"
            )));
        }
        if params.iter().any(|p| !p.grad.is_finite()) {
            return Err(Error::Training("non-finite gradient".into()));
        }
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for p in params.iter_mut() {
                    let g = p.grad.data().to_vec();
                    p.value.data_mut().iter_mut().zip(&g).for_each(|(w, g)| *w -= lr * g);
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != params.len() {
                    return Err(Error::Training("optimizer state does not match parameters".into()));
                }
                let AdamHyper { beta1, beta2, eps } = self.hyper;
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
                    let g = p.grad.data().to_vec();
                    let w = p.value.data_mut();
                    for i in 0..w.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        let mh = m[i] / bc1;
                        let vh = v[i] / bc2;
                        w[i] -= lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::tensor::Tensor;

    fn square_grad(ps: &mut ParamSet) {
        ps.zero_grads();
        let mut g = Graph::new();
        let b = ps.bind(&mut g).unwrap();
        let y = g.square(b.get("w")).unwrap();
        let grads = g.backward(y).unwrap();
        ps.accumulate(&grads, &b);
    }

    #[test]
    fn plain_gradient_step() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::scalar(3.0)).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::Sgd, &ps);
        square_grad(&mut ps);
        opt.step(&mut ps, 0.1).unwrap();
        assert!((ps.get("w").unwrap().value.data()[0] - 2.4).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // bias correction makes the first update lr·sign(g)
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::scalar(3.0)).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::Adam, &ps);
        square_grad(&mut ps);
        opt.step(&mut ps, 0.01).unwrap();
        let w = ps.get("w").unwrap().value.data()[0];
        assert!((w - (3.0 - 0.01 * 6.0 / (6.0 + 1e-8))).abs() < 1e-15);
    }
}
