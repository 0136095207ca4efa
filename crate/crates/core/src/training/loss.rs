//! Training objectives on graph variables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub const DEFAULT_QUANTILES: [f64; 3] = [0.05, 0.5, 0.95];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Pinball,
}

impl LossKind {
    /// Output heads the model needs for this loss.
    pub fn output_heads(self, levels: &[f64]) -> usize {
        match self {
            LossKind::Mse => 1,
            LossKind::Pinball => levels.len(),
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "pinball" => Ok(LossKind::Pinball),
            other => Err(Error::invalid(format!(
                "unknown loss {other:?}, expected mse or pinball"
            ))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::Pinball => "pinball",
        })
    }
}

pub fn validate_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::invalid("quantile levels must not be empty"));
    }
    if levels.iter().any(|&q| !(q > 0.0 && q < 1.0)) || levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!(
            "quantile levels must be strictly increasing in (0, 1), got {levels:?}"
        )));
    }
    Ok(())
}

fn truth_column(g: &mut Graph, pred: Var, truth: &Tensor) -> Result<Var> {
    let sp = g.shape(pred).to_vec();
    if sp.len() != 3 || truth.shape() != &sp[..2] {
        return Err(Error::shape("loss", &sp, truth.shape()));
    }
    g.constant(truth.reshape(&[sp[0], sp[1], 1])?)
}

/// Mean over nodes, leads and levels of the quantile loss
/// `ρ_q(r) = q·r + max(−r, 0)` with residual `r = y − ŷ`.
///
/// `pred` is `[N, H, Q]`, `truth` is `[N, H]`.
pub fn pinball_loss(g: &mut Graph, pred: Var, truth: &Tensor, levels: &[f64]) -> Result<Var> {
    validate_levels(levels)?;
    let q = *g.shape(pred).last().unwrap_or(&0);
    if q != levels.len() {
        return Err(Error::invalid(format!(
            "{q} output heads for {} quantile levels",
            levels.len()
        )));
    }
    let y = truth_column(g, pred, truth)?;
    let r = g.sub(y, pred)?;
    let lv = g.constant(Tensor::from_vec(levels.to_vec()))?;
    let linear = g.mul(r, lv)?;
    let neg = g.neg(r)?;
    let hinge = g.relu(neg)?;
    let rho = g.add(linear, hinge)?;
    g.mean_all(rho)
}

/// Mean squared residual; `pred` is `[N, H, 1]`, `truth` is `[N, H]`.
pub fn mse_loss(g: &mut Graph, pred: Var, truth: &Tensor) -> Result<Var> {
    if g.shape(pred).last() != Some(&1) {
        return Err(Error::shape("mse_loss", g.shape(pred), truth.shape()));
    }
    let y = truth_column(g, pred, truth)?;
    let r = g.sub(pred, y)?;
    let sq = g.square(r)?;
    g.mean_all(sq)
}

pub fn loss(g: &mut Graph, kind: LossKind, pred: Var, truth: &Tensor, levels: &[f64]) -> Result<Var> {
    match kind {
        LossKind::Mse => mse_loss(g, pred, truth),
        LossKind::Pinball => pinball_loss(g, pred, truth, levels),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval_pinball(pred: &[f64], truth: &[f64], levels: &[f64]) -> f64 {
        let q = levels.len();
        let n = truth.len();
        let mut g = Graph::new();
        let p = g.constant(Tensor::new(&[1, n, q], pred.to_vec()).unwrap()).unwrap();
        let t = Tensor::new(&[1, n], truth.to_vec()).unwrap();
        let l = pinball_loss(&mut g, p, &t, levels).unwrap();
        g.value(l).data()[0]
    }

    #[test]
    fn pinball_examples() {
        assert_eq!(eval_pinball(&[0.3, 0.3, 0.3], &[0.3], &DEFAULT_QUANTILES), 0.0);
        assert_eq!(eval_pinball(&[0.0], &[1.0], &[0.5]), 0.5);
        assert!((eval_pinball(&[0.0], &[1.0], &[0.95]) - 0.95).abs() < 1e-15);
        assert!((eval_pinball(&[1.0], &[0.0], &[0.95]) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn levels_must_increase() {
        assert!(validate_levels(&[0.5, 0.05]).is_err());
        assert!(validate_levels(&[0.0, 0.5]).is_err());
        let mut g = Graph::new();
        let p = g.constant(Tensor::zeros(&[1, 1, 2])).unwrap();
        let t = Tensor::zeros(&[1, 1]);
        assert!(pinball_loss(&mut g, p, &t, &[0.5, 0.5]).is_err());
    }

    #[test]
    fn mse_examples() {
        let mut g = Graph::new();
        let p = g.constant(Tensor::new(&[1, 2, 1], vec![1.0, -1.0]).unwrap()).unwrap();
        let l = mse_loss(&mut g, p, &Tensor::zeros(&[1, 2])).unwrap();
        assert_eq!(g.value(l).data(), &[1.0]);
        let p2 = g.constant(Tensor::new(&[1, 2, 1], vec![2.0, -2.0]).unwrap()).unwrap();
        let l2 = mse_loss(&mut g, p2, &Tensor::zeros(&[1, 2])).unwrap();
        assert_eq!(g.value(l2).data(), &[4.0]);
    }
}
