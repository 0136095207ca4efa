//! Named learnable tensors with accumulated gradients.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Ordered collection of parameters addressed by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

/// Graph variables for every parameter of a [`ParamSet`], in set order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl Bound {
    /// Variable for a parameter name. Panics on an unknown name, which is a
    /// programming error in the model definition.
    pub fn get(&self, name: &str) -> Var {
        match self.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("parameter {name:?} is not bound"),
        }
    }

    pub fn try_get(&self, name: &str) -> Option<Var> {
        self.index.get(name).map(|&i| self.vars[i])
    }

    /// Points `name` at another variable, e.g. a perturbed copy in a
    /// gradient check.
    pub fn rebind(&mut self, name: &str, var: Var) -> Result<()> {
        match self.index.get(name) {
            Some(&i) => {
                self.vars[i] = var;
                Ok(())
            }
            None => Err(Error::invalid(format!("unknown parameter {name:?}"))),
        }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter {name:?}")));
        }
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "parameter" });
        }
        self.index.insert(name.clone(), self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param { name, value, grad });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Registers every parameter as a differentiable leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> Result<Bound> {
        let vars = self
            .params
            .iter()
            .map(|p| g.variable(p.value.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Bound {
            vars,
            index: self.index.clone(),
        })
    }

    /// Registers every parameter as a constant: forward evaluation without
    /// recording a backward tape.
    pub fn bind_frozen(&self, g: &mut Graph) -> Result<Bound> {
        let vars = self
            .params
            .iter()
            .map(|p| g.constant(p.value.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Bound {
            vars,
            index: self.index.clone(),
        })
    }

    /// Adds the gradients of one backward pass to the stored gradients.
    pub fn accumulate(&mut self, grads: &Gradients, bound: &Bound) {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            if let Some(g) = grads.get(v) {
                p.grad.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// `name:shape` list used to compare parameter layouts.
    pub fn signature(&self) -> String {
        self.params
            .iter()
            .map(|p| format!("{}{:?}", p.name, p.value.shape()))
            .collect::<Vec<_>>()
            .join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradients_accumulate_until_zeroed() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::scalar(3.0)).unwrap();
        for _ in 0..2 {
            let mut g = Graph::new();
            let b = ps.bind(&mut g).unwrap();
            let sq = g.square(b.get("w")).unwrap();
            let grads = g.backward(sq).unwrap();
            ps.accumulate(&grads, &b);
        }
        assert_eq!(ps.get("w").unwrap().grad.data(), &[12.0]);
        ps.zero_grads();
        assert_eq!(ps.get("w").unwrap().grad.data(), &[0.0]);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut ps = ParamSet::new();
        ps.insert("a", Tensor::scalar(1.0)).unwrap();
        assert!(ps.insert("a", Tensor::scalar(1.0)).is_err());
    }
}
