use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Learning-rate multiplier; 0 freezes the parameter.
    pub lr_mult: f64,
}

/// Named parameters in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn insert(&mut self, name: &str, value: Tensor<T>, lr_mult: f64) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter `{name}`")));
        }
        self.entries.push(Param { name: name.to_string(), value, lr_mult });
        self.index.insert(name.to_string(), self.entries.len() - 1);
        Ok(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> &Param<T> {
        &self.entries[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Param<T> {
        &mut self.entries[i]
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.position(name).map(|i| &self.entries[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.entries.iter_mut()
    }

    /// Total number of scalar weights.
    pub fn census(&self) -> u64 {
        self.entries.iter().map(|p| p.value.len() as u64).sum()
    }

    /// Removes every parameter whose name satisfies `pred`.
    pub fn remove_where(&mut self, pred: impl Fn(&str) -> bool) {
        self.entries.retain(|p| !pred(&p.name));
        self.index = self.entries.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
    }

    /// Registers every parameter as a graph leaf. With `all_grads`, frozen
    /// parameters also receive gradients (used by gradient checking).
    pub fn bind(&self, g: &mut Graph<T>, all_grads: bool) -> Bound {
        let vars = self.entries.iter().map(|p| g.leaf(p.value.clone(), all_grads || p.lr_mult > 0.0)).collect();
        Bound { vars, index: self.index.clone() }
    }

    /// Gradients for each parameter, in store order.
    pub fn collect_grads(&self, g: &mut Graph<T>, bound: &Bound) -> Vec<Option<Tensor<T>>> {
        bound.vars.iter().map(|&v| g.take_grad(v)).collect()
    }
}

/// Graph handles for a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.index.get(name).map(|&i| self.vars[i]).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// He-normal initialization with a per-parameter stream: the values depend
/// only on `(seed, name)`, not on construction order.
pub fn he_normal<T: Scalar>(seed: u64, name: &str, shape: &[usize], fan_in: usize) -> Tensor<T> {
    normal_init(seed, name, shape, (2.0 / fan_in.max(1) as f64).sqrt())
}

/// Zero-mean normal initialization on the same per-parameter stream.
pub fn normal_init<T: Scalar>(seed: u64, name: &str, shape: &[usize], std: f64) -> Tensor<T> {
    let digest = Sha256::digest(name.as_bytes());
    let mut key = [0u8; 8];
    key.copy_from_slice(&digest[..8]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ u64::from_le_bytes(key));
    let normal = Normal::new(0.0, std).expect("finite std");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(normal.sample(&mut rng))).collect();
    Tensor::from_vec(shape, data).expect("shape product matches")
}
