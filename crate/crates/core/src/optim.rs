//! Poly learning-rate schedule and SGD with momentum.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

/// `base · (1 − iter/max_iter)^power`.
pub fn poly_lr(base: f64, iter: usize, max_iter: usize, power: f64) -> Result<f64> {
    if base < 0.0 {
        return Err(Error::invalid(format!("negative learning rate {base}")));
    }
    if max_iter == 0 || iter > max_iter {
        return Err(Error::invalid(format!("iteration {iter} outside [0, {max_iter}]")));
    }
    let remaining = 1.0 - iter as f64 / max_iter as f64;
    Ok(base * remaining.powf(power))
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { momentum: 0.9, weight_decay: 5e-4 }
    }
}

/// Momentum SGD: `v ← μ·v + lr·m·(g + λ·w)`, `w ← w − v`, where `m` is the
/// parameter's learning-rate multiplier. Parameters with `m = 0` are never
/// touched.
pub struct Sgd<T> {
    cfg: SgdConfig,
    velocity: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(cfg: SgdConfig) -> Self {
        Sgd { cfg, velocity: Vec::new() }
    }

    /// Applies one update. `grads[i]` belongs to parameter `i` of `params`;
    /// `None` means no gradient reached it.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], lr: f64) -> Result<()> {
        if lr < 0.0 {
            return Err(Error::invalid(format!("negative learning rate {lr}")));
        }
        if grads.len() != params.len() {
            return Err(Error::shape(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        self.velocity.resize_with(params.len(), || None);
        let mu = T::from_f64(self.cfg.momentum);
        let decay = T::from_f64(self.cfg.weight_decay);
        for (i, grad) in grads.iter().enumerate() {
            let param = params.get_mut(i);
            if param.lr_mult == 0.0 {
                continue;
            }
            let Some(grad) = grad else { continue };
            if grad.shape() != param.value.shape() {
                return Err(Error::shape(format!("gradient for `{}` has shape {:?}", param.name, grad.shape())));
            }
            let rate = T::from_f64(lr * param.lr_mult);
            let v = self.velocity[i].get_or_insert_with(|| Tensor::zeros(grad.shape()));
            for ((w, vel), &gr) in param.value.data_mut().iter_mut().zip(v.data_mut()).zip(grad.data()) {
                *vel = mu * *vel + rate * (gr + decay * *w);
                *w -= *vel;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poly_endpoints_and_midpoint() {
        assert_eq!(poly_lr(0.0009, 0, 1000, 0.5).unwrap(), 0.0009);
        assert_eq!(poly_lr(0.0009, 1000, 1000, 0.5).unwrap(), 0.0);
        let mid = poly_lr(0.0009, 500, 1000, 0.5).unwrap();
        assert!((mid - 0.0009 * 0.5f64.sqrt()).abs() < 1e-18);
        assert!((mid - 6.3640e-4).abs() < 5e-8);
    }

    #[test]
    fn poly_rejects_bad_arguments() {
        assert!(poly_lr(-0.1, 0, 10, 0.5).is_err());
        assert!(poly_lr(0.1, 11, 10, 0.5).is_err());
    }

    #[test]
    fn frozen_parameters_never_move() {
        let mut store = ParamStore::<f32>::default();
        store.insert("frozen", Tensor::full(&[2, 2], 1.5), 0.0).unwrap();
        store.insert("live", Tensor::full(&[2], 1.0), 10.0).unwrap();
        let mut sgd = Sgd::new(SgdConfig::default());
        let grads = vec![Some(Tensor::full(&[2, 2], 3.0)), Some(Tensor::full(&[2], 1.0))];
        for _ in 0..5 {
            sgd.step(&mut store, &grads, 0.01).unwrap();
        }
        assert!(store.get(0).value.data().iter().all(|&v| v == 1.5));
        assert!(store.get(1).value.data().iter().all(|&v| v < 1.0));
    }

    #[test]
    fn plain_step_without_momentum() {
        let mut store = ParamStore::<f64>::default();
        store.insert("w", Tensor::full(&[1], 2.0), 1.0).unwrap();
        let mut sgd = Sgd::new(SgdConfig { momentum: 0.0, weight_decay: 0.0 });
        sgd.step(&mut store, &[Some(Tensor::full(&[1], 0.5))], 0.1).unwrap();
        assert_eq!(store.get(0).value.data()[0], 2.0 - 0.05);
        assert!(sgd.step(&mut store, &[None], -1.0).is_err());
    }
}
