use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::ParamStore;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update at step `t` (counting from 1). Frozen
/// entries are left untouched. Every gradient is checked for finiteness
/// before any parameter changes.
pub fn adam_step<T: Real>(store: &mut ParamStore<T>, cfg: &AdamConfig, t: u64) -> Result<()> {
    if t == 0 {
        return Err(Error::invalid("Adam steps count from 1"));
    }
    if let Some(bad) = store.entries().iter().find(|e| !e.frozen && !e.grad.all_finite()) {
        return Err(Error::NonFiniteGradient(bad.name.clone()));
    }
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let c1 = T::of(1.0 - cfg.beta1.powf(t as f64));
    let c2 = T::of(1.0 - cfg.beta2.powf(t as f64));
    let (lr, eps) = (T::of(cfg.lr), T::of(cfg.eps));
    for e in store.entries_mut().iter_mut().filter(|e| !e.frozen) {
        let grads = e.grad.data();
        let (m, v, p) = (e.m.data_mut(), e.v.data_mut(), e.value.data_mut());
        for i in 0..grads.len() {
            let g = grads[i];
            m[i] = b1 * m[i] + (T::one() - b1) * g;
            v[i] = b2 * v[i] + (T::one() - b2) * g * g;
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::Tensor;

    fn store(v: f64, g: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.insert("p", Tensor::from_vec(&[1], vec![v]).unwrap()).unwrap();
        s.accumulate(id, &Tensor::from_vec(&[1], vec![g]).unwrap()).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = store(0.7, 0.0);
        adam_step(&mut s, &AdamConfig::default(), 1).unwrap();
        assert_eq!(s.get("p").unwrap().value.data()[0], 0.7);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        for g in [1e-3, 5.0, -20.0] {
            let mut s = store(0.0, g);
            let cfg = AdamConfig::default();
            adam_step(&mut s, &cfg, 1).unwrap();
            let moved = s.get("p").unwrap().value.data()[0];
            // m̂ = g, v̂ = g², step = lr·g/(|g| + ε)
            let expected = -cfg.lr * g / (g.abs() + cfg.eps);
            assert!((moved - expected).abs() < 1e-15, "{moved} vs {expected}");
            assert!((moved + cfg.lr * g.signum()).abs() < 1e-9);
        }
    }

    #[test]
    fn frozen_untouched_and_nan_named() {
        let mut s = store(0.5, 1.0);
        s.set_frozen("p", true);
        adam_step(&mut s, &AdamConfig::default(), 1).unwrap();
        assert_eq!(s.get("p").unwrap().value.data()[0], 0.5);

        let mut s = store(0.5, f64::NAN);
        match adam_step(&mut s, &AdamConfig::default(), 1) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "p"),
            other => panic!("{other:?}"),
        }
    }
}
