use std::collections::BTreeMap;

use crate::error::{invalid, shape_err, Result};
use crate::{ParamId, ParamStore, Real};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1.5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First/second moment buffers of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// Adam with bias correction. Moments are allocated (zeroed) on first use.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    /// Number of completed steps.
    pub t: u64,
    moments: BTreeMap<ParamId, Moments<T>>,
}

/// One Adam update of a flat buffer at step `t` (1-based, already incremented).
pub fn adam_update<T: Real>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grad.len() != param.len() || m.len() != param.len() || v.len() != param.len() {
        return shape_err(
            "adam_step",
            format!(
                "param {}, grad {}, m {}, v {}",
                param.len(),
                grad.len(),
                m.len(),
                v.len()
            ),
        );
    }
    if cfg.lr <= 0.0 {
        return invalid("adam_step", format!("learning rate must be positive, got {}", cfg.lr));
    }
    let b1 = T::of(cfg.beta1);
    let b2 = T::of(cfg.beta2);
    let one = T::one();
    let bc1 = T::of(1.0 - cfg.beta1.powi(t as i32));
    let bc2 = T::of(1.0 - cfg.beta2.powi(t as i32));
    let lr = T::of(cfg.lr);
    let eps = T::of(cfg.eps);
    let wd = T::of(cfg.weight_decay);
    for i in 0..param.len() {
        let g = grad[i] + wd * param[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        self.t += 1;
        let cfg = self.config;
        let t = self.t;
        for (id, p) in store.iter_mut() {
            let Some(grad) = p.grad.as_ref() else {
                continue;
            };
            let n = p.value.numel();
            let mo = self.moments.entry(id).or_insert_with(|| Moments {
                m: vec![T::zero(); n],
                v: vec![T::zero(); n],
            });
            adam_update(p.value.data_mut(), grad.data(), &mut mo.m, &mut mo.v, t, &cfg)?;
        }
        Ok(())
    }

    pub fn moments(&self, id: ParamId) -> Option<&Moments<T>> {
        self.moments.get(&id)
    }

    pub fn set_moments(&mut self, id: ParamId, moments: Moments<T>) {
        self.moments.insert(id, moments);
    }

    pub fn iter_moments(&self) -> impl Iterator<Item = (ParamId, &Moments<T>)> {
        self.moments.iter().map(|(k, v)| (*k, v))
    }
}
