//! Adam with L2 weight decay, global-norm clipping and the cosine schedule
//! with warm restarts.

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};
use subaru_nn::{ParamStore, Scalar};

/// Per-parameter gradients indexed by parameter id; `None` means zero.
pub type Grads<T> = Vec<Option<ArrayD<T>>>;

/// Global L2 norm over every present gradient.
pub fn global_norm<T: Scalar>(grads: &Grads<T>) -> f64 {
    grads
        .iter()
        .flatten()
        .map(|g| g.iter().map(|v| v.f64() * v.f64()).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Rescales so the global norm is at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut Grads<T>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = T::c(max_norm / norm);
        for g in grads.iter_mut().flatten() {
            g.mapv_inplace(|v| v * s);
        }
    }
    norm
}

/// Adds `src` into `acc` element-wise.
pub fn accumulate<T: Scalar>(acc: &mut Grads<T>, src: Grads<T>) {
    if acc.len() < src.len() {
        acc.resize(src.len(), None);
    }
    for (a, s) in acc.iter_mut().zip(src) {
        match (a.as_mut(), s) {
            (Some(a), Some(s)) => *a += &s,
            (None, Some(s)) => *a = Some(s),
            _ => {}
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// Adam moments; decay is added to the gradient before the moment updates.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Option<ArrayD<T>>>,
    pub v: Vec<Option<ArrayD<T>>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        Adam {
            config,
            t: 0,
            m: vec![None; n_params],
            v: vec![None; n_params],
        }
    }

    /// One update of every trainable parameter with a gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Grads<T>, lr: f64) {
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let (b1, b2) = (T::c(c.beta1), T::c(c.beta2));
        let (one_b1, one_b2) = (T::c(1.0 - c.beta1), T::c(1.0 - c.beta2));
        let wd = T::c(c.weight_decay);
        let step = T::c(lr / bc1);
        let sq = T::c(bc2.sqrt());
        let eps = T::c(c.eps);
        let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
        for id in ids {
            let Some(g) = grads.get(id.0).and_then(|g| g.as_ref()) else {
                continue;
            };
            let w = store.get(id).value.clone();
            let g = ndarray::Zip::from(g).and(&*w).map_collect(|&g, &w| g + wd * w);
            let m = self.m[id.0].get_or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            ndarray::Zip::from(&mut *m).and(&g).for_each(|m, &g| *m = b1 * *m + one_b1 * g);
            let v = self.v[id.0].get_or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            ndarray::Zip::from(&mut *v).and(&g).for_each(|v, &g| *v = b2 * *v + one_b2 * g * g);
            if lr == 0.0 {
                continue;
            }
            let (m, v) = (self.m[id.0].as_ref().unwrap(), self.v[id.0].as_ref().unwrap());
            let p = store.value_mut(id);
            ndarray::Zip::from(p).and(m).and(v).for_each(|p, &m, &v| {
                *p = *p - step * m / (v.sqrt() / sq + eps);
            });
        }
    }
}

/// Cosine annealing with warm restarts every `period` steps (`t_mult` = 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineWarmRestarts {
    pub base_lr: f64,
    pub eta_min: f64,
    pub period: u64,
}

impl CosineWarmRestarts {
    pub fn lr(&self, step: u64) -> f64 {
        let p = self.period.max(1);
        let phase = (step % p) as f64 / p as f64;
        self.eta_min + (self.base_lr - self.eta_min) * 0.5 * (1.0 + (std::f64::consts::PI * phase).cos())
    }
}
