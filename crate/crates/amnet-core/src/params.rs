//! Named parameter storage, Xavier initialization and the Adam update.

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::Gradients;
use crate::tensor::{Dims, Scalar, Tensor};

/// Uniform Xavier/Glorot bound: a = sqrt(6/(fan_in + fan_out)) with
/// fan_in = c·kh·kw and fan_out = n·kh·kw for conv weights (n, c, kh, kw).
pub fn xavier_bound(dims: Dims) -> f64 {
    let rf = dims.h * dims.w;
    let fan_in = dims.c * rf;
    let fan_out = dims.n * rf;
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn xavier_with_rng<T: Scalar>(dims: Dims, rng: &mut impl Rng) -> Tensor<T> {
    let a = xavier_bound(dims);
    let data = (0..dims.count())
        .map(|_| T::from_f64(rng.gen_range(-a..=a)))
        .collect();
    Tensor::from_vec(dims, data).unwrap()
}

pub fn xavier_init<T: Scalar>(dims: Dims, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    xavier_with_rng(dims, &mut rng)
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

#[derive(Debug, Clone)]
pub struct ParamEntry<T: Scalar> {
    pub value: Tensor<T>,
    pub grad: Tensor<f64>,
    m: Tensor<f64>,
    v: Tensor<f64>,
}

/// Ordered name → parameter map; insertion order defines both the checkpoint
/// layout and the initialization draw order.
#[derive(Debug, Clone)]
pub struct ParamStore<T: Scalar> {
    entries: IndexMap<String, ParamEntry<T>>,
    step: u64,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: IndexMap::new(), step: 0 }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter '{name}'")));
        }
        let dims = value.dims();
        self.entries.insert(
            name,
            ParamEntry {
                value,
                grad: Tensor::zeros(dims),
                m: Tensor::zeros(dims),
                v: Tensor::zeros(dims),
            },
        );
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry<T>> {
        self.entries.get(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter '{name}'")))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.value)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    pub fn zero_grad(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.data_mut().fill(0.0);
        }
    }

    /// grad += sample gradients. Call once per sample in sample-index order so
    /// minibatch reduction is deterministic.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        for (name, g) in grads.iter() {
            let e = self
                .entries
                .get_mut(name)
                .ok_or_else(|| Error::InvalidArgument(format!("gradient for unknown parameter '{name}'")))?;
            if e.grad.dims() != g.dims() {
                return Err(Error::ShapeMismatch {
                    op: "accumulate",
                    lhs: e.grad.dims().to_string(),
                    rhs: g.dims().to_string(),
                });
            }
            for (dst, &s) in e.grad.data_mut().iter_mut().zip(g.data()) {
                *dst += s;
            }
        }
        Ok(())
    }

    pub fn scale_grads(&mut self, k: f64) {
        for e in self.entries.values_mut() {
            for g in e.grad.data_mut() {
                *g *= k;
            }
        }
    }

    /// Bias-corrected Adam with L2-style weight decay folded into the raw
    /// gradient before the moment updates.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for e in self.entries.values_mut() {
            for i in 0..e.value.data().len() {
                let w = e.value.data()[i].to_f64();
                let g = e.grad.data()[i] + cfg.weight_decay * w;
                let m = cfg.beta1 * e.m.data()[i] + (1.0 - cfg.beta1) * g;
                let v = cfg.beta2 * e.v.data()[i] + (1.0 - cfg.beta2) * g * g;
                e.m.data_mut()[i] = m;
                e.v.data_mut()[i] = v;
                let update = cfg.lr * (m / bc1) / ((v / bc2).sqrt() + cfg.eps);
                e.value.data_mut()[i] = T::from_f64(w - update);
            }
        }
    }

    /// Copies the values at another precision; gradients and optimizer state
    /// start fresh.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (name, e) in &self.entries {
            out.insert(name.clone(), e.value.cast::<U>()).unwrap();
        }
        out
    }

    /// Sum of squared values over every parameter (diagnostic).
    pub fn squared_norm(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|e| e.value.data().iter())
            .map(|v| {
                let x = v.to_f64();
                x * x
            })
            .sum()
    }
}
