use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with per-parameter moments keyed by name.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<E: Element = f32> {
    pub config: AdamConfig,
    pub t: u64,
    pub m: IndexMap<String, Vec<E>>,
    pub v: IndexMap<String, Vec<E>>,
}

impl<E: Element> Adam<E> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            t: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    /// One update using the gradients accumulated on `params`. Parameters
    /// without a gradient see a zero gradient.
    pub fn step(&mut self, params: &mut ParamStore<E>, lr: f64) -> Result<()> {
        let grads: Vec<Option<Vec<E>>> = params.tensors().map(|t| t.grad()).collect();
        self.step_with(params, &grads, lr)
    }

    /// One update with explicit gradients, aligned with `params` order.
    pub fn step_with(&mut self, params: &mut ParamStore<E>, grads: &[Option<Vec<E>>], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for ((name, theta), grad) in params.iter().zip(grads) {
            if let Some(g) = grad {
                if g.len() != theta.numel() {
                    return Err(Error::Contract(format!(
                        "gradient for {name} has {} values, parameter has {}",
                        g.len(),
                        theta.numel()
                    )));
                }
            }
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let names: Vec<String> = params.names().map(String::from).collect();
        for (name, grad) in names.iter().zip(grads) {
            let theta = params.get(name)?;
            let n = theta.numel();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![E::zero(); n]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![E::zero(); n]);
            if m.len() != n || v.len() != n {
                return Err(Error::Contract(format!(
                    "optimizer state for {name} does not match its shape"
                )));
            }
            let mut updated = Vec::with_capacity(n);
            for i in 0..n {
                let g = grad.as_ref().map_or(0.0, |g| g[i].to_f64_lossy());
                let mi = beta1 * m[i].to_f64_lossy() + (1.0 - beta1) * g;
                let vi = beta2 * v[i].to_f64_lossy() + (1.0 - beta2) * g * g;
                m[i] = E::of(mi);
                v[i] = E::of(vi);
                let step = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
                updated.push(E::of(theta.data()[i].to_f64_lossy() - step));
            }
            let fresh = Tensor::from_vec(theta.shape(), updated)?.into_param();
            params.replace(name, fresh)?;
        }
        Ok(())
    }
}
