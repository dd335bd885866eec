use serde::{Deserialize, Serialize};

use super::{GradSet, ParameterSet, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments<T> {
    step: u64,
    m: Tensor<T>,
    v: Tensor<T>,
}

/// Adam with decoupled weight decay.
///
/// Parameters whose gradient is `None` are skipped entirely, including decay.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    config: AdamWConfig,
    step: u64,
    moments: Vec<Option<Moments<T>>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, params: &ParameterSet<T>) -> Self {
        AdamW {
            config,
            step: 0,
            moments: vec![None; params.len()],
        }
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    /// Number of `step` calls so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParameterSet<T>, grads: &GradSet<T>, lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.moments.len() != params.len() {
            return Err(Error::shape(
                "adamw",
                format!(
                    "{} parameters, {} gradients, {} moment slots",
                    params.len(),
                    grads.len(),
                    self.moments.len()
                ),
            ));
        }
        for id in params.ids() {
            if let Some(g) = grads.get(id) {
                if g.shape() != params.get(id).shape() {
                    return Err(Error::shape(
                        "adamw",
                        format!("{}: {:?} vs {:?}", params.name(id), g.shape(), params.get(id).shape()),
                    ));
                }
            }
        }

        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (lr_t, eps) = (T::lit(lr), T::lit(c.eps));
        let decay = T::one() - T::lit(lr * c.weight_decay);

        for id in params.ids() {
            let Some(g) = grads.get(id) else { continue };
            let p = params.get_mut(id);
            let slot = self.moments[id.index()].get_or_insert_with(|| Moments {
                step: 0,
                m: Tensor::zeros(p.shape().to_vec()),
                v: Tensor::zeros(p.shape().to_vec()),
            });
            slot.step += 1;
            let bc1 = T::one() - b1.powi(slot.step as i32);
            let bc2 = T::one() - b2.powi(slot.step as i32);
            let (m, v) = (slot.m.data_mut(), slot.v.data_mut());
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *w = *w * decay - lr_t * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Linear warmup to `base_lr`, then cosine decay to zero at `total_steps`.
pub fn cosine_lr(step: u64, warmup_steps: u64, total_steps: u64, base_lr: f64) -> Result<f64> {
    if warmup_steps >= total_steps {
        return Err(Error::invalid(format!(
            "warmup {} must be below total {}",
            warmup_steps, total_steps
        )));
    }
    if step > total_steps {
        return Err(Error::invalid(format!("step {} beyond total {}", step, total_steps)));
    }
    if step < warmup_steps {
        return Ok(base_lr * step as f64 / warmup_steps as f64);
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}
