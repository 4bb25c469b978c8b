use super::store::ParamStore;
use super::tape::Grads;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct OptimHyper {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for OptimHyper {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 30,
        }
    }
}

impl OptimHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Parameter("learning_rate must be > 0".into()));
        }
        for (n, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Parameter(format!("{n} must lie in [0, 1)")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// One AdamW update for every parameter that received a gradient.
///
/// Moments are bias-corrected per parameter; weight decay is decoupled and
/// applied to the pre-update value: `p ← p − lr·(m̂/(√v̂+ε) + wd·p)`.
pub fn adamw_step(store: &mut ParamStore, grads: &Grads, hyper: &OptimHyper) -> Result<()> {
    hyper.validate()?;
    for (name, g) in grads {
        let e = store
            .entry_mut(name)
            .ok_or_else(|| Error::Configuration(format!("gradient for unknown parameter `{name}`")))?;
        if !e.trainable {
            continue;
        }
        if e.value.shape != g.shape {
            return Err(Error::dim("adamw_step", &e.value.shape, &g.shape));
        }
        e.step += 1;
        let t = e.step as i32;
        let c1 = 1.0 - hyper.beta1.powi(t);
        let c2 = 1.0 - hyper.beta2.powi(t);
        for i in 0..g.data.len() {
            let gi = g.data[i];
            e.m[i] = hyper.beta1 * e.m[i] + (1.0 - hyper.beta1) * gi;
            e.v[i] = hyper.beta2 * e.v[i] + (1.0 - hyper.beta2) * gi * gi;
            let mhat = e.m[i] / c1;
            let vhat = e.v[i] / c2;
            let p = e.value.data[i];
            e.value.data[i] =
                p - hyper.learning_rate * (mhat / (vhat.sqrt() + hyper.epsilon) + hyper.weight_decay * p);
        }
    }
    Ok(())
}
