//! Adam with warm-up / inverse-square-root learning-rate schedule and
//! global-norm gradient clipping, operating on a named parameter group.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use serde::{Deserialize, Serialize};

use crate::config::TrainingConfig;
use crate::error::Result;
use crate::nn::ParamStore;

/// `lr0 · min((s+1)/W, sqrt(W/(s+1)))`; constant `lr0` when W = 0.
pub fn learning_rate(step: usize, config: &TrainingConfig) -> f64 {
    let w = config.warmup_steps as f64;
    if w == 0.0 {
        return config.lr;
    }
    let s = step as f64 + 1.0;
    config.lr * (s / w).min((w / s).sqrt())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub updates: u64,
    #[serde(skip)]
    pub m: BTreeMap<String, Vec<f64>>,
    #[serde(skip)]
    pub v: BTreeMap<String, Vec<f64>>,
}

/// Gradient vectors for the selected parameters. Parameters outside the
/// graph get no entry.
pub fn collect_grads(
    params: &ParamStore,
    grads: &GradStore,
    select: impl Fn(&str) -> bool,
) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for (name, var) in params.vars() {
        if !select(name) {
            continue;
        }
        if let Some(g) = grads.get(var.as_tensor()) {
            out.insert(name.clone(), g.flatten_all()?.to_vec1::<f64>()?);
        }
    }
    Ok(out)
}

pub fn global_norm(grads: &BTreeMap<String, Vec<f64>>) -> f64 {
    grads
        .values()
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

impl AdamState {
    /// One update of every parameter in `grads`; returns the pre-clip global
    /// gradient norm. Parameters without a gradient are left untouched.
    pub fn step(
        &mut self,
        params: &ParamStore,
        mut grads: BTreeMap<String, Vec<f64>>,
        lr: f64,
        config: &TrainingConfig,
    ) -> Result<f64> {
        let norm = global_norm(&grads);
        if config.grad_clip > 0.0 && norm > config.grad_clip {
            let scale = config.grad_clip / norm;
            for g in grads.values_mut() {
                g.iter_mut().for_each(|x| *x *= scale);
            }
        }
        self.updates += 1;
        let (b1, b2) = (config.adam_beta1, config.adam_beta2);
        let c1 = 1.0 - b1.powi(self.updates as i32);
        let c2 = 1.0 - b2.powi(self.updates as i32);
        for (name, g) in grads {
            let mut w = params.values(&name)?;
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + config.adam_eps);
                w[i] -= lr * (update + config.weight_decay * w[i]);
            }
            params.set_values(&name, &w)?;
        }
        Ok(norm)
    }
}
