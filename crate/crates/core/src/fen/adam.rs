use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fen::FenModel;
use crate::scalar::Real;

/// Adam hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new<T: Real>(model: &FenModel<T>) -> Self {
        let zeros: Vec<Vec<f64>> = model
            .params()
            .iter()
            .map(|p| vec![0.0; p.value.len()])
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    fn matches<T: Real>(&self, model: &FenModel<T>) -> bool {
        let params = model.params();
        self.m.len() == params.len()
            && self.v.len() == params.len()
            && params
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|(p, (m, v))| m.len() == p.value.len() && v.len() == p.value.len())
    }
}

/// One bias-corrected Adam update from the gradients held in `model`.
pub fn adam_step<T: Real>(
    model: &mut FenModel<T>,
    opt: &Adam,
    state: &mut AdamState,
) -> Result<()> {
    if !state.matches(model) {
        return Err(Error::ShapeMismatch {
            context: "optimizer state",
            expected: format!("{} tensors", model.params().len()),
            actual: format!("{} tensors", state.m.len()),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - opt.beta1.powi(t);
    let c2 = 1.0 - opt.beta2.powi(t);
    for (p, (m, v)) in model
        .params_mut()
        .iter_mut()
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for ((w, &g), (mi, vi)) in p
            .value
            .iter_mut()
            .zip(&p.grad)
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            let g = g.as_f64();
            *mi = opt.beta1 * *mi + (1.0 - opt.beta1) * g;
            *vi = opt.beta2 * *vi + (1.0 - opt.beta2) * g * g;
            let update = opt.lr * (*mi / c1) / ((*vi / c2).sqrt() + opt.eps);
            *w -= T::lit(update);
        }
    }
    Ok(())
}
