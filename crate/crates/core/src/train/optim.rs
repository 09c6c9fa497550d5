use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Gradients, ParamStore, Tensor};

/// Update rule applied after each accumulated batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates, created lazily per parameter.
#[derive(Clone, Debug, Default)]
pub struct OptimizerState {
    step: u64,
    moments: Vec<Option<(Tensor, Tensor)>>,
}

impl OptimizerState {
    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One update of every trainable parameter that has a gradient.
///
/// Fails before touching any parameter if a gradient is not finite.
pub fn optimizer_step(
    params: &mut ParamStore,
    grads: &Gradients,
    state: &mut OptimizerState,
    optimizer: Optimizer,
    lr: f64,
) -> Result<()> {
    for (id, g) in grads.iter() {
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(params.name(id).to_string()));
        }
    }
    state.step += 1;
    if state.moments.len() < params.len() {
        state.moments.resize(params.len(), None);
    }
    for (id, g) in grads.iter() {
        if !params.is_trainable(id) {
            continue;
        }
        match optimizer {
            Optimizer::Sgd => {
                let p = params.value_mut(id);
                for (x, &gi) in p.data_mut().iter_mut().zip(g.data()) {
                    *x -= lr * gi;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let (m, v) = state.moments[id.index()]
                    .get_or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
                let c1 = 1.0 - beta1.powi(state.step as i32);
                let c2 = 1.0 - beta2.powi(state.step as i32);
                let p = params.value_mut(id);
                for (((x, &gi), mi), vi) in p
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(m.data_mut())
                    .zip(v.data_mut())
                {
                    *mi = beta1 * *mi + (1.0 - beta1) * gi;
                    *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                    *x -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}
