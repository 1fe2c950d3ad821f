use ndarray::Zip;

use super::model::{Params, ProbeModel};
use super::train::TrainConfig;
use crate::error::{Error, Result};

/// First/second moment estimates for every parameter plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Params,
    pub v: Params,
    pub step: u64,
}

impl AdamState {
    pub fn new(model: &ProbeModel) -> Self {
        Self {
            m: Params::zeros_like(&model.params),
            v: Params::zeros_like(&model.params),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(model: &mut ProbeModel, state: &mut AdamState, grads: &Params, config: &TrainConfig) -> Result<()> {
    if !grads.same_shape(&model.params) || !state.m.same_shape(&model.params) || !state.v.same_shape(&model.params) {
        return Err(Error::Shape("gradient or optimizer state does not match parameters".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps, lr) = (config.beta1, config.beta2, config.epsilon, config.learning_rate);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    };
    for l in 0..model.params.weights.len() {
        Zip::from(&mut model.params.weights[l])
            .and(&mut state.m.weights[l])
            .and(&mut state.v.weights[l])
            .and(&grads.weights[l])
            .for_each(|p, m, v, &g| update(p, m, v, g));
        Zip::from(&mut model.params.biases[l])
            .and(&mut state.m.biases[l])
            .and(&mut state.v.biases[l])
            .and(&grads.biases[l])
            .for_each(|p, m, v, &g| update(p, m, v, g));
    }
    Ok(())
}
