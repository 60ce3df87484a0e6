use crate::error::{Error, Result};
use crate::recognizer::Params;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Params,
    pub v: Params,
    pub step: u64,
}

impl AdamState {
    pub fn new(like: &Params) -> Self {
        let mut m = like.clone();
        m.fill(0.0);
        AdamState {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    params: &mut Params,
    grads: &Params,
    state: &mut AdamState,
    hyper: &AdamConfig,
) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) {
        return Err(Error::Shape("Adam: parameter, gradient and state shapes differ".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    let moments = state.m.iter_mut().zip(state.v.iter_mut());
    for ((p, g), (m, v)) in params.iter_mut().zip(grads.iter()).zip(moments) {
        *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
        *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
    }
    Ok(())
}
