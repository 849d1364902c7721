//! Adam with bias correction and decoupled weight decay.

use super::{NumError, Tensor};

#[derive(Debug, Clone)]
pub struct AdamState {
    pub first_moment: Tensor,
    pub second_moment: Tensor,
    pub step_count: u64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(param_shape: &[usize], learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            first_moment: Tensor::zeros(param_shape),
            second_moment: Tensor::zeros(param_shape),
            step_count: 0,
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam step. Weight decay is decoupled (applied directly to the
/// parameter, not through the moments). Deterministic given inputs.
pub fn adam_step(
    param: &Tensor,
    grad: &Tensor,
    state: &AdamState,
) -> Result<(Tensor, AdamState), NumError> {
    if param.shape() != grad.shape() || param.shape() != state.first_moment.shape() {
        return Err(NumError::IncompatibleShapes {
            left: param.shape().to_vec(),
            right: grad.shape().to_vec(),
        });
    }
    if !grad.all_finite() {
        return Err(NumError::NonFinite(format!(
            "gradient for parameter of shape {:?}",
            param.shape()
        )));
    }

    let t = state.step_count + 1;
    let bc1 = 1.0 - state.beta1.powi(t as i32);
    let bc2 = 1.0 - state.beta2.powi(t as i32);

    let mut m = state.first_moment.clone();
    let mut v = state.second_moment.clone();
    let mut p = param.clone();
    {
        let (m, v, p) = (m.values_mut(), v.values_mut(), p.values_mut());
        let g = grad.values();
        for i in 0..p.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= state.learning_rate * (m_hat / (v_hat.sqrt() + state.epsilon))
                + state.learning_rate * state.weight_decay * p[i];
        }
    }
    if !p.all_finite() {
        return Err(NumError::NonFinite("adam_step output".into()));
    }
    let next = AdamState {
        first_moment: m,
        second_moment: v,
        step_count: t,
        ..state.clone()
    };
    Ok((p, next))
}
