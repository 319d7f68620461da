use crate::error::Result;
use crate::net::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// ADAM moment estimates, one pair per parameter, plus the shared step
/// counter. Defaults follow the training recipe: beta1 0.9, beta2 0.999,
/// epsilon 5e-7.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub t: u64,
    moments: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let moments = store
            .iter()
            .map(|(_, p)| {
                (
                    Tensor::zeros(p.value.shape()),
                    Tensor::zeros(p.value.shape()),
                )
            })
            .collect();
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 5e-7,
            t: 0,
            moments,
        }
    }
}

/// One bias-corrected ADAM update over every parameter that has a gradient.
/// Parameters the backward pass never reached are untouched.
pub fn adam_step<T: Scalar>(
    store: &mut ParamStore<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    for (i, p) in store.iter_mut().enumerate() {
        let Some(grad) = p.grad.as_ref() else {
            continue;
        };
        let (m, v) = &mut state.moments[i];
        for (((theta, &g), mi), vi) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            let g = g.to_f64();
            let m_new = b1 * mi.to_f64() + (1.0 - b1) * g;
            let v_new = b2 * vi.to_f64() + (1.0 - b2) * g * g;
            *mi = T::from_f64(m_new);
            *vi = T::from_f64(v_new);
            let m_hat = m_new / bc1;
            let v_hat = v_new / bc2;
            *theta = T::from_f64(theta.to_f64() - lr * m_hat / (v_hat.sqrt() + eps));
        }
    }
    Ok(())
}
