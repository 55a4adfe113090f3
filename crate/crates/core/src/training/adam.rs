use cdgan_tensor::Tensor;

use crate::error::{Error, Result};
use crate::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers, one per parameter in set order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn check(&self, params: &ParamSet) -> Result<()> {
        let ok = self.m.len() == params.len()
            && self.v.len() == params.len()
            && params
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|(p, (m, v))| m.shape() == p.value.shape() && v.shape() == p.value.shape());
        if ok {
            Ok(())
        } else {
            Err(Error::Contract("optimizer state does not match the parameter set".into()))
        }
    }
}

/// One bias-corrected Adam update from the accumulated gradients. A missing
/// gradient counts as zero. Any non-finite gradient aborts before anything is
/// modified. With a zero learning rate the moments advance but parameter
/// values are left untouched.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    state.check(params)?;
    if let Some(p) = params
        .iter()
        .find(|p| p.grad.as_ref().is_some_and(|g| !g.is_finite()))
    {
        return Err(Error::NonFiniteGradient { param: p.name.clone() });
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - (b1 as f64).powi(t);
    let c2 = 1.0 - (b2 as f64).powi(t);
    // lr * m_hat / (sqrt(v_hat) + eps) with both corrections folded in.
    let step = (cfg.learning_rate as f64 / c1) as f32;
    let c2_sqrt = c2.sqrt() as f32;
    for (p, (m, v)) in params.iter_mut().zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let (m, v) = (m.data_mut(), v.data_mut());
        match &p.grad {
            Some(g) => {
                for ((mi, vi), &gi) in m.iter_mut().zip(v.iter_mut()).zip(g.data()) {
                    *mi = b1 * *mi + (1.0 - b1) * gi;
                    *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                }
            }
            None => {
                m.iter_mut().for_each(|mi| *mi *= b1);
                v.iter_mut().for_each(|vi| *vi *= b2);
            }
        }
        if cfg.learning_rate == 0.0 {
            continue;
        }
        for ((w, &mi), &vi) in p.value.data_mut().iter_mut().zip(m.iter()).zip(v.iter()) {
            *w -= step * mi / (vi.sqrt() / c2_sqrt + cfg.eps);
        }
    }
    Ok(())
}
