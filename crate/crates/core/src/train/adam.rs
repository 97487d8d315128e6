use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::engine::{Real, Tensor};
use crate::models::ParameterSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.epsilon.is_finite();
        if ok {
            Ok(())
        } else {
            Err(TrainError::InvalidConfig(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParameterSet<T>, config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.tensor.shape())).collect();
        AdamState {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// One bias-corrected Adam update. `grads[i]` belongs to the i-th parameter.
    pub fn step(
        &mut self,
        params: &mut ParameterSet<T>,
        grads: &[Option<&[T]>],
        lr: f64,
    ) -> Result<(), TrainError> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(TrainError::MissingGrad(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            match g {
                Some(g) if g.len() == p.tensor.len() => {}
                Some(g) => {
                    return Err(TrainError::MissingGrad(format!(
                        "{}: gradient has {} values, parameter {}",
                        p.name,
                        g.len(),
                        p.tensor.len()
                    )))
                }
                None => return Err(TrainError::MissingGrad(p.name.clone())),
            }
        }

        self.t += 1;
        let c = self.config;
        let t = self.t as i32;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let bc1 = T::lit(1.0 - c.beta1.powi(t));
        let bc2 = T::lit(1.0 - c.beta2.powi(t));
        let eps = T::lit(c.epsilon);
        let lr_t = T::lit(lr);

        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let g = g.expect("checked above");
            let theta = p.tensor.data_mut();
            for i in 0..g.len() {
                let m_i = b1 * m.data()[i] + one_b1 * g[i];
                let v_i = b2 * v.data()[i] + one_b2 * g[i] * g[i];
                m.data_mut()[i] = m_i;
                v.data_mut()[i] = v_i;
                // lr = 0 must leave bits untouched, including the sign of zero
                if lr != 0.0 {
                    let m_hat = m_i / bc1;
                    let v_hat = v_i / bc2;
                    theta[i] -= lr_t * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}
