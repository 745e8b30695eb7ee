use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdgru::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdadeltaConfig {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            rho: 0.95,
            epsilon: 1e-6,
        }
    }
}

impl AdadeltaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::invalid(format!("rho {} outside [0, 1)", self.rho)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        Ok(())
    }
}

/// Running averages of squared gradients and squared updates, one buffer per
/// parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub sq_grad: Vec<Vec<f64>>,
    pub sq_delta: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            sq_grad: zeros.clone(),
            sq_delta: zeros,
        }
    }

    pub fn matches(&self, params: &ParamSet) -> bool {
        let lens = params.tensors().iter().map(|t| t.len());
        self.sq_grad.len() == params.len()
            && self.sq_delta.len() == params.len()
            && lens
                .zip(self.sq_grad.iter().zip(&self.sq_delta))
                .all(|(n, (g, d))| g.len() == n && d.len() == n)
    }
}

/// One Adadelta update from the gradients stored on `params`. A non-finite
/// gradient aborts the step before anything is modified.
pub fn adadelta_step(params: &mut ParamSet, state: &mut OptimizerState, cfg: &AdadeltaConfig) -> Result<()> {
    if !state.matches(params) {
        return Err(Error::invalid("optimizer state does not match the parameters"));
    }
    for (name, t) in params.iter() {
        if let Some(g) = t.grad() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }
    }
    let (rho, eps, lr) = (cfg.rho, cfg.epsilon, cfg.learning_rate);
    for (k, t) in params.tensors_mut().iter_mut().enumerate() {
        let Some(g) = t.grad().map(<[f64]>::to_vec) else {
            continue;
        };
        let eg = &mut state.sq_grad[k];
        let ed = &mut state.sq_delta[k];
        let data = t.data_mut();
        for i in 0..data.len() {
            eg[i] = rho * eg[i] + (1.0 - rho) * g[i] * g[i];
            let delta = -((ed[i] + eps).sqrt() / (eg[i] + eps).sqrt()) * g[i] * lr;
            ed[i] = rho * ed[i] + (1.0 - rho) * delta * delta;
            data[i] += delta;
        }
    }
    Ok(())
}
