use std::collections::BTreeMap;

use super::config::{OptimizerKind, TrainConfig};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::Tensor;

fn check_len(param: &Tensor, grad: &[f64]) -> Result<()> {
    if param.len() != grad.len() {
        return Err(Error::Dimension(format!(
            "gradient has {} entries for a {}-element parameter",
            grad.len(),
            param.len()
        )));
    }
    Ok(())
}

/// `p <- p - lr * g`
pub fn sgd_update(param: &mut Tensor, grad: &[f64], lr: f64) -> Result<()> {
    check_len(param, grad)?;
    for (p, g) in param.data_mut().iter_mut().zip(grad) {
        *p -= lr * g;
    }
    Ok(())
}

/// One bias-corrected Adam step; `t` counts steps from 1.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    param: &mut Tensor,
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    check_len(param, grad)?;
    if m.len() != grad.len() || v.len() != grad.len() {
        return Err(Error::Dimension("Adam moments do not match the parameter".into()));
    }
    if t == 0 {
        return Err(Error::Contract("Adam step count starts at 1".into()));
    }
    let (b1, b2) = betas;
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    for (((p, &g), mi), vi) in param.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        *mi = b1 * *mi + (1.0 - b1) * g;
        *vi = b2 * *vi + (1.0 - b2) * g * g;
        *p -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
    }
    Ok(())
}

/// Step count and, for Adam, first and second moments per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub step: u64,
    pub moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, params: &ModelParams) -> Self {
        let moments = match kind {
            OptimizerKind::Sgd => BTreeMap::new(),
            OptimizerKind::Adam => params
                .iter()
                .map(|(k, t)| (k.to_string(), (vec![0.0; t.len()], vec![0.0; t.len()])))
                .collect(),
        };
        Self { kind, step: 0, moments }
    }

    /// Applies one update to every parameter named in `grads`.
    pub fn apply(&mut self, params: &mut ModelParams, grads: &BTreeMap<String, Vec<f64>>, cfg: &TrainConfig) -> Result<()> {
        if self.kind != cfg.optimizer {
            return Err(Error::Config(format!(
                "optimizer state is {:?} but the configuration asks for {:?}",
                self.kind, cfg.optimizer
            )));
        }
        self.step += 1;
        for (name, grad) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter {name}")))?;
            match self.kind {
                OptimizerKind::Sgd => sgd_update(p, grad, cfg.learning_rate)?,
                OptimizerKind::Adam => {
                    let (m, v) = self
                        .moments
                        .get_mut(name)
                        .ok_or_else(|| Error::Contract(format!("no Adam moments for {name}")))?;
                    adam_update(p, grad, m, v, self.step, cfg.learning_rate, (cfg.beta1, cfg.beta2), cfg.adam_eps)?;
                }
            }
        }
        Ok(())
    }
}
