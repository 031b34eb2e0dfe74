use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{check_finite, NnError};
use crate::math::{powi, sqrt};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn sgd(lr: f64) -> Self {
        OptimizerKind::Sgd { lr }
    }
}

/// Gradient-descent optimizer. `step` minimizes; pass a negated gradient to
/// ascend.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n_params: usize) -> Self {
        let (m, v) = match kind {
            OptimizerKind::Sgd { .. } => (Vec::new(), Vec::new()),
            OptimizerKind::Adam { .. } => (vec![0.0; n_params], vec![0.0; n_params]),
        };
        Self { kind, m, v, t: 0 }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// Applies one update. A non-finite gradient is rejected and leaves the
    /// parameters and optimizer state untouched.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<(), NnError> {
        if params.len() != grad.len() {
            return Err(NnError::Shape { expected: params.len(), actual: grad.len() });
        }
        check_finite(grad, "gradient")?;
        match self.kind {
            OptimizerKind::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam { lr, beta1, beta2, eps } => {
                if self.m.len() != params.len() {
                    return Err(NnError::Shape { expected: self.m.len(), actual: params.len() });
                }
                self.t += 1;
                let c1 = 1.0 - powi(beta1, self.t);
                let c2 = 1.0 - powi(beta2, self.t);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    params[i] -= lr * mh / (sqrt(vh) + eps);
                }
                return Ok(());
            }
        }
        self.t += 1;
        Ok(())
    }
}
