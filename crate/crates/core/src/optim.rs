//! First-order optimizers: SGD, Adam and RMSProp.
//!
//! All three minimize. Callers that ascend pass the negated gradient.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Rmsprop,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            "rmsprop" => Ok(Self::Rmsprop),
            other => Err(Error::InvalidArgument(format!("unknown optimizer {other:?}"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
            Self::Rmsprop => "rmsprop",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// RMSProp decay of the squared-gradient average.
    pub decay: f64,
    pub epsilon: f64,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self { kind, learning_rate, beta1: 0.9, beta2: 0.999, decay: 0.9, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    config: OptimizerConfig,
    step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, param_len: usize) -> Self {
        let moments = match config.kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam | OptimizerKind::Rmsprop => param_len,
        };
        let first = if config.kind == OptimizerKind::Adam { vec![0.0; moments] } else { Vec::new() };
        Self { config, step: 0, first, second: vec![0.0; moments] }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(shape_err(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        let c = self.config;
        match c.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= c.learning_rate * g;
                }
            }
            OptimizerKind::Adam => {
                self.check_moments(params.len())?;
                let t = (self.step + 1) as i32;
                let bc1 = 1.0 - c.beta1.powi(t);
                let bc2 = 1.0 - c.beta2.powi(t);
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
                }
            }
            OptimizerKind::Rmsprop => {
                self.check_moments(params.len())?;
                for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.second) {
                    *v = c.decay * *v + (1.0 - c.decay) * g * g;
                    *p -= c.learning_rate * g / (v.sqrt() + c.epsilon);
                }
            }
        }
        self.step += 1;
        Ok(())
    }

    fn check_moments(&self, len: usize) -> Result<()> {
        if self.second.len() != len {
            return Err(shape_err(format!(
                "optimizer state sized for {} parameters, got {len}",
                self.second.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_definition() {
        let mut s = OptimizerState::new(OptimizerConfig::new(OptimizerKind::Sgd, 0.1), 1);
        let mut p = [1.0];
        s.step(&mut p, &[2.0]).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);
        s.step(&mut p, &[0.0]).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);
        assert_eq!(s.step_count(), 2);
    }

    #[test]
    fn adam_matches_hand_executed_trace() {
        // Bias-corrected Adam, lr 0.1, betas (0.9, 0.999), eps 1e-8, p0 = 1,
        // executed by hand before the implementation existed.
        let grads = [2.0, -1.0, 0.5, 3.0, -2.5, 0.0, 1.0, 1.0, -0.3, 4.0];
        let expected = [
            0.9000000005,
            0.8733662967024315,
            0.8393233821389426,
            0.7762053210926964,
            0.7618801235192124,
            0.7495336563015127,
            0.7280675198823353,
            0.6990983040364943,
            0.6765255780478687,
            0.629883826849953,
        ];
        let mut s = OptimizerState::new(OptimizerConfig::new(OptimizerKind::Adam, 0.1), 1);
        let mut p = [1.0];
        for (g, want) in grads.iter().zip(expected) {
            s.step(&mut p, &[*g]).unwrap();
            assert!((p[0] - want).abs() < 1e-12, "{} vs {want}", p[0]);
        }
    }

    #[test]
    fn adam_zero_grad_moves_less_than_lr() {
        let lr = 0.01;
        let mut s = OptimizerState::new(OptimizerConfig::new(OptimizerKind::Adam, lr), 2);
        let mut p = [0.5, -0.5];
        s.step(&mut p, &[0.0, 0.0]).unwrap();
        assert!((p[0] - 0.5).abs() < lr && (p[1] + 0.5).abs() < lr);
    }

    #[test]
    fn rmsprop_first_step() {
        // v = 0.1 * 9 = 0.9, step = 0.01 * 3 / sqrt(0.9)
        let mut s = OptimizerState::new(OptimizerConfig::new(OptimizerKind::Rmsprop, 0.01), 1);
        let mut p = [0.0];
        s.step(&mut p, &[3.0]).unwrap();
        assert!((p[0] + 0.03 / 0.9f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch_errors() {
        let mut s = OptimizerState::new(OptimizerConfig::new(OptimizerKind::Adam, 0.1), 3);
        assert!(s.step(&mut [0.0; 2], &[0.0; 2]).is_err());
        assert!(s.step(&mut [0.0; 3], &[0.0; 2]).is_err());
    }
}
