use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdmConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

impl Default for SgdmConfig {
    fn default() -> Self {
        SgdmConfig {
            learning_rate: 1e-3,
            momentum: 0.9,
            weight_decay: 0.0,
        }
    }
}

/// Stochastic gradient descent with classical momentum:
/// `v <- momentum * v - lr * g; p <- p + v`.
#[derive(Debug, Clone)]
pub struct Sgdm {
    pub config: SgdmConfig,
    velocity: Vec<Vec<f64>>,
}

impl Sgdm {
    pub fn new(config: SgdmConfig) -> Self {
        Sgdm {
            config,
            velocity: Vec::new(),
        }
    }

    /// Resumes from saved velocity buffers.
    pub fn with_velocity(config: SgdmConfig, velocity: Vec<Vec<f64>>) -> Self {
        Sgdm { config, velocity }
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!(
                "{} parameter tensors but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::Shape("parameter list changed between steps".into()));
        }
        let SgdmConfig {
            learning_rate: lr,
            momentum,
            weight_decay,
        } = self.config;
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            if p.len() != g.len() || p.len() != v.len() {
                return Err(Error::Shape(
                    "gradient does not mirror its parameter".into(),
                ));
            }
            for ((pi, gi), vi) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                *vi = momentum * *vi - lr * (gi + weight_decay * *pi);
                *pi += *vi;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opt(lr: f64, momentum: f64) -> Sgdm {
        Sgdm::new(SgdmConfig {
            learning_rate: lr,
            momentum,
            weight_decay: 0.0,
        })
    }

    #[test]
    fn plain_sgd_without_momentum() {
        let mut s = opt(0.1, 0.0);
        let mut p = vec![1.0, -2.0];
        s.step(&mut [&mut p], &[&[0.5, -1.0]]).unwrap();
        assert_eq!(p, [1.0 - 0.05, -2.0 + 0.1]);
    }

    #[test]
    fn two_steps_constant_gradient() {
        let (lr, g) = (1e-3, 2.5);
        let mut s = opt(lr, 0.9);
        let mut p = vec![0.75];
        for _ in 0..2 {
            s.step(&mut [&mut p], &[&[g]]).unwrap();
        }
        let want = 0.75 - lr * g * (1.0 + 1.9);
        assert!((p[0] - want).abs() < 1e-15);
    }

    #[test]
    fn momentum_decays_with_zero_gradient() {
        let mut s = opt(0.1, 0.9);
        let mut p = vec![0.0];
        s.step(&mut [&mut p], &[&[1.0]]).unwrap();
        let mut deltas = Vec::new();
        for _ in 0..200 {
            let before = p[0];
            s.step(&mut [&mut p], &[&[0.0]]).unwrap();
            deltas.push(p[0] - before);
        }
        for w in deltas.windows(2) {
            assert!(w[1].abs() < w[0].abs());
        }
        // geometric series: total drift -0.1 * 0.9 / (1 - 0.9)
        assert!((p[0] - (-0.1 - 0.9)).abs() < 1e-8);
    }

    #[test]
    fn mismatched_lists() {
        let mut s = opt(0.1, 0.9);
        let mut p = vec![0.0; 2];
        assert!(s.step(&mut [&mut p], &[]).is_err());
        assert!(s.step(&mut [&mut p], &[&[1.0]]).is_err());
    }
}
