//! First-order optimizers over flat parameter vectors.
//!
//! A step is computed in two stages: `displacement` maps a direction to the
//! parameter-space move, `opt_step` adds it to the parameters. Exposing the
//! displacement lets callers that need the exact move (the merge step of
//! parallel training scales it by a mixing weight before applying) reuse the
//! same arithmetic the plain step performs, so both paths agree bitwise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Gradient, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    SgdMomentum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Momentum coefficient; must be 0 for plain SGD.
    pub momentum: f64,
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            momentum: 0.0,
        }
    }

    pub fn sgd_momentum(lr: f64, momentum: f64) -> Self {
        Self {
            kind: OptimizerKind::SgdMomentum,
            lr,
            momentum,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive and finite, got {}",
                self.lr
            )));
        }
        match self.kind {
            OptimizerKind::Sgd => {
                if self.momentum != 0.0 {
                    return Err(Error::Config(
                        "momentum must be 0 for plain sgd; use sgd_momentum".into(),
                    ));
                }
            }
            OptimizerKind::SgdMomentum => {
                if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
                    return Err(Error::Config(format!(
                        "momentum must be in [0, 1), got {}",
                        self.momentum
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-model-instance optimizer state. Plain SGD keeps none; momentum keeps
/// a velocity vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    velocity: Option<Gradient>,
}

impl OptimizerState {
    pub fn velocity(&self) -> Option<&Gradient> {
        self.velocity.as_ref()
    }
}

pub fn fresh_state(config: &OptimizerConfig, param_count: usize) -> OptimizerState {
    match config.kind {
        OptimizerKind::Sgd => OptimizerState { velocity: None },
        OptimizerKind::SgdMomentum => OptimizerState {
            velocity: Some(Gradient::zeros(param_count)),
        },
    }
}

/// Parameter-space move for descending along `direction`, updating momentum
/// state in place. SGD: `-lr * direction`. Momentum: `v' = momentum * v +
/// direction`, move `-lr * v'`.
pub fn displacement(
    config: &OptimizerConfig,
    state: &mut OptimizerState,
    direction: &Gradient,
) -> Result<Gradient> {
    config.validate()?;
    if !direction.is_finite() {
        return Err(Error::Numerical(
            "descent direction contains non-finite values".into(),
        ));
    }
    match config.kind {
        OptimizerKind::Sgd => Ok(direction.scaled(-config.lr)),
        OptimizerKind::SgdMomentum => {
            let v = state
                .velocity
                .as_ref()
                .ok_or_else(|| Error::Config("momentum step without momentum state".into()))?;
            if v.len() != direction.len() {
                return Err(Error::Config(format!(
                    "velocity length {} does not match direction length {}",
                    v.len(),
                    direction.len()
                )));
            }
            let updated = v.scaled(config.momentum).plus(direction)?;
            let step = updated.scaled(-config.lr);
            state.velocity = Some(updated);
            Ok(step)
        }
    }
}

/// One optimizer step: `params + displacement(direction)`.
pub fn opt_step(
    config: &OptimizerConfig,
    state: &mut OptimizerState,
    params: &ModelParams,
    direction: &Gradient,
) -> Result<ModelParams> {
    if direction.len() != params.len() {
        return Err(Error::Config(format!(
            "direction length {} does not match parameter count {}",
            direction.len(),
            params.len()
        )));
    }
    let step = displacement(config, state, direction)?;
    params.plus(&step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ArchSpec;

    fn params(values: &[f64]) -> ModelParams {
        ModelParams::new(
            ArchSpec::Logistic {
                input_dim: values.len() - 1,
            },
            values.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn sgd_step_closed_form() {
        let cfg = OptimizerConfig::sgd(0.1);
        let mut state = fresh_state(&cfg, 3);
        let p = params(&[1.0, 2.0, 3.0]);
        let g = Gradient::new(vec![1.0, -2.0, 0.5]);
        let next = opt_step(&cfg, &mut state, &p, &g).unwrap();
        assert_eq!(next.values(), &[0.9, 2.2, 2.95]);
    }

    #[test]
    fn sgd_displacement_scales_linearly_with_lr() {
        let g = Gradient::new(vec![0.4, -1.2]);
        let mut s1 = fresh_state(&OptimizerConfig::sgd(0.1), 2);
        let mut s2 = fresh_state(&OptimizerConfig::sgd(0.2), 2);
        let d1 = displacement(&OptimizerConfig::sgd(0.1), &mut s1, &g).unwrap();
        let d2 = displacement(&OptimizerConfig::sgd(0.2), &mut s2, &g).unwrap();
        for (a, b) in d1.values().iter().zip(d2.values()) {
            assert!((2.0 * a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn momentum_accumulates_velocity() {
        let cfg = OptimizerConfig::sgd_momentum(1.0, 0.5);
        let mut state = fresh_state(&cfg, 2);
        let p0 = params(&[0.0, 0.0]);
        let g = Gradient::new(vec![1.0, 0.0]);

        // v1 = 1, step -1; v2 = 1.5, step -1.5
        let p1 = opt_step(&cfg, &mut state, &p0, &g).unwrap();
        assert_eq!(p1.values(), &[-1.0, 0.0]);
        let p2 = opt_step(&cfg, &mut state, &p1, &g).unwrap();
        assert_eq!(p2.values(), &[-2.5, 0.0]);
        assert_eq!(state.velocity().unwrap().values(), &[1.5, 0.0]);
    }

    #[test]
    fn momentum_zero_matches_sgd() {
        let sgd = OptimizerConfig::sgd(0.3);
        let mom = OptimizerConfig::sgd_momentum(0.3, 0.0);
        let p = params(&[0.5, -0.5, 1.0]);
        let g = Gradient::new(vec![0.1, 0.2, -0.3]);
        let mut s1 = fresh_state(&sgd, 3);
        let mut s2 = fresh_state(&mom, 3);
        let a = opt_step(&sgd, &mut s1, &p, &g).unwrap();
        let b = opt_step(&mom, &mut s2, &p, &g).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn step_equals_params_plus_displacement() {
        let cfg = OptimizerConfig::sgd_momentum(0.2, 0.9);
        let p = params(&[1.0, -1.0]);
        let g = Gradient::new(vec![0.7, 0.3]);

        let mut s_step = fresh_state(&cfg, 2);
        let mut s_disp = fresh_state(&cfg, 2);
        // warm both states identically first
        let warm = Gradient::new(vec![-0.2, 0.4]);
        let p_warm = opt_step(&cfg, &mut s_step, &p, &warm).unwrap();
        displacement(&cfg, &mut s_disp, &warm).unwrap();

        let stepped = opt_step(&cfg, &mut s_step, &p_warm, &g).unwrap();
        let d = displacement(&cfg, &mut s_disp, &g).unwrap();
        let applied = p_warm.plus(&d).unwrap();
        assert_eq!(stepped.values(), applied.values());
    }

    #[test]
    fn validation_rejects_bad_configs() {
        assert!(OptimizerConfig::sgd(0.0).validate().is_err());
        assert!(OptimizerConfig::sgd(-0.1).validate().is_err());
        assert!(OptimizerConfig::sgd(f64::NAN).validate().is_err());
        assert!(OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr: 0.1,
            momentum: 0.5,
        }
        .validate()
        .is_err());
        assert!(OptimizerConfig::sgd_momentum(0.1, 1.0).validate().is_err());
        assert!(OptimizerConfig::sgd_momentum(0.1, -0.1).validate().is_err());
        assert!(OptimizerConfig::sgd_momentum(0.1, 0.99).validate().is_ok());
    }

    #[test]
    fn rejects_nonfinite_direction_and_length_mismatch() {
        let cfg = OptimizerConfig::sgd(0.1);
        let mut state = fresh_state(&cfg, 2);
        let p = params(&[0.0, 0.0]);
        assert!(opt_step(&cfg, &mut state, &p, &Gradient::new(vec![f64::NAN, 0.0])).is_err());
        assert!(opt_step(&cfg, &mut state, &p, &Gradient::new(vec![1.0])).is_err());
    }
}
