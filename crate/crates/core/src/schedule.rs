//! Epoch-indexed schedules for the learning rate and loss weights.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// A pure function of the epoch.
///
/// Ramps rise from 0 (or `exp(-5)` for the Gaussian ramp) to `scale` over
/// `ramp_length` epochs and stay there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant {
        value: f64,
    },
    Piecewise {
        base: f64,
        milestones: Vec<usize>,
        #[serde(default = "tenth")]
        decay: f64,
    },
    Cosine {
        base: f64,
        total: usize,
    },
    LinearRamp {
        ramp_length: usize,
        #[serde(default = "unit")]
        scale: f64,
    },
    GaussianRamp {
        ramp_length: usize,
        #[serde(default = "unit")]
        scale: f64,
    },
}

fn tenth() -> f64 {
    0.1
}

fn unit() -> f64 {
    1.0
}

impl Schedule {
    pub fn constant(value: f64) -> Self {
        Schedule::Constant { value }
    }

    pub fn piecewise(base: f64, milestones: &[usize]) -> Self {
        Schedule::Piecewise {
            base,
            milestones: milestones.to_vec(),
            decay: 0.1,
        }
    }

    pub fn linear_ramp(ramp_length: usize) -> Self {
        Schedule::LinearRamp {
            ramp_length,
            scale: 1.0,
        }
    }

    pub fn gaussian_ramp(ramp_length: usize, scale: f64) -> Self {
        Schedule::GaussianRamp { ramp_length, scale }
    }

    pub fn value(&self, epoch: usize) -> f64 {
        let progress = |len: usize| {
            if len == 0 {
                1.0
            } else {
                (epoch as f64 / len as f64).clamp(0.0, 1.0)
            }
        };
        match self {
            Schedule::Constant { value } => *value,
            Schedule::Piecewise {
                base,
                milestones,
                decay,
            } => {
                let passed = milestones.iter().filter(|&&m| epoch >= m).count();
                let mut v = *base;
                for _ in 0..passed {
                    v *= decay;
                }
                v
            }
            Schedule::Cosine { base, total } => {
                let t = if *total == 0 {
                    1.0
                } else {
                    epoch.min(*total) as f64 / *total as f64
                };
                base * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * t))
            }
            Schedule::LinearRamp { ramp_length, scale } => scale * progress(*ramp_length),
            Schedule::GaussianRamp { ramp_length, scale } => {
                let t = progress(*ramp_length);
                scale * libm::exp(-5.0 * (1.0 - t) * (1.0 - t))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Schedule::Constant { value } => value.is_finite(),
            Schedule::Piecewise { base, decay, .. } => base.is_finite() && decay.is_finite(),
            Schedule::Cosine { base, .. } => base.is_finite(),
            Schedule::LinearRamp { scale, .. } | Schedule::GaussianRamp { scale, .. } => scale.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid!("schedule has non-finite constants: {self:?}"))
        }
    }
}

/// Free-function form of [`Schedule::value`].
pub fn schedule_value(schedule: &Schedule, epoch: usize) -> f64 {
    schedule.value(epoch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_decay_at_milestones() {
        let s = Schedule::piecewise(0.1, &[100, 150]);
        assert_eq!(s.value(0), 0.1);
        assert_eq!(s.value(99), 0.1);
        assert!((s.value(100) - 0.01).abs() < 1e-15);
        assert!((s.value(149) - 0.01).abs() < 1e-15);
        assert!((s.value(150) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn ramps() {
        let g = Schedule::gaussian_ramp(10, 1.0);
        assert!((g.value(0) - 0.006737946999085467).abs() < 1e-15);
        assert_eq!(g.value(10), 1.0);
        assert_eq!(g.value(50), 1.0);
        assert!(g.value(3) < g.value(4));
        assert_eq!(Schedule::gaussian_ramp(10, 30.0).value(12), 30.0);
        let l = Schedule::linear_ramp(4);
        assert_eq!(l.value(0), 0.0);
        assert_eq!(l.value(2), 0.5);
        assert_eq!(l.value(9), 1.0);
        assert_eq!(Schedule::linear_ramp(0).value(0), 1.0);
    }

    #[test]
    fn cosine_endpoints() {
        let c = Schedule::Cosine { base: 0.2, total: 8 };
        assert_eq!(c.value(0), 0.2);
        assert!((c.value(4) - 0.1).abs() < 1e-15);
        assert!(c.value(8).abs() < 1e-15);
    }
}
